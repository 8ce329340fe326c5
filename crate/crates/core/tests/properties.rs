use std::sync::OnceLock;

use bottomflag::bottomline::{classify_distance, detect_bottom, detect_bottom_rows, label_pings, PingLabel};
use bottomflag::echogram::standardize;
use bottomflag::harness::{build_datasets, SamplingPlan};
use bottomflag::learn::{self, accuracy_of};
use bottomflag::rng;
use bottomflag::synthgen::{self, ArtifactTag, NanStyle, SurveyConfig};
use bottomflag::{BottomRecord, Dataset, Echogram, LabelingConfig, ModelSpec, TrainConfig};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

fn matrix(rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> impl Strategy<Value = (usize, usize, Vec<f32>)> {
    (rows, cols).prop_flat_map(|(r, c)| {
        let cell = prop_oneof![9 => (-150i32..0).prop_map(|v| v as f32 * 0.5), 1 => Just(f32::NAN)];
        (Just(r), Just(c), prop::collection::vec(cell, r * c))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn replace_nan_is_idempotent((r, c, sv) in matrix(1..12, 1..12), fill in -250.0f32..-100.0) {
        let e = Echogram::new(r, c, 0.0, 0.2, sv, "p").unwrap();
        let once = e.replace_nan(fill);
        prop_assert!(!once.has_nan());
        prop_assert_eq!(once.replace_nan(fill).to_bytes(), once.to_bytes());
        prop_assert_eq!(once.replace_nan(fill + 1.0).to_bytes(), once.to_bytes());
    }

    /// Trimming rows that hold nothing above the threshold cannot change
    /// which pings have a bottom, so the two orders agree.
    #[test]
    fn trim_and_filter_commute((r, c, mut sv) in matrix(6..20, 1..15), n_top in 1usize..5, threshold in -60.0f32..-20.0) {
        for v in &mut sv[..n_top * c] {
            if *v > threshold {
                *v = threshold - 1.0;
            }
        }
        let e = Echogram::new(r, c, 0.0, 0.2, sv, "p").unwrap();
        let trimmed = e.trim_rows(n_top).unwrap();
        let kept = e.filter_no_bottom(threshold).kept;
        prop_assert_eq!(&trimmed.filter_no_bottom(threshold).kept, &kept);
        let a = trimmed.select_pings(&kept);
        let b = e.select_pings(&kept).trim_rows(n_top).unwrap();
        prop_assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn standardized_rows_are_unit((r, c, sv) in matrix(2..10, 3..20)) {
        let e = Echogram::new(r, c, 0.0, 0.2, sv, "p").unwrap().replace_nan(-200.0);
        let pings = e.pings();
        let (z, _) = standardize(&pings, None).unwrap();
        for row in 0..r {
            let vals: Vec<f64> = z.iter().map(|p| p[row]).collect();
            let mean = vals.iter().sum::<f64>() / c as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            prop_assert!(mean.abs() < 1e-6);
            let constant = pings.iter().all(|p| p[row] == pings[0][row]);
            if constant {
                prop_assert!(vals.iter().all(|v| *v == 0.0));
            } else {
                prop_assert!((var.sqrt() - 1.0).abs() < 1e-6, "row {row}: std {}", var.sqrt());
            }
        }
    }

    /// Integer-valued cells keep the arithmetic exact, so the shift leaves
    /// every gradient unchanged.
    #[test]
    fn detection_ignores_constant_offset(
        (r, c, sv) in (2usize..40, 1usize..10).prop_flat_map(|(r, c)| (Just(r), Just(c), prop::collection::vec(-150i32..0, r * c))),
        shift in -60i32..60,
    ) {
        let base: Vec<f32> = sv.iter().map(|&v| v as f32).collect();
        let shifted: Vec<f32> = sv.iter().map(|&v| (v + shift) as f32).collect();
        let a = Echogram::new(r, c, 1.0, 0.2, base, "p").unwrap();
        let b = Echogram::new(r, c, 1.0, 0.2, shifted, "p").unwrap();
        prop_assert_eq!(detect_bottom_rows(&a), detect_bottom_rows(&b));
        prop_assert_eq!(detect_bottom(&a), detect_bottom(&b));
    }

    #[test]
    fn labels_are_symmetric(pairs in prop::collection::vec((0.0..200.0f64, 0.0..200.0f64), 1..50), t in 0.5..6.0f64) {
        let (bottom, clean): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let cfg = LabelingConfig::with_threshold(t);
        let fwd = label_pings(&BottomRecord::new(bottom.clone(), clean.clone()).unwrap(), &cfg, &[]).unwrap();
        let rev = label_pings(&BottomRecord::new(clean.clone(), bottom.clone()).unwrap(), &cfg, &[]).unwrap();
        prop_assert_eq!(&fwd, &rev);
        for i in 0..bottom.len() {
            // mirror the expert bottom around the automatic one
            let mirrored = bottom[i] - (clean[i] - bottom[i]);
            prop_assert_eq!(classify_distance(bottom[i], mirrored, t), fwd[i], "ping {}", i);
        }
    }

    #[test]
    fn strong_count_is_monotone_in_threshold(
        pairs in prop::collection::vec((0.0..100.0f64, -8.0..8.0f64), 1..80),
        mut ts in prop::collection::vec(0.0..10.0f64, 2..6),
        no_bottom in prop::collection::vec(0usize..80, 0..5),
    ) {
        let bottom: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let clean: Vec<f64> = pairs.iter().map(|p| p.0 + p.1).collect();
        let mut nb: Vec<usize> = no_bottom.into_iter().filter(|&i| i < bottom.len()).collect();
        nb.sort_unstable();
        nb.dedup();
        let record = BottomRecord::new(bottom, clean).unwrap();
        ts.sort_by(f64::total_cmp);
        let counts: Vec<usize> = ts
            .iter()
            .map(|&t| {
                let l = label_pings(&record, &LabelingConfig::with_threshold(t), &nb).unwrap();
                l.iter().filter(|x| **x == PingLabel::StrongCorrection).count()
            })
            .collect();
        prop_assert!(counts.windows(2).all(|w| w[1] <= w[0]), "{:?} at {:?}", counts, ts);
    }

    /// No index is shared between a training set and the test set it is
    /// scored on, for any plan that fits the pools.
    #[test]
    fn dataset_plans_never_leak(
        seed in any::<u64>(),
        sizes in prop::collection::vec(1usize..300, 1..4),
        cdt_base in 1usize..300,
        cdt_foreign in 1usize..40,
        extra_chunk in 0usize..40,
        extra_a in 1usize..200,
        extra_b in 1usize..200,
    ) {
        let plan = SamplingPlan {
            st_sizes: sizes.clone(),
            cdt_base,
            cdt_foreign,
            foreign_chunk: 2 * cdt_foreign + extra_chunk,
            train_fraction: 0.9,
            test_cap: None,
            seed,
        };
        let len_a = sizes.iter().copied().max().unwrap().max(cdt_base) + extra_a;
        let len_b = plan.foreign_chunk + extra_b;
        let sets = build_datasets(&plan, len_a, len_b).unwrap();
        sets.check_disjoint().unwrap();
        prop_assert_eq!(sets.cdt_foreign.len(), cdt_foreign);
        prop_assert!(!sets.test_a.is_empty() && !sets.test_b.is_empty());
        for (n, idx) in &sets.st {
            prop_assert_eq!(idx.len(), *n);
            prop_assert!(idx.iter().all(|i| !sets.test_a.contains(i)));
        }
        prop_assert!(sets.test_b.iter().all(|i| !sets.cdt_foreign.contains(i) && !sets.val_foreign.contains(i)));
        prop_assert_eq!(build_datasets(&plan, len_a, len_b).unwrap(), sets);
    }
}

fn survey(seed: u64, style: NanStyle, strong: f64) -> synthgen::Survey {
    synthgen::generate(&SurveyConfig { cols: 600, seed, nan_style: style, strong_correction_rate: strong, ..SurveyConfig::default() }).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn plankton_layers_sit_just_above_bottom(seed in any::<u64>()) {
        let s = survey(seed, NanStyle::StyleA, 0.4);
        let e = &s.echogram;
        let mut seen = 0;
        for i in 0..e.cols() {
            if s.truth.artifact_tag[i] != ArtifactTag::Plankton {
                continue;
            }
            seen += 1;
            let (top, bottom) = s.truth.layer_m[i];
            let gap = s.truth.true_bottom_m[i] - bottom;
            prop_assert!((0.0..=2.0).contains(&gap), "ping {}: gap {}", i, gap);
            let (r0, r1) = (e.depth_to_row(top), e.depth_to_row(bottom));
            prop_assert!(r1 > r0);
            // the layer fills [top, bottom) on the cell grid
            for r in r0..r1 {
                prop_assert!(e.get(r, i) > -60.0, "ping {} row {}: {}", i, r, e.get(r, i));
            }
        }
        prop_assert!(seen > 0);
    }

    #[test]
    fn offsets_are_constant_per_run(seed in any::<u64>()) {
        let s = survey(seed, NanStyle::StyleA, 0.4);
        let t = &s.truth;
        let det = detect_bottom(&s.echogram);
        let step = s.echogram.depth_step_m();
        let mut i = 0;
        let mut runs = 0;
        while i < t.artifact_tag.len() {
            if t.artifact_tag[i] != ArtifactTag::Offset {
                i += 1;
                continue;
            }
            let start = i;
            while i < t.artifact_tag.len() && t.artifact_tag[i] == ArtifactTag::Offset {
                prop_assert_eq!(t.offset_m[i], t.offset_m[start]);
                // shifted by whole cells from the cell holding the true bottom
                let true_cell = s.echogram.depth_to_row(t.true_bottom_m[i]) as f64 * step;
                prop_assert!((t.rendered_bottom_m[i] - true_cell - t.offset_m[i]).abs() < 1e-9);
                prop_assert!((t.offset_m[i] / step - (t.offset_m[i] / step).round()).abs() < 1e-9);
                prop_assert!((det[i] - t.rendered_bottom_m[i]).abs() <= step + 1e-9, "ping {}", i);
                i += 1;
            }
            runs += 1;
        }
        prop_assert!(runs > 0);
        prop_assert!(t.artifact_tag.iter().zip(&t.offset_m).all(|(a, o)| *a == ArtifactTag::Offset || *o == 0.0));
    }

    #[test]
    fn nan_never_above_bottom_band(seed in any::<u64>(), b in any::<bool>()) {
        let style = if b { NanStyle::StyleB } else { NanStyle::StyleA };
        let s = survey(seed, style, 0.13);
        let e = &s.echogram;
        for i in 0..e.cols() {
            let ping = e.ping(i);
            let Some(first) = ping.iter().position(|v| v.is_nan()) else { continue };
            let band = s.truth.rendered_bottom_m[i].max(s.truth.true_bottom_m[i]);
            prop_assert!(e.depth_of_row(first) > band, "ping {}: NaN at {} above {}", i, e.depth_of_row(first), band);
            prop_assert!(ping[first..].iter().all(|v| v.is_nan()));
        }
    }
}

/// Style B pads right below the bottom everywhere; style A only where an
/// artifact disturbed the track.
#[test]
fn nan_style_sets_recording_margin() {
    let margin = |style| {
        let s = survey(21, style, 0.13);
        let t = &s.truth;
        let undisturbed: Vec<f64> = (0..t.nan_offset_m.len())
            .filter(|&i| t.artifact_tag[i] == ArtifactTag::None && t.nan_offset_m[i].is_finite())
            .map(|i| t.nan_offset_m[i])
            .collect();
        let below_short = undisturbed.iter().filter(|v| **v <= synthgen::SHORT_WINDOW_M.1 + 1e-9).count();
        (undisturbed.len(), below_short)
    };
    let (n_a, short_a) = margin(NanStyle::StyleA);
    let (n_b, short_b) = margin(NanStyle::StyleB);
    assert!(n_a > 100 && n_b > 100);
    assert_eq!(short_b, n_b);
    assert!((short_a as f64) < 0.05 * n_a as f64, "{short_a} of {n_a}");
}

fn blobs(seed: u64, n: usize, dim: usize, gap: f64) -> Dataset {
    let mut rng = rng::stream(seed, &[rng::tag("blobs")]);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let label = u8::from(i % 3 == 0);
        let centre = if label == 1 { gap / 2.0 } else { -gap / 2.0 };
        rows.push((0..dim).map(|_| centre + noise.sample(&mut rng)).collect());
        y.push(label);
    }
    Dataset::from_rows(rows, y).unwrap()
}

fn small_specs() -> [ModelSpec; 4] {
    [
        ModelSpec::Rf { n_trees: 15, min_samples_leaf: 2 },
        ModelSpec::Svm { alpha: 0.01 },
        ModelSpec::Ffnn { h1: 8, h2: 6, h3: 4, dropout3: 0.2 },
        ModelSpec::Cnn { k1: 3, k2: 3, k3: 3, h1: 8, h2: 6, h3: 4, dropout3: 0.2 },
    ]
}

#[test]
fn every_model_beats_the_class_prior() {
    let train = blobs(1, 600, 16, 1.2);
    let test = blobs(2, 600, 16, 1.2);
    let prior = test.labels().iter().filter(|&&v| v == 0).count() as f64 / test.len() as f64;
    assert_eq!(accuracy_of(&vec![0.0; test.len()], test.labels()), prior);
    for spec in small_specs() {
        let model = learn::train(&spec, &train, None, &TrainConfig { epochs: 15, seed: 3, ..TrainConfig::default() }).unwrap();
        let acc = model.accuracy(&test).unwrap();
        assert!(acc > prior + 0.1, "{spec:?}: {acc} vs prior {prior}");
    }
}

fn rf_train_accuracy(n_trees: usize) -> f64 {
    static DATA: OnceLock<Dataset> = OnceLock::new();
    let data = DATA.get_or_init(|| blobs(5, 300, 6, 0.8));
    let spec = ModelSpec::Rf { n_trees, min_samples_leaf: 1 };
    let accs: Vec<f64> = (0..5)
        .map(|seed| {
            let m = learn::train(&spec, data, None, &TrainConfig { seed, ..TrainConfig::default() }).unwrap();
            m.accuracy(data).unwrap()
        })
        .collect();
    accs.iter().sum::<f64>() / accs.len() as f64
}

#[test]
fn forest_training_accuracy_grows_with_trees() {
    let accs: Vec<f64> = [1, 3, 10, 40].into_iter().map(rf_train_accuracy).collect();
    assert!(accs.windows(2).all(|w| w[1] >= w[0]), "{accs:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Each ping's score depends only on that ping, not on its batch
    /// neighbours or their order.
    #[test]
    fn predictions_ignore_example_order(seed in any::<u64>(), which in 0usize..4) {
        static MODELS: OnceLock<Vec<bottomflag::TrainedModel>> = OnceLock::new();
        let models = MODELS.get_or_init(|| {
            let train = blobs(7, 300, 16, 1.0);
            small_specs().iter().map(|s| learn::train(s, &train, None, &TrainConfig { epochs: 3, ..TrainConfig::default() }).unwrap()).collect()
        });
        let model = &models[which];
        let data = blobs(seed, 40, 16, 1.0);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng::stream(seed, &[]));
        let permuted = data.subset(&order);
        let mut r = rng::stream(0, &[]);
        let p = model.predict_proba(data.features(), false, &mut r).unwrap();
        let q = model.predict_proba(permuted.features(), false, &mut r).unwrap();
        for (k, &i) in order.iter().enumerate() {
            prop_assert_eq!(q[k].to_bits(), p[i].to_bits());
        }
    }
}
