//! Model files: magic, u32 header length, JSON header, then a raw
//! little-endian f32 parameter blob.
//!
//! Network and SVM weights go in the blob; forest structure has no natural
//! flat layout and lives in the header.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EpochRecord, Forest, LearnError, LinearSvm, ModelSpec, Network, Params, Result, TrainedModel};
use crate::echogram::StandardizationStats;
use crate::rng;

pub const MODEL_MAGIC: &[u8; 4] = b"BFMD";

#[derive(Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    seed: u64,
    input_len: usize,
    stats: Option<StandardizationStats>,
    history: Vec<EpochRecord>,
    blob_len: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    svm_slope: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    forest: Option<Forest>,
}

impl TrainedModel {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut blob: Vec<f64> = Vec::new();
        let (mut svm_slope, mut forest) = (None, None);
        match &self.params {
            Params::Forest(f) => forest = Some(f.clone()),
            Params::Svm(s) => {
                blob.extend_from_slice(&s.w);
                blob.push(s.b);
                svm_slope = Some(s.slope);
            }
            Params::Net(n) => {
                let mut n = n.clone();
                for t in n.state_tensors() {
                    blob.extend_from_slice(t);
                }
            }
        }
        let header = Header {
            spec: self.spec,
            seed: self.seed,
            input_len: self.input_len,
            stats: self.stats.clone(),
            history: self.history.clone(),
            blob_len: blob.len(),
            svm_slope,
            forest,
        };
        let json = serde_json::to_vec(&header)?;
        let len = u32::try_from(json.len()).map_err(|_| LearnError::MalformedModel("header too large".into()))?;
        let mut out = Vec::with_capacity(8 + json.len() + 4 * blob.len());
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&json);
        for v in blob {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| LearnError::MalformedModel(m.to_string());
        if bytes.len() < 8 || &bytes[..4] != MODEL_MAGIC {
            return Err(bad("bad magic"));
        }
        let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let json = bytes.get(8..8 + len).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(json)?;
        let rest = &bytes[8 + len..];
        if rest.len() != 4 * header.blob_len {
            return Err(bad("parameter blob length does not match header"));
        }
        let blob: Vec<f64> =
            rest.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes")))).collect();
        let params = match header.spec {
            ModelSpec::Rf { .. } => Params::Forest(header.forest.ok_or_else(|| bad("missing forest"))?),
            ModelSpec::Svm { .. } => {
                let (b, w) = blob.split_last().ok_or_else(|| bad("empty svm blob"))?;
                if w.len() != header.input_len {
                    return Err(bad("svm weight length"));
                }
                Params::Svm(LinearSvm { w: w.to_vec(), b: *b, slope: header.svm_slope.ok_or_else(|| bad("missing slope"))? })
            }
            ModelSpec::Ffnn { .. } | ModelSpec::Cnn { .. } => {
                let mut net = Network::build(&header.spec, header.input_len, &mut rng::stream(0, &[]))?;
                let mut at = 0;
                for t in net.state_tensors() {
                    let src = blob.get(at..at + t.len()).ok_or_else(|| bad("network blob too short"))?;
                    t.copy_from_slice(src);
                    at += t.len();
                }
                if at != blob.len() {
                    return Err(bad("network blob too long"));
                }
                Params::Net(net)
            }
        };
        Ok(TrainedModel {
            spec: header.spec,
            seed: header.seed,
            input_len: header.input_len,
            history: header.history,
            stats: header.stats,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path, self.to_bytes()?)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// `epoch,train_loss,train_acc,val_loss,val_acc`; missing validation values
/// are empty fields.
pub fn history_to_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
    let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
    for r in history {
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{},{}",
            r.epoch,
            r.train_loss,
            r.train_acc,
            opt(r.val_loss),
            opt(r.val_acc)
        );
    }
    s
}
