//! Serialized explanation records and atomic file output.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::Argument(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::Io(e)
    })
}

pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum InteractionRecord {
    /// Row-major `rows × cols` matrix (query regions × retrieved regions).
    Dense { rows: usize, cols: usize, values: Vec<f64> },
    /// Weighted mask-center pairs with square masks of side `mask_size`.
    Sparse { mask_size: usize, pairs: Vec<SparsePair> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparsePair {
    pub query: [usize; 2],
    pub retrieved: [usize; 2],
    pub weight: f64,
}

/// One explanation as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplanationRecord {
    pub method: String,
    pub mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub side: Option<String>,
    pub seed: u64,
    pub evaluations: usize,
    pub wall_ms: f64,
    /// Region grid the weights refer to, as `[rows, cols]`.
    pub grid: [usize; 2],
    /// Marginal weights, or the query unary weights in joint mode.
    pub weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieved_weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieved_grid: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intercept: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interaction: Option<InteractionRecord>,
    pub degeneracy_flags: Vec<String>,
}

impl ExplanationRecord {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.json");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn record_round_trip() {
        let r = ExplanationRecord {
            method: "sbsm".into(),
            mode: "joint".into(),
            side: None,
            seed: 3,
            evaluations: 10,
            wall_ms: 1.5,
            grid: [2, 2],
            weights: vec![0.0, 1.0, 2.0, 3.0],
            retrieved_weights: Some(vec![1.0; 4]),
            retrieved_grid: Some([2, 2]),
            intercept: None,
            interaction: Some(InteractionRecord::Sparse {
                mask_size: 8,
                pairs: vec![SparsePair {
                    query: [1, 2],
                    retrieved: [3, 4],
                    weight: 0.25,
                }],
            }),
            degeneracy_flags: vec!["zero_weights".into()],
        };
        let back = ExplanationRecord::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        assert!(ExplanationRecord::from_json(r#"{"method":"x"}"#).is_err());
    }
}
