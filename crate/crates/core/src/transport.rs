//! Attention projection through joint explanations and the transport-plan view
//! of a normalized joint interpretation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major `rows × cols` interaction between query regions (rows) and
/// retrieved regions (cols). A rank-4 SAM tensor `a[hw][ij]` is stored with
/// `rows = h·w`, `cols = i·j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseInteraction {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl DenseInteraction {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Argument(format!(
                "{rows}x{cols} interaction needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("interaction entry {v}")));
        }
        Ok(DenseInteraction { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseInteraction {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> DenseInteraction {
        let mut t = DenseInteraction::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    /// `Aᵀ q`: attention over query regions mapped to retrieved regions.
    pub fn project(&self, q: &[f64]) -> Result<Vec<f64>> {
        if q.len() != self.rows {
            return Err(Error::Argument(format!(
                "attention over {} regions cannot be projected through a {}x{} interaction",
                q.len(),
                self.rows,
                self.cols
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &qr) in q.iter().enumerate() {
            if qr != 0.0 {
                for (o, &a) in out.iter_mut().zip(self.row(r)) {
                    *o += a * qr;
                }
            }
        }
        Ok(out)
    }
}

/// `r^{ij} = Σ_{hw} a^{ij}_{hw} q^{hw}` for a cell-level tensor.
pub fn project_attention_tensor(tensor: &DenseInteraction, q: &[f64]) -> Result<Vec<f64>> {
    tensor.project(q)
}

/// `r = Aᵀ q` for a superpixel interaction matrix.
pub fn project_attention_superpixel(interaction: &DenseInteraction, q: &[f64]) -> Result<Vec<f64>> {
    interaction.project(q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    Cell,
    Superpixel,
}

/// Nonnegative weights over region pairs summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointDistribution {
    pub region: RegionKind,
    /// `[query regions, retrieved regions]`.
    pub shape: [usize; 2],
    /// Row-major probabilities.
    pub values: Vec<f64>,
}

/// Clamps negative entries to zero and rescales to unit mass.
pub fn normalize_joint(raw: &DenseInteraction, region: RegionKind) -> Result<JointDistribution> {
    let total: f64 = raw.values.iter().map(|v| v.max(0.0)).sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Degenerate(
            "joint interaction has no positive entry to normalize".into(),
        ));
    }
    Ok(JointDistribution {
        region,
        shape: [raw.rows, raw.cols],
        values: raw.values.iter().map(|v| v.max(0.0) / total).collect(),
    })
}

/// Row sums (query marginal) and column sums (retrieved marginal).
pub fn joint_marginals(jd: &JointDistribution) -> (Vec<f64>, Vec<f64>) {
    let [rows, cols] = jd.shape;
    let mut q = vec![0.0; rows];
    let mut r = vec![0.0; cols];
    for i in 0..rows {
        for j in 0..cols {
            let v = jd.values[i * cols + j];
            q[i] += v;
            r[j] += v;
        }
    }
    (q, r)
}

impl JointDistribution {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let jd: JointDistribution = serde_json::from_str(text)?;
        if jd.values.len() != jd.shape[0] * jd.shape[1] {
            return Err(Error::Format(format!(
                "distribution shape {:?} does not match {} values",
                jd.shape,
                jd.values.len()
            )));
        }
        Ok(jd)
    }
}
