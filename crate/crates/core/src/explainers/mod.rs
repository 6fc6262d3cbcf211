//! Marginal and joint explanations of a search engine's similarity score:
//! SAM, LIME, Kernel SHAP and SBSM.

mod lime;
pub mod planted;
mod sam;
mod sbsm;
mod shap;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

pub use lime::{joint_lime, marginal_lime};
pub use sam::{sam_joint, sam_marginal};
pub use sbsm::{sbsm_joint, sbsm_marginal, SbsmConfig};
pub use shap::{joint_induced_game, joint_kernel_shap, marginal_induced_game, marginal_kernel_shap};

use crate::error::{Error, Result};
use crate::game::{Coalition, CoalitionGame};
use crate::image::{Image, Rgb, MID_GRAY};
use crate::perturb::{grid_segmentation, AttentionMap, Segmentation};
use crate::record::{ExplanationRecord, InteractionRecord, SparsePair};
use crate::transport::DenseInteraction;

pub const SAM: &str = "sam";
pub const LIME: &str = "lime";
pub const KERNEL_SHAP: &str = "kernel_shap";
pub const SBSM: &str = "sbsm";

/// Degeneracy flag names.
pub const FLAG_ZERO_COLUMN: &str = "zero_feature_column";
pub const FLAG_ZERO_WEIGHTS: &str = "zero_weights";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Query,
    Retrieved,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Query => "query",
            Side::Retrieved => "retrieved",
        }
    }
}

/// Budget and sampling settings shared by the perturbation explainers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainConfig {
    /// Perturbed-pair evaluations (the coalition budget for Kernel SHAP).
    pub samples: usize,
    pub seed: u64,
    pub l1_penalty: f64,
    /// Width of the LIME locality kernel over the censored fraction.
    pub locality_sigma: f64,
    pub background: Rgb,
    /// Joint Kernel SHAP only: tabulate the induced game and report unary
    /// credits from the cross-linear dividend projection.
    pub exact: bool,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            samples: 8192,
            seed: 0,
            l1_penalty: 0.0,
            locality_sigma: 0.25,
            background: MID_GRAY,
            exact: false,
        }
    }
}

impl ExplainConfig {
    pub fn with_samples(samples: usize, seed: u64) -> Self {
        ExplainConfig {
            samples,
            seed,
            ..Default::default()
        }
    }
}

/// Default marginal budget: `2·2^m` up to ten superpixels, else 4096.
pub fn default_marginal_samples(m: usize) -> usize {
    if m <= 10 {
        2 << m
    } else {
        4096
    }
}

pub const DEFAULT_JOINT_SAMPLES: usize = 8192;

/// Attribution over one image's regions.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalExplanation {
    pub method: String,
    pub side: Side,
    pub weights: Vec<f64>,
    pub segmentation: Segmentation,
    pub intercept: Option<f64>,
    pub evaluations: usize,
    pub wall_ms: f64,
    pub seed: u64,
    pub flags: Vec<String>,
}

impl MarginalExplanation {
    /// Copy with the wall time zeroed, for reproducibility comparisons.
    pub fn without_timing(mut self) -> Self {
        self.wall_ms = 0.0;
        self
    }

    /// Pixel attention, constant within each region.
    pub fn attention(&self) -> Result<AttentionMap> {
        self.segmentation.expand(&self.weights)
    }

    pub fn to_record(&self) -> ExplanationRecord {
        ExplanationRecord {
            method: self.method.clone(),
            mode: "marginal".into(),
            side: Some(self.side.as_str().into()),
            seed: self.seed,
            evaluations: self.evaluations,
            wall_ms: self.wall_ms,
            grid: grid_of(&self.segmentation),
            weights: self.weights.clone(),
            retrieved_weights: None,
            retrieved_grid: None,
            intercept: self.intercept,
            interaction: None,
            degeneracy_flags: self.flags.clone(),
        }
    }
}

fn grid_of(seg: &Segmentation) -> [usize; 2] {
    seg.grid().unwrap_or([1, seg.m()])
}

/// Square censoring masks paired across the two images.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseInteraction {
    pub mask_size: usize,
    pub pairs: Vec<SparsePair>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Interaction {
    Dense(DenseInteraction),
    Sparse(SparseInteraction),
}

/// Result of projecting query attention onto the retrieved image.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub attention: AttentionMap,
    pub degenerate: bool,
}

/// Interaction structure between query and retrieved regions.
#[derive(Debug, Clone, PartialEq)]
pub struct JointExplanation {
    pub method: String,
    /// Empty for methods without unary terms.
    pub unary_query: Vec<f64>,
    pub unary_retrieved: Vec<f64>,
    pub interaction: Interaction,
    pub intercept: Option<f64>,
    pub query_segmentation: Segmentation,
    pub retrieved_segmentation: Segmentation,
    pub evaluations: usize,
    pub wall_ms: f64,
    pub seed: u64,
    pub flags: Vec<String>,
}

impl JointExplanation {
    /// Copy with the wall time zeroed, for reproducibility comparisons.
    pub fn without_timing(mut self) -> Self {
        self.wall_ms = 0.0;
        self
    }

    pub fn dense(&self) -> Option<&DenseInteraction> {
        match &self.interaction {
            Interaction::Dense(d) => Some(d),
            Interaction::Sparse(_) => None,
        }
    }

    /// Maps pixel attention on the query to pixel attention on the retrieved
    /// image. Dense interactions average the attention within each query
    /// region and apply `Aᵀ`; sparse mask pairs spread each pair's score
    /// `w · mean(query attention under its query mask)` over its retrieved
    /// mask and normalize by coverage. An all-zero result falls back to
    /// uniform attention and is marked degenerate.
    pub fn project(&self, query_attention: &AttentionMap) -> Result<Projection> {
        let rs = &self.retrieved_segmentation;
        let values = match &self.interaction {
            Interaction::Dense(a) => {
                let q = self.query_segmentation.region_means(query_attention)?;
                let r = a.project(&q)?;
                rs.expand(&r)?.into_values()
            }
            Interaction::Sparse(s) => {
                let qs = &self.query_segmentation;
                if query_attention.width() != qs.width() || query_attention.height() != qs.height() {
                    return Err(Error::Argument("query attention does not match the query image".into()));
                }
                let (w, h) = (rs.width(), rs.height());
                let mut acc = vec![0.0; w * h];
                let mut cover = vec![0usize; w * h];
                for p in &s.pairs {
                    let qm = sbsm::mask_pixels(qs.width(), qs.height(), p.query, s.mask_size);
                    let mean = qm.iter().map(|&i| query_attention.values()[i]).sum::<f64>() / qm.len() as f64;
                    let score = p.weight * mean;
                    for i in sbsm::mask_pixels(w, h, p.retrieved, s.mask_size) {
                        acc[i] += score;
                        cover[i] += 1;
                    }
                }
                acc.iter()
                    .zip(&cover)
                    .map(|(&a, &c)| if c > 0 { a / c as f64 } else { 0.0 })
                    .collect()
            }
        };
        let degenerate = values.iter().all(|&v| v == 0.0);
        let attention = if degenerate {
            AttentionMap::uniform(rs.width(), rs.height())
        } else {
            AttentionMap::new(rs.width(), rs.height(), values)?
        };
        Ok(Projection { attention, degenerate })
    }

    pub fn to_record(&self) -> ExplanationRecord {
        let interaction = match &self.interaction {
            Interaction::Dense(d) => InteractionRecord::Dense {
                rows: d.rows,
                cols: d.cols,
                values: d.values.clone(),
            },
            Interaction::Sparse(s) => InteractionRecord::Sparse {
                mask_size: s.mask_size,
                pairs: s.pairs.clone(),
            },
        };
        ExplanationRecord {
            method: self.method.clone(),
            mode: "joint".into(),
            side: None,
            seed: self.seed,
            evaluations: self.evaluations,
            wall_ms: self.wall_ms,
            grid: grid_of(&self.query_segmentation),
            weights: self.unary_query.clone(),
            retrieved_weights: Some(self.unary_retrieved.clone()),
            retrieved_grid: Some(grid_of(&self.retrieved_segmentation)),
            intercept: self.intercept,
            interaction: Some(interaction),
            degeneracy_flags: self.flags.clone(),
        }
    }
}

pub(crate) fn check_pair(query: &Image, retrieved: &Image) -> Result<()> {
    if !query.same_dims(retrieved) {
        return Err(Error::Argument(format!(
            "query {}x{} and retrieved {}x{} differ in size",
            query.width(),
            query.height(),
            retrieved.width(),
            retrieved.height()
        )));
    }
    Ok(())
}

pub(crate) fn check_seg(image: &Image, seg: &Segmentation, what: &str) -> Result<()> {
    if !seg.matches(image) {
        return Err(Error::Argument(format!(
            "{what} segmentation {}x{} does not match image {}x{}",
            seg.width(),
            seg.height(),
            image.width(),
            image.height()
        )));
    }
    Ok(())
}

/// Segmentation whose regions are backbone cells.
pub(crate) fn cell_segmentation(image: &Image, h: usize, w: usize) -> Result<Segmentation> {
    grid_segmentation(image.width(), image.height(), h, w)
}

pub(crate) fn elapsed_ms(start: std::time::Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Counts oracle calls and keeps the first error an infallible game oracle
/// had to swallow.
#[derive(Default)]
pub struct OracleProbe {
    calls: AtomicUsize,
    error: Mutex<Option<Error>>,
}

impl OracleProbe {
    pub(crate) fn record(&self, r: Result<f64>) -> f64 {
        self.calls.fetch_add(1, Ordering::Relaxed);
        match r {
            Ok(v) => v,
            Err(e) => {
                let mut slot = self.error.lock().unwrap();
                if slot.is_none() {
                    *slot = Some(e);
                }
                f64::NAN
            }
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    /// Surfaces a swallowed oracle error in place of the downstream one.
    pub(crate) fn check<T>(&self, r: Result<T>) -> Result<T> {
        if let Some(e) = self.error.lock().unwrap().take() {
            return Err(e);
        }
        r
    }
}

/// Wraps a fallible value function as a game, returning the probe that
/// observes its calls.
pub(crate) fn probed_game<F>(n: usize, f: F) -> Result<(CoalitionGame, Arc<OracleProbe>)>
where
    F: Fn(Coalition) -> Result<f64> + Send + Sync + 'static,
{
    let probe = Arc::new(OracleProbe::default());
    let p = probe.clone();
    let game = CoalitionGame::from_oracle(n, move |c| p.record(f(c)));
    let game = probe.check(game)?;
    Ok((game, probe))
}
