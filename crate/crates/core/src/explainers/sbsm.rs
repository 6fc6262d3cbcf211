//! Sliding-mask occlusion: marginal maps from the similarity drop caused by
//! each square mask, joint maps from the similarity gain of masking a pair of
//! corresponding squares.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_pair, elapsed_ms, Interaction, JointExplanation, MarginalExplanation, Side, SparseInteraction};
use super::{FLAG_ZERO_WEIGHTS, SBSM};
use crate::engine::SearchEngine;
use crate::error::{Error, Result};
use crate::image::{Image, Rgb, MID_GRAY};
use crate::perturb::{grid_segmentation, Segmentation};
use crate::record::SparsePair;
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SbsmConfig {
    /// Side of the square mask in pixels.
    pub mask_size: usize,
    /// Spacing of mask centers in pixels.
    pub stride: usize,
    /// Mask pairs sampled by the joint variant.
    pub samples: usize,
    pub seed: u64,
    pub background: Rgb,
}

impl Default for SbsmConfig {
    fn default() -> Self {
        SbsmConfig {
            mask_size: 8,
            stride: 4,
            samples: 256,
            seed: 0,
            background: MID_GRAY,
        }
    }
}

/// Mask centers `[row, col]` on a `stride` lattice offset by half a stride.
pub(crate) fn centers(width: usize, height: usize, stride: usize) -> Vec<[usize; 2]> {
    let axis = |len: usize| {
        (0..len.div_ceil(stride))
            .map(move |k| k * stride + stride / 2)
            .filter(move |&c| c < len)
    };
    axis(height).flat_map(|r| axis(width).map(move |c| [r, c])).collect()
}

/// Pixel indices covered by an `s × s` mask centered at `center`, clipped to the image.
pub(crate) fn mask_pixels(width: usize, height: usize, center: [usize; 2], s: usize) -> Vec<usize> {
    let lo = |c: usize| c.saturating_sub(s / 2);
    let (r0, c0) = (lo(center[0]), lo(center[1]));
    let r1 = (center[0] + s - s / 2).min(height);
    let c1 = (center[1] + s - s / 2).min(width);
    (r0..r1).flat_map(|r| (c0..c1).map(move |c| r * width + c)).collect()
}

fn masked(image: &Image, center: [usize; 2], s: usize, background: Rgb) -> Image {
    let mut out = image.clone();
    for p in mask_pixels(image.width(), image.height(), center, s) {
        out.set_pixel_at(p, background);
    }
    out
}

/// Importance of one mask: the similarity lost by applying it, floored at zero.
pub fn marginal_weight(baseline: f64, masked: f64) -> f64 {
    (baseline - masked).max(0.0)
}

/// Importance of one mask pair: the similarity gained by masking both, floored at zero.
pub fn joint_weight(baseline: f64, masked_pair: f64) -> f64 {
    (masked_pair - baseline).max(0.0)
}

fn check_config(image: &Image, config: &SbsmConfig) -> Result<()> {
    if config.mask_size == 0 || config.stride == 0 {
        return Err(Error::Argument("mask size and stride must be at least 1".into()));
    }
    if config.mask_size > image.width() || config.mask_size > image.height() {
        return Err(Error::Argument(format!(
            "mask size {} exceeds the {}x{} image",
            config.mask_size,
            image.width(),
            image.height()
        )));
    }
    Ok(())
}

fn pixel_segmentation(image: &Image) -> Result<Segmentation> {
    grid_segmentation(image.width(), image.height(), image.height(), image.width())
}

/// Sums `weight` over each mask's pixels and divides by how many masks cover each pixel.
fn accumulate(width: usize, height: usize, s: usize, masks: impl Iterator<Item = ([usize; 2], f64)>) -> Vec<f64> {
    let mut acc = vec![0.0; width * height];
    let mut cover = vec![0usize; width * height];
    for (c, w) in masks {
        for p in mask_pixels(width, height, c, s) {
            acc[p] += w;
            cover[p] += 1;
        }
    }
    acc.iter()
        .zip(&cover)
        .map(|(&a, &n)| if n > 0 { a / n as f64 } else { 0.0 })
        .collect()
}

pub fn sbsm_marginal<E: SearchEngine>(
    engine: &E,
    query: &Image,
    retrieved: &Image,
    side: Side,
    config: &SbsmConfig,
) -> Result<MarginalExplanation> {
    let start = Instant::now();
    check_pair(query, retrieved)?;
    check_config(query, config)?;
    let (explained, other) = match side {
        Side::Query => (query, retrieved),
        Side::Retrieved => (retrieved, query),
    };
    let fixed = engine.embed(other)?;
    let score = |img: &Image| -> Result<f64> {
        let e = engine.embed(img)?;
        match side {
            Side::Query => engine.similarity(&e, &fixed),
            Side::Retrieved => engine.similarity(&fixed, &e),
        }
    };
    let baseline = score(explained)?;
    let cs = centers(explained.width(), explained.height(), config.stride);
    let weights = cs
        .par_iter()
        .map(|&c| {
            Ok(marginal_weight(
                baseline,
                score(&masked(explained, c, config.mask_size, config.background))?,
            ))
        })
        .collect::<Result<Vec<f64>>>()?;
    let (w, h) = (explained.width(), explained.height());
    let mut flags = Vec::new();
    let attention = if weights.iter().all(|&x| x == 0.0) {
        flags.push(FLAG_ZERO_WEIGHTS.to_string());
        vec![1.0; w * h]
    } else {
        accumulate(w, h, config.mask_size, cs.iter().copied().zip(weights.iter().copied()))
    };
    Ok(MarginalExplanation {
        method: SBSM.into(),
        side,
        weights: attention,
        segmentation: pixel_segmentation(explained)?,
        intercept: None,
        evaluations: 1 + cs.len(),
        wall_ms: elapsed_ms(start),
        seed: config.seed,
        flags,
    })
}

/// Samples mask-center pairs without replacement and keeps those whose joint
/// masking raises similarity.
pub fn sbsm_joint<E: SearchEngine>(
    engine: &E,
    query: &Image,
    retrieved: &Image,
    config: &SbsmConfig,
) -> Result<JointExplanation> {
    let start = Instant::now();
    check_pair(query, retrieved)?;
    check_config(query, config)?;
    if config.samples == 0 {
        return Err(Error::Argument(
            "joint SBSM needs at least one sampled mask pair".into(),
        ));
    }
    let baseline = engine.similarity(&engine.embed(query)?, &engine.embed(retrieved)?)?;
    let cs = centers(query.width(), query.height(), config.stride);
    let total = cs.len() * cs.len();
    let mut rng = seeded(config.seed);
    let picks = rand::seq::index::sample(&mut rng, total, config.samples.min(total)).into_vec();
    let s = config.mask_size;
    let weights = picks
        .par_iter()
        .map(|&k| {
            let (qc, rc) = (cs[k / cs.len()], cs[k % cs.len()]);
            let mq = engine.embed(&masked(query, qc, s, config.background))?;
            let mr = engine.embed(&masked(retrieved, rc, s, config.background))?;
            Ok(joint_weight(baseline, engine.similarity(&mq, &mr)?))
        })
        .collect::<Result<Vec<f64>>>()?;
    let pairs: Vec<SparsePair> = picks
        .iter()
        .zip(&weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&k, &weight)| SparsePair {
            query: cs[k / cs.len()],
            retrieved: cs[k % cs.len()],
            weight,
        })
        .collect();
    let mut flags = Vec::new();
    if pairs.is_empty() {
        flags.push(FLAG_ZERO_WEIGHTS.to_string());
    }
    Ok(JointExplanation {
        method: SBSM.into(),
        unary_query: Vec::new(),
        unary_retrieved: Vec::new(),
        interaction: Interaction::Sparse(SparseInteraction { mask_size: s, pairs }),
        intercept: None,
        query_segmentation: pixel_segmentation(query)?,
        retrieved_segmentation: pixel_segmentation(retrieved)?,
        evaluations: 1 + picks.len(),
        wall_ms: elapsed_ms(start),
        seed: config.seed,
        flags,
    })
}
