//! Locally weighted linear (marginal) and bilinear (joint) surrogates fitted
//! on superpixel toggles.

use std::time::Instant;

use rand::Rng as _;
use rayon::prelude::*;

use super::LIME;
use super::{
    check_pair, check_seg, elapsed_ms, ExplainConfig, Interaction, JointExplanation, MarginalExplanation, Side,
};
use crate::engine::SearchEngine;
use crate::error::{Error, Result};
use crate::game::{Coalition, MAX_EXACT_PLAYERS};
use crate::image::Image;
use crate::perturb::{apply_toggles, Segmentation, ToggleVector};
use crate::regression::NormalEquations;
use crate::rng::seeded;
use crate::transport::DenseInteraction;

/// Toggle patterns over `bits` superpixels: every pattern when the budget
/// covers all of them, otherwise `samples` independent fair-coin patterns.
pub(crate) fn toggle_patterns(bits: usize, samples: usize, seed: u64) -> Vec<Coalition> {
    if bits <= MAX_EXACT_PLAYERS && samples as u64 >= 1u64 << bits {
        return (0..1u64 << bits).map(Coalition::from_bits).collect();
    }
    let mask = Coalition::grand(bits).bits();
    let mut rng = seeded(seed);
    (0..samples)
        .map(|_| Coalition::from_bits(rng.gen::<u64>() & mask))
        .collect()
}

fn locality(kept: usize, total: usize, sigma: f64) -> f64 {
    let off = 1.0 - kept as f64 / total as f64;
    (-(off * off) / (sigma * sigma)).exp()
}

fn fit(eq: &NormalEquations, config: &ExplainConfig) -> Result<Vec<f64>> {
    let mut penalized = vec![true; eq.unknowns()];
    penalized[0] = false;
    eq.solve_lasso(config.l1_penalty, &penalized, 1e-8)
}

fn check_budget(samples: usize, unknowns: usize, config: &ExplainConfig) -> Result<()> {
    if config.l1_penalty == 0.0 && samples < unknowns {
        return Err(Error::Estimation(format!(
            "{samples} samples cannot identify {unknowns} surrogate coefficients without an L1 penalty"
        )));
    }
    if !(config.locality_sigma > 0.0) {
        return Err(Error::Config(format!(
            "locality sigma must be positive, got {}",
            config.locality_sigma
        )));
    }
    Ok(())
}

/// Fits `y ≈ a_0 + Σ a_q s_q` where `s` toggles superpixels of one side and
/// `y` is the linked similarity of the perturbed pair.
pub fn marginal_lime<E: SearchEngine>(
    engine: &E,
    query: &Image,
    retrieved: &Image,
    side: Side,
    seg: &Segmentation,
    config: &ExplainConfig,
) -> Result<MarginalExplanation> {
    let start = Instant::now();
    check_pair(query, retrieved)?;
    let (explained, other) = match side {
        Side::Query => (query, retrieved),
        Side::Retrieved => (retrieved, query),
    };
    check_seg(explained, seg, side.as_str())?;
    let m = seg.m();
    if m > 64 {
        return Err(Error::Config(format!("{m} superpixels exceed the 64-player limit")));
    }
    check_budget(config.samples, m + 1, config)?;
    let fixed = engine.embed(other)?;
    let patterns = toggle_patterns(m, config.samples, config.seed);
    let ys = patterns
        .par_iter()
        .map(|&c| {
            let img = apply_toggles(explained, seg, &ToggleVector::from_coalition(c, m), config.background)?;
            let e = engine.embed(&img)?;
            match side {
                Side::Query => engine.linked_similarity(&e, &fixed),
                Side::Retrieved => engine.linked_similarity(&fixed, &e),
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut eq = NormalEquations::new(m + 1);
    let mut x = vec![0.0; m + 1];
    for (&c, &y) in patterns.iter().zip(&ys) {
        x[0] = 1.0;
        (0..m).for_each(|i| x[i + 1] = if c.contains(i) { 1.0 } else { 0.0 });
        eq.add(&x, y, locality(c.len(), m, config.locality_sigma));
    }
    let a = fit(&eq, config)?;
    Ok(MarginalExplanation {
        method: LIME.into(),
        side,
        weights: a[1..].to_vec(),
        segmentation: seg.clone(),
        intercept: Some(a[0]),
        evaluations: patterns.len(),
        wall_ms: elapsed_ms(start),
        seed: config.seed,
        flags: Vec::new(),
    })
}

/// Fits `y ≈ a_0 + Σ a_q s_q + Σ a_r s_r + Σ a_qr s_q s_r` on pairs where
/// superpixels of both images are toggled at once.
pub fn joint_lime<E: SearchEngine>(
    engine: &E,
    query: &Image,
    retrieved: &Image,
    seg_q: &Segmentation,
    seg_r: &Segmentation,
    config: &ExplainConfig,
) -> Result<JointExplanation> {
    let start = Instant::now();
    check_pair(query, retrieved)?;
    check_seg(query, seg_q, "query")?;
    check_seg(retrieved, seg_r, "retrieved")?;
    let (mq, mr) = (seg_q.m(), seg_r.m());
    let n = mq + mr;
    if n > 64 {
        return Err(Error::Config(format!(
            "{n} joint superpixels exceed the 64-player limit"
        )));
    }
    let p = 1 + mq + mr + mq * mr;
    check_budget(config.samples, p, config)?;
    let patterns = toggle_patterns(n, config.samples, config.seed);
    let q_bits = Coalition::grand(mq).bits();
    let ys = patterns
        .par_iter()
        .map(|&c| {
            let cq = Coalition::from_bits(c.bits() & q_bits);
            let cr = Coalition::from_bits(c.bits() >> mq);
            let qi = apply_toggles(query, seg_q, &ToggleVector::from_coalition(cq, mq), config.background)?;
            let ri = apply_toggles(
                retrieved,
                seg_r,
                &ToggleVector::from_coalition(cr, mr),
                config.background,
            )?;
            engine.linked_similarity(&engine.embed(&qi)?, &engine.embed(&ri)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut eq = NormalEquations::new(p);
    let mut x = vec![0.0; p];
    for (&c, &y) in patterns.iter().zip(&ys) {
        x.iter_mut().for_each(|v| *v = 0.0);
        x[0] = 1.0;
        for i in c.members() {
            x[1 + i] = 1.0;
        }
        for qi in (0..mq).filter(|&i| c.contains(i)) {
            for rj in (0..mr).filter(|&j| c.contains(mq + j)) {
                x[1 + n + qi * mr + rj] = 1.0;
            }
        }
        eq.add(&x, y, locality(c.len(), n, config.locality_sigma));
    }
    let a = fit(&eq, config)?;
    Ok(JointExplanation {
        method: LIME.into(),
        unary_query: a[1..1 + mq].to_vec(),
        unary_retrieved: a[1 + mq..1 + n].to_vec(),
        interaction: Interaction::Dense(DenseInteraction::new(mq, mr, a[1 + n..].to_vec())?),
        intercept: Some(a[0]),
        query_segmentation: seg_q.clone(),
        retrieved_segmentation: seg_r.clone(),
        evaluations: patterns.len(),
        wall_ms: elapsed_ms(start),
        seed: config.seed,
        flags: Vec::new(),
    })
}
