//! Kernel SHAP on games induced by superpixel toggling, grounded at the
//! fully censored pair.

use std::sync::Arc;
use std::time::Instant;

use super::{check_pair, check_seg, elapsed_ms, probed_game, ExplainConfig, Interaction, JointExplanation};
use super::{MarginalExplanation, OracleProbe, Side, KERNEL_SHAP};
use crate::engine::SearchEngine;
use crate::error::{Error, Result};
use crate::estimators::{kernel_shap_estimate, shapley_taylor_kernel_estimate, EstimatorConfig};
use crate::game::{
    cross_linear_family, harsanyi_dividends, project_dividends, shapley_taylor_exact, Coalition, CoalitionGame,
    CreditAssignment,
};
use crate::image::{Image, Rgb};
use crate::perturb::{apply_toggles, Segmentation, ToggleVector};
use crate::transport::DenseInteraction;

fn estimator_config(config: &ExplainConfig) -> EstimatorConfig {
    EstimatorConfig {
        budget: config.samples,
        seed: config.seed,
        l1_penalty: config.l1_penalty,
        include_anchors: true,
    }
}

/// Game over the superpixels of one side: `v(S)` is the linked similarity
/// with only `S` kept on that side, minus the value with the side fully censored.
pub fn marginal_induced_game<E>(
    engine: &E,
    query: &Image,
    retrieved: &Image,
    side: Side,
    seg: &Segmentation,
    background: Rgb,
) -> Result<(CoalitionGame, Arc<OracleProbe>)>
where
    E: SearchEngine + Clone + Send + 'static,
{
    check_pair(query, retrieved)?;
    let (explained, other) = match side {
        Side::Query => (query, retrieved),
        Side::Retrieved => (retrieved, query),
    };
    check_seg(explained, seg, side.as_str())?;
    let m = seg.m();
    let fixed = engine.embed(other)?;
    let ctx = Arc::new((engine.clone(), explained.clone(), seg.clone(), fixed));
    probed_game(m, move |c: Coalition| {
        let (engine, img, seg, fixed) = &*ctx;
        let perturbed = apply_toggles(img, seg, &ToggleVector::from_coalition(c, m), background)?;
        let e = engine.embed(&perturbed)?;
        match side {
            Side::Query => engine.linked_similarity(&e, fixed),
            Side::Retrieved => engine.linked_similarity(fixed, &e),
        }
    })
}

/// Game over `m_q + m_r` players (query superpixels first) toggling both images.
pub fn joint_induced_game<E>(
    engine: &E,
    query: &Image,
    retrieved: &Image,
    seg_q: &Segmentation,
    seg_r: &Segmentation,
    background: Rgb,
) -> Result<(CoalitionGame, Arc<OracleProbe>)>
where
    E: SearchEngine + Clone + Send + 'static,
{
    check_pair(query, retrieved)?;
    check_seg(query, seg_q, "query")?;
    check_seg(retrieved, seg_r, "retrieved")?;
    let (mq, mr) = (seg_q.m(), seg_r.m());
    let q_bits = Coalition::grand(mq).bits();
    let ctx = Arc::new((
        engine.clone(),
        query.clone(),
        retrieved.clone(),
        seg_q.clone(),
        seg_r.clone(),
    ));
    probed_game(mq + mr, move |c: Coalition| {
        let (engine, q, r, sq, sr) = &*ctx;
        let cq = Coalition::from_bits(c.bits() & q_bits);
        let cr = Coalition::from_bits(c.bits() >> mq);
        let qi = apply_toggles(q, sq, &ToggleVector::from_coalition(cq, mq), background)?;
        let ri = apply_toggles(r, sr, &ToggleVector::from_coalition(cr, mr), background)?;
        engine.linked_similarity(&engine.embed(&qi)?, &engine.embed(&ri)?)
    })
}

/// Kernel SHAP values of the superpixels of one side.
pub fn marginal_kernel_shap<E>(
    engine: &E,
    query: &Image,
    retrieved: &Image,
    side: Side,
    seg: &Segmentation,
    config: &ExplainConfig,
) -> Result<MarginalExplanation>
where
    E: SearchEngine + Clone + Send + 'static,
{
    let start = Instant::now();
    let (game, probe) = marginal_induced_game(engine, query, retrieved, side, seg, config.background)?;
    let credit = probe.check(kernel_shap_estimate(&game, &estimator_config(config)))?;
    Ok(MarginalExplanation {
        method: KERNEL_SHAP.into(),
        side,
        weights: credit.players(),
        segmentation: seg.clone(),
        intercept: Some(game.offset()),
        evaluations: probe.calls(),
        wall_ms: elapsed_ms(start),
        seed: config.seed,
        flags: Vec::new(),
    })
}

fn cross_pairs(credit: &CreditAssignment, mq: usize, mr: usize) -> Result<DenseInteraction> {
    let mut a = DenseInteraction::zeros(mq, mr);
    for i in 0..mq {
        for j in 0..mr {
            let v = credit
                .get(Coalition::pair(i, mq + j))
                .ok_or_else(|| Error::Estimation(format!("missing credit for pair ({i}, {})", mq + j)))?;
            a.set(i, j, v);
        }
    }
    Ok(a)
}

/// Second-order Shapley-Taylor explanation of the joint induced game.
///
/// Cross-image pair indices form the interaction matrix. Unary terms follow
/// the cross-linear assignment: each player's singleton index plus half of
/// every intra-image pair index it belongs to. With `config.exact` the game
/// is tabulated, the interaction is the exact pair index, and the unary
/// terms come from projecting the dividends onto the cross-linear family.
pub fn joint_kernel_shap<E>(
    engine: &E,
    query: &Image,
    retrieved: &Image,
    seg_q: &Segmentation,
    seg_r: &Segmentation,
    config: &ExplainConfig,
) -> Result<JointExplanation>
where
    E: SearchEngine + Clone + Send + 'static,
{
    let start = Instant::now();
    let (game, probe) = joint_induced_game(engine, query, retrieved, seg_q, seg_r, config.background)?;
    let (mq, mr) = (seg_q.m(), seg_r.m());
    let n = mq + mr;
    let (unary, interaction) = if config.exact {
        let table = probe.check(game.tabulate())?;
        let st = shapley_taylor_exact(&table, 2)?;
        let q_set = Coalition::grand(mq);
        let r_set = Coalition::from_bits(Coalition::grand(n).bits() & !q_set.bits());
        let cl = project_dividends(&harsanyi_dividends(&table)?, &cross_linear_family(q_set, r_set)?)?;
        (cl.players(), cross_pairs(&st, mq, mr)?)
    } else {
        let st = probe.check(shapley_taylor_kernel_estimate(&game, &estimator_config(config)))?;
        let mut unary: Vec<f64> = (0..n).map(|i| st.player(i)).collect();
        for (c, v) in st.iter().filter(|(c, _)| c.len() == 2) {
            let mut m = c.members();
            let (i, j) = (m.next().unwrap(), m.next().unwrap());
            if (i < mq) == (j < mq) {
                unary[i] += v / 2.0;
                unary[j] += v / 2.0;
            }
        }
        (unary, cross_pairs(&st, mq, mr)?)
    };
    Ok(JointExplanation {
        method: KERNEL_SHAP.into(),
        unary_query: unary[..mq].to_vec(),
        unary_retrieved: unary[mq..].to_vec(),
        interaction: Interaction::Dense(interaction),
        intercept: Some(game.offset()),
        query_segmentation: seg_q.clone(),
        retrieved_segmentation: seg_r.clone(),
        evaluations: probe.calls(),
        wall_ms: elapsed_ms(start),
        seed: config.seed,
        flags: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{BackboneSpec, SimilarityEngine};
    use crate::explainers::planted::{tile_image, PlantedEngine};
    use crate::game::shapley_direct;
    use crate::image::MID_GRAY;
    use crate::perturb::grid_superpixels;

    fn engine() -> SimilarityEngine {
        SimilarityEngine::new(BackboneSpec::default()).unwrap()
    }

    #[test]
    fn marginal_full_enumeration_is_exact() {
        let e = engine();
        let q = tile_image(2, 4, 5);
        let r = tile_image(2, 4, 6);
        let seg = grid_superpixels(&q, 2, 4).unwrap();
        let m = marginal_kernel_shap(&e, &q, &r, Side::Query, &seg, &ExplainConfig::with_samples(256, 0)).unwrap();
        let (game, _) = marginal_induced_game(&e, &q, &r, Side::Query, &seg, MID_GRAY).unwrap();
        let exact = shapley_direct(&game.tabulate().unwrap()).unwrap();
        for (a, b) in m.weights.iter().zip(exact.players()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        let full = e.linked_similarity_images(&q, &r).unwrap();
        let total: f64 = m.intercept.unwrap() + m.weights.iter().sum::<f64>();
        assert!((total - full).abs() < 1e-9);
    }

    #[test]
    fn joint_full_enumeration_matches_exact_pairs() {
        let e = engine();
        let q = tile_image(2, 2, 1);
        let r = tile_image(2, 2, 2);
        let sq = grid_superpixels(&q, 2, 2).unwrap();
        let j = joint_kernel_shap(&e, &q, &r, &sq, &sq, &ExplainConfig::with_samples(256, 0)).unwrap();
        let (game, _) = joint_induced_game(&e, &q, &r, &sq, &sq, MID_GRAY).unwrap();
        let st = shapley_taylor_exact(&game.tabulate().unwrap(), 2).unwrap();
        let a = j.dense().unwrap();
        for i in 0..4 {
            for k in 0..4 {
                let want = st.get(Coalition::pair(i, 4 + k)).unwrap();
                assert!((a.get(i, k) - want).abs() < 1e-6);
            }
        }
        let mut cfg = ExplainConfig::with_samples(256, 0);
        cfg.exact = true;
        let x = joint_kernel_shap(&e, &q, &r, &sq, &sq, &cfg).unwrap();
        for (u, v) in x.dense().unwrap().values.iter().zip(&a.values) {
            assert!((u - v).abs() < 1e-6);
        }
    }

    #[test]
    fn planted_cross_terms_only() {
        let mut cross = DenseInteraction::zeros(4, 4);
        cross.set(1, 2, 2.0);
        cross.set(3, 0, -1.0);
        let e = PlantedEngine::bilinear(cross.clone());
        let q = tile_image(2, 2, 1);
        let sq = grid_superpixels(&q, 2, 2).unwrap();
        let j = joint_kernel_shap(&e, &q, &q, &sq, &sq, &ExplainConfig::with_samples(600, 4)).unwrap();
        for (a, b) in j.dense().unwrap().values.iter().zip(&cross.values) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(j.unary_query.iter().chain(&j.unary_retrieved).all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn zero_game_gives_zero_credits() {
        let e = PlantedEngine::additive(vec![0.0; 4], vec![0.0; 4]);
        let q = tile_image(2, 2, 1);
        let sq = grid_superpixels(&q, 2, 2).unwrap();
        let j = joint_kernel_shap(&e, &q, &q, &sq, &sq, &ExplainConfig::with_samples(100, 0)).unwrap();
        assert!(j
            .dense()
            .unwrap()
            .values
            .iter()
            .chain(&j.unary_query)
            .all(|v| *v == 0.0));
        let m = marginal_kernel_shap(&e, &q, &q, Side::Retrieved, &sq, &ExplainConfig::with_samples(16, 0)).unwrap();
        assert!(m.weights.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn additive_plant_recovered() {
        let e = PlantedEngine::additive(vec![1.0, -2.0, 0.5, 4.0], vec![0.0; 4]);
        let q = tile_image(2, 2, 3);
        let sq = grid_superpixels(&q, 2, 2).unwrap();
        let m = marginal_kernel_shap(&e, &q, &q, Side::Query, &sq, &ExplainConfig::with_samples(8, 2)).unwrap();
        for (a, b) in m.weights.iter().zip([1.0, -2.0, 0.5, 4.0]) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
