//! Search activation maps: contracting normalized feature columns against the
//! other image's pooled features (marginal) or feature columns (joint).

use std::time::Instant;

use super::{cell_segmentation, check_pair, elapsed_ms, Interaction, JointExplanation, MarginalExplanation, Side};
use super::{FLAG_ZERO_COLUMN, SAM};
use crate::engine::{pool, FeatureTensor, Featurizer};
use crate::error::Result;
use crate::image::Image;
use crate::transport::DenseInteraction;

/// Unit-normalized copy of `v`, or `None` for a zero vector.
fn unit(v: impl Iterator<Item = f64>) -> Option<Vec<f64>> {
    let v: Vec<f64> = v.collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n > 0.0).then(|| v.iter().map(|x| x / n).collect())
}

fn unit_columns(t: &FeatureTensor) -> Vec<Option<Vec<f64>>> {
    (0..t.cells())
        .map(|i| unit(t.column(i).iter().map(|&x| x as f64)))
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0)
}

/// Cosine between each feature column of the explained side and the pooled
/// features of the other image. Uses exactly two featurizations.
pub fn sam_marginal<F: Featurizer>(
    backbone: &F,
    query: &Image,
    retrieved: &Image,
    side: Side,
) -> Result<MarginalExplanation> {
    let start = Instant::now();
    check_pair(query, retrieved)?;
    let fq = backbone.featurize(query)?;
    let fr = backbone.featurize(retrieved)?;
    let (explained, other, image) = match side {
        Side::Query => (&fq, &fr, query),
        Side::Retrieved => (&fr, &fq, retrieved),
    };
    let mut flags = Vec::new();
    let g = unit(pool(other).0.into_iter());
    let cols = unit_columns(explained);
    let weights: Vec<f64> = cols
        .iter()
        .map(|c| match (c, &g) {
            (Some(c), Some(g)) => dot(c, g),
            _ => 0.0,
        })
        .collect();
    if g.is_none() || cols.iter().any(Option::is_none) {
        flags.push(FLAG_ZERO_COLUMN.to_string());
    }
    Ok(MarginalExplanation {
        method: SAM.into(),
        side,
        weights,
        segmentation: cell_segmentation(image, explained.h(), explained.w())?,
        intercept: None,
        evaluations: 2,
        wall_ms: elapsed_ms(start),
        seed: 0,
        flags,
    })
}

/// Rank-4 tensor `a[hw][ij]` of cosines between every query and retrieved
/// feature column. Uses exactly two featurizations.
pub fn sam_joint<F: Featurizer>(backbone: &F, query: &Image, retrieved: &Image) -> Result<JointExplanation> {
    let start = Instant::now();
    check_pair(query, retrieved)?;
    let fq = backbone.featurize(query)?;
    let fr = backbone.featurize(retrieved)?;
    let cq = unit_columns(&fq);
    let cr = unit_columns(&fr);
    let mut a = DenseInteraction::zeros(cq.len(), cr.len());
    for (i, qc) in cq.iter().enumerate() {
        for (j, rc) in cr.iter().enumerate() {
            if let (Some(x), Some(y)) = (qc, rc) {
                a.set(i, j, dot(x, y));
            }
        }
    }
    let mut flags = Vec::new();
    if cq.iter().chain(&cr).any(Option::is_none) {
        flags.push(FLAG_ZERO_COLUMN.to_string());
    }
    Ok(JointExplanation {
        method: SAM.into(),
        unary_query: Vec::new(),
        unary_retrieved: Vec::new(),
        interaction: Interaction::Dense(a),
        intercept: None,
        query_segmentation: cell_segmentation(query, fq.h(), fq.w())?,
        retrieved_segmentation: cell_segmentation(retrieved, fr.h(), fr.w())?,
        evaluations: 2,
        wall_ms: elapsed_ms(start),
        seed: 0,
        flags,
    })
}
