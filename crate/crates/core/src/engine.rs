//! The synthetic visual-search engine: a seeded random convolution backbone,
//! global average pooling, cosine similarity and the atanh link.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::seeded;

/// Clamp applied before atanh so identical images stay finite.
pub const LINK_EPS: f64 = 1e-6;

const TAPS: usize = 27;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneSpec {
    pub seed: u64,
    pub stride: usize,
    pub channels: usize,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        BackboneSpec {
            seed: 0,
            stride: 4,
            channels: 64,
        }
    }
}

/// Seeded 3×3×3×c convolution, ReLU, then a mean over each stride cell.
///
/// Every cell is convolved on its own with zero padding at the cell border,
/// so a feature column depends only on the pixels of its cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    spec: BackboneSpec,
    /// `channels × 27` taps ordered (dy, dx, rgb).
    weights: Vec<f32>,
}

impl Backbone {
    pub fn new(spec: BackboneSpec) -> Result<Self> {
        if spec.stride < 1 || spec.channels < 1 {
            return Err(Error::Config(format!(
                "backbone needs stride ≥ 1 and channels ≥ 1, got {} and {}",
                spec.stride, spec.channels
            )));
        }
        let mut rng = seeded(spec.seed);
        let scale = 1.0 / (TAPS as f32).sqrt();
        let weights = (0..spec.channels * TAPS)
            .map(|_| rng.gen_range(-1.0f32..=1.0) * scale)
            .collect();
        Ok(Backbone { spec, weights })
    }

    pub fn spec(&self) -> BackboneSpec {
        self.spec
    }

    pub fn stride(&self) -> usize {
        self.spec.stride
    }

    pub fn channels(&self) -> usize {
        self.spec.channels
    }

    pub fn featurize(&self, image: &Image) -> Result<FeatureTensor> {
        let s = self.spec.stride;
        let c = self.spec.channels;
        if !image.width().is_multiple_of(s) || !image.height().is_multiple_of(s) {
            return Err(Error::Argument(format!(
                "image {}x{} is not divisible by stride {s}",
                image.width(),
                image.height()
            )));
        }
        let (h, w) = (image.height() / s, image.width() / s);
        if h * w < 4 {
            return Err(Error::Argument(format!("feature grid {h}x{w} has fewer than 4 cells")));
        }
        let width = image.width();
        let px = image.raw();
        let mut values = vec![0.0f32; h * w * c];
        let mut patch = [0.0f32; TAPS];
        let mut acc = vec![0.0f32; c];
        for cy in 0..h {
            for cx in 0..w {
                acc.iter_mut().for_each(|a| *a = 0.0);
                let (y0, x0) = (cy * s, cx * s);
                for y in y0..y0 + s {
                    for x in x0..x0 + s {
                        for dy in 0..3 {
                            for dx in 0..3 {
                                let yy = y as isize + dy as isize - 1;
                                let xx = x as isize + dx as isize - 1;
                                let inside = yy >= y0 as isize
                                    && yy < (y0 + s) as isize
                                    && xx >= x0 as isize
                                    && xx < (x0 + s) as isize;
                                let t = (dy * 3 + dx) * 3;
                                if inside {
                                    let o = (yy as usize * width + xx as usize) * 3;
                                    patch[t..t + 3].copy_from_slice(&px[o..o + 3]);
                                } else {
                                    patch[t..t + 3].fill(0.0);
                                }
                            }
                        }
                        for (a, filt) in acc.iter_mut().zip(self.weights.chunks_exact(TAPS)) {
                            let r: f32 = filt.iter().zip(&patch).map(|(u, v)| u * v).sum();
                            *a += r.max(0.0);
                        }
                    }
                }
                let norm = 1.0 / (s * s) as f32;
                let o = (cy * w + cx) * c;
                for (dst, a) in values[o..o + c].iter_mut().zip(&acc) {
                    *dst = a * norm;
                }
            }
        }
        Ok(FeatureTensor { h, w, c, values })
    }
}

/// Anything that maps an image to a spatial feature tensor.
pub trait Featurizer: Sync {
    fn featurize(&self, image: &Image) -> Result<FeatureTensor>;
}

impl Featurizer for Backbone {
    fn featurize(&self, image: &Image) -> Result<FeatureTensor> {
        Backbone::featurize(self, image)
    }
}

/// Featurizer wrapper that counts calls.
pub struct CountingFeaturizer<'a, F: Featurizer> {
    inner: &'a F,
    calls: AtomicUsize,
}

impl<'a, F: Featurizer> CountingFeaturizer<'a, F> {
    pub fn new(inner: &'a F) -> Self {
        CountingFeaturizer {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl<F: Featurizer> Featurizer for CountingFeaturizer<'_, F> {
    fn featurize(&self, image: &Image) -> Result<FeatureTensor> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.featurize(image)
    }
}

/// `h × w × c` activations stored cell-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    h: usize,
    w: usize,
    c: usize,
    values: Vec<f32>,
}

impl FeatureTensor {
    pub fn new(h: usize, w: usize, c: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != h * w * c || h * w < 4 || c == 0 {
            return Err(Error::Argument(format!(
                "feature tensor {h}x{w}x{c} with {} values",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature tensor entry".into()));
        }
        Ok(FeatureTensor { h, w, c, values })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn cells(&self) -> usize {
        self.h * self.w
    }

    /// Feature vector of cell `index` (row-major over the grid).
    pub fn column(&self, index: usize) -> &[f32] {
        &self.values[index * self.c..(index + 1) * self.c]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

pub fn pool(t: &FeatureTensor) -> PooledEmbedding {
    let mut sum = vec![0.0f64; t.c];
    for cell in 0..t.cells() {
        for (s, &v) in sum.iter_mut().zip(t.column(cell)) {
            *s += v as f64;
        }
    }
    let n = t.cells() as f64;
    PooledEmbedding(sum.into_iter().map(|s| s / n).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledEmbedding(pub Vec<f64>);

impl PooledEmbedding {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn cosine_similarity(a: &PooledEmbedding, b: &PooledEmbedding) -> Result<f64> {
    if a.0.len() != b.0.len() {
        return Err(Error::Argument(format!(
            "embedding lengths differ: {} vs {}",
            a.0.len(),
            b.0.len()
        )));
    }
    let (na, nb) = (norm(&a.0), norm(&b.0));
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(Error::Degenerate(
            "embedding has zero norm; cosine similarity is undefined".into(),
        ));
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub fn link(d: f64) -> Result<f64> {
    if !d.is_finite() || d.abs() > 1.0 + 1e-9 {
        return Err(Error::Argument(format!("similarity {d} outside [-1, 1]")));
    }
    Ok(d.clamp(-1.0 + LINK_EPS, 1.0 - LINK_EPS).atanh())
}

/// The black box explainers interrogate. Perturbed pairs are scored with
/// `similarity(embed(query), embed(retrieved))`, query first.
pub trait SearchEngine: Sync {
    type Embedding: Send + Sync;

    fn embed(&self, image: &Image) -> Result<Self::Embedding>;

    fn similarity(&self, query: &Self::Embedding, retrieved: &Self::Embedding) -> Result<f64>;

    fn link(&self, d: f64) -> Result<f64>;

    fn linked_similarity(&self, query: &Self::Embedding, retrieved: &Self::Embedding) -> Result<f64> {
        self.link(self.similarity(query, retrieved)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    #[default]
    Atanh,
    Identity,
}

impl LinkKind {
    pub fn apply(self, d: f64) -> Result<f64> {
        match self {
            LinkKind::Atanh => link(d),
            LinkKind::Identity if d.is_finite() => Ok(d),
            LinkKind::Identity => Err(Error::NonFinite(format!("similarity {d}"))),
        }
    }
}

/// Backbone features, pooled and compared by cosine similarity.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityEngine {
    backbone: Backbone,
    link: LinkKind,
}

impl SimilarityEngine {
    pub fn new(spec: BackboneSpec) -> Result<Self> {
        Ok(SimilarityEngine {
            backbone: Backbone::new(spec)?,
            link: LinkKind::Atanh,
        })
    }

    pub fn with_link(mut self, link: LinkKind) -> Self {
        self.link = link;
        self
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn similarity_images(&self, x: &Image, y: &Image) -> Result<f64> {
        cosine_similarity(&self.embed(x)?, &self.embed(y)?)
    }

    pub fn linked_similarity_images(&self, x: &Image, y: &Image) -> Result<f64> {
        self.link.apply(self.similarity_images(x, y)?)
    }
}

impl SearchEngine for SimilarityEngine {
    type Embedding = PooledEmbedding;

    fn embed(&self, image: &Image) -> Result<PooledEmbedding> {
        Ok(pool(&self.backbone.featurize(image)?))
    }

    fn similarity(&self, query: &PooledEmbedding, retrieved: &PooledEmbedding) -> Result<f64> {
        cosine_similarity(query, retrieved)
    }

    fn link(&self, d: f64) -> Result<f64> {
        self.link.apply(d)
    }
}

/// Engine wrapper counting embeddings and pair scorings. Clones share counters.
#[derive(Clone)]
pub struct CountingEngine<E> {
    inner: E,
    embeds: Arc<AtomicUsize>,
    scores: Arc<AtomicUsize>,
}

impl<E: SearchEngine> CountingEngine<E> {
    pub fn new(inner: E) -> Self {
        CountingEngine {
            inner,
            embeds: Arc::default(),
            scores: Arc::default(),
        }
    }

    pub fn embeds(&self) -> usize {
        self.embeds.load(Ordering::Relaxed)
    }

    pub fn scores(&self) -> usize {
        self.scores.load(Ordering::Relaxed)
    }
}

impl<E: SearchEngine> SearchEngine for CountingEngine<E> {
    type Embedding = E::Embedding;

    fn embed(&self, image: &Image) -> Result<E::Embedding> {
        self.embeds.fetch_add(1, Ordering::Relaxed);
        self.inner.embed(image)
    }

    fn similarity(&self, q: &E::Embedding, r: &E::Embedding) -> Result<f64> {
        self.scores.fetch_add(1, Ordering::Relaxed);
        self.inner.similarity(q, r)
    }

    fn link(&self, d: f64) -> Result<f64> {
        self.inner.link(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{noise_image, Image, MID_GRAY};

    fn engine() -> SimilarityEngine {
        SimilarityEngine::new(BackboneSpec::default()).unwrap()
    }

    #[test]
    fn shapes_and_determinism() {
        let e = engine();
        let img = noise_image(32, 32, 3).unwrap();
        let t = e.backbone().featurize(&img).unwrap();
        assert_eq!((t.h(), t.w(), t.c()), (8, 8, 64));
        assert_eq!(t, engine().backbone().featurize(&img).unwrap());
        let black = Image::filled(32, 32, [0.0; 3]).unwrap();
        let tb = e.backbone().featurize(&black).unwrap();
        assert!(tb.values().iter().all(|&v| v == 0.0));
        assert!(matches!(e.similarity_images(&black, &img), Err(Error::Degenerate(_))));
        assert!(e.backbone().featurize(&noise_image(30, 32, 0).unwrap()).is_err());
    }

    #[test]
    fn pooling_is_the_cell_mean() {
        let mut vals = vec![0.0f32; 4];
        vals[1] = 2.0;
        vals[3] = 2.0;
        let t = FeatureTensor::new(2, 2, 1, vals).unwrap();
        assert_eq!(pool(&t).0, vec![1.0]);
        let c = FeatureTensor::new(2, 2, 2, vec![3.0; 8]).unwrap();
        assert_eq!(pool(&c).0, vec![3.0, 3.0]);
    }

    #[test]
    fn cosine_cases() {
        let a = PooledEmbedding(vec![1.0, 2.0, 0.0]);
        let b = PooledEmbedding(vec![2.0, 4.0, 0.0]);
        assert!((cosine_similarity(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        let o = PooledEmbedding(vec![0.0, 0.0, 1.0]);
        assert_eq!(cosine_similarity(&a, &o).unwrap(), 0.0);
        assert!(cosine_similarity(&a, &PooledEmbedding(vec![0.0; 3])).is_err());
    }

    #[test]
    fn link_values() {
        assert_eq!(link(0.0).unwrap(), 0.0);
        assert!((link(0.5).unwrap() - 0.549_306_144_334_054_8).abs() < 1e-12);
        let top = link(1.0).unwrap();
        assert!((top - 7.254_329_401_356_9).abs() < 1e-6, "{top}");
        assert!(link(1.1).is_err());
        assert!(link(-0.3).unwrap() < link(-0.2).unwrap());
    }

    #[test]
    fn self_similarity_and_symmetry() {
        let e = engine();
        let x = noise_image(32, 32, 1).unwrap();
        let y = noise_image(32, 32, 2).unwrap();
        assert!((e.similarity_images(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(
            e.similarity_images(&x, &y).unwrap(),
            e.similarity_images(&y, &x).unwrap()
        );
        assert!((e.linked_similarity_images(&x, &x).unwrap() - link(1.0).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn golden_noise_pair() {
        let e = engine();
        let x = noise_image(32, 32, 0).unwrap();
        let y = noise_image(32, 32, 1).unwrap();
        let d = e.similarity_images(&x, &y).unwrap();
        assert!(d > -1.0 && d < 1.0);
        assert!((d - GOLDEN_NOISE_SIMILARITY).abs() < 1e-9, "{d:.15}");
    }

    const GOLDEN_NOISE_SIMILARITY: f64 = 0.999_623_869_929_434;

    #[test]
    fn cells_are_independent() {
        let e = engine();
        let base = Image::filled(32, 32, MID_GRAY).unwrap();
        let mut changed = base.clone();
        for y in 12..16 {
            for x in 8..12 {
                changed.set_pixel_at(y * 32 + x, [1.0, 0.0, 0.2]);
            }
        }
        let a = e.backbone().featurize(&base).unwrap();
        let b = e.backbone().featurize(&changed).unwrap();
        for cell in 0..a.cells() {
            let same = a.column(cell) == b.column(cell);
            assert_eq!(same, cell != 3 * 8 + 2, "cell {cell}");
        }
    }

    #[test]
    fn counting_engine_counts() {
        let e = CountingEngine::new(engine());
        let x = noise_image(32, 32, 1).unwrap();
        let ex = e.embed(&x).unwrap();
        e.linked_similarity(&ex, &ex).unwrap();
        assert_eq!((e.embeds(), e.scores()), (1, 1));
    }
}
