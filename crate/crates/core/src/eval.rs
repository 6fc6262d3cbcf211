//! Interpret-and-censor evaluation on synthetic image pairs: marginal Δd,
//! joint censored similarity, label-propagation mIoU and timing.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::engine::{BackboneSpec, SimilarityEngine};
use crate::error::{Error, Result};
use crate::explainers::{
    joint_kernel_shap, joint_lime, marginal_kernel_shap, marginal_lime, sam_joint, sam_marginal, sbsm_joint,
    sbsm_marginal, ExplainConfig, JointExplanation, MarginalExplanation, SbsmConfig, Side,
};
use crate::image::{generate_synthetic_image, Image, Mask, Rgb, SceneSpec, Shape, ShapeSpec, MID_GRAY};
use crate::perturb::{censor_all_but_top, censor_outside, censor_top_fraction, grid_superpixels, AttentionMap};
use crate::record::write_atomic;
use crate::rng::{derive_seed, seeded};

pub const RANDOM: &str = "random";
pub const ORACLE: &str = "oracle";
pub const MARGINAL: &str = "marginal";
pub const JOINT: &str = "joint";

/// Flag recorded when both masks of an mIoU comparison are empty.
pub const FLAG_VACUOUS_IOU: &str = "vacuous_iou";
/// Flag recorded when a projection had no signal and fell back to uniform.
pub const FLAG_DEGENERATE_PROJECTION: &str = "degenerate_projection";
/// Flag recorded when an attention map is constant.
pub const FLAG_CONSTANT_ATTENTION: &str = "constant_attention";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sam,
    Lime,
    KernelShap,
    Sbsm,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Sam, Method::Lime, Method::KernelShap, Method::Sbsm];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Sam => crate::explainers::SAM,
            Method::Lime => crate::explainers::LIME,
            Method::KernelShap => crate::explainers::KERNEL_SHAP,
            Method::Sbsm => crate::explainers::SBSM,
        }
    }

    pub fn parse(name: &str) -> Result<Method> {
        Method::ALL.into_iter().find(|m| m.as_str() == name).ok_or_else(|| {
            Error::Config(format!(
                "unknown method {name:?}; expected sam, lime, kernel_shap or sbsm"
            ))
        })
    }

    fn index(self) -> u64 {
        self as u64
    }
}

/// Budgets and region layout used when running explainers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MethodSettings {
    /// Superpixel grid `[rows, cols]` for LIME and Kernel SHAP.
    pub grid: [usize; 2],
    pub marginal_samples: usize,
    pub joint_samples: usize,
    pub l1_penalty: f64,
    pub locality_sigma: f64,
    /// Sliding-mask settings; the mask side defaults to the object scale.
    pub sbsm: SbsmConfig,
    pub background: Rgb,
    /// Joint Kernel SHAP only: tabulate the game instead of sampling.
    pub exact: bool,
}

impl Default for MethodSettings {
    fn default() -> Self {
        MethodSettings {
            grid: [4, 4],
            marginal_samples: 512,
            joint_samples: 1024,
            l1_penalty: 0.0,
            locality_sigma: 0.25,
            sbsm: SbsmConfig {
                mask_size: 12,
                ..SbsmConfig::default()
            },
            background: MID_GRAY,
            exact: false,
        }
    }
}

impl MethodSettings {
    fn explain_config(&self, samples: usize, seed: u64) -> ExplainConfig {
        ExplainConfig {
            samples,
            seed,
            l1_penalty: self.l1_penalty,
            locality_sigma: self.locality_sigma,
            background: self.background,
            exact: self.exact,
        }
    }

    fn sbsm_config(&self, seed: u64) -> SbsmConfig {
        SbsmConfig {
            seed,
            background: self.background,
            ..self.sbsm
        }
    }
}

pub fn explain_marginal(
    method: Method,
    engine: &SimilarityEngine,
    query: &Image,
    retrieved: &Image,
    side: Side,
    settings: &MethodSettings,
    seed: u64,
) -> Result<MarginalExplanation> {
    let explained = match side {
        Side::Query => query,
        Side::Retrieved => retrieved,
    };
    let [rows, cols] = settings.grid;
    let config = settings.explain_config(settings.marginal_samples, seed);
    match method {
        Method::Sam => sam_marginal(engine.backbone(), query, retrieved, side),
        Method::Lime => {
            let seg = grid_superpixels(explained, rows, cols)?;
            marginal_lime(engine, query, retrieved, side, &seg, &config)
        }
        Method::KernelShap => {
            let seg = grid_superpixels(explained, rows, cols)?;
            marginal_kernel_shap(engine, query, retrieved, side, &seg, &config)
        }
        Method::Sbsm => sbsm_marginal(engine, query, retrieved, side, &settings.sbsm_config(seed)),
    }
}

pub fn explain_joint(
    method: Method,
    engine: &SimilarityEngine,
    query: &Image,
    retrieved: &Image,
    settings: &MethodSettings,
    seed: u64,
) -> Result<JointExplanation> {
    let [rows, cols] = settings.grid;
    let config = settings.explain_config(settings.joint_samples, seed);
    match method {
        Method::Sam => sam_joint(engine.backbone(), query, retrieved),
        Method::Lime | Method::KernelShap => {
            let sq = grid_superpixels(query, rows, cols)?;
            let sr = grid_superpixels(retrieved, rows, cols)?;
            if method == Method::Lime {
                joint_lime(engine, query, retrieved, &sq, &sr, &config)
            } else {
                joint_kernel_shap(engine, query, retrieved, &sq, &sr, &config)
            }
        }
        Method::Sbsm => sbsm_joint(engine, query, retrieved, &settings.sbsm_config(seed)),
    }
}

/// A shape family: fixed kind and color, size drawn per instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeClass {
    pub name: &'static str,
    pub color: Rgb,
    kind: ClassKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ClassKind {
    Square,
    Disc,
    Bar,
    Column,
}

pub const CLASSES: [ShapeClass; 4] = [
    ShapeClass {
        name: "red_square",
        color: [0.85, 0.15, 0.1],
        kind: ClassKind::Square,
    },
    ShapeClass {
        name: "green_disc",
        color: [0.1, 0.75, 0.2],
        kind: ClassKind::Disc,
    },
    ShapeClass {
        name: "blue_bar",
        color: [0.15, 0.25, 0.9],
        kind: ClassKind::Bar,
    },
    ShapeClass {
        name: "yellow_column",
        color: [0.95, 0.85, 0.1],
        kind: ClassKind::Column,
    },
];

impl ShapeClass {
    /// Bounding box `(w, h)` for size parameter `s`.
    fn extent(&self, s: usize) -> (usize, usize) {
        match self.kind {
            ClassKind::Square | ClassKind::Disc => (s, s),
            ClassKind::Bar => (s + 4, s / 2 + 2),
            ClassKind::Column => (s / 2 + 2, s + 4),
        }
    }

    fn shape(&self, x: usize, y: usize, s: usize) -> Shape {
        let (w, h) = self.extent(s);
        match self.kind {
            ClassKind::Disc => Shape::Circle {
                cx: x as f64 + s as f64 / 2.0,
                cy: y as f64 + s as f64 / 2.0,
                r: s as f64 / 2.0,
            },
            _ => Shape::Rect { x, y, w, h },
        }
    }
}

/// Layout of the generated pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub size: usize,
    pub background: Rgb,
    /// Amplitude of uniform pixel noise over the whole canvas.
    pub noise: f32,
    /// Distractor objects per image, drawn from the non-shared classes.
    pub distractors: usize,
    /// Inclusive range of the object size parameter.
    pub min_object: usize,
    pub max_object: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            size: 32,
            background: [0.0, 0.0, 0.0],
            noise: 0.0,
            distractors: 1,
            min_object: 10,
            max_object: 12,
        }
    }
}

/// Query and retrieved images sharing at least one shape class.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    pub index: usize,
    pub query: Image,
    pub retrieved: Image,
    pub query_masks: BTreeMap<String, Mask>,
    pub retrieved_masks: BTreeMap<String, Mask>,
    /// Classes present in both images, sorted.
    pub shared: Vec<String>,
}

impl EvalPair {
    fn union_mask(masks: &BTreeMap<String, Mask>, classes: &[String], w: usize, h: usize) -> Mask {
        let mut out = Mask::empty(w, h);
        for m in classes.iter().filter_map(|c| masks.get(c)) {
            for i in 0..m.bits().len() {
                if m.get(i) {
                    out.set(i, true);
                }
            }
        }
        out
    }

    /// Union of the shared-class masks on the query.
    pub fn shared_query_mask(&self) -> Mask {
        Self::union_mask(&self.query_masks, &self.shared, self.query.width(), self.query.height())
    }

    /// Shared class evaluated in joint mode, cycling over pairs.
    pub fn joint_class(&self) -> &str {
        &self.shared[self.index % self.shared.len()]
    }

    /// Checks the dataset invariants: a shared class, nonempty shared masks
    /// and every object covering at least 5% of the image.
    pub fn validate(&self) -> Result<()> {
        if self.shared.is_empty() {
            return Err(Error::Argument(format!("pair {} has no shared class", self.index)));
        }
        let min_area = (self.query.pixel_count() as f64 * 0.05).ceil() as usize;
        for (side, masks) in [("query", &self.query_masks), ("retrieved", &self.retrieved_masks)] {
            for (name, m) in masks {
                if m.count() < min_area {
                    return Err(Error::Argument(format!(
                        "pair {} {side} object {name} covers {} < {min_area} pixels",
                        self.index,
                        m.count()
                    )));
                }
            }
            if self.shared.iter().any(|c| !masks.contains_key(c)) {
                return Err(Error::Argument(format!(
                    "pair {} {side} lacks a shared class",
                    self.index
                )));
            }
        }
        Ok(())
    }
}

fn overlaps(a: (usize, usize, usize, usize), b: (usize, usize, usize, usize)) -> bool {
    let (ax, ay, aw, ah) = a;
    let (bx, by, bw, bh) = b;
    ax < bx + bw + 1 && bx < ax + aw + 1 && ay < by + bh + 1 && by < ay + ah + 1
}

fn scene(
    classes: &[&ShapeClass],
    config: &DatasetConfig,
    rng: &mut crate::rng::Rng,
) -> Result<(Image, BTreeMap<String, Mask>)> {
    let size = config.size;
    'attempt: for _ in 0..1000 {
        let mut boxes = Vec::new();
        let mut shapes = Vec::new();
        for class in classes {
            let s = rng.gen_range(config.min_object..=config.max_object);
            let (w, h) = class.extent(s);
            if w + 2 > size || h + 2 > size {
                return Err(Error::Config(format!(
                    "object of size {s} does not fit a {size}px canvas"
                )));
            }
            let b = (rng.gen_range(1..=size - w - 1), rng.gen_range(1..=size - h - 1), w, h);
            if boxes.iter().any(|&o| overlaps(o, b)) {
                continue 'attempt;
            }
            boxes.push(b);
            shapes.push(ShapeSpec {
                shape: class.shape(b.0, b.1, s),
                color: class.color,
            });
        }
        let spec = SceneSpec {
            width: size,
            height: size,
            background: config.background,
            noise: config.noise,
            shapes,
        };
        let (img, masks) = generate_synthetic_image(&spec, rng.gen())?;
        let named = classes
            .iter()
            .zip(masks)
            .map(|(c, m)| (c.name.to_string(), m))
            .collect();
        return Ok((img, named));
    }
    Err(Error::Config(format!(
        "could not place {} objects on a {size}px canvas",
        classes.len()
    )))
}

/// Pairs sharing one class at independent positions, each image adding
/// distractors from the other classes. Deterministic in `seed`.
pub fn synthetic_pair_dataset(count: usize, seed: u64, config: &DatasetConfig) -> Result<Vec<EvalPair>> {
    if count == 0 {
        return Err(Error::Argument("dataset needs at least one pair".into()));
    }
    if config.distractors + 1 > CLASSES.len() {
        return Err(Error::Config(format!("at most {} distractors", CLASSES.len() - 1)));
    }
    if config.min_object == 0 || config.min_object > config.max_object {
        return Err(Error::Config("object size range is empty".into()));
    }
    (0..count)
        .map(|index| {
            let mut rng = seeded(derive_seed(seed, &[index as u64]));
            let shared = rng.gen_range(0..CLASSES.len());
            let mut pick = || {
                let mut others: Vec<usize> = (0..CLASSES.len()).filter(|&c| c != shared).collect();
                let mut chosen = vec![&CLASSES[shared]];
                for _ in 0..config.distractors {
                    chosen.push(&CLASSES[others.remove(rng.gen_range(0..others.len()))]);
                }
                scene(&chosen, config, &mut rng)
            };
            let (query, query_masks) = pick()?;
            let (retrieved, retrieved_masks) = pick()?;
            let shared = query_masks
                .keys()
                .filter(|k| retrieved_masks.contains_key(*k))
                .cloned()
                .collect();
            let pair = EvalPair {
                index,
                query,
                retrieved,
                query_masks,
                retrieved_masks,
                shared,
            };
            pair.validate()?;
            Ok(pair)
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairMeta {
    index: usize,
    shared: Vec<String>,
    query_classes: Vec<String>,
    retrieved_classes: Vec<String>,
}

/// Writes `pair_####/{query.ppm, retrieved.ppm, masks/*.pgm, meta.json}`.
pub fn write_dataset(dir: &Path, pairs: &[EvalPair]) -> Result<()> {
    for p in pairs {
        let root = dir.join(format!("pair_{:04}", p.index));
        fs::create_dir_all(root.join("masks"))?;
        p.query.save_ppm(root.join("query.ppm"))?;
        p.retrieved.save_ppm(root.join("retrieved.ppm"))?;
        for (side, masks) in [("query", &p.query_masks), ("retrieved", &p.retrieved_masks)] {
            for (name, m) in masks {
                let mut bytes = Vec::new();
                m.write_pgm(&mut bytes)?;
                write_atomic(&root.join("masks").join(format!("{side}_{name}.pgm")), &bytes)?;
            }
        }
        let meta = PairMeta {
            index: p.index,
            shared: p.shared.clone(),
            query_classes: p.query_masks.keys().cloned().collect(),
            retrieved_classes: p.retrieved_masks.keys().cloned().collect(),
        };
        crate::record::write_json_atomic(&root.join("meta.json"), &meta)?;
    }
    Ok(())
}

/// Reads a directory written by [`write_dataset`], ordered by pair index.
/// Images come back quantized to 8 bits per channel.
pub fn read_dataset(dir: &Path) -> Result<Vec<EvalPair>> {
    let mut roots: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("pair_")))
        .collect();
    roots.sort();
    if roots.is_empty() {
        return Err(Error::Argument(format!(
            "no pair_#### directories in {}",
            dir.display()
        )));
    }
    roots
        .iter()
        .map(|root| {
            let meta: PairMeta = serde_json::from_str(&fs::read_to_string(root.join("meta.json"))?)?;
            let load_masks = |side: &str, classes: &[String]| -> Result<BTreeMap<String, Mask>> {
                classes
                    .iter()
                    .map(|c| {
                        let f = fs::File::open(root.join("masks").join(format!("{side}_{c}.pgm")))?;
                        Ok((c.clone(), Mask::read_pgm(std::io::BufReader::new(f))?))
                    })
                    .collect()
            };
            let pair = EvalPair {
                index: meta.index,
                query: Image::load_ppm(root.join("query.ppm"))?,
                retrieved: Image::load_ppm(root.join("retrieved.ppm"))?,
                query_masks: load_masks("query", &meta.query_classes)?,
                retrieved_masks: load_masks("retrieved", &meta.retrieved_classes)?,
                shared: meta.shared,
            };
            pair.validate()?;
            Ok(pair)
        })
        .collect()
}

/// Intersection over union, with `(1, true)` when both masks are empty.
pub fn miou(pred: &Mask, truth: &Mask) -> Result<(f64, bool)> {
    if pred.width() != truth.width() || pred.height() != truth.height() {
        return Err(Error::Argument("mIoU masks differ in size".into()));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in pred.bits().iter().zip(truth.bits()) {
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    if union == 0 {
        return Ok((1.0, true));
    }
    Ok((inter as f64 / union as f64, false))
}

/// `d(q, r) − d(q censored at its top-`fraction` pixels, r)` on raw similarity.
pub fn marginal_censor_eval(
    engine: &SimilarityEngine,
    query: &Image,
    retrieved: &Image,
    attention: &AttentionMap,
    fraction: f64,
    background: Rgb,
) -> Result<f64> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Argument(format!(
            "censor fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let censored = censor_top_fraction(query, attention, fraction, background)?;
    Ok(engine.similarity_images(query, retrieved)? - engine.similarity_images(&censored, retrieved)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointOutcome {
    pub sim_censored: f64,
    pub miou: f64,
    pub vacuous: bool,
}

/// Keeps the top-`p` pixels of `projected` on the retrieved image, where `p`
/// is the size of the class's retrieved mask, and compares with the query
/// censored outside the class.
pub fn censored_projection_eval(
    engine: &SimilarityEngine,
    pair: &EvalPair,
    class: &str,
    projected: &AttentionMap,
    background: Rgb,
) -> Result<JointOutcome> {
    let (qm, rm) = class_masks(pair, class)?;
    let p = rm.count();
    let q = censor_outside(&pair.query, qm, background)?;
    let r = censor_all_but_top(&pair.retrieved, projected, p, background)?;
    let (miou, vacuous) = miou(&projected.top_mask(p), rm)?;
    Ok(JointOutcome {
        sim_censored: engine.similarity_images(&q, &r)?,
        miou,
        vacuous,
    })
}

fn class_masks<'a>(pair: &'a EvalPair, class: &str) -> Result<(&'a Mask, &'a Mask)> {
    match (pair.query_masks.get(class), pair.retrieved_masks.get(class)) {
        (Some(q), Some(r)) => Ok((q, r)),
        _ => Err(Error::Argument(format!(
            "class {class} is not in both images of pair {}",
            pair.index
        ))),
    }
}

/// Projects the class's query mask through `joint` and scores the censored pair.
pub fn joint_censor_eval(
    engine: &SimilarityEngine,
    joint: &JointExplanation,
    pair: &EvalPair,
    class: &str,
    background: Rgb,
) -> Result<(JointOutcome, bool)> {
    let (qm, _) = class_masks(pair, class)?;
    let projection = joint.project(&AttentionMap::from_mask(qm))?;
    let outcome = censored_projection_eval(engine, pair, class, &projection.attention, background)?;
    Ok((outcome, projection.degenerate))
}

/// Per-pixel uniform random attention.
pub fn random_attention(width: usize, height: usize, seed: u64) -> AttentionMap {
    let mut rng = seeded(seed);
    let values = (0..width * height).map(|_| rng.gen::<f64>()).collect();
    AttentionMap::new(width, height, values).expect("uniform draws are finite")
}

/// Full evaluation setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub engine: BackboneSpec,
    pub methods: Vec<Method>,
    pub settings: MethodSettings,
    pub fraction: f64,
    /// Random-attention draws averaged into each baseline row.
    pub random_seeds: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            engine: BackboneSpec::default(),
            methods: Method::ALL.to_vec(),
            settings: MethodSettings::default(),
            fraction: 0.2,
            random_seeds: 10,
            seed: 0,
        }
    }
}

/// One (method, mode, pair) measurement. Metrics that do not apply to the
/// mode are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRow {
    pub method: String,
    pub mode: String,
    pub pair: usize,
    pub class: String,
    pub delta_d: Option<f64>,
    pub sim_censored: Option<f64>,
    pub miou: Option<f64>,
    pub evals: usize,
    pub wall_ms: f64,
    pub seed: u64,
    pub flags: Vec<String>,
}

impl EvalRow {
    fn new(method: &str, mode: &str, pair: usize, seed: u64) -> Self {
        EvalRow {
            method: method.into(),
            mode: mode.into(),
            pair,
            class: String::new(),
            delta_d: None,
            sim_censored: None,
            miou: None,
            evals: 0,
            wall_ms: 0.0,
            seed,
            flags: Vec::new(),
        }
    }

    /// The row's headline metric: Δd for marginal rows, censored similarity for joint rows.
    pub fn score(&self) -> Option<f64> {
        self.delta_d.or(self.sim_censored)
    }
}

/// Paired one-sided t-test of `mean(a − b) > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub n: usize,
    pub mean_difference: f64,
    pub t: f64,
    pub p_value: f64,
}

pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Argument(format!(
            "paired test needs two equal samples of size ≥ 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let (t, p_value) = if var == 0.0 {
        let t = if mean > 0.0 {
            f64::INFINITY
        } else if mean < 0.0 {
            f64::NEG_INFINITY
        } else {
            0.0
        };
        (t, if mean > 0.0 { 0.0 } else { 1.0 })
    } else {
        let t = mean / (var / n as f64).sqrt();
        let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| Error::Estimation(e.to_string()))?;
        (t, 1.0 - dist.cdf(t))
    };
    Ok(PairedTest {
        n,
        mean_difference: mean,
        t,
        p_value,
    })
}

/// Aggregate of one (method, mode) against the random baseline of that mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub mode: String,
    pub pairs: usize,
    pub mean_score: f64,
    pub mean_random: f64,
    pub mean_miou: Option<f64>,
    pub mean_random_miou: Option<f64>,
    /// Fraction of pairs where the method scores above the random baseline.
    pub win_rate: f64,
    pub test: Option<PairedTest>,
    pub mean_evals: f64,
    pub mean_wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub summary: Vec<SummaryRow>,
}

pub const CSV_HEADER: &str = "method,mode,pair,class,delta_d,sim_censored,miou,evals,wall_ms,seed";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EvalReport {
    pub fn from_rows(rows: Vec<EvalRow>) -> Result<Self> {
        for r in &rows {
            let finite = [r.delta_d, r.sim_censored, r.miou]
                .iter()
                .flatten()
                .all(|v| v.is_finite());
            if !finite || !r.wall_ms.is_finite() {
                return Err(Error::NonFinite(format!(
                    "{} {} pair {} has a non-finite metric",
                    r.method, r.mode, r.pair
                )));
            }
        }
        let summary = summarize(&rows)?;
        Ok(EvalReport { rows, summary })
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.method,
                r.mode,
                r.pair,
                r.class,
                opt(r.delta_d),
                opt(r.sim_censored),
                opt(r.miou),
                r.evals,
                r.wall_ms,
                r.seed
            );
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn rows_for<'a>(&'a self, method: &'a str, mode: &'a str) -> impl Iterator<Item = &'a EvalRow> + 'a {
        self.rows.iter().filter(move |r| r.method == method && r.mode == mode)
    }

    pub fn summary_for(&self, method: &str, mode: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.method == method && s.mode == mode)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn summarize(rows: &[EvalRow]) -> Result<Vec<SummaryRow>> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in rows.iter().filter(|r| r.method != RANDOM) {
        let k = (r.method.clone(), r.mode.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut out = Vec::new();
    for (method, mode) in keys {
        let baseline: BTreeMap<usize, &EvalRow> = rows
            .iter()
            .filter(|r| r.method == RANDOM && r.mode == mode)
            .map(|r| (r.pair, r))
            .collect();
        let mine: Vec<&EvalRow> = rows.iter().filter(|r| r.method == method && r.mode == mode).collect();
        let paired: Vec<(&EvalRow, &EvalRow)> = mine
            .iter()
            .filter_map(|r| baseline.get(&r.pair).map(|b| (*r, *b)))
            .collect();
        let a: Vec<f64> = paired.iter().filter_map(|(r, _)| r.score()).collect();
        let b: Vec<f64> = paired.iter().filter_map(|(_, b)| b.score()).collect();
        let ma: Vec<f64> = mine.iter().filter_map(|r| r.miou).collect();
        let mb: Vec<f64> = paired.iter().filter_map(|(_, b)| b.miou).collect();
        let wins = a.iter().zip(&b).filter(|(x, y)| x > y).count();
        out.push(SummaryRow {
            method,
            mode,
            pairs: mine.len(),
            mean_score: mean(&mine.iter().filter_map(|r| r.score()).collect::<Vec<_>>()),
            mean_random: mean(&b),
            mean_miou: (!ma.is_empty()).then(|| mean(&ma)),
            mean_random_miou: (!mb.is_empty()).then(|| mean(&mb)),
            win_rate: if a.is_empty() {
                0.0
            } else {
                wins as f64 / a.len() as f64
            },
            test: if a.len() >= 2 && a.len() == b.len() {
                Some(paired_t_test(&a, &b)?)
            } else {
                None
            },
            mean_evals: mean(&mine.iter().map(|r| r.evals as f64).collect::<Vec<_>>()),
            mean_wall_ms: mean(&mine.iter().map(|r| r.wall_ms).collect::<Vec<_>>()),
        });
    }
    Ok(out)
}

fn method_seed(config: &EvalConfig, pair: usize, method: Method, mode: u64) -> u64 {
    derive_seed(config.seed, &[pair as u64, method.index(), mode])
}

fn marginal_rows(engine: &SimilarityEngine, pair: &EvalPair, config: &EvalConfig) -> Result<Vec<EvalRow>> {
    let bg = config.settings.background;
    let (q, r) = (&pair.query, &pair.retrieved);
    let mut rows = Vec::new();
    for &method in &config.methods {
        let seed = method_seed(config, pair.index, method, 0);
        let e = explain_marginal(method, engine, q, r, Side::Query, &config.settings, seed)?;
        let attention = e.attention()?;
        let mut row = EvalRow::new(method.as_str(), MARGINAL, pair.index, e.seed);
        row.delta_d = Some(marginal_censor_eval(engine, q, r, &attention, config.fraction, bg)?);
        row.evals = e.evaluations;
        row.wall_ms = e.wall_ms;
        row.flags = e.flags;
        if attention.is_constant() {
            row.flags.push(FLAG_CONSTANT_ATTENTION.into());
        }
        rows.push(row);
    }
    let base = derive_seed(config.seed, &[pair.index as u64, u64::MAX]);
    let mut row = EvalRow::new(RANDOM, MARGINAL, pair.index, base);
    let draws = (0..config.random_seeds as u64)
        .map(|s| {
            let att = random_attention(q.width(), q.height(), derive_seed(base, &[s]));
            marginal_censor_eval(engine, q, r, &att, config.fraction, bg)
        })
        .collect::<Result<Vec<f64>>>()?;
    row.delta_d = Some(mean(&draws));
    rows.push(row);
    let mut row = EvalRow::new(ORACLE, MARGINAL, pair.index, 0);
    let oracle = AttentionMap::from_mask(&pair.shared_query_mask());
    row.delta_d = Some(marginal_censor_eval(engine, q, r, &oracle, config.fraction, bg)?);
    rows.push(row);
    Ok(rows)
}

fn joint_rows(
    engine: &SimilarityEngine,
    pair: &EvalPair,
    methods: &[Method],
    config: &EvalConfig,
    baselines: bool,
) -> Result<Vec<EvalRow>> {
    let bg = config.settings.background;
    let class = pair.joint_class().to_string();
    let mut rows = Vec::new();
    let push_outcome = |row: &mut EvalRow, o: JointOutcome| {
        row.class = class.clone();
        row.sim_censored = Some(o.sim_censored);
        row.miou = Some(o.miou);
        if o.vacuous {
            row.flags.push(FLAG_VACUOUS_IOU.into());
        }
    };
    for &method in methods {
        let seed = method_seed(config, pair.index, method, 1);
        let e = explain_joint(method, engine, &pair.query, &pair.retrieved, &config.settings, seed)?;
        let (outcome, degenerate) = joint_censor_eval(engine, &e, pair, &class, bg)?;
        let mut row = EvalRow::new(method.as_str(), JOINT, pair.index, e.seed);
        row.evals = e.evaluations;
        row.wall_ms = e.wall_ms;
        row.flags = e.flags;
        if degenerate {
            row.flags.push(FLAG_DEGENERATE_PROJECTION.into());
        }
        push_outcome(&mut row, outcome);
        rows.push(row);
    }
    if !baselines {
        return Ok(rows);
    }
    let (w, h) = (pair.retrieved.width(), pair.retrieved.height());
    let base = derive_seed(config.seed, &[pair.index as u64, u64::MAX - 1]);
    let draws = (0..config.random_seeds as u64)
        .map(|s| {
            censored_projection_eval(
                engine,
                pair,
                &class,
                &random_attention(w, h, derive_seed(base, &[s])),
                bg,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut row = EvalRow::new(RANDOM, JOINT, pair.index, base);
    push_outcome(
        &mut row,
        JointOutcome {
            sim_censored: mean(&draws.iter().map(|o| o.sim_censored).collect::<Vec<_>>()),
            miou: mean(&draws.iter().map(|o| o.miou).collect::<Vec<_>>()),
            vacuous: draws.iter().any(|o| o.vacuous),
        },
    );
    rows.push(row);
    let (_, rm) = class_masks(pair, &class)?;
    let mut row = EvalRow::new(ORACLE, JOINT, pair.index, 0);
    push_outcome(
        &mut row,
        censored_projection_eval(engine, pair, &class, &AttentionMap::from_mask(rm), bg)?,
    );
    rows.push(row);
    Ok(rows)
}

fn check_eval_config(config: &EvalConfig) -> Result<()> {
    if config.methods.is_empty() {
        return Err(Error::Config("no methods to evaluate".into()));
    }
    if config.random_seeds == 0 {
        return Err(Error::Config("random baseline needs at least one seed".into()));
    }
    if !(config.fraction > 0.0 && config.fraction <= 1.0) {
        return Err(Error::Config(format!(
            "censor fraction must lie in (0, 1], got {}",
            config.fraction
        )));
    }
    Ok(())
}

/// Marginal and joint rows for every method and pair, plus random and oracle
/// baselines. Pairs run concurrently; rows are ordered by pair then mode.
pub fn evaluate(engine: &SimilarityEngine, pairs: &[EvalPair], config: &EvalConfig) -> Result<EvalReport> {
    check_eval_config(config)?;
    if pairs.is_empty() {
        return Err(Error::Argument("dataset is empty".into()));
    }
    let per_pair = pairs
        .par_iter()
        .map(|p| {
            let mut rows = marginal_rows(engine, p, config)?;
            rows.extend(joint_rows(engine, p, &config.methods, config, true)?);
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_rows(per_pair.into_iter().flatten().collect())
}

/// Joint-mode run recording time and evaluation counts per method and pair,
/// checking that SAM uses two backbone calls and sampling methods use at
/// least their budget.
pub fn timing_benchmark(
    engine: &SimilarityEngine,
    methods: &[Method],
    pairs: &[EvalPair],
    config: &EvalConfig,
) -> Result<EvalReport> {
    if pairs.is_empty() || methods.is_empty() {
        return Err(Error::Argument("timing needs at least one method and one pair".into()));
    }
    let rows: Vec<EvalRow> = pairs
        .iter()
        .map(|p| joint_rows(engine, p, methods, config, false))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    for r in &rows {
        let want = match Method::parse(&r.method)? {
            Method::Sam => Some(2),
            Method::Lime | Method::KernelShap => Some(config.settings.joint_samples),
            Method::Sbsm => None,
        };
        let ok = match want {
            Some(2) => r.evals == 2,
            Some(b) => r.evals >= b,
            None => r.evals > config.settings.sbsm.samples,
        };
        if !ok {
            return Err(Error::Estimation(format!(
                "{} used {} evaluations on pair {}",
                r.method, r.evals, r.pair
            )));
        }
    }
    EvalReport::from_rows(rows)
}

/// Writes `report.csv` and `report.json` into `dir`.
pub fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_atomic(&dir.join("report.csv"), report.to_csv().as_bytes())?;
    write_atomic(&dir.join("report.json"), report.to_json()?.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn engine() -> SimilarityEngine {
        SimilarityEngine::new(BackboneSpec::default()).unwrap()
    }

    fn small_dataset() -> Vec<EvalPair> {
        synthetic_pair_dataset(3, 5, &DatasetConfig::default()).unwrap()
    }

    #[test]
    fn dataset_invariants_hold() {
        let pairs = synthetic_pair_dataset(50, 0, &DatasetConfig::default()).unwrap();
        assert_eq!(pairs.len(), 50);
        for p in &pairs {
            p.validate().unwrap();
            assert!(!p.shared.is_empty());
            let (a, b) = (&p.query_masks[&p.shared[0]], &p.retrieved_masks[&p.shared[0]]);
            assert!(a.count() >= 52 && b.count() >= 52);
        }
        assert_eq!(pairs, synthetic_pair_dataset(50, 0, &DatasetConfig::default()).unwrap());
        assert_ne!(
            pairs[0],
            synthetic_pair_dataset(1, 1, &DatasetConfig::default()).unwrap()[0]
        );
        assert_eq!(
            synthetic_pair_dataset(1, 9, &DatasetConfig::default()).unwrap().len(),
            1
        );
        assert!(synthetic_pair_dataset(0, 0, &DatasetConfig::default()).is_err());
    }

    #[test]
    fn miou_counts() {
        let m = |bits: &[u8]| Mask::from_bits(4, 2, bits.iter().map(|&b| b == 1).collect()).unwrap();
        let a = m(&[1, 1, 1, 0, 0, 0, 0, 0]);
        assert_eq!(miou(&a, &a).unwrap(), (1.0, false));
        assert_eq!(miou(&a, &m(&[0, 0, 0, 1, 1, 0, 0, 0])).unwrap().0, 0.0);
        let (v, _) = miou(&m(&[1, 1, 1, 1, 0, 0, 0, 0]), &m(&[0, 0, 1, 1, 1, 1, 0, 0])).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(miou(&m(&[0; 8]), &m(&[0; 8])).unwrap(), (1.0, true));
        assert!(miou(&a, &Mask::empty(2, 4)).is_err());
    }

    #[test]
    fn censor_eval_plumbing() {
        let e = engine();
        let p = &small_dataset()[0];
        let ones = AttentionMap::uniform(32, 32);
        let dd = marginal_censor_eval(&e, &p.query, &p.retrieved, &ones, 0.2, MID_GRAY).unwrap();
        let censored = censor_top_fraction(&p.query, &ones, 0.2, MID_GRAY).unwrap();
        let want = e.similarity_images(&p.query, &p.retrieved).unwrap()
            - e.similarity_images(&censored, &p.retrieved).unwrap();
        assert_eq!(dd, want);
        assert!(marginal_censor_eval(&e, &p.query, &p.retrieved, &ones, 0.0, MID_GRAY).is_err());
    }

    #[test]
    fn oracle_projection_is_perfect() {
        let e = engine();
        for p in &small_dataset() {
            let class = p.joint_class();
            let rm = &p.retrieved_masks[class];
            let o = censored_projection_eval(&e, p, class, &AttentionMap::from_mask(rm), MID_GRAY).unwrap();
            assert_eq!(o.miou, 1.0);
        }
    }

    #[test]
    fn identity_pair_sam_projection() {
        let e = engine();
        let mut p = small_dataset()[1].clone();
        p.retrieved = p.query.clone();
        p.retrieved_masks = p.query_masks.clone();
        p.shared = p.query_masks.keys().cloned().collect();
        let class = p.joint_class().to_string();
        let j = sam_joint(e.backbone(), &p.query, &p.retrieved).unwrap();
        let (o, degenerate) = joint_censor_eval(&e, &j, &p, &class, MID_GRAY).unwrap();
        assert!(!degenerate);
        let qm = &p.query_masks[&class];
        let masked = censor_outside(&p.query, qm, MID_GRAY).unwrap();
        let self_sim = e.similarity_images(&masked, &masked).unwrap();
        assert!(
            (o.sim_censored - self_sim).abs() <= 0.1,
            "{} vs {self_sim}",
            o.sim_censored
        );
        let pred = j
            .project(&AttentionMap::from_mask(qm))
            .unwrap()
            .attention
            .top_mask(qm.count());
        let cells_of = |m: &Mask| -> std::collections::BTreeSet<usize> {
            (0..m.bits().len())
                .filter(|&i| m.get(i))
                .map(|i| (i / 32 / 4) * 8 + (i % 32) / 4)
                .collect()
        };
        assert!(cells_of(&pred).is_subset(&cells_of(qm)));
    }

    #[test]
    fn paired_test_direction() {
        let a = [1.0, 2.0, 3.0, 4.5];
        let b = [0.5, 1.0, 2.0, 3.0];
        let t = paired_t_test(&a, &b).unwrap();
        assert!(t.mean_difference > 0.0 && t.p_value < 0.05);
        let back = paired_t_test(&b, &a).unwrap();
        assert!(back.p_value > 0.95);
        assert_eq!(paired_t_test(&a, &a).unwrap().p_value, 1.0);
        assert!(paired_t_test(&a[..1], &b[..1]).is_err());
    }

    #[test]
    fn report_rows_and_determinism() {
        let e = engine();
        let pairs = small_dataset();
        let config = EvalConfig {
            methods: vec![Method::Sam, Method::Sbsm],
            random_seeds: 2,
            ..Default::default()
        };
        let report = evaluate(&e, &pairs, &config).unwrap();
        assert_eq!(report.rows_for("sam", MARGINAL).count(), 3);
        assert_eq!(report.rows_for(RANDOM, JOINT).count(), 3);
        assert!(report.rows_for(ORACLE, JOINT).all(|r| r.miou == Some(1.0)));
        let strip = |r: &EvalReport| -> Vec<EvalRow> {
            r.rows
                .iter()
                .cloned()
                .map(|mut x| {
                    x.wall_ms = 0.0;
                    x
                })
                .collect()
        };
        assert_eq!(strip(&report), strip(&evaluate(&e, &pairs, &config).unwrap()));
        let csv = report.to_csv();
        assert!(csv.starts_with(CSV_HEADER));
        assert_eq!(csv.lines().count(), 1 + report.rows.len());
    }

    #[test]
    fn timing_counts() {
        let e = engine();
        let pairs = &small_dataset()[..1];
        let mut config = EvalConfig::default();
        config.settings.joint_samples = 300;
        let t = timing_benchmark(&e, &[Method::Sam, Method::Lime], pairs, &config).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[0].evals, 2);
        assert_eq!(t.rows[1].evals, 300);
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = small_dataset();
        write_dataset(dir.path(), &pairs).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), pairs.len());
        for (a, b) in pairs.iter().zip(&back) {
            assert_eq!(
                (a.index, &a.shared, &a.query_masks),
                (b.index, &b.shared, &b.query_masks)
            );
            assert!(a
                .query
                .raw()
                .iter()
                .zip(b.query.raw())
                .all(|(x, y)| (x - y).abs() <= 0.5 / 255.0 + 1e-6));
        }
        assert!(read_dataset(&dir.path().join("missing")).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.as_str()).unwrap(), m);
        }
        assert_eq!(Method::parse("gradcam").unwrap_err().kind(), "config");
    }
}
