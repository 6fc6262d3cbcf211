//! Superpixel segmentations, toggle perturbations and attention-driven censoring.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::Coalition;
use crate::image::{Image, Mask, Rgb};

/// Per-pixel region labels `0..m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    width: usize,
    height: usize,
    m: usize,
    labels: Vec<u32>,
    grid: Option<[usize; 2]>,
}

impl Segmentation {
    pub fn from_labels(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != width * height || labels.is_empty() {
            return Err(Error::Argument(format!(
                "{width}x{height} segmentation needs {} labels, got {}",
                width * height,
                labels.len()
            )));
        }
        let m = *labels.iter().max().unwrap() as usize + 1;
        let mut seen = vec![false; m];
        labels.iter().for_each(|&l| seen[l as usize] = true);
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Argument(format!("superpixel {missing} of {m} has no pixels")));
        }
        Ok(Segmentation {
            width,
            height,
            m,
            labels,
            grid: None,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn label(&self, pixel: usize) -> usize {
        self.labels[pixel] as usize
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// `[rows, cols]` for grid tilings.
    pub fn grid(&self) -> Option<[usize; 2]> {
        self.grid
    }

    pub fn region_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.m];
        self.labels.iter().for_each(|&l| sizes[l as usize] += 1);
        sizes
    }

    pub fn matches(&self, image: &Image) -> bool {
        self.width == image.width() && self.height == image.height()
    }

    /// Paints every pixel with its region's weight.
    pub fn expand(&self, weights: &[f64]) -> Result<AttentionMap> {
        if weights.len() != self.m {
            return Err(Error::Argument(format!(
                "{} weights for {} superpixels",
                weights.len(),
                self.m
            )));
        }
        AttentionMap::new(
            self.width,
            self.height,
            self.labels.iter().map(|&l| weights[l as usize]).collect(),
        )
    }

    /// Mean pixel attention inside each region.
    pub fn region_means(&self, attention: &AttentionMap) -> Result<Vec<f64>> {
        if attention.width != self.width || attention.height != self.height {
            return Err(Error::Argument(format!(
                "attention {}x{} does not match segmentation {}x{}",
                attention.width, attention.height, self.width, self.height
            )));
        }
        let mut sum = vec![0.0; self.m];
        for (&l, &a) in self.labels.iter().zip(&attention.values) {
            sum[l as usize] += a;
        }
        Ok(sum
            .into_iter()
            .zip(self.region_sizes())
            .map(|(s, c)| s / c as f64)
            .collect())
    }

    /// Label image as binary PGM; 16-bit when there are more than 256 regions.
    pub fn write_pgm<W: Write>(&self, mut out: W) -> Result<()> {
        if self.m <= 256 {
            write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
            out.write_all(&self.labels.iter().map(|&l| l as u8).collect::<Vec<u8>>())?;
        } else {
            write!(out, "P5\n{} {}\n65535\n", self.width, self.height)?;
            let bytes: Vec<u8> = self.labels.iter().flat_map(|&l| (l as u16).to_be_bytes()).collect();
            out.write_all(&bytes)?;
        }
        Ok(())
    }
}

/// Rectangular tiling; the last row and column absorb any remainder.
pub fn grid_segmentation(width: usize, height: usize, rows: usize, cols: usize) -> Result<Segmentation> {
    if rows == 0 || cols == 0 {
        return Err(Error::Argument(format!(
            "grid {rows}x{cols} needs at least one row and column"
        )));
    }
    if rows > height || cols > width {
        return Err(Error::Argument(format!(
            "grid {rows}x{cols} does not fit a {width}x{height} image"
        )));
    }
    let (th, tw) = (height / rows, width / cols);
    let mut labels = Vec::with_capacity(width * height);
    for y in 0..height {
        let r = (y / th).min(rows - 1);
        for x in 0..width {
            let c = (x / tw).min(cols - 1);
            labels.push((r * cols + c) as u32);
        }
    }
    Ok(Segmentation {
        width,
        height,
        m: rows * cols,
        labels,
        grid: Some([rows, cols]),
    })
}

pub fn grid_superpixels(image: &Image, rows: usize, cols: usize) -> Result<Segmentation> {
    grid_segmentation(image.width(), image.height(), rows, cols)
}

/// Keep/censor flags per superpixel, serialized as a bitstring such as `"1011"`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct ToggleVector {
    bits: Vec<bool>,
}

impl ToggleVector {
    pub fn all(m: usize, on: bool) -> Self {
        ToggleVector { bits: vec![on; m] }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        ToggleVector { bits }
    }

    pub fn from_coalition(c: Coalition, m: usize) -> Self {
        ToggleVector {
            bits: (0..m).map(|i| c.contains(i)).collect(),
        }
    }

    pub fn to_coalition(&self) -> Coalition {
        Coalition::from_members(self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i))
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn kept(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

impl From<ToggleVector> for String {
    fn from(t: ToggleVector) -> String {
        t.bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }
}

impl TryFrom<String> for ToggleVector {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '1' => Ok(true),
                '0' => Ok(false),
                other => Err(Error::Format(format!("toggle bitstring contains {other:?}"))),
            })
            .collect::<Result<Vec<bool>>>()
            .map(ToggleVector::from_bits)
    }
}

/// Replaces every pixel of a toggled-off superpixel with `background`.
pub fn apply_toggles(image: &Image, seg: &Segmentation, t: &ToggleVector, background: Rgb) -> Result<Image> {
    if !seg.matches(image) {
        return Err(Error::Argument(format!(
            "segmentation {}x{} does not match image {}x{}",
            seg.width,
            seg.height,
            image.width(),
            image.height()
        )));
    }
    if t.len() != seg.m {
        return Err(Error::Argument(format!(
            "{} toggles for {} superpixels",
            t.len(),
            seg.m
        )));
    }
    let mut out = image.clone();
    for (p, &l) in seg.labels.iter().enumerate() {
        if !t.bits[l as usize] {
            out.set_pixel_at(p, background);
        }
    }
    Ok(out)
}

/// Finite per-pixel weights. Signs are allowed; only order matters for censoring.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl AttentionMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Argument(format!(
                "{width}x{height} attention needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("attention value {v}")));
        }
        Ok(AttentionMap { width, height, values })
    }

    pub fn uniform(width: usize, height: usize) -> Self {
        AttentionMap {
            width,
            height,
            values: vec![1.0; width * height],
        }
    }

    pub fn from_mask(mask: &Mask) -> Self {
        AttentionMap {
            width: mask.width(),
            height: mask.height(),
            values: mask.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// True when every pixel carries the same weight.
    pub fn is_constant(&self) -> bool {
        self.values.windows(2).all(|w| w[0] == w[1])
    }

    /// Pixel indices from most to least important; ties keep row-major order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.values.len()).collect();
        idx.sort_by(|&a, &b| self.values[b].total_cmp(&self.values[a]));
        idx
    }

    /// Mask of the `k` highest-ranked pixels.
    pub fn top_mask(&self, k: usize) -> Mask {
        let mut mask = Mask::empty(self.width, self.height);
        for p in self.ranking().into_iter().take(k) {
            mask.set(p, true);
        }
        mask
    }
}

fn check_attention(image: &Image, attention: &AttentionMap) -> Result<()> {
    if image.width() != attention.width || image.height() != attention.height {
        return Err(Error::Argument(format!(
            "attention {}x{} does not match image {}x{}",
            attention.width,
            attention.height,
            image.width(),
            image.height()
        )));
    }
    Ok(())
}

/// Pixels censored by [`censor_top_fraction`]: `⌈fraction · pixels⌉`.
pub fn censor_count(pixels: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Argument(format!("censor fraction {fraction} outside (0, 1]")));
    }
    Ok(((fraction * pixels as f64) - 1e-9).ceil().max(0.0) as usize)
}

fn paint(image: &Image, mask: &Mask, on: bool, background: Rgb) -> Image {
    let mut out = image.clone();
    for p in 0..image.pixel_count() {
        if mask.get(p) == on {
            out.set_pixel_at(p, background);
        }
    }
    out
}

/// Replaces the top `⌈fraction · pixels⌉` pixels with `background`.
pub fn censor_top_fraction(image: &Image, attention: &AttentionMap, fraction: f64, background: Rgb) -> Result<Image> {
    check_attention(image, attention)?;
    let k = censor_count(image.pixel_count(), fraction)?;
    Ok(paint(image, &attention.top_mask(k), true, background))
}

/// Keeps the top `p` pixels and replaces the rest with `background`.
pub fn censor_all_but_top(image: &Image, attention: &AttentionMap, p: usize, background: Rgb) -> Result<Image> {
    check_attention(image, attention)?;
    if p > image.pixel_count() {
        return Err(Error::Argument(format!(
            "keep count {p} exceeds {} pixels",
            image.pixel_count()
        )));
    }
    Ok(paint(image, &attention.top_mask(p), false, background))
}

/// Keeps only the pixels of `mask`.
pub fn censor_outside(image: &Image, mask: &Mask, background: Rgb) -> Result<Image> {
    if image.width() != mask.width() || image.height() != mask.height() {
        return Err(Error::Argument("mask does not match image".into()));
    }
    Ok(paint(image, mask, false, background))
}
