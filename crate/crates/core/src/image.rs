//! RGB images, binary masks, synthetic scene rendering and PPM/PGM I/O.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

pub type Rgb = [f32; 3];

/// Censoring and background color shared by every perturbation.
pub const MID_GRAY: Rgb = [0.5, 0.5, 0.5];

/// Smallest accepted image side.
pub const MIN_SIDE: usize = 8;

/// Row-major interleaved RGB image with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn filled(width: usize, height: usize, color: Rgb) -> Result<Self> {
        check_dims(width, height)?;
        check_color(color)?;
        let data = std::iter::repeat_n(color, width * height).flatten().collect();
        Ok(Image { width, height, data })
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height * 3 {
            return Err(Error::Argument(format!(
                "{}x{} RGB image needs {} values, got {}",
                width,
                height,
                width * height * 3,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Argument(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Image { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn raw(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> Rgb {
        let o = (y * self.width + x) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn pixel_at(&self, index: usize) -> Rgb {
        let o = index * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn set_pixel_at(&mut self, index: usize, color: Rgb) {
        self.data[index * 3..index * 3 + 3].copy_from_slice(&color);
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Binary PPM (P6, maxval 255).
    pub fn write_ppm<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "P6\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.data.iter().map(|&v| to_byte(v)).collect();
        out.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_ppm<R: Read>(input: R) -> Result<Self> {
        let mut r = BufReader::new(input);
        let (magic, width, height, maxval) = read_header(&mut r)?;
        if magic != "P6" {
            return Err(Error::Format(format!("expected P6 image, found {magic}")));
        }
        if maxval != 255 {
            return Err(Error::Format(format!("only 8-bit PPM is supported, maxval {maxval}")));
        }
        let mut bytes = vec![0u8; width * height * 3];
        r.read_exact(&mut bytes)?;
        Image::from_raw(width, height, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }

    pub fn save_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_ppm(&mut buf)?;
        crate::record::write_atomic(path.as_ref(), &buf)
    }

    pub fn load_ppm(path: impl AsRef<Path>) -> Result<Self> {
        Image::read_ppm(std::fs::File::open(path)?)
    }
}

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width < MIN_SIDE || height < MIN_SIDE {
        return Err(Error::Argument(format!(
            "image {width}x{height} is smaller than the {MIN_SIDE}x{MIN_SIDE} minimum"
        )));
    }
    Ok(())
}

fn check_color(c: Rgb) -> Result<()> {
    if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Argument(format!("color {c:?} outside [0, 1]")));
    }
    Ok(())
}

fn read_token<R: BufRead>(r: &mut R) -> Result<String> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            break;
        }
        let c = byte[0] as char;
        if c == '#' && tok.is_empty() {
            let mut skip = String::new();
            r.read_line(&mut skip)?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(c);
    }
    if tok.is_empty() {
        return Err(Error::Format("truncated PNM header".into()));
    }
    Ok(tok)
}

fn read_header<R: BufRead>(r: &mut R) -> Result<(String, usize, usize, usize)> {
    let magic = read_token(r)?;
    let mut num = || -> Result<usize> {
        let t = read_token(r)?;
        t.parse()
            .map_err(|_| Error::Format(format!("bad PNM header field {t:?}")))
    };
    let (w, h, m) = (num()?, num()?, num()?);
    Ok((magic, w, h, m))
}

/// Binary per-pixel mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::Argument(format!(
                "{width}x{height} mask needs {} bits, got {}",
                width * height,
                bits.len()
            )));
        }
        Ok(Mask { width, height, bits })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, index: usize) -> bool {
        self.bits[index]
    }

    pub fn set(&mut self, index: usize, on: bool) {
        self.bits[index] = on;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Binary PGM (P5) with 255 for set pixels.
    pub fn write_pgm<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        out.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_pgm<R: Read>(input: R) -> Result<Self> {
        let mut r = BufReader::new(input);
        let (magic, width, height, maxval) = read_header(&mut r)?;
        if magic != "P5" || maxval > 255 {
            return Err(Error::Format(format!(
                "expected 8-bit P5 mask, found {magic} maxval {maxval}"
            )));
        }
        let mut bytes = vec![0u8; width * height];
        r.read_exact(&mut bytes)?;
        Mask::from_bits(width, height, bytes.iter().map(|&b| b > 127).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    /// Axis-aligned rectangle with top-left corner `(x, y)`.
    Rect { x: usize, y: usize, w: usize, h: usize },
    /// Disc of radius `r` around `(cx, cy)`, covering pixel centers within `r`.
    Circle { cx: f64, cy: f64, r: f64 },
}

impl Shape {
    fn contains(&self, px: usize, py: usize) -> bool {
        match *self {
            Shape::Rect { x, y, w, h } => px >= x && px < x + w && py >= y && py < y + h,
            Shape::Circle { cx, cy, r } => {
                let dx = px as f64 + 0.5 - cx;
                let dy = py as f64 + 0.5 - cy;
                dx * dx + dy * dy <= r * r
            }
        }
    }

    fn fits(&self, width: usize, height: usize) -> bool {
        match *self {
            Shape::Rect { x, y, w, h } => w > 0 && h > 0 && x + w <= width && y + h <= height,
            Shape::Circle { cx, cy, r } => {
                r > 0.0 && cx - r >= 0.0 && cy - r >= 0.0 && cx + r <= width as f64 && cy + r <= height as f64
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeSpec {
    pub shape: Shape,
    pub color: Rgb,
}

/// Canvas description for [`generate_synthetic_image`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub background: Rgb,
    /// Amplitude of seeded uniform pixel noise added to the whole canvas.
    #[serde(default)]
    pub noise: f32,
    pub shapes: Vec<ShapeSpec>,
}

impl SceneSpec {
    pub fn blank(width: usize, height: usize) -> Self {
        SceneSpec {
            width,
            height,
            background: MID_GRAY,
            noise: 0.0,
            shapes: Vec::new(),
        }
    }
}

/// Paints shapes in order over the background and returns one mask per
/// shape holding the pixels where that shape is visible.
pub fn generate_synthetic_image(scene: &SceneSpec, seed: u64) -> Result<(Image, Vec<Mask>)> {
    let (w, h) = (scene.width, scene.height);
    let mut img = Image::filled(w, h, scene.background)?;
    if !(0.0..=0.5).contains(&scene.noise) {
        return Err(Error::Argument(format!(
            "noise amplitude {} outside [0, 0.5]",
            scene.noise
        )));
    }
    let mut owner: Vec<Option<usize>> = vec![None; w * h];
    for (k, s) in scene.shapes.iter().enumerate() {
        if !s.shape.fits(w, h) {
            return Err(Error::Argument(format!(
                "shape {k} ({:?}) leaves the {w}x{h} canvas",
                s.shape
            )));
        }
        check_color(s.color)?;
        for y in 0..h {
            for x in 0..w {
                if s.shape.contains(x, y) {
                    owner[y * w + x] = Some(k);
                    img.set_pixel_at(y * w + x, s.color);
                }
            }
        }
    }
    if scene.noise > 0.0 {
        let mut rng = seeded(seed);
        for v in img.data.iter_mut() {
            let e: f32 = rng.gen_range(-scene.noise..=scene.noise);
            *v = (*v + e).clamp(0.0, 1.0);
        }
    }
    let masks = (0..scene.shapes.len())
        .map(|k| Mask {
            width: w,
            height: h,
            bits: owner.iter().map(|o| *o == Some(k)).collect(),
        })
        .collect();
    Ok((img, masks))
}

/// Uniform noise image, handy for fixtures.
pub fn noise_image(width: usize, height: usize, seed: u64) -> Result<Image> {
    check_dims(width, height)?;
    let mut rng = seeded(seed);
    let data = (0..width * height * 3).map(|_| rng.gen_range(0.0f32..=1.0)).collect();
    Image::from_raw(width, height, data)
}

/// Blends a blue-to-red rendering of per-pixel `weights` over `image`.
/// Weights are min-max scaled; a constant map renders as mid-scale.
pub fn heatmap_overlay(image: &Image, weights: &[f64], alpha: f32) -> Result<Image> {
    if weights.len() != image.pixel_count() {
        return Err(Error::Argument(format!(
            "{} weights for {} pixels",
            weights.len(),
            image.pixel_count()
        )));
    }
    let (lo, hi) = weights
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = image.clone();
    for (i, &wv) in weights.iter().enumerate() {
        let t = if hi > lo && wv.is_finite() {
            ((wv - lo) / span) as f32
        } else {
            0.5
        };
        let heat = [t, 1.0 - (2.0 * t - 1.0).abs(), 1.0 - t];
        let p = image.pixel_at(i);
        let mixed = [0, 1, 2].map(|c| ((1.0 - alpha) * p[c] + alpha * heat[c]).clamp(0.0, 1.0));
        out.set_pixel_at(i, mixed);
    }
    Ok(out)
}
