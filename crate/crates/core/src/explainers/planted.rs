//! Engines with a known similarity function, for checking that explainers
//! recover what was planted.

use rand::Rng as _;

use crate::engine::SearchEngine;
use crate::error::{Error, Result};
use crate::image::{Image, MID_GRAY};
use crate::rng::seeded;
use crate::transport::DenseInteraction;

/// 32×32 image whose `rows × cols` grid tiles each carry a distinct non-gray color.
pub fn tile_image(rows: usize, cols: usize, seed: u64) -> Image {
    let mut rng = seeded(seed);
    let (th, tw) = (32 / rows, 32 / cols);
    let colors: Vec<[f32; 3]> = (0..rows * cols)
        .map(|k| {
            let hi = if k % 2 == 0 { 0.9 } else { 0.1 };
            [hi, rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]
        })
        .collect();
    let mut img = Image::filled(32, 32, MID_GRAY).expect("32x32 is a valid size");
    for y in 0..32 {
        for x in 0..32 {
            let t = (y / th).min(rows - 1) * cols + (x / tw).min(cols - 1);
            img.set_pixel_at(y * 32 + x, colors[t]);
        }
    }
    img
}

/// Similarity `c + Σ a_q s_q + Σ b_r s_r + Σ A_qr s_q s_r` over which grid
/// tiles of each image are still uncensored. Identity link.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedEngine {
    pub rows: usize,
    pub cols: usize,
    pub constant: f64,
    pub query: Vec<f64>,
    pub retrieved: Vec<f64>,
    pub cross: DenseInteraction,
}

impl PlantedEngine {
    fn grid_for(m: usize) -> (usize, usize) {
        match m {
            4 => (2, 2),
            8 => (2, 4),
            16 => (4, 4),
            _ => (1, m),
        }
    }

    pub fn additive(query: Vec<f64>, retrieved: Vec<f64>) -> Self {
        let (rows, cols) = Self::grid_for(query.len());
        let (mq, mr) = (query.len(), retrieved.len());
        PlantedEngine {
            rows,
            cols,
            constant: 0.125,
            query,
            retrieved,
            cross: DenseInteraction::zeros(mq, mr),
        }
    }

    pub fn bilinear(cross: DenseInteraction) -> Self {
        let (rows, cols) = Self::grid_for(cross.rows);
        PlantedEngine {
            rows,
            cols,
            constant: 0.125,
            query: vec![0.0; cross.rows],
            retrieved: vec![0.0; cross.cols],
            cross,
        }
    }

    fn tiles(&self, image: &Image) -> Vec<bool> {
        let (th, tw) = (image.height() / self.rows, image.width() / self.cols);
        (0..self.rows * self.cols)
            .map(|t| {
                let (y, x) = ((t / self.cols) * th + th / 2, (t % self.cols) * tw + tw / 2);
                image.pixel(x, y) != MID_GRAY
            })
            .collect()
    }
}

impl SearchEngine for PlantedEngine {
    type Embedding = Vec<bool>;

    fn embed(&self, image: &Image) -> Result<Vec<bool>> {
        Ok(self.tiles(image))
    }

    fn similarity(&self, q: &Vec<bool>, r: &Vec<bool>) -> Result<f64> {
        if q.len() != self.query.len() || r.len() != self.retrieved.len() {
            return Err(Error::Argument("planted engine grid mismatch".into()));
        }
        let mut v = self.constant;
        for (i, _) in q.iter().enumerate().filter(|(_, &on)| on) {
            v += self.query[i];
            for (j, _) in r.iter().enumerate().filter(|(_, &on)| on) {
                v += self.cross.get(i, j);
            }
        }
        for (j, _) in r.iter().enumerate().filter(|(_, &on)| on) {
            v += self.retrieved[j];
        }
        Ok(v)
    }

    fn link(&self, d: f64) -> Result<f64> {
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturb::{apply_toggles, grid_superpixels, ToggleVector};

    #[test]
    fn planted_value_tracks_toggles() {
        let mut a = DenseInteraction::zeros(4, 4);
        a.set(1, 2, 3.0);
        let e = PlantedEngine::bilinear(a);
        let q = tile_image(2, 2, 0);
        let seg = grid_superpixels(&q, 2, 2).unwrap();
        let full = e.similarity(&e.embed(&q).unwrap(), &e.embed(&q).unwrap()).unwrap();
        assert_eq!(full, 3.125);
        let t = ToggleVector::from_bits(vec![true, false, true, true]);
        let off = apply_toggles(&q, &seg, &t, MID_GRAY).unwrap();
        assert_eq!(
            e.similarity(&e.embed(&off).unwrap(), &e.embed(&q).unwrap()).unwrap(),
            0.125
        );
    }
}
