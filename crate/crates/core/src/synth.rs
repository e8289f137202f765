//! Synthetic scenes: rectangular roofs on a textured background.
//!
//! Buildings sit in distinct cells of a square grid so they never overlap,
//! which keeps the expected foreground fraction in closed form.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{rasterize_polygons, Polygon, RasterScene};
use crate::trainer::derive_seed;
use crate::{Error, Result};

const STREAM_SYNTH: u64 = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSceneSpec {
    /// Scenes are `size x size`.
    pub size: usize,
    /// Inclusive range of buildings per scene.
    pub min_buildings: usize,
    pub max_buildings: usize,
    /// Inclusive range of rectangle side lengths in pixels.
    pub min_side: usize,
    pub max_side: usize,
    pub rotation: bool,
    /// Standard deviation of per-pixel texture noise, in 8-bit levels.
    pub noise: f64,
    /// Roof-toned non-building structures (roads, bare patches) per scene.
    pub clutter: usize,
    pub seed: u64,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        Self {
            size: 64,
            min_buildings: 3,
            max_buildings: 6,
            min_side: 10,
            max_side: 18,
            rotation: false,
            noise: 18.0,
            clutter: 3,
            seed: 0,
        }
    }
}

impl SyntheticSceneSpec {
    /// Cells per grid side: the smallest square grid with a cell per building.
    pub fn grid(&self) -> usize {
        let mut g = 1;
        while g * g < self.max_buildings {
            g += 1;
        }
        g
    }

    pub fn cell(&self) -> usize {
        self.size / self.grid()
    }

    /// Footprint a rectangle needs inside its cell.
    fn reach(&self) -> f64 {
        if self.rotation {
            self.max_side as f64 * std::f64::consts::SQRT_2
        } else {
            self.max_side as f64
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::Config("scene size must be positive".into()));
        }
        if self.min_buildings > self.max_buildings {
            return Err(Error::Config(format!(
                "building range [{}, {}] is empty",
                self.min_buildings, self.max_buildings
            )));
        }
        if self.min_side == 0 || self.min_side > self.max_side {
            return Err(Error::Config(format!(
                "side range [{}, {}] is empty or zero",
                self.min_side, self.max_side
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise level must be >= 0, got {}", self.noise)));
        }
        if self.max_buildings > 0 && self.reach() > self.cell() as f64 {
            return Err(Error::Config(format!(
                "{} buildings of side up to {} do not fit in {}px cells of a {}px scene",
                self.max_buildings,
                self.max_side,
                self.cell(),
                self.size
            )));
        }
        Ok(())
    }

    fn side_moments(&self) -> (f64, f64) {
        let k = (self.max_side - self.min_side + 1) as f64;
        let m1 = (self.min_side..=self.max_side).map(|s| s as f64).sum::<f64>() / k;
        let m2 = (self.min_side..=self.max_side).map(|s| (s * s) as f64).sum::<f64>() / k;
        (m1, m2)
    }

    fn count_moments(&self) -> (f64, f64) {
        let k = (self.max_buildings - self.min_buildings + 1) as f64;
        let m1 = (self.min_buildings..=self.max_buildings).map(|s| s as f64).sum::<f64>() / k;
        let m2 = (self.min_buildings..=self.max_buildings).map(|s| (s * s) as f64).sum::<f64>() / k;
        (m1, m2 - m1 * m1)
    }

    /// `E[n] E[w] E[h] / size^2` for axis-aligned rectangles.
    pub fn expected_foreground_fraction(&self) -> f64 {
        let (en, _) = self.count_moments();
        let (es, _) = self.side_moments();
        en * es * es / (self.size * self.size) as f64
    }

    /// Standard deviation of one scene's foreground fraction:
    /// `Var(sum) = E[n] Var(wh) + Var(n) E[wh]^2`.
    pub fn foreground_fraction_std(&self) -> f64 {
        let (en, var_n) = self.count_moments();
        let (es, es2) = self.side_moments();
        let e_area = es * es;
        let var_area = es2 * es2 - e_area * e_area;
        (en * var_area + var_n * e_area * e_area).sqrt() / (self.size * self.size) as f64
    }
}

pub fn scene_id(index: usize) -> String {
    format!("synth_{index:04}")
}

fn building_polygon(spec: &SyntheticSceneSpec, rng: &mut ChaCha8Rng, r0: usize, c0: usize) -> Result<Polygon> {
    let cell = spec.cell();
    let h = rng.random_range(spec.min_side..=spec.max_side);
    let w = rng.random_range(spec.min_side..=spec.max_side);
    if !spec.rotation {
        let r = r0 + rng.random_range(0..=cell - h);
        let c = c0 + rng.random_range(0..=cell - w);
        return Polygon::rectangle(r as f64, c as f64, (r + h) as f64, (c + w) as f64);
    }
    let half = spec.max_side as f64 * std::f64::consts::SQRT_2 / 2.0;
    let span = cell as f64 - 2.0 * half;
    let cr = r0 as f64 + half + rng.random::<f64>() * span;
    let cc = c0 as f64 + half + rng.random::<f64>() * span;
    let theta = rng.random::<f64>() * PI;
    let (s, co) = theta.sin_cos();
    let (hh, hw) = (h as f64 / 2.0, w as f64 / 2.0);
    let corners = [(-hh, -hw), (-hh, hw), (hh, hw), (hh, -hw)]
        .iter()
        .map(|&(dr, dc)| (cr + dr * co - dc * s, cc + dr * s + dc * co))
        .collect();
    Polygon::new(corners)
}

/// Generates scene `index` of the dataset described by `spec`; returns the
/// scene and its building polygons.
pub fn generate_scene(spec: &SyntheticSceneSpec, index: usize) -> Result<(RasterScene, Vec<Polygon>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, STREAM_SYNTH, index as u64));
    let (size, grid, cell) = (spec.size, spec.grid(), spec.cell());
    let n = rng.random_range(spec.min_buildings..=spec.max_buildings);
    let mut cells: Vec<usize> = (0..grid * grid).collect();
    cells.shuffle(&mut rng);
    let mut polygons = Vec::with_capacity(n);
    for &k in cells.iter().take(n) {
        polygons.push(building_polygon(spec, &mut rng, (k / grid) * cell, (k % grid) * cell)?);
    }
    let mask = rasterize_polygons(&polygons, size, size)?;

    // background: soil/vegetation tone, a gentle gradient, and pixel noise
    let noise = Normal::new(0.0, spec.noise.max(1e-12)).expect("finite noise level");
    let base = [
        rng.random_range(70.0..110.0),
        rng.random_range(85.0..120.0),
        rng.random_range(55.0..90.0),
    ];
    let tilt = (rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4));
    let mut image = vec![0u8; size * size * 3];
    for r in 0..size {
        for c in 0..size {
            let shade = tilt.0 * r as f64 + tilt.1 * c as f64;
            for (ch, b) in base.iter().enumerate() {
                let v = b + shade + noise.sample(&mut rng);
                image[(r * size + c) * 3 + ch] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    // clutter: roads spanning the scene and elliptical bare patches, in the
    // same tonal range as roofs so that shape matters as well as brightness;
    // dimensions are relative to a 64px scene
    let k = size as f64 / 64.0;
    for _ in 0..spec.clutter {
        let grey: f64 = rng.random_range(130.0..205.0);
        let road = rng.random_bool(0.5);
        let (ar, ac) = (rng.random_range(0.0..size as f64), rng.random_range(0.0..size as f64));
        let (rr, rc) = (rng.random_range(3.0 * k..9.0 * k), rng.random_range(3.0 * k..9.0 * k));
        let width = rng.random_range(2.0 * k..5.0 * k);
        let vertical = rng.random_bool(0.5);
        for r in 0..size {
            for c in 0..size {
                let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
                let hit = if road {
                    let d = if vertical { x - ac } else { y - ar };
                    d.abs() < width / 2.0
                } else {
                    ((y - ar) / rr).powi(2) + ((x - ac) / rc).powi(2) < 1.0
                };
                if hit {
                    for ch in 0..3 {
                        let v = grey + 0.5 * noise.sample(&mut rng);
                        image[(r * size + c) * 3 + ch] = v.round().clamp(0.0, 255.0) as u8;
                    }
                }
            }
        }
    }
    // roofs: one tone per building, painted exactly where its mask is set
    for poly in &polygons {
        let own = rasterize_polygons(std::slice::from_ref(poly), size, size)?;
        let grey: f64 = rng.random_range(130.0..215.0);
        let tint = [rng.random_range(-15.0..25.0), rng.random_range(-15.0..10.0), rng.random_range(-15.0..10.0)];
        for (px, &m) in own.iter().enumerate() {
            if m == 1 {
                for ch in 0..3 {
                    let v = grey + tint[ch] + 0.5 * noise.sample(&mut rng);
                    image[px * 3 + ch] = v.round().clamp(0.0, 255.0) as u8;
                }
            }
        }
    }
    Ok((RasterScene::new(scene_id(index), size, size, image, mask)?, polygons))
}

pub fn generate_scenes(spec: &SyntheticSceneSpec, n: usize) -> Result<Vec<RasterScene>> {
    (0..n).map(|i| generate_scene(spec, i).map(|(s, _)| s)).collect()
}
