//! Seeded synthetic gland scenes with exact instance truth.
//!
//! Each scene holds elliptical glands (dark rim, light lumen) on a textured
//! pink background. Some glands are placed 1 to 3 pixels away from an
//! existing one, and bright untextured patches are scattered over the
//! background to act as false-positive bait. A scene depends only on the
//! config and its index.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::ops::Range;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::boosting::TrainingSample;
use crate::error::{invalid, Error, Result};
use crate::grid::{BinaryMap, Grid, InstanceLabelMap};
use crate::tensor::Tensor;
use crate::{seeded_rng, Rng};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub n_instances: usize,
    pub touching_pair_fraction: f64,
    pub artifact_count: usize,
    pub noise_sigma: f64,
    /// Darkening of the background right next to a gland, in [0, 1].
    pub halo: f64,
    pub min_radius: f64,
    pub max_radius: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            n_instances: 4,
            touching_pair_fraction: 0.5,
            artifact_count: 2,
            noise_sigma: 0.05,
            halo: 0.6,
            min_radius: 6.0,
            max_radius: 11.0,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 {
            return Err(invalid!("scene must be at least 8x8, got {}x{}", self.width, self.height));
        }
        if !(0.0..=1.0).contains(&self.touching_pair_fraction) {
            return Err(invalid!("touching_pair_fraction must lie in [0, 1]"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(invalid!("noise_sigma must be finite and nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.halo) {
            return Err(invalid!("halo must lie in [0, 1]"));
        }
        if !(self.min_radius >= 1.5 && self.min_radius <= self.max_radius) {
            return Err(invalid!(
                "radii must satisfy 1.5 <= min_radius <= max_radius, got {} and {}",
                self.min_radius,
                self.max_radius
            ));
        }
        let span = 2.0 * self.max_radius + 3.0;
        if span > self.width as f64 || span > self.height as f64 {
            return Err(Error::Generation(alloc::format!(
                "a gland of radius {} does not fit a {}x{} canvas",
                self.max_radius,
                self.width,
                self.height
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    /// `[3, H, W]` RGB in [0, 1].
    pub image: Tensor,
    pub instance_truth: InstanceLabelMap,
    pub binary_truth: BinaryMap,
}

impl SyntheticSample {
    pub fn instance_count(&self) -> usize {
        self.instance_truth.as_slice().iter().copied().max().unwrap_or(0) as usize
    }

    pub fn into_training_sample(self) -> Result<TrainingSample> {
        TrainingSample::new(self.image, self.instance_truth)
    }
}

const BACKGROUND: [f64; 3] = [0.86, 0.62, 0.76];
const RIM: [f64; 3] = [0.42, 0.22, 0.52];
const LUMEN: [f64; 3] = [0.95, 0.90, 0.96];
const ARTIFACT: [f64; 3] = [0.97, 0.96, 0.97];
const RIM_WIDTH: f64 = 2.0;
/// Squared pixel distance within which instances count as near.
const NEAR_SQ: i64 = 16;
const PLACEMENT_ATTEMPTS: usize = 400;

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    theta: f64,
}

impl Ellipse {
    /// Normalized radius: below 1 inside, 1 on the boundary.
    fn radius(&self, x: f64, y: f64) -> f64 {
        let (s, c) = (libm::sin(self.theta), libm::cos(self.theta));
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * c + dy * s) / self.a;
        let v = (-dx * s + dy * c) / self.b;
        libm::sqrt(u * u + v * v)
    }

    fn pixels(&self, w: usize, h: usize) -> Option<Vec<usize>> {
        let r = self.a.max(self.b);
        let (x0, x1) = (self.cx - r, self.cx + r);
        let (y0, y1) = (self.cy - r, self.cy + r);
        if x0 < 1.0 || y0 < 1.0 || x1 > (w - 2) as f64 || y1 > (h - 2) as f64 {
            return None;
        }
        let mut out = Vec::new();
        for y in libm::floor(y0) as usize..=libm::ceil(y1) as usize {
            for x in libm::floor(x0) as usize..=libm::ceil(x1) as usize {
                if self.radius(x as f64, y as f64) <= 1.0 {
                    out.push(y * w + x);
                }
            }
        }
        (!out.is_empty()).then_some(out)
    }
}

/// Smallest squared distance from `pixels` to any pixel owned by `other`
/// (or by any instance when `other` is 0), capped at `NEAR_SQ + 1`.
fn near_sq(owner: &[u32], w: usize, h: usize, pixels: &[usize], other: u32) -> i64 {
    let mut best = NEAR_SQ + 1;
    for &p in pixels {
        let (x, y) = ((p % w) as i64, (p / w) as i64);
        for dy in -4i64..=4 {
            for dx in -4i64..=4 {
                let d = dx * dx + dy * dy;
                if d >= best {
                    continue;
                }
                let (qx, qy) = (x + dx, y + dy);
                if qx < 0 || qy < 0 || qx >= w as i64 || qy >= h as i64 {
                    continue;
                }
                let o = owner[qy as usize * w + qx as usize];
                if o != 0 && (other == 0 || o == other) {
                    best = d;
                }
            }
        }
    }
    best
}

fn random_shape(cfg: &SceneConfig, rng: &mut Rng, cx: f64, cy: f64) -> Ellipse {
    let a = rng.random_range(cfg.min_radius..=cfg.max_radius);
    let b = rng.random_range(cfg.min_radius..=cfg.max_radius).min(a * 1.6).max(a / 1.6);
    Ellipse {
        cx,
        cy,
        a,
        b,
        theta: rng.random_range(0.0..PI),
    }
}

fn place_free(cfg: &SceneConfig, rng: &mut Rng, owner: &[u32]) -> Option<(Ellipse, Vec<usize>)> {
    let (w, h) = (cfg.width, cfg.height);
    let (cx, cy) = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
    let e = random_shape(cfg, rng, cx, cy);
    let px = e.pixels(w, h)?;
    // Squared distance 4 is one clear pixel along an axis.
    (near_sq(owner, w, h, &px, 0) >= 4).then_some((e, px))
}

fn place_touching(
    cfg: &SceneConfig,
    rng: &mut Rng,
    owner: &[u32],
    centers: &[Ellipse],
) -> Option<(Ellipse, Vec<usize>)> {
    let (w, h) = (cfg.width, cfg.height);
    let k = rng.random_range(0..centers.len());
    let anchor = centers[k];
    let phi = rng.random_range(0.0..2.0 * PI);
    let mut e = random_shape(cfg, rng, anchor.cx, anchor.cy);
    let extra = rng.random_range(0.0..2.0);
    let (ux, uy) = (libm::cos(phi), libm::sin(phi));
    let mut dist = anchor.a.min(anchor.b) + e.a.min(e.b);
    loop {
        e.cx = anchor.cx + ux * dist;
        e.cy = anchor.cy + uy * dist;
        if dist > anchor.a + e.a + anchor.b + e.b + 8.0 {
            return None;
        }
        let px = e.pixels(w, h)?;
        if near_sq(owner, w, h, &px, k as u32 + 1) >= 4 {
            e.cx += ux * extra;
            e.cy += uy * extra;
            let px = e.pixels(w, h)?;
            let to_anchor = near_sq(owner, w, h, &px, k as u32 + 1);
            let to_any = near_sq(owner, w, h, &px, 0);
            return (to_any >= 4 && to_anchor <= NEAR_SQ).then_some((e, px));
        }
        dist += 0.5;
    }
}

fn layout(cfg: &SceneConfig, rng: &mut Rng) -> Result<(Vec<u32>, Vec<Ellipse>)> {
    let mut owner = vec![0u32; cfg.width * cfg.height];
    let mut shapes: Vec<Ellipse> = Vec::new();
    for id in 1..=cfg.n_instances as u32 {
        let touching = !shapes.is_empty() && rng.random_bool(cfg.touching_pair_fraction);
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            placed = if touching {
                place_touching(cfg, rng, &owner, &shapes)
            } else {
                place_free(cfg, rng, &owner)
            };
            if placed.is_some() {
                break;
            }
        }
        let Some((e, px)) = placed else {
            return Err(Error::Generation(alloc::format!(
                "could not place instance {} of {} on a {}x{} canvas",
                id,
                cfg.n_instances,
                cfg.width,
                cfg.height
            )));
        };
        for p in px {
            owner[p] = id;
        }
        shapes.push(e);
    }
    Ok((owner, shapes))
}

fn scene_rng(seed: u64, index: u64) -> Rng {
    seeded_rng(seed ^ (index.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Renders scene `index` of the stream defined by `config.seed`.
pub fn render_sample(config: &SceneConfig, index: u64) -> Result<SyntheticSample> {
    config.validate()?;
    let (w, h) = (config.width, config.height);
    let mut rng = scene_rng(config.seed, index);
    let (owner, shapes) = layout(config, &mut rng)?;

    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let f = rng.random_range(0.2..0.7);
            let dir = rng.random_range(0.0..PI);
            (f * libm::cos(dir), f * libm::sin(dir), rng.random_range(0.0..2.0 * PI), rng.random_range(0.015..0.035))
        })
        .collect();
    let mut rgb = vec![[0.0f64; 3]; w * h];
    for y in 0..h {
        for x in 0..w {
            let t: f64 = waves
                .iter()
                .map(|&(fx, fy, ph, amp)| amp * libm::sin(fx * x as f64 + fy * y as f64 + ph))
                .sum::<f64>()
                + rng.random_range(-0.03..0.03);
            let p = y * w + x;
            rgb[p] = match owner[p] {
                0 => {
                    let d = libm::sqrt(near_sq(&owner, w, h, &[p], 0) as f64);
                    let k = config.halo * (1.0 - (d - 1.0) / 3.0).max(0.0);
                    let mut c = BACKGROUND;
                    for (v, r) in c.iter_mut().zip(RIM) {
                        *v += k * (r - *v) + t;
                    }
                    c
                }
                id => {
                    let e = shapes[id as usize - 1];
                    let depth = (1.0 - e.radius(x as f64, y as f64)) * e.a.min(e.b);
                    if depth < RIM_WIDTH {
                        RIM.map(|c| c + 0.5 * t)
                    } else {
                        LUMEN.map(|c| c + 0.3 * t)
                    }
                }
            };
        }
    }

    for _ in 0..config.artifact_count {
        for _ in 0..PLACEMENT_ATTEMPTS {
            let patch = Ellipse {
                cx: rng.random_range(0.0..w as f64),
                cy: rng.random_range(0.0..h as f64),
                a: rng.random_range(2.0..5.0),
                b: rng.random_range(2.0..5.0),
                theta: rng.random_range(0.0..PI),
            };
            let Some(px) = patch.pixels(w, h) else { continue };
            if near_sq(&owner, w, h, &px, 0) < 4 {
                continue;
            }
            for p in px {
                rgb[p] = ARTIFACT;
            }
            break;
        }
    }

    if config.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, config.noise_sigma).map_err(|e| invalid!("noise: {}", e))?;
        for px in &mut rgb {
            for c in px.iter_mut() {
                *c += normal.sample(&mut rng);
            }
        }
    }

    let mut data = vec![0.0; 3 * w * h];
    for (p, px) in rgb.iter().enumerate() {
        for c in 0..3 {
            data[c * w * h + p] = px[c].clamp(0.0, 1.0);
        }
    }
    let image = Tensor::from_vec(&[3, h, w], data)?;
    let instance_truth = Grid::from_vec(w, h, owner)?;
    let binary_truth = instance_truth.map(|&id| u8::from(id > 0));
    Ok(SyntheticSample {
        image,
        instance_truth,
        binary_truth,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitCounts {
    fn default() -> Self {
        Self {
            train: 80,
            val: 20,
            test: 100,
        }
    }
}

impl SplitCounts {
    /// Consecutive, disjoint scene index ranges: train, then val, then test.
    pub fn range(&self, split: Split) -> Range<u64> {
        let (t, v, s) = (self.train as u64, self.val as u64, self.test as u64);
        match split {
            Split::Train => 0..t,
            Split::Val => t..t + v,
            Split::Test => t + v..t + v + s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train == 0 || self.val == 0 || self.test == 0 {
            return Err(invalid!("every split needs at least one sample"));
        }
        Ok(())
    }
}

/// Renders every scene of one split.
pub fn render_split(config: &SceneConfig, counts: &SplitCounts, split: Split) -> Result<Vec<SyntheticSample>> {
    counts.validate()?;
    counts
        .range(split)
        .map(|i| render_sample(config, i))
        .collect()
}
