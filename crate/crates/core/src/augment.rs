//! Sequence-level augmentation. One draw of [`AugmentSample`] is applied
//! identically to every frame, so temporal colour variation is untouched and
//! labels stay valid.

use ndarray::{Array4, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clipstore::{FrameSequence, Pixel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub p_vflip: f64,
    pub p_hflip: f64,
    pub rotation_limit_deg: u32,
    pub zoom: f64,
    pub vshift: f64,
    pub hshift: f64,
    pub brightness: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_vflip: 0.5,
            p_hflip: 0.5,
            rotation_limit_deg: 90,
            zoom: 0.5,
            vshift: 0.5,
            hshift: 0.5,
            brightness: (0.1, 1.0),
        }
    }
}

impl AugmentConfig {
    /// A configuration whose draws are always the identity transform.
    pub fn disabled() -> Self {
        Self {
            p_vflip: 0.0,
            p_hflip: 0.0,
            rotation_limit_deg: 0,
            zoom: 0.0,
            vshift: 0.0,
            hshift: 0.0,
            brightness: (1.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = 0.0..=1.0;
        let (b1, b2) = self.brightness;
        let ok = unit.contains(&self.p_vflip)
            && unit.contains(&self.p_hflip)
            && self.rotation_limit_deg <= 360
            && unit.contains(&self.zoom)
            && unit.contains(&self.vshift)
            && unit.contains(&self.hshift)
            && unit.contains(&b1)
            && unit.contains(&b2)
            && b1 <= b2;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid augmentation config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentSample {
    pub vflip: bool,
    pub hflip: bool,
    pub rotation_deg: u32,
    pub zoom: f64,
    /// Fraction of the height; positive moves content down.
    pub vshift: f64,
    /// Fraction of the width; positive moves content right.
    pub hshift: f64,
    pub brightness: f64,
}

impl AugmentSample {
    pub const IDENTITY: Self = Self {
        vflip: false,
        hflip: false,
        rotation_deg: 0,
        zoom: 0.0,
        vshift: 0.0,
        hshift: 0.0,
        brightness: 1.0,
    };
}

fn symmetric(rng: &mut impl Rng, r: f64) -> f64 {
    if r == 0.0 {
        0.0
    } else {
        rng.random_range(-r..=r)
    }
}

pub fn draw_sample(cfg: &AugmentConfig, rng: &mut impl Rng) -> AugmentSample {
    let (b1, b2) = cfg.brightness;
    AugmentSample {
        vflip: rng.random::<f64>() < cfg.p_vflip,
        hflip: rng.random::<f64>() < cfg.p_hflip,
        rotation_deg: rng.random_range(0..=cfg.rotation_limit_deg),
        zoom: symmetric(rng, cfg.zoom),
        vshift: symmetric(rng, cfg.vshift),
        hshift: symmetric(rng, cfg.hshift),
        brightness: if b1 == b2 { b1 } else { rng.random_range(b1..=b2) },
    }
}

/// Nearest-neighbour source coordinate for each destination pixel, after
/// composing flips, rotation, zoom and shifts. Out-of-frame coordinates are
/// clamped to the closest valid pixel.
fn source_map(s: &AugmentSample, h: usize, w: usize) -> Vec<usize> {
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let clamp = |v: f64, n: usize| v.round().clamp(0.0, (n - 1) as f64);
    let (sin, cos) = (s.rotation_deg as f64).to_radians().sin_cos();
    let scale = 1.0 + s.zoom;
    let dv = (s.vshift * h as f64).round();
    let dh = (s.hshift * w as f64).round();

    let mut map = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            // walk the transforms from last to first
            let (mut py, mut px) = (clamp(y as f64 - dv, h), clamp(x as f64 - dh, w));
            if s.zoom != 0.0 {
                py = clamp((py - cy) / scale + cy, h);
                px = clamp((px - cx) / scale + cx, w);
            }
            if s.rotation_deg % 360 != 0 {
                let (ry, rx) = (py - cy, px - cx);
                py = clamp(cos * ry - sin * rx + cy, h);
                px = clamp(sin * ry + cos * rx + cx, w);
            }
            if s.hflip {
                px = (w - 1) as f64 - px;
            }
            if s.vflip {
                py = (h - 1) as f64 - py;
            }
            map.push(py as usize * w + px as usize);
        }
    }
    map
}

/// Applies one sample to a single-channel, real-valued sequence.
pub fn apply<T: Scalar + Pixel>(sample: &AugmentSample, seq: &FrameSequence<T>) -> Result<FrameSequence<T>> {
    if seq.channels() != 1 {
        return Err(Error::shape(format!("augmentation expects 1 channel, got {}", seq.channels())));
    }
    let (n, h, w, _) = seq.frames().dim();
    let map = source_map(sample, h, w);
    let beta = T::lit(sample.brightness);
    let mut out = Array4::<T>::zeros((n, h, w, 1));
    for (src, mut dst) in seq.frames().axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        let src = src.as_slice().expect("standard layout");
        let dst = dst.as_slice_mut().expect("standard layout");
        for (d, &m) in dst.iter_mut().zip(&map) {
            *d = (src[m] * beta).max(T::zero()).min(T::one());
        }
    }
    FrameSequence::new(out, seq.fps())
}
