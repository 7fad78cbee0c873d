//! Synthetic fingertip videos with exactly known heart and respiratory rates.
//!
//! The trace model is
//! `s(t) = B (1 + m_b sin(w_r t)) + A (1 + m_a sin(w_r t)) p(phi(t)) + e(t)`
//! with `phi'(t) = 2 pi f_hr (1 + m_rsa sin(w_r t))` and the pulse shape
//! `p(phi) = sin(phi) + 0.5 sin(2 phi)`.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::clipstore::{write_clip, Catalog, ClipRecord, FrameSequence, Split};
use crate::error::{Error, Result};

/// Channel gains relative to red.
pub const CHANNEL_GAINS: [f64; 3] = [1.0, 0.4, 0.2];
/// Depth of the fixed radial vignette in red pixel units.
pub const VIGNETTE_DEPTH: f64 = 20.0;
pub const HR_BOUNDS: (f64, f64) = (40.0, 180.0);
pub const RR_BOUNDS: (f64, f64) = (6.0, 45.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub hr_bpm: f64,
    pub rr_brpm: f64,
    pub duration_s: f64,
    pub fps: f64,
    pub height: usize,
    pub width: usize,
    pub baseline_mod_depth: f64,
    pub amplitude_mod_depth: f64,
    pub rsa_depth: f64,
    pub noise_sigma: f64,
    /// Pixel units per second.
    pub brightness_drift: f64,
    /// Mean red level `B`.
    pub baseline_level: f64,
    /// Pulse amplitude `A` in red pixel units.
    pub pulse_amplitude: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            hr_bpm: 81.0,
            rr_brpm: 22.0,
            duration_s: 30.0,
            fps: 30.0,
            height: 32,
            width: 32,
            baseline_mod_depth: 0.0,
            amplitude_mod_depth: 0.0,
            rsa_depth: 0.0,
            noise_sigma: 0.0,
            brightness_drift: 0.0,
            baseline_level: 120.0,
            pulse_amplitude: 30.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0 && self.duration_s > 0.0) {
            return Err(Error::invalid("fps and duration must be positive"));
        }
        if !(self.hr_bpm > 0.0 && self.rr_brpm > 0.0) {
            return Err(Error::invalid("rates must be positive"));
        }
        if self.hr_bpm / 60.0 >= self.fps / 2.0 {
            return Err(Error::invalid(format!(
                "heart rate {} bpm is at or above the Nyquist limit for {} fps",
                self.hr_bpm, self.fps
            )));
        }
        if self.rr_brpm >= self.hr_bpm {
            return Err(Error::invalid("respiratory rate must be below heart rate"));
        }
        let unit = 0.0..=1.0;
        if ![self.baseline_mod_depth, self.amplitude_mod_depth, self.rsa_depth]
            .iter()
            .all(|d| unit.contains(d))
        {
            return Err(Error::invalid("modulation depths must lie in [0, 1]"));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::invalid("noise_sigma must be non-negative"));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::invalid("frame dimensions must be positive"));
        }
        Ok(())
    }

    pub fn n_frames(&self) -> usize {
        (self.duration_s * self.fps).round() as usize
    }
}

fn pulse(phi: f64) -> f64 {
    phi.sin() + 0.5 * (2.0 * phi).sin()
}

/// The noiseless-model trace plus seeded white noise, one sample per frame.
pub fn synth_trace(cfg: &SynthConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let phase0 = rng.random::<f64>() * 2.0 * PI;
    let f_hr = cfg.hr_bpm / 60.0;
    let f_rr = cfg.rr_brpm / 60.0;
    let w_rr = 2.0 * PI * f_rr;
    Ok((0..cfg.n_frames())
        .map(|i| {
            let t = i as f64 / cfg.fps;
            let resp = (w_rr * t).sin();
            // closed-form integral of the RSA-modulated instantaneous frequency
            let phi = phase0 + 2.0 * PI * f_hr * (t + cfg.rsa_depth * (1.0 - (w_rr * t).cos()) / w_rr);
            let noise: f64 = if cfg.noise_sigma > 0.0 {
                cfg.noise_sigma * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            cfg.baseline_level * (1.0 + cfg.baseline_mod_depth * resp)
                + cfg.pulse_amplitude * (1.0 + cfg.amplitude_mod_depth * resp) * pulse(phi)
                + noise
        })
        .collect())
}

/// Radial falloff, zero at the centre and `-VIGNETTE_DEPTH` in the corners.
pub fn vignette(height: usize, width: usize) -> Vec<f64> {
    let cy = (height as f64 - 1.0) / 2.0;
    let cx = (width as f64 - 1.0) / 2.0;
    let rmax2 = (cy * cy + cx * cx).max(1.0);
    let mut v = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let r2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
            v.push(-VIGNETTE_DEPTH * r2 / rmax2);
        }
    }
    v
}

/// Renders an R,G,B clip whose red channel carries the trace.
pub fn synth_clip(cfg: &SynthConfig) -> Result<FrameSequence<u8>> {
    let trace = synth_trace(cfg)?;
    let vig = vignette(cfg.height, cfg.width);
    let (n, h, w) = (trace.len(), cfg.height, cfg.width);
    let mut data = Vec::with_capacity(n * h * w * 3);
    for (i, s) in trace.iter().enumerate() {
        let level = s + cfg.brightness_drift * i as f64 / cfg.fps;
        for v in &vig {
            let red = level + v;
            for gain in CHANNEL_GAINS {
                data.push((gain * red).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    let frames = Array4::from_shape_vec((n, h, w, 3), data).map_err(|e| Error::shape(e.to_string()))?;
    FrameSequence::new(frames, cfg.fps as f32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthDatasetConfig {
    pub n_subjects: usize,
    /// Expected clips per subject; each subject records `floor` or `ceil` of it.
    pub clips_per_subject: f64,
    pub hr_mean: f64,
    pub hr_sd: f64,
    pub rr_mean: f64,
    pub rr_sd: f64,
    pub duration_s: f64,
    pub fps: f64,
    /// Fraction of clips recorded at 60 fps instead of `fps`.
    pub high_fps_fraction: f64,
    pub height: usize,
    pub width: usize,
    pub baseline_mod_depth: f64,
    pub amplitude_mod_depth: f64,
    pub rsa_depth: f64,
    pub noise_sigma: f64,
    /// Fraction of clips that carry a pulse; the rest are noise only.
    pub good_fraction: f64,
    pub bad_noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthDatasetConfig {
    fn default() -> Self {
        Self {
            n_subjects: 46,
            clips_per_subject: 1.5,
            hr_mean: 81.0,
            hr_sd: 17.7,
            rr_mean: 22.0,
            rr_sd: 8.3,
            duration_s: 30.0,
            fps: 30.0,
            high_fps_fraction: 0.0,
            height: 32,
            width: 32,
            baseline_mod_depth: 0.2,
            amplitude_mod_depth: 0.2,
            rsa_depth: 0.05,
            noise_sigma: 1.0,
            good_fraction: 1.0,
            bad_noise_sigma: 8.0,
            seed: 0,
        }
    }
}

/// A clip to be rendered: its id, subject and generator configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedClip {
    pub clip_id: String,
    pub subject_id: String,
    pub good: bool,
    pub cfg: SynthConfig,
}

/// Rejection sampling from a normal truncated to `[lo, hi]`.
pub fn truncated_normal(rng: &mut impl Rng, mean: f64, sd: f64, (lo, hi): (f64, f64)) -> Result<f64> {
    if !(sd >= 0.0) {
        return Err(Error::invalid(format!("standard deviation must be non-negative, got {sd}")));
    }
    if sd == 0.0 {
        return Ok(mean.clamp(lo, hi));
    }
    let normal = Normal::new(mean, sd).map_err(|e| Error::invalid(e.to_string()))?;
    for _ in 0..10_000 {
        let v = normal.sample(rng);
        if (lo..=hi).contains(&v) {
            return Ok(v);
        }
    }
    Err(Error::invalid(format!(
        "truncation window [{lo}, {hi}] is too far from N({mean}, {sd})"
    )))
}

/// Draws per-subject labels and per-clip generator settings without rendering.
pub fn plan_dataset(cfg: &SynthDatasetConfig) -> Result<Vec<PlannedClip>> {
    if cfg.n_subjects == 0 {
        return Err(Error::invalid("n_subjects must be at least 1"));
    }
    if cfg.hr_sd < 0.0 || cfg.rr_sd < 0.0 {
        return Err(Error::invalid("label standard deviations must be non-negative"));
    }
    if !(cfg.clips_per_subject >= 1.0) {
        return Err(Error::invalid("clips_per_subject must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut planned = Vec::new();
    let base = cfg.clips_per_subject.floor();
    let extra_p = cfg.clips_per_subject - base;
    for s in 0..cfg.n_subjects {
        let subject_id = format!("S{s:03}");
        let hr = truncated_normal(&mut rng, cfg.hr_mean, cfg.hr_sd, HR_BOUNDS)?;
        let mut rr = truncated_normal(&mut rng, cfg.rr_mean, cfg.rr_sd, RR_BOUNDS)?;
        while rr >= hr {
            rr = truncated_normal(&mut rng, cfg.rr_mean, cfg.rr_sd, RR_BOUNDS)?;
        }
        let n_clips = base as usize + usize::from(rng.random::<f64>() < extra_p);
        for c in 0..n_clips {
            let good = rng.random::<f64>() < cfg.good_fraction;
            let fps = if rng.random::<f64>() < cfg.high_fps_fraction { 60.0 } else { cfg.fps };
            let clip_seed = rng.random::<u64>();
            let synth = if good {
                SynthConfig {
                    hr_bpm: hr,
                    rr_brpm: rr,
                    duration_s: cfg.duration_s,
                    fps,
                    height: cfg.height,
                    width: cfg.width,
                    baseline_mod_depth: cfg.baseline_mod_depth,
                    amplitude_mod_depth: cfg.amplitude_mod_depth,
                    rsa_depth: cfg.rsa_depth,
                    noise_sigma: cfg.noise_sigma,
                    seed: clip_seed,
                    ..SynthConfig::default()
                }
            } else {
                SynthConfig {
                    hr_bpm: hr,
                    rr_brpm: rr,
                    duration_s: cfg.duration_s,
                    fps,
                    height: cfg.height,
                    width: cfg.width,
                    pulse_amplitude: 0.0,
                    noise_sigma: cfg.bad_noise_sigma,
                    seed: clip_seed,
                    ..SynthConfig::default()
                }
            };
            planned.push(PlannedClip {
                clip_id: format!("{subject_id}_C{c}"),
                subject_id: subject_id.clone(),
                good,
                cfg: synth,
            });
        }
    }
    Ok(planned)
}

/// Renders every planned clip into `out_dir/clips/` and writes
/// `out_dir/catalog.csv`. Labels are the generating rates.
pub fn synth_dataset(cfg: &SynthDatasetConfig, out_dir: impl AsRef<Path>) -> Result<Catalog> {
    let out_dir = out_dir.as_ref();
    let clip_dir = out_dir.join("clips");
    std::fs::create_dir_all(&clip_dir).map_err(|e| Error::io(&clip_dir, e))?;
    let mut records = Vec::new();
    for p in plan_dataset(cfg)? {
        let clip = synth_clip(&p.cfg)?;
        let path: PathBuf = clip_dir.join(format!("{}.fvid", p.clip_id));
        write_clip(&clip, &path)?;
        records.push(ClipRecord {
            clip_id: p.clip_id,
            subject_id: p.subject_id,
            path,
            fps: clip.fps() as f64,
            n_frames: clip.n_frames(),
            duration_s: clip.n_frames() as f64 / clip.fps() as f64,
            hr_bpm: p.cfg.hr_bpm,
            rr_brpm: p.cfg.rr_brpm,
            quality_pass: true,
            split: Split::Unassigned,
        });
    }
    let catalog = Catalog::new(records)?;
    catalog.write(out_dir.join("catalog.csv"))?;
    Ok(catalog)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clipstore::{extract_red, mean_pixel_trace};
    use crate::spectrum::{bin_hz, dominant_frequency, power_spectrum, PeakOptions};

    #[test]
    fn pure_tone_at_heart_rate() {
        let cfg = SynthConfig {
            hr_bpm: 90.0,
            duration_s: 20.0,
            ..SynthConfig::default()
        };
        let x = synth_trace(&cfg).unwrap();
        let f = dominant_frequency(&x, 30.0, (0.05, 15.0), PeakOptions::RAW).unwrap();
        assert_eq!(f, 1.5);
    }

    #[test]
    fn baseline_modulation_adds_respiratory_line() {
        let cfg = SynthConfig {
            hr_bpm: 90.0,
            rr_brpm: 18.0,
            baseline_mod_depth: 0.3,
            duration_s: 20.0,
            ..SynthConfig::default()
        };
        let x = synth_trace(&cfg).unwrap();
        let p = power_spectrum(&x, false);
        let k = (0.3 / bin_hz(x.len(), 30.0)).round() as usize;
        let plain = synth_trace(&SynthConfig { baseline_mod_depth: 0.0, ..cfg.clone() }).unwrap();
        let p0 = power_spectrum(&plain, false);
        assert!(p[k] > 1e6 * p0[k].max(1e-12));
        let rr = dominant_frequency(&x, 30.0, (0.1, 0.7), PeakOptions::RAW).unwrap();
        assert!((rr - 0.3).abs() < 1e-9);
    }

    #[test]
    fn deterministic_in_seed() {
        let cfg = SynthConfig {
            noise_sigma: 3.0,
            seed: 11,
            ..SynthConfig::default()
        };
        assert_eq!(synth_trace(&cfg).unwrap(), synth_trace(&cfg).unwrap());
        assert_eq!(synth_clip(&cfg).unwrap(), synth_clip(&cfg).unwrap());
        let other = SynthConfig { seed: 12, ..cfg.clone() };
        assert_ne!(synth_clip(&cfg).unwrap(), synth_clip(&other).unwrap());
    }

    #[test]
    fn nyquist_and_ordering_checked() {
        let too_fast = SynthConfig { hr_bpm: 960.0, fps: 30.0, ..SynthConfig::default() };
        assert!(synth_trace(&too_fast).is_err());
        let inverted = SynthConfig { hr_bpm: 50.0, rr_brpm: 60.0, ..SynthConfig::default() };
        assert!(synth_trace(&inverted).is_err());
    }

    #[test]
    fn clean_clip_is_vignette_plus_level() {
        let cfg = SynthConfig {
            height: 8,
            width: 8,
            duration_s: 2.0,
            ..SynthConfig::default()
        };
        let clip = synth_clip(&cfg).unwrap();
        let trace = synth_trace(&cfg).unwrap();
        let vig = vignette(8, 8);
        for i in 0..clip.n_frames() {
            for y in 0..8 {
                for x in 0..8 {
                    let expect = (trace[i] + vig[y * 8 + x]).round().clamp(0.0, 255.0) as u8;
                    assert_eq!(clip.frames()[[i, y, x, 0]], expect);
                }
            }
        }
    }

    #[test]
    fn red_trace_recovers_heart_rate() {
        for (hr, seed) in [(62.0, 1u64), (81.0, 2), (133.0, 3)] {
            let cfg = SynthConfig {
                hr_bpm: hr,
                rr_brpm: 20.0,
                baseline_mod_depth: 0.2,
                amplitude_mod_depth: 0.2,
                rsa_depth: 0.05,
                seed,
                ..SynthConfig::default()
            };
            let clip = synth_clip(&cfg).unwrap();
            let trace: Vec<f64> = mean_pixel_trace(&extract_red(&clip).unwrap()).unwrap();
            let f = dominant_frequency(&trace, 30.0, (0.7, 3.5), PeakOptions::RAW).unwrap();
            assert!((f - hr / 60.0).abs() <= bin_hz(trace.len(), 30.0), "hr {hr}: got {f}");
        }
    }

    #[test]
    fn label_moments_follow_configuration() {
        let cfg = SynthDatasetConfig {
            n_subjects: 1000,
            clips_per_subject: 1.0,
            seed: 5,
            ..SynthDatasetConfig::default()
        };
        let plan = plan_dataset(&cfg).unwrap();
        let mean_hr = plan.iter().map(|p| p.cfg.hr_bpm).sum::<f64>() / plan.len() as f64;
        assert!((mean_hr - 81.0).abs() < 2.0, "{mean_hr}");
        assert!(plan.iter().all(|p| p.cfg.rr_brpm < p.cfg.hr_bpm));
        assert!(plan.iter().all(|p| (40.0..=180.0).contains(&p.cfg.hr_bpm)));
    }

    #[test]
    fn retained_set_shape() {
        let plan = plan_dataset(&SynthDatasetConfig { seed: 3, ..SynthDatasetConfig::default() }).unwrap();
        assert!((55..=90).contains(&plan.len()), "{}", plan.len());
        let subjects: std::collections::HashSet<_> = plan.iter().map(|p| &p.subject_id).collect();
        assert_eq!(subjects.len(), 46);
    }

    #[test]
    fn invalid_dataset_requests() {
        assert!(plan_dataset(&SynthDatasetConfig { n_subjects: 0, ..Default::default() }).is_err());
        assert!(plan_dataset(&SynthDatasetConfig { hr_sd: -1.0, ..Default::default() }).is_err());
    }

    #[test]
    fn dataset_labels_are_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthDatasetConfig {
            n_subjects: 3,
            duration_s: 12.0,
            height: 4,
            width: 4,
            seed: 9,
            ..SynthDatasetConfig::default()
        };
        let cat = synth_dataset(&cfg, dir.path()).unwrap();
        let plan = plan_dataset(&cfg).unwrap();
        for (r, p) in cat.records.iter().zip(&plan) {
            assert_eq!(r.hr_bpm, p.cfg.hr_bpm);
            assert_eq!(r.rr_brpm, p.cfg.rr_brpm);
        }
        let reread = Catalog::read(dir.path().join("catalog.csv")).unwrap();
        assert_eq!(reread.records, cat.records);
    }
}
