//! Video standardisation: quality gate, frame-rate normalisation, end
//! trimming, spatial downsampling and label adjustment.

use std::path::Path;

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::clipstore::{extract_red, mean_pixel_trace, read_clip, write_clip, Catalog, ClipRecord, FrameSequence, Pixel, Split};
use crate::error::{Error, Result};
use crate::spectrum::{band_bins, bin_hz, detrend_moving_average, welch};

pub const HR_BAND_HZ: (f64, f64) = (0.7, 3.5);
pub const DEFAULT_SNR_THRESHOLD_DB: f64 = 6.0;
pub const MIN_GATE_SECONDS: f64 = 10.0;
const DETREND_SECONDS: f64 = 2.0;
const WELCH_SEGMENT_SECONDS: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityVerdict {
    pub pass: bool,
    pub snr_db: f64,
    pub peak_hz: f64,
}

/// Band-limited spectral prominence of the frame-mean trace.
///
/// The trace is detrended with a 2 s moving average and its power spectrum is
/// averaged over 8 s Hann segments (50% overlap). SNR is the in-band peak over
/// the in-band median, in decibels.
pub fn quality_gate<P: Pixel>(seq: &FrameSequence<P>, snr_threshold_db: f64) -> Result<QualityVerdict> {
    if seq.duration_seconds() < MIN_GATE_SECONDS {
        return Err(Error::TooShort(format!(
            "quality gate needs at least {MIN_GATE_SECONDS} s, clip has {:.2} s",
            seq.duration_seconds()
        )));
    }
    let fps = seq.fps() as f64;
    let trace: Vec<f64> = mean_pixel_trace(seq)?;
    let detrended = detrend_moving_average(&trace, (DETREND_SECONDS * fps).round() as usize);
    let (seg, power) = welch(&detrended, (WELCH_SEGMENT_SECONDS * fps).round() as usize);
    let bins = band_bins(seg, fps, HR_BAND_HZ);
    let mut in_band: Vec<(usize, f64)> = bins.map(|k| (k, power[k])).collect();
    if in_band.is_empty() {
        return Err(Error::invalid("no spectral bins inside the heart-rate band"));
    }
    let (peak_bin, peak) = in_band
        .iter()
        .copied()
        .fold((0, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b });
    in_band.sort_by(|a, b| a.1.total_cmp(&b.1));
    let m = in_band.len();
    let median = if m % 2 == 1 {
        in_band[m / 2].1
    } else {
        0.5 * (in_band[m / 2 - 1].1 + in_band[m / 2].1)
    };
    let snr_db = match (peak > 0.0, median > 0.0) {
        (false, _) => f64::NEG_INFINITY,
        (true, false) => f64::INFINITY,
        (true, true) => 10.0 * (peak / median).log10(),
    };
    let peak_hz = peak_bin as f64 * bin_hz(seg, fps);
    let in_hr_band = (HR_BAND_HZ.0..=HR_BAND_HZ.1).contains(&peak_hz);
    Ok(QualityVerdict {
        pass: snr_db >= snr_threshold_db && in_hr_band,
        snr_db,
        peak_hz,
    })
}

fn fps_is(fps: f32, want: f32) -> bool {
    (fps - want).abs() < 1e-3
}

/// 60 fps clips keep their even-indexed frames; 30 fps clips pass through.
pub fn normalize_fps<P: Pixel>(seq: &FrameSequence<P>, target_fps: f32) -> Result<FrameSequence<P>> {
    if fps_is(seq.fps(), target_fps) {
        return Ok(seq.clone());
    }
    if fps_is(seq.fps(), 2.0 * target_fps) {
        let mut out = seq.decimate(2)?;
        if !fps_is(out.fps(), target_fps) {
            out = FrameSequence::new(out.into_frames(), target_fps)?;
        }
        return Ok(out);
    }
    Err(Error::invalid(format!(
        "unsupported frame rate {} fps (expected {target_fps} or {})",
        seq.fps(),
        2.0 * target_fps
    )))
}

/// Drops `floor(trim_s * fps)` frames from each end.
pub fn trim_ends<P: Pixel>(seq: &FrameSequence<P>, trim_s: f64) -> Result<FrameSequence<P>> {
    if trim_s < 0.0 {
        return Err(Error::invalid("trim length must be non-negative"));
    }
    if seq.duration_seconds() <= 2.0 * trim_s {
        return Err(Error::TooShort(format!(
            "{:.2} s clip cannot lose {trim_s} s at both ends",
            seq.duration_seconds()
        )));
    }
    let k = (trim_s * seq.fps() as f64).floor() as usize;
    if k == 0 {
        return Ok(seq.clone());
    }
    seq.slice_frames(k, seq.n_frames() - k)
}

/// Source interval weights for area resampling `src` cells onto `dst` cells.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let (lo, hi) = (o as f64 * scale, (o + 1) as f64 * scale);
            let mut taps = Vec::new();
            let mut i = lo.floor() as usize;
            while (i as f64) < hi && i < src {
                let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                if overlap > 0.0 {
                    taps.push((i, overlap / scale));
                }
                i += 1;
            }
            taps
        })
        .collect()
}

/// Area-averaging resize of every frame and channel.
pub fn downsample_spatial<P: Pixel>(seq: &FrameSequence<P>, (th, tw): (usize, usize)) -> Result<FrameSequence<P>> {
    let (n, h, w, c) = seq.frames().dim();
    if h < th || w < tw || th == 0 || tw == 0 {
        return Err(Error::shape(format!("cannot downsample {h}x{w} to {th}x{tw}")));
    }
    if (h, w) == (th, tw) {
        return Ok(seq.clone());
    }
    let wy = area_weights(h, th);
    let wx = area_weights(w, tw);
    let src = seq.frames();
    let out = Array4::from_shape_fn((n, th, tw, c), |(i, oy, ox, ch)| {
        let mut acc = 0.0;
        for &(y, ay) in &wy[oy] {
            for &(x, ax) in &wx[ox] {
                acc += ay * ax * src[[i, y, x, ch]].to_f64();
            }
        }
        P::from_f64(acc)
    });
    FrameSequence::new(out, seq.fps())
}

/// Per-minute rate from `count` events observed over `t` seconds.
pub fn adjust_label(count: f64, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::invalid(format!("clip length must be positive, got {t}")));
    }
    if count < 0.0 {
        return Err(Error::invalid(format!("event count must be non-negative, got {count}")));
    }
    Ok(count * 60.0 / t)
}

/// How the incoming catalog's `hr_bpm`/`rr_brpm` columns were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LabelConvention {
    /// Already per-minute rates (synthetic data); passed through.
    #[default]
    PerMinute,
    /// Event counts over the recording multiplied by two; re-derived with
    /// [`adjust_label`] over the post-trim duration.
    DoubledCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub snr_threshold_db: f64,
    pub trim_s: f64,
    pub target_fps: f32,
    pub height: usize,
    pub width: usize,
    pub labels: LabelConvention,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            snr_threshold_db: DEFAULT_SNR_THRESHOLD_DB,
            trim_s: 2.0,
            target_fps: 30.0,
            height: 32,
            width: 32,
            labels: LabelConvention::PerMinute,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipFailure {
    pub clip_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessOutcome {
    pub catalog: Catalog,
    pub verdicts: Vec<(String, QualityVerdict)>,
    pub failures: Vec<ClipFailure>,
}

impl PreprocessOutcome {
    pub fn retained(&self) -> usize {
        self.catalog.records.iter().filter(|r| r.quality_pass).count()
    }
}

/// The per-clip standardisation chain, without I/O.
pub fn standardize_clip(
    seq: &FrameSequence<u8>,
    cfg: &PreprocessConfig,
) -> Result<(FrameSequence<u8>, QualityVerdict)> {
    let seq = normalize_fps(seq, cfg.target_fps)?;
    let seq = trim_ends(&seq, cfg.trim_s)?;
    let seq = downsample_spatial(&seq, (cfg.height, cfg.width))?;
    let gate_input = if seq.channels() == 3 { extract_red(&seq)? } else { seq.clone() };
    let verdict = quality_gate(&gate_input, cfg.snr_threshold_db)?;
    Ok((seq, verdict))
}

fn process_record(rec: &ClipRecord, cfg: &PreprocessConfig, clip_dir: &Path) -> Result<(ClipRecord, QualityVerdict)> {
    let raw = read_clip(&rec.path)?;
    let (clip, verdict) = standardize_clip(&raw, cfg)?;
    let path = clip_dir.join(format!("{}.fvid", rec.clip_id));
    write_clip(&clip, &path)?;
    let duration = clip.duration_seconds();
    let (hr, rr) = match cfg.labels {
        LabelConvention::PerMinute => (rec.hr_bpm, rec.rr_brpm),
        LabelConvention::DoubledCount => (
            adjust_label(rec.hr_bpm / 2.0, duration)?,
            adjust_label(rec.rr_brpm / 2.0, duration)?,
        ),
    };
    let out = ClipRecord {
        clip_id: rec.clip_id.clone(),
        subject_id: rec.subject_id.clone(),
        path,
        fps: clip.fps() as f64,
        n_frames: clip.n_frames(),
        duration_s: duration,
        hr_bpm: hr,
        rr_brpm: rr,
        quality_pass: verdict.pass,
        split: Split::Unassigned,
    };
    Ok((out, verdict))
}

/// Runs the standardisation chain over a catalog, writing processed clips to
/// `out_dir/clips/` and the new catalog to `out_dir/catalog.csv`. A failing
/// clip is logged and dropped; the batch carries on.
pub fn preprocess_pipeline(catalog: &Catalog, cfg: &PreprocessConfig, out_dir: impl AsRef<Path>) -> Result<PreprocessOutcome> {
    let out_dir = out_dir.as_ref();
    let clip_dir = out_dir.join("clips");
    std::fs::create_dir_all(&clip_dir).map_err(|e| Error::io(&clip_dir, e))?;
    let mut records = Vec::with_capacity(catalog.len());
    let mut verdicts = Vec::new();
    let mut failures = Vec::new();
    for rec in &catalog.records {
        match process_record(rec, cfg, &clip_dir) {
            Ok((out, verdict)) => {
                if !verdict.pass {
                    log::info!("{}: quality gate failed (snr {:.2} dB)", rec.clip_id, verdict.snr_db);
                }
                verdicts.push((rec.clip_id.clone(), verdict));
                records.push(out);
            }
            Err(e) => {
                log::warn!("{}: {e}", rec.clip_id);
                failures.push(ClipFailure {
                    clip_id: rec.clip_id.clone(),
                    reason: e.to_string(),
                });
            }
        }
    }
    let catalog = Catalog::new(records)?;
    catalog.write(out_dir.join("catalog.csv"))?;
    Ok(PreprocessOutcome {
        catalog,
        verdicts,
        failures,
    })
}
