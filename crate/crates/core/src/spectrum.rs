//! Spectral helpers shared by the quality gate, the EEMD-PCA baseline and the
//! synthetic-data oracles.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakOptions {
    pub hann: bool,
    pub interpolate: bool,
}

impl PeakOptions {
    /// Raw periodogram peak at bin resolution.
    pub const RAW: Self = Self {
        hann: false,
        interpolate: false,
    };
    /// Hann window with parabolic interpolation on log power.
    pub const REFINED: Self = Self {
        hann: true,
        interpolate: true,
    };
}

pub fn hann<T: Scalar>(n: usize) -> Vec<T> {
    if n == 1 {
        return vec![T::one()];
    }
    let denom = (n - 1) as f64;
    (0..n)
        .map(|i| T::lit(0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / denom).cos()))
        .collect()
}

/// One-sided power spectrum `|X_k|^2`, `k = 0..=n/2`.
pub fn power_spectrum<T: Scalar>(x: &[T], window: bool) -> Vec<T> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let w = if window { hann::<T>(n) } else { vec![T::one(); n] };
    let mut buf: Vec<Complex<T>> = x
        .iter()
        .zip(&w)
        .map(|(&v, &wi)| Complex::new(v * wi, T::zero()))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf[..=n / 2].iter().map(|c| c.norm_sqr()).collect()
}

/// Frequency resolution of an `n`-point transform at sampling rate `fs`.
pub fn bin_hz(n: usize, fs: f64) -> f64 {
    fs / n as f64
}

/// Bin indices (excluding DC) whose centre frequency lies in `[lo, hi]`.
pub fn band_bins(n_fft: usize, fs: f64, (lo, hi): (f64, f64)) -> std::ops::RangeInclusive<usize> {
    let df = bin_hz(n_fft, fs);
    let first = ((lo / df).ceil() as usize).max(1);
    let last = ((hi / df).floor() as usize).min(n_fft / 2);
    first..=last
}

/// Frequency (Hz) of the strongest component inside `band`, or `None` when
/// the band holds no bins or no energy.
pub fn dominant_frequency<T: Scalar>(x: &[T], fs: f64, band: (f64, f64), opts: PeakOptions) -> Option<f64> {
    let n = x.len();
    if n < 4 {
        return None;
    }
    let mean = x.iter().copied().sum::<T>() / T::from_usize_lossy(n);
    let centered: Vec<T> = x.iter().map(|&v| v - mean).collect();
    let p = power_spectrum(&centered, opts.hann);
    let bins = band_bins(n, fs, band);
    if bins.is_empty() {
        return None;
    }
    let (k, peak) = bins
        .clone()
        .map(|k| (k, p[k]))
        .fold((0, T::neg_infinity()), |best, cur| if cur.1 > best.1 { cur } else { best });
    if !(peak > T::zero()) {
        return None;
    }
    let mut offset = 0.0;
    if opts.interpolate && k > 0 && k + 1 < p.len() {
        let (a, b, c) = (p[k - 1].to_f64_lossy(), peak.to_f64_lossy(), p[k + 1].to_f64_lossy());
        if a > 0.0 && c > 0.0 {
            let (la, lb, lc) = (a.ln(), b.ln(), c.ln());
            let denom = la - 2.0 * lb + lc;
            if denom < 0.0 {
                offset = (0.5 * (la - lc) / denom).clamp(-0.5, 0.5);
            }
        }
    }
    Some((k as f64 + offset) * bin_hz(n, fs))
}

/// Averaged periodogram over Hann-windowed segments with 50% overlap.
/// Returns the segment length used and the one-sided averaged power.
pub fn welch<T: Scalar>(x: &[T], seg_len: usize) -> (usize, Vec<T>) {
    let seg = seg_len.clamp(1, x.len().max(1));
    let hop = (seg / 2).max(1);
    let mut acc = vec![T::zero(); seg / 2 + 1];
    let mut count = 0usize;
    let mut start = 0;
    while start + seg <= x.len() {
        let chunk = &x[start..start + seg];
        let mean = chunk.iter().copied().sum::<T>() / T::from_usize_lossy(seg);
        let centered: Vec<T> = chunk.iter().map(|&v| v - mean).collect();
        for (a, p) in acc.iter_mut().zip(power_spectrum(&centered, true)) {
            *a += p;
        }
        count += 1;
        start += hop;
    }
    if count > 0 {
        let c = T::from_usize_lossy(count);
        acc.iter_mut().for_each(|a| *a /= c);
    }
    (seg, acc)
}

/// Removes the least-squares straight line.
pub fn detrend_linear<T: Scalar>(x: &[T]) -> Vec<T> {
    let n = x.len();
    if n < 2 {
        return vec![T::zero(); n];
    }
    let nf = n as f64;
    let tm = (nf - 1.0) / 2.0;
    let ym = x.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / nf;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, v) in x.iter().enumerate() {
        let dt = i as f64 - tm;
        sxy += dt * (v.to_f64_lossy() - ym);
        sxx += dt * dt;
    }
    let slope = sxy / sxx;
    x.iter()
        .enumerate()
        .map(|(i, &v)| v - T::lit(ym + slope * (i as f64 - tm)))
        .collect()
}

/// Subtracts a centred moving average of `window` samples (truncated at the
/// edges).
pub fn detrend_moving_average<T: Scalar>(x: &[T], window: usize) -> Vec<T> {
    let n = x.len();
    let half = window.max(1) / 2;
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0f64);
    for v in x {
        prefix.push(prefix.last().unwrap() + v.to_f64_lossy());
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            let avg = (prefix[hi] - prefix[lo]) / (hi - lo) as f64;
            x[i] - T::lit(avg)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tone(f: f64, fs: f64, n: usize, phase: f64) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * f * i as f64 / fs + phase).sin()).collect()
    }

    #[test]
    fn bin_aligned_tone_peaks_exactly() {
        let x = tone(1.5, 30.0, 600, 0.3);
        let f = dominant_frequency(&x, 30.0, (0.1, 15.0), PeakOptions::RAW).unwrap();
        assert!((f - 1.5).abs() < 1e-12);
    }

    #[test]
    fn interpolation_refines_off_bin_tone() {
        let fs = 30.0;
        let n = 780;
        let f0 = 1.2345;
        let x = tone(f0, fs, n, 1.0);
        let raw = dominant_frequency(&x, fs, (0.7, 3.5), PeakOptions::RAW).unwrap();
        let fine = dominant_frequency(&x, fs, (0.7, 3.5), PeakOptions::REFINED).unwrap();
        assert!((raw - f0).abs() <= bin_hz(n, fs) / 2.0 + 1e-12);
        assert!((fine - f0).abs() < 0.1 * bin_hz(n, fs));
    }

    #[test]
    fn band_restricts_search() {
        let x: Vec<f64> = tone(0.3, 30.0, 900, 0.0)
            .iter()
            .zip(tone(1.5, 30.0, 900, 0.0))
            .map(|(a, b)| 3.0 * a + b)
            .collect();
        let hr = dominant_frequency(&x, 30.0, (0.7, 3.5), PeakOptions::RAW).unwrap();
        let rr = dominant_frequency(&x, 30.0, (0.1, 0.7), PeakOptions::RAW).unwrap();
        assert!((hr - 1.5).abs() < 1e-9 && (rr - 0.3).abs() < 1e-9);
    }

    #[test]
    fn empty_band_or_flat_signal() {
        assert_eq!(dominant_frequency(&[1.0f64; 64], 30.0, (0.7, 3.5), PeakOptions::RAW), None);
        assert_eq!(dominant_frequency(&tone(1.0, 30.0, 64, 0.0), 30.0, (20.0, 30.0), PeakOptions::RAW), None);
    }

    #[test]
    fn detrending() {
        let line: Vec<f64> = (0..50).map(|i| 3.0 + 0.5 * i as f64).collect();
        assert!(detrend_linear(&line).iter().all(|v| v.abs() < 1e-9));
        let c = vec![7.0f64; 40];
        assert!(detrend_moving_average(&c, 9).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn welch_averages_segments() {
        let x = tone(2.0, 32.0, 256, 0.0);
        let (seg, p) = welch(&x, 64);
        assert_eq!(seg, 64);
        let k = p
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(k, 4);
    }
}
