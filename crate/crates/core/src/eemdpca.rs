//! EEMD-PCA baseline: ensemble empirical mode decomposition of the mean red
//! trace, band selection of the resulting modes, and the first principal
//! component of the selected modes as the rate-carrying signal.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrum::{detrend_linear, dominant_frequency, PeakOptions};
use crate::Scalar;

pub const MIN_SIGNAL_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EemdConfig {
    pub ensemble_size: usize,
    /// Added noise std as a fraction of the signal std.
    pub noise_std_ratio: f64,
    pub max_imfs: usize,
    /// Sifting stops once `sum (h_prev - h)^2 / sum h_prev^2` drops below this.
    pub sift_stop: f64,
    pub max_sift_iters: usize,
    pub hr_band: (f64, f64),
    pub rr_band: (f64, f64),
    /// IMFs with less than this share of the total IMF variance are ignored
    /// during band selection.
    pub min_energy_fraction: f64,
}

impl Default for EemdConfig {
    fn default() -> Self {
        Self {
            ensemble_size: 100,
            noise_std_ratio: 0.2,
            max_imfs: 10,
            sift_stop: 0.2,
            max_sift_iters: 50,
            hr_band: (0.7, 3.5),
            rr_band: (0.1, 0.7),
            min_energy_fraction: 0.01,
        }
    }
}

impl EemdConfig {
    pub fn validate(&self) -> Result<()> {
        let (hl, hh) = self.hr_band;
        let (rl, rh) = self.rr_band;
        let bands_ok = 0.0 < hl && hl < hh && 0.0 < rl && rl < rh && (rh <= hl || hh <= rl);
        if self.ensemble_size == 0 || self.max_imfs == 0 || self.max_sift_iters == 0 || !bands_ok {
            return Err(Error::invalid(
                "ensemble_size, max_imfs and max_sift_iters must be positive and bands disjoint and positive",
            ));
        }
        if !(self.noise_std_ratio >= 0.0 && self.sift_stop > 0.0 && (0.0..1.0).contains(&self.min_energy_fraction)) {
            return Err(Error::invalid("bad noise ratio, sift threshold or energy fraction"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImfSet<T> {
    pub imfs: Vec<Vec<T>>,
    pub residual: Vec<T>,
}

impl<T: Scalar> ImfSet<T> {
    pub fn reconstruct(&self) -> Vec<T> {
        let mut out = self.residual.clone();
        for imf in &self.imfs {
            for (o, &v) in out.iter_mut().zip(imf) {
                *o += v;
            }
        }
        out
    }
}

fn extrema<T: Scalar>(x: &[T]) -> (Vec<usize>, Vec<usize>) {
    let (mut maxima, mut minima) = (Vec::new(), Vec::new());
    for i in 1..x.len().saturating_sub(1) {
        if x[i] > x[i - 1] && x[i] >= x[i + 1] {
            maxima.push(i);
        } else if x[i] < x[i - 1] && x[i] <= x[i + 1] {
            minima.push(i);
        }
    }
    (maxima, minima)
}

/// Natural cubic spline through `(xs, ys)` evaluated at `0..n`. `xs` must be
/// strictly increasing with at least two knots.
pub fn natural_spline<T: Scalar>(xs: &[f64], ys: &[T], n: usize) -> Vec<T> {
    let k = xs.len();
    debug_assert!(k >= 2 && ys.len() == k);
    let two = T::lit(2.0);
    let six = T::lit(6.0);
    let h: Vec<T> = xs.windows(2).map(|w| T::lit(w[1] - w[0])).collect();
    // second derivatives via the tridiagonal system, natural end conditions
    let mut m = vec![T::zero(); k];
    if k > 2 {
        let inner = k - 2;
        let mut diag = vec![T::zero(); inner];
        let mut rhs = vec![T::zero(); inner];
        for i in 0..inner {
            diag[i] = two * (h[i] + h[i + 1]);
            rhs[i] = six * ((ys[i + 2] - ys[i + 1]) / h[i + 1] - (ys[i + 1] - ys[i]) / h[i]);
        }
        for i in 1..inner {
            let w = h[i] / diag[i - 1];
            diag[i] -= w * h[i];
            let prev = rhs[i - 1];
            rhs[i] -= w * prev;
        }
        m[inner] = rhs[inner - 1] / diag[inner - 1];
        for i in (0..inner - 1).rev() {
            m[i + 1] = (rhs[i] - h[i + 1] * m[i + 2]) / diag[i];
        }
    }
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for t in 0..n {
        let tf = t as f64;
        while seg + 2 < k && tf > xs[seg + 1] {
            seg += 1;
        }
        let hi = h[seg];
        let a = T::lit(xs[seg + 1] - tf);
        let b = T::lit(tf - xs[seg]);
        let v = m[seg] * a * a * a / (six * hi)
            + m[seg + 1] * b * b * b / (six * hi)
            + (ys[seg] / hi - m[seg] * hi / six) * a
            + (ys[seg + 1] / hi - m[seg + 1] * hi / six) * b;
        out.push(v);
    }
    out
}

/// Envelope through the given extrema, extended past both ends by mirroring
/// the two outermost extrema about the end samples.
fn envelope<T: Scalar>(x: &[T], idx: &[usize]) -> Vec<T> {
    let n = x.len();
    let end = (n - 1) as f64;
    let mut knots: Vec<(f64, T)> = Vec::with_capacity(idx.len() + 4);
    for &i in idx.iter().take(2).rev() {
        knots.push((-(i as f64), x[i]));
    }
    knots.extend(idx.iter().map(|&i| (i as f64, x[i])));
    for &i in idx.iter().rev().take(2) {
        knots.push((2.0 * end - i as f64, x[i]));
    }
    let (xs, ys): (Vec<f64>, Vec<T>) = knots.into_iter().unzip();
    natural_spline(&xs, &ys, n)
}

fn can_sift(maxima: &[usize], minima: &[usize]) -> bool {
    !maxima.is_empty() && !minima.is_empty()
}

fn sift<T: Scalar>(r: &[T], cfg: &EemdConfig) -> Vec<T> {
    let half = T::lit(0.5);
    let stop = T::lit(cfg.sift_stop);
    let mut h = r.to_vec();
    for _ in 0..cfg.max_sift_iters {
        let (maxima, minima) = extrema(&h);
        if !can_sift(&maxima, &minima) {
            break;
        }
        let upper = envelope(&h, &maxima);
        let lower = envelope(&h, &minima);
        let mut num = T::zero();
        let mut den = T::zero();
        for ((v, &u), &l) in h.iter_mut().zip(&upper).zip(&lower) {
            let mean = half * (u + l);
            num += mean * mean;
            den += *v * *v;
            *v -= mean;
        }
        if den == T::zero() || num / den < stop {
            break;
        }
    }
    h
}

/// Empirical mode decomposition by envelope-mean sifting.
pub fn emd<T: Scalar>(signal: &[T], cfg: &EemdConfig) -> Result<ImfSet<T>> {
    if signal.len() < MIN_SIGNAL_LEN {
        return Err(Error::TooShort(format!("EMD needs {MIN_SIGNAL_LEN} samples, got {}", signal.len())));
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("signal contains non-finite values"));
    }
    let mut residual = signal.to_vec();
    let mut imfs = Vec::new();
    while imfs.len() < cfg.max_imfs {
        let (maxima, minima) = extrema(&residual);
        if !can_sift(&maxima, &minima) {
            break;
        }
        let imf = sift(&residual, cfg);
        for (r, &v) in residual.iter_mut().zip(&imf) {
            *r -= v;
        }
        imfs.push(imf);
    }
    Ok(ImfSet { imfs, residual })
}

fn std_dev<T: Scalar>(x: &[T]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / n;
    (x.iter().map(|v| (v.to_f64_lossy() - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Ensemble EMD: the mean of `ensemble_size` decompositions of noise-added
/// copies, with modes aligned by index (missing modes count as zero).
pub fn eemd<T: Scalar>(signal: &[T], cfg: &EemdConfig, seed: u64) -> Result<ImfSet<T>> {
    cfg.validate()?;
    let n = signal.len();
    let noise_sd = cfg.noise_std_ratio * std_dev(signal);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut imf_sum: Vec<Vec<T>> = Vec::new();
    let mut residual_sum = vec![T::zero(); n];
    for _ in 0..cfg.ensemble_size {
        let noisy: Vec<T> = if noise_sd > 0.0 {
            signal
                .iter()
                .map(|&v| v + T::lit(noise_sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)))
                .collect()
        } else {
            signal.to_vec()
        };
        let set = emd(&noisy, cfg)?;
        for (i, imf) in set.imfs.iter().enumerate() {
            if imf_sum.len() <= i {
                imf_sum.push(vec![T::zero(); n]);
            }
            for (a, &v) in imf_sum[i].iter_mut().zip(imf) {
                *a += v;
            }
        }
        for (a, &v) in residual_sum.iter_mut().zip(&set.residual) {
            *a += v;
        }
    }
    let count = T::from_usize_lossy(cfg.ensemble_size);
    let scale = |v: Vec<T>| v.into_iter().map(|x| x / count).collect::<Vec<T>>();
    Ok(ImfSet {
        imfs: imf_sum.into_iter().map(scale).collect(),
        residual: scale(residual_sum),
    })
}

fn variance<T: Scalar>(x: &[T]) -> f64 {
    std_dev(x).powi(2)
}

/// First principal component of the modes whose dominant frequency lies in
/// `band` and whose variance reaches `min_energy_fraction` of the total mode
/// variance. The sign is chosen to correlate positively with the sum of the
/// selected modes.
pub fn pca_select<T: Scalar>(set: &ImfSet<T>, fs: f64, band: (f64, f64), min_energy_fraction: f64) -> Result<Vec<T>> {
    let band_empty = || Error::BandEmpty { lo: band.0, hi: band.1 };
    if set.imfs.is_empty() {
        return Err(band_empty());
    }
    let total: f64 = set.imfs.iter().map(|m| variance(m)).sum();
    let nyquist = (0.0, fs / 2.0);
    let selected: Vec<&Vec<T>> = set
        .imfs
        .iter()
        .filter(|m| total > 0.0 && variance(m) >= min_energy_fraction * total)
        .filter(|m| {
            dominant_frequency(m, fs, nyquist, PeakOptions::REFINED).is_some_and(|f| band.0 <= f && f <= band.1)
        })
        .collect();
    if selected.is_empty() {
        return Err(band_empty());
    }
    let n = set.residual.len();
    let k = selected.len();
    let mut x = DMatrix::<f64>::zeros(n, k);
    for (j, m) in selected.iter().enumerate() {
        let mean = m.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / n as f64;
        for (i, v) in m.iter().enumerate() {
            x[(i, j)] = v.to_f64_lossy() - mean;
        }
    }
    let cov = x.transpose() * &x / (n.max(2) - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let top = eig.eigenvalues.imax();
    let mut v = eig.eigenvectors.column(top).into_owned();
    let pc = &x * &v;
    let reference: f64 = (0..n).map(|i| x.row(i).sum() * pc[i]).sum();
    if reference < 0.0 {
        v = -v;
    }
    let pc = &x * &v;
    Ok(pc.iter().map(|&p| T::lit(p)).collect())
}

/// Per-quantity outcome of [`estimate`]; a band can come up empty on its own.
#[derive(Debug)]
pub struct BaselineEstimate {
    pub hr_bpm: Result<f64>,
    pub rr_brpm: Result<f64>,
}

/// HR and RR from a mean-pixel trace sampled at `fps`.
pub fn estimate<T: Scalar>(trace: &[T], fps: f64, cfg: &EemdConfig, seed: u64) -> Result<BaselineEstimate> {
    cfg.validate()?;
    if !(fps > 0.0) {
        return Err(Error::invalid("fps must be positive"));
    }
    let x = detrend_linear(trace);
    let set = eemd(&x, cfg, seed)?;
    let rate = |band: (f64, f64)| -> Result<f64> {
        let pc = pca_select(&set, fps, band, cfg.min_energy_fraction)?;
        dominant_frequency(&pc, fps, band, PeakOptions::REFINED)
            .map(|f| 60.0 * f)
            .ok_or(Error::BandEmpty { lo: band.0, hi: band.1 })
    };
    Ok(BaselineEstimate {
        hr_bpm: rate(cfg.hr_band),
        rr_brpm: rate(cfg.rr_band),
    })
}
