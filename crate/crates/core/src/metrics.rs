//! Per-realization validation metrics and their set-level summary.
//!
//! * ACG: `10·log10(mean |H|²)`.
//! * RMS delay spread: power-weighted second central moment of the inverse
//!   DFT of the CFR, with taps at or past `N/2` placed at negative delays.
//! * Coherence bandwidth: first lag where the overlap-normalized frequency
//!   autocorrelation drops below `level·|R(0)|`.
//! * Condition number: `20·log10(σ_max/σ_min)` per bin, averaged over bins.

use nalgebra::DMatrix;
use ndarray::{Array3, ArrayView1};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::error::{dim_mismatch, Error, Result};
use crate::model::{ChannelSet, ModeCombination};

pub const DEFAULT_CB_LEVEL: f64 = 0.9;

fn check_cfr(cfr: &[Complex64]) -> Result<()> {
    if cfr.is_empty() {
        return Err(Error::InvalidInput("empty frequency response".into()));
    }
    if let Some(n) = cfr.iter().position(|h| h.re == 0.0 && h.im == 0.0) {
        return Err(Error::InvalidInput(format!("zero entry at bin {n}")));
    }
    Ok(())
}

/// Average channel gain in dB.
pub fn acg(cfr: &[Complex64]) -> Result<f64> {
    check_cfr(cfr)?;
    let power = cfr.iter().map(|h| h.norm_sqr()).sum::<f64>() / cfr.len() as f64;
    Ok(10.0 * power.log10())
}

/// Channel impulse response on `N` taps spaced `1/(N·f_step)`.
pub fn impulse_response(cfr: &[Complex64]) -> Vec<Complex64> {
    let n = cfr.len();
    let mut buf = cfr.to_vec();
    FftPlanner::<f64>::new().plan_fft_inverse(n).process(&mut buf);
    let inv = 1.0 / n as f64;
    buf.iter_mut().for_each(|v| *v *= inv);
    buf
}

/// Delay of tap `k` out of `n`, in units of the tap spacing.
fn signed_tap(k: usize, n: usize) -> f64 {
    if 2 * k >= n {
        k as f64 - n as f64
    } else {
        k as f64
    }
}

/// First and second power-weighted delay moments in seconds.
pub fn delay_moments(cfr: &[Complex64], f_step: f64) -> Result<(f64, f64)> {
    if cfr.len() < 2 {
        return Err(Error::InvalidInput("delay spread needs at least 2 bins".into()));
    }
    let h = impulse_response(cfr);
    let n = h.len();
    let dt = 1.0 / (n as f64 * f_step);
    let (mut p0, mut p1, mut p2) = (0.0, 0.0, 0.0);
    for (k, v) in h.iter().enumerate() {
        let p = v.norm_sqr();
        let t = signed_tap(k, n) * dt;
        p0 += p;
        p1 += p * t;
        p2 += p * t * t;
    }
    if p0 == 0.0 {
        return Err(Error::InvalidInput("impulse response has no power".into()));
    }
    Ok((p1 / p0, p2 / p0))
}

/// RMS delay spread in seconds.
pub fn rms_ds(cfr: &[Complex64], f_step: f64) -> Result<f64> {
    let (m1, m2) = delay_moments(cfr, f_step)?;
    Ok((m2 - m1 * m1).max(0.0).sqrt())
}

/// `|R_H(Δ)|` for `Δ = 0..N`, each lag normalized by its overlap count
/// `N − Δ`.
pub fn frequency_autocorrelation(cfr: &[Complex64]) -> Vec<f64> {
    let n = cfr.len();
    let len = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    buf[..n].copy_from_slice(cfr);
    planner.plan_fft_forward(len).process(&mut buf);
    for v in buf.iter_mut() {
        *v = Complex64::new(v.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    (0..n)
        .map(|d| buf[d].norm() / len as f64 / (n - d) as f64)
        .collect()
}

/// Coherence bandwidth in Hz at `level` (0.9 by convention). A response
/// that never decorrelates reports the full band `(N_f − 1)·f_step`.
pub fn coherence_bw(cfr: &[Complex64], f_step: f64, level: f64) -> Result<f64> {
    if cfr.len() < 2 {
        return Err(Error::InvalidInput("coherence bandwidth needs at least 2 bins".into()));
    }
    let r = frequency_autocorrelation(cfr);
    let threshold = level * r[0];
    let lag = r
        .iter()
        .enumerate()
        .skip(1)
        .find(|(_, &v)| v < threshold)
        .map_or(cfr.len() - 1, |(d, _)| d);
    Ok(lag as f64 * f_step)
}

/// Condition number in dB of one `N_R × N_T` matrix; `+∞` when singular.
pub fn condition_number(h: &DMatrix<Complex64>) -> Result<f64> {
    if h.nrows().min(h.ncols()) < 2 {
        return Err(Error::InvalidInput(format!(
            "condition number needs at least a 2×2 channel, got {}×{}",
            h.nrows(),
            h.ncols()
        )));
    }
    let sv = h.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (max / min).log10())
}

/// Frequency-averaged condition number of a realization and the number of
/// singular bins left out of the average.
pub fn condition_number_avg(h: &Array3<Complex64>) -> Result<(f64, usize)> {
    let (nr, nt, nf) = h.dim();
    let mut sum = 0.0;
    let mut finite = 0;
    let mut singular = 0;
    for n in 0..nf {
        let m = DMatrix::from_fn(nr, nt, |j, i| h[[j, i, n]]);
        let k = condition_number(&m)?;
        if k.is_finite() {
            sum += k;
            finite += 1;
        } else {
            singular += 1;
        }
    }
    let avg = if finite > 0 { sum / finite as f64 } else { f64::INFINITY };
    Ok((avg, singular))
}

/// Metrics of one (realization, mode) response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeMetrics {
    pub combo: ModeCombination,
    pub acg_db: f64,
    pub rms_ds_s: f64,
    pub cb_hz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealizationMetrics {
    pub realization: usize,
    /// One entry per mode, in reshape order.
    pub modes: Vec<ModeMetrics>,
    /// `None` for SISO.
    pub kappa_db: Option<f64>,
    pub singular_bins: usize,
}

fn mode_response(h: &Array3<Complex64>, j: usize, i: usize) -> Vec<Complex64> {
    let v: ArrayView1<'_, Complex64> = h.slice(ndarray::s![j, i, ..]);
    v.to_vec()
}

pub fn realization_metrics(set: &ChannelSet, r: usize) -> Result<RealizationMetrics> {
    let grid = set.grid();
    let h = set
        .realizations()
        .get(r)
        .ok_or_else(|| Error::InvalidInput(format!("no realization {r}")))?;
    let f_step = grid.f_step();
    let mut modes = Vec::with_capacity(grid.combos().len());
    for (i, _) in grid.tx_modes().iter().enumerate() {
        for (j, _) in grid.rx_modes().iter().enumerate() {
            let cfr = mode_response(h, j, i);
            modes.push(ModeMetrics {
                combo: ModeCombination::new(grid.tx_modes()[i], grid.rx_modes()[j]),
                acg_db: acg(&cfr)?,
                rms_ds_s: rms_ds(&cfr, f_step)?,
                cb_hz: coherence_bw(&cfr, f_step, DEFAULT_CB_LEVEL)?,
            });
        }
    }
    let (kappa_db, singular_bins) = if grid.n_tx().min(grid.n_rx()) >= 2 {
        let (k, s) = condition_number_avg(h)?;
        (Some(k), s)
    } else {
        (None, 0)
    };
    Ok(RealizationMetrics {
        realization: r,
        modes,
        kappa_db,
        singular_bins,
    })
}

/// Metrics of every realization, in realization order.
pub fn compute_metrics(set: &ChannelSet) -> Result<Vec<RealizationMetrics>> {
    (0..set.len())
        .into_par_iter()
        .map(|r| realization_metrics(set, r))
        .collect()
}

/// Mean and spread of one metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsSummary {
    pub n_realizations: usize,
    pub n_modes: usize,
    pub acg_db: Stat,
    pub rms_ds_us: Stat,
    pub cb_khz: Stat,
    pub kappa_db: Option<Stat>,
    pub capacity_gbps: Option<Stat>,
    /// Set when a single realization makes the spread undefined; it is
    /// then reported as 0.
    pub degenerate_std: bool,
    /// Realizations whose condition number was infinite at every bin.
    pub infinite_kappa: usize,
    /// Singular bins excluded from the condition-number averages.
    pub singular_bins: usize,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (`n − 1`); 0 for fewer than two values.
pub fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Pooled mean over realizations and modes; spread is the per-mode std
/// over realizations, averaged over modes.
fn pooled(per_mode: &[Vec<f64>]) -> Stat {
    let all: Vec<f64> = per_mode.iter().flatten().copied().collect();
    let std = per_mode.iter().map(|v| sample_std(v)).sum::<f64>() / per_mode.len() as f64;
    Stat { mean: mean(&all), std }
}

/// Summarizes per-realization metrics; `capacity_bps` (one value per
/// realization) is folded in when given.
pub fn summarize(metrics: &[RealizationMetrics], capacity_bps: Option<&[f64]>) -> Result<MetricsSummary> {
    let first = metrics
        .first()
        .ok_or_else(|| Error::InvalidInput("cannot summarize an empty set".into()))?;
    let n_modes = first.modes.len();
    if metrics.iter().any(|m| m.modes.len() != n_modes) {
        return Err(Error::InvalidInput("realizations disagree on the number of modes".into()));
    }
    let column = |f: &dyn Fn(&ModeMetrics) -> f64| -> Vec<Vec<f64>> {
        (0..n_modes)
            .map(|k| metrics.iter().map(|m| f(&m.modes[k])).collect())
            .collect()
    };
    let acg_db = pooled(&column(&|m| m.acg_db));
    let rms_ds_us = pooled(&column(&|m| m.rms_ds_s * 1e6));
    let cb_khz = pooled(&column(&|m| m.cb_hz * 1e-3));

    let kappas: Vec<f64> = metrics.iter().filter_map(|m| m.kappa_db).collect();
    let finite: Vec<f64> = kappas.iter().copied().filter(|k| k.is_finite()).collect();
    let kappa_db = (!finite.is_empty()).then(|| Stat {
        mean: mean(&finite),
        std: sample_std(&finite),
    });

    let capacity_gbps = match capacity_bps {
        Some(c) if c.len() != metrics.len() => return Err(dim_mismatch(metrics.len(), c.len())),
        Some(c) => {
            let g: Vec<f64> = c.iter().map(|v| v * 1e-9).collect();
            Some(Stat {
                mean: mean(&g),
                std: sample_std(&g),
            })
        }
        None => None,
    };

    Ok(MetricsSummary {
        n_realizations: metrics.len(),
        n_modes,
        acg_db,
        rms_ds_us,
        cb_khz,
        kappa_db,
        capacity_gbps,
        degenerate_std: metrics.len() < 2,
        infinite_kappa: kappas.len() - finite.len(),
        singular_bins: metrics.iter().map(|m| m.singular_bins).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MimoGrid, RxPort, TxPort};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn random_cfr(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
        (0..n)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    /// Direct `Σ H(n)·conj(H(n+Δ)) / (N − Δ)` scan.
    fn brute_cb(cfr: &[Complex64], f_step: f64, level: f64) -> f64 {
        let n = cfr.len();
        let r = |d: usize| -> f64 {
            let s: Complex64 = (0..n - d).map(|k| cfr[k] * cfr[k + d].conj()).sum();
            s.norm() / (n - d) as f64
        };
        let r0 = r(0);
        for d in 1..n {
            if r(d) < level * r0 {
                return d as f64 * f_step;
            }
        }
        (n - 1) as f64 * f_step
    }

    #[test]
    fn acg_examples() {
        assert_abs_diff_eq!(acg(&[c(1.0); 8]).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(acg(&[c(0.1); 8]).unwrap(), -20.0, epsilon = 1e-12);
        assert_abs_diff_eq!(acg(&[c(1.0), c(0.1)]).unwrap(), -2.967, epsilon = 1e-3);
        assert_abs_diff_eq!(acg(&[c(1.0), c(0.1)]).unwrap(), 10.0 * 0.505f64.log10(), epsilon = 1e-12);
        assert!(acg(&[c(1.0), c(0.0)]).is_err());
    }

    #[test]
    fn rms_ds_examples() {
        let n = 64;
        let f_step = 62.5e3;
        let dt = 1.0 / (n as f64 * f_step);
        let tau0 = 5.0 * dt;
        let single: Vec<Complex64> = (0..n)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * (1.8e6 + k as f64 * f_step) * tau0))
            .collect();
        assert_abs_diff_eq!(rms_ds(&single, f_step).unwrap(), 0.0, epsilon = 1e-15);

        let t = 6.0 * dt;
        let two: Vec<Complex64> = (0..n)
            .map(|k| c(1.0) + Complex64::from_polar(1.0, -2.0 * PI * k as f64 * f_step * t))
            .collect();
        assert_abs_diff_eq!(rms_ds(&two, f_step).unwrap(), t / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn rms_ds_shift_and_phase_invariance() {
        let n = 128;
        let f_step = 62.5e3;
        let dt = 1.0 / (n as f64 * f_step);
        // Compact three-tap profile around delay 0.
        let taps = [(0usize, 1.0), (2, 0.6), (5, 0.3)];
        let build = |shift: usize| -> Vec<Complex64> {
            (0..n)
                .map(|k| {
                    taps.iter()
                        .map(|&(d, a)| {
                            Complex64::from_polar(a, -2.0 * PI * k as f64 * ((d + shift) as f64) / n as f64)
                        })
                        .sum()
                })
                .collect()
        };
        let base = build(0);
        let shifted = build(7);
        let s0 = rms_ds(&base, f_step).unwrap();
        assert_abs_diff_eq!(rms_ds(&shifted, f_step).unwrap(), s0, epsilon = 1e-14);
        let (m0, _) = delay_moments(&base, f_step).unwrap();
        let (m1, _) = delay_moments(&shifted, f_step).unwrap();
        assert_abs_diff_eq!(m1 - m0, 7.0 * dt, epsilon = 1e-14);
        let rotated: Vec<Complex64> = base.iter().map(|h| h * Complex64::from_polar(1.0, 0.7)).collect();
        assert_abs_diff_eq!(rms_ds(&rotated, f_step).unwrap(), s0, epsilon = 1e-15);
    }

    #[test]
    fn cb_examples() {
        let f_step = 62.5e3;
        assert_eq!(coherence_bw(&[c(0.3); 50], f_step, 0.9).unwrap(), 49.0 * f_step);
        let alt: Vec<Complex64> = (0..40).map(|k| c(if k % 2 == 0 { 1.0 } else { -1.0 })).collect();
        assert_eq!(coherence_bw(&alt, f_step, 0.9).unwrap(), brute_cb(&alt, f_step, 0.9));
        assert_eq!(coherence_bw(&alt, f_step, 0.9).unwrap(), 39.0 * f_step);
    }

    #[test]
    fn cb_matches_brute_force_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for n in [2, 3, 17, 64, 200] {
            for _ in 0..10 {
                // Smooth the random response so crossings happen past lag 1.
                let raw = random_cfr(&mut rng, n + 4);
                let cfr: Vec<Complex64> = (0..n).map(|k| raw[k..k + 5].iter().sum()).collect();
                assert_eq!(coherence_bw(&cfr, 62.5e3, 0.9).unwrap(), brute_cb(&cfr, 62.5e3, 0.9));
            }
        }
    }

    proptest! {
        #[test]
        fn cb_is_scale_invariant_and_quantized(seed in 0u64..500, g in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let raw = random_cfr(&mut rng, 68);
            let cfr: Vec<Complex64> = (0..64).map(|k| raw[k..k + 5].iter().sum()).collect();
            let scaled: Vec<Complex64> = cfr.iter().map(|h| h * g).collect();
            let a = coherence_bw(&cfr, 62.5e3, 0.9).unwrap();
            prop_assert_eq!(a, coherence_bw(&scaled, 62.5e3, 0.9).unwrap());
            prop_assert_eq!((a / 62.5e3).fract(), 0.0);
        }

        #[test]
        fn acg_shift_equivariance(seed in 0u64..500, g in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfr = random_cfr(&mut rng, 32);
            let scaled: Vec<Complex64> = cfr.iter().map(|h| h * g).collect();
            let d = acg(&scaled).unwrap() - acg(&cfr).unwrap();
            prop_assert!((d - 20.0 * g.log10()).abs() < 1e-9);
        }

        #[test]
        fn kappa_invariances(seed in 0u64..500, g in 0.01f64..100.0, theta in 0.0f64..std::f64::consts::TAU) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = DMatrix::from_fn(3, 2, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            let k = condition_number(&h).unwrap();
            let scaled = &h * Complex64::new(g, 0.0);
            prop_assert!((condition_number(&scaled).unwrap() - k).abs() < 1e-8);
            let (cs, sn) = (theta.cos(), theta.sin());
            let u = DMatrix::from_row_slice(2, 2, &[
                Complex64::new(cs, 0.0), Complex64::new(-sn, 0.0),
                Complex64::new(sn, 0.0), Complex64::new(cs, 0.0),
            ]);
            prop_assert!((condition_number(&(&h * &u)).unwrap() - k).abs() < 1e-8);
            let mut v = DMatrix::<Complex64>::identity(3, 3);
            v[(0, 0)] = Complex64::from_polar(1.0, theta);
            prop_assert!((condition_number(&(&v * &h)).unwrap() - k).abs() < 1e-8);
        }
    }

    #[test]
    fn kappa_examples() {
        let orth = DMatrix::from_row_slice(3, 2, &[c(1.0), c(0.0), c(0.0), c(1.0), c(0.0), c(0.0)]);
        assert_abs_diff_eq!(condition_number(&orth).unwrap(), 0.0, epsilon = 1e-12);
        let d = DMatrix::from_row_slice(3, 2, &[c(2.0), c(0.0), c(0.0), c(1.0), c(0.0), c(0.0)]);
        assert_abs_diff_eq!(condition_number(&d).unwrap(), 6.0206, epsilon = 1e-4);
        let sing = DMatrix::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), c(0.0)]);
        assert_eq!(condition_number(&sing).unwrap(), f64::INFINITY);
        assert!(condition_number(&DMatrix::from_element(1, 1, c(1.0))).is_err());
    }

    fn mm(acg_db: f64) -> ModeMetrics {
        ModeMetrics {
            combo: ModeCombination::new(TxPort::PN, RxPort::P),
            acg_db,
            rms_ds_s: 0.0,
            cb_hz: 0.0,
        }
    }

    #[test]
    fn summary_hand_computed() {
        // Two realizations, two modes: mode 0 = {−40, −44}, mode 1 = {−50, −50}.
        let ms = vec![
            RealizationMetrics {
                realization: 0,
                modes: vec![mm(-40.0), mm(-50.0)],
                kappa_db: Some(10.0),
                singular_bins: 0,
            },
            RealizationMetrics {
                realization: 1,
                modes: vec![mm(-44.0), mm(-50.0)],
                kappa_db: Some(14.0),
                singular_bins: 0,
            },
        ];
        let s = summarize(&ms, Some(&[1e9, 2e9])).unwrap();
        assert_abs_diff_eq!(s.acg_db.mean, -46.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.acg_db.std, 8f64.sqrt() / 2.0, epsilon = 1e-12);
        let k = s.kappa_db.unwrap();
        assert_abs_diff_eq!(k.mean, 12.0, epsilon = 1e-12);
        assert_abs_diff_eq!(k.std, 8f64.sqrt(), epsilon = 1e-12);
        let cap = s.capacity_gbps.unwrap();
        assert_abs_diff_eq!(cap.mean, 1.5, epsilon = 1e-12);
        assert!(!s.degenerate_std);
    }

    #[test]
    fn single_realization_summary_is_flagged() {
        let ms = vec![RealizationMetrics {
            realization: 0,
            modes: vec![mm(-40.0)],
            kappa_db: None,
            singular_bins: 0,
        }];
        let s = summarize(&ms, None).unwrap();
        assert_eq!(s.acg_db.std, 0.0);
        assert!(s.degenerate_std);
        assert!(s.kappa_db.is_none());
        assert!(summarize(&[], None).is_err());
    }

    #[test]
    fn one_row_per_mode() {
        let grid = MimoGrid::new(1.8e6, 62.5e3, 16, vec![TxPort::PN, TxPort::PE], vec![RxPort::P, RxPort::N, RxPort::CM])
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = Array3::from_shape_fn((3, 2, 16), |_| {
            Complex64::new(rng.random_range(0.1..1.0), rng.random_range(0.1..1.0))
        });
        let set = ChannelSet::new(grid, vec![h]).unwrap();
        let m = compute_metrics(&set).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].modes.len(), 6);
        assert_eq!(m[0].modes[5].combo.index, 6);
        assert!(m[0].kappa_db.unwrap().is_finite());
    }
}
