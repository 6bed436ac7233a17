//! Parameter estimation from a channel set: the inverse of the generator.
//!
//! Amplitude profiles are estimated per frequency and mode and summarized by
//! robust straight lines; diagonal blocks of the empirical amplitude
//! correlation are averaged along their stripes and fitted with the power
//! law (plus the exponential tail for CM); unwrapped phase slopes are fitted
//! with a GEV law.

pub mod fit;
pub mod phase;

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par};
use rayon::prelude::*;

use crate::covariance::{scale_by_vector, AntiDiagonalProfile, BlockCovariance, CovarianceKind};
use crate::error::{Error, Result};
use crate::generator::EmpiricalMatrices;
use crate::model::{split_db, ChannelSet, ExpCorrection, MimoGrid, ModeCombination, ModelParameters, PowerLaw};

pub use fit::{fit_exponential_tail, fit_power, fit_power_from, fit_power_saturating, robust_linear_fit, FitDiagnostics};
pub use phase::{extract_phase_slopes, fit_gev, unwrap_phase};

/// Per-frequency amplitude statistics of one mode combination.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileEstimate {
    pub combo: ModeCombination,
    /// dB, one per bin.
    pub mean: Vec<f64>,
    /// dB, sample standard deviation (`n − 1`).
    pub std: Vec<f64>,
}

fn require_realizations(set: &ChannelSet, needed: usize) -> Result<()> {
    if set.len() < needed {
        return Err(Error::InsufficientData(format!(
            "need at least {needed} realizations, got {}",
            set.len()
        )));
    }
    Ok(())
}

/// Amplitudes in dB as an `M × n` matrix, one realization per column.
fn amplitude_matrix(set: &ChannelSet) -> Mat<f64> {
    let shape = set.grid().shape();
    let mut x = Mat::<f64>::zeros(shape.len(), set.len());
    for (r, h) in set.realizations().iter().enumerate() {
        for ((j, i, n), v) in h.indexed_iter() {
            x[(shape.linear_index(i, j, n), r)] = 20.0 * v.norm().log10();
        }
    }
    x
}

/// Principal phases as an `M × n` matrix.
fn phase_matrix(set: &ChannelSet) -> Mat<f64> {
    let shape = set.grid().shape();
    let mut x = Mat::<f64>::zeros(shape.len(), set.len());
    for (r, h) in set.realizations().iter().enumerate() {
        for ((j, i, n), v) in h.indexed_iter() {
            x[(shape.linear_index(i, j, n), r)] = split_db(*v).1;
        }
    }
    x
}

/// Mean and standard deviation (`n − 1`) of every amplitude coordinate.
pub fn estimate_profiles(set: &ChannelSet) -> Result<Vec<ProfileEstimate>> {
    require_realizations(set, 2)?;
    let grid = set.grid();
    let nf = grid.n_freq();
    let x = amplitude_matrix(set);
    let n = set.len() as f64;
    Ok(grid
        .combos()
        .into_iter()
        .enumerate()
        .map(|(c, combo)| {
            let (mean, std) = (0..nf)
                .map(|k| {
                    let row = x.row(c * nf + k);
                    let m = row.iter().sum::<f64>() / n;
                    let var = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
                    (m, var.sqrt())
                })
                .unzip();
            ProfileEstimate { combo, mean, std }
        })
        .collect())
}

fn coordinate_label(grid: &MimoGrid, p: usize) -> String {
    let (i, j, n) = grid.shape().split_index(p);
    format!(
        "{}/{} at {} Hz",
        grid.tx_modes()[i],
        grid.rx_modes()[j],
        grid.frequency(n)
    )
}

/// Pearson correlation between the rows of `a` and the rows of `b`
/// (columns are observations). `labels` names a row for error messages.
fn cross_correlation(a: MatRef<'_, f64>, b: MatRef<'_, f64>, label: &dyn Fn(usize) -> String) -> Result<Mat<f64>> {
    let n = a.ncols();
    let center = |x: MatRef<'_, f64>| -> Result<Mat<f64>> {
        let mut c = x.to_owned();
        for p in 0..c.nrows() {
            let m = c.row(p).iter().sum::<f64>() / n as f64;
            let mut ss = 0.0;
            for r in 0..n {
                c[(p, r)] -= m;
                ss += c[(p, r)] * c[(p, r)];
            }
            let scale = m.abs().max(1.0);
            if ss.sqrt() <= 1e-12 * scale * (n as f64).sqrt() {
                return Err(Error::UndefinedCorrelation {
                    coordinate: p,
                    label: label(p),
                });
            }
            let inv = 1.0 / ss.sqrt();
            for r in 0..n {
                c[(p, r)] *= inv;
            }
        }
        Ok(c)
    };
    let ca = center(a)?;
    let cb = center(b)?;
    let mut out = Mat::<f64>::zeros(a.nrows(), b.nrows());
    matmul(out.as_mut(), Accum::Replace, ca.as_ref(), cb.transpose(), 1.0, Par::Seq);
    Ok(out)
}

fn autocorrelation(x: MatRef<'_, f64>, label: &dyn Fn(usize) -> String) -> Result<Mat<f64>> {
    let mut r = cross_correlation(x, x, label)?;
    let m = r.nrows();
    for q in 0..m {
        r[(q, q)] = 1.0;
        for p in 0..q {
            let v = 0.5 * (r[(p, q)] + r[(q, p)]);
            r[(p, q)] = v;
            r[(q, p)] = v;
        }
    }
    Ok(r)
}

/// Empirical normalized covariance of the amplitudes (dB) and of the
/// phases, over realizations.
pub fn empirical_block_r(set: &ChannelSet) -> Result<(BlockCovariance, BlockCovariance)> {
    Ok((empirical_amplitude_r(set)?, empirical_phase_r(set)?))
}

pub fn empirical_amplitude_r(set: &ChannelSet) -> Result<BlockCovariance> {
    require_realizations(set, 2)?;
    let grid = set.grid();
    let r = autocorrelation(amplitude_matrix(set).as_ref(), &|p| coordinate_label(grid, p))?;
    BlockCovariance::from_matrix(grid.combos(), grid.n_freq(), CovarianceKind::Normalized, r)
}

pub fn empirical_phase_r(set: &ChannelSet) -> Result<BlockCovariance> {
    require_realizations(set, 2)?;
    let grid = set.grid();
    let r = autocorrelation(phase_matrix(set).as_ref(), &|p| coordinate_label(grid, p))?;
    BlockCovariance::from_matrix(grid.combos(), grid.n_freq(), CovarianceKind::Normalized, r)
}

/// Inputs of the not-fully-synthetic generator measured on `set`: amplitude
/// covariance (dB²), phase correlation and amplitude mean.
pub fn empirical_matrices(set: &ChannelSet) -> Result<EmpiricalMatrices> {
    let (r_a, r_phi) = empirical_block_r(set)?;
    let mut mu = Vec::with_capacity(r_a.dim());
    let mut sigma = Vec::with_capacity(r_a.dim());
    for p in estimate_profiles(set)? {
        mu.extend_from_slice(&p.mean);
        sigma.extend_from_slice(&p.std);
    }
    let q_a = scale_by_vector(r_a, &sigma)?.into_matrix();
    EmpiricalMatrices::new(q_a, r_phi.into_matrix(), mu)
}

/// Only the diagonal blocks of the empirical amplitude correlation, one per
/// mode combination.
pub fn empirical_diagonal_blocks(set: &ChannelSet) -> Result<Vec<Mat<f64>>> {
    require_realizations(set, 2)?;
    let grid = set.grid();
    let nf = grid.n_freq();
    let x = amplitude_matrix(set);
    (0..grid.combos().len())
        .into_par_iter()
        .map(|c| autocorrelation(x.as_ref().subrows(c * nf, nf), &|p| coordinate_label(grid, c * nf + p)))
        .collect()
}

/// Mean of every stripe `r(Δ)`, both sides of the diagonal pooled.
pub fn antidiag_average(block: MatRef<'_, f64>) -> Result<AntiDiagonalProfile> {
    let n = block.nrows();
    if block.ncols() != n || n == 0 {
        return Err(crate::error::dim_mismatch("non-empty square block", format!("{}×{}", n, block.ncols())));
    }
    let values = (0..n)
        .map(|d| {
            let s: f64 = (0..n - d).map(|k| block[(k + d, k)] + block[(k, k + d)]).sum();
            s / (2 * (n - d)) as f64
        })
        .collect();
    AntiDiagonalProfile::from_values(values)
}

/// Fraction of amplitude/phase cross-correlation entries whose magnitude
/// exceeds `threshold`.
pub fn amplitude_phase_cross_fraction(set: &ChannelSet, threshold: f64) -> Result<f64> {
    require_realizations(set, 2)?;
    let grid = set.grid();
    let label = |p| coordinate_label(grid, p);
    let c = cross_correlation(amplitude_matrix(set).as_ref(), phase_matrix(set).as_ref(), &label)?;
    let mut above = 0usize;
    for q in 0..c.ncols() {
        for p in 0..c.nrows() {
            if c[(p, q)].abs() > threshold {
                above += 1;
            }
        }
    }
    Ok(above as f64 / (c.nrows() * c.ncols()) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharacterizeOptions {
    /// Upper lag of the power fit.
    pub power_lag_cap_hz: f64,
    /// Lower lag of the exponential CM tail fit.
    pub exp_floor_hz: f64,
    /// Fit the power law clamped at 1 instead of the bare law.
    pub saturating_power_fit: bool,
    /// Bisquare instead of least-squares phase slopes.
    pub robust_phase_slopes: bool,
}

impl Default for CharacterizeOptions {
    fn default() -> Self {
        CharacterizeOptions {
            power_lag_cap_hz: 40e6,
            exp_floor_hz: ExpCorrection::ACTIVATION_LAG_HZ,
            saturating_power_fit: true,
            robust_phase_slopes: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharacterizationDiagnostics {
    pub mu: FitDiagnostics,
    pub sigma_nocm: FitDiagnostics,
    pub sigma_cm: FitDiagnostics,
    pub power_nocm: FitDiagnostics,
    pub power_cm: FitDiagnostics,
    pub exp_cm: Option<FitDiagnostics>,
    pub gev: FitDiagnostics,
    /// Lags inside the fit window where the fitted law reaches 1 (non-CM, CM).
    pub saturated_lags: (usize, usize),
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Characterization {
    pub params: ModelParameters,
    pub profiles: Vec<ProfileEstimate>,
    pub antidiag_nocm: AntiDiagonalProfile,
    pub antidiag_cm: AntiDiagonalProfile,
    pub phase_slopes: Vec<f64>,
    pub diagnostics: CharacterizationDiagnostics,
}

fn mean_profile(profiles: &[AntiDiagonalProfile]) -> Result<AntiDiagonalProfile> {
    let n = profiles[0].len();
    let values = (0..n)
        .map(|k| profiles.iter().map(|p| p.values()[k]).sum::<f64>() / profiles.len() as f64)
        .collect();
    AntiDiagonalProfile::from_values(values)
}

fn saturated_lags(law: &PowerLaw, f_step: f64, n_lags: usize, lag_cap: f64) -> usize {
    (1..n_lags)
        .map(|k| k as f64 * f_step)
        .take_while(|&f| f <= lag_cap * (1.0 + 1e-12))
        .filter(|&f| law.eval(f) >= 1.0)
        .count()
}

/// Runs the full estimation chain. Sets without CM receive modes reuse the
/// non-CM estimates for the CM entries and say so in the notes.
pub fn characterize(set: &ChannelSet, options: &CharacterizeOptions) -> Result<Characterization> {
    require_realizations(set, 2)?;
    let grid = set.grid();
    let freqs = grid.frequencies();
    let mut notes = Vec::new();

    let profiles = estimate_profiles(set)?;
    let pooled = |pick: &dyn Fn(&ProfileEstimate) -> Option<&Vec<f64>>| -> (Vec<f64>, Vec<f64>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for p in &profiles {
            if let Some(v) = pick(p) {
                x.extend_from_slice(&freqs);
                y.extend_from_slice(v);
            }
        }
        (x, y)
    };
    let (mx, my) = pooled(&|p| Some(&p.mean));
    let (mu_fit, mu_diag) = robust_linear_fit(&mx, &my)?;
    let (sx, sy) = pooled(&|p| (!p.combo.is_cm()).then_some(&p.std));
    let (sigma_nocm, sigma_nocm_diag) = robust_linear_fit(&sx, &sy)?;
    let has_cm = profiles.iter().any(|p| p.combo.is_cm());
    let has_nocm = profiles.iter().any(|p| !p.combo.is_cm());
    if !has_nocm {
        return Err(Error::InvalidInput("characterization needs at least one non-CM mode".into()));
    }
    let (sigma_cm, sigma_cm_diag) = if has_cm {
        let (cx, cy) = pooled(&|p| p.combo.is_cm().then_some(&p.std));
        robust_linear_fit(&cx, &cy)?
    } else {
        notes.push("no CM modes: CM standard deviation copied from the non-CM fit".into());
        (sigma_nocm, sigma_nocm_diag.clone())
    };

    let blocks = empirical_diagonal_blocks(set)?;
    let combos = grid.combos();
    let stripes: Vec<AntiDiagonalProfile> = blocks
        .iter()
        .map(|b| antidiag_average(b.as_ref()))
        .collect::<Result<_>>()?;
    let select = |cm: bool| -> Vec<AntiDiagonalProfile> {
        combos
            .iter()
            .zip(&stripes)
            .filter(|(c, _)| c.is_cm() == cm)
            .map(|(_, s)| s.clone())
            .collect()
    };
    let antidiag_nocm = mean_profile(&select(false))?;
    let antidiag_cm = if has_cm { mean_profile(&select(true))? } else { antidiag_nocm.clone() };

    let f_step = grid.f_step();
    let cap = options.power_lag_cap_hz;
    let power = |p: &AntiDiagonalProfile| {
        if options.saturating_power_fit {
            fit_power_saturating(p, f_step, cap)
        } else {
            fit_power(p, f_step, cap)
        }
    };
    let (power_nocm, power_nocm_diag) = power(&antidiag_nocm)?;
    let (power_cm, power_cm_diag) = if has_cm {
        power(&antidiag_cm)?
    } else {
        notes.push("no CM modes: CM power fit copied from the non-CM fit".into());
        (power_nocm, power_nocm_diag.clone())
    };
    let (exp_cm, exp_cm_diag) = if has_cm {
        match fit_exponential_tail(&antidiag_cm, f_step, options.exp_floor_hz, &power_cm) {
            Ok((e, d)) => (Some(e), Some(d)),
            Err(Error::InsufficientData(msg)) => {
                notes.push(format!("exponential CM tail skipped: {msg}"));
                (None, None)
            }
            Err(e) => return Err(e),
        }
    } else {
        (None, None)
    };

    let saturated = (
        saturated_lags(&power_nocm, f_step, antidiag_nocm.len(), cap),
        saturated_lags(&power_cm, f_step, antidiag_cm.len(), cap),
    );

    let phase_slopes = extract_phase_slopes(set, options.robust_phase_slopes)?;
    let (gev, gev_diag) = fit_gev(&phase_slopes)?;
    if gev.scale <= 0.0 {
        notes.push("phase slopes are all equal; GEV scale degenerate".into());
    }

    Ok(Characterization {
        params: ModelParameters {
            mu_fit,
            sigma_fit_nocm: sigma_nocm,
            sigma_fit_cm: sigma_cm,
            antidiag_nocm: power_nocm,
            antidiag_cm_power: power_cm,
            antidiag_cm_exp: exp_cm,
            gev,
        },
        profiles,
        antidiag_nocm,
        antidiag_cm,
        phase_slopes,
        diagnostics: CharacterizationDiagnostics {
            mu: mu_diag,
            sigma_nocm: sigma_nocm_diag,
            sigma_cm: sigma_cm_diag,
            power_nocm: power_nocm_diag,
            power_cm: power_cm_diag,
            exp_cm: exp_cm_diag,
            gev: gev_diag,
            saturated_lags: saturated,
            notes,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::toeplitz_block;
    use crate::generator::SyntheticGenerator;
    use crate::model::{combine_db, RxPort, Scheme, TxPort};
    use approx::assert_abs_diff_eq;
    use ndarray::Array3;

    fn siso_grid(n_freq: usize) -> MimoGrid {
        MimoGrid::new(1.8e6, 62.5e3, n_freq, vec![TxPort::PN], vec![RxPort::P]).unwrap()
    }

    fn set_from_db(grid: &MimoGrid, rows: &[Vec<f64>]) -> ChannelSet {
        let reals = rows
            .iter()
            .enumerate()
            .map(|(r, a)| {
                Array3::from_shape_fn((1, 1, a.len()), |(_, _, n)| combine_db(a[n], 0.1 * (r + n) as f64))
            })
            .collect();
        ChannelSet::new(grid.clone(), reals).unwrap()
    }

    #[test]
    fn profile_examples() {
        let grid = siso_grid(3);
        let same = set_from_db(&grid, &[vec![-40.0, -41.0, -42.0], vec![-40.0, -41.0, -42.0]]);
        let p = estimate_profiles(&same).unwrap();
        assert!(p[0].std.iter().all(|&s| s.abs() < 1e-12));

        let two = set_from_db(&grid, &[vec![-40.0, 0.0, 0.0], vec![-44.0, 0.0, 0.0]]);
        let p = estimate_profiles(&two).unwrap();
        assert_abs_diff_eq!(p[0].mean[0], -42.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[0].std[0], 2.0 * 2f64.sqrt(), epsilon = 1e-12);

        let one = set_from_db(&grid, &[vec![-40.0, 0.0, 0.0]]);
        assert!(matches!(estimate_profiles(&one), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn antidiag_examples() {
        let m = Mat::from_fn(2, 2, |p, q| match (p, q) {
            (0, 1) => 0.4,
            (1, 0) => 0.6,
            _ => 1.0,
        });
        let r = antidiag_average(m.as_ref()).unwrap();
        assert_eq!(r.values(), &[1.0, 0.5]);
        let eye = Mat::<f64>::identity(5, 5);
        assert_eq!(antidiag_average(eye.as_ref()).unwrap().values(), &[1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn antidiag_inverts_toeplitz() {
        let prof = AntiDiagonalProfile::from_values(vec![1.0, 0.8, 0.55, 0.3, 0.31, 0.1]).unwrap();
        let back = antidiag_average(toeplitz_block(&prof).as_ref()).unwrap();
        for (a, b) in back.values().iter().zip(prof.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_variance_names_coordinate() {
        let grid = siso_grid(3);
        let set = set_from_db(&grid, &[vec![-40.0, -41.0, -42.0], vec![-40.0, -45.0, -42.0]]);
        match empirical_amplitude_r(&set) {
            Err(Error::UndefinedCorrelation { coordinate, label }) => {
                assert_eq!(coordinate, 0);
                assert!(label.contains("PN/P"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn two_realizations_give_unit_magnitudes() {
        let grid = siso_grid(4);
        let set = set_from_db(&grid, &[vec![-40.0, -41.0, -45.0, -39.0], vec![-44.0, -40.0, -47.0, -30.0]]);
        let (a, _) = empirical_block_r(&set).unwrap();
        for p in 0..4 {
            for q in 0..4 {
                assert_abs_diff_eq!(a.get(p, q).abs(), 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn empirical_r_is_symmetric_with_unit_diagonal() {
        let p = ModelParameters::default();
        let grid = MimoGrid::new(1.8e6, 250e3, 20, vec![TxPort::PN, TxPort::PE], vec![RxPort::P, RxPort::N, RxPort::CM])
            .unwrap();
        let (g, _) = SyntheticGenerator::new(&p, &grid, false).unwrap();
        let set = g.generate(60, 3).unwrap();
        let r = empirical_amplitude_r(&set).unwrap();
        for a in 0..r.dim() {
            assert_eq!(r.get(a, a), 1.0);
            for b in 0..r.dim() {
                assert!((r.get(a, b) - r.get(b, a)).abs() <= 1e-12);
            }
        }
        let blocks = empirical_diagonal_blocks(&set).unwrap();
        for (c, b) in blocks.iter().enumerate() {
            for x in 0..20 {
                for y in 0..20 {
                    assert!((b[(x, y)] - r.block(c, c)[(x, y)]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn characterize_rejects_single_realization() {
        let grid = siso_grid(8);
        let set = set_from_db(&grid, &[vec![-40.0; 8]]);
        assert!(matches!(
            characterize(&set, &CharacterizeOptions::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn characterize_siso_flags_missing_cm() {
        let p = ModelParameters::default();
        let grid = MimoGrid::for_scheme(Scheme::Siso).decimate(4).unwrap();
        let (g, _) = SyntheticGenerator::new(&p, &grid, false).unwrap();
        let set = g.generate(80, 5).unwrap();
        let c = characterize(&set, &CharacterizeOptions::default()).unwrap();
        assert_eq!(c.params.sigma_fit_cm, c.params.sigma_fit_nocm);
        assert!(c.diagnostics.notes.iter().any(|n| n.contains("no CM")));
        assert_eq!(c.phase_slopes.len(), 80);
    }
}
