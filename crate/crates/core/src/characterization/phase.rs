//! Unwrapped-phase slopes and the GEV law fitted to them.

use std::f64::consts::PI;

use argmin::core::{CostFunction, Executor, State, TerminationReason, TerminationStatus};
use argmin::solver::neldermead::NelderMead;
use nalgebra::Matrix3;
use statrs::function::gamma::gamma;

use super::fit::{ls_slope, robust_linear_fit, FitDiagnostics};
use crate::error::{Error, Result};
use crate::generator::Gev;
use crate::model::{split_db, ChannelSet, GevParams};

/// Unwraps a phase sequence: a jump of `π` or more between neighbours
/// subtracts 2π from the rest, a jump of `−π` or less adds 2π. Returns the
/// unwrapped values and the number of corrections applied.
pub fn unwrap_phase(phase: &[f64]) -> (Vec<f64>, usize) {
    let mut out = Vec::with_capacity(phase.len());
    let mut offset = 0.0;
    let mut jumps = 0;
    for (k, &p) in phase.iter().enumerate() {
        if k > 0 {
            let d = p - phase[k - 1];
            if d >= PI {
                offset -= 2.0 * PI;
                jumps += 1;
            } else if d <= -PI {
                offset += 2.0 * PI;
                jumps += 1;
            }
        }
        out.push(p + offset);
    }
    (out, jumps)
}

/// Negated unwrapped-phase slope (rad/Hz) of every (realization, mode)
/// profile, realization-major and modes in reshape order. With `robust`
/// the slope comes from the bisquare fit instead of least squares.
pub fn extract_phase_slopes(set: &ChannelSet, robust: bool) -> Result<Vec<f64>> {
    let grid = set.grid();
    if grid.n_freq() < 2 {
        return Err(Error::InsufficientData("phase slopes need at least 2 bins".into()));
    }
    let freqs = grid.frequencies();
    // Centring the axis keeps the normal equations well conditioned.
    let f_mid = 0.5 * (freqs[0] + freqs[freqs.len() - 1]);
    let x: Vec<f64> = freqs.iter().map(|f| f - f_mid).collect();
    let mut out = Vec::with_capacity(set.len() * grid.combos().len());
    for h in set.realizations() {
        for i in 0..grid.n_tx() {
            for j in 0..grid.n_rx() {
                let wrapped: Vec<f64> = (0..grid.n_freq()).map(|n| split_db(h[[j, i, n]]).1).collect();
                let (unwrapped, _) = unwrap_phase(&wrapped);
                let slope = if robust {
                    let x_hz: Vec<f64> = freqs.clone();
                    robust_linear_fit(&x_hz, &unwrapped)?.0.slope_db_per_ghz * 1e-9
                } else {
                    ls_slope(&x, &unwrapped).ok_or_else(|| Error::SingularFit("degenerate frequency axis".into()))?
                };
                out.push(-slope);
            }
        }
    }
    Ok(out)
}

/// Probability-weighted-moment estimate of the GEV parameters.
pub fn gev_pwm(samples: &[f64]) -> Result<GevParams> {
    let n = samples.len();
    if n < 3 {
        return Err(Error::InsufficientData("PWM estimate needs at least 3 samples".into()));
    }
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let nf = n as f64;
    let b0 = x.iter().sum::<f64>() / nf;
    let b1 = x.iter().enumerate().map(|(j, v)| j as f64 / (nf - 1.0) * v).sum::<f64>() / nf;
    let b2 = x
        .iter()
        .enumerate()
        .map(|(j, v)| (j as f64 * (j as f64 - 1.0)) / ((nf - 1.0) * (nf - 2.0)) * v)
        .sum::<f64>()
        / nf;
    let denom = 3.0 * b2 - b0;
    if denom == 0.0 || 2.0 * b1 - b0 == 0.0 {
        return Err(Error::SingularFit("samples have no spread".into()));
    }
    let c = (2.0 * b1 - b0) / denom - 2f64.ln() / 3f64.ln();
    let k = 7.8590 * c + 2.9554 * c * c;
    let (scale, location) = if k.abs() < 1e-9 {
        let scale = (2.0 * b1 - b0) / 2f64.ln();
        (scale, b0 - 0.577_215_664_901_532_9 * scale)
    } else {
        let g = gamma(1.0 + k);
        let scale = (2.0 * b1 - b0) * k / (g * (1.0 - 2f64.powf(-k)));
        (scale, b0 + scale * (g - 1.0) / k)
    };
    Ok(GevParams {
        shape: -k,
        location,
        scale,
    })
}

/// Negative log-likelihood of standardized samples at `(ξ, μ, ln σ)`.
struct GevNll<'a> {
    z: &'a [f64],
}

/// Stand-in cost for parameters whose support excludes a sample.
const OUTSIDE_SUPPORT: f64 = 1e300;

impl GevNll<'_> {
    fn value(&self, p: &[f64]) -> f64 {
        let gev = Gev {
            shape: p[0],
            location: p[1],
            scale: p[2].exp(),
        };
        let mut s = 0.0;
        for &z in self.z {
            let l = gev.ln_pdf(z);
            if !l.is_finite() {
                return OUTSIDE_SUPPORT;
            }
            s -= l;
        }
        s
    }
}

impl CostFunction for GevNll<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.value(p))
    }
}

const GEV_MAX_ITER: u64 = 5000;

/// Maximum-likelihood GEV fit, initialized from probability-weighted
/// moments and refined by Nelder–Mead on standardized data.
pub fn fit_gev(samples: &[f64]) -> Result<(GevParams, FitDiagnostics)> {
    if samples.len() < 50 {
        return Err(Error::InsufficientData(format!(
            "GEV fit needs at least 50 samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("GEV samples must be finite".into()));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    if sd <= 1e-14 * mean.abs().max(f64::MIN_POSITIVE) {
        return Ok((
            GevParams {
                shape: 0.0,
                location: mean,
                scale: 0.0,
            },
            FitDiagnostics {
                converged: false,
                estimates: vec![0.0, mean, 0.0],
                std_errors: vec![f64::NAN; 3],
                notes: vec!["all samples equal: scale degenerates to 0".into()],
                ..Default::default()
            },
        ));
    }
    let z: Vec<f64> = samples.iter().map(|v| (v - mean) / sd).collect();
    let mut notes = Vec::new();
    let init = match gev_pwm(&z) {
        Ok(p) if p.scale > 0.0 && p.shape.is_finite() => p,
        _ => {
            notes.push("PWM initialization failed; starting from the Gumbel moments".into());
            GevParams {
                shape: 0.0,
                location: -0.45,
                scale: 0.78,
            }
        }
    };
    let nll = GevNll { z: &z };
    let mut start = vec![init.shape, init.location, init.scale.ln()];
    if nll.value(&start) >= OUTSIDE_SUPPORT {
        // Pull the shape towards 0 until every sample is inside the support.
        for _ in 0..60 {
            start[0] *= 0.5;
            if nll.value(&start) < OUTSIDE_SUPPORT {
                break;
            }
        }
        notes.push("PWM start outside the support; shape shrunk towards 0".into());
    }
    let simplex: Vec<Vec<f64>> = std::iter::once(start.clone())
        .chain((0..3).map(|k| {
            let mut v = start.clone();
            v[k] += if k == 0 { 0.05 } else { 0.1 };
            v
        }))
        .collect();
    // The cost grows with the sample count; so does the attainable resolution.
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(1e-12 * n)
        .map_err(|e| Error::Numerical(format!("GEV optimizer setup: {e}")))?;
    let res = Executor::new(GevNll { z: &z }, solver)
        .configure(|s| s.max_iters(GEV_MAX_ITER))
        .run()
        .map_err(|e| Error::Numerical(format!("GEV optimizer: {e}")))?;
    let state = res.state();
    let best = state
        .get_best_param()
        .cloned()
        .ok_or_else(|| Error::Numerical("GEV optimizer returned no parameters".into()))?;
    let cost = state.get_best_cost();
    let converged = matches!(
        state.get_termination_status(),
        TerminationStatus::Terminated(TerminationReason::SolverConverged)
    ) && cost < OUTSIDE_SUPPORT;
    let iterations = state.get_iter() as usize;

    let params = GevParams {
        shape: best[0],
        location: mean + sd * best[1],
        scale: sd * best[2].exp(),
    };
    let std_errors = gev_std_errors(samples, &params);
    Ok((
        params,
        FitDiagnostics {
            residual_norm: cost,
            iterations,
            converged,
            estimates: vec![params.shape, params.location, params.scale],
            std_errors,
            notes,
        },
    ))
}

/// Standard errors from the inverse of a finite-difference Hessian of the
/// negative log-likelihood.
fn gev_std_errors(samples: &[f64], p: &GevParams) -> Vec<f64> {
    let theta = [p.shape, p.location, p.scale];
    let h = [1e-4, 1e-4 * p.scale, 1e-4 * p.scale];
    let nll = |t: [f64; 3]| -> f64 {
        if t[2] <= 0.0 {
            return f64::NAN;
        }
        let g = Gev {
            shape: t[0],
            location: t[1],
            scale: t[2],
        };
        samples.iter().map(|&x| -g.ln_pdf(x)).sum()
    };
    let mut hess = Matrix3::zeros();
    for a in 0..3 {
        for b in 0..3 {
            let at = |da: f64, db: f64| {
                let mut t = theta;
                t[a] += da * h[a];
                t[b] += db * h[b];
                nll(t)
            };
            hess[(a, b)] = (at(1.0, 1.0) - at(1.0, -1.0) - at(-1.0, 1.0) + at(-1.0, -1.0)) / (4.0 * h[a] * h[b]);
        }
    }
    match hess.try_inverse() {
        Some(inv) if inv.iter().all(|v| v.is_finite()) => (0..3)
            .map(|k| if inv[(k, k)] > 0.0 { inv[(k, k)].sqrt() } else { f64::NAN })
            .collect(),
        _ => vec![f64::NAN; 3],
    }
}
