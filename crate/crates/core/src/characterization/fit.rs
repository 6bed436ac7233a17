//! Curve fits used by the characterization pipeline.

use nalgebra::{Matrix3, Vector3};

use crate::covariance::AntiDiagonalProfile;
use crate::error::{Error, Result};
use crate::model::{ExpCorrection, LinearProfile, PowerLaw};

/// Outcome details of an iterative fit.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitDiagnostics {
    /// Euclidean norm of the final residual vector.
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub estimates: Vec<f64>,
    /// `NaN` where the curvature is singular.
    pub std_errors: Vec<f64>,
    pub notes: Vec<String>,
}

pub const BISQUARE_TUNING: f64 = 4.685;
const MAD_SCALE: f64 = 1.4826;
const IRLS_TOL: f64 = 1e-8;
const IRLS_MAX_ITER: usize = 50;
/// Profile values treated as saturated when initializing a saturating fit.
const SATURATED: f64 = 0.999;

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Weighted least-squares line `y = a + b·x`; `None` when `x` has no spread
/// under the weights.
fn weighted_line(x: &[f64], y: &[f64], w: &[f64]) -> Option<(f64, f64, f64, f64)> {
    let sw: f64 = w.iter().sum();
    if sw <= 0.0 {
        return None;
    }
    let mx = x.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(y, w)| y * w).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(x, w)| w * (x - mx) * (x - mx)).sum();
    let sxy: f64 = x.iter().zip(y).zip(w).map(|((x, y), w)| w * (x - mx) * (y - my)).sum();
    let scale = x.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    if sxx <= 1e-24 * scale * scale * sw {
        return None;
    }
    let b = sxy / sxx;
    Some((my - b * mx, b, sxx, sw))
}

/// Robust straight-line fit of `y` (dB) against `x` (Hz), slope reported
/// per GHz. Iteratively reweighted least squares with Tukey bisquare
/// weights, residuals scaled by `1.4826·MAD`.
pub fn robust_linear_fit(x_hz: &[f64], y: &[f64]) -> Result<(LinearProfile, FitDiagnostics)> {
    if x_hz.len() != y.len() {
        return Err(crate::error::dim_mismatch(x_hz.len(), y.len()));
    }
    if x_hz.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "robust fit needs at least 3 points, got {}",
            x_hz.len()
        )));
    }
    if x_hz.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("robust fit input must be finite".into()));
    }
    let x: Vec<f64> = x_hz.iter().map(|f| f * 1e-9).collect();
    let n = x.len();
    let mut w = vec![1.0; n];
    let singular = || Error::SingularFit("abscissae have no spread".into());
    let (mut a, mut b, _, _) = weighted_line(&x, y, &w).ok_or_else(singular)?;
    let mut iterations = 0;
    let mut converged = false;
    let mut notes = Vec::new();
    while iterations < IRLS_MAX_ITER {
        iterations += 1;
        let r: Vec<f64> = x.iter().zip(y).map(|(x, y)| y - (a + b * x)).collect();
        let mut abs: Vec<f64> = r.iter().map(|v| v.abs()).collect();
        let mad = median(&mut abs);
        let s = MAD_SCALE * mad;
        if s <= f64::EPSILON * y.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0) {
            converged = true;
            notes.push("residual scale vanished; exact fit on the majority of points".into());
            break;
        }
        let new_w: Vec<f64> = r
            .iter()
            .map(|ri| {
                let u = ri / (BISQUARE_TUNING * s);
                if u.abs() < 1.0 {
                    (1.0 - u * u).powi(2)
                } else {
                    0.0
                }
            })
            .collect();
        let change = new_w.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        w = new_w;
        let (na, nb, _, _) = weighted_line(&x, y, &w).ok_or_else(singular)?;
        a = na;
        b = nb;
        if change < IRLS_TOL {
            converged = true;
            break;
        }
    }
    let r: Vec<f64> = x.iter().zip(y).map(|(x, y)| y - (a + b * x)).collect();
    let residual_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    let std_errors = match weighted_line(&x, y, &w) {
        Some((_, _, sxx, sw)) if n > 2 => {
            let s2 = r.iter().zip(&w).map(|(r, w)| w * r * r).sum::<f64>() / (n - 2) as f64;
            let mx = x.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() / sw;
            vec![(s2 / sxx).sqrt(), (s2 * (1.0 / sw + mx * mx / sxx)).sqrt()]
        }
        _ => vec![f64::NAN, f64::NAN],
    };
    Ok((
        LinearProfile {
            slope_db_per_ghz: b,
            intercept_db: a,
        },
        FitDiagnostics {
            residual_norm,
            iterations,
            converged,
            estimates: vec![b, a],
            std_errors,
            notes,
        },
    ))
}

/// Plain least-squares slope of `y` against `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    weighted_line(x, y, &vec![1.0; x.len()]).map(|(_, b, _, _)| b)
}

struct LmOutcome {
    params: [f64; 3],
    sse: f64,
    iterations: usize,
    converged: bool,
    jtj: Matrix3<f64>,
}

const LM_MAX_ITER: usize = 200;

/// Levenberg–Marquardt on a 3-parameter model. `eval` returns the residuals
/// `y − model` and the rows of the model Jacobian.
fn levenberg_marquardt<F>(start: [f64; 3], eval: F) -> LmOutcome
where
    F: Fn(&[f64; 3]) -> (Vec<f64>, Vec<[f64; 3]>),
{
    let sse_of = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();
    let normal = |r: &[f64], jac: &[[f64; 3]]| {
        let mut jtj = Matrix3::<f64>::zeros();
        let mut jtr = Vector3::<f64>::zeros();
        for (ri, row) in r.iter().zip(jac) {
            for a in 0..3 {
                jtr[a] += row[a] * ri;
                for b in 0..3 {
                    jtj[(a, b)] += row[a] * row[b];
                }
            }
        }
        (jtj, jtr)
    };
    let mut p = start;
    let (mut r, mut jac) = eval(&p);
    let mut sse = sse_of(&r);
    let (mut jtj, mut jtr) = normal(&r, &jac);
    let mut lambda: f64 = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < LM_MAX_ITER {
        iterations += 1;
        if jtr.amax() <= 1e-15 * (1.0 + sse) {
            converged = true;
            break;
        }
        let mut accepted = false;
        for _ in 0..40 {
            let mut a = jtj;
            let scale = jtj.diagonal().max().max(1e-300);
            for k in 0..3 {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12 * scale);
            }
            let Some(step) = a.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial = [p[0] + step[0], p[1] + step[1], p[2] + step[2]];
            if trial.iter().any(|v| !v.is_finite()) {
                lambda *= 10.0;
                continue;
            }
            let (tr, tj) = eval(&trial);
            let tsse = sse_of(&tr);
            if tsse.is_finite() && tsse <= sse {
                let rel = (sse - tsse) / sse.max(1e-300);
                let small_step = (0..3).all(|k| step[k].abs() <= 1e-12 * (p[k].abs() + 1e-12));
                p = trial;
                r = tr;
                jac = tj;
                sse = tsse;
                (jtj, jtr) = normal(&r, &jac);
                lambda = (lambda * 0.3).max(1e-15);
                accepted = true;
                if rel < 1e-15 || small_step || sse == 0.0 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No downhill step at any damping: a stationary point.
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    LmOutcome {
        params: p,
        sse,
        iterations,
        converged,
        jtj,
    }
}

fn std_errors(jtj: &Matrix3<f64>, sse: f64, n: usize) -> Vec<f64> {
    let dof = n.saturating_sub(3).max(1) as f64;
    match jtj.try_inverse() {
        Some(inv) => (0..3)
            .map(|k| {
                let v = inv[(k, k)] * sse / dof;
                if v >= 0.0 {
                    v.sqrt()
                } else {
                    f64::NAN
                }
            })
            .collect(),
        None => vec![f64::NAN; 3],
    }
}

/// Lags (Hz) and values of `profile` for lag indices `first..=last`.
fn window(profile: &AntiDiagonalProfile, f_step: f64, first: usize, last: usize) -> (Vec<f64>, Vec<f64>) {
    let v = profile.values();
    let last = last.min(v.len() - 1);
    (first..=last).map(|k| (k as f64 * f_step, v[k])).unzip()
}

/// Fits `a·f^b + c` to the profile over lags in `(0, lag_cap]`.
pub fn fit_power(profile: &AntiDiagonalProfile, f_step: f64, lag_cap: f64) -> Result<(PowerLaw, FitDiagnostics)> {
    fit_power_from(profile, f_step, 1, lag_cap)
}

/// As [`fit_power`], starting at lag index `first` (≥ 1).
pub fn fit_power_from(
    profile: &AntiDiagonalProfile,
    f_step: f64,
    first: usize,
    lag_cap: f64,
) -> Result<(PowerLaw, FitDiagnostics)> {
    power_fit(profile, f_step, first, lag_cap, false)
}

/// Fits the saturating law `min(1, a·f^b + c)` over lags in `(0, lag_cap]`,
/// the form in which profiles are generated. Lags where the fitted power
/// law exceeds 1 only constrain it to stay above the data.
pub fn fit_power_saturating(
    profile: &AntiDiagonalProfile,
    f_step: f64,
    lag_cap: f64,
) -> Result<(PowerLaw, FitDiagnostics)> {
    power_fit(profile, f_step, 1, lag_cap, true)
}

fn power_fit(
    profile: &AntiDiagonalProfile,
    f_step: f64,
    first: usize,
    lag_cap: f64,
    saturating: bool,
) -> Result<(PowerLaw, FitDiagnostics)> {
    let last = (lag_cap / f_step + 1e-9).floor() as usize;
    let (lags, y) = window(profile, f_step, first.max(1), last);
    if lags.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "power fit needs at least 4 lags under {lag_cap} Hz, got {}",
            lags.len()
        )));
    }
    // Lags in MHz keep the Jacobian well scaled.
    let x: Vec<f64> = lags.iter().map(|f| f * 1e-6).collect();
    let y_inf = y.iter().copied().fold(f64::INFINITY, f64::min);
    let (lx, ly): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(&y)
        .filter(|(_, &v)| v - y_inf > 0.0 && !(saturating && v >= SATURATED))
        .map(|(&x, &v)| (x.ln(), (v - y_inf).ln()))
        .unzip();
    let mut notes = Vec::new();
    let start = match weighted_line(&lx, &ly, &vec![1.0; lx.len()]) {
        Some((ln_a, b, _, _)) if lx.len() >= 2 && b.is_finite() => [ln_a.exp(), b, y_inf],
        _ => {
            notes.push("log-log initialization degenerate; starting from a = 0".into());
            [0.0, -1.0, y_inf]
        }
    };
    let eval = |p: &[f64; 3]| {
        let mut r = Vec::with_capacity(x.len());
        let mut j = Vec::with_capacity(x.len());
        for (&xi, &yi) in x.iter().zip(&y) {
            let pw = xi.powf(p[1]);
            let model = p[0] * pw + p[2];
            if saturating && model > 1.0 {
                r.push(yi - 1.0);
                j.push([0.0; 3]);
            } else {
                r.push(yi - model);
                j.push([pw, p[0] * pw * xi.ln(), 1.0]);
            }
        }
        (r, j)
    };
    let out = levenberg_marquardt(start, eval);
    let [a_mhz, b, c] = out.params;
    let a = a_mhz * 1e6f64.powf(-b);
    if a_mhz.abs() < 1e-9 * (c.abs() + 1e-12) {
        notes.push("amplitude ≈ 0: exponent unidentifiable".into());
    }
    let mut se = std_errors(&out.jtj, out.sse, x.len());
    se[0] *= 1e6f64.powf(-b);
    Ok((
        PowerLaw { a, b, c },
        FitDiagnostics {
            residual_norm: out.sse.sqrt(),
            iterations: out.iterations,
            converged: out.converged,
            estimates: vec![a, b, c],
            std_errors: se,
            notes,
        },
    ))
}

/// Fits `a·e^{b·f} + c` to `profile − power` over lags above `lag_floor`,
/// after shifting the difference so it is zero at the floor.
pub fn fit_exponential_tail(
    profile: &AntiDiagonalProfile,
    f_step: f64,
    lag_floor: f64,
    power: &PowerLaw,
) -> Result<(ExpCorrection, FitDiagnostics)> {
    let v = profile.values();
    let k0 = (lag_floor / f_step - 1e-9).ceil() as usize;
    if k0 >= v.len() || v.len() - 1 - k0 < 4 {
        return Err(Error::InsufficientData(format!(
            "exponential tail fit needs at least 4 lags above {lag_floor} Hz"
        )));
    }
    let diff = |k: usize| v[k] - power.eval(k as f64 * f_step);
    let base = diff(k0);
    let x: Vec<f64> = (k0 + 1..v.len()).map(|k| k as f64 * f_step * 1e-6).collect();
    let y: Vec<f64> = (k0 + 1..v.len()).map(|k| diff(k) - base).collect();
    let x0 = k0 as f64 * f_step * 1e-6;

    // Profile over the rate: (a, c) are linear given b.
    let linear_ac = |b: f64| -> Option<(f64, f64, f64)> {
        let e: Vec<f64> = x.iter().map(|&xi| (b * (xi - x0)).exp()).collect();
        let (c, a, _, _) = weighted_line(&e, &y, &vec![1.0; e.len()])?;
        let sse = e.iter().zip(&y).map(|(e, y)| (y - a * e - c).powi(2)).sum();
        Some((a, c, sse))
    };
    let mut best: Option<(f64, f64, f64, f64)> = None;
    for k in 0..=60 {
        let mag = 10f64.powf(-4.0 + 4.0 * k as f64 / 60.0);
        for b in [mag, -mag] {
            if let Some((a, c, sse)) = linear_ac(b) {
                let better = match best {
                    None => true,
                    Some((_, bb, _, bs)) => sse < bs || (sse == bs && b.abs() < bb.abs()),
                };
                if better {
                    best = Some((a, b, c, sse));
                }
            }
        }
    }
    let mut notes = Vec::new();
    let (a0, b0, c0) = match best {
        Some((a, b, c, _)) => (a * (-b * x0).exp(), b, c),
        None => {
            notes.push("flat residual; exponential amplitude set to 0".into());
            (0.0, 0.01, 0.0)
        }
    };
    let eval = |p: &[f64; 3]| {
        let mut r = Vec::with_capacity(x.len());
        let mut j = Vec::with_capacity(x.len());
        for (&xi, &yi) in x.iter().zip(&y) {
            let e = (p[1] * xi).exp();
            r.push(yi - (p[0] * e + p[2]));
            j.push([e, p[0] * xi * e, 1.0]);
        }
        (r, j)
    };
    let out = levenberg_marquardt([a0, b0, c0], eval);
    let [a, b_mhz, c] = out.params;
    let mut se = std_errors(&out.jtj, out.sse, x.len());
    se[1] *= 1e-6;
    let fit = ExpCorrection { a, b: b_mhz * 1e-6, c };
    Ok((
        fit,
        FitDiagnostics {
            residual_norm: out.sse.sqrt(),
            iterations: out.iterations,
            converged: out.converged,
            estimates: vec![fit.a, fit.b, fit.c],
            std_errors: se,
            notes,
        },
    ))
}
