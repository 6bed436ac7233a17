//! MIMO capacity with per-bin spatial water-filling under a PSD mask and
//! colored, port-correlated Gaussian noise.
//!
//! At every bin the channel is whitened by the noise covariance
//! `W = psd(f)·Δf·C_rx`, decomposed into singular values `λ_k`, and the bin
//! budget `P = mask(f)·Δf` is water-filled across them. The capacity is
//! `Σ_n Δf·Σ_k log2(1 + p_k·λ_k²)` in bit/s.

use nalgebra::{Cholesky, DMatrix};
use ndarray::Array3;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{dim_mismatch, Error, Result};
use crate::model::{ChannelSet, MimoGrid};

/// dBm/Hz to linear mW/Hz.
pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

/// A noise power spectral density in dBm/Hz.
#[derive(Debug, Clone, PartialEq)]
pub enum PsdProfile {
    Constant(f64),
    /// `a·e^{b·f} + c` with `f` in Hz.
    Exponential { a: f64, b: f64, c: f64 },
    /// Linear interpolation between `(f, level)` points, held constant past
    /// either end.
    Table(Vec<(f64, f64)>),
}

impl PsdProfile {
    pub fn validate(&self) -> Result<()> {
        match self {
            PsdProfile::Constant(v) if !v.is_finite() => {
                Err(Error::InvalidInput("noise level must be finite".into()))
            }
            PsdProfile::Exponential { a, b, c } if !(a.is_finite() && b.is_finite() && c.is_finite()) => {
                Err(Error::InvalidInput("noise profile coefficients must be finite".into()))
            }
            PsdProfile::Table(t) => {
                if t.is_empty() {
                    return Err(Error::InvalidInput("empty noise table".into()));
                }
                if t.iter().any(|(f, v)| !(f.is_finite() && v.is_finite())) {
                    return Err(Error::InvalidInput("noise table entries must be finite".into()));
                }
                if t.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err(Error::InvalidInput("noise table frequencies must increase".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, f: f64) -> f64 {
        match self {
            PsdProfile::Constant(v) => *v,
            PsdProfile::Exponential { a, b, c } => a * (b * f).exp() + c,
            PsdProfile::Table(t) => {
                let k = t.partition_point(|&(x, _)| x <= f);
                if k == 0 {
                    t[0].1
                } else if k == t.len() {
                    t[k - 1].1
                } else {
                    let (x0, y0) = t[k - 1];
                    let (x1, y1) = t[k];
                    y0 + (y1 - y0) * (f - x0) / (x1 - x0)
                }
            }
        }
    }

    /// Adds `db` to the whole profile.
    pub fn shifted(&self, db: f64) -> PsdProfile {
        match self {
            PsdProfile::Constant(v) => PsdProfile::Constant(v + db),
            PsdProfile::Exponential { a, b, c } => PsdProfile::Exponential {
                a: *a,
                b: *b,
                c: c + db,
            },
            PsdProfile::Table(t) => PsdProfile::Table(t.iter().map(|&(f, v)| (f, v + db)).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    /// One profile shared by every receive port, or one per port.
    pub psd: Vec<PsdProfile>,
    /// Receive-port correlation; identity when `None`.
    pub rx_correlation: Option<DMatrix<Complex64>>,
}

impl Default for NoiseModel {
    /// Exponential decay plus floor, `35·e^{−10⁻⁷·f} − 140` dBm/Hz, with
    /// uncorrelated ports.
    fn default() -> Self {
        NoiseModel {
            psd: vec![PsdProfile::Exponential {
                a: 35.0,
                b: -1e-7,
                c: -140.0,
            }],
            rx_correlation: None,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self, n_rx: usize) -> Result<()> {
        if self.psd.len() != 1 && self.psd.len() != n_rx {
            return Err(dim_mismatch(format!("1 or {n_rx} noise profiles"), self.psd.len()));
        }
        for p in &self.psd {
            p.validate()?;
        }
        if let Some(c) = &self.rx_correlation {
            if c.nrows() != n_rx || c.ncols() != n_rx {
                return Err(dim_mismatch(format!("{n_rx}×{n_rx} correlation"), format!("{}×{}", c.nrows(), c.ncols())));
            }
            for j in 0..n_rx {
                if (c[(j, j)] - Complex64::new(1.0, 0.0)).norm() > 1e-9 {
                    return Err(Error::InvalidInput("noise correlation must have a unit diagonal".into()));
                }
                for k in 0..j {
                    if (c[(j, k)] - c[(k, j)].conj()).norm() > 1e-9 {
                        return Err(Error::InvalidInput("noise correlation must be Hermitian".into()));
                    }
                }
            }
        }
        Ok(())
    }

    fn psd_dbm(&self, port: usize, f: f64) -> f64 {
        self.psd[if self.psd.len() == 1 { 0 } else { port }].eval(f)
    }

    /// Noise covariance at `f` over a bin of width `df`, in mW.
    pub fn covariance(&self, n_rx: usize, f: f64, df: f64) -> DMatrix<Complex64> {
        let amp: Vec<f64> = (0..n_rx).map(|j| (dbm_to_mw(self.psd_dbm(j, f)) * df).sqrt()).collect();
        DMatrix::from_fn(n_rx, n_rx, |j, k| {
            let c = match &self.rx_correlation {
                Some(c) => c[(j, k)],
                None if j == k => Complex64::new(1.0, 0.0),
                None => Complex64::new(0.0, 0.0),
            };
            c * amp[j] * amp[k]
        })
    }

    /// The same model restricted to the receive ports at `ports`.
    pub fn select_ports(&self, ports: &[usize]) -> NoiseModel {
        NoiseModel {
            psd: if self.psd.len() == 1 {
                self.psd.clone()
            } else {
                ports.iter().map(|&p| self.psd[p].clone()).collect()
            },
            rx_correlation: self
                .rx_correlation
                .as_ref()
                .map(|c| DMatrix::from_fn(ports.len(), ports.len(), |a, b| c[(ports[a], ports[b])])),
        }
    }
}

/// Transmit PSD limit as a step function: each breakpoint `(f, level)`
/// holds from `f` up to the next breakpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdMask {
    breakpoints: Vec<(f64, f64)>,
}

impl Default for PsdMask {
    /// −55 dBm/Hz below 30 MHz, −85 dBm/Hz above.
    fn default() -> Self {
        PsdMask {
            breakpoints: vec![(0.0, -55.0), (30e6, -85.0)],
        }
    }
}

impl PsdMask {
    pub fn new(breakpoints: Vec<(f64, f64)>) -> Result<Self> {
        if breakpoints.is_empty() {
            return Err(Error::InvalidInput("mask needs at least one breakpoint".into()));
        }
        if breakpoints.iter().any(|(f, v)| !(f.is_finite() && v.is_finite())) {
            return Err(Error::InvalidInput("mask entries must be finite".into()));
        }
        if breakpoints.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidInput("mask breakpoints must be sorted and distinct".into()));
        }
        Ok(PsdMask { breakpoints })
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.breakpoints
    }

    pub fn covers(&self, grid: &MimoGrid) -> bool {
        self.breakpoints[0].0 <= grid.f_start()
    }

    /// Level in dBm/Hz at `f`.
    pub fn level(&self, f: f64) -> f64 {
        let k = self.breakpoints.partition_point(|&(x, _)| x <= f);
        self.breakpoints[k.saturating_sub(1)].1
    }

    pub fn shifted(&self, db: f64) -> PsdMask {
        PsdMask {
            breakpoints: self.breakpoints.iter().map(|&(f, v)| (f, v + db)).collect(),
        }
    }
}

/// Optimal powers for parallel channels with gains `g_k` (`λ_k²`) under a
/// total budget, maximizing `Σ log2(1 + p_k·g_k)`.
pub fn water_fill(gains: &[f64], budget: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..gains.len()).filter(|&k| gains[k] > 0.0).collect();
    order.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]));
    let mut p = vec![0.0; gains.len()];
    if budget <= 0.0 || order.is_empty() {
        return p;
    }
    // Largest active set whose water level stays above every floor 1/g.
    let mut level = 0.0;
    let mut active = 0;
    let mut inv_sum = 0.0;
    for (n, &k) in order.iter().enumerate() {
        inv_sum += 1.0 / gains[k];
        let mu = (budget + inv_sum) / (n + 1) as f64;
        if mu > 1.0 / gains[k] {
            level = mu;
            active = n + 1;
        } else {
            break;
        }
    }
    for &k in &order[..active] {
        p[k] = (level - 1.0 / gains[k]).max(0.0);
    }
    p
}

/// `Σ_k log2(1 + p_k·g_k)` in bit/s/Hz.
pub fn spectral_efficiency(gains: &[f64], powers: &[f64]) -> f64 {
    gains.iter().zip(powers).map(|(g, p)| (1.0 + p * g).log2()).sum()
}

/// Per-bin whitening factors `L⁻¹` (with `W = L·Lᴴ`) and power budgets.
#[derive(Debug, Clone)]
pub struct CapacityPlan {
    whiten: Vec<DMatrix<Complex64>>,
    budget_mw: Vec<f64>,
    f_step: f64,
}

impl CapacityPlan {
    pub fn new(grid: &MimoGrid, noise: &NoiseModel, mask: &PsdMask) -> Result<Self> {
        let n_rx = grid.n_rx();
        noise.validate(n_rx)?;
        if !mask.covers(grid) {
            return Err(Error::InvalidInput("PSD mask does not cover the grid's band".into()));
        }
        let df = grid.f_step();
        let mut whiten = Vec::with_capacity(grid.n_freq());
        let mut budget_mw = Vec::with_capacity(grid.n_freq());
        for f in grid.frequencies() {
            let w = noise.covariance(n_rx, f, df);
            let chol = Cholesky::new(w).ok_or_else(|| {
                Error::InvalidInput(format!("noise covariance is not positive definite at {f} Hz"))
            })?;
            let l_inv = chol
                .l()
                .try_inverse()
                .ok_or_else(|| Error::InvalidInput(format!("noise covariance is singular at {f} Hz")))?;
            whiten.push(l_inv);
            budget_mw.push(dbm_to_mw(mask.level(f)) * df);
        }
        Ok(CapacityPlan {
            whiten,
            budget_mw,
            f_step: df,
        })
    }

    /// Capacity of one realization in bit/s.
    pub fn capacity(&self, h: &Array3<Complex64>) -> Result<f64> {
        let (nr, nt, nf) = h.dim();
        if nf != self.whiten.len() || nr != self.whiten[0].nrows() {
            return Err(dim_mismatch(
                format!("{} rx × {} bins", self.whiten[0].nrows(), self.whiten.len()),
                format!("{nr} rx × {nf} bins"),
            ));
        }
        let mut total = 0.0;
        for n in 0..nf {
            let hn = DMatrix::from_fn(nr, nt, |j, i| h[[j, i, n]]);
            if hn.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
                return Err(Error::InvalidInput(format!("non-finite channel at bin {n}")));
            }
            let g = &self.whiten[n] * hn;
            let gains: Vec<f64> = g.singular_values().iter().map(|s| s * s).collect();
            let p = water_fill(&gains, self.budget_mw[n]);
            total += spectral_efficiency(&gains, &p);
        }
        Ok(total * self.f_step)
    }
}

pub fn capacity_one(h: &Array3<Complex64>, grid: &MimoGrid, noise: &NoiseModel, mask: &PsdMask) -> Result<f64> {
    CapacityPlan::new(grid, noise, mask)?.capacity(h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityResult {
    /// bit/s, in realization order.
    pub per_realization: Vec<f64>,
    /// `(rate, P(C ≥ rate))`, rates ascending.
    pub ccdf: Vec<(f64, f64)>,
}

/// Empirical CCDF: probabilities run from 1 down to `1/n`.
pub fn empirical_ccdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, (n - i as f64) / n))
        .collect()
}

pub fn capacity_ccdf(set: &ChannelSet, noise: &NoiseModel, mask: &PsdMask) -> Result<CapacityResult> {
    if set.is_empty() {
        return Err(Error::InvalidInput("capacity of an empty set".into()));
    }
    let plan = CapacityPlan::new(set.grid(), noise, mask)?;
    let per_realization = set
        .realizations()
        .par_iter()
        .map(|h| plan.capacity(h))
        .collect::<Result<Vec<_>>>()?;
    let ccdf = empirical_ccdf(&per_realization);
    Ok(CapacityResult { per_realization, ccdf })
}
