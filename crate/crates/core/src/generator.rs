//! Synthetic channel generation.
//!
//! Amplitudes in dB are drawn as `S·N + μ` with `S` the covariance square
//! root, phases as a linear profile `−s·f` whose slope `s` follows a GEV law
//! and is shared by every mode of a realization. Each realization owns two
//! ChaCha streams derived from the master seed (amplitude and phase), so the
//! output does not depend on how the work is split across threads.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par};
use ndarray::Array3;
use num_complex::Complex64;
use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma;

use crate::covariance::{self, PsdRepairReport};
use crate::error::{dim_mismatch, Error, Result};
use crate::model::{combine_db, ChannelSet, GevParams, GridShape, MimoGrid, ModelParameters, Scheme};

/// Realizations generated together in one matrix product.
const CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenerationMode {
    Synthetic,
    /// Empirical covariances with Gaussian-copula phases.
    NotFullySynthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub n_realizations: usize,
    pub seed: u64,
    pub scheme: Scheme,
    pub mode: GenerationMode,
    pub exponential_cm_refinement: bool,
    pub decimation: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_realizations: 353,
            seed: 1,
            scheme: Scheme::Mimo2x3,
            mode: GenerationMode::Synthetic,
            exponential_cm_refinement: false,
            decimation: 1,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_realizations == 0 {
            return Err(Error::InvalidInput("at least one realization is required".into()));
        }
        if self.decimation == 0 {
            return Err(Error::InvalidInput("decimation factor must be ≥ 1".into()));
        }
        Ok(())
    }

    /// The grid actually generated on: `base` decimated, restricted to the
    /// configured scheme.
    pub fn effective_grid(&self, base: &MimoGrid) -> Result<MimoGrid> {
        self.validate()?;
        Ok(base.decimate(self.decimation)?.with_scheme(self.scheme))
    }
}

/// Generalized extreme value law with `F(x) = exp(−(1 + ξ·z)^{−1/ξ})`,
/// `z = (x − μ)/σ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gev {
    pub shape: f64,
    pub location: f64,
    pub scale: f64,
}

/// Below this |ξ| the Gumbel limit is used.
const GUMBEL_EPS: f64 = 1e-12;

impl From<GevParams> for Gev {
    fn from(p: GevParams) -> Self {
        Gev {
            shape: p.shape,
            location: p.location,
            scale: p.scale,
        }
    }
}

impl Gev {
    pub fn new(shape: f64, location: f64, scale: f64) -> Result<Self> {
        if !(shape.is_finite() && location.is_finite() && scale.is_finite()) || scale <= 0.0 {
            return Err(Error::Parameter(format!(
                "invalid GEV parameters ξ={shape}, μ={location}, σ={scale}"
            )));
        }
        Ok(Gev { shape, location, scale })
    }

    /// Inverse CDF at `u ∈ (0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        let y = -u.ln();
        if self.shape.abs() < GUMBEL_EPS {
            self.location - self.scale * y.ln()
        } else {
            self.location + self.scale * (y.powf(-self.shape) - 1.0) / self.shape
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.sample(Open01);
        self.quantile(u)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let z = (x - self.location) / self.scale;
        if self.shape.abs() < GUMBEL_EPS {
            return (-(-z).exp()).exp();
        }
        let t = 1.0 + self.shape * z;
        if t <= 0.0 {
            return if self.shape > 0.0 { 0.0 } else { 1.0 };
        }
        (-t.powf(-1.0 / self.shape)).exp()
    }

    /// Log density; `−∞` outside the support.
    pub fn ln_pdf(&self, x: f64) -> f64 {
        let z = (x - self.location) / self.scale;
        if self.shape.abs() < GUMBEL_EPS {
            return -self.scale.ln() - z - (-z).exp();
        }
        let t = 1.0 + self.shape * z;
        if t <= 0.0 {
            return f64::NEG_INFINITY;
        }
        -self.scale.ln() - (1.0 + 1.0 / self.shape) * t.ln() - t.powf(-1.0 / self.shape)
    }

    /// `μ + σ(Γ(1−ξ) − 1)/ξ`; infinite for ξ ≥ 1.
    pub fn mean(&self) -> f64 {
        if self.shape >= 1.0 {
            f64::INFINITY
        } else if self.shape.abs() < GUMBEL_EPS {
            self.location + self.scale * 0.577_215_664_901_532_9
        } else {
            self.location + self.scale * (gamma(1.0 - self.shape) - 1.0) / self.shape
        }
    }
}

/// Maps `x` to `[−π, π)` modulo 2π.
pub fn wrap_phase(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y >= PI {
        -PI
    } else {
        y
    }
}

/// `S·N + μ` for one standard-normal draw `N` from `rng`.
pub fn gen_amplitudes<R: Rng + ?Sized>(s: MatRef<'_, f64>, mu: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    let m = mu.len();
    if s.nrows() != m || s.ncols() != m {
        return Err(dim_mismatch(format!("{m}×{m}"), format!("{}×{}", s.nrows(), s.ncols())));
    }
    let noise: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
    let mut out = mu.to_vec();
    for (q, &nq) in noise.iter().enumerate() {
        let col = s.col(q);
        for (p, o) in out.iter_mut().enumerate() {
            *o += col[p] * nq;
        }
    }
    Ok(out)
}

/// Wrapped phase `wrap(−s·f)` on the grid, identical for every mode.
pub fn phase_profile(grid: &MimoGrid, slope: f64) -> Array3<f64> {
    let freqs = grid.frequencies();
    let (nr, nt, nf) = grid.shape().array_dim();
    Array3::from_shape_fn((nr, nt, nf), |(_, _, n)| wrap_phase(-slope * freqs[n]))
}

/// Draws one GEV slope from `rng` and returns it with its phase array.
pub fn gen_phases<R: Rng + ?Sized>(grid: &MimoGrid, gev: &Gev, rng: &mut R) -> (f64, Array3<f64>) {
    let slope = gev.sample(rng);
    (slope, phase_profile(grid, slope))
}

/// Amplitude stream of realization `r`.
pub fn amplitude_rng(seed: u64, r: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * r as u64);
    rng
}

/// Phase stream of realization `r`.
pub fn phase_rng(seed: u64, r: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * r as u64 + 1);
    rng
}

/// Draws `S·N + μ` for realizations `start..start + count`, one column each.
fn amplitude_chunk(s: MatRef<'_, f64>, mu: &[f64], seed: u64, start: usize, count: usize) -> Mat<f64> {
    let m = mu.len();
    let mut noise = Mat::<f64>::zeros(m, count);
    for c in 0..count {
        let mut rng = amplitude_rng(seed, start + c);
        for p in 0..m {
            noise[(p, c)] = rng.sample(StandardNormal);
        }
    }
    let mut out = Mat::from_fn(m, count, |p, _| mu[p]);
    matmul(out.as_mut(), Accum::Add, s, noise.as_ref(), 1.0, Par::Seq);
    out
}

fn assemble_realization(shape: GridShape, amp_db: impl Fn(usize) -> f64, phase: impl Fn(usize, usize, usize) -> f64) -> Array3<Complex64> {
    Array3::from_shape_fn(shape.array_dim(), |(j, i, n)| {
        combine_db(amp_db(shape.linear_index(i, j, n)), phase(j, i, n))
    })
}

/// A ready-to-sample synthetic model: the factored covariance, mean vector
/// and phase law on a fixed grid.
#[derive(Debug, Clone)]
pub struct SyntheticGenerator {
    grid: MimoGrid,
    sqrt: Mat<f64>,
    mean: Vec<f64>,
    gev: Gev,
}

impl SyntheticGenerator {
    /// Factors the model covariance on `grid`.
    pub fn new(params: &ModelParameters, grid: &MimoGrid, exp_refinement: bool) -> Result<(Self, PsdRepairReport)> {
        let (sqrt, report) = covariance::amplitude_sqrt(params, grid, exp_refinement)?;
        Ok((Self::from_sqrt(params, grid, sqrt)?, report))
    }

    /// As [`SyntheticGenerator::new`], reusing or filling the square-root
    /// cache at `cache`.
    pub fn with_cache(
        params: &ModelParameters,
        grid: &MimoGrid,
        exp_refinement: bool,
        cache: &Path,
    ) -> Result<(Self, Option<PsdRepairReport>)> {
        let (sqrt, report) = covariance::amplitude_sqrt_cached(params, grid, exp_refinement, cache)?;
        Ok((Self::from_sqrt(params, grid, sqrt)?, report))
    }

    pub fn from_sqrt(params: &ModelParameters, grid: &MimoGrid, sqrt: Mat<f64>) -> Result<Self> {
        params.validate()?;
        let m = grid.m();
        if sqrt.nrows() != m || sqrt.ncols() != m {
            return Err(dim_mismatch(format!("{m}×{m}"), format!("{}×{}", sqrt.nrows(), sqrt.ncols())));
        }
        Ok(SyntheticGenerator {
            grid: grid.clone(),
            sqrt,
            mean: covariance::mean_vector(params, grid),
            gev: Gev::new(params.gev.shape, params.gev.location, params.gev.scale)?,
        })
    }

    pub fn grid(&self) -> &MimoGrid {
        &self.grid
    }

    pub fn sqrt(&self) -> MatRef<'_, f64> {
        self.sqrt.as_ref()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Realizations `0..n` of the stream family rooted at `seed`.
    pub fn generate(&self, n: usize, seed: u64) -> Result<ChannelSet> {
        if n == 0 {
            return Err(Error::InvalidInput("at least one realization is required".into()));
        }
        let shape = self.grid.shape();
        let freqs = self.grid.frequencies();
        let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
        let chunks: Vec<Vec<Array3<Complex64>>> = starts
            .par_iter()
            .map(|&start| {
                let count = CHUNK.min(n - start);
                let amps = amplitude_chunk(self.sqrt.as_ref(), &self.mean, seed, start, count);
                (0..count)
                    .map(|c| {
                        let slope = self.gev.sample(&mut phase_rng(seed, start + c));
                        assemble_realization(shape, |p| amps[(p, c)], |_, _, k| wrap_phase(-slope * freqs[k]))
                    })
                    .collect()
            })
            .collect();
        ChannelSet::new(self.grid.clone(), chunks.into_iter().flatten().collect())
    }
}

/// Synthetic generation end to end: the effective grid is `base` decimated
/// by `config.decimation` and restricted to `config.scheme`.
pub fn generate(config: &GeneratorConfig, params: &ModelParameters, base: &MimoGrid) -> Result<ChannelSet> {
    if config.mode != GenerationMode::Synthetic {
        return Err(Error::InvalidInput(
            "not-fully-synthetic generation needs empirical matrices; use generate_copula".into(),
        ));
    }
    let grid = config.effective_grid(base)?;
    let (generator, _) = SyntheticGenerator::new(params, &grid, config.exponential_cm_refinement)?;
    generator.generate(config.n_realizations, config.seed)
}

/// Empirical inputs of the not-fully-synthetic path.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMatrices {
    /// Amplitude covariance in dB².
    pub q_a: Mat<f64>,
    /// Phase normalized covariance.
    pub r_phi: Mat<f64>,
    /// Amplitude mean in dB.
    pub mu_a: Vec<f64>,
}

const EMPIRICAL_MAGIC: &[u8; 8] = b"PLCEMPM\0";
const EMPIRICAL_VERSION: u32 = 1;

impl EmpiricalMatrices {
    pub fn new(q_a: Mat<f64>, r_phi: Mat<f64>, mu_a: Vec<f64>) -> Result<Self> {
        let m = mu_a.len();
        for (name, mat) in [("Q_A", &q_a), ("R_phi", &r_phi)] {
            if mat.nrows() != m || mat.ncols() != m {
                return Err(dim_mismatch(
                    format!("{name} {m}×{m}"),
                    format!("{}×{}", mat.nrows(), mat.ncols()),
                ));
            }
            for q in 0..m {
                for p in 0..q {
                    if (mat[(p, q)] - mat[(q, p)]).abs() > 1e-9 * mat[(p, q)].abs().max(1.0) {
                        return Err(Error::InvalidInput(format!("{name} is not symmetric at ({p}, {q})")));
                    }
                }
            }
        }
        if (0..m).any(|p| (r_phi[(p, p)] - 1.0).abs() > 1e-9) {
            return Err(Error::InvalidInput("R_phi must have a unit diagonal".into()));
        }
        Ok(EmpiricalMatrices { q_a, r_phi, mu_a })
    }

    pub fn dim(&self) -> usize {
        self.mu_a.len()
    }

    /// `magic | version | M | Q_A | R_φ | μ_A`, row-major little-endian f64.
    pub fn write(&self, path: &Path) -> Result<()> {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let tmp = tempfile::NamedTempFile::new_in(dir)?;
        {
            let mut w = BufWriter::new(tmp.as_file());
            w.write_all(EMPIRICAL_MAGIC)?;
            w.write_all(&EMPIRICAL_VERSION.to_le_bytes())?;
            w.write_all(&(self.dim() as u64).to_le_bytes())?;
            for mat in [&self.q_a, &self.r_phi] {
                for p in 0..self.dim() {
                    for q in 0..self.dim() {
                        w.write_all(&mat[(p, q)].to_le_bytes())?;
                    }
                }
            }
            for v in &self.mu_a {
                w.write_all(&v.to_le_bytes())?;
            }
            w.flush()?;
        }
        tmp.persist(path).map_err(|e| Error::Io(e.error))?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != EMPIRICAL_MAGIC {
            return Err(Error::InvalidInput(format!("{} is not an empirical-matrices file", path.display())));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        if u32::from_le_bytes(b4) != EMPIRICAL_VERSION {
            return Err(Error::InvalidInput("unsupported empirical-matrices version".into()));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let m = u64::from_le_bytes(b8) as usize;
        let mut next = || -> Result<f64> {
            r.read_exact(&mut b8)?;
            Ok(f64::from_le_bytes(b8))
        };
        let mut mats = Vec::with_capacity(2);
        for _ in 0..2 {
            let mut mat = Mat::<f64>::zeros(m, m);
            for p in 0..m {
                for q in 0..m {
                    mat[(p, q)] = next()?;
                }
            }
            mats.push(mat);
        }
        let mu_a = (0..m).map(|_| next()).collect::<Result<Vec<_>>>()?;
        let r_phi = mats.pop().expect("two matrices read");
        let q_a = mats.pop().expect("two matrices read");
        EmpiricalMatrices::new(q_a, r_phi, mu_a)
    }
}

/// Gaussian correlation that yields rank correlation `rho` after the
/// normal-CDF transform.
pub fn copula_adjust(rho: f64) -> f64 {
    2.0 * (PI * rho / 6.0).sin()
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Repair reports of the two factorizations done by the copula path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CopulaReports {
    pub amplitude: PsdRepairReport,
    pub phase: PsdRepairReport,
}

/// Not-fully-synthetic generation: amplitudes from the empirical `Q_A`,
/// `μ_A`; phases from a Gaussian copula matched to `R_φ` and mapped to
/// uniform on `[−π, π)`.
pub fn generate_copula(
    config: &GeneratorConfig,
    matrices: &EmpiricalMatrices,
    grid: &MimoGrid,
) -> Result<(ChannelSet, CopulaReports)> {
    config.validate()?;
    let m = grid.m();
    if matrices.dim() != m {
        return Err(dim_mismatch(format!("matrices for M = {m}"), matrices.dim()));
    }
    let (s_a, amp_report) = covariance::psd_sqrt(matrices.q_a.as_ref())?;
    let r_z = Mat::from_fn(m, m, |p, q| {
        if p == q {
            1.0
        } else {
            copula_adjust(matrices.r_phi[(p, q)])
        }
    });
    let (s_z, phase_report) = covariance::psd_sqrt(r_z.as_ref())?;
    drop(r_z);

    let n = config.n_realizations;
    let shape = grid.shape();
    let zero = vec![0.0; m];
    let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
    let chunks: Vec<Vec<Array3<Complex64>>> = starts
        .par_iter()
        .map(|&start| {
            let count = CHUNK.min(n - start);
            let amps = amplitude_chunk(s_a.as_ref(), &matrices.mu_a, config.seed, start, count);
            let z = phase_chunk(s_z.as_ref(), &zero, config.seed, start, count);
            (0..count)
                .map(|c| {
                    assemble_realization(
                        shape,
                        |p| amps[(p, c)],
                        |j, i, k| uniform_phase(normal_cdf(z[(shape.linear_index(i, j, k), c)])),
                    )
                })
                .collect()
        })
        .collect();
    let set = ChannelSet::new(grid.clone(), chunks.into_iter().flatten().collect())?;
    Ok((
        set,
        CopulaReports {
            amplitude: amp_report,
            phase: phase_report,
        },
    ))
}

fn phase_chunk(s: MatRef<'_, f64>, mu: &[f64], seed: u64, start: usize, count: usize) -> Mat<f64> {
    let m = mu.len();
    let mut noise = Mat::<f64>::zeros(m, count);
    for c in 0..count {
        let mut rng = phase_rng(seed, start + c);
        for p in 0..m {
            noise[(p, c)] = rng.sample(StandardNormal);
        }
    }
    let mut out = Mat::<f64>::zeros(m, count);
    matmul(out.as_mut(), Accum::Replace, s, noise.as_ref(), 1.0, Par::Seq);
    out
}

fn uniform_phase(u: f64) -> f64 {
    wrap_phase(2.0 * PI * u - PI)
}
