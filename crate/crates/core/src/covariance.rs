//! Reconstruction of the amplitude covariance from the compact parameter set.
//!
//! Diagonal blocks are symmetric Toeplitz matrices built from the power-law
//! anti-diagonal profile; the block between modes `i` and `j` is derived from
//! the two diagonal blocks as `(R_ii·R_jj / N_f + R_ii ∘ R_jj) / 2`. The
//! normalized matrix is scaled by the standard-deviation profiles into a
//! covariance, repaired to positive semidefinite by clamping negative
//! eigenvalues, and factored into its symmetric square root.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::evd::{self_adjoint_evd, self_adjoint_evd_scratch, ComputeEigenvectors};
use faer::linalg::matmul::matmul;
use faer::diag::Diag;
use faer::{Accum, Mat, MatRef, Par};
use sha2::{Digest, Sha256};

use crate::error::{dim_mismatch, Error, Result};
use crate::model::{ExpCorrection, MimoGrid, ModeCombination, ModelParameters};

/// Stripe values `r(Δ)` of a Toeplitz block, one per lag index.
#[derive(Debug, Clone, PartialEq)]
pub struct AntiDiagonalProfile {
    values: Vec<f64>,
}

impl AntiDiagonalProfile {
    /// Wraps raw stripe values. `r(0)` is expected to be 1 for a normalized
    /// block but is not forced here, so fitted or empirical profiles can be
    /// represented as-is.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("empty anti-diagonal profile".into()));
        }
        Ok(AntiDiagonalProfile { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Evaluates the anti-diagonal profile on the grid lags `Δ·f_step`:
/// `r(0) = 1`, `r(Δ) = clamp(a·(Δ·f_step)^b + c [+ exp term], 0, 1)`.
///
/// The exponential correction applies to CM profiles at lags of 40 MHz and
/// above, when `exp_refinement` is set.
pub fn antidiag_profile(
    params: &ModelParameters,
    is_cm: bool,
    grid: &MimoGrid,
    exp_refinement: bool,
) -> Result<AntiDiagonalProfile> {
    let power = params.power_law(is_cm);
    let correction = match (is_cm && exp_refinement, params.antidiag_cm_exp) {
        (true, Some(c)) => Some(c),
        (true, None) => {
            return Err(Error::Parameter(
                "exponential CM refinement requested but no coefficients are set".into(),
            ))
        }
        (false, _) => None,
    };
    let mut values = Vec::with_capacity(grid.n_freq());
    values.push(1.0);
    for lag in 1..grid.n_freq() {
        let lag_hz = lag as f64 * grid.f_step();
        let mut v = power.eval(lag_hz);
        if let Some(c) = correction {
            if lag_hz >= ExpCorrection::ACTIVATION_LAG_HZ {
                v += c.eval(lag_hz);
            }
        }
        if !v.is_finite() {
            return Err(Error::Parameter(format!(
                "anti-diagonal fit is not finite at lag {lag_hz} Hz"
            )));
        }
        values.push(v.clamp(0.0, 1.0));
    }
    Ok(AntiDiagonalProfile { values })
}

/// Symmetric Toeplitz matrix with entry `(m, n) = r(|m − n|)`.
pub fn toeplitz_block(profile: &AntiDiagonalProfile) -> Mat<f64> {
    let r = &profile.values;
    Mat::from_fn(r.len(), r.len(), |m, n| r[m.abs_diff(n)])
}

/// Cross-mode block `(R_ii·R_jj / N_f + R_ii ∘ R_jj) / 2`.
pub fn offdiag_block(r_ii: MatRef<'_, f64>, r_jj: MatRef<'_, f64>, n_freq: usize) -> Result<Mat<f64>> {
    let dims_ok = r_ii.nrows() == n_freq
        && r_ii.ncols() == n_freq
        && r_jj.nrows() == n_freq
        && r_jj.ncols() == n_freq;
    if !dims_ok {
        return Err(dim_mismatch(
            format!("two {n_freq}×{n_freq} blocks"),
            format!(
                "{}×{} and {}×{}",
                r_ii.nrows(),
                r_ii.ncols(),
                r_jj.nrows(),
                r_jj.ncols()
            ),
        ));
    }
    let mut out = Mat::<f64>::zeros(n_freq, n_freq);
    matmul(
        out.as_mut(),
        Accum::Replace,
        r_ii,
        r_jj,
        0.5 / n_freq as f64,
        Par::Seq,
    );
    for n in 0..n_freq {
        for m in 0..n_freq {
            out[(m, n)] += 0.5 * r_ii[(m, n)] * r_jj[(m, n)];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceKind {
    /// Unit diagonal, entries in `[−1, 1]`.
    Normalized,
    Covariance,
}

/// An `M × M` matrix organized as `n_combos × n_combos` blocks of
/// `N_f × N_f`, following the reshape order of the grid.
#[derive(Debug, Clone)]
pub struct BlockCovariance {
    combos: Vec<ModeCombination>,
    n_freq: usize,
    kind: CovarianceKind,
    matrix: Mat<f64>,
    n_clamped: usize,
}

impl BlockCovariance {
    pub fn from_matrix(
        combos: Vec<ModeCombination>,
        n_freq: usize,
        kind: CovarianceKind,
        matrix: Mat<f64>,
    ) -> Result<Self> {
        let m = combos.len() * n_freq;
        if matrix.nrows() != m || matrix.ncols() != m {
            return Err(dim_mismatch(
                format!("{m}×{m}"),
                format!("{}×{}", matrix.nrows(), matrix.ncols()),
            ));
        }
        Ok(BlockCovariance {
            combos,
            n_freq,
            kind,
            matrix,
            n_clamped: 0,
        })
    }

    pub fn combos(&self) -> &[ModeCombination] {
        &self.combos
    }

    pub fn n_blocks(&self) -> usize {
        self.combos.len()
    }

    pub fn n_freq(&self) -> usize {
        self.n_freq
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn kind(&self) -> CovarianceKind {
        self.kind
    }

    pub fn matrix(&self) -> MatRef<'_, f64> {
        self.matrix.as_ref()
    }

    pub fn into_matrix(self) -> Mat<f64> {
        self.matrix
    }

    /// Entries that fell outside `[−1, 1]` during assembly and were clamped.
    pub fn n_clamped(&self) -> usize {
        self.n_clamped
    }

    pub fn block(&self, i: usize, j: usize) -> MatRef<'_, f64> {
        let nf = self.n_freq;
        self.matrix.as_ref().submatrix(i * nf, j * nf, nf, nf)
    }

    pub fn get(&self, p: usize, q: usize) -> f64 {
        self.matrix[(p, q)]
    }

    /// Drops every block row/column whose combination is not in `keep`.
    pub fn select(&self, keep: &[ModeCombination]) -> Result<BlockCovariance> {
        let idx: Vec<usize> = keep
            .iter()
            .map(|k| {
                self.combos
                    .iter()
                    .position(|c| c == k)
                    .ok_or_else(|| Error::InvalidInput(format!("combination {k} not present")))
            })
            .collect::<Result<_>>()?;
        let nf = self.n_freq;
        let m = idx.len() * nf;
        let matrix = Mat::from_fn(m, m, |p, q| {
            self.matrix[(idx[p / nf] * nf + p % nf, idx[q / nf] * nf + q % nf)]
        });
        Ok(BlockCovariance {
            combos: keep.to_vec(),
            n_freq: nf,
            kind: self.kind,
            matrix,
            n_clamped: self.n_clamped,
        })
    }
}

/// Assembles the normalized amplitude correlation for the grid's mode
/// combinations. For the reduced schemes this equals selecting the
/// corresponding block rows/columns of the 2×3 construction, since every
/// block depends only on its two diagonal blocks.
pub fn assemble_r(params: &ModelParameters, grid: &MimoGrid, exp_refinement: bool) -> Result<BlockCovariance> {
    let combos = grid.combos();
    let nf = grid.n_freq();
    let nocm = toeplitz_block(&antidiag_profile(params, false, grid, exp_refinement)?);
    let cm = if combos.iter().any(|c| c.is_cm()) {
        Some(toeplitz_block(&antidiag_profile(params, true, grid, exp_refinement)?))
    } else {
        None
    };
    let diag_of = |c: &ModeCombination| -> &Mat<f64> {
        if c.is_cm() {
            cm.as_ref().expect("CM block built when CM combos exist")
        } else {
            &nocm
        }
    };

    let m = combos.len() * nf;
    let mut r = Mat::<f64>::zeros(m, m);
    let mut n_clamped = 0;
    for (i, ci) in combos.iter().enumerate() {
        r.as_mut()
            .submatrix_mut(i * nf, i * nf, nf, nf)
            .copy_from(diag_of(ci));
        for (j, cj) in combos.iter().enumerate().skip(i + 1) {
            let mut off = offdiag_block(diag_of(ci).as_ref(), diag_of(cj).as_ref(), nf)?;
            for n in 0..nf {
                for k in 0..nf {
                    let v = off[(k, n)];
                    if !(-1.0..=1.0).contains(&v) {
                        off[(k, n)] = v.clamp(-1.0, 1.0);
                        n_clamped += 1;
                    }
                }
            }
            r.as_mut().submatrix_mut(i * nf, j * nf, nf, nf).copy_from(&off);
            r.as_mut()
                .submatrix_mut(j * nf, i * nf, nf, nf)
                .copy_from(off.transpose());
        }
    }
    Ok(BlockCovariance {
        combos,
        n_freq: nf,
        kind: CovarianceKind::Normalized,
        matrix: r,
        n_clamped,
    })
}

/// Standard-deviation profile in reshape order.
pub fn sigma_vector(params: &ModelParameters, grid: &MimoGrid) -> Vec<f64> {
    let freqs = grid.frequencies();
    grid.combos()
        .iter()
        .flat_map(|c| freqs.iter().map(move |&f| params.sigma_profile(f, *c)))
        .collect()
}

/// Mean amplitude profile in reshape order.
pub fn mean_vector(params: &ModelParameters, grid: &MimoGrid) -> Vec<f64> {
    let freqs = grid.frequencies();
    (0..grid.combos().len())
        .flat_map(|_| freqs.iter().map(|&f| params.mu_profile(f)))
        .collect()
}

/// `Q = R ∘ (σ σᵀ)` with σ taken from the standard-deviation profiles.
pub fn scale_to_q(r: BlockCovariance, params: &ModelParameters, grid: &MimoGrid) -> Result<BlockCovariance> {
    let sigma = sigma_vector(params, grid);
    scale_by_vector(r, &sigma)
}

/// `Q = R ∘ (σ σᵀ)` for an explicit σ vector.
pub fn scale_by_vector(r: BlockCovariance, sigma: &[f64]) -> Result<BlockCovariance> {
    if r.kind != CovarianceKind::Normalized {
        return Err(Error::InvalidInput("scale_to_q expects a normalized matrix".into()));
    }
    if sigma.len() != r.dim() {
        return Err(dim_mismatch(r.dim(), sigma.len()));
    }
    let mut out = r;
    let m = out.dim();
    for q in 0..m {
        for p in 0..m {
            out.matrix[(p, q)] *= sigma[p] * sigma[q];
        }
    }
    out.kind = CovarianceKind::Covariance;
    Ok(out)
}

/// Outcome of the eigenvalue-clamping repair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdRepairReport {
    pub min_eigenvalue_before: f64,
    pub n_clamped: usize,
    /// `‖Q_repaired − Q‖_F / ‖Q‖_F`.
    pub frobenius_change: f64,
}

impl std::fmt::Display for PsdRepairReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "min eigenvalue {:.6e}, {} eigenvalues clamped, relative Frobenius change {:.3e}",
            self.min_eigenvalue_before, self.n_clamped, self.frobenius_change
        )
    }
}

/// Symmetric eigendecomposition `Q = V Λ Vᵀ`, sequential so results are
/// reproducible bit-for-bit.
pub fn symmetric_eigen(q: MatRef<'_, f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let n = q.nrows();
    if q.ncols() != n {
        return Err(dim_mismatch("square matrix", format!("{}×{}", n, q.ncols())));
    }
    if q.has_nan() || !q.is_all_finite() {
        return Err(Error::Numerical("matrix has non-finite entries".into()));
    }
    let par = Par::Seq;
    let mut u = Mat::<f64>::zeros(n, n);
    let mut s = Diag::<f64>::zeros(n);
    let mut mem = MemBuffer::new(self_adjoint_evd_scratch::<f64>(
        n,
        ComputeEigenvectors::Yes,
        par,
        Default::default(),
    ));
    self_adjoint_evd(
        q,
        s.as_mut(),
        Some(u.as_mut()),
        par,
        MemStack::new(&mut mem),
        Default::default(),
    )
    .map_err(|e| Error::Numerical(format!("eigendecomposition of {n}×{n} matrix failed: {e:?}")))?;
    let eigenvalues = s.column_vector().iter().copied().collect();
    Ok((eigenvalues, u))
}

/// Symmetric square root `S = V·max(Λ, 0)^{1/2}·Vᵀ`, so that `S·S` is the
/// nearest (in Frobenius norm) positive semidefinite matrix to `Q`.
pub fn psd_sqrt(q: MatRef<'_, f64>) -> Result<(Mat<f64>, PsdRepairReport)> {
    let (eigenvalues, v) = symmetric_eigen(q)?;
    Ok(sqrt_from_eigen(&eigenvalues, v))
}

fn sqrt_from_eigen(eigenvalues: &[f64], v: Mat<f64>) -> (Mat<f64>, PsdRepairReport) {
    let report = repair_report(eigenvalues);
    // S = W·Wᵀ with W = V·Λ₊^{1/4}.
    let mut w = v;
    let n = w.nrows();
    for (k, &lambda) in eigenvalues.iter().enumerate() {
        let scale = lambda.max(0.0).sqrt().sqrt();
        for p in 0..n {
            w[(p, k)] *= scale;
        }
    }
    let mut s = Mat::<f64>::zeros(n, n);
    matmul(s.as_mut(), Accum::Replace, w.as_ref(), w.transpose(), 1.0, Par::Seq);
    (s, report)
}

fn repair_report(eigenvalues: &[f64]) -> PsdRepairReport {
    let total: f64 = eigenvalues.iter().map(|l| l * l).sum();
    let removed: f64 = eigenvalues.iter().filter(|&&l| l < 0.0).map(|l| l * l).sum();
    PsdRepairReport {
        min_eigenvalue_before: eigenvalues.iter().copied().fold(f64::INFINITY, f64::min),
        n_clamped: eigenvalues.iter().filter(|&&l| l < 0.0).count(),
        frobenius_change: if total > 0.0 { (removed / total).sqrt() } else { 0.0 },
    }
}

/// Nearest correlation-like repair: clamp negative eigenvalues and rescale
/// back to a unit diagonal.
pub fn repair_correlation(r: MatRef<'_, f64>) -> Result<(Mat<f64>, PsdRepairReport)> {
    let (eigenvalues, v) = symmetric_eigen(r)?;
    let report = repair_report(&eigenvalues);
    let n = v.nrows();
    let mut w = v;
    for (k, &lambda) in eigenvalues.iter().enumerate() {
        let scale = lambda.max(0.0).sqrt();
        for p in 0..n {
            w[(p, k)] *= scale;
        }
    }
    let mut out = Mat::<f64>::zeros(n, n);
    matmul(out.as_mut(), Accum::Replace, w.as_ref(), w.transpose(), 1.0, Par::Seq);
    let d: Vec<f64> = (0..n).map(|p| out[(p, p)].max(f64::MIN_POSITIVE).sqrt()).collect();
    for q in 0..n {
        for p in 0..n {
            out[(p, q)] /= d[p] * d[q];
        }
    }
    Ok((out, report))
}

/// The full synthetic amplitude pipeline: assemble R, scale to Q, factor.
pub fn amplitude_sqrt(
    params: &ModelParameters,
    grid: &MimoGrid,
    exp_refinement: bool,
) -> Result<(Mat<f64>, PsdRepairReport)> {
    params.validate()?;
    let r = assemble_r(params, grid, exp_refinement)?;
    let q = scale_to_q(r, params, grid)?;
    let (eigenvalues, v) = symmetric_eigen(q.matrix())?;
    drop(q);
    Ok(sqrt_from_eigen(&eigenvalues, v))
}

const CACHE_MAGIC: &[u8; 8] = b"PLCSQRT\0";
const CACHE_VERSION: u32 = 1;

/// Identifies a cached square root: digests of the model parameters (with
/// the refinement flag) and of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheKey {
    pub params: [u8; 32],
    pub grid: [u8; 32],
}

impl CacheKey {
    pub fn new(params: &ModelParameters, grid: &MimoGrid, exp_refinement: bool) -> Self {
        let mut h = Sha256::new();
        let mut put = |v: f64| h.update(v.to_le_bytes());
        put(params.mu_fit.slope_db_per_ghz);
        put(params.mu_fit.intercept_db);
        put(params.sigma_fit_nocm.slope_db_per_ghz);
        put(params.sigma_fit_nocm.intercept_db);
        put(params.sigma_fit_cm.slope_db_per_ghz);
        put(params.sigma_fit_cm.intercept_db);
        for p in [params.antidiag_nocm, params.antidiag_cm_power] {
            put(p.a);
            put(p.b);
            put(p.c);
        }
        match (exp_refinement, params.antidiag_cm_exp) {
            (true, Some(e)) => {
                h.update([1u8]);
                h.update(e.a.to_le_bytes());
                h.update(e.b.to_le_bytes());
                h.update(e.c.to_le_bytes());
            }
            _ => h.update([0u8]),
        }
        let params_digest: [u8; 32] = h.finalize().into();

        let mut g = Sha256::new();
        g.update(grid.f_start().to_le_bytes());
        g.update(grid.f_step().to_le_bytes());
        g.update((grid.n_freq() as u64).to_le_bytes());
        for c in grid.combos() {
            g.update((c.index as u64).to_le_bytes());
        }
        CacheKey {
            params: params_digest,
            grid: g.finalize().into(),
        }
    }

    /// A file name unique to the key, for use inside a cache directory.
    pub fn file_name(&self) -> String {
        let hex: String = self.params[..8]
            .iter()
            .chain(&self.grid[..8])
            .map(|b| format!("{b:02x}"))
            .collect();
        format!("sqrt-{hex}.bin")
    }
}

/// Writes `S` as `magic | version | M | params digest | grid digest |
/// row-major little-endian f64 payload`, atomically.
pub fn write_sqrt_cache(path: &Path, key: &CacheKey, s: MatRef<'_, f64>) -> Result<()> {
    let m = s.nrows();
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::with_capacity(1 << 20, tmp.as_file());
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&CACHE_VERSION.to_le_bytes())?;
        w.write_all(&(m as u64).to_le_bytes())?;
        w.write_all(&key.params)?;
        w.write_all(&key.grid)?;
        let mut row = Vec::with_capacity(m * 8);
        for p in 0..m {
            row.clear();
            for q in 0..m {
                row.extend_from_slice(&s[(p, q)].to_le_bytes());
            }
            w.write_all(&row)?;
        }
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Reads a cached square root, checking it was produced for `key`.
pub fn read_sqrt_cache(path: &Path, key: &CacheKey) -> Result<Mat<f64>> {
    let mut r = BufReader::with_capacity(1 << 20, File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(Error::CacheMismatch("bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    if u32::from_le_bytes(b4) != CACHE_VERSION {
        return Err(Error::CacheMismatch("unsupported version".into()));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let m = u64::from_le_bytes(b8) as usize;
    let mut params = [0u8; 32];
    let mut grid = [0u8; 32];
    r.read_exact(&mut params)?;
    r.read_exact(&mut grid)?;
    if params != key.params || grid != key.grid {
        return Err(Error::CacheMismatch("cache was built for different parameters or grid".into()));
    }
    let mut s = Mat::<f64>::zeros(m, m);
    let mut row = vec![0u8; m * 8];
    for p in 0..m {
        r.read_exact(&mut row)?;
        for (q, chunk) in row.chunks_exact(8).enumerate() {
            s[(p, q)] = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
    }
    Ok(s)
}

/// Loads the square root from `cache` when it matches, otherwise computes it
/// and stores it there. The repair report is `None` on a cache hit.
pub fn amplitude_sqrt_cached(
    params: &ModelParameters,
    grid: &MimoGrid,
    exp_refinement: bool,
    cache: &Path,
) -> Result<(Mat<f64>, Option<PsdRepairReport>)> {
    let key = CacheKey::new(params, grid, exp_refinement);
    match read_sqrt_cache(cache, &key) {
        Ok(s) if s.nrows() == grid.m() => return Ok((s, None)),
        Ok(_) | Err(Error::CacheMismatch(_)) | Err(Error::Io(_)) => {}
        Err(e) => return Err(e),
    }
    let (s, report) = amplitude_sqrt(params, grid, exp_refinement)?;
    write_sqrt_cache(cache, &key, s.as_ref())?;
    Ok((s, Some(report)))
}
