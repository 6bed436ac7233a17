//! Domain types shared by every stage of the pipeline: the frequency grid and
//! port labels, channel sets, the 3D ↔ vector reshaping, and the compact
//! parameter set of the synthetic amplitude/phase model.

use std::f64::consts::{LN_10, PI};
use std::fmt;
use std::str::FromStr;

use ndarray::Array3;
use num_complex::Complex64;

use crate::error::{dim_mismatch, Error, Result};

/// `20·log10(e)`: converts a phase in radians into the imaginary part of a
/// dB-scale CFR.
pub const DB_CONSTANT: f64 = 20.0 / LN_10;

/// Default sweep: 1588 bins of 62.5 kHz starting at 1.8 MHz.
pub const DEFAULT_F_START_HZ: f64 = 1.8e6;
pub const DEFAULT_F_STEP_HZ: f64 = 62.5e3;
pub const DEFAULT_N_FREQ: usize = 1588;

/// Differential (Δ-style) transmit ports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TxPort {
    PN,
    PE,
}

/// Star-style receive ports, including the common mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RxPort {
    P,
    N,
    CM,
}

impl TxPort {
    pub const ALL: [TxPort; 2] = [TxPort::PN, TxPort::PE];

    pub fn canonical_index(self) -> usize {
        match self {
            TxPort::PN => 0,
            TxPort::PE => 1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            TxPort::PN => "PN",
            TxPort::PE => "PE",
        }
    }
}

impl RxPort {
    pub const ALL: [RxPort; 3] = [RxPort::P, RxPort::N, RxPort::CM];

    pub fn canonical_index(self) -> usize {
        match self {
            RxPort::P => 0,
            RxPort::N => 1,
            RxPort::CM => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            RxPort::P => "P",
            RxPort::N => "N",
            RxPort::CM => "CM",
        }
    }
}

impl fmt::Display for TxPort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl fmt::Display for RxPort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for TxPort {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "PN" => Ok(TxPort::PN),
            "PE" => Ok(TxPort::PE),
            other => Err(Error::InvalidInput(format!("unknown transmit port '{other}'"))),
        }
    }
}

impl FromStr for RxPort {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "P" => Ok(RxPort::P),
            "N" => Ok(RxPort::N),
            "CM" => Ok(RxPort::CM),
            other => Err(Error::InvalidInput(format!("unknown receive port '{other}'"))),
        }
    }
}

/// One transmit/receive pair. `index` is the 1-based position of the pair in
/// the full 2×3 ordering (tx-major, rx-minor), so it is stable across the
/// reduced 2×2 and SISO schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModeCombination {
    pub tx: TxPort,
    pub rx: RxPort,
    pub index: usize,
}

impl ModeCombination {
    pub fn new(tx: TxPort, rx: RxPort) -> Self {
        let index = tx.canonical_index() * RxPort::ALL.len() + rx.canonical_index() + 1;
        ModeCombination { tx, rx, index }
    }

    pub fn is_cm(&self) -> bool {
        self.rx == RxPort::CM
    }
}

impl fmt::Display for ModeCombination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}=>{}", self.tx, self.rx)
    }
}

/// Transmission schemes obtained by selecting ports out of the 2×3 set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// PN ⇒ P only.
    Siso,
    /// PN, PE ⇒ P, N.
    Mimo2x2,
    /// PN, PE ⇒ P, N, CM.
    Mimo2x3,
}

impl Scheme {
    pub fn tx_ports(self) -> Vec<TxPort> {
        match self {
            Scheme::Siso => vec![TxPort::PN],
            Scheme::Mimo2x2 | Scheme::Mimo2x3 => vec![TxPort::PN, TxPort::PE],
        }
    }

    pub fn rx_ports(self) -> Vec<RxPort> {
        match self {
            Scheme::Siso => vec![RxPort::P],
            Scheme::Mimo2x2 => vec![RxPort::P, RxPort::N],
            Scheme::Mimo2x3 => vec![RxPort::P, RxPort::N, RxPort::CM],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Scheme::Siso => "siso",
            Scheme::Mimo2x2 => "2x2",
            Scheme::Mimo2x3 => "2x3",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "siso" => Ok(Scheme::Siso),
            "2x2" => Ok(Scheme::Mimo2x2),
            "2x3" => Ok(Scheme::Mimo2x3),
            other => Err(Error::InvalidInput(format!("unknown scheme '{other}'"))),
        }
    }
}

/// Bare dimensions of a 3D CFR array, without any frequency axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridShape {
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_freq: usize,
}

impl GridShape {
    pub fn new(n_tx: usize, n_rx: usize, n_freq: usize) -> Self {
        GridShape { n_tx, n_rx, n_freq }
    }

    /// `M = n_tx · n_rx · n_freq`.
    pub fn len(&self) -> usize {
        self.n_tx * self.n_rx * self.n_freq
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Array dimensions `(n_rx, n_tx, n_freq)` used for realizations.
    pub fn array_dim(&self) -> (usize, usize, usize) {
        (self.n_rx, self.n_tx, self.n_freq)
    }

    /// Zero-based position in the reshaped vector of bin `n` for the pair
    /// (tx `i`, rx `j`): `p = i·N_R·N_f + j·N_f + n`.
    pub fn linear_index(&self, tx: usize, rx: usize, bin: usize) -> usize {
        tx * self.n_rx * self.n_freq + rx * self.n_freq + bin
    }

    /// Inverse of [`GridShape::linear_index`]: returns `(tx, rx, bin)`.
    pub fn split_index(&self, p: usize) -> (usize, usize, usize) {
        let block = self.n_rx * self.n_freq;
        let tx = p / block;
        let rem = p % block;
        (tx, rem / self.n_freq, rem % self.n_freq)
    }
}

/// Frequency grid and port layout shared by a channel set.
#[derive(Debug, Clone, PartialEq)]
pub struct MimoGrid {
    n_freq: usize,
    f_start: f64,
    f_step: f64,
    tx_modes: Vec<TxPort>,
    rx_modes: Vec<RxPort>,
}

impl MimoGrid {
    pub fn new(
        f_start: f64,
        f_step: f64,
        n_freq: usize,
        tx_modes: Vec<TxPort>,
        rx_modes: Vec<RxPort>,
    ) -> Result<Self> {
        if tx_modes.is_empty() || rx_modes.is_empty() {
            return Err(Error::InvalidInput("grid needs at least one tx and one rx port".into()));
        }
        if n_freq < 2 {
            return Err(Error::InvalidInput(format!("grid needs at least 2 bins, got {n_freq}")));
        }
        if !(f_step.is_finite() && f_step > 0.0) || !(f_start.is_finite() && f_start > 0.0) {
            return Err(Error::InvalidInput(format!(
                "grid start/step must be positive and finite (start {f_start}, step {f_step})"
            )));
        }
        if has_duplicates(&tx_modes) || has_duplicates(&rx_modes) {
            return Err(Error::InvalidInput("port labels must be unique".into()));
        }
        Ok(MimoGrid {
            n_freq,
            f_start,
            f_step,
            tx_modes,
            rx_modes,
        })
    }

    /// The 1588-bin in-home grid for a given scheme.
    pub fn for_scheme(scheme: Scheme) -> Self {
        MimoGrid::new(
            DEFAULT_F_START_HZ,
            DEFAULT_F_STEP_HZ,
            DEFAULT_N_FREQ,
            scheme.tx_ports(),
            scheme.rx_ports(),
        )
        .expect("default grid is valid")
    }

    pub fn default_2x3() -> Self {
        Self::for_scheme(Scheme::Mimo2x3)
    }

    /// Keeps every `factor`-th bin, starting at the first one.
    pub fn decimate(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidInput("decimation factor must be ≥ 1".into()));
        }
        MimoGrid::new(
            self.f_start,
            self.f_step * factor as f64,
            self.n_freq.div_ceil(factor),
            self.tx_modes.clone(),
            self.rx_modes.clone(),
        )
    }

    /// Same frequency axis with a different port selection.
    pub fn with_scheme(&self, scheme: Scheme) -> Self {
        MimoGrid {
            tx_modes: scheme.tx_ports(),
            rx_modes: scheme.rx_ports(),
            ..self.clone()
        }
    }

    pub fn n_tx(&self) -> usize {
        self.tx_modes.len()
    }

    pub fn n_rx(&self) -> usize {
        self.rx_modes.len()
    }

    pub fn n_freq(&self) -> usize {
        self.n_freq
    }

    pub fn f_start(&self) -> f64 {
        self.f_start
    }

    pub fn f_step(&self) -> f64 {
        self.f_step
    }

    pub fn tx_modes(&self) -> &[TxPort] {
        &self.tx_modes
    }

    pub fn rx_modes(&self) -> &[RxPort] {
        &self.rx_modes
    }

    pub fn shape(&self) -> GridShape {
        GridShape::new(self.n_tx(), self.n_rx(), self.n_freq)
    }

    pub fn m(&self) -> usize {
        self.shape().len()
    }

    pub fn frequency(&self, bin: usize) -> f64 {
        self.f_start + bin as f64 * self.f_step
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.n_freq).map(|n| self.frequency(n)).collect()
    }

    /// Mode combinations in reshape order (tx-major, rx-minor).
    pub fn combos(&self) -> Vec<ModeCombination> {
        self.tx_modes
            .iter()
            .flat_map(|&tx| self.rx_modes.iter().map(move |&rx| ModeCombination::new(tx, rx)))
            .collect()
    }

    /// The scheme this port layout corresponds to, if it is one of the three
    /// canonical selections.
    pub fn scheme(&self) -> Option<Scheme> {
        [Scheme::Siso, Scheme::Mimo2x2, Scheme::Mimo2x3]
            .into_iter()
            .find(|s| s.tx_ports() == self.tx_modes && s.rx_ports() == self.rx_modes)
    }
}

fn has_duplicates<T: PartialEq>(items: &[T]) -> bool {
    items
        .iter()
        .enumerate()
        .any(|(k, a)| items[k + 1..].iter().any(|b| a == b))
}

/// A length-`M` vector laid out in reshape order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReshapedVector<T> {
    shape: GridShape,
    values: Vec<T>,
}

impl<T> ReshapedVector<T> {
    pub fn new(shape: GridShape, values: Vec<T>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(dim_mismatch(
                format!("{} values", shape.len()),
                format!("{} values", values.len()),
            ));
        }
        Ok(ReshapedVector { shape, values })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }
}

/// Flattens an `(n_rx, n_tx, n_freq)` array in tx-major, rx-minor,
/// frequency-fastest order.
pub fn reshape<T: Clone>(array: &Array3<T>, shape: GridShape) -> Result<ReshapedVector<T>> {
    if array.dim() != shape.array_dim() {
        return Err(dim_mismatch(
            format!("{:?}", shape.array_dim()),
            format!("{:?}", array.dim()),
        ));
    }
    let mut values = Vec::with_capacity(shape.len());
    for i in 0..shape.n_tx {
        for j in 0..shape.n_rx {
            for n in 0..shape.n_freq {
                values.push(array[[j, i, n]].clone());
            }
        }
    }
    Ok(ReshapedVector { shape, values })
}

pub fn unreshape<T: Clone>(vector: &ReshapedVector<T>) -> Array3<T> {
    let shape = vector.shape;
    Array3::from_shape_fn(shape.array_dim(), |(j, i, n)| {
        vector.values[shape.linear_index(i, j, n)].clone()
    })
}

/// A collection of CFR realizations on a common grid. Entries are linear
/// voltage ratios, finite and nonzero.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    grid: MimoGrid,
    realizations: Vec<Array3<Complex64>>,
}

impl ChannelSet {
    pub fn new(grid: MimoGrid, realizations: Vec<Array3<Complex64>>) -> Result<Self> {
        let dim = grid.shape().array_dim();
        for (r, h) in realizations.iter().enumerate() {
            if h.dim() != dim {
                return Err(dim_mismatch(
                    format!("realization {r} with dims {dim:?}"),
                    format!("{:?}", h.dim()),
                ));
            }
            for ((rx, tx, bin), v) in h.indexed_iter() {
                if !(v.re.is_finite() && v.im.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "non-finite entry in realization {r} (rx {rx}, tx {tx}, bin {bin})"
                    )));
                }
                if v.re == 0.0 && v.im == 0.0 {
                    return Err(Error::DegenerateChannel {
                        realization: r,
                        rx,
                        tx,
                        bin,
                    });
                }
            }
        }
        Ok(ChannelSet { grid, realizations })
    }

    pub fn grid(&self) -> &MimoGrid {
        &self.grid
    }

    pub fn realizations(&self) -> &[Array3<Complex64>] {
        &self.realizations
    }

    pub fn len(&self) -> usize {
        self.realizations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.realizations.is_empty()
    }

    /// Keeps only the ports of `scheme`; the set must already contain them.
    pub fn select(&self, scheme: Scheme) -> Result<ChannelSet> {
        let tx_idx = port_positions(self.grid.tx_modes(), &scheme.tx_ports())?;
        let rx_idx = port_positions(self.grid.rx_modes(), &scheme.rx_ports())?;
        let grid = self.grid.with_scheme(scheme);
        let realizations = self
            .realizations
            .iter()
            .map(|h| {
                Array3::from_shape_fn(grid.shape().array_dim(), |(j, i, n)| {
                    h[[rx_idx[j], tx_idx[i], n]]
                })
            })
            .collect();
        Ok(ChannelSet { grid, realizations })
    }
}

fn port_positions<T: PartialEq + fmt::Display>(have: &[T], want: &[T]) -> Result<Vec<usize>> {
    want.iter()
        .map(|w| {
            have.iter()
                .position(|h| h == w)
                .ok_or_else(|| Error::InvalidInput(format!("port {w} not present in channel set")))
        })
        .collect()
}

/// Amplitude in dB and principal phase in `[−π, π)` of every entry.
pub type DbSplit = (Vec<Array3<f64>>, Vec<Array3<f64>>);

pub fn split_cfr_db(set: &ChannelSet) -> Result<DbSplit> {
    let mut amps = Vec::with_capacity(set.len());
    let mut phases = Vec::with_capacity(set.len());
    for (r, h) in set.realizations().iter().enumerate() {
        let mut a = Array3::zeros(h.dim());
        let mut p = Array3::zeros(h.dim());
        for ((rx, tx, bin), v) in h.indexed_iter() {
            if v.re == 0.0 && v.im == 0.0 {
                return Err(Error::DegenerateChannel {
                    realization: r,
                    rx,
                    tx,
                    bin,
                });
            }
            let (amp, phase) = split_db(*v);
            a[[rx, tx, bin]] = amp;
            p[[rx, tx, bin]] = phase;
        }
        amps.push(a);
        phases.push(p);
    }
    Ok((amps, phases))
}

/// `(20·log10|h|, arg h)` with the argument mapped to `[−π, π)`.
pub fn split_db(h: Complex64) -> (f64, f64) {
    let mut phase = h.im.atan2(h.re);
    if phase >= PI {
        phase -= 2.0 * PI;
    }
    (20.0 * h.norm().log10(), phase)
}

/// Inverse of [`split_db`].
pub fn combine_db(amp_db: f64, phase: f64) -> Complex64 {
    Complex64::from_polar(10f64.powf(amp_db / 20.0), phase)
}

pub fn recombine(amp_db: &Array3<f64>, phase: &Array3<f64>) -> Result<Array3<Complex64>> {
    if amp_db.dim() != phase.dim() {
        return Err(dim_mismatch(format!("{:?}", amp_db.dim()), format!("{:?}", phase.dim())));
    }
    Ok(ndarray::Zip::from(amp_db)
        .and(phase)
        .map_collect(|&a, &p| combine_db(a, p)))
}

/// A straight line in dB against frequency in GHz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearProfile {
    pub slope_db_per_ghz: f64,
    pub intercept_db: f64,
}

impl LinearProfile {
    pub fn eval(&self, f_hz: f64) -> f64 {
        self.intercept_db + self.slope_db_per_ghz * f_hz * 1e-9
    }
}

/// `a·f^b + c` with `f` the frequency lag in Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLaw {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl PowerLaw {
    pub fn eval(&self, lag_hz: f64) -> f64 {
        self.a * lag_hz.powf(self.b) + self.c
    }
}

/// `a·e^{b·f} + c` with `f` the frequency lag in Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpCorrection {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl ExpCorrection {
    /// Lags at or above this value receive the correction.
    pub const ACTIVATION_LAG_HZ: f64 = 40e6;

    pub fn eval(&self, lag_hz: f64) -> f64 {
        self.a * (self.b * lag_hz).exp() + self.c
    }
}

/// Shape ξ, location μ and scale σ of a generalized extreme value law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GevParams {
    pub shape: f64,
    pub location: f64,
    pub scale: f64,
}

/// The compact synthetic model: 6 linear-profile coefficients, two power-law
/// anti-diagonal fits, the GEV phase-slope law, and the optional
/// exponential refinement for CM lags.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParameters {
    pub mu_fit: LinearProfile,
    pub sigma_fit_nocm: LinearProfile,
    pub sigma_fit_cm: LinearProfile,
    pub antidiag_nocm: PowerLaw,
    pub antidiag_cm_power: PowerLaw,
    pub antidiag_cm_exp: Option<ExpCorrection>,
    pub gev: GevParams,
}

impl Default for ModelParameters {
    /// Reference values for the in-home 2×3 scenario.
    fn default() -> Self {
        ModelParameters {
            mu_fit: LinearProfile {
                slope_db_per_ghz: -184.68,
                intercept_db: -42.44,
            },
            sigma_fit_nocm: LinearProfile {
                slope_db_per_ghz: 20.86,
                intercept_db: 15.41,
            },
            sigma_fit_cm: LinearProfile {
                slope_db_per_ghz: 27.80,
                intercept_db: 9.64,
            },
            antidiag_nocm: PowerLaw {
                a: 0.133e6,
                b: -0.906,
                c: 0.731,
            },
            antidiag_cm_power: PowerLaw {
                a: 1.679e6,
                b: -1.040,
                c: 0.501,
            },
            antidiag_cm_exp: Some(ExpCorrection {
                a: -0.022,
                b: 0.031e-6,
                c: 0.072,
            }),
            gev: GevParams {
                shape: -0.08,
                location: 1.133e-6,
                scale: 5.323e-7,
            },
        }
    }
}

impl ModelParameters {
    /// Number of scalars the model uses: 15 for the base model, 18 when the
    /// exponential CM refinement is counted.
    pub fn scalar_count(&self, with_exp_refinement: bool) -> usize {
        let base = 6 + 6 + 3;
        if with_exp_refinement && self.antidiag_cm_exp.is_some() {
            base + 3
        } else {
            base
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut all = vec![
            self.mu_fit.slope_db_per_ghz,
            self.mu_fit.intercept_db,
            self.sigma_fit_nocm.slope_db_per_ghz,
            self.sigma_fit_nocm.intercept_db,
            self.sigma_fit_cm.slope_db_per_ghz,
            self.sigma_fit_cm.intercept_db,
            self.antidiag_nocm.a,
            self.antidiag_nocm.b,
            self.antidiag_nocm.c,
            self.antidiag_cm_power.a,
            self.antidiag_cm_power.b,
            self.antidiag_cm_power.c,
            self.gev.shape,
            self.gev.location,
            self.gev.scale,
        ];
        if let Some(e) = self.antidiag_cm_exp {
            all.extend([e.a, e.b, e.c]);
        }
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("all model parameters must be finite".into()));
        }
        if self.gev.scale <= 0.0 {
            return Err(Error::Parameter(format!(
                "GEV scale must be positive, got {}",
                self.gev.scale
            )));
        }
        Ok(())
    }

    /// Mean amplitude in dB at `f_hz`; identical for every mode.
    pub fn mu_profile(&self, f_hz: f64) -> f64 {
        self.mu_fit.eval(f_hz)
    }

    /// Amplitude standard deviation in dB at `f_hz`; CM receive modes use
    /// their own line.
    pub fn sigma_profile(&self, f_hz: f64, combo: ModeCombination) -> f64 {
        if combo.is_cm() {
            self.sigma_fit_cm.eval(f_hz)
        } else {
            self.sigma_fit_nocm.eval(f_hz)
        }
    }

    pub fn power_law(&self, is_cm: bool) -> PowerLaw {
        if is_cm {
            self.antidiag_cm_power
        } else {
            self.antidiag_nocm
        }
    }
}
