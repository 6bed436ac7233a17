//! Flat `key = value` parameter files.
//!
//! ```text
//! mu.slope_db_per_ghz = -184.68
//! mu.intercept_db = -42.44
//! sigma.nocm.slope_db_per_ghz = 20.86
//! ...
//! gev.scale = 5.323e-7
//! # optional
//! antidiag.cm_exp.a = -0.022
//! grid.n_freq = 1588
//! noise.psd = exp 35 -1e-7 -140
//! noise.rx_correlation = 1 0.2 0.1; 0.2 1 0.3; 0.1 0.3 1
//! mask.breakpoints = 0:-55 30e6:-85
//! ```
//!
//! Blank lines and `#` comments are ignored; unknown or repeated keys are
//! errors. Values are written in shortest round-trip form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::capacity::{NoiseModel, PsdMask, PsdProfile};
use crate::error::{Error, Result};
use crate::model::{
    ExpCorrection, GevParams, LinearProfile, MimoGrid, ModelParameters, PowerLaw, DEFAULT_F_START_HZ,
    DEFAULT_F_STEP_HZ, DEFAULT_N_FREQ,
};

const MODEL_KEYS: [&str; 15] = [
    "mu.slope_db_per_ghz",
    "mu.intercept_db",
    "sigma.nocm.slope_db_per_ghz",
    "sigma.nocm.intercept_db",
    "sigma.cm.slope_db_per_ghz",
    "sigma.cm.intercept_db",
    "antidiag.nocm.a",
    "antidiag.nocm.b",
    "antidiag.nocm.c",
    "antidiag.cm.a",
    "antidiag.cm.b",
    "antidiag.cm.c",
    "gev.shape",
    "gev.location",
    "gev.scale",
];
const EXP_KEYS: [&str; 3] = ["antidiag.cm_exp.a", "antidiag.cm_exp.b", "antidiag.cm_exp.c"];
const GRID_KEYS: [&str; 3] = ["grid.f_start_hz", "grid.f_step_hz", "grid.n_freq"];
const MAX_NOISE_PORTS: usize = 3;

/// Frequency axis stored in a parameter file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub f_start_hz: f64,
    pub f_step_hz: f64,
    pub n_freq: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            f_start_hz: DEFAULT_F_START_HZ,
            f_step_hz: DEFAULT_F_STEP_HZ,
            n_freq: DEFAULT_N_FREQ,
        }
    }
}

impl GridSpec {
    /// The full 2×3 grid on this axis.
    pub fn to_grid(&self) -> Result<MimoGrid> {
        let d = MimoGrid::default_2x3();
        MimoGrid::new(
            self.f_start_hz,
            self.f_step_hz,
            self.n_freq,
            d.tx_modes().to_vec(),
            d.rx_modes().to_vec(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterFile {
    pub params: ModelParameters,
    pub grid: Option<GridSpec>,
    pub noise: Option<NoiseModel>,
    pub mask: Option<PsdMask>,
}

pub(crate) struct Entries {
    map: BTreeMap<String, (String, u64)>,
}

impl Entries {
    pub(crate) fn parse(text: &str, allowed: &dyn Fn(&str) -> bool) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (k, raw) in text.lines().enumerate() {
            let line = k as u64 + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::Parse {
                    line,
                    message: "expected key = value".into(),
                });
            };
            let key = key.trim();
            if !allowed(key) {
                return Err(Error::Parse {
                    line,
                    message: format!("unknown key {key:?}"),
                });
            }
            if map.insert(key.to_string(), (value.trim().to_string(), line)).is_some() {
                return Err(Error::Parse {
                    line,
                    message: format!("duplicate key {key:?}"),
                });
            }
        }
        Ok(Entries { map })
    }

    pub(crate) fn has(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }

    pub(crate) fn raw(&self, key: &str) -> Result<(&str, u64)> {
        self.map
            .get(key)
            .map(|(v, l)| (v.as_str(), *l))
            .ok_or_else(|| Error::Parameter(format!("missing key {key:?}")))
    }

    pub(crate) fn num(&self, key: &str) -> Result<f64> {
        let (v, line) = self.raw(key)?;
        parse_f64(v, line)
    }

    /// All of `keys`, or none of them.
    fn group(&self, keys: &[&str]) -> Result<bool> {
        let present = keys.iter().filter(|k| self.has(k)).count();
        match present {
            0 => Ok(false),
            n if n == keys.len() => Ok(true),
            _ => Err(Error::Parameter(format!("keys {} must be given together", keys.join(", ")))),
        }
    }
}

pub(crate) fn parse_f64(v: &str, line: u64) -> Result<f64> {
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(Error::Parse {
            line,
            message: format!("{v:?} is not a finite number"),
        }),
    }
}

fn parse_pairs(v: &str, line: u64) -> Result<Vec<(f64, f64)>> {
    v.split_whitespace()
        .map(|tok| {
            let (f, l) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line,
                message: format!("expected freq:level, got {tok:?}"),
            })?;
            Ok((parse_f64(f, line)?, parse_f64(l, line)?))
        })
        .collect()
}

fn parse_profile(v: &str, line: u64) -> Result<PsdProfile> {
    let (kind, rest) = v.split_once(char::is_whitespace).unwrap_or((v, ""));
    let nums = || -> Result<Vec<f64>> { rest.split_whitespace().map(|t| parse_f64(t, line)).collect() };
    let bad = |msg: &str| Error::Parse {
        line,
        message: msg.to_string(),
    };
    let p = match kind {
        "const" => match nums()?.as_slice() {
            [c] => PsdProfile::Constant(*c),
            _ => return Err(bad("const takes one level")),
        },
        "exp" => match nums()?.as_slice() {
            [a, b, c] => PsdProfile::Exponential { a: *a, b: *b, c: *c },
            _ => return Err(bad("exp takes a b c")),
        },
        "table" => PsdProfile::Table(parse_pairs(rest, line)?),
        _ => return Err(bad("noise profile must start with const, exp or table")),
    };
    p.validate().map_err(|e| bad(&e.to_string()))?;
    Ok(p)
}

fn parse_correlation(v: &str, line: u64) -> Result<DMatrix<Complex64>> {
    let rows: Vec<Vec<f64>> = v
        .split(';')
        .map(|r| r.split_whitespace().map(|t| parse_f64(t, line)).collect())
        .collect::<Result<_>>()?;
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::Parse {
            line,
            message: "correlation must be square, rows separated by ';'".into(),
        });
    }
    Ok(DMatrix::from_fn(n, n, |i, j| Complex64::new(rows[i][j], 0.0)))
}

fn noise_key(key: &str) -> bool {
    key == "noise.psd"
        || key == "noise.rx_correlation"
        || key
            .strip_prefix("noise.psd.")
            .and_then(|k| k.parse::<usize>().ok())
            .is_some_and(|k| k < MAX_NOISE_PORTS)
}

fn noise_from(e: &Entries) -> Result<Option<NoiseModel>> {
    let per_port: Vec<String> = (0..MAX_NOISE_PORTS)
        .map(|k| format!("noise.psd.{k}"))
        .take_while(|k| e.has(k))
        .collect();
    let n_port_keys = (0..MAX_NOISE_PORTS).filter(|k| e.has(&format!("noise.psd.{k}"))).count();
    if n_port_keys != per_port.len() || n_port_keys > 0 && e.has("noise.psd") {
        return Err(Error::Parameter(
            "use either noise.psd or noise.psd.0, noise.psd.1, … numbered from 0".into(),
        ));
    }
    let psd = if e.has("noise.psd") {
        let (v, l) = e.raw("noise.psd")?;
        vec![parse_profile(v, l)?]
    } else {
        per_port
            .iter()
            .map(|k| {
                let (v, l) = e.raw(k)?;
                parse_profile(v, l)
            })
            .collect::<Result<_>>()?
    };
    let rx_correlation = if e.has("noise.rx_correlation") {
        let (v, l) = e.raw("noise.rx_correlation")?;
        Some(parse_correlation(v, l)?)
    } else {
        None
    };
    if psd.is_empty() {
        if rx_correlation.is_some() {
            return Err(Error::Parameter("noise.rx_correlation needs a noise.psd".into()));
        }
        return Ok(None);
    }
    Ok(Some(NoiseModel { psd, rx_correlation }))
}

fn mask_from(e: &Entries) -> Result<Option<PsdMask>> {
    if !e.has("mask.breakpoints") {
        return Ok(None);
    }
    let (v, line) = e.raw("mask.breakpoints")?;
    PsdMask::new(parse_pairs(v, line)?)
        .map(Some)
        .map_err(|err| Error::Parse {
            line,
            message: err.to_string(),
        })
}

fn fmt_profile(p: &PsdProfile) -> String {
    match p {
        PsdProfile::Constant(c) => format!("const {c:?}"),
        PsdProfile::Exponential { a, b, c } => format!("exp {a:?} {b:?} {c:?}"),
        PsdProfile::Table(t) => format!("table {}", fmt_pairs(t)),
    }
}

fn fmt_pairs(t: &[(f64, f64)]) -> String {
    t.iter().map(|(f, v)| format!("{f:?}:{v:?}")).collect::<Vec<_>>().join(" ")
}

fn write_noise(out: &mut String, noise: &NoiseModel) -> Result<()> {
    if let [only] = noise.psd.as_slice() {
        writeln!(out, "noise.psd = {}", fmt_profile(only)).ok();
    } else {
        if noise.psd.len() > MAX_NOISE_PORTS {
            return Err(Error::InvalidInput(format!("at most {MAX_NOISE_PORTS} noise profiles")));
        }
        for (k, p) in noise.psd.iter().enumerate() {
            writeln!(out, "noise.psd.{k} = {}", fmt_profile(p)).ok();
        }
    }
    if let Some(c) = &noise.rx_correlation {
        if c.iter().any(|z| z.im != 0.0) {
            return Err(Error::InvalidInput("only real noise correlations can be written".into()));
        }
        let rows: Vec<String> = (0..c.nrows())
            .map(|i| (0..c.ncols()).map(|j| format!("{:?}", c[(i, j)].re)).collect::<Vec<_>>().join(" "))
            .collect();
        writeln!(out, "noise.rx_correlation = {}", rows.join("; ")).ok();
    }
    Ok(())
}

impl ParameterFile {
    pub fn new(params: ModelParameters) -> Self {
        ParameterFile {
            params,
            ..Default::default()
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let allowed = |k: &str| {
            MODEL_KEYS.contains(&k)
                || EXP_KEYS.contains(&k)
                || GRID_KEYS.contains(&k)
                || noise_key(k)
                || k == "mask.breakpoints"
        };
        let e = Entries::parse(text, &allowed)?;
        let v: Vec<f64> = MODEL_KEYS.iter().map(|k| e.num(k)).collect::<Result<_>>()?;
        let line = |s: f64, i: f64| LinearProfile {
            slope_db_per_ghz: s,
            intercept_db: i,
        };
        let antidiag_cm_exp = if e.group(&EXP_KEYS)? {
            Some(ExpCorrection {
                a: e.num(EXP_KEYS[0])?,
                b: e.num(EXP_KEYS[1])?,
                c: e.num(EXP_KEYS[2])?,
            })
        } else {
            None
        };
        let params = ModelParameters {
            mu_fit: line(v[0], v[1]),
            sigma_fit_nocm: line(v[2], v[3]),
            sigma_fit_cm: line(v[4], v[5]),
            antidiag_nocm: PowerLaw { a: v[6], b: v[7], c: v[8] },
            antidiag_cm_power: PowerLaw { a: v[9], b: v[10], c: v[11] },
            antidiag_cm_exp,
            gev: GevParams {
                shape: v[12],
                location: v[13],
                scale: v[14],
            },
        };
        params.validate()?;
        let grid = if e.group(&GRID_KEYS)? {
            let (n, line) = e.raw("grid.n_freq")?;
            let n_freq = n.parse::<usize>().map_err(|_| Error::Parse {
                line,
                message: format!("{n:?} is not a bin count"),
            })?;
            let spec = GridSpec {
                f_start_hz: e.num("grid.f_start_hz")?,
                f_step_hz: e.num("grid.f_step_hz")?,
                n_freq,
            };
            spec.to_grid().map_err(|err| Error::Parameter(err.to_string()))?;
            Some(spec)
        } else {
            None
        };
        Ok(ParameterFile {
            params,
            grid,
            noise: noise_from(&e)?,
            mask: mask_from(&e)?,
        })
    }

    pub fn to_text(&self) -> Result<String> {
        let p = &self.params;
        let values = [
            p.mu_fit.slope_db_per_ghz,
            p.mu_fit.intercept_db,
            p.sigma_fit_nocm.slope_db_per_ghz,
            p.sigma_fit_nocm.intercept_db,
            p.sigma_fit_cm.slope_db_per_ghz,
            p.sigma_fit_cm.intercept_db,
            p.antidiag_nocm.a,
            p.antidiag_nocm.b,
            p.antidiag_nocm.c,
            p.antidiag_cm_power.a,
            p.antidiag_cm_power.b,
            p.antidiag_cm_power.c,
            p.gev.shape,
            p.gev.location,
            p.gev.scale,
        ];
        let mut out = String::new();
        for (k, v) in MODEL_KEYS.iter().zip(values) {
            writeln!(out, "{k} = {v:?}").ok();
        }
        if let Some(x) = p.antidiag_cm_exp {
            for (k, v) in EXP_KEYS.iter().zip([x.a, x.b, x.c]) {
                writeln!(out, "{k} = {v:?}").ok();
            }
        }
        if let Some(g) = self.grid {
            writeln!(out, "grid.f_start_hz = {:?}", g.f_start_hz).ok();
            writeln!(out, "grid.f_step_hz = {:?}", g.f_step_hz).ok();
            writeln!(out, "grid.n_freq = {}", g.n_freq).ok();
        }
        if let Some(n) = &self.noise {
            write_noise(&mut out, n)?;
        }
        if let Some(m) = &self.mask {
            writeln!(out, "mask.breakpoints = {}", fmt_pairs(m.breakpoints())).ok();
        }
        Ok(out)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = self.to_text()?;
        super::write_atomic(path, |w| Ok(w.write_all(text.as_bytes())?))
    }

    /// The stored grid for `scheme`, or the default in-home grid.
    pub fn base_grid(&self) -> Result<MimoGrid> {
        self.grid.unwrap_or_default().to_grid()
    }
}

/// A file holding only `noise.*` keys.
pub fn read_noise_file(path: &Path) -> Result<NoiseModel> {
    let e = Entries::parse(&std::fs::read_to_string(path)?, &noise_key)?;
    noise_from(&e)?.ok_or_else(|| Error::Parameter("noise file defines no noise.psd".into()))
}

/// A file holding only `mask.breakpoints`.
pub fn read_mask_file(path: &Path) -> Result<PsdMask> {
    let e = Entries::parse(&std::fs::read_to_string(path)?, &|k| k == "mask.breakpoints")?;
    mask_from(&e)?.ok_or_else(|| Error::Parameter("mask file defines no mask.breakpoints".into()))
}

pub fn noise_to_text(noise: &NoiseModel) -> Result<String> {
    let mut out = String::new();
    write_noise(&mut out, noise)?;
    Ok(out)
}

pub fn mask_to_text(mask: &PsdMask) -> String {
    format!("mask.breakpoints = {}\n", fmt_pairs(mask.breakpoints()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_round_trip_is_exact() {
        let f = ParameterFile::new(ModelParameters::default());
        let text = f.to_text().unwrap();
        assert_eq!(text.lines().count(), 18);
        assert_eq!(ParameterFile::parse(&text).unwrap(), f);
    }

    #[test]
    fn optional_sections_round_trip() {
        let f = ParameterFile {
            params: ModelParameters {
                antidiag_cm_exp: None,
                ..Default::default()
            },
            grid: Some(GridSpec {
                f_start_hz: 1.8e6,
                f_step_hz: 250e3,
                n_freq: 397,
            }),
            noise: Some(NoiseModel {
                psd: vec![
                    PsdProfile::Constant(-120.0),
                    PsdProfile::Table(vec![(1.8e6, -110.5), (1e8, -140.0)]),
                    PsdProfile::Exponential { a: 35.0, b: -1e-7, c: -140.0 },
                ],
                rx_correlation: Some(DMatrix::from_fn(3, 3, |i, j| {
                    Complex64::new(if i == j { 1.0 } else { 0.25 }, 0.0)
                })),
            }),
            mask: Some(PsdMask::default()),
        };
        let text = f.to_text().unwrap();
        assert_eq!(ParameterFile::parse(&text).unwrap(), f);
    }

    #[test]
    fn rejects_unknown_duplicate_and_missing() {
        let base = ParameterFile::default().to_text().unwrap();
        let unknown = format!("{base}foo.bar = 1\n");
        assert!(matches!(ParameterFile::parse(&unknown), Err(Error::Parse { line: 19, .. })));
        let dup = format!("{base}gev.shape = 1\n");
        assert!(matches!(ParameterFile::parse(&dup), Err(Error::Parse { .. })));
        let missing: String = base.lines().filter(|l| !l.starts_with("gev.scale")).map(|l| format!("{l}\n")).collect();
        assert!(matches!(ParameterFile::parse(&missing), Err(Error::Parameter(_))));
        let partial_exp: String = base
            .lines()
            .filter(|l| !l.starts_with("antidiag.cm_exp.b"))
            .map(|l| format!("{l}\n"))
            .collect();
        assert!(matches!(ParameterFile::parse(&partial_exp), Err(Error::Parameter(_))));
        let bad = base.replace("gev.shape = -0.08", "gev.shape = x");
        assert!(matches!(ParameterFile::parse(&bad), Err(Error::Parse { line: 13, .. })));
        let neg_scale = base.replace("gev.scale = 5.323e-7", "gev.scale = -1.0");
        assert!(matches!(ParameterFile::parse(&neg_scale), Err(Error::Parameter(_))));
    }

    #[test]
    fn comments_and_blank_lines() {
        let base = ParameterFile::default().to_text().unwrap();
        let text = format!("# header\n\n{}", base.replace('\n', "  # trailing\n"));
        assert_eq!(ParameterFile::parse(&text).unwrap(), ParameterFile::default());
    }

    #[test]
    fn noise_and_mask_files() {
        let dir = tempfile::tempdir().unwrap();
        let n = dir.path().join("noise.txt");
        std::fs::write(&n, noise_to_text(&NoiseModel::default()).unwrap()).unwrap();
        assert_eq!(read_noise_file(&n).unwrap(), NoiseModel::default());
        let m = dir.path().join("mask.txt");
        std::fs::write(&m, mask_to_text(&PsdMask::default())).unwrap();
        assert_eq!(read_mask_file(&m).unwrap(), PsdMask::default());
        std::fs::write(&m, "mask.breakpoints = 30e6:-85 0:-55\n").unwrap();
        assert!(matches!(read_mask_file(&m), Err(Error::Parse { line: 1, .. })));
        std::fs::write(&n, "noise.psd = exp 1 2\n").unwrap();
        assert!(matches!(read_noise_file(&n), Err(Error::Parse { line: 1, .. })));
    }

    proptest! {
        #[test]
        fn arbitrary_values_round_trip(v in prop::collection::vec(-1e9f64..1e9, 18), scale in 1e-12f64..1e3) {
            let p = ModelParameters {
                mu_fit: LinearProfile { slope_db_per_ghz: v[0], intercept_db: v[1] },
                sigma_fit_nocm: LinearProfile { slope_db_per_ghz: v[2], intercept_db: v[3] },
                sigma_fit_cm: LinearProfile { slope_db_per_ghz: v[4], intercept_db: v[5] },
                antidiag_nocm: PowerLaw { a: v[6], b: v[7], c: v[8] },
                antidiag_cm_power: PowerLaw { a: v[9], b: v[10], c: v[11] },
                antidiag_cm_exp: Some(ExpCorrection { a: v[12], b: v[13], c: v[14] }),
                gev: GevParams { shape: v[15], location: v[16], scale },
            };
            let f = ParameterFile::new(p);
            prop_assert_eq!(ParameterFile::parse(&f.to_text().unwrap()).unwrap(), f);
        }
    }
}
