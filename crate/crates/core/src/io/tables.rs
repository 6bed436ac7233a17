//! CSV outputs for per-realization metrics, capacities and CCDFs.

use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::metrics::RealizationMetrics;

pub const METRICS_HEADER: &str = "realization_id,tx_mode,rx_mode,acg_db,rms_ds_us,cb_khz,kappa_db,singular_bins";

/// One row per realization and mode; `kappa_db` is repeated on every mode
/// row of a realization and left empty for SISO.
pub fn write_metrics(w: &mut dyn Write, metrics: &[RealizationMetrics]) -> Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for m in metrics {
        let kappa = m.kappa_db.map_or(String::new(), |k| format!("{k:?}"));
        for mode in &m.modes {
            writeln!(
                w,
                "{},{},{},{:?},{:?},{:?},{kappa},{}",
                m.realization,
                mode.combo.tx,
                mode.combo.rx,
                mode.acg_db,
                mode.rms_ds_s * 1e6,
                mode.cb_hz / 1e3,
                m.singular_bins
            )?;
        }
    }
    Ok(())
}

pub fn write_capacities(w: &mut dyn Write, per_realization_bps: &[f64]) -> Result<()> {
    writeln!(w, "realization_id,capacity_bps")?;
    for (r, c) in per_realization_bps.iter().enumerate() {
        writeln!(w, "{r},{c:?}")?;
    }
    Ok(())
}

pub fn write_ccdf(w: &mut dyn Write, ccdf: &[(f64, f64)]) -> Result<()> {
    writeln!(w, "capacity_bps,probability")?;
    for (c, p) in ccdf {
        writeln!(w, "{c:?},{p:?}")?;
    }
    Ok(())
}

pub fn write_metrics_file(path: &Path, metrics: &[RealizationMetrics]) -> Result<()> {
    super::write_atomic(path, |w| write_metrics(w, metrics))
}

pub fn write_capacity_file(path: &Path, per_realization_bps: &[f64]) -> Result<()> {
    super::write_atomic(path, |w| write_capacities(w, per_realization_bps))
}

pub fn write_ccdf_file(path: &Path, ccdf: &[(f64, f64)]) -> Result<()> {
    super::write_atomic(path, |w| write_ccdf(w, ccdf))
}
