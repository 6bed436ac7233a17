//! Channel sets as CSV: `realization_id,tx_mode,rx_mode,freq_hz,re,im`, one
//! row per realization, mode pair and bin.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::Array3;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{ChannelSet, MimoGrid, RxPort, TxPort};

pub const HEADER: [&str; 6] = ["realization_id", "tx_mode", "rx_mode", "freq_hz", "re", "im"];

/// Relative tolerance on the spacing of the frequency column.
const SPACING_TOL: f64 = 1e-9;

pub fn write_channels(w: &mut dyn Write, set: &ChannelSet) -> Result<()> {
    let grid = set.grid();
    writeln!(w, "{}", HEADER.join(","))?;
    let freqs: Vec<String> = grid.frequencies().iter().map(|f| format!("{f}")).collect();
    for (r, h) in set.realizations().iter().enumerate() {
        for (i, tx) in grid.tx_modes().iter().enumerate() {
            for (j, rx) in grid.rx_modes().iter().enumerate() {
                for (n, f) in freqs.iter().enumerate() {
                    let v = h[[j, i, n]];
                    writeln!(w, "{r},{tx},{rx},{f},{:.16e},{:.16e}", v.re, v.im)?;
                }
            }
        }
    }
    Ok(())
}

pub fn write_channel_file(path: &Path, set: &ChannelSet) -> Result<()> {
    super::write_atomic(path, |w| write_channels(w, set))
}

pub fn read_channel_file(path: &Path) -> Result<ChannelSet> {
    read_channels(BufReader::with_capacity(1 << 20, File::open(path)?))
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => Error::Parse {
            line,
            message: format!("expected {expected_len} fields, found {len}"),
        },
        other => Error::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

fn field<T: FromStr>(rec: &csv::StringRecord, k: usize, line: u64) -> Result<T> {
    let raw = rec.get(k).unwrap_or("").trim();
    raw.parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid {} value {raw:?}", HEADER[k]),
    })
}

fn finite(v: f64, k: usize, line: u64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Parse {
            line,
            message: format!("{} must be finite", HEADER[k]),
        })
    }
}

type Key = (u64, TxPort, RxPort);

/// Reads and checks a channel CSV. Rows may come in any order, but every
/// realization must cover the same tx × rx × frequency grid, frequencies
/// must increase within each (realization, tx, rx) run and be uniformly
/// spaced.
pub fn read_channels<R: Read>(input: R) -> Result<ChannelSet> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rdr.headers().map_err(csv_error)?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].trim().is_empty()) {
        return Err(Error::InvalidInput("empty channel file".into()));
    }
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names != HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("header must be {}", HEADER.join(",")),
        });
    }

    let mut runs: BTreeMap<Key, (Vec<f64>, Vec<Complex64>)> = BTreeMap::new();
    let mut rec = csv::StringRecord::new();
    while rdr.read_record(&mut rec).map_err(csv_error)? {
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let rid: u64 = field(&rec, 0, line)?;
        let tx: TxPort = field(&rec, 1, line)?;
        let rx: RxPort = field(&rec, 2, line)?;
        let f = finite(field(&rec, 3, line)?, 3, line)?;
        let re = finite(field(&rec, 4, line)?, 4, line)?;
        let im = finite(field(&rec, 5, line)?, 5, line)?;
        let run = runs.entry((rid, tx, rx)).or_default();
        if let Some(&last) = run.0.last() {
            if f <= last {
                return Err(Error::Parse {
                    line,
                    message: format!("frequency {f} does not increase within realization {rid} {tx}/{rx}"),
                });
            }
        }
        run.0.push(f);
        run.1.push(Complex64::new(re, im));
    }
    if runs.is_empty() {
        return Err(Error::InvalidInput("channel file has no data rows".into()));
    }

    let mut ids: Vec<u64> = runs.keys().map(|k| k.0).collect();
    ids.dedup();
    let mut tx_modes: Vec<TxPort> = runs.keys().map(|k| k.1).collect();
    tx_modes.sort();
    tx_modes.dedup();
    let mut rx_modes: Vec<RxPort> = runs.keys().map(|k| k.2).collect();
    rx_modes.sort();
    rx_modes.dedup();
    let expected = ids.len() * tx_modes.len() * rx_modes.len();
    if runs.len() != expected {
        return Err(Error::InvalidInput(format!(
            "incomplete grid: {} (realization, tx, rx) runs present, {expected} expected",
            runs.len()
        )));
    }

    let freqs = runs.values().next().expect("non-empty").0.clone();
    for ((rid, tx, rx), (f, _)) in &runs {
        if *f != freqs {
            return Err(Error::InvalidInput(format!(
                "realization {rid} {tx}/{rx} has a different frequency column"
            )));
        }
    }
    let n_freq = freqs.len();
    if n_freq < 2 {
        return Err(Error::InvalidInput("channel file needs at least 2 frequency bins".into()));
    }
    let f_start = freqs[0];
    let f_step = (freqs[n_freq - 1] - f_start) / (n_freq - 1) as f64;
    for (k, f) in freqs.iter().enumerate() {
        if (f - (f_start + k as f64 * f_step)).abs() > SPACING_TOL * f_step * (k as f64).max(1.0) {
            return Err(Error::InvalidInput(format!("frequency {f} breaks the uniform spacing")));
        }
    }
    let grid = MimoGrid::new(f_start, f_step, n_freq, tx_modes.clone(), rx_modes.clone())?;

    let mut realizations = Vec::with_capacity(ids.len());
    for rid in ids {
        let mut h = Array3::<Complex64>::zeros(grid.shape().array_dim());
        for (i, tx) in tx_modes.iter().enumerate() {
            for (j, rx) in rx_modes.iter().enumerate() {
                let values = &runs[&(rid, *tx, *rx)].1;
                for (n, v) in values.iter().enumerate() {
                    h[[j, i, n]] = *v;
                }
            }
        }
        realizations.push(h);
    }
    ChannelSet::new(grid, realizations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::SyntheticGenerator;
    use crate::model::{ModelParameters, Scheme};

    fn small_set(scheme: Scheme, n: usize) -> ChannelSet {
        let grid = MimoGrid::for_scheme(scheme).decimate(100).unwrap();
        let (g, _) = SyntheticGenerator::new(&ModelParameters::default(), &grid, false).unwrap();
        g.generate(n, 11).unwrap()
    }

    fn to_string(set: &ChannelSet) -> String {
        let mut buf = Vec::new();
        write_channels(&mut buf, set).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let set = small_set(Scheme::Mimo2x3, 3);
        let text = to_string(&set);
        let back = read_channels(text.as_bytes()).unwrap();
        assert_eq!(back.grid(), set.grid());
        assert_eq!(back.realizations(), set.realizations());
        assert_eq!(to_string(&back), text);
    }

    #[test]
    fn row_count_and_siso_pairs() {
        let set = small_set(Scheme::Siso, 2);
        let text = to_string(&set);
        let n_freq = set.grid().n_freq();
        assert_eq!(text.lines().count(), 1 + 2 * n_freq);
        assert!(text.lines().skip(1).all(|l| l.contains(",PN,P,")));
    }

    #[test]
    fn row_order_does_not_matter() {
        let set = small_set(Scheme::Mimo2x2, 2);
        let text = to_string(&set);
        let nf = set.grid().n_freq();
        let rows: Vec<&str> = text.lines().skip(1).collect();
        // Whole runs reversed, rows within each run kept increasing.
        let mut shuffled = vec![text.lines().next().unwrap()];
        for chunk in rows.chunks(nf).rev() {
            shuffled.extend_from_slice(chunk);
        }
        let back = read_channels(shuffled.join("\n").as_bytes()).unwrap();
        assert_eq!(back.realizations(), set.realizations());
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = "realization_id,tx_mode,rx_mode,freq_hz,re,im\n\
                    0,PN,P,1800000,1e-3,0\n\
                    0,PN,P,1862500,abc,0\n";
        match read_channels(text.as_bytes()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("re"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let short = "realization_id,tx_mode,rx_mode,freq_hz,re,im\n0,PN,P,1800000,1e-3\n";
        assert!(matches!(read_channels(short.as_bytes()), Err(Error::Parse { line: 2, .. })));
        let port = "realization_id,tx_mode,rx_mode,freq_hz,re,im\n0,XX,P,1800000,1e-3,0\n";
        assert!(matches!(read_channels(port.as_bytes()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn empty_and_header_only_are_rejected() {
        assert!(matches!(read_channels("".as_bytes()), Err(Error::InvalidInput(_))));
        let header = "realization_id,tx_mode,rx_mode,freq_hz,re,im\n";
        assert!(matches!(read_channels(header.as_bytes()), Err(Error::InvalidInput(_))));
        let wrong = "id,tx,rx,f,re,im\n0,PN,P,1,1,0\n";
        assert!(matches!(read_channels(wrong.as_bytes()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn incomplete_grid_is_rejected() {
        let set = small_set(Scheme::Mimo2x2, 2);
        let text = to_string(&set);
        let nf = set.grid().n_freq();
        let dropped: Vec<&str> = text.lines().take(1 + 4 * nf + 3 * nf).collect();
        assert!(matches!(read_channels(dropped.join("\n").as_bytes()), Err(Error::InvalidInput(_))));
        let missing_bin: Vec<&str> = text.lines().enumerate().filter(|(k, _)| *k != 5).map(|(_, l)| l).collect();
        assert!(matches!(read_channels(missing_bin.join("\n").as_bytes()), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn decreasing_frequency_is_rejected() {
        let text = "realization_id,tx_mode,rx_mode,freq_hz,re,im\n\
                    0,PN,P,1862500,1e-3,0\n\
                    0,PN,P,1800000,1e-3,0\n";
        assert!(matches!(read_channels(text.as_bytes()), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn file_round_trip() {
        let set = small_set(Scheme::Siso, 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        write_channel_file(&path, &set).unwrap();
        assert_eq!(read_channel_file(&path).unwrap().realizations(), set.realizations());
    }
}
