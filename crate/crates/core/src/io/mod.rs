//! File formats: channel CSV, key=value parameter files, noise and mask
//! descriptions, validation reports and the numeric output tables.

pub mod channel;
pub mod params;
pub mod report;
pub mod tables;

use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub use channel::{read_channel_file, read_channels, write_channel_file, write_channels};
pub use params::{read_mask_file, read_noise_file, ParameterFile};
pub use report::{ValidationReport, ValidationTarget};

/// Writes through a temporary file in the destination directory and renames
/// it into place once `body` succeeds.
pub fn write_atomic<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::with_capacity(1 << 16, tmp.as_file());
        body(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failed_body_leaves_no_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        let r = write_atomic(&path, |w| {
            w.write_all(b"partial")?;
            Err(Error::InvalidInput("stop".into()))
        });
        assert!(r.is_err());
        assert!(!path.exists());
        write_atomic(&path, |w| Ok(w.write_all(b"done")?)).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "done");
    }
}
