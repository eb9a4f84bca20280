//! Dataset file codec for the `generate` / `train` / `sweep` commands.
//!
//! Little-endian layout: magic `DEEPRISD`, version, master seed, config
//! digest, the generation parameters, the row count, then the input and
//! target matrices row-major in double precision. Loads must consume the
//! file exactly.

use deepris::channel::FadingModel;
use deepris::training::{Dataset, GenConfig};
use ndarray::Array2;
use std::io::Read;
use std::path::Path;

/// Dataset format tag.
pub const DATASET_MAGIC: &[u8; 8] = b"DEEPRISD";
/// Current dataset format version.
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug)]
pub enum DatasetFileError {
    Io(std::io::Error),
    BadMagic,
    UnsupportedVersion(u32),
    Corrupted(String),
}

impl std::fmt::Display for DatasetFileError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DatasetFileError::Io(e) => write!(f, "{e}"),
            DatasetFileError::BadMagic => write!(f, "not a dataset file (bad magic)"),
            DatasetFileError::UnsupportedVersion(v) => {
                write!(f, "unsupported dataset version {v}")
            }
            DatasetFileError::Corrupted(msg) => write!(f, "corrupted dataset: {msg}"),
        }
    }
}

impl std::error::Error for DatasetFileError {}

impl From<std::io::Error> for DatasetFileError {
    fn from(e: std::io::Error) -> Self {
        DatasetFileError::Io(e)
    }
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}
fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}
fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

/// Serializes a dataset with its provenance digest.
pub fn dataset_bytes(dataset: &Dataset, config_digest: u64) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(DATASET_MAGIC);
    put_u32(&mut buf, DATASET_VERSION);
    put_u64(&mut buf, dataset.seed);
    put_u64(&mut buf, config_digest);
    let g = &dataset.meta;
    put_u32(&mut buf, g.ris_elements as u32);
    put_u32(&mut buf, g.tx_antennas as u32);
    put_u32(&mut buf, g.frame_len as u32);
    put_u32(&mut buf, g.modulation_order as u32);
    put_f64(&mut buf, g.snr_min_db);
    put_f64(&mut buf, g.snr_max_db);
    match g.fading {
        FadingModel::Rayleigh => {
            put_u32(&mut buf, 0);
            put_f64(&mut buf, 0.0);
            put_f64(&mut buf, 0.0);
        }
        FadingModel::Nakagami { m, omega } => {
            put_u32(&mut buf, 1);
            put_f64(&mut buf, m);
            put_f64(&mut buf, omega);
        }
    }
    put_f64(&mut buf, g.pathloss_gain);
    put_f64(&mut buf, g.power_budget);
    put_u32(&mut buf, g.unit_channels as u32);
    put_u64(&mut buf, dataset.len() as u64);
    for &v in dataset.inputs.iter() {
        put_f64(&mut buf, v);
    }
    for &v in dataset.targets.iter() {
        put_f64(&mut buf, v);
    }
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DatasetFileError> {
        if self.pos + n > self.buf.len() {
            return Err(DatasetFileError::Corrupted(format!(
                "truncated at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, DatasetFileError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, DatasetFileError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, DatasetFileError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses the layout written by [`dataset_bytes`].
pub fn dataset_from_bytes(bytes: &[u8]) -> Result<Dataset, DatasetFileError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != DATASET_MAGIC {
        return Err(DatasetFileError::BadMagic);
    }
    let version = r.u32()?;
    if version != DATASET_VERSION {
        return Err(DatasetFileError::UnsupportedVersion(version));
    }
    let seed = r.u64()?;
    let _digest = r.u64()?;
    let ris_elements = r.u32()? as usize;
    let tx_antennas = r.u32()? as usize;
    let frame_len = r.u32()? as usize;
    let modulation_order = r.u32()? as usize;
    let snr_min_db = r.f64()?;
    let snr_max_db = r.f64()?;
    let fading_tag = r.u32()?;
    let m = r.f64()?;
    let omega = r.f64()?;
    let fading = match fading_tag {
        0 => FadingModel::Rayleigh,
        1 => FadingModel::nakagami(m, omega)
            .map_err(|e| DatasetFileError::Corrupted(e.to_string()))?,
        other => {
            return Err(DatasetFileError::Corrupted(format!(
                "unknown fading tag {other}"
            )))
        }
    };
    let pathloss_gain = r.f64()?;
    let power_budget = r.f64()?;
    let unit_channels = r.u32()? != 0;
    let rows = r.u64()? as usize;
    let width = 2 * frame_len;
    if rows == 0 || width == 0 {
        return Err(DatasetFileError::Corrupted("empty dataset".into()));
    }
    let mut read_matrix = |rows: usize, cols: usize| -> Result<Array2<f64>, DatasetFileError> {
        let mut m = Array2::zeros((rows, cols));
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = r.f64()?;
            }
        }
        Ok(m)
    };
    let inputs = read_matrix(rows, width)?;
    let targets = read_matrix(rows, width)?;
    if r.pos != bytes.len() {
        return Err(DatasetFileError::Corrupted(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(Dataset {
        inputs,
        targets,
        meta: GenConfig {
            ris_elements,
            tx_antennas,
            frame_len,
            modulation_order,
            snr_min_db,
            snr_max_db,
            fading,
            pathloss_gain,
            power_budget,
            unit_channels,
        },
        seed,
    })
}

/// Writes the dataset file atomically.
pub fn save_dataset(
    path: &Path,
    dataset: &Dataset,
    config_digest: u64,
) -> Result<(), DatasetFileError> {
    deepris::config::write_atomic(path, &dataset_bytes(dataset, config_digest))?;
    Ok(())
}

/// Reads and validates a dataset file.
pub fn load_dataset(path: &Path) -> Result<Dataset, DatasetFileError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    dataset_from_bytes(&bytes)
}
