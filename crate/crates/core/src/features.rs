//! `.ierfh` feature files (little-endian):
//!
//! ```text
//! magic    8 bytes  "SHMIERFH"
//! version  u8       1
//! count    u32      number of rows
//! dim      u32      512
//! row      u32 channel, u32 hour, i32 label (-1 = unlabeled), dim x f32
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::reduction::{FeatureVector, IERFH_BINS};

const MAGIC: &[u8; 8] = b"SHMIERFH";
const VERSION: u8 = 1;
const HEADER_LEN: u64 = 17;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub feature: FeatureVector,
    pub label: Option<usize>,
}

pub fn write_features<W: Write>(records: &[FeatureRecord], w: &mut W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(records.len() as u32).to_le_bytes())?;
    w.write_all(&(IERFH_BINS as u32).to_le_bytes())?;
    for r in records {
        if r.feature.values.len() != IERFH_BINS {
            return Err(Error::dimension("feature row", IERFH_BINS, r.feature.values.len()));
        }
        w.write_all(&r.feature.channel_id.to_le_bytes())?;
        w.write_all(&r.feature.hour_index.to_le_bytes())?;
        let label = r.label.map_or(-1i32, |l| l as i32);
        w.write_all(&label.to_le_bytes())?;
        for &v in &r.feature.values {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_features<R: Read>(r: &mut R) -> Result<Vec<FeatureRecord>> {
    let mut header = [0u8; HEADER_LEN as usize];
    read_at(r, &mut header, 0, "header")?;
    if &header[..8] != MAGIC {
        return Err(Error::format(0, "bad magic bytes, not an .ierfh file"));
    }
    if header[8] != VERSION {
        return Err(Error::format(8, format!("unsupported version {}", header[8])));
    }
    let count = u32::from_le_bytes(header[9..13].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(header[13..17].try_into().unwrap()) as usize;
    if dim != IERFH_BINS {
        return Err(Error::format(13, format!("dimension {dim}, expected {IERFH_BINS}")));
    }
    let row_len = 12 + 4 * dim;
    let mut row = vec![0u8; row_len];
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let offset = HEADER_LEN + (i * row_len) as u64;
        read_at(r, &mut row, offset, "feature row")?;
        let channel_id = u32::from_le_bytes(row[0..4].try_into().unwrap());
        let hour_index = u32::from_le_bytes(row[4..8].try_into().unwrap());
        let label = i32::from_le_bytes(row[8..12].try_into().unwrap());
        let values = row[12..]
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
            .collect();
        out.push(FeatureRecord {
            feature: FeatureVector {
                values,
                channel_id,
                hour_index,
            },
            label: (label >= 0).then_some(label as usize),
        });
    }
    Ok(out)
}

fn read_at<R: Read>(r: &mut R, buf: &mut [u8], offset: u64, what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => {
            Error::format(offset, format!("truncated {what}"))
        }
        _ => Error::Io(e),
    })
}

pub fn save_features(records: &[FeatureRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_features(records, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_features(path: impl AsRef<Path>) -> Result<Vec<FeatureRecord>> {
    read_features(&mut BufReader::new(File::open(path)?))
}
