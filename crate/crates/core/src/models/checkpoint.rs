//! `.ckpt` binary format (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "SHMCKPT\0"
//! version  u8       1
//! method   u8       sup=0 ae=1 simclr=2 mixup=3 gan=4
//! seed     u64
//! count    u32      number of manifest entries
//! entry    u16 name length, UTF-8 name, u8 rank, rank x u32 dims
//! payload  f64 values of every entry, in manifest order
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Classifier, Decoder, Discriminator, Encoder, Method, ModelBundle};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SHMCKPT\0";
const VERSION: u8 = 1;

pub fn write_checkpoint<W: Write>(bundle: &ModelBundle, w: &mut W) -> Result<()> {
    let tensors = bundle.named_tensors();
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION, bundle.method.code()])?;
    w.write_all(&bundle.seed.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in &tensors {
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[t.shape().len() as u8])?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
    }
    for (_, t) in &tensors {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_checkpoint(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(bundle, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelBundle> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

struct Cursor<'a, R> {
    inner: &'a mut R,
    offset: u64,
}

impl<R: Read> Cursor<'_, R> {
    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::format(self.offset, format!("truncated while reading {what}"))
            } else {
                Error::Io(e)
            }
        })?;
        self.offset += N as u64;
        Ok(buf)
    }

    fn vec(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::format(self.offset, format!("truncated while reading {what}"))
            } else {
                Error::Io(e)
            }
        })?;
        self.offset += n as u64;
        Ok(buf)
    }
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<ModelBundle> {
    let mut cur = Cursor {
        inner: r,
        offset: 0,
    };
    let magic: [u8; 8] = cur.bytes("magic")?;
    if &magic != MAGIC {
        return Err(Error::format(0, "bad magic bytes, not a checkpoint"));
    }
    let [version] = cur.bytes::<1>("version")?;
    if version != VERSION {
        return Err(Error::format(
            8,
            format!("unsupported checkpoint version {version} (expected {VERSION})"),
        ));
    }
    let [code] = cur.bytes::<1>("method")?;
    let method = Method::from_code(code)
        .ok_or_else(|| Error::format(9, format!("unknown method code {code}")))?;
    let seed = u64::from_le_bytes(cur.bytes("seed")?);
    let count = u32::from_le_bytes(cur.bytes("entry count")?) as usize;

    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let at = cur.offset;
        let len = u16::from_le_bytes(cur.bytes("name length")?) as usize;
        let name = String::from_utf8(cur.vec(len, "name")?)
            .map_err(|_| Error::format(at, "tensor name is not UTF-8"))?;
        let [rank] = cur.bytes::<1>("rank")?;
        let mut dims = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            dims.push(u32::from_le_bytes(cur.bytes("dimension")?) as usize);
        }
        manifest.push((name, dims, at));
    }

    let mut payload = Vec::with_capacity(manifest.len());
    for (name, dims, _) in &manifest {
        let n: usize = dims.iter().product();
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(f64::from_le_bytes(cur.bytes(name)?));
        }
        payload.push(values);
    }
    let mut trailing = [0u8; 1];
    if cur.inner.read(&mut trailing)? != 0 {
        return Err(Error::format(cur.offset, "trailing bytes after payload"));
    }

    let has = |prefix: &str| manifest.iter().any(|(n, _, _)| n.starts_with(prefix));
    let mut bundle = ModelBundle::empty(method, seed);
    if has("encoder.") {
        bundle.encoder = Some(Encoder::new(seed));
    }
    if has("decoder.") {
        bundle.decoder = Some(Decoder::new(seed));
    }
    if has("projector.") {
        bundle.projector = Some(super::projector(seed));
    }
    if has("generator.") {
        bundle.generator = Some(Decoder::generator(seed));
    }
    if has("discriminator.") {
        bundle.discriminator = Some(Discriminator::new(seed));
    }
    if has("classifier.") {
        let (_, dims, at) = manifest
            .iter()
            .find(|(n, _, _)| n == "classifier.head.2.bias")
            .ok_or_else(|| Error::format(0, "classifier entries without an output layer"))?;
        let k = dims.first().copied().unwrap_or(0);
        bundle.classifier =
            Some(Classifier::new(k, seed).map_err(|e| Error::format(*at, e.to_string()))?);
    }

    let mut targets = bundle.named_tensors_mut();
    if targets.len() != manifest.len() {
        return Err(Error::format(
            0,
            format!(
                "manifest has {} entries, architecture expects {}",
                manifest.len(),
                targets.len()
            ),
        ));
    }
    for ((name, dims, at), values) in manifest.iter().zip(payload) {
        let (_, t) = targets
            .iter_mut()
            .find(|(n, _)| n == name)
            .ok_or_else(|| Error::format(*at, format!("unexpected tensor '{name}'")))?;
        if t.shape() != dims.as_slice() {
            return Err(Error::format(
                *at,
                format!("tensor '{name}' has shape {dims:?}, expected {:?}", t.shape()),
            ));
        }
        t.data_mut().copy_from_slice(&values);
    }
    drop(targets);
    Ok(bundle)
}
