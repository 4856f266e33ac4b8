//! Binary model file.
//!
//! All integers and floats are little endian:
//!
//! ```text
//! magic        8 bytes  "BEAMEMB\0"
//! version      u32      (1)
//! dim          u32
//! epochs       u64
//! batch_size   u64
//! learning     f64
//! negatives    u64
//! alpha        f64
//! seed         u64
//! fingerprint  32 bytes (SHA-256 of the training graph)
//! count        u64
//! l_raw        dim x f64
//! r            dim x f64
//! count x { asn u32, dim x f64 }
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{EmbeddingError, EmbeddingModel, Hyperparams, Result};
use crate::asgraph::Asn;

const MAGIC: &[u8; 8] = b"BEAMEMB\0";
const VERSION: u32 = 1;

struct Reader<R>(R);

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.0.read_exact(&mut buf)?;
        Ok(buf)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

impl EmbeddingModel {
    pub fn write_to(&self, w: impl Write) -> Result<()> {
        let mut w = BufWriter::new(w);
        let h = &self.hyper;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(h.dim as u32).to_le_bytes())?;
        w.write_all(&(h.epochs as u64).to_le_bytes())?;
        w.write_all(&(h.batch_size as u64).to_le_bytes())?;
        w.write_all(&h.learning_rate.to_le_bytes())?;
        w.write_all(&(h.negatives as u64).to_le_bytes())?;
        w.write_all(&h.alpha.to_le_bytes())?;
        w.write_all(&h.seed.to_le_bytes())?;
        w.write_all(&self.fingerprint)?;
        w.write_all(&(self.asns.len() as u64).to_le_bytes())?;
        for v in self.l_raw.iter().chain(&self.r) {
            w.write_all(&v.to_le_bytes())?;
        }
        for (i, asn) in self.asns.iter().enumerate() {
            w.write_all(&asn.0.to_le_bytes())?;
            for v in self.row(i) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(r: impl Read) -> Result<EmbeddingModel> {
        let mut r = Reader(BufReader::new(r));
        if &r.bytes::<8>()? != MAGIC {
            return Err(EmbeddingError::Format("not a model file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(EmbeddingError::Format(format!("unsupported version {version}")));
        }
        let dim = r.u32()? as usize;
        let hyper = Hyperparams {
            dim,
            epochs: r.u64()? as usize,
            batch_size: r.u64()? as usize,
            learning_rate: r.f64()?,
            negatives: r.u64()? as usize,
            alpha: r.f64()?,
            seed: r.u64()?,
        };
        hyper.validate()?;
        let fingerprint = r.bytes::<32>()?;
        let count = r.u64()? as usize;
        let l_raw = r.f64s(dim)?;
        let dir = r.f64s(dim)?;
        let mut asns = Vec::with_capacity(count);
        let mut x = Vec::with_capacity(count * dim);
        for _ in 0..count {
            let asn = Asn(r.u32()?);
            if asns.last().is_some_and(|prev| *prev >= asn) {
                return Err(EmbeddingError::Format("ASNs out of order".into()));
            }
            asns.push(asn);
            x.extend(r.f64s(dim)?);
        }
        let mut trailing = [0u8; 1];
        if r.0.read(&mut trailing)? != 0 {
            return Err(EmbeddingError::Format("trailing bytes".into()));
        }
        Ok(EmbeddingModel::new_raw(asns, x, l_raw, dir, hyper, fingerprint))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<EmbeddingModel> {
        EmbeddingModel::read_from(File::open(path)?)
    }
}
