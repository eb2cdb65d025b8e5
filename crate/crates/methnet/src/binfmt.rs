//! Binary artifacts: the healthy-reference cache and the streamed
//! interaction table. Both start with an 8-byte magic and a `u32` version;
//! all numbers are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use methnet_core::data::{Cohort, MethylationDataset};
use methnet_core::interaction::{CenteredHealthyBlock, GeneMoments, GeneReference, HealthyReference};
use methnet_core::linalg::Matrix;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MOMENTS_MAGIC: &[u8; 8] = b"MNMOMENT";
const TABLE_MAGIC: &[u8; 8] = b"MNRHOTAB";
pub const FORMAT_VERSION: u32 = 1;
const TABLE_HEADER_LEN: u64 = 8 + 4 + 8 + 8;

/// Content hash of the healthy cohort: gene names, probe ids, healthy sample
/// ids and their values.
pub fn healthy_key(d: &MethylationDataset) -> [u8; 32] {
    let healthy = d.samples_in(Cohort::Healthy);
    let n = d.n_samples();
    let mut h = Sha256::new();
    for &s in &healthy {
        h.update(d.sample_ids()[s].as_bytes());
        h.update([0]);
    }
    for g in d.genes() {
        h.update(g.gene.as_bytes());
        h.update([0]);
        for (l, p) in g.probes.iter().enumerate() {
            h.update(p.as_bytes());
            h.update([0]);
            let locus = g.locus(l, n);
            for &s in &healthy {
                h.update(locus[s].to_le_bytes());
            }
        }
    }
    h.finalize().into()
}

fn put_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64s(w: &mut impl Write, vs: &[f64]) -> std::io::Result<()> {
    for v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_moments(path: &Path, reference: &HealthyReference, key: &[u8; 32]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(MOMENTS_MAGIC).map_err(io)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(key).map_err(io)?;
    put_u64(&mut w, reference.n_genes() as u64).map_err(io)?;
    put_u64(&mut w, reference.n_healthy() as u64).map_err(io)?;
    for g in reference.genes() {
        let name = g.gene().as_bytes();
        put_u64(&mut w, name.len() as u64).map_err(io)?;
        w.write_all(name).map_err(io)?;
        put_u64(&mut w, g.n_loci() as u64).map_err(io)?;
        put_f64s(&mut w, &g.moments.mean).map_err(io)?;
        put_f64s(&mut w, g.moments.cov.as_slice()).map_err(io)?;
        put_f64s(&mut w, g.block.centered.as_slice()).map_err(io)?;
    }
    w.flush().map_err(io)
}

struct Cursor<'a> {
    path: &'a Path,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(self.path, "truncated file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn count(&mut self, limit: usize) -> Result<usize> {
        let v = self.u64()?;
        if v as usize > limit {
            return Err(Error::format(self.path, format!("implausible count {v}")));
        }
        Ok(v as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n * 8)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

fn check_magic(path: &Path, c: &mut Cursor<'_>, magic: &[u8; 8]) -> Result<()> {
    if c.take(8)? != magic {
        return Err(Error::format(path, "bad magic"));
    }
    let version = u32::from_le_bytes(c.take(4)?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::format(path, format!("unsupported format version {version}")));
    }
    Ok(())
}

/// Reads the reference back; with `expected_key` the stored healthy-cohort
/// hash must match.
pub fn read_moments(path: &Path, expected_key: Option<&[u8; 32]>) -> Result<HealthyReference> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut c = Cursor { path, buf: &bytes, pos: 0 };
    check_magic(path, &mut c, MOMENTS_MAGIC)?;
    let key = c.take(32)?;
    if let Some(k) = expected_key {
        if key != k {
            return Err(Error::format(path, "healthy cohort hash does not match"));
        }
    }
    let limit = bytes.len();
    let m = c.count(limit)?;
    let n_h = c.count(limit)?;
    let mut genes = Vec::with_capacity(m);
    for _ in 0..m {
        let len = c.count(limit)?;
        let name = String::from_utf8(c.take(len)?.to_vec()).map_err(|_| Error::format(path, "gene name not UTF-8"))?;
        let p = c.count(limit)?;
        let mean = c.f64s(p)?;
        let cov = Matrix::from_vec(p, p, c.f64s(p * p)?)?;
        let centered = Matrix::from_vec(p, n_h, c.f64s(p * n_h)?)?;
        genes.push(GeneReference {
            moments: GeneMoments { gene: name.clone(), mean, cov, n_healthy: n_h },
            block: CenteredHealthyBlock { gene: name, centered },
        });
    }
    if c.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes"));
    }
    Ok(HealthyReference::from_genes(genes)?)
}

/// Streaming writer of per-pair interaction series in pair-index order.
pub struct InteractionTableWriter {
    w: BufWriter<File>,
    path: std::path::PathBuf,
    n_samples: usize,
    remaining: u64,
}

impl InteractionTableWriter {
    pub fn create(path: &Path, m: usize, n_samples: usize) -> Result<Self> {
        let io = |e| Error::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        w.write_all(TABLE_MAGIC).map_err(io)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
        put_u64(&mut w, m as u64).map_err(io)?;
        put_u64(&mut w, n_samples as u64).map_err(io)?;
        let pairs = (m * m.saturating_sub(1) / 2) as u64;
        Ok(InteractionTableWriter { w, path: path.into(), n_samples, remaining: pairs })
    }

    /// Appends consecutive pair series; each slice holds `n_samples` values.
    pub fn append(&mut self, series: &[f64]) -> Result<()> {
        let pairs = (series.len() / self.n_samples.max(1)) as u64;
        if !series.len().is_multiple_of(self.n_samples.max(1)) || pairs > self.remaining {
            return Err(Error::format(&self.path, "interaction chunk does not fit the table"));
        }
        self.remaining -= pairs;
        put_f64s(&mut self.w, series).map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        if self.remaining != 0 {
            return Err(Error::format(&self.path, format!("{} pairs never written", self.remaining)));
        }
        self.w.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Random-access reader over an interaction table.
pub struct InteractionTableReader {
    r: BufReader<File>,
    path: std::path::PathBuf,
    pub m: usize,
    pub n_samples: usize,
}

impl InteractionTableReader {
    pub fn open(path: &Path) -> Result<Self> {
        let io = |e| Error::io(path, e);
        let file = File::open(path).map_err(io)?;
        let len = file.metadata().map_err(io)?.len();
        let mut r = BufReader::new(file);
        let mut head = vec![0u8; TABLE_HEADER_LEN as usize];
        r.read_exact(&mut head).map_err(|_| Error::format(path, "truncated header"))?;
        let mut c = Cursor { path, buf: &head, pos: 0 };
        check_magic(path, &mut c, TABLE_MAGIC)?;
        let m = c.u64()? as usize;
        let n_samples = c.u64()? as usize;
        let pairs = (m as u64) * (m as u64).saturating_sub(1) / 2;
        if len != TABLE_HEADER_LEN + pairs * n_samples as u64 * 8 {
            return Err(Error::format(path, "interaction table size does not match its header"));
        }
        Ok(InteractionTableReader { r, path: path.into(), m, n_samples })
    }

    pub fn n_pairs(&self) -> usize {
        self.m * self.m.saturating_sub(1) / 2
    }

    /// Series of pairs `start..end`, concatenated.
    pub fn read_range(&mut self, start: usize, end: usize) -> Result<Vec<f64>> {
        let n = self.n_samples;
        let offset = TABLE_HEADER_LEN + (start * n * 8) as u64;
        self.r.seek(SeekFrom::Start(offset)).map_err(|e| Error::io(&self.path, e))?;
        let mut bytes = vec![0u8; (end - start) * n * 8];
        self.r.read_exact(&mut bytes).map_err(|e| Error::io(&self.path, e))?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let k = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if k == 0 {
            break;
        }
        h.update(&buf[..k]);
    }
    Ok(hex::encode(h.finalize()))
}
