//! Binary model files.
//!
//! Every file starts with an 8-byte magic and a little-endian `u32`
//! version, followed by `n` and `k` as `u64`. Then, all little-endian:
//!
//! - FM: `w0`, `w[n]`, `V` as `k x n` row-major `f64`.
//! - DFM: `w0`, `w[n]`, the packed code words (`n * ceil(k/64)` `u64`,
//!   feature-major).
//! - Checkpoint: the DFM body, the delegate as `k x n` row-major `f64`,
//!   the objective trace (`u64` length then values) and the completed
//!   iteration count as `u64`.

use std::io::Write;
use std::path::Path;

use dfm_core::linalg::DenseMatrix;
use dfm_core::{CodeMatrix, Dataset, DelegateMatrix, DfmModel, FmModel, OptState, Predictor, SparseVector};

use crate::error::{Error, Result};

pub const FM_MAGIC: &[u8; 8] = b"FMMODEL\0";
pub const DFM_MAGIC: &[u8; 8] = b"DFMCODES";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DFMCKPT\0";
pub const VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn new(magic: &[u8; 8], n: usize, k: usize) -> Self {
        let mut w = Writer(magic.to_vec());
        w.0.extend_from_slice(&VERSION.to_le_bytes());
        w.u64(n as u64);
        w.u64(k as u64);
        w
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic and version and returns the reader with `(n, k)`.
    fn open(buf: &'a [u8], magic: &[u8; 8], what: &str) -> Result<(Self, usize, usize)> {
        if buf.len() < 12 || &buf[..8] != magic {
            return Err(Error::Format(format!("not a {what} file")));
        }
        let version = u32::from_le_bytes(buf[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!("unsupported {what} version {version}")));
        }
        let mut r = Reader { buf, pos: 12 };
        let n = r.len()?;
        let k = r.len()?;
        Ok((r, n, k))
    }

    fn take(&mut self, bytes: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(bytes).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("truncated model file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("length overflows usize".into()))
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let bytes = self.take(count.checked_mul(8).ok_or_else(|| Error::Format("length overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn u64s(&mut self, count: usize) -> Result<Vec<u64>> {
        let bytes = self.take(count.checked_mul(8).ok_or_else(|| Error::Format("length overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format("trailing bytes after model".into()));
        }
        Ok(())
    }
}

pub fn encode_fm(m: &FmModel) -> Vec<u8> {
    let (n, k) = (m.n_features(), m.k());
    let mut w = Writer::new(FM_MAGIC, n, k);
    w.f64s(&[m.w0()]);
    w.f64s(m.w());
    w.f64s(m.embedding_rows().as_slice());
    w.0
}

pub fn decode_fm(buf: &[u8]) -> Result<FmModel> {
    let (mut r, n, k) = Reader::open(buf, FM_MAGIC, "FM model")?;
    let w0 = r.f64s(1)?[0];
    let w = r.f64s(n)?;
    let rows = DenseMatrix::from_vec(k, n, r.f64s(n.saturating_mul(k))?)?;
    r.finish()?;
    Ok(FmModel::from_rows(w0, w, &rows)?)
}

fn write_dfm_body(w: &mut Writer, m: &DfmModel) {
    w.f64s(&[m.w0()]);
    w.f64s(m.w());
    for &word in m.codes().words() {
        w.u64(word);
    }
}

fn read_dfm_body(r: &mut Reader, n: usize, k: usize) -> Result<DfmModel> {
    let w0 = r.f64s(1)?[0];
    let w = r.f64s(n)?;
    let words = r.u64s(n.saturating_mul(k.div_ceil(64)))?;
    Ok(DfmModel::new(w0, w, CodeMatrix::from_words(n, k, words)?)?)
}

pub fn encode_dfm(m: &DfmModel) -> Vec<u8> {
    let mut w = Writer::new(DFM_MAGIC, m.n_features(), m.k());
    write_dfm_body(&mut w, m);
    w.0
}

pub fn decode_dfm(buf: &[u8]) -> Result<DfmModel> {
    let (mut r, n, k) = Reader::open(buf, DFM_MAGIC, "DFM model")?;
    let m = read_dfm_body(&mut r, n, k)?;
    r.finish()?;
    Ok(m)
}

/// Everything needed to resume discrete training.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: DfmModel,
    pub delegate: DelegateMatrix,
    pub objective_trace: Vec<f64>,
    pub iteration: usize,
}

impl Checkpoint {
    pub fn of(st: &OptState) -> Self {
        Checkpoint {
            model: st.to_model(),
            delegate: st.delegate().clone(),
            objective_trace: st.objective_trace().to_vec(),
            iteration: st.iteration(),
        }
    }

    /// Rebuilds the optimizer state against the training data.
    pub fn restore(self, data: &Dataset) -> Result<OptState> {
        Ok(OptState::restore(data, &self.model, self.delegate, self.objective_trace, self.iteration)?)
    }
}

pub fn encode_checkpoint(c: &Checkpoint) -> Vec<u8> {
    let mut w = Writer::new(CHECKPOINT_MAGIC, c.model.n_features(), c.model.k());
    write_dfm_body(&mut w, &c.model);
    w.f64s(c.delegate.matrix().as_slice());
    w.u64(c.objective_trace.len() as u64);
    w.f64s(&c.objective_trace);
    w.u64(c.iteration as u64);
    w.0
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Checkpoint> {
    let (mut r, n, k) = Reader::open(buf, CHECKPOINT_MAGIC, "checkpoint")?;
    let model = read_dfm_body(&mut r, n, k)?;
    let delegate = DelegateMatrix::from_matrix(DenseMatrix::from_vec(k, n, r.f64s(n.saturating_mul(k))?)?);
    let len = r.len()?;
    let objective_trace = r.f64s(len)?;
    let iteration = r.len()?;
    r.finish()?;
    Ok(Checkpoint { model, delegate, objective_trace, iteration })
}

/// A model file of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Fm(FmModel),
    Dfm(DfmModel),
}

impl Model {
    pub fn decode(buf: &[u8]) -> Result<Self> {
        match buf.get(..8) {
            Some(m) if m == FM_MAGIC => Ok(Model::Fm(decode_fm(buf)?)),
            Some(m) if m == DFM_MAGIC => Ok(Model::Dfm(decode_dfm(buf)?)),
            Some(m) if m == CHECKPOINT_MAGIC => Ok(Model::Dfm(decode_checkpoint(buf)?.model)),
            _ => Err(Error::Format("unrecognized model file".into())),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        match self {
            Model::Fm(m) => encode_fm(m),
            Model::Dfm(m) => encode_dfm(m),
        }
    }
}

impl Predictor for Model {
    fn n_features(&self) -> usize {
        match self {
            Model::Fm(m) => m.n_features(),
            Model::Dfm(m) => m.n_features(),
        }
    }

    fn predict(&self, x: &SparseVector) -> dfm_core::Result<f64> {
        match self {
            Model::Fm(m) => m.predict(x),
            Model::Dfm(m) => m.predict(x),
        }
    }
}

/// Writes `bytes` to a temporary file next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).and_then(|_| tmp.as_file().sync_all()).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn save_fm(path: &Path, m: &FmModel) -> Result<()> {
    write_atomic(path, &encode_fm(m))
}

pub fn save_dfm(path: &Path, m: &DfmModel) -> Result<()> {
    write_atomic(path, &encode_dfm(m))
}

pub fn load_model(path: &Path) -> Result<Model> {
    Model::decode(&read_file(path)?)
}
