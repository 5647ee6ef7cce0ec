//! Binary checkpoint: training config, target transform, tabular
//! standardizer and weights. Little-endian throughout:
//!
//! ```text
//! "T2S1" | u8 version
//! u32 len | utf-8 "key = value" lines (training config, config_hash)
//! u32 k | u32 d | f64 mean[d] sd[d] components[k*d] ev[k] ratio[k] full_ratio[d] score_sd[k] | u8 rank_deficient
//! f64 tab_mean[2] tab_sd[2]
//! u32 n_tensors, then per tensor: u16 name_len | name | u32 ndim | u32 dims[ndim] | f64 data
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::features::TabStandardizer;
use crate::pca::PcaModel;

use super::params::NetworkParams;
use super::train::TrainConfig;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"T2S1";
pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u8),
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("{0} trailing bytes after checkpoint")]
    TrailingBytes(usize),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub config_hash: String,
    /// Fit on the training split; also supplies the measure mean/sd used by
    /// the variants that regress the raw measures.
    pub pca: PcaModel,
    pub tab: TabStandardizer,
    pub params: NetworkParams<f64>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
    }
    fn f64s<'a>(&mut self, vals: impl IntoIterator<Item = &'a f64>) {
        for v in vals {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
    fn str32(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(CheckpointError::Truncated)?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<usize, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")) as usize)
    }
    fn u32(&mut self) -> Result<usize, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        let bytes = self.take(n.checked_mul(8).ok_or(CheckpointError::Truncated)?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
    fn utf8(&mut self, n: usize) -> Result<String, CheckpointError> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::Corrupt("invalid utf-8".into()))
    }
}

fn corrupt(m: impl Into<String>) -> CheckpointError {
    CheckpointError::Corrupt(m.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(CHECKPOINT_MAGIC);
        w.u8(CHECKPOINT_VERSION);
        let mut text = String::new();
        for (k, v) in self.config.to_kv() {
            text.push_str(&format!("{k} = {v}\n"));
        }
        text.push_str(&format!("config_hash = {}\n", self.config_hash));
        w.str32(&text);

        let p = &self.pca;
        w.u32(p.k());
        w.u32(p.dim());
        w.f64s(&p.feature_mean);
        w.f64s(&p.feature_sd);
        w.f64s(p.components.iter());
        w.f64s(&p.explained_variance);
        w.f64s(&p.explained_variance_ratio);
        w.f64s(&p.full_variance_ratio);
        w.f64s(&p.score_sd);
        w.u8(p.rank_deficient as u8);
        w.f64s(&self.tab.mean);
        w.f64s(&self.tab.sd);

        let tensors = self.params.tensors();
        w.u32(tensors.len());
        for (name, shape, data) in tensors {
            w.u16(name.len() as u16);
            w.0.extend_from_slice(name.as_bytes());
            w.u32(shape.len());
            for d in shape {
                w.u32(d);
            }
            w.f64s(data);
        }
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { buf, pos: 0 };
        if buf.len() < 4 || r.take(4)? != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u8()?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::BadVersion(version));
        }
        let n = r.u32()?;
        let text = r.utf8(n)?;
        let mut kv = BTreeMap::new();
        for line in text.lines() {
            let (k, v) = line.split_once(" = ").ok_or_else(|| corrupt(format!("bad config line '{line}'")))?;
            kv.insert(k.to_string(), v.to_string());
        }
        let config_hash = kv.remove("config_hash").ok_or_else(|| corrupt("missing config_hash"))?;
        let config = TrainConfig::from_kv(&kv).map_err(|e| corrupt(e.to_string()))?;

        let (k, d) = (r.u32()?, r.u32()?);
        if k == 0 || k > d || d > 1 << 16 {
            return Err(corrupt(format!("bad PCA shape k={k}, d={d}")));
        }
        let mean = Array1::from(r.f64s(d)?);
        let sd = Array1::from(r.f64s(d)?);
        let components = Array2::from_shape_vec((k, d), r.f64s(k * d)?).expect("sized read");
        let ev = Array1::from(r.f64s(k)?);
        let ratio = Array1::from(r.f64s(k)?);
        let full = Array1::from(r.f64s(d)?);
        let score_sd = Array1::from(r.f64s(k)?);
        let rank_deficient = r.u8()? != 0;
        let pca = PcaModel {
            feature_mean: mean,
            feature_sd: sd,
            components,
            explained_variance: ev,
            explained_variance_ratio: ratio,
            full_variance_ratio: full,
            score_sd,
            rank_deficient,
        };
        let tm = r.f64s(2)?;
        let ts = r.f64s(2)?;
        let tab = TabStandardizer { mean: [tm[0], tm[1]], sd: [ts[0], ts[1]] };

        let out_dim = if config.variant.uses_pca() { k } else { d };
        let mut params = NetworkParams::<f64>::zeros(config.variant, out_dim);
        let expected: Vec<(String, Vec<usize>)> =
            params.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
        let count = r.u32()?;
        if count != expected.len() {
            return Err(corrupt(format!("expected {} tensors, found {count}", expected.len())));
        }
        let mut slots = params.tensors_mut();
        for (i, (name, shape)) in expected.iter().enumerate() {
            let nl = r.u16()?;
            let got = r.utf8(nl)?;
            let ndim = r.u32()?;
            let dims = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
            if &got != name || &dims != shape {
                return Err(corrupt(format!("tensor {i}: expected {name} {shape:?}, found {got} {dims:?}")));
            }
            let n = slots[i].len();
            slots[i].copy_from_slice(&r.f64s(n)?);
        }
        if r.pos != buf.len() {
            return Err(CheckpointError::TrailingBytes(buf.len() - r.pos));
        }
        Ok(Checkpoint { config, config_hash, pca, tab, params })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes())
            .map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path)
            .map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
        Self::from_bytes(&bytes)
    }
}
