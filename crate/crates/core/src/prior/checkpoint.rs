//! Binary prior container.
//!
//! ```text
//! magic "HFPRIOR\0" | u32 version
//! u32 len | variant tag (utf-8)
//! u32 len | hyperparameters (JSON)
//! u32 tensor count
//! per tensor: u32 len | name | u32 ndim | u64 dims… | f64 data…
//! ```
//! All integers and floats are little-endian.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayD, IxDyn};

use super::gmm::GmmMeta;
use super::latent::LatentFieldConfig;
use super::mlp::Mlp;
use super::pca::PcaMeta;
use super::{GmmPrior, LatentFieldPrior, PcaPrior, PriorModel};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"HFPRIOR\0";
pub const VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn tensor(&mut self, name: &str, shape: &[usize], data: impl Iterator<Item = f64>) {
        self.str(name);
        self.u32(shape.len() as u32);
        for &d in shape {
            self.0.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in data {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))
    }
    fn tensor(&mut self) -> Result<(String, ArrayD<f64>)> {
        let name = self.str()?;
        let ndim = self.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.u64()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint("tensor too large".into()))?;
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("tensor too large".into()))?,
        )?;
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let arr = ArrayD::from_shape_vec(IxDyn(&shape), data)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok((name, arr))
    }
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serializable metadata")
}

fn push_mlp(w: &mut Vec<(String, Vec<usize>, Vec<f64>)>, prefix: &str, mlp: &Mlp) {
    for (i, l) in mlp.layers.iter().enumerate() {
        w.push((
            format!("{prefix}.{i}.w"),
            l.w.shape().to_vec(),
            l.w.iter().copied().collect(),
        ));
        w.push((
            format!("{prefix}.{i}.b"),
            l.b.shape().to_vec(),
            l.b.to_vec(),
        ));
    }
}

/// Serialize a prior to bytes.
pub fn to_bytes(prior: &PriorModel) -> Vec<u8> {
    let mut tensors: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
    let meta = match prior {
        PriorModel::None => "{}".to_string(),
        PriorModel::Pca(p) => {
            tensors.push(("mean".into(), vec![p.dim()], p.mean.to_vec()));
            tensors.push((
                "basis".into(),
                p.basis.shape().to_vec(),
                p.basis.iter().copied().collect(),
            ));
            tensors.push(("variances".into(), vec![p.k()], p.variances.clone()));
            json(&p.meta())
        }
        PriorModel::Gmm(g) => {
            tensors.push((
                "means".into(),
                g.means.shape().to_vec(),
                g.means.iter().copied().collect(),
            ));
            tensors.push((
                "vars".into(),
                g.vars.shape().to_vec(),
                g.vars.iter().copied().collect(),
            ));
            json(&g.meta())
        }
        PriorModel::Latent(l) => {
            push_mlp(&mut tensors, "encoder", &l.encoder);
            push_mlp(&mut tensors, "encoder_head", &l.encoder_head);
            push_mlp(&mut tensors, "decoder", &l.decoder);
            json(&l.config)
        }
    };
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.str(prior.kind().name());
    w.str(&meta);
    w.u32(tensors.len() as u32);
    for (name, shape, data) in &tensors {
        w.tensor(name, shape, data.iter().copied());
    }
    w.0
}

struct Tensors(BTreeMap<String, ArrayD<f64>>);

impl Tensors {
    fn take(&mut self, name: &str) -> Result<ArrayD<f64>> {
        self.0
            .remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
    }
    fn vec(&mut self, name: &str) -> Result<Array1<f64>> {
        self.take(name)?
            .into_dimensionality()
            .map_err(|_| Error::Checkpoint(format!("`{name}` is not a vector")))
    }
    fn mat(&mut self, name: &str) -> Result<Array2<f64>> {
        self.take(name)?
            .into_dimensionality()
            .map_err(|_| Error::Checkpoint(format!("`{name}` is not a matrix")))
    }
    /// Overwrite every layer of `mlp` from `{prefix}.{i}.{w,b}`.
    fn fill_mlp(&mut self, prefix: &str, mlp: &mut Mlp) -> Result<()> {
        for (i, l) in mlp.layers.iter_mut().enumerate() {
            let w = self.mat(&format!("{prefix}.{i}.w"))?;
            let b = self.vec(&format!("{prefix}.{i}.b"))?;
            if w.dim() != l.w.dim() || b.dim() != l.b.dim() {
                return Err(Error::Checkpoint(format!(
                    "layer {prefix}.{i} has the wrong shape"
                )));
            }
            l.w = w;
            l.b = b;
        }
        Ok(())
    }
}

fn meta<T: serde::de::DeserializeOwned>(s: &str) -> Result<T> {
    serde_json::from_str(s).map_err(|e| Error::Checkpoint(format!("bad hyperparameters: {e}")))
}

pub fn from_bytes(buf: &[u8]) -> Result<PriorModel> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a prior checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let tag = r.str()?;
    let meta_json = r.str()?;
    let count = r.u32()?;
    let mut t = Tensors(BTreeMap::new());
    for _ in 0..count {
        let (name, arr) = r.tensor()?;
        t.0.insert(name, arr);
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    let model = match tag.as_str() {
        "none" => PriorModel::None,
        "pca" => {
            let m: PcaMeta = meta(&meta_json)?;
            let p = PcaPrior {
                window: m.window,
                mean: t.vec("mean")?,
                basis: t.mat("basis")?,
                variances: t.vec("variances")?.to_vec(),
                residual_var: m.residual_var,
                explained_variance_ratio: m.explained_variance_ratio,
            };
            p.validate()?;
            PriorModel::Pca(p)
        }
        "gmm" => {
            let m: GmmMeta = meta(&meta_json)?;
            let g = GmmPrior {
                window: m.window,
                weights: m.weights,
                means: t.mat("means")?,
                vars: t.mat("vars")?,
            };
            g.validate()?;
            PriorModel::Gmm(g)
        }
        "latent" => {
            let config: LatentFieldConfig = meta(&meta_json)?;
            // Build the architecture, then overwrite every weight.
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
            let mut l = LatentFieldPrior::new(config, &mut rng)?;
            t.fill_mlp("encoder", &mut l.encoder)?;
            t.fill_mlp("encoder_head", &mut l.encoder_head)?;
            t.fill_mlp("decoder", &mut l.decoder)?;
            PriorModel::Latent(l)
        }
        other => return Err(Error::Checkpoint(format!("unknown variant `{other}`"))),
    };
    if let Some(name) = t.0.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor `{name}`")));
    }
    Ok(model)
}

pub fn save_prior(prior: &PriorModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(prior)).map_err(|e| Error::io(path, e))
}

pub fn load_prior(path: impl AsRef<Path>) -> Result<PriorModel> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf)
}
