//! Binary checkpoints: magic `SHRN`, version, then named little-endian f32
//! tensors. Training state rides along as extra tensors: optimizer moments
//! (`optim.m.*`, `optim.v.*`), counters stored as raw bit patterns
//! (`meta.step`, `meta.best`), and the config text one byte per value
//! (`meta.config`).

use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::GazeModel;
use crate::tensor::Tensor;
use crate::train::optim::OptimizerState;

pub const MAGIC: &[u8; 4] = b"SHRN";
pub const VERSION: u32 = 1;

/// Named tensors in file order.
pub type TensorMap = IndexMap<String, Tensor<f32>>;

pub fn encode(tensors: &TensorMap) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        let n = u16::try_from(name.len()).map_err(|_| Error::Checkpoint(format!("tensor name too long: {name}")))?;
        let rank = u8::try_from(t.rank()).map_err(|_| Error::Checkpoint(format!("rank of {name} exceeds 255")))?;
        out.extend_from_slice(&n.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::Checkpoint(format!("dimension of {name} exceeds u32")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "file truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<TensorMap> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}, expected {VERSION}")));
    }
    let count = r.u32("tensor count")?;
    let mut out = TensorMap::new();
    for i in 0..count {
        let n = u16::from_le_bytes(r.take(2, "name length")?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(r.take(n, "tensor name")?)
            .map_err(|_| Error::Checkpoint(format!("tensor {i} has a non-UTF-8 name")))?
            .to_string();
        let rank = r.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32(&format!("dims of {name}"))? as usize);
        }
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let bytes = len
            .and_then(|l| l.checked_mul(4))
            .ok_or_else(|| Error::Checkpoint(format!("{name}: shape {shape:?} overflows")))?;
        let data = r
            .take(bytes, &format!("payload of {name}"))?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if out.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(out)
}

/// Writes through a temporary file and renames, so a failed save never
/// leaves a partial checkpoint under `path`.
pub fn write_file(path: &Path, tensors: &TensorMap) -> Result<()> {
    let bytes = encode(tensors)?;
    let tmp = path.with_extension("partial");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<TensorMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

fn u64_tensor(v: u64) -> Tensor<f32> {
    let bits = [f32::from_bits(v as u32), f32::from_bits((v >> 32) as u32)];
    Tensor::new(vec![2], bits.to_vec()).unwrap()
}

fn tensor_u64(t: &Tensor<f32>, name: &str) -> Result<u64> {
    match t.data() {
        [lo, hi] => Ok(lo.to_bits() as u64 | ((hi.to_bits() as u64) << 32)),
        _ => Err(Error::Checkpoint(format!("{name} must hold two values"))),
    }
}

/// Everything needed to continue a run.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub config: TrainConfig,
    pub model: GazeModel<f32>,
    pub optim: Option<OptimizerState<f32>>,
    /// Completed optimizer steps.
    pub step: u64,
    /// Best validation Avg Dist so far.
    pub best: Option<f64>,
}

impl TrainState {
    pub fn to_tensors(&self) -> TensorMap {
        let mut t = TensorMap::new();
        for (name, p) in self.model.params.iter() {
            t.insert(name.to_string(), p.clone());
        }
        if let Some(o) = &self.optim {
            for ((name, _), (m, v)) in self.model.params.iter().zip(o.m.iter().zip(&o.v)) {
                t.insert(format!("optim.m.{name}"), m.clone());
                t.insert(format!("optim.v.{name}"), v.clone());
            }
            t.insert("optim.step".into(), u64_tensor(o.step));
        }
        t.insert("meta.step".into(), u64_tensor(self.step));
        if let Some(b) = self.best {
            t.insert("meta.best".into(), u64_tensor(b.to_bits()));
        }
        let text = self.config.to_text();
        let bytes: Vec<f32> = text.bytes().map(f32::from).collect();
        t.insert("meta.config".into(), Tensor::new(vec![bytes.len()], bytes).unwrap());
        t
    }

    /// Rebuilds the state; every tensor must be recognized and every model
    /// parameter present with its exact shape.
    pub fn from_tensors(mut t: TensorMap) -> Result<Self> {
        let cfg_t = t
            .shift_remove("meta.config")
            .ok_or_else(|| Error::Checkpoint("missing tensor meta.config".into()))?;
        let bytes = cfg_t
            .data()
            .iter()
            .map(|&v| if (0.0..=255.0).contains(&v) && v.fract() == 0.0 { Ok(v as u8) } else { Err(()) })
            .collect::<std::result::Result<Vec<u8>, ()>>()
            .map_err(|_| Error::Checkpoint("meta.config holds non-byte values".into()))?;
        let text = String::from_utf8(bytes).map_err(|_| Error::Checkpoint("meta.config is not UTF-8".into()))?;
        let config = TrainConfig::parse(&text)?;
        let step = match t.shift_remove("meta.step") {
            Some(s) => tensor_u64(&s, "meta.step")?,
            None => 0,
        };
        let best = t
            .shift_remove("meta.best")
            .map(|b| tensor_u64(&b, "meta.best").map(f64::from_bits))
            .transpose()?;
        let mut model = GazeModel::<f32>::new(config.model.clone(), 0)?;
        let names: Vec<String> = model.params.iter().map(|(n, _)| n.to_string()).collect();
        for n in &names {
            let v = t
                .shift_remove(n)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {n}")))?;
            model.params.set(n, v)?;
        }
        let optim = match t.shift_remove("optim.step") {
            None => None,
            Some(s) => {
                let mut take = |prefix: &str| -> Result<Vec<Tensor<f32>>> {
                    names
                        .iter()
                        .map(|n| {
                            t.shift_remove(&format!("{prefix}{n}"))
                                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {prefix}{n}")))
                        })
                        .collect()
                };
                let o = OptimizerState {
                    step: tensor_u64(&s, "optim.step")?,
                    m: take("optim.m.")?,
                    v: take("optim.v.")?,
                };
                o.check_matches(&model.params)?;
                Some(o)
            }
        };
        if let Some(name) = t.keys().next() {
            return Err(Error::Checkpoint(format!("unknown tensor {name}")));
        }
        Ok(TrainState {
            config,
            model,
            optim,
            step,
            best,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_tensors())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tensors(read_file(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Variant;
    use crate::model::SceneInput;
    use crate::person::PersonInput;

    fn state() -> TrainState {
        let mut config = TrainConfig::desk(Variant::Point);
        config.model = crate::ModelConfig::micro(Variant::Point);
        let model = GazeModel::new(config.model.clone(), 4).unwrap();
        let mut optim = OptimizerState::new(&model.params);
        optim.step = 17;
        optim.m[0].data_mut()[0] = 0.5;
        TrainState {
            config,
            model,
            optim: Some(optim),
            step: (1 << 40) + 3,
            best: Some(0.123456789),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let s = state();
        let back = TrainState::from_tensors(decode(&encode(&s.to_tensors()).unwrap()).unwrap()).unwrap();
        assert_eq!(back.config, s.config);
        assert_eq!(back.optim, s.optim);
        assert_eq!((back.step, back.best), (s.step, s.best));
        assert!(back.model.params.iter().zip(s.model.params.iter()).all(|(a, b)| a == b));
        let scene = SceneInput {
            image: Tensor::from_fn(vec![48, 48, 3], |i| (i % 13) as f32 / 13.0),
            persons: vec![PersonInput::new(Tensor::from_fn(vec![16, 16, 3], |i| (i % 5) as f32 / 5.0), [0.1, 0.1, 0.3, 0.3]).unwrap()],
        };
        assert_eq!(back.model.predict(&scene).unwrap(), s.model.predict(&scene).unwrap());
    }

    #[test]
    fn header_errors() {
        let bytes = encode(&state().to_tensors()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).unwrap_err().to_string().contains("magic"));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(decode(&bad).unwrap_err().to_string().contains("version"));
        for cut in [3, 11, 20, bytes.len() / 2, bytes.len() - 1] {
            let e = decode(&bytes[..cut]).unwrap_err().to_string();
            assert!(e.contains("truncated"), "{cut}: {e}");
        }
    }

    #[test]
    fn unknown_and_missing_tensors_are_named() {
        let mut t = state().to_tensors();
        t.insert("stray".into(), Tensor::zeros([1]));
        assert!(TrainState::from_tensors(t).unwrap_err().to_string().contains("unknown tensor stray"));
        let mut t = state().to_tensors();
        t.shift_remove("global_token");
        assert!(TrainState::from_tensors(t).unwrap_err().to_string().contains("global_token"));
    }

    #[test]
    fn failed_write_leaves_no_file() {
        let d = tempfile::tempdir().unwrap();
        let path = d.path().join("missing_dir").join("x.shrn");
        assert!(write_file(&path, &state().to_tensors()).is_err());
        assert!(!path.exists());
    }
}
