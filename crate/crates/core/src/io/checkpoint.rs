//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! "IREV" | u32 version | u8 dtype | u64 meta_len | meta (TOML)
//! u32 entry_count | entries | payload
//! entry: u16 name_len | name | u8 dtype | u8 rank | rank x u64 dims | u64 offset
//! ```
//!
//! The TOML metadata holds the network config, optimizer config, seed, step
//! and BN constants; the payload holds parameters, running statistics and
//! momentum buffers. Encoding is canonical, so save -> load -> save
//! reproduces the file byte for byte.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{NetConfig, Network};
use crate::nn::{BnParams, ConvParams};
use crate::tensor::{DType, Scalar, Tensor};
use crate::training::{OptimConfig, OptimState};

use super::{read_file, write_atomic};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"IREV";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to resume training or run analyses. The training RNG
/// is a pure function of `(seed, step)`, so those two values are its state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T: Scalar> {
    pub net: Network<T>,
    pub optim: Option<OptimState<T>>,
    pub seed: u64,
    pub step: u64,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    seed: u64,
    step: u64,
    bn_eps: f64,
    bn_momentum: f64,
    net: NetConfig,
    optimizer: Option<OptimConfig>,
}

struct Entry {
    name: String,
    shape: Vec<usize>,
    data: Vec<u8>,
}

fn entry<T: Scalar>(name: String, shape: Vec<usize>, values: &[T]) -> Entry {
    let mut data = Vec::with_capacity(values.len() * T::DTYPE.size_of());
    for &v in values {
        v.write_le(&mut data);
    }
    Entry { name, shape, data }
}

fn bn_entries<T: Scalar>(prefix: &str, bn: &BnParams<T>, out: &mut Vec<Entry>) {
    let c = vec![bn.gamma.len()];
    out.push(entry(format!("{prefix}.gamma"), c.clone(), &bn.gamma));
    out.push(entry(format!("{prefix}.beta"), c.clone(), &bn.beta));
    out.push(entry(
        format!("{prefix}.running_mean"),
        c.clone(),
        &bn.running_mean,
    ));
    out.push(entry(format!("{prefix}.running_var"), c, &bn.running_var));
}

fn conv_entries<T: Scalar>(prefix: &str, conv: &ConvParams<T>, out: &mut Vec<Entry>) {
    out.push(entry(
        format!("{prefix}.weight"),
        conv.weight.shape().to_vec(),
        conv.weight.data(),
    ));
    if let Some(b) = &conv.bias {
        out.push(entry(format!("{prefix}.bias"), vec![b.len()], b));
    }
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(net: Network<T>, optim: Option<OptimState<T>>, seed: u64) -> Self {
        let step = optim.as_ref().map_or(0, |o| o.step);
        Self {
            net,
            optim,
            seed,
            step,
        }
    }

    fn entries(&self) -> Vec<Entry> {
        let mut out = Vec::new();
        for (i, b) in self.net.blocks.iter().enumerate() {
            let r = &b.residual;
            let p = format!("block{}", i + 1);
            for (l, (bn, conv)) in [(&r.bn1, &r.conv1), (&r.bn2, &r.conv2), (&r.bn3, &r.conv3)]
                .into_iter()
                .enumerate()
            {
                bn_entries(&format!("{p}.bn{}", l + 1), bn, &mut out);
                conv_entries(&format!("{p}.conv{}", l + 1), conv, &mut out);
            }
        }
        let head = &self.net.head;
        out.push(entry(
            "head.weight".into(),
            vec![head.out_dim, head.in_dim],
            &head.weight,
        ));
        out.push(entry("head.bias".into(), vec![head.out_dim], &head.bias));
        if let Some(o) = &self.optim {
            for (name, v) in self.net.param_names().into_iter().zip(&o.velocity) {
                out.push(entry(format!("optim.velocity.{name}"), vec![v.len()], v));
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let bn = &self
            .net
            .blocks
            .first()
            .map(|b| b.residual.bn1.clone())
            .unwrap_or_else(|| BnParams::new(1));
        let meta = Meta {
            seed: self.seed,
            step: self.step,
            bn_eps: bn.eps,
            bn_momentum: bn.momentum,
            net: self.net.config().clone(),
            optimizer: self.optim.as_ref().map(|o| o.config.clone()),
        };
        let meta = toml::to_string(&meta).expect("metadata serializes");
        let entries = self.entries();
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(T::DTYPE.code());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for e in &entries {
            out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(T::DTYPE.code());
            out.push(e.shape.len() as u8);
            for &d in &e.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            offset += e.data.len() as u64;
        }
        for e in entries {
            out.extend(e.data);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, path)
    }

    /// Parses a checkpoint; `path` is only used in error messages.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            path,
        };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(r.err(0, "missing IREV magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: format version {version}, this build reads version {CHECKPOINT_VERSION}",
                path.display()
            )));
        }
        let dtype_at = r.pos;
        let dtype = DType::from_code(r.u8()?);
        if dtype != Some(T::DTYPE) {
            return Err(r.err(
                dtype_at,
                &format!("dtype {dtype:?} does not match requested {}", T::DTYPE),
            ));
        }
        let meta_len = r.u64()? as usize;
        let meta_at = r.pos;
        let meta_text = std::str::from_utf8(r.take(meta_len)?)
            .map_err(|_| r.err(meta_at, "metadata is not UTF-8"))?;
        let meta: Meta =
            toml::from_str(meta_text).map_err(|e| r.err(meta_at, &format!("metadata: {e}")))?;
        meta.net.validate()?;

        let count = r.u32()? as usize;
        let mut index = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name_at = r.pos;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| r.err(name_at, "entry name is not UTF-8"))?;
            let code_at = r.pos;
            if DType::from_code(r.u8()?) != Some(T::DTYPE) {
                return Err(r.err(code_at, &format!("entry {name} has a different dtype")));
            }
            let rank = r.u8()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let offset = r.u64()? as usize;
            index.push((name, shape, offset));
        }
        let payload = &bytes[r.pos..];
        let width = T::DTYPE.size_of();
        let mut tensors: BTreeMap<String, (Vec<usize>, Vec<T>)> = BTreeMap::new();
        let mut expected = 0;
        for (name, shape, offset) in index {
            let len = shape.iter().product::<usize>() * width;
            if offset != expected || offset + len > payload.len() {
                return Err(r.err(
                    r.pos + offset,
                    &format!("entry {name} lies outside the payload"),
                ));
            }
            expected += len;
            let values = payload[offset..offset + len]
                .chunks(width)
                .map(T::read_le)
                .collect();
            tensors.insert(name, (shape, values));
        }
        if expected != payload.len() {
            return Err(r.err(r.pos + expected, "trailing bytes after the payload"));
        }

        let mut net = Network::<T>::build(meta.net.clone(), 0)?;
        let take = |tensors: &mut BTreeMap<String, (Vec<usize>, Vec<T>)>,
                    name: &str,
                    shape: &[usize]|
         -> Result<Vec<T>> {
            let (s, v) = tensors.remove(name).ok_or_else(|| {
                Error::Checkpoint(format!("{}: missing tensor {name}", path.display()))
            })?;
            if s != shape {
                return Err(Error::Checkpoint(format!(
                    "{}: tensor {name} has shape {s:?}, expected {shape:?}",
                    path.display()
                )));
            }
            Ok(v)
        };
        for (i, b) in net.blocks.iter_mut().enumerate() {
            let r = &mut b.residual;
            let p = format!("block{}", i + 1);
            for (l, (bn, conv)) in [
                (&mut r.bn1, &mut r.conv1),
                (&mut r.bn2, &mut r.conv2),
                (&mut r.bn3, &mut r.conv3),
            ]
            .into_iter()
            .enumerate()
            {
                let q = format!("{p}.bn{}", l + 1);
                let c = [bn.gamma.len()];
                bn.gamma = take(&mut tensors, &format!("{q}.gamma"), &c)?;
                bn.beta = take(&mut tensors, &format!("{q}.beta"), &c)?;
                bn.running_mean = take(&mut tensors, &format!("{q}.running_mean"), &c)?;
                bn.running_var = take(&mut tensors, &format!("{q}.running_var"), &c)?;
                bn.eps = meta.bn_eps;
                bn.momentum = meta.bn_momentum;
                let q = format!("{p}.conv{}", l + 1);
                let shape = conv.weight.shape();
                conv.weight =
                    Tensor::from_vec(shape, take(&mut tensors, &format!("{q}.weight"), &shape)?)?;
                let bias_name = format!("{q}.bias");
                if tensors.contains_key(&bias_name) {
                    conv.bias = Some(take(&mut tensors, &bias_name, &[shape[0]])?);
                }
            }
        }
        let (o, i) = (net.head.out_dim, net.head.in_dim);
        net.head.weight = take(&mut tensors, "head.weight", &[o, i])?;
        net.head.bias = take(&mut tensors, "head.bias", &[o])?;
        let optim = match meta.optimizer {
            Some(config) => {
                let mut velocity = Vec::new();
                for (name, p) in net.param_names().into_iter().zip(net.params()) {
                    velocity.push(take(
                        &mut tensors,
                        &format!("optim.velocity.{name}"),
                        &[p.len()],
                    )?);
                }
                Some(OptimState {
                    config,
                    velocity,
                    step: meta.step,
                })
            }
            None => None,
        };
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Checkpoint(format!(
                "{}: unexpected tensor {extra}",
                path.display()
            )));
        }
        Ok(Self {
            net,
            optim,
            seed: meta.seed,
            step: meta.step,
        })
    }
}

/// Reads only the header to learn which element type a checkpoint stores.
pub fn peek_dtype(path: &Path) -> Result<DType> {
    let bytes = read_file(path)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(r.err(0, "missing IREV magic"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: format version {version}, this build reads version {CHECKPOINT_VERSION}",
            path.display()
        )));
    }
    let at = r.pos;
    DType::from_code(r.u8()?).ok_or_else(|| r.err(at, "unknown dtype code"))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, offset: usize, msg: &str) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            msg: msg.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos.saturating_add(n))
            .ok_or_else(|| self.err(self.bytes.len(), "unexpected end of file"))?;
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
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
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::SplitKind;
    use crate::Mode;

    fn trained_ish() -> Checkpoint<f32> {
        let cfg =
            NetConfig::with_schedule([3, 8, 8], SplitKind::Bijective { factor: 2 }, 3, &[2], 4);
        let mut net = Network::<f32>::build(cfg, 21).unwrap();
        let x = Tensor::from_fn([4, 3, 8, 8], |[n, c, h, w]| {
            ((n + 2 * c + 3 * h + 5 * w) % 7) as f32 / 7.0
        });
        let (f, _) = net.forward(&x, Mode::Train, &[]).unwrap();
        net.update_running_stats(f.bn_replay.as_ref().unwrap());
        let mut optim = OptimState::new(
            OptimConfig {
                milestones: vec![10],
                ..Default::default()
            },
            &net.params(),
        )
        .unwrap();
        optim.velocity[3][0] = 0.25;
        optim.step = 7;
        Checkpoint::new(net, Some(optim), 99)
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let ck = trained_ish();
        let p = dir.path().join("a.irev");
        ck.save(&p).unwrap();
        let back = Checkpoint::<f32>::load(&p).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), std::fs::read(&p).unwrap());
        assert_eq!(peek_dtype(&p).unwrap(), DType::F32);
    }

    #[test]
    fn logits_survive_bitwise() {
        let ck = trained_ish();
        let back = Checkpoint::<f32>::from_bytes(&ck.to_bytes(), Path::new("mem")).unwrap();
        let x = Tensor::from_fn([2, 3, 8, 8], |[n, c, h, w]| {
            ((n * 5 + c + h * w) % 11) as f32 / 11.0
        });
        let a = ck.net.classify(&x).unwrap();
        let b = back.net.classify(&x).unwrap();
        assert!(a.iter().zip(&b).all(|(u, v)| u.to_bits() == v.to_bits()));
    }

    #[test]
    fn version_and_magic_checked() {
        let mut bytes = trained_ish().to_bytes();
        bytes[4] = 9;
        let err = Checkpoint::<f32>::from_bytes(&bytes, Path::new("v")).unwrap_err();
        assert!(err.to_string().contains("version 9"), "{err}");
        bytes[4] = 1;
        bytes[0] = b'X';
        assert!(matches!(
            Checkpoint::<f32>::from_bytes(&bytes, Path::new("m")),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn dtype_mismatch_and_truncation() {
        let bytes = trained_ish().to_bytes();
        assert!(Checkpoint::<f64>::from_bytes(&bytes, Path::new("d")).is_err());
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(
            Checkpoint::<f32>::from_bytes(cut, Path::new("t")),
            Err(Error::Format { .. })
        ));
    }
}
