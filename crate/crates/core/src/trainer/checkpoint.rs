//! Checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "PGCSCKPT"
//! version    u32
//! meta_len   u32
//! meta       meta_len bytes of UTF-8, one `key=value` per line
//! n_blobs    u32
//! blob*      name_len u32, name bytes, rows u32, cols u32, rows*cols f64
//! ```
//!
//! Blobs are named `tx.<i>.w`, `tx.<i>.b`, `rx.<i>.w`, `rx.<i>.b` for the
//! network layers and `tx_adam.{m,v}.<j>`, `rx_adam.{m,v}.<j>` for the
//! optimizer moments, in that order.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nnkit::{Activation, AdamState, DenseLayer, DenseNet, Tensor};
use crate::rng::{StreamState, Stream};
use crate::shaping::{ConditionScaling, Conditioning, RxNet, ShapingModel, TxNet};

use super::TrainConfig;

pub const MAGIC: &[u8; 8] = b"PGCSCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: ShapingModel,
    pub tx_adam: AdamState,
    pub rx_adam: AdamState,
    pub epoch: usize,
    pub rng: StreamState,
}

impl Checkpoint {
    fn metadata(&self) -> String {
        let f = |v: f64| format!("{v:?}");
        let mut kv = self.config.to_kv();
        let s = &self.model.scaling;
        kv.extend([
            ("scaling.sigma_n_min".into(), f(s.sigma_n_min)),
            ("scaling.sigma_n_max".into(), f(s.sigma_n_max)),
            ("scaling.sigma_phi_min".into(), f(s.sigma_phi_min)),
            ("scaling.sigma_phi_max".into(), f(s.sigma_phi_max)),
            ("model.conditioning".into(), self.model.conditioning.name().into()),
            ("model.rx_features".into(), "re,im,sigma_n_scaled,sigma_phi_scaled".into()),
            ("state.epoch".into(), self.epoch.to_string()),
            ("state.tx_adam_step".into(), self.tx_adam.step.to_string()),
            ("state.rx_adam_step".into(), self.rx_adam.step.to_string()),
            ("rng.seed".into(), self.rng.seed.to_string()),
        ]);
        for s in Stream::ALL {
            kv.push((format!("rng.{}", s.name()), self.rng.word_pos[s as usize - 1].to_string()));
        }
        kv.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    fn blobs(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (prefix, net) in [("tx", self.model.tx.net()), ("rx", self.model.rx.net())] {
            for (i, l) in net.layers().iter().enumerate() {
                out.push((format!("{prefix}.{i}.w"), &l.weight));
                out.push((format!("{prefix}.{i}.b"), &l.bias));
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = self.metadata();
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        buf.extend_from_slice(meta.as_bytes());

        let mut blobs: Vec<(String, usize, usize, &[f64])> = self
            .blobs()
            .into_iter()
            .map(|(n, t)| (n, t.rows(), t.cols(), t.data()))
            .collect();
        for (prefix, adam) in [("tx_adam", &self.tx_adam), ("rx_adam", &self.rx_adam)] {
            for (j, v) in adam.first.iter().enumerate() {
                blobs.push((format!("{prefix}.m.{j}"), 1, v.len(), v));
            }
            for (j, v) in adam.second.iter().enumerate() {
                blobs.push((format!("{prefix}.v.{j}"), 1, v.len(), v));
            }
        }
        buf.extend_from_slice(&(blobs.len() as u32).to_le_bytes());
        for (name, rows, cols, data) in blobs {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(rows as u32).to_le_bytes());
            buf.extend_from_slice(&(cols as u32).to_le_bytes());
            for v in data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let meta_len = r.u32()? as usize;
        let meta = std::str::from_utf8(r.take(meta_len)?)
            .map_err(|_| Error::Checkpoint("metadata is not UTF-8".into()))?;
        let mut kv = BTreeMap::new();
        for line in meta.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("malformed metadata line `{line}`")))?;
            kv.insert(k.to_string(), v.to_string());
        }
        let config = TrainConfig::from_kv(&kv)?;
        let num = |key: &str| -> Result<f64> {
            kv.get(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Checkpoint(format!("missing or bad `{key}`")))
        };
        let int = |key: &str| -> Result<u128> {
            kv.get(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Checkpoint(format!("missing or bad `{key}`")))
        };
        let scaling = ConditionScaling {
            sigma_n_min: num("scaling.sigma_n_min")?,
            sigma_n_max: num("scaling.sigma_n_max")?,
            sigma_phi_min: num("scaling.sigma_phi_min")?,
            sigma_phi_max: num("scaling.sigma_phi_max")?,
        };
        let conditioning = Conditioning::from_name(
            kv.get("model.conditioning")
                .ok_or_else(|| Error::Checkpoint("missing `model.conditioning`".into()))?,
        )?;

        let n_blobs = r.u32()? as usize;
        let mut blobs = BTreeMap::new();
        let mut order = Vec::with_capacity(n_blobs);
        for _ in 0..n_blobs {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Checkpoint("blob name is not UTF-8".into()))?
                .to_string();
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::Checkpoint(format!("blob `{name}` shape overflows")))?;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("blob too large".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            order.push(name.clone());
            blobs.insert(name, Tensor::new(rows, cols, data)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }

        let mut take_net = |prefix: &str| -> Result<DenseNet> {
            let mut layers = Vec::new();
            while let Some(w) = blobs.remove(&format!("{prefix}.{}.w", layers.len())) {
                let b = blobs
                    .remove(&format!("{prefix}.{}.b", layers.len()))
                    .ok_or_else(|| Error::Checkpoint(format!("missing bias for {prefix} layer {}", layers.len())))?;
                layers.push(DenseLayer {
                    weight: w,
                    bias: b,
                    activation: Activation::Relu,
                });
            }
            if let Some(last) = layers.last_mut() {
                last.activation = Activation::Linear;
            }
            DenseNet::from_layers(layers)
        };
        let tx = TxNet::from_net(config.m, take_net("tx")?)
            .map_err(|e| Error::Checkpoint(format!("tx network: {e}")))?;
        let rx = RxNet::from_net(config.m, take_net("rx")?)
            .map_err(|e| Error::Checkpoint(format!("rx network: {e}")))?;

        let mut take_adam = |prefix: &str, sizes: Vec<usize>, step: u64| -> Result<AdamState> {
            let mut st = AdamState::new(config.adam(), &sizes);
            st.step = step;
            for (kind, buf) in [("m", &mut st.first), ("v", &mut st.second)] {
                for (j, slot) in buf.iter_mut().enumerate() {
                    let t = blobs
                        .remove(&format!("{prefix}.{kind}.{j}"))
                        .ok_or_else(|| Error::Checkpoint(format!("missing {prefix}.{kind}.{j}")))?;
                    if t.len() != slot.len() {
                        return Err(Error::Checkpoint(format!("{prefix}.{kind}.{j} has wrong size")));
                    }
                    *slot = t.into_data();
                }
            }
            Ok(st)
        };
        let tx_adam = take_adam("tx_adam", tx.net().param_sizes(), int("state.tx_adam_step")? as u64)?;
        let rx_adam = take_adam("rx_adam", rx.net().param_sizes(), int("state.rx_adam_step")? as u64)?;
        if let Some(extra) = blobs.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected blob `{extra}`")));
        }

        let rng = StreamState {
            seed: int("rng.seed")? as u64,
            word_pos: {
                let mut w = [0u128; 5];
                for s in Stream::ALL {
                    w[s as usize - 1] = int(&format!("rng.{}", s.name()))?;
                }
                w
            },
        };
        Ok(Self {
            model: ShapingModel {
                tx,
                rx,
                scaling,
                conditioning,
            },
            tx_adam,
            rx_adam,
            epoch: int("state.epoch")? as usize,
            rng,
            config,
        })
    }

    /// Fails unless the checkpoint was trained for `m` bits per symbol.
    pub fn expect_bits(&self, m: usize) -> Result<()> {
        if self.config.m != m {
            return Err(Error::Validation(format!(
                "checkpoint has m={}, expected m={m}",
                self.config.m
            )));
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&ck.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    Checkpoint::from_bytes(&bytes)
}
