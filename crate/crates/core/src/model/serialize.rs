//! Binary checkpoint encoding of [`ModelParameters`].
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! magic  b"MOTSPCKP"
//! version
//! meta_len, meta (UTF-8 `key=value` lines: model config, critic channels)
//! count
//! count × { name_len, name, rank, dims[rank], values[prod(dims)] as f32 LE }
//! ```
//!
//! Actor arrays come first, then batch-norm running statistics
//! (`<layer>.mean`, `<layer>.var`), then critic arrays.

use std::collections::BTreeMap;

use super::{ActorParameters, CriticParameters, ModelConfig, ModelParameters, ParamStore};
use crate::autodiff::{Array, BatchNormStats};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MOTSPCKP";
const VERSION: u32 = 1;

fn meta_text(p: &ModelParameters) -> String {
    let c = p.actor.config();
    let channels: Vec<String> = p.critic.channels().iter().map(usize::to_string).collect();
    format!(
        "dx={}\nd_h={}\nlayers={}\nheads={}\nd_ff={}\nclip={}\nbn_momentum={}\nbn_eps={}\ncritic_channels={}\n",
        c.dx,
        c.d_h,
        c.layers,
        c.heads,
        c.d_ff,
        c.clip,
        c.bn_momentum,
        c.bn_eps,
        channels.join(",")
    )
}

pub fn encode(p: &ModelParameters) -> Vec<u8> {
    let mut entries: Vec<(String, Vec<usize>, &[f64])> = Vec::new();
    for (name, a) in p.actor.store().names().iter().zip(p.actor.store().arrays()) {
        entries.push((name.clone(), a.shape().to_vec(), a.data()));
    }
    for (name, s) in p.actor.bn_names().into_iter().zip(p.actor.bn_stats()) {
        entries.push((format!("{name}.mean"), vec![s.mean.len()], &s.mean));
        entries.push((format!("{name}.var"), vec![s.var.len()], &s.var));
    }
    for (name, a) in p.critic.store().names().iter().zip(p.critic.store().arrays()) {
        entries.push((name.clone(), a.shape().to_vec(), a.data()));
    }

    let meta = meta_text(p);
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, meta.len() as u32);
    out.extend_from_slice(meta.as_bytes());
    put_u32(&mut out, entries.len() as u32);
    for (name, shape, values) in entries {
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, shape.len() as u32);
        for d in shape {
            put_u32(&mut out, d as u32);
        }
        for &v in values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::contract("checkpoint truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::contract("checkpoint name is not UTF-8"))
    }
}

fn parse_meta(text: &str) -> Result<(ModelConfig, Vec<usize>)> {
    let map: BTreeMap<&str, &str> = text
        .lines()
        .filter_map(|l| l.split_once('='))
        .collect();
    let get = |k: &str| {
        map.get(k)
            .copied()
            .ok_or_else(|| Error::contract(format!("checkpoint metadata lacks {k}")))
    };
    let uint = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| Error::contract(format!("bad checkpoint metadata {k}")))
    };
    let real = |k: &str| -> Result<f64> {
        get(k)?
            .parse()
            .map_err(|_| Error::contract(format!("bad checkpoint metadata {k}")))
    };
    let config = ModelConfig {
        dx: uint("dx")?,
        d_h: uint("d_h")?,
        layers: uint("layers")?,
        heads: uint("heads")?,
        d_ff: uint("d_ff")?,
        clip: real("clip")?,
        bn_momentum: real("bn_momentum")?,
        bn_eps: real("bn_eps")?,
    };
    let channels = get("critic_channels")?
        .split(',')
        .map(|c| c.parse().map_err(|_| Error::contract("bad critic_channels")))
        .collect::<Result<Vec<usize>>>()?;
    Ok((config, channels))
}

pub fn decode(bytes: &[u8]) -> Result<ModelParameters> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::contract("not a checkpoint file (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::contract(format!("unsupported checkpoint version {version}")));
    }
    let meta_len = r.u32()? as usize;
    let meta = std::str::from_utf8(r.take(meta_len)?).map_err(|_| Error::contract("checkpoint metadata is not UTF-8"))?;
    let (config, channels) = parse_meta(meta)?;

    let count = r.u32()? as usize;
    let mut named: Vec<(String, Array)> = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
        named.push((name, Array::new(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::contract("trailing bytes after checkpoint entries"));
    }

    let mut actor_store = ParamStore::new();
    let mut critic_store = ParamStore::new();
    let mut bn_parts: BTreeMap<String, (Option<Vec<f64>>, Option<Vec<f64>>)> = BTreeMap::new();
    for (name, array) in named {
        if name.starts_with("critic.") {
            critic_store.push(name, array);
        } else if let Some(layer) = name.strip_suffix(".mean").filter(|l| l.contains(".bn")) {
            bn_parts.entry(layer.to_string()).or_default().0 = Some(array.into_data());
        } else if let Some(layer) = name.strip_suffix(".var").filter(|l| l.contains(".bn")) {
            bn_parts.entry(layer.to_string()).or_default().1 = Some(array.into_data());
        } else {
            actor_store.push(name, array);
        }
    }
    let names = (1..=config.layers).flat_map(|l| [format!("enc.l{l}.bn1"), format!("enc.l{l}.bn2")]);
    let bn = names
        .map(|name| match bn_parts.remove(&name) {
            Some((Some(mean), Some(var))) => Ok(BatchNormStats {
                mean,
                var,
                momentum: config.bn_momentum,
                eps: config.bn_eps,
            }),
            _ => Err(Error::contract(format!("checkpoint lacks statistics for {name}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let actor = ActorParameters::from_parts(config, actor_store, bn)?;
    let critic = CriticParameters::from_store(channels, critic_store)?;
    Ok(ModelParameters { actor, critic })
}
