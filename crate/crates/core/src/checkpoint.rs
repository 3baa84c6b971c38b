//! Model checkpoints.
//!
//! Layout, integers little-endian:
//!
//! ```text
//! "A2CK" | version: u32 | header_len: u32 | header: key = value text
//!        | count: u32 | count × (name_len: u32 | name | len: u64 | A2SI tensor)
//! ```

use std::path::Path;

use crate::agents::{QueryPool, Stage};
use crate::attention::AttentionWeights;
use crate::error::{Error, Result};
use crate::kv;
use crate::model::{Model, Variant};
use crate::numerics::io::{decode_tensor, encode_tensor};
use crate::numerics::{Activation, ConvStackWeights, Tensor};

pub const MAGIC: &[u8; 4] = b"A2CK";
pub const VERSION: u32 = 1;
const MAX_HEADER: usize = 1 << 16;
const MAX_TENSORS: usize = 4096;
const MAX_NAME: usize = 128;
/// Upper bound on any width read from a header, to keep allocations sane.
const MAX_WIDTH: usize = 4096;

/// A trained model plus where training stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub epoch: usize,
    pub seed: u64,
}

fn tensors(model: &Model) -> Vec<(String, Tensor)> {
    let mut out = vec![
        ("queries".to_string(), model.pool.queries.clone()),
        (
            "scores".to_string(),
            Tensor::vector(model.pool.scores.clone()).expect("non-empty pool"),
        ),
        ("point_lift".to_string(), model.point_lift.clone()),
    ];
    for (l, layer) in model.attention.layers.iter().enumerate() {
        for (n, t) in [("wq", &layer.wq), ("wi", &layer.wi), ("wp", &layer.wp), ("wf", &layer.wf)] {
            out.push((format!("ias.{l}.{n}"), t.clone()));
        }
    }
    let rai = &model.attention.rai;
    for (n, t) in [("wq", &rai.wq), ("wi", &rai.wi), ("wp", &rai.wp)] {
        out.push((format!("rai.{n}"), t.clone()));
    }
    for (l, layer) in model.adaptor.layers.iter().enumerate() {
        let w = Tensor::new(vec![layer.cout, layer.cin, 3, 3], layer.weight.clone())
            .expect("conv weight shape");
        let b = Tensor::vector(layer.bias.clone()).expect("conv bias");
        out.push((format!("adaptor.{l}.weight"), w));
        out.push((format!("adaptor.{l}.bias"), b));
    }
    out
}

fn header(ck: &Checkpoint) -> Vec<(String, String)> {
    let m = &ck.model;
    let v = m.variant;
    [
        ("phase", v.phase.to_string()),
        ("rai", v.rai.to_string()),
        ("tri", v.tri.to_string()),
        ("topk", v.topk.to_string()),
        ("k", m.pool.k.to_string()),
        ("pool", m.pool.size().to_string()),
        ("channels", m.channels().to_string()),
        ("n_layers", m.attention.n_layers().to_string()),
        ("adaptor_hidden", m.adaptor.layers[0].cout.to_string()),
        ("pos_encoding", m.pos_encoding.to_string()),
        ("stage", m.pool.stage.as_str().to_string()),
        ("epoch", ck.epoch.to_string()),
        ("seed", ck.seed.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

pub fn encode(ck: &Checkpoint) -> Result<Vec<u8>> {
    ck.model.validate()?;
    let head = kv::render(&header(ck)).into_bytes();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(head.len() as u32).to_le_bytes());
    out.extend_from_slice(&head);
    let ts = tensors(&ck.model);
    out.extend_from_slice(&(ts.len() as u32).to_le_bytes());
    for (name, t) in ts {
        let bytes = encode_tensor(&t);
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&bytes);
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

struct Header {
    variant: Variant,
    k: usize,
    pool: usize,
    channels: usize,
    n_layers: usize,
    adaptor_hidden: usize,
    pos_encoding: bool,
    stage: Stage,
    epoch: usize,
    seed: u64,
}

fn parse_header(text: &str) -> Result<Header> {
    let entries = kv::parse(text)?;
    let get = |key: &str| -> Result<&str> {
        entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Format(format!("checkpoint header lacks {key}")))
    };
    let flag = |key: &str| -> Result<bool> {
        <bool as kv::KvValue>::parse_value(get(key)?).map_err(Error::Format)
    };
    let width = |key: &str| -> Result<usize> {
        let v = <usize as kv::KvValue>::parse_value(get(key)?).map_err(Error::Format)?;
        if v == 0 || v > MAX_WIDTH {
            return Err(Error::Format(format!("{key} = {v} out of range")));
        }
        Ok(v)
    };
    let known = [
        "phase",
        "rai",
        "tri",
        "topk",
        "k",
        "pool",
        "channels",
        "n_layers",
        "adaptor_hidden",
        "pos_encoding",
        "stage",
        "epoch",
        "seed",
    ];
    if let Some((k, _)) = entries.iter().find(|(k, _)| !known.contains(&k.as_str())) {
        return Err(Error::Format(format!("unknown checkpoint header key {k}")));
    }
    Ok(Header {
        variant: Variant {
            phase: flag("phase")?,
            rai: flag("rai")?,
            tri: flag("tri")?,
            topk: flag("topk")?,
        },
        k: width("k")?,
        pool: width("pool")?,
        channels: width("channels")?,
        n_layers: width("n_layers")?,
        adaptor_hidden: width("adaptor_hidden")?,
        pos_encoding: flag("pos_encoding")?,
        stage: Stage::parse(get("stage")?)?,
        epoch: <usize as kv::KvValue>::parse_value(get("epoch")?).map_err(Error::Format)?,
        seed: <u64 as kv::KvValue>::parse_value(get("seed")?).map_err(Error::Format)?,
    })
}

fn place(model: &mut Model, name: &str, t: Tensor) -> Result<()> {
    let shape_err = |want: &[usize]| {
        Error::Format(format!(
            "tensor {name} has shape {:?}, expected {want:?}",
            t.dims()
        ))
    };
    let put = |slot: &mut Tensor| -> Result<()> {
        if slot.dims() != t.dims() {
            return Err(shape_err(slot.dims()));
        }
        *slot = t.clone();
        Ok(())
    };
    let parts: Vec<&str> = name.split('.').collect();
    match parts.as_slice() {
        ["queries"] => put(&mut model.pool.queries),
        ["point_lift"] => put(&mut model.point_lift),
        ["scores"] => {
            if t.dims() != [model.pool.size()] {
                return Err(shape_err(&[model.pool.size()]));
            }
            model.pool.scores = t.data().to_vec();
            Ok(())
        }
        ["ias", l, w] => {
            let layer = l
                .parse::<usize>()
                .ok()
                .and_then(|l| model.attention.layers.get_mut(l))
                .ok_or_else(|| Error::Format(format!("no attention layer for {name}")))?;
            match *w {
                "wq" => put(&mut layer.wq),
                "wi" => put(&mut layer.wi),
                "wp" => put(&mut layer.wp),
                "wf" => put(&mut layer.wf),
                _ => Err(Error::Format(format!("unknown tensor {name}"))),
            }
        }
        ["rai", w] => match *w {
            "wq" => put(&mut model.attention.rai.wq),
            "wi" => put(&mut model.attention.rai.wi),
            "wp" => put(&mut model.attention.rai.wp),
            _ => Err(Error::Format(format!("unknown tensor {name}"))),
        },
        ["adaptor", l, w] => {
            let layer = l
                .parse::<usize>()
                .ok()
                .and_then(|l| model.adaptor.layers.get_mut(l))
                .ok_or_else(|| Error::Format(format!("no adaptor layer for {name}")))?;
            match *w {
                "weight" => {
                    let want = [layer.cout, layer.cin, 3, 3];
                    if t.dims() != want {
                        return Err(shape_err(&want));
                    }
                    layer.weight = t.data().to_vec();
                    Ok(())
                }
                "bias" => {
                    if t.dims() != [layer.cout] {
                        return Err(shape_err(&[layer.cout]));
                    }
                    layer.bias = t.data().to_vec();
                    Ok(())
                }
                _ => Err(Error::Format(format!("unknown tensor {name}"))),
            }
        }
        _ => Err(Error::Format(format!("unknown tensor {name}"))),
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Format("not a checkpoint".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let hlen = c.u32()? as usize;
    if hlen > MAX_HEADER {
        return Err(Error::Format("checkpoint header too long".into()));
    }
    let text = std::str::from_utf8(c.take(hlen)?)
        .map_err(|_| Error::Format("checkpoint header is not UTF-8".into()))?;
    let h = parse_header(text)?;
    if h.k > h.pool {
        return Err(Error::Format(format!("k={} exceeds pool {}", h.k, h.pool)));
    }
    let c_dim = h.channels;
    if h.n_layers.saturating_mul(c_dim).saturating_mul(c_dim) > bytes.len()
        || h.pool.saturating_mul(c_dim) > bytes.len()
        || h.adaptor_hidden.saturating_mul(c_dim.max(h.adaptor_hidden)) > bytes.len()
    {
        return Err(Error::Format("checkpoint header sizes exceed the file".into()));
    }
    let mut model = Model {
        variant: h.variant,
        pool: QueryPool {
            queries: Tensor::zeros(&[h.pool, c_dim]),
            scores: vec![0.0; h.pool],
            k: h.k,
            stage: h.stage,
        },
        attention: AttentionWeights::zeros(c_dim, h.n_layers),
        adaptor: ConvStackWeights::zeros(3, h.adaptor_hidden, c_dim, Activation::LeakyRelu),
        point_lift: Tensor::zeros(&[3, c_dim]),
        pos_encoding: h.pos_encoding,
    };
    let expected = tensors(&model).len();
    let count = c.u32()? as usize;
    if count != expected || count > MAX_TENSORS {
        return Err(Error::Format(format!(
            "checkpoint holds {count} tensors, expected {expected}"
        )));
    }
    let mut seen = std::collections::HashSet::new();
    for _ in 0..count {
        let nlen = c.u32()? as usize;
        if nlen == 0 || nlen > MAX_NAME {
            return Err(Error::Format("bad tensor name length".into()));
        }
        let name = std::str::from_utf8(c.take(nlen)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let len = usize::try_from(c.u64()?)
            .map_err(|_| Error::Format("tensor length overflows".into()))?;
        let t = decode_tensor(c.take(len)?)?;
        if !seen.insert(name.clone()) {
            return Err(Error::Format(format!("tensor {name} repeated")));
        }
        place(&mut model, &name, t)?;
    }
    if c.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    let all_finite = model.attention.flatten().iter().all(|v| v.is_finite())
        && model.adaptor.flatten().iter().all(|v| v.is_finite())
        && model.pool.queries.all_finite()
        && model.point_lift.all_finite()
        && model.pool.scores.iter().all(|v| v.is_finite());
    if !all_finite {
        return Err(Error::Format("checkpoint holds non-finite parameters".into()));
    }
    model.validate().map_err(|e| Error::Format(e.to_string()))?;
    Ok(Checkpoint {
        model,
        epoch: h.epoch,
        seed: h.seed,
    })
}

pub fn write(path: &Path, ck: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode(ck)?).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDims;
    use crate::numerics::Rng;

    fn sample() -> Checkpoint {
        let dims = ModelDims {
            channels: 4,
            m: 6,
            k: 2,
            n_layers: 2,
            adaptor_hidden: 3,
            init_gain: 0.5,
            adaptor_gain: 0.5,
            pos_encoding: false,
        };
        let mut model = Model::init(&dims, Variant::M8, &mut Rng::new(2)).unwrap();
        model.pool.scores = vec![0.1, -0.3, 2.0, 0.0, 1e-300, -7.5];
        model.pool.stage = Stage::Final;
        Checkpoint {
            model,
            epoch: 50,
            seed: u64::MAX,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let bytes = encode(&ck).unwrap();
        let back = decode(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn rejects_truncation_and_tampering() {
        let bytes = encode(&sample()).unwrap();
        for cut in [0, 3, 11, 40, bytes.len() - 1] {
            assert!(matches!(decode(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
    }
}
