//! Model checkpoint container.
//!
//! Layout: a UTF-8 text header of `key=value` lines opened by
//! `SLOTS-CHECKPOINT v1` and closed by an empty line, followed by one binary
//! record per parameter tensor:
//!
//! ```text
//! u32 name_len | name bytes | u32 ndim | u64 dim * ndim | f64 value * numel
//! ```
//!
//! All integers and doubles are little-endian; values are row-major.

use std::path::Path;

use super::{EncoderConfig, Param, SlotsModel};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const MAGIC: &str = "SLOTS-CHECKPOINT v1";

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub fn to_bytes(model: &SlotsModel) -> Vec<u8> {
    let cfg = model.config();
    let header = format!(
        "{MAGIC}\nin_channels={}\nnum_blocks={}\ndilations={}\nfeature_channels={}\nembed_dim={}\nnum_classes={}\ntensors={}\n\n",
        cfg.in_channels,
        cfg.num_blocks,
        join(&cfg.dilations),
        join(&cfg.feature_channels),
        cfg.embed_dim,
        model.num_classes(),
        model.parameters().len(),
    );
    let mut out = header.into_bytes();
    for p in model.parameters() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.ndim() as u32).to_le_bytes());
        for d in p.value.shape() {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len());
        let Some(end) = end else {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(|x| x.trim().parse().map_err(|_| Error::Checkpoint(format!("bad {key} value {v:?}"))))
        .collect()
}

pub fn from_bytes(bytes: &[u8]) -> Result<SlotsModel> {
    let header_end = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| Error::Checkpoint("missing header terminator".into()))?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
    let mut lines = header.lines();
    if lines.next() != Some(MAGIC) {
        return Err(Error::Checkpoint("not a slots checkpoint".into()));
    }
    let mut cfg = EncoderConfig::new(0);
    let (mut num_classes, mut tensors) = (None, None);
    for line in lines {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("bad header line {line:?}")))?;
        let scalar = || v.parse::<usize>().map_err(|_| Error::Checkpoint(format!("bad {k} value {v:?}")));
        match k {
            "in_channels" => cfg.in_channels = scalar()?,
            "num_blocks" => cfg.num_blocks = scalar()?,
            "dilations" => cfg.dilations = parse_list(k, v)?,
            "feature_channels" => cfg.feature_channels = parse_list(k, v)?,
            "embed_dim" => cfg.embed_dim = scalar()?,
            "num_classes" => num_classes = Some(scalar()?),
            "tensors" => tensors = Some(scalar()?),
            _ => return Err(Error::Checkpoint(format!("unknown header key {k:?}"))),
        }
    }
    let num_classes = num_classes.ok_or_else(|| Error::Checkpoint("missing num_classes".into()))?;
    let tensors = tensors.ok_or_else(|| Error::Checkpoint("missing tensors".into()))?;
    let mut model = SlotsModel::zeros(cfg, num_classes)?;

    let mut r = Reader { buf: bytes, pos: header_end + 2 };
    let mut params = Vec::with_capacity(tensors);
    for _ in 0..tensors {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = r.take(numel.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        params.push(Param { name, value: Tensor::new(shape, data)? });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    model.load_parameters(params)?;
    Ok(model)
}

pub fn write_checkpoint(model: &SlotsModel, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<SlotsModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
