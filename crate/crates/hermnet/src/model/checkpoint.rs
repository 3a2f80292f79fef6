//! Self-describing checkpoint archive.
//!
//! Layout, all integers little-endian: a length-prefixed header string
//! (`HERMNET-CKPT-1`), a length-prefixed config block (key=value lines),
//! a u32 tensor count, then per tensor a length-prefixed UTF-8 name, u32
//! rank, u64 extents, and the f64 buffer.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::fmt_f64 as fmt17;
use crate::model::params::{init_params, Fault, ModelConfig, ModelParams, Variant};
use crate::tensor::Tensor;

pub const CHECKPOINT_HEADER: &str = "HERMNET-CKPT-1";

fn write_string(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_string(r: &mut impl Read) -> Result<String> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut buf = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Checkpoint("name is not valid UTF-8".into()))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn config_block(config: &ModelConfig) -> String {
    let elements: Vec<String> = config.element_set.iter().map(u32::to_string).collect();
    format!(
        "variant={}\nhidden={}\nlayers={}\nn_rbf={}\nr_cut={}\nelements={}\n",
        config.variant.as_str(),
        config.hidden,
        config.layers,
        config.n_rbf,
        fmt17(config.r_cut),
        elements.join(",")
    )
}

fn parse_config_block(text: &str) -> Result<ModelConfig> {
    let mut variant = None;
    let mut hidden = None;
    let mut layers = None;
    let mut n_rbf = None;
    let mut r_cut = None;
    let mut elements = None;
    for line in text.lines() {
        let Some((key, value)) = line.split_once('=') else {
            continue;
        };
        match key {
            "variant" => {
                variant = Some(Variant::parse(value).ok_or_else(|| {
                    Error::Checkpoint(format!("unknown variant '{value}'"))
                })?)
            }
            "hidden" => hidden = value.parse().ok(),
            "layers" => layers = value.parse().ok(),
            "n_rbf" => n_rbf = value.parse().ok(),
            "r_cut" => r_cut = value.parse().ok(),
            "elements" => {
                elements = Some(
                    value
                        .split(',')
                        .map(|t| {
                            t.parse::<u32>().map_err(|_| {
                                Error::Checkpoint(format!("bad element '{t}'"))
                            })
                        })
                        .collect::<Result<Vec<u32>>>()?,
                )
            }
            _ => {}
        }
    }
    let missing = |f: &str| Error::Checkpoint(format!("config block missing '{f}'"));
    let config = ModelConfig {
        variant: variant.ok_or_else(|| missing("variant"))?,
        hidden: hidden.ok_or_else(|| missing("hidden"))?,
        layers: layers.ok_or_else(|| missing("layers"))?,
        n_rbf: n_rbf.ok_or_else(|| missing("n_rbf"))?,
        r_cut: r_cut.ok_or_else(|| missing("r_cut"))?,
        element_set: elements.ok_or_else(|| missing("elements"))?,
        fault: Fault::None,
    };
    config.validate()?;
    Ok(config)
}

/// Write config and every named parameter tensor to `path`.
pub fn save_checkpoint(
    path: &Path,
    config: &ModelConfig,
    params: &ModelParams<Tensor>,
) -> Result<()> {
    let named = params.named();
    let mut w = BufWriter::new(File::create(path)?);
    write_string(&mut w, CHECKPOINT_HEADER)?;
    write_string(&mut w, &config_block(config))?;
    w.write_all(&(named.len() as u32).to_le_bytes())?;
    for (name, tensor) in named {
        write_string(&mut w, &name)?;
        w.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
        for &dim in tensor.shape() {
            w.write_all(&(dim as u64).to_le_bytes())?;
        }
        for &x in tensor.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a checkpoint back; the archive is validated against the parameter
/// structure its config describes (same names, same shapes).
pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ModelParams<Tensor>)> {
    let mut r = BufReader::new(File::open(path)?);
    let header = read_string(&mut r)?;
    if header != CHECKPOINT_HEADER {
        return Err(Error::Checkpoint(format!(
            "bad header '{header}', expected '{CHECKPOINT_HEADER}'"
        )));
    }
    let config = parse_config_block(&read_string(&mut r)?)?;

    let count = read_u32(&mut r)? as usize;
    let mut loaded: std::collections::BTreeMap<String, Tensor> = std::collections::BTreeMap::new();
    for _ in 0..count {
        let name = read_string(&mut r)?;
        let ndim = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = vec![0.0; numel];
        for x in &mut data {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            *x = f64::from_le_bytes(b);
        }
        loaded.insert(name, Tensor::new(shape, data));
    }

    let mut params = init_params(&config, 0);
    let mut err = None;
    params.visit_mut(|name, slot| {
        if err.is_some() {
            return;
        }
        match loaded.remove(&name) {
            Some(t) if t.shape() == slot.shape() => *slot = t,
            Some(t) => {
                err = Some(Error::Checkpoint(format!(
                    "tensor '{name}' has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )))
            }
            None => err = Some(Error::Checkpoint(format!("missing tensor '{name}'"))),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    if let Some(extra) = loaded.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor '{extra}'")));
    }
    Ok((config, params))
}
