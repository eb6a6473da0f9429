//! `NPSV1` checkpoint files.
//!
//! Layout: the magic line `NPSV1`, then `key=value` header lines describing
//! the architecture, an empty line, then every parameter as a little-endian
//! `f32` in the order of [`InrModel::params`](super::InrModel::params): grid
//! table (node-major, x fastest) followed by each layer's row-major weights
//! and bias.
//!
//! ```text
//! NPSV1
//! input_dim=2
//! output_dim=3
//! hidden=64,64,64
//! activation=sine:30
//! encoding=grid:128x128:2
//! params=49923
//!
//! <49923 × f32 LE>
//! ```

use std::fs;
use std::path::Path;

use super::{Activation, ArchSpec, Encoding, InrModel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &str = "NPSV1";

fn header(arch: &ArchSpec, params: usize) -> String {
    let hidden: Vec<String> = arch.hidden.iter().map(|w| w.to_string()).collect();
    let activation = match arch.activation {
        Activation::Sine { omega } => format!("sine:{omega}"),
        Activation::ReluPe { num_frequencies } => format!("relu_pe:{num_frequencies}"),
    };
    let encoding = match &arch.encoding {
        Encoding::None => "none".to_string(),
        Encoding::Grid {
            resolution,
            latent_dim,
        } => {
            let res: Vec<String> = resolution.iter().map(|r| r.to_string()).collect();
            format!("grid:{}:{latent_dim}", res.join("x"))
        }
    };
    format!(
        "{CHECKPOINT_MAGIC}\ninput_dim={}\noutput_dim={}\nhidden={}\nactivation={activation}\nencoding={encoding}\nparams={params}\n\n",
        arch.input_dim,
        arch.output_dim,
        hidden.join(",")
    )
}

fn bad(msg: impl Into<String>) -> Error {
    Error::format("checkpoint", msg)
}

fn parse_usize(s: &str) -> Result<usize> {
    s.parse().map_err(|_| bad(format!("expected an integer, got {s:?}")))
}

fn parse_arch(lines: &[&str]) -> Result<(ArchSpec, usize)> {
    let get = |key: &str| -> Result<String> {
        lines
            .iter()
            .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
            .map(str::to_string)
            .ok_or_else(|| bad(format!("missing header key {key}")))
    };
    let input_dim = parse_usize(&get("input_dim")?)?;
    let output_dim = parse_usize(&get("output_dim")?)?;
    let hidden_text = get("hidden")?;
    let hidden = if hidden_text.is_empty() {
        Vec::new()
    } else {
        hidden_text
            .split(',')
            .map(parse_usize)
            .collect::<Result<Vec<_>>>()?
    };
    let activation_text = get("activation")?;
    let activation = match activation_text.split_once(':') {
        Some(("sine", w)) => Activation::Sine {
            omega: w.parse().map_err(|_| bad("bad sine frequency"))?,
        },
        Some(("relu_pe", f)) => Activation::ReluPe {
            num_frequencies: parse_usize(f)?,
        },
        _ => return Err(bad(format!("unknown activation {activation_text:?}"))),
    };
    let encoding_text = get("encoding")?;
    let encoding = if encoding_text == "none" {
        Encoding::None
    } else {
        let mut parts = encoding_text.split(':');
        match (parts.next(), parts.next(), parts.next()) {
            (Some("grid"), Some(res), Some(latent)) => Encoding::Grid {
                resolution: res.split('x').map(parse_usize).collect::<Result<_>>()?,
                latent_dim: parse_usize(latent)?,
            },
            _ => return Err(bad(format!("unknown encoding {encoding_text:?}"))),
        }
    };
    let params = parse_usize(&get("params")?)?;
    Ok((
        ArchSpec {
            input_dim,
            output_dim,
            hidden,
            activation,
            encoding,
        },
        params,
    ))
}

impl<T: Scalar> InrModel<T> {
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = header(&self.arch, self.params.len()).into_bytes();
        out.reserve(self.params.len() * 4);
        for p in &self.params {
            out.extend_from_slice(&(p.f64() as f32).to_le_bytes());
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let end = bytes
            .windows(2)
            .position(|w| w == b"\n\n")
            .ok_or_else(|| bad("header is not terminated by an empty line"))?;
        let text = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not UTF-8"))?;
        let lines: Vec<&str> = text.lines().collect();
        if lines.first() != Some(&CHECKPOINT_MAGIC) {
            return Err(bad("missing NPSV1 magic"));
        }
        let (arch, count) = parse_arch(&lines[1..])?;
        let body = &bytes[end + 2..];
        if body.len() != count * 4 {
            return Err(bad(format!(
                "expected {} parameter bytes, found {}",
                count * 4,
                body.len()
            )));
        }
        let params = body
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        InrModel::from_params(arch, params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_checkpoint_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes)
    }
}
