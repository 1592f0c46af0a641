//! Sectioned binary checkpoint container.
//!
//! All integers and floats are little-endian. A checkpoint file is a
//! sequence of sections; each file type fixes its section order.
//!
//! Network section:
//! ```text
//! magic       4 bytes  "HABI"
//! version     u32      currently 1
//! name_len    u32
//! name        name_len bytes, UTF-8 module name
//! hidden_act  u8       0 = ReLU, 1 = Identity, 2 = Tanh
//! output_act  u8
//! layer_count u32
//! per layer:
//!   out       u32
//!   in        u32
//!   weights   out*in f32, row-major
//!   bias      out f32
//! ```
//!
//! Noise-schedule section: magic "SCHD", steps u32, then steps f64 betas.
//! KL-controller section: magic "CTRL", then log_beta, target_kl, lr_beta,
//! log_beta_min, log_beta_max, smoothed_kl (f64 each; smoothed_kl is NaN
//! when no batch has been observed yet).
//!
//! Round-tripping a file is bit-exact: parameters are stored as f32 and
//! widened to f64 on load, so a load/save cycle reproduces the same bytes.

use std::io::{Read, Write};

use ndarray::{Array1, Array2};

use crate::error::{HabiError, Result};
use crate::nn::{Activation, Layer, MlpParams};

pub const NET_MAGIC: &[u8; 4] = b"HABI";
pub const SCHEDULE_MAGIC: &[u8; 4] = b"SCHD";
pub const CONTROLLER_MAGIC: &[u8; 4] = b"CTRL";
pub const META_MAGIC: &[u8; 4] = b"META";
pub const FORMAT_VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> HabiError {
    HabiError::Checkpoint(msg.into())
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f32(w: &mut impl Write, v: f32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| bad(format!("truncated checkpoint: {e}")))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32(r: &mut impl Read) -> Result<f32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(f32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_magic(r: &mut impl Read, expected: &[u8; 4]) -> Result<()> {
    let mut m = [0u8; 4];
    read_exact(r, &mut m)?;
    if &m != expected {
        return Err(bad(format!(
            "bad section magic: expected {:?}, found {:?}",
            String::from_utf8_lossy(expected),
            String::from_utf8_lossy(&m)
        )));
    }
    Ok(())
}

pub fn write_net(w: &mut impl Write, name: &str, net: &MlpParams) -> Result<()> {
    w.write_all(NET_MAGIC)?;
    write_u32(w, FORMAT_VERSION)?;
    write_u32(w, name.len() as u32)?;
    w.write_all(name.as_bytes())?;
    w.write_all(&[net.hidden_activation.tag(), net.output_activation.tag()])?;
    write_u32(w, net.layers.len() as u32)?;
    for layer in &net.layers {
        write_u32(w, layer.w.nrows() as u32)?;
        write_u32(w, layer.w.ncols() as u32)?;
        for &v in layer.w.iter() {
            write_f32(w, v as f32)?;
        }
        for &v in layer.b.iter() {
            write_f32(w, v as f32)?;
        }
    }
    Ok(())
}

pub fn read_net(r: &mut impl Read) -> Result<(String, MlpParams)> {
    read_magic(r, NET_MAGIC)?;
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let name_len = read_u32(r)? as usize;
    if name_len > 1024 {
        return Err(bad(format!("implausible module name length {name_len}")));
    }
    let mut name = vec![0u8; name_len];
    read_exact(r, &mut name)?;
    let name = String::from_utf8(name).map_err(|_| bad("module name is not UTF-8"))?;
    let mut acts = [0u8; 2];
    read_exact(r, &mut acts)?;
    let hidden = Activation::from_tag(acts[0]).ok_or_else(|| bad("unknown hidden activation"))?;
    let output = Activation::from_tag(acts[1]).ok_or_else(|| bad("unknown output activation"))?;
    let layer_count = read_u32(r)? as usize;
    if layer_count == 0 || layer_count > 64 {
        return Err(bad(format!("implausible layer count {layer_count}")));
    }
    let mut layers = Vec::with_capacity(layer_count);
    let mut prev_out: Option<usize> = None;
    for _ in 0..layer_count {
        let out = read_u32(r)? as usize;
        let inp = read_u32(r)? as usize;
        if out == 0 || inp == 0 || out > 1 << 20 || inp > 1 << 20 {
            return Err(bad("implausible layer dimensions"));
        }
        if let Some(p) = prev_out {
            if p != inp {
                return Err(bad(format!("layer dimensions do not chain: {p} -> {inp}")));
            }
        }
        prev_out = Some(out);
        let mut w = Array2::zeros((out, inp));
        for v in w.iter_mut() {
            *v = read_f32(r)? as f64;
        }
        let mut b = Array1::zeros(out);
        for v in b.iter_mut() {
            *v = read_f32(r)? as f64;
        }
        layers.push(Layer { w, b });
    }
    let net = MlpParams { layers, hidden_activation: hidden, output_activation: output };
    if !net.is_finite() {
        return Err(bad(format!("non-finite parameters in section '{name}'")));
    }
    Ok((name, net))
}

/// Reads a net section and checks its recorded module name.
pub fn read_named_net(r: &mut impl Read, expected: &str) -> Result<MlpParams> {
    let (name, net) = read_net(r)?;
    if name != expected {
        return Err(bad(format!("expected section '{expected}', found '{name}'")));
    }
    Ok(net)
}

pub fn write_schedule(w: &mut impl Write, betas: &[f64]) -> Result<()> {
    w.write_all(SCHEDULE_MAGIC)?;
    write_u32(w, betas.len() as u32)?;
    for &b in betas {
        write_f64(w, b)?;
    }
    Ok(())
}

pub fn read_schedule(r: &mut impl Read) -> Result<Vec<f64>> {
    read_magic(r, SCHEDULE_MAGIC)?;
    let steps = read_u32(r)? as usize;
    if steps == 0 || steps > 1 << 20 {
        return Err(bad(format!("implausible schedule length {steps}")));
    }
    (0..steps).map(|_| read_f64(r)).collect()
}

/// Small numeric metadata section: magic "META", count u32, then f64s.
pub fn write_meta(w: &mut impl Write, fields: &[f64]) -> Result<()> {
    w.write_all(META_MAGIC)?;
    write_u32(w, fields.len() as u32)?;
    for &v in fields {
        write_f64(w, v)?;
    }
    Ok(())
}

pub fn read_meta(r: &mut impl Read, expected_len: usize) -> Result<Vec<f64>> {
    read_magic(r, META_MAGIC)?;
    let n = read_u32(r)? as usize;
    if n != expected_len {
        return Err(bad(format!("meta section length {n}, expected {expected_len}")));
    }
    (0..n).map(|_| read_f64(r)).collect()
}

pub fn write_controller(w: &mut impl Write, fields: &[f64; 6]) -> Result<()> {
    w.write_all(CONTROLLER_MAGIC)?;
    for &v in fields {
        write_f64(w, v)?;
    }
    Ok(())
}

pub fn read_controller(r: &mut impl Read) -> Result<[f64; 6]> {
    read_magic(r, CONTROLLER_MAGIC)?;
    let mut out = [0.0; 6];
    for v in out.iter_mut() {
        *v = read_f64(r)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn net_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = MlpParams::new(&[5, 16, 3], Activation::Tanh, &mut rng);
        let mut bytes = Vec::new();
        write_net(&mut bytes, "decoder", &net).unwrap();
        let (name, loaded) = read_net(&mut bytes.as_slice()).unwrap();
        assert_eq!(name, "decoder");
        let mut bytes2 = Vec::new();
        write_net(&mut bytes2, "decoder", &loaded).unwrap();
        assert_eq!(bytes, bytes2);
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let mut bytes = Vec::new();
        write_net(&mut bytes, "x", &MlpParams::zeros(&[2, 2], Activation::Identity)).unwrap();
        bytes[0] = b'X';
        assert!(matches!(read_net(&mut bytes.as_slice()), Err(HabiError::Checkpoint(_))));
    }

    #[test]
    fn truncated_section_is_rejected() {
        let mut bytes = Vec::new();
        write_net(&mut bytes, "x", &MlpParams::zeros(&[2, 2], Activation::Identity)).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(read_net(&mut bytes.as_slice()), Err(HabiError::Checkpoint(_))));
    }

    #[test]
    fn schedule_round_trip() {
        let betas = vec![1e-4, 0.05, 0.2];
        let mut bytes = Vec::new();
        write_schedule(&mut bytes, &betas).unwrap();
        assert_eq!(read_schedule(&mut bytes.as_slice()).unwrap(), betas);
    }
}
