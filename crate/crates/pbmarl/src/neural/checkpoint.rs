//! Policy checkpoints: a small versioned binary format holding every layer
//! shape and parameter, bit-exact on round trip.

use std::io::{Read, Write};

use ndarray::{Array1, Array2};

use super::dense::Dense;
use super::policy::QPolicy;
use super::NeuralError;

const MAGIC: &[u8; 6] = b"PBQNET";
const VERSION: u32 = 1;

fn write_u32(out: &mut impl Write, v: u32) -> std::io::Result<()> {
    out.write_all(&v.to_le_bytes())
}

fn write_dense(out: &mut impl Write, layer: &Dense) -> std::io::Result<()> {
    write_u32(out, layer.input_dim() as u32)?;
    write_u32(out, layer.output_dim() as u32)?;
    for &w in layer.weights.iter() {
        out.write_all(&w.to_bits().to_le_bytes())?;
    }
    for &b in layer.biases.iter() {
        out.write_all(&b.to_bits().to_le_bytes())?;
    }
    Ok(())
}

pub fn save_policy(policy: &QPolicy, out: &mut impl Write) -> Result<(), NeuralError> {
    out.write_all(MAGIC)?;
    write_u32(out, VERSION)?;
    write_u32(out, policy.state_width() as u32)?;
    write_u32(out, policy.projects() as u32)?;
    write_u32(out, policy.branches() as u32)?;
    write_u32(out, policy.trunk().len() as u32)?;
    for layer in policy.trunk() {
        write_dense(out, layer)?;
    }
    for head in policy.heads() {
        write_u32(out, head.len() as u32)?;
        for layer in head {
            write_dense(out, layer)?;
        }
    }
    Ok(())
}

fn read_u32(input: &mut impl Read) -> Result<u32, NeuralError> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64(input: &mut impl Read) -> Result<f64, NeuralError> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    Ok(f64::from_bits(u64::from_le_bytes(buf)))
}

fn read_dense(input: &mut impl Read) -> Result<Dense, NeuralError> {
    let rows = read_u32(input)? as usize;
    let cols = read_u32(input)? as usize;
    if rows == 0 || cols == 0 || rows.saturating_mul(cols) > 100_000_000 {
        return Err(NeuralError::BadCheckpoint(format!(
            "implausible layer shape {rows}x{cols}"
        )));
    }
    let mut weights = Array2::zeros((rows, cols));
    for w in weights.iter_mut() {
        *w = read_f64(input)?;
    }
    let mut biases = Array1::zeros(cols);
    for b in biases.iter_mut() {
        *b = read_f64(input)?;
    }
    Ok(Dense { weights, biases })
}

pub fn load_policy(input: &mut impl Read) -> Result<QPolicy, NeuralError> {
    let mut magic = [0u8; 6];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NeuralError::BadCheckpoint("bad magic".to_string()));
    }
    let version = read_u32(input)?;
    if version != VERSION {
        return Err(NeuralError::BadCheckpoint(format!(
            "unsupported version {version}"
        )));
    }
    let state_width = read_u32(input)? as usize;
    let projects = read_u32(input)? as usize;
    let branches = read_u32(input)? as usize;
    let trunk_len = read_u32(input)? as usize;
    let mut trunk = Vec::with_capacity(trunk_len);
    for _ in 0..trunk_len {
        trunk.push(read_dense(input)?);
    }
    let mut heads = Vec::with_capacity(branches);
    for _ in 0..branches {
        let head_len = read_u32(input)? as usize;
        let mut head = Vec::with_capacity(head_len);
        for _ in 0..head_len {
            head.push(read_dense(input)?);
        }
        if head.last().map(Dense::output_dim) != Some(projects) {
            return Err(NeuralError::BadCheckpoint(
                "head output width does not match project count".to_string(),
            ));
        }
        heads.push(head);
    }
    Ok(QPolicy::from_layers(state_width, projects, trunk, heads))
}
