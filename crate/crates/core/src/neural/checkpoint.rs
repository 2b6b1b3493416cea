//! Binary weight files.
//!
//! Layout: the 8-byte magic `PSRLNET1`, a little-endian `u32` header length,
//! a JSON header listing `layer_sizes` and every tensor's name and shape,
//! then the tensors' `f32` values in header order, little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NetworkParams, NeuralError};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PSRLNET1";

#[derive(Serialize, Deserialize)]
struct Header {
    layer_sizes: Vec<usize>,
    dtype: String,
    tensors: Vec<TensorInfo>,
}

#[derive(Serialize, Deserialize, PartialEq, Debug)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
}

fn tensor_layout(layer_sizes: &[usize]) -> Vec<TensorInfo> {
    let info = |name: String, shape: Vec<usize>| TensorInfo { name, shape };
    let hidden = layer_sizes.len() - 2;
    let mut out = Vec::new();
    for l in 0..hidden {
        let (i, o) = (layer_sizes[l], layer_sizes[l + 1]);
        out.push(info(format!("hidden{l}.weight"), vec![i, o]));
        out.push(info(format!("hidden{l}.bias"), vec![o]));
        out.push(info(format!("hidden{l}.bn_gamma"), vec![o]));
        out.push(info(format!("hidden{l}.bn_beta"), vec![o]));
        out.push(info(format!("hidden{l}.bn_running_mean"), vec![o]));
        out.push(info(format!("hidden{l}.bn_running_var"), vec![o]));
    }
    let (i, o) = (layer_sizes[hidden], layer_sizes[hidden + 1]);
    out.push(info("output.weight".into(), vec![i, o]));
    out.push(info("output.bias".into(), vec![o]));
    out
}

fn tensors(params: &NetworkParams<f32>) -> Vec<&[f32]> {
    let mut out: Vec<&[f32]> = Vec::new();
    for (d, n) in params.dense.iter().zip(&params.norms) {
        out.extend([
            &d.weight[..],
            &d.bias[..],
            &n.gamma[..],
            &n.beta[..],
            &n.running_mean[..],
            &n.running_var[..],
        ]);
    }
    let last = params.dense.last().expect("output layer");
    out.extend([&last.weight[..], &last.bias[..]]);
    out
}

fn tensors_mut(params: &mut NetworkParams<f32>) -> Vec<&mut Vec<f32>> {
    let hidden = params.norms.len();
    let (hidden_dense, last) = params.dense.split_at_mut(hidden);
    let mut out = Vec::new();
    for (d, n) in hidden_dense.iter_mut().zip(params.norms.iter_mut()) {
        out.push(&mut d.weight);
        out.push(&mut d.bias);
        out.push(&mut n.gamma);
        out.push(&mut n.beta);
        out.push(&mut n.running_mean);
        out.push(&mut n.running_var);
    }
    out.push(&mut last[0].weight);
    out.push(&mut last[0].bias);
    out
}

/// Writes `params` to `path` through a temporary file and a rename.
pub fn save_params(params: &NetworkParams<f32>, path: &Path) -> Result<(), NeuralError> {
    let header = Header {
        layer_sizes: params.layer_sizes().to_vec(),
        dtype: "f32".into(),
        tensors: tensor_layout(params.layer_sizes()),
    };
    let header = serde_json::to_vec(&header).map_err(|e| NeuralError::Format(e.to_string()))?;
    let mut bytes = Vec::new();
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header);
    for t in tensors(params) {
        for v in t {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a checkpoint, taking the architecture from its header.
pub fn load_params(path: &Path) -> Result<NetworkParams<f32>, NeuralError> {
    let bytes = fs::read(path)?;
    decode(&bytes, None)
}

/// Reads a checkpoint and rejects it unless its architecture is `layer_sizes`.
pub fn load_params_expecting(
    path: &Path,
    layer_sizes: &[usize],
) -> Result<NetworkParams<f32>, NeuralError> {
    let bytes = fs::read(path)?;
    decode(&bytes, Some(layer_sizes))
}

fn decode(bytes: &[u8], expected: Option<&[usize]>) -> Result<NetworkParams<f32>, NeuralError> {
    let format = |m: &str| NeuralError::Format(m.to_string());
    if bytes.len() < 12 {
        return Err(format("file shorter than the fixed preamble"));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(format("bad magic"));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = &bytes[12..];
    if body.len() < header_len {
        return Err(format("truncated header"));
    }
    let header: Header = serde_json::from_slice(&body[..header_len])
        .map_err(|e| NeuralError::Format(format!("header: {e}")))?;
    if header.dtype != "f32" {
        return Err(NeuralError::Format(format!("unsupported dtype {}", header.dtype)));
    }
    if header.layer_sizes.len() < 2 || header.layer_sizes.contains(&0) {
        return Err(format("layer_sizes needs at least two positive widths"));
    }

    let reference = expected.unwrap_or(&header.layer_sizes);
    let layout = tensor_layout(reference);
    if header.tensors.len() != layout.len() {
        return Err(NeuralError::Format(format!(
            "expected {} tensors for layer sizes {reference:?}, found {}",
            layout.len(),
            header.tensors.len()
        )));
    }
    for (want, got) in layout.iter().zip(&header.tensors) {
        if want.name != got.name || want.shape != got.shape {
            return Err(NeuralError::TensorShape {
                tensor: want.name.clone(),
                expected: want.shape.clone(),
                found: got.shape.clone(),
            });
        }
    }

    let data = &body[header_len..];
    let total: usize = layout.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if data.len() != total * 4 {
        return Err(NeuralError::Format(format!(
            "expected {} data bytes, found {}",
            total * 4,
            data.len()
        )));
    }
    let mut params = NetworkParams::<f32>::zeros(reference);
    let mut values = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
    for t in tensors_mut(&mut params) {
        for v in t.iter_mut() {
            *v = values.next().expect("length checked");
        }
    }
    Ok(params)
}
