//! Flow checkpoints: a UTF-8 JSON manifest (dimensions, variant, net widths,
//! serialization version, tensor table) followed by flat little-endian `f64`
//! arrays ordered by block index then net name. The encoding is byte-stable
//! given the same parameters.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::numerics::ParamId;
use crate::{Error, Result};

use super::{ConvNet, DenseNet, FlowModel, FlowSpec};

const MAGIC: &[u8; 4] = b"FCKP";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    spec: FlowSpec,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    /// Offset into the blob, in f64 elements.
    offset: u64,
    len: u64,
}

enum TensorLoc {
    Param(ParamId),
    BnMean { block: usize, net: usize, bn: usize },
    BnVar { block: usize, net: usize, bn: usize },
}

fn conv_net_entries(prefix: &str, block: usize, net_idx: usize, net: &ConvNet) -> Vec<(String, TensorLoc)> {
    let mut out = Vec::new();
    for (li, (conv, bn)) in [(&net.conv0, &net.bn0), (&net.conv1, &net.bn1)].iter().enumerate() {
        out.push((format!("{prefix}.conv{li}.weight"), TensorLoc::Param(conv.w)));
        out.push((format!("{prefix}.conv{li}.bias"), TensorLoc::Param(conv.b)));
        out.push((format!("{prefix}.bn{li}.gamma"), TensorLoc::Param(bn.gamma)));
        out.push((format!("{prefix}.bn{li}.beta"), TensorLoc::Param(bn.beta)));
        out.push((
            format!("{prefix}.bn{li}.running_mean"),
            TensorLoc::BnMean { block, net: net_idx, bn: li },
        ));
        out.push((
            format!("{prefix}.bn{li}.running_var"),
            TensorLoc::BnVar { block, net: net_idx, bn: li },
        ));
    }
    out.push((format!("{prefix}.head.weight"), TensorLoc::Param(net.head.w)));
    out.push((format!("{prefix}.head.bias"), TensorLoc::Param(net.head.b)));
    out
}

fn dense_net_entries(prefix: &str, net: &DenseNet) -> Vec<(String, TensorLoc)> {
    vec![
        (format!("{prefix}.l0.weight"), TensorLoc::Param(net.l0.w)),
        (format!("{prefix}.l0.bias"), TensorLoc::Param(net.l0.b)),
        (format!("{prefix}.l1.weight"), TensorLoc::Param(net.l1.w)),
        (format!("{prefix}.l1.bias"), TensorLoc::Param(net.l1.b)),
    ]
}

/// Canonical tensor enumeration: block index, then net name, then layer.
fn tensor_table(model: &FlowModel) -> Vec<(String, TensorLoc)> {
    let mut out = Vec::new();
    for (bi, block) in model.blocks.iter().enumerate() {
        let p = format!("block{bi:02}");
        out.extend(conv_net_entries(&format!("{p}.scale"), bi, 0, &block.scale));
        out.extend(conv_net_entries(&format!("{p}.translate"), bi, 1, &block.translate));
        if let Some(net) = &block.cond_scale {
            out.extend(dense_net_entries(&format!("{p}.cond_scale"), net));
        }
        if let Some(net) = &block.cond_translate {
            out.extend(dense_net_entries(&format!("{p}.cond_translate"), net));
        }
    }
    out
}

fn read_tensor<'m>(model: &'m FlowModel, loc: &TensorLoc) -> &'m [f64] {
    match loc {
        TensorLoc::Param(id) => model.params.value(*id).data(),
        TensorLoc::BnMean { block, net, bn } => bn_state(model, *block, *net, *bn).running_mean.as_slice(),
        TensorLoc::BnVar { block, net, bn } => bn_state(model, *block, *net, *bn).running_var.as_slice(),
    }
}

fn bn_state(model: &FlowModel, block: usize, net: usize, bn: usize) -> &crate::numerics::BatchNormState {
    let b = &model.blocks[block];
    let conv = if net == 0 { &b.scale } else { &b.translate };
    if bn == 0 {
        &conv.bn0
    } else {
        &conv.bn1
    }
}

fn write_tensor(model: &mut FlowModel, loc: &TensorLoc, data: &[f64]) -> Result<()> {
    match loc {
        TensorLoc::Param(id) => {
            let p = model
                .params
                .get_mut(*id)
                .ok_or_else(|| Error::Checkpoint("tensor refers to a missing parameter".into()))?;
            if p.value.len() != data.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor length {} does not match parameter length {}",
                    data.len(),
                    p.value.len()
                )));
            }
            p.value.data_mut().copy_from_slice(data);
            Ok(())
        }
        TensorLoc::BnMean { block, net, bn } | TensorLoc::BnVar { block, net, bn } => {
            let b = &mut model.blocks[*block];
            let conv = if *net == 0 { &mut b.scale } else { &mut b.translate };
            let state = if *bn == 0 { &mut conv.bn0 } else { &mut conv.bn1 };
            let target = match loc {
                TensorLoc::BnMean { .. } => &mut state.running_mean,
                _ => &mut state.running_var,
            };
            if target.len() != data.len() {
                return Err(Error::Checkpoint("running statistic length mismatch".into()));
            }
            target.copy_from_slice(data);
            Ok(())
        }
    }
}

/// Serialize a model to checkpoint bytes.
pub fn checkpoint_bytes(model: &FlowModel) -> Result<Vec<u8>> {
    let table = tensor_table(model);
    let mut tensors = Vec::with_capacity(table.len());
    let mut blob: Vec<f64> = Vec::new();
    for (name, loc) in &table {
        let data = read_tensor(model, loc);
        tensors.push(TensorEntry {
            name: name.clone(),
            offset: blob.len() as u64,
            len: data.len() as u64,
        });
        blob.extend_from_slice(data);
    }
    let manifest = Manifest {
        format: "flowcast-checkpoint".to_string(),
        version: VERSION,
        spec: model.spec.clone(),
        tensors,
    };
    let manifest_json = serde_json::to_vec(&manifest)
        .map_err(|e| Error::Checkpoint(format!("manifest encoding failed: {e}")))?;

    let mut out = Vec::with_capacity(8 + manifest_json.len() + blob.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&manifest_json);
    for v in &blob {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Reconstruct a model from checkpoint bytes.
pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<FlowModel> {
    if bytes.len() < 8 || &bytes[0..4] != MAGIC {
        return Err(Error::Checkpoint("not a flow checkpoint (bad magic)".into()));
    }
    let mlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + mlen {
        return Err(Error::Checkpoint("truncated manifest".into()));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[8..8 + mlen])
        .map_err(|e| Error::Checkpoint(format!("manifest decoding failed: {e}")))?;
    if manifest.format != "flowcast-checkpoint" || manifest.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint format {} v{}",
            manifest.format, manifest.version
        )));
    }

    let body = &bytes[8 + mlen..];
    if body.len() % 8 != 0 {
        return Err(Error::Checkpoint("parameter blob is not a whole number of f64".into()));
    }
    let blob: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    // The architecture in the manifest determines the tensor layout; the
    // initializer is irrelevant because every tensor is overwritten.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut model = FlowModel::new(manifest.spec.clone(), &mut rng)?;
    let table = tensor_table(&model);
    if table.len() != manifest.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "manifest lists {} tensors, architecture has {}",
            manifest.tensors.len(),
            table.len()
        )));
    }
    for ((name, loc), entry) in table.iter().zip(&manifest.tensors) {
        if *name != entry.name {
            return Err(Error::Checkpoint(format!(
                "tensor order mismatch: expected {name}, manifest has {}",
                entry.name
            )));
        }
        let start = entry.offset as usize;
        let end = start + entry.len as usize;
        if end > blob.len() {
            return Err(Error::Checkpoint(format!("tensor {name} exceeds the blob")));
        }
        write_tensor(&mut model, loc, &blob[start..end])?;
    }
    Ok(model)
}

pub fn save_checkpoint(model: &FlowModel, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_bytes(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<FlowModel> {
    let bytes = fs::read(path)?;
    checkpoint_from_bytes(&bytes)
}
