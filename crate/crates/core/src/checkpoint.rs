//! Self-describing checkpoint container: safetensors with named tensors for
//! both networks and both optimizers, plus JSON metadata for the configs and
//! progress counters.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use footprint_tensor::{Element, Tensor};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use serde::{Deserialize, Serialize};

use crate::networks::ParameterSet;
use crate::optim::Adam;
use crate::trainer::{TrainConfig, TrainState, Trainer};
use crate::{Error, Result};

const META_KEY: &str = "footprint";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Metadata {
    format_version: u32,
    dtype: String,
    config: TrainConfig,
    state: TrainState,
    gen_adam_step: u64,
    disc_adam_step: u64,
}

fn dtype_of<E: Element>() -> Dtype {
    match E::DTYPE {
        "F32" => Dtype::F32,
        "F64" => Dtype::F64,
        other => unreachable!("unsupported element type {other}"),
    }
}

fn to_bytes<E: Element>(t: &Tensor<E>) -> Vec<u8> {
    match dtype_of::<E>() {
        // f32 -> f64 -> f32 is exact, so this round trip is bit-preserving
        Dtype::F32 => t.data().iter().flat_map(|v| (Element::to_f64(*v) as f32).to_le_bytes()).collect(),
        _ => t.data().iter().flat_map(|v| Element::to_f64(*v).to_le_bytes()).collect(),
    }
}

fn from_view<E: Element>(name: &str, view: &TensorView<'_>) -> Result<Tensor<E>> {
    if view.dtype() != dtype_of::<E>() {
        return Err(Error::Checkpoint(format!(
            "tensor '{name}' is {:?}, expected {}",
            view.dtype(),
            E::DTYPE
        )));
    }
    let data: Vec<E> = match view.dtype() {
        Dtype::F32 => view
            .data()
            .chunks_exact(4)
            .map(|b| E::from_f64(f32::from_le_bytes(b.try_into().unwrap()) as f64))
            .collect(),
        _ => view
            .data()
            .chunks_exact(8)
            .map(|b| E::from_f64(f64::from_le_bytes(b.try_into().unwrap())))
            .collect(),
    };
    Ok(Tensor::new(view.shape(), data))
}

fn push_set<E: Element>(out: &mut Vec<(String, Tensor<E>)>, prefix: &str, set: &ParameterSet<E>) {
    for (name, t) in set.iter() {
        out.push((format!("{prefix}.{name}"), t.clone()));
    }
}

fn push_moments<E: Element>(out: &mut Vec<(String, Tensor<E>)>, prefix: &str, set: &ParameterSet<E>, opt: &Adam<E>) {
    for (i, name) in set.names().enumerate() {
        out.push((format!("{prefix}.m.{name}"), opt.m[i].clone()));
        out.push((format!("{prefix}.v.{name}"), opt.v[i].clone()));
    }
}

/// Serializes a run to bytes.
pub fn to_bytes_of<E: Element>(trainer: &Trainer<E>) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    push_set(&mut tensors, "gen", trainer.gen.params());
    push_set(&mut tensors, "disc", trainer.disc.params());
    push_moments(&mut tensors, "opt.gen", trainer.gen.params(), &trainer.opt_gen);
    push_moments(&mut tensors, "opt.disc", trainer.disc.params(), &trainer.opt_disc);

    let bytes: Vec<(String, Vec<usize>, Vec<u8>)> = tensors
        .iter()
        .map(|(n, t)| (n.clone(), t.shape().to_vec(), to_bytes(t)))
        .collect();
    let views = bytes
        .iter()
        .map(|(n, shape, b)| {
            TensorView::new(dtype_of::<E>(), shape.clone(), b)
                .map(|v| (n.clone(), v))
                .map_err(|e| Error::Checkpoint(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;

    let meta = Metadata {
        format_version: FORMAT_VERSION,
        dtype: E::DTYPE.to_string(),
        config: trainer.cfg.clone(),
        state: trainer.state.clone(),
        gen_adam_step: trainer.opt_gen.step,
        disc_adam_step: trainer.opt_disc.step,
    };
    let mut md = HashMap::new();
    md.insert(META_KEY.to_string(), serde_json::to_string(&meta)?);
    safetensors::serialize(views, Some(md)).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save<E: Element>(path: &Path, trainer: &Trainer<E>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let bytes = to_bytes_of(trainer)?;
    // write-then-rename so an interrupted save never clobbers a good file
    let tmp = path.with_extension("safetensors.tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn fill<E: Element>(st: &SafeTensors<'_>, prefix: &str, set: &mut ParameterSet<E>) -> Result<()> {
    let names: Vec<String> = set.names().map(str::to_string).collect();
    for (i, name) in names.iter().enumerate() {
        let key = format!("{prefix}{name}");
        let view = st
            .tensor(&key)
            .map_err(|_| Error::Checkpoint(format!("missing tensor '{key}'")))?;
        let t = from_view::<E>(&key, &view)?;
        let slot = set.by_index_mut(i);
        if t.shape() != slot.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor '{key}' has shape {:?}, expected {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t;
    }
    Ok(())
}

fn fill_moments<E: Element>(st: &SafeTensors<'_>, prefix: &str, set: &ParameterSet<E>, opt: &mut Adam<E>) -> Result<()> {
    let mut m = set.clone();
    let mut v = set.clone();
    fill(st, &format!("{prefix}.m."), &mut m)?;
    fill(st, &format!("{prefix}.v."), &mut v)?;
    opt.m = m.iter().map(|(_, t)| t.clone()).collect();
    opt.v = v.iter().map(|(_, t)| t.clone()).collect();
    Ok(())
}

pub fn from_bytes<E: Element>(bytes: &[u8]) -> Result<Trainer<E>> {
    let (_, header) = SafeTensors::read_metadata(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let meta_json = header
        .metadata()
        .as_ref()
        .and_then(|m| m.get(META_KEY))
        .ok_or_else(|| Error::Checkpoint("missing run metadata".into()))?;
    let meta: Metadata = serde_json::from_str(meta_json)?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {}", meta.format_version)));
    }
    if meta.dtype != E::DTYPE {
        return Err(Error::Checkpoint(format!("checkpoint holds {}, requested {}", meta.dtype, E::DTYPE)));
    }
    let st = SafeTensors::deserialize(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;

    let mut trainer = Trainer::<E>::new(meta.config)?;
    fill(&st, "gen.", trainer.gen.params_mut())?;
    fill(&st, "disc.", trainer.disc.params_mut())?;
    let gen_params = trainer.gen.params().clone();
    let disc_params = trainer.disc.params().clone();
    fill_moments(&st, "opt.gen", &gen_params, &mut trainer.opt_gen)?;
    fill_moments(&st, "opt.disc", &disc_params, &mut trainer.opt_disc)?;
    trainer.opt_gen.step = meta.gen_adam_step;
    trainer.opt_disc.step = meta.disc_adam_step;
    trainer.state = meta.state;
    Ok(trainer)
}

pub fn load<E: Element>(path: &Path) -> Result<Trainer<E>> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossMode;

    fn cfg() -> TrainConfig {
        let mut c = TrainConfig {
            epochs: 1,
            seed: 9,
            ..Default::default()
        }
        .with_patch_size(16);
        c.loss.mode = LossMode::CwganGp;
        c.gen.depth = 2;
        c.gen.base_filters = 3;
        c.disc.num_down_layers = 2;
        c.disc.base_filters = 3;
        c
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut t = Trainer::<f32>::new(cfg()).unwrap();
        t.opt_gen.step = 7;
        t.state.global_step = 7;
        t.opt_gen.m[0].data_mut()[0] = 1.25e-7;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.safetensors");
        save(&path, &t).unwrap();
        let back = load::<f32>(&path).unwrap();
        assert_eq!(back.gen.params(), t.gen.params());
        assert_eq!(back.disc.params(), t.disc.params());
        assert_eq!(back.opt_gen, t.opt_gen);
        assert_eq!(back.opt_disc, t.opt_disc);
        assert_eq!(back.state, t.state);
        assert_eq!(back.cfg, t.cfg);

        let x = Tensor::from_fn(&[3, 16, 16], |i| (i % 11) as f32 / 5.5 - 1.0);
        let (a, b) = (t.gen.generate(&x, Some(3)).unwrap(), back.gen.generate(&x, Some(3)).unwrap());
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn dtype_mismatch_and_garbage_are_rejected() {
        let t = Trainer::<f64>::new(cfg()).unwrap();
        let bytes = to_bytes_of(&t).unwrap();
        assert!(matches!(from_bytes::<f32>(&bytes), Err(Error::Checkpoint(_))));
        assert!(from_bytes::<f64>(&bytes).is_ok());
        assert!(matches!(from_bytes::<f64>(b"not a checkpoint"), Err(Error::Checkpoint(_))));
    }
}
