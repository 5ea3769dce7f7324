//! Model checkpoints: all named parameters, normalization state, the
//! architecture config, and optionally the optimizer state, in one
//! archive file. A loaded checkpoint reproduces the saved model
//! bit-exactly.

use std::path::Path;

use crate::container::Archive;
use crate::error::{Error, Result};
use crate::model::{build_autoencoder, ArchConfig, Autoencoder};
use crate::optim::AdamState;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub fn save_checkpoint(
    model: &mut Autoencoder<f32>,
    adam: Option<&AdamState<f32>>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut archive: Archive<f32> = Archive::new();
    for p in model.params_mut() {
        archive.insert(format!("param.{}", p.name), p.value.clone());
    }
    for (name, st) in model.bn_states_mut() {
        archive.insert(
            format!("bn_mean.{name}"),
            Tensor::new(vec![st.running_mean.len()], st.running_mean.clone())?,
        );
        archive.insert(
            format!("bn_var.{name}"),
            Tensor::new(vec![st.running_var.len()], st.running_var.clone())?,
        );
    }
    for (name, st) in model.sn_states_mut() {
        archive.insert(
            format!("sn_u.{name}"),
            Tensor::new(vec![st.u.len()], st.u.clone())?,
        );
    }
    if let Some(adam) = adam {
        for (pname, (m, v)) in &adam.moments {
            archive.insert(format!("adam_m.{pname}"), m.clone());
            archive.insert(format!("adam_v.{pname}"), v.clone());
        }
    }
    archive.metadata = serde_json::json!({
        "config": model.cfg,
        "adam_step": adam.map(|a| a.step),
    });
    archive.save(path)
}

pub fn load_checkpoint(
    path: impl AsRef<Path>,
) -> Result<(Autoencoder<f32>, Option<AdamState<f32>>)> {
    let archive: Archive<f32> = Archive::load(path)?;
    let cfg_value = archive
        .metadata
        .get("config")
        .ok_or_else(|| Error::Format("checkpoint metadata missing 'config'".into()))?;
    let cfg: ArchConfig = serde_json::from_value(cfg_value.clone())?;
    // Structure from config; every tensor is then overwritten, so the
    // builder seed is irrelevant.
    let mut model = build_autoencoder::<f32>(&cfg, &mut Rng::new(0))?;
    for p in model.params_mut() {
        let stored = archive.get(&format!("param.{}", p.name))?;
        if stored.shape() != p.value.shape() {
            return Err(Error::shape(format!(
                "checkpoint '{}': stored shape {:?} != config shape {:?}",
                p.name,
                stored.shape(),
                p.value.shape()
            )));
        }
        p.value = stored.clone();
    }
    for (name, st) in model.bn_states_mut() {
        let mean = archive.get(&format!("bn_mean.{name}"))?;
        let var = archive.get(&format!("bn_var.{name}"))?;
        if mean.numel() != st.running_mean.len() || var.numel() != st.running_var.len() {
            return Err(Error::shape(format!("checkpoint BN state '{name}' length mismatch")));
        }
        st.running_mean = mean.data().to_vec();
        st.running_var = var.data().to_vec();
    }
    for (name, st) in model.sn_states_mut() {
        let u = archive.get(&format!("sn_u.{name}"))?;
        if u.numel() != st.u.len() {
            return Err(Error::shape(format!("checkpoint SN state '{name}' length mismatch")));
        }
        st.u = u.data().to_vec();
    }
    let adam = match archive.metadata.get("adam_step").and_then(|v| v.as_u64()) {
        Some(step) => {
            let mut state: AdamState<f32> = AdamState::new();
            state.step = step;
            for p in model.params_mut() {
                let mk = format!("adam_m.{}", p.name);
                if archive.entries.contains_key(&mk) {
                    state.moments.insert(
                        p.name.clone(),
                        (
                            archive.get(&mk)?.clone(),
                            archive.get(&format!("adam_v.{}", p.name))?.clone(),
                        ),
                    );
                }
            }
            Some(state)
        }
        None => None,
    };
    Ok((model, adam))
}
