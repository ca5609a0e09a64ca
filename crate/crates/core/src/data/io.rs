//! Dataset storage: a text manifest plus a sidecar blob of little-endian f32
//! laid out `[episode][field][timestep][dim]`, fields in the order
//! observations, actions, actuated_keys.

use std::path::{Path, PathBuf};

use super::{OfflineDataset, Trajectory};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::manifest::{push_f32, F32Reader, Manifest};

pub const DATASET_VERSION: u32 = 1;
const FIELDS: [&str; 3] = ["observations", "actions", "actuated_keys"];

/// Sidecar blob path for a manifest path (`data.manifest` → `data.bin`).
pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

pub fn save(dataset: &OfflineDataset, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let blob = blob_path(path);
    let mut m = Manifest::new();
    m.set("version", &DATASET_VERSION);
    m.set("env_config", &dataset.env_config);
    m.set("obs_dim", &dataset.obs_dim());
    m.set("action_dim", &dataset.action_dim());
    m.set("key_dim", &dataset.key_dim());
    m.set("episodes", &dataset.trajectories.len());
    m.set("collection_seed", &dataset.collection_seed);
    m.set("fields", &FIELDS);
    m.set(
        "lengths",
        &dataset
            .trajectories
            .iter()
            .map(Trajectory::len)
            .collect::<Vec<_>>(),
    );
    m.set(
        "blob",
        &blob
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
    );
    let mut bytes = Vec::new();
    for t in &dataset.trajectories {
        push_f32(&mut bytes, t.observations.iter().copied());
        push_f32(&mut bytes, t.actions.iter().copied());
        push_f32(&mut bytes, t.actuated_keys.iter().copied());
    }
    std::fs::write(&blob, bytes).map_err(|e| Error::io(&blob, e))?;
    m.write(path)
}

pub fn load(path: &Path) -> Result<OfflineDataset> {
    let m = Manifest::read(path)?;
    m.check_version(DATASET_VERSION)?;
    let env_config: EnvConfig = m.get("env_config")?;
    let obs_dim: usize = m.get("obs_dim")?;
    let action_dim: usize = m.get("action_dim")?;
    let key_dim: usize = m.get("key_dim")?;
    let episodes: usize = m.get("episodes")?;
    let collection_seed: u64 = m.get("collection_seed")?;
    let fields: Vec<String> = m.get("fields")?;
    let lengths: Vec<usize> = m.get("lengths")?;
    if fields != FIELDS {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            offset: "fields".into(),
            msg: format!("unsupported field order {fields:?}"),
        });
    }
    if lengths.len() != episodes {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            offset: "lengths".into(),
            msg: format!("{} lengths for {episodes} episodes", lengths.len()),
        });
    }
    let blob = path.with_file_name(m.get::<String>("blob")?);
    let bytes = std::fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
    let mut reader = F32Reader::new(&blob, &bytes);
    let mut trajectories = Vec::with_capacity(episodes);
    for &len in &lengths {
        let mut t = Trajectory::new(obs_dim, action_dim, key_dim);
        t.observations = reader.take((len + 1) * obs_dim)?;
        t.actions = reader.take(len * action_dim)?;
        t.actuated_keys = reader.take((len + 1) * key_dim)?;
        trajectories.push(t);
    }
    reader.finish()?;
    OfflineDataset::new(trajectories, env_config, collection_seed)
}
