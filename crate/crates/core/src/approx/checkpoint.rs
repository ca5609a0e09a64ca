//! Network checkpoints: a `name.manifest` text file (layer sizes, output
//! activation, step count) next to a `name.bin` blob of little-endian f32
//! parameters, layer by layer, weights (row-major, `in × out`) then bias.

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};

use super::mlp::{Activation, Layer, Mlp};
use crate::error::{Error, Result};
use crate::manifest::{push_f32, F32Reader, Manifest};

pub const CHECKPOINT_VERSION: u32 = 1;

fn paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{name}.manifest")),
        dir.join(format!("{name}.bin")),
    )
}

/// Writes `net` under `dir`. Parameters are stored at f32 precision.
pub fn save_mlp(
    net: &Mlp,
    dir: &Path,
    name: &str,
    step: u64,
    extra: &[(&str, serde_json::Value)],
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (manifest_path, blob_path) = paths(dir, name);
    let mut m = Manifest::new();
    m.set("version", &CHECKPOINT_VERSION);
    m.set("layer_sizes", &net.layer_sizes());
    m.set("output_activation", &net.output_activation());
    m.set("step", &step);
    m.set("blob", &format!("{name}.bin"));
    for (k, v) in extra {
        m.set(k, v);
    }
    let mut blob = Vec::with_capacity(net.num_params() * 4);
    push_f32(&mut blob, net.flat_params().into_iter().map(|v| v as f32));
    std::fs::write(&blob_path, blob).map_err(|e| Error::io(&blob_path, e))?;
    m.write(&manifest_path)
}

/// Loads a network and its recorded step count.
pub fn load_mlp(dir: &Path, name: &str) -> Result<(Mlp, u64)> {
    let (manifest_path, blob_path) = paths(dir, name);
    if !manifest_path.exists() {
        return Err(Error::MissingCheckpoint(manifest_path));
    }
    let m = Manifest::read(&manifest_path)?;
    m.check_version(CHECKPOINT_VERSION)?;
    let sizes: Vec<usize> = m.get("layer_sizes")?;
    let output: Activation = m.get("output_activation")?;
    let step: u64 = m.get("step")?;
    if sizes.len() < 2 {
        return Err(Error::Parse {
            path: manifest_path,
            offset: "layer_sizes".into(),
            msg: "need at least two sizes".into(),
        });
    }
    let bytes = std::fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    let mut reader = F32Reader::new(&blob_path, &bytes);
    let mut layers = Vec::new();
    for w in sizes.windows(2) {
        let weights = reader.take(w[0] * w[1])?;
        let bias = reader.take(w[1])?;
        layers.push(Layer {
            weights: Array2::from_shape_vec(
                (w[0], w[1]),
                weights.into_iter().map(f64::from).collect(),
            )
            .expect("sized above"),
            bias: Array1::from(bias.into_iter().map(f64::from).collect::<Vec<_>>()),
        });
    }
    reader.finish()?;
    Ok((Mlp::from_layers(layers, output)?, step))
}
