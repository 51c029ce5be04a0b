//! Parameter checkpoints: a flat little-endian f64 tensor archive
//! (`tensors.bin`) described by a JSON manifest (`manifest.json`) carrying
//! tensor names, shapes, offsets, seeds, and a config hash.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::denoiser::{DenoiserConfig, DenoiserParams};
use crate::error::{Error, Result};
use crate::task::{TaskConfig, TaskParams};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the archive, in f64 elements.
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub seed: u64,
    pub config_sha256: String,
    pub denoiser: DenoiserConfig,
    pub task: TaskConfig,
    pub threshold: f64,
    pub class_names: Vec<String>,
    pub tensors: Vec<TensorEntry>,
}

pub fn config_hash(config_json: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(config_json.as_bytes());
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Logical tensor layout of the two networks, in flattening order.
fn tensor_entries(denoiser: &DenoiserParams, task: &TaskParams) -> Vec<TensorEntry> {
    let mut entries = Vec::new();
    let mut offset = 0usize;
    let mut push = |name: &str, shape: Vec<usize>| {
        let len: usize = shape.iter().product();
        entries.push(TensorEntry {
            name: name.to_string(),
            shape,
            offset,
            len,
        });
        offset += len;
    };

    let proj_shapes = |prefix: &str,
                       p: &Option<crate::attention::AttnProjection>,
                       push: &mut dyn FnMut(&str, Vec<usize>)| {
        if let Some(p) = p {
            push(&format!("{prefix}.wq"), vec![p.wq.nrows(), p.wq.ncols()]);
            push(&format!("{prefix}.wk"), vec![p.wk.nrows(), p.wk.ncols()]);
            push(&format!("{prefix}.wv"), vec![p.wv.nrows(), p.wv.ncols()]);
        }
    };

    proj_shapes("denoiser.attn.audio_self", &denoiser.attn.audio_self, &mut push);
    proj_shapes("denoiser.attn.audio_cross", &denoiser.attn.audio_cross, &mut push);
    proj_shapes("denoiser.attn.visual_self", &denoiser.attn.visual_self, &mut push);
    proj_shapes("denoiser.attn.visual_cross", &denoiser.attn.visual_cross, &mut push);
    push(
        "denoiser.head_audio.weight",
        vec![
            denoiser.head_audio.weight.nrows(),
            denoiser.head_audio.weight.ncols(),
        ],
    );
    push("denoiser.head_audio.bias", vec![denoiser.head_audio.bias.len()]);
    if !denoiser.cfg.shared_head {
        push(
            "denoiser.head_visual.weight",
            vec![
                denoiser.head_visual.weight.nrows(),
                denoiser.head_visual.weight.ncols(),
            ],
        );
        push(
            "denoiser.head_visual.bias",
            vec![denoiser.head_visual.bias.len()],
        );
    }

    proj_shapes("task.attn.audio_self", &task.attn.audio_self, &mut push);
    proj_shapes("task.attn.audio_cross", &task.attn.audio_cross, &mut push);
    proj_shapes("task.attn.visual_self", &task.attn.visual_self, &mut push);
    proj_shapes("task.attn.visual_cross", &task.attn.visual_cross, &mut push);
    for (name, head) in [
        ("task.cls", &task.cls),
        ("task.temporal", &task.temporal),
        ("task.modality", &task.modality),
    ] {
        push(
            &format!("{name}.weight"),
            vec![head.weight.nrows(), head.weight.ncols()],
        );
        push(&format!("{name}.bias"), vec![head.bias.len()]);
    }
    entries
}

pub fn save_checkpoint(
    dir: &Path,
    denoiser: &DenoiserParams,
    task: &TaskParams,
    threshold: f64,
    seed: u64,
    config_sha256: String,
    class_names: &[String],
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tensors = tensor_entries(denoiser, task);
    let manifest = Manifest {
        format_version: 1,
        seed,
        config_sha256,
        denoiser: denoiser.cfg.clone(),
        task: task.cfg.clone(),
        threshold,
        class_names: class_names.to_vec(),
        tensors,
    };
    let manifest_path = dir.join("manifest.json");
    let body = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Config(format!("serializing manifest: {e}")))?;
    fs::write(&manifest_path, body).map_err(|e| Error::io(&manifest_path, e))?;

    let mut flat = denoiser.to_flat();
    flat.extend(task.to_flat());
    let expected: usize = manifest.tensors.iter().map(|t| t.len).sum();
    debug_assert_eq!(flat.len(), expected);
    let mut bytes = Vec::with_capacity(flat.len() * 8);
    for v in &flat {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let bin_path = dir.join("tensors.bin");
    fs::write(&bin_path, bytes).map_err(|e| Error::io(&bin_path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<(DenoiserParams, TaskParams, Manifest)> {
    let manifest_path = dir.join("manifest.json");
    let body = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&body)
        .map_err(|e| Error::parse(&manifest_path, e.line(), e.to_string()))?;

    let bin_path = dir.join("tensors.bin");
    let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::parse(&bin_path, 0, "tensor archive length not a multiple of 8"));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let expected: usize = manifest.tensors.iter().map(|t| t.len).sum();
    if flat.len() != expected {
        return Err(Error::Shape(format!(
            "tensor archive holds {} values, manifest expects {}",
            flat.len(),
            expected
        )));
    }

    // Rebuild zero-initialized parameter structs, then overwrite from the
    // archive; shapes are implied by the stored configs.
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut denoiser = DenoiserParams::init(manifest.denoiser.clone(), &mut rng)?;
    let mut task = TaskParams::init(manifest.task.clone(), &mut rng)?;
    let d_len = denoiser.flat_len();
    let t_len = task.flat_len();
    if d_len + t_len != flat.len() {
        return Err(Error::Shape(format!(
            "archive length {} does not match configs ({} + {})",
            flat.len(),
            d_len,
            t_len
        )));
    }
    denoiser.set_from_flat(&flat[..d_len]);
    task.set_from_flat(&flat[d_len..]);
    Ok((denoiser, task, manifest))
}
