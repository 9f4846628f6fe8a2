//! Embedder checkpoints: one raw PET file per parameter block plus a JSON
//! manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use partcc_core::embedder::EmbedderParams;
use partcc_core::Matrix;

use crate::{pet, AppError};

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub n_parts: usize,
    pub raw_dim: usize,
    pub dim: usize,
    pub init_seed: u64,
    pub weight_files: Vec<String>,
    pub bias_files: Vec<String>,
}

/// Write the parameter blocks and manifest into `dir`.
pub fn save(dir: &Path, params: &EmbedderParams) -> Result<(), AppError> {
    fs::create_dir_all(dir).map_err(|e| AppError::io(format!("{}: {e}", dir.display())))?;
    let mut weight_files = Vec::new();
    let mut bias_files = Vec::new();
    for q in 0..params.n_parts() {
        let w_name = format!("weight_part_{q:03}.pet");
        let b_name = format!("bias_part_{q:03}.pet");
        let w = Matrix::from_vec(
            params.raw_dim(),
            params.dim(),
            params.weight_block(q).to_vec(),
        )
        .expect("weight block shape");
        let b = Matrix::from_vec(1, params.dim(), params.bias_block(q).to_vec())
            .expect("bias block shape");
        pet::write_raw(&dir.join(&w_name), &w)?;
        pet::write_raw(&dir.join(&b_name), &b)?;
        weight_files.push(w_name);
        bias_files.push(b_name);
    }
    let manifest = Manifest {
        n_parts: params.n_parts(),
        raw_dim: params.raw_dim(),
        dim: params.dim(),
        init_seed: params.init_seed(),
        weight_files,
        bias_files,
    };
    crate::report::write_json(&dir.join("manifest.json"), &manifest)
}

/// Reassemble parameters from a checkpoint directory.
///
/// Parameters are stored in 32-bit precision like every other PET payload,
/// so a reloaded checkpoint is the 32-bit rounding of the trained state.
pub fn load(dir: &Path) -> Result<EmbedderParams, AppError> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| AppError::io(format!("{}: {e}", manifest_path.display())))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| AppError::validation(format!("{}: {e}", manifest_path.display())))?;
    if manifest.weight_files.len() != manifest.n_parts
        || manifest.bias_files.len() != manifest.n_parts
    {
        return Err(AppError::validation(format!(
            "{}: manifest lists {} weight and {} bias files for {} parts",
            manifest_path.display(),
            manifest.weight_files.len(),
            manifest.bias_files.len(),
            manifest.n_parts
        )));
    }
    let mut flat = Vec::with_capacity(
        manifest.n_parts * manifest.raw_dim * manifest.dim + manifest.n_parts * manifest.dim,
    );
    let mut biases = Vec::new();
    for q in 0..manifest.n_parts {
        let w = pet::read_raw(&dir.join(&manifest.weight_files[q]))?;
        if w.rows() != manifest.raw_dim || w.cols() != manifest.dim {
            return Err(AppError::validation(format!(
                "checkpoint weight block {q} has shape {}x{}, expected {}x{}",
                w.rows(),
                w.cols(),
                manifest.raw_dim,
                manifest.dim
            )));
        }
        flat.extend_from_slice(w.data());
        let b = pet::read_raw(&dir.join(&manifest.bias_files[q]))?;
        if b.rows() != 1 || b.cols() != manifest.dim {
            return Err(AppError::validation(format!(
                "checkpoint bias block {q} has shape {}x{}, expected 1x{}",
                b.rows(),
                b.cols(),
                manifest.dim
            )));
        }
        biases.extend_from_slice(b.data());
    }
    flat.extend_from_slice(&biases);
    EmbedderParams::from_flat(
        manifest.n_parts,
        manifest.raw_dim,
        manifest.dim,
        flat,
        manifest.init_seed,
    )
    .map_err(AppError::from)
}
