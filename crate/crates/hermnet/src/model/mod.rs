//! The neural architecture: embeddings, filters, HermConv layers, readout,
//! and forces by differentiation.

pub mod checkpoint;
pub mod filters;
pub mod layers;
pub mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_HEADER};
pub use filters::{cosine_cutoff, radial_basis};
pub use layers::{batch_graphs, decompose_variant, forward, forward_features, GraphBatch};
pub use params::{init_params, Fault, ModelConfig, ModelParams, Variant};

use crate::error::Result;
use crate::structure::AtomicStructure;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Energy, per-atom contributions, and forces for one structure.
#[derive(Debug, Clone)]
pub struct Prediction {
    /// Total energy, eV.
    pub energy: f64,
    /// Per-atom contributions summing to `energy`, eV.
    pub per_atom: Vec<f64>,
    /// Forces, eV/angstrom.
    pub forces: Vec<[f64; 3]>,
}

/// Predicted total energy and per-atom contributions for one structure.
pub fn predict_energy(
    structure: &AtomicStructure,
    params: &ModelParams<Tensor>,
    config: &ModelConfig,
) -> Result<(f64, Vec<f64>)> {
    let tape = Tape::new();
    let bound = params.map(|t| tape.variable(t.clone()));
    let batch = batch_graphs(
        &[structure],
        config.r_cut,
        Some(decompose_variant(config.variant)),
    )?;
    let out = forward(&tape, &batch, &bound, config, false)?;
    let per_atom = tape.with_value(out.per_atom, |t| t.data().to_vec());
    Ok((tape.item(out.frame_energy), per_atom))
}

/// Forces as the negative position gradient of the predicted energy; under
/// periodic boundary conditions the derivative flows through every image
/// edge recorded on the tape.
pub fn predict_forces(
    structure: &AtomicStructure,
    params: &ModelParams<Tensor>,
    config: &ModelConfig,
) -> Result<Vec<[f64; 3]>> {
    Ok(predict_energy_forces(structure, params, config)?.forces)
}

/// One shared pass for energy and forces.
pub fn predict_energy_forces(
    structure: &AtomicStructure,
    params: &ModelParams<Tensor>,
    config: &ModelConfig,
) -> Result<Prediction> {
    let tape = Tape::new();
    let bound = params.map(|t| tape.variable(t.clone()));
    let batch = batch_graphs(
        &[structure],
        config.r_cut,
        Some(decompose_variant(config.variant)),
    )?;
    let out = forward(&tape, &batch, &bound, config, false)?;
    let energy = tape.item(out.frame_energy);
    let per_atom = tape.with_value(out.per_atom, |t| t.data().to_vec());
    let grads = tape.backward_wrt(out.frame_energy, Some(&[out.positions]))?;
    let n = structure.n_atoms();
    let forces = match grads.wrt(out.positions) {
        Some(g) => tape.with_value(g, |t| {
            (0..n)
                .map(|i| [-t.at(i, 0), -t.at(i, 1), -t.at(i, 2)])
                .collect()
        }),
        // no edges touch the positions: zero force exactly
        None => vec![[0.0; 3]; n],
    };
    Ok(Prediction {
        energy,
        per_atom,
        forces,
    })
}
