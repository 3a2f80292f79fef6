//! Distance filters: cosine cutoff and sinc-like radial basis.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::params::Fault;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Behler-style cosine cutoff: `f(r) = (cos(pi r / r_cut) + 1) / 2` for
/// `r <= r_cut`, 0 beyond. Smooth, monotone, f(0) = 1, f(r_cut) = 0 with
/// vanishing slope.
pub fn cosine_cutoff(r: f64, r_cut: f64) -> f64 {
    if r >= r_cut {
        0.0
    } else {
        0.5 * ((PI * r / r_cut).cos() + 1.0)
    }
}

/// Radial basis component n (1-based): `sin(n pi r / r_cut) / r`.
pub fn radial_basis(r: f64, r_cut: f64, n_rbf: usize) -> Result<Vec<f64>> {
    if r <= 0.0 || r > r_cut {
        return Err(Error::Structure(format!(
            "radial basis needs 0 < r <= r_cut, got r={r}, r_cut={r_cut}"
        )));
    }
    Ok((1..=n_rbf)
        .map(|n| (n as f64 * PI * r / r_cut).sin() / r)
        .collect())
}

/// On-tape cutoff for a column of edge distances (all <= r_cut by graph
/// construction). `Fault::BluntCutoff` halves the cosine argument so the
/// switch no longer vanishes at the cutoff.
pub fn cutoff_on_tape(tape: &Tape, r: Var, r_cut: f64, fault: Fault) -> Var {
    let arg_scale = match fault {
        Fault::BluntCutoff => 0.5 * PI / r_cut,
        _ => PI / r_cut,
    };
    let c = tape.cos(tape.scale(r, arg_scale));
    tape.scale(tape.add_scalar(c, 1.0), 0.5)
}

/// On-tape radial basis: `[e,1]` distances to `[e, n_rbf]` features.
pub fn radial_basis_on_tape(tape: &Tape, r: Var, r_cut: f64, n_rbf: usize) -> Result<Var> {
    let freqs: Vec<f64> = (1..=n_rbf).map(|n| n as f64 * PI / r_cut).collect();
    let freq_row = tape.constant(Tensor::matrix(1, n_rbf, &freqs));
    let phases = tape.matmul(r, freq_row)?;
    let sines = tape.sin(phases);
    let e = tape.with_value(r, |t| t.rows());
    let inv_r = tape.div(tape.constant(Tensor::ones(e, 1)), r)?;
    tape.scale_rows(sines, inv_r)
}
