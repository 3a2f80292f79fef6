//! Shared generators and helpers for the integration suites.
#![allow(dead_code)]

use rand::rngs::StdRng;
use rand::Rng;

use hermnet::structure::AtomicStructure;
use hermnet::tensor::Tensor;

/// Random molecule: `n` atoms drawn from `elements`, pairwise at least
/// 0.7 A apart inside a compact box so most pairs sit inside the cutoff.
pub fn random_molecule(rng: &mut StdRng, elements: &[u32], n: usize) -> AtomicStructure {
    let species: Vec<u32> = (0..n).map(|_| elements[rng.gen_range(0..elements.len())]).collect();
    let mut positions: Vec<[f64; 3]> = Vec::with_capacity(n);
    while positions.len() < n {
        let p = [
            rng.gen_range(-2.5..2.5),
            rng.gen_range(-2.5..2.5),
            rng.gen_range(-2.5..2.5),
        ];
        let ok = positions.iter().all(|q| {
            let d2 = (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>();
            d2 > 0.7 * 0.7
        });
        if ok {
            positions.push(p);
        }
    }
    AtomicStructure::molecule(species, positions).unwrap()
}

/// Random periodic crystal with a mildly triclinic cell and wrapped,
/// well-separated atoms.
pub fn random_crystal(rng: &mut StdRng, elements: &[u32], n: usize) -> AtomicStructure {
    let species: Vec<u32> = (0..n).map(|_| elements[rng.gen_range(0..elements.len())]).collect();
    let mut cell = [[0.0; 3]; 3];
    for (k, row) in cell.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            *x = if j == k {
                rng.gen_range(4.5..7.0)
            } else {
                rng.gen_range(-0.8..0.8)
            };
        }
    }
    let mut fracs: Vec<[f64; 3]> = Vec::with_capacity(n);
    'outer: while fracs.len() < n {
        let f = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
        for q in &fracs {
            // crude separation test in fractional space
            let d2: f64 = (0..3)
                .map(|k| {
                    let mut d = (f[k] - q[k]).abs();
                    d = d.min(1.0 - d);
                    (d * 5.5).powi(2)
                })
                .sum();
            if d2 < 1.0 {
                continue 'outer;
            }
        }
        fracs.push(f);
    }
    let positions = fracs
        .iter()
        .map(|f| {
            let mut p = [0.0; 3];
            for k in 0..3 {
                for a in 0..3 {
                    p[k] += f[a] * cell[a][k];
                }
            }
            p
        })
        .collect();
    AtomicStructure::new(species, positions, Some(cell), [true; 3]).unwrap()
}

/// Uniformly-ish random rotation from three Euler angles.
pub fn random_rotation(rng: &mut StdRng) -> [[f64; 3]; 3] {
    let (a, b, c) = (
        rng.gen_range(0.0..std::f64::consts::TAU),
        rng.gen_range(0.0..std::f64::consts::TAU),
        rng.gen_range(0.0..std::f64::consts::TAU),
    );
    let rz = |t: f64| {
        [
            [t.cos(), -t.sin(), 0.0],
            [t.sin(), t.cos(), 0.0],
            [0.0, 0.0, 1.0],
        ]
    };
    let ry = |t: f64| {
        [
            [t.cos(), 0.0, t.sin()],
            [0.0, 1.0, 0.0],
            [-t.sin(), 0.0, t.cos()],
        ]
    };
    matmul3(&matmul3(&rz(a), &ry(b)), &rz(c))
}

pub fn matmul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for (k, brow) in b.iter().enumerate() {
                out[i][j] += a[i][k] * brow[j];
            }
        }
    }
    out
}

pub fn rotate_vec(r: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..3 {
        for (k, &x) in v.iter().enumerate() {
            out[i] += r[i][k] * x;
        }
    }
    out
}

/// Rotate positions (and cell, if any) then translate.
pub fn transform_structure(
    s: &AtomicStructure,
    rot: &[[f64; 3]; 3],
    shift: [f64; 3],
) -> AtomicStructure {
    let positions = s
        .positions
        .iter()
        .map(|&p| {
            let r = rotate_vec(rot, p);
            [r[0] + shift[0], r[1] + shift[1], r[2] + shift[2]]
        })
        .collect();
    let cell = s
        .cell
        .map(|c| [rotate_vec(rot, c[0]), rotate_vec(rot, c[1]), rotate_vec(rot, c[2])]);
    AtomicStructure::new(s.species.clone(), positions, cell, s.pbc).unwrap()
}

/// Fill a tensor with uniform values in [-bound, bound].
pub fn randomize_tensor(rng: &mut StdRng, t: &mut Tensor, bound: f64) {
    for x in t.data_mut() {
        *x = rng.gen_range(-bound..bound);
    }
}

/// Largest |a_i - b_i| over all force components, normalized by the largest
/// |b| component (with a small floor).
pub fn max_rel_force_err(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let scale = b
        .iter()
        .flatten()
        .fold(0.0f64, |m, &x| m.max(x.abs()))
        .max(1e-10);
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .fold(0.0f64, |m, (&x, &y)| m.max((x - y).abs()))
        / scale
}
