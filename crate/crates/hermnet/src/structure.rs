//! Atomic structures, labeled frames, and datasets.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Determinant of a 3x3 matrix given as row vectors.
pub fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// A molecular or periodic configuration: species, Cartesian positions in
/// angstrom, and an optional cell whose rows are lattice vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicStructure {
    pub species: Vec<u32>,
    pub positions: Vec<[f64; 3]>,
    pub cell: Option<[[f64; 3]; 3]>,
    pub pbc: [bool; 3],
}

impl AtomicStructure {
    /// Validating constructor; enforces the length, Z-range, and cell
    /// invariants up front so downstream code can trust them.
    pub fn new(
        species: Vec<u32>,
        positions: Vec<[f64; 3]>,
        cell: Option<[[f64; 3]; 3]>,
        pbc: [bool; 3],
    ) -> Result<Self> {
        if species.is_empty() {
            return Err(Error::Structure("structure has no atoms".into()));
        }
        if species.len() != positions.len() {
            return Err(Error::Structure(format!(
                "{} species but {} positions",
                species.len(),
                positions.len()
            )));
        }
        if let Some(&z) = species.iter().find(|&&z| !(1..=118).contains(&z)) {
            return Err(Error::Structure(format!("atomic number {z} out of range")));
        }
        if pbc.iter().any(|&p| p) {
            match cell {
                None => {
                    return Err(Error::Structure(
                        "periodic boundary conditions require a cell".into(),
                    ))
                }
                Some(c) => {
                    if det3(&c).abs() <= 1e-10 {
                        return Err(Error::Structure("cell is singular".into()));
                    }
                }
            }
        }
        Ok(AtomicStructure {
            species,
            positions,
            cell,
            pbc,
        })
    }

    /// Non-periodic structure.
    pub fn molecule(species: Vec<u32>, positions: Vec<[f64; 3]>) -> Result<Self> {
        AtomicStructure::new(species, positions, None, [false; 3])
    }

    pub fn n_atoms(&self) -> usize {
        self.species.len()
    }

    pub fn is_periodic(&self) -> bool {
        self.pbc.iter().any(|&p| p)
    }

    /// Distinct atomic numbers, ascending.
    pub fn element_set(&self) -> Vec<u32> {
        let mut set: Vec<u32> = self.species.clone();
        set.sort_unstable();
        set.dedup();
        set
    }
}

/// A structure with optional energy/force labels and named scalar targets.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFrame {
    pub structure: AtomicStructure,
    /// Total energy in eV, absent for prediction-only frames.
    pub energy: Option<f64>,
    /// Forces in eV/angstrom, one row per atom when present.
    pub forces: Option<Vec<[f64; 3]>>,
    /// Extra named scalar targets (QM9-style properties).
    pub scalars: BTreeMap<String, f64>,
}

impl LabeledFrame {
    pub fn new(structure: AtomicStructure) -> Self {
        LabeledFrame {
            structure,
            energy: None,
            forces: None,
            scalars: BTreeMap::new(),
        }
    }

    pub fn with_labels(structure: AtomicStructure, energy: f64, forces: Vec<[f64; 3]>) -> Result<Self> {
        if forces.len() != structure.n_atoms() {
            return Err(Error::Structure(format!(
                "{} forces for {} atoms",
                forces.len(),
                structure.n_atoms()
            )));
        }
        Ok(LabeledFrame {
            structure,
            energy: Some(energy),
            forces: Some(forces),
            scalars: BTreeMap::new(),
        })
    }

    /// True when the frame can enter a loss term.
    pub fn is_labeled(&self) -> bool {
        self.energy.is_some()
    }
}

/// An ordered collection of frames.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub frames: Vec<LabeledFrame>,
}

impl Dataset {
    pub fn new(frames: Vec<LabeledFrame>) -> Self {
        Dataset { frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Union of species over all frames, ascending. The model relation
    /// vocabulary is fixed by this set.
    pub fn element_set(&self) -> Vec<u32> {
        let mut set: Vec<u32> = self
            .frames
            .iter()
            .flat_map(|f| f.structure.species.iter().copied())
            .collect();
        set.sort_unstable();
        set.dedup();
        set
    }
}

/// Deterministic shuffled split into (train, val, test); test is the
/// remainder after the first `n_train + n_val` shuffled frames.
pub fn split_dataset(
    dataset: &Dataset,
    n_train: usize,
    n_val: usize,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let n = dataset.len();
    if n_train + n_val > n {
        return Err(Error::Dataset(format!(
            "split ({n_train} train + {n_val} val) oversubscribes {n} frames"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);

    let pick = |range: std::ops::Range<usize>| {
        Dataset::new(
            indices[range]
                .iter()
                .map(|&i| dataset.frames[i].clone())
                .collect(),
        )
    };
    Ok((
        pick(0..n_train),
        pick(n_train..n_train + n_val),
        pick(n_train + n_val..n),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(tag: f64) -> LabeledFrame {
        let s = AtomicStructure::molecule(vec![1], vec![[tag, 0.0, 0.0]]).unwrap();
        LabeledFrame::new(s)
    }

    #[test]
    fn pbc_requires_cell() {
        let err = AtomicStructure::new(vec![1], vec![[0.0; 3]], None, [true, false, false]);
        assert!(err.is_err());
    }

    #[test]
    fn singular_cell_rejected() {
        let cell = [[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        let err = AtomicStructure::new(vec![1], vec![[0.0; 3]], Some(cell), [true; 3]);
        assert!(err.is_err());
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let ds = Dataset::new((0..10).map(|i| frame(i as f64)).collect());
        let (train, val, test) = split_dataset(&ds, 8, 1, 0).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (8, 1, 1));
        let mut all: Vec<f64> = train
            .frames
            .iter()
            .chain(val.frames.iter())
            .chain(test.frames.iter())
            .map(|f| f.structure.positions[0][0])
            .collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..10).map(|i| i as f64).collect::<Vec<_>>());
    }

    #[test]
    fn split_is_deterministic() {
        let ds = Dataset::new((0..20).map(|i| frame(i as f64)).collect());
        let a = split_dataset(&ds, 10, 5, 42).unwrap();
        let b = split_dataset(&ds, 10, 5, 42).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.2, b.2);
    }

    #[test]
    fn split_oversubscription_rejected() {
        let ds = Dataset::new((0..5).map(|i| frame(i as f64)).collect());
        assert!(split_dataset(&ds, 4, 2, 0).is_err());
    }

    #[test]
    fn md17_style_split() {
        let ds = Dataset::new((0..3000).map(|i| frame(i as f64)).collect());
        let (train, val, test) = split_dataset(&ds, 1000, 1000, 1).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (1000, 1000, 1000));
    }
}
