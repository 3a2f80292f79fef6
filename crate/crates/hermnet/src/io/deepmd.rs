//! DeePMD raw text directory layout.
//!
//! `type.raw` holds one type index per atom (whitespace separated) shared by
//! every frame; `type_map.raw` maps type indices to chemical symbols, one per
//! line. `box.raw`, `coord.raw`, `energy.raw`, and `force.raw` hold one frame
//! per line with 9, 3N, 1, and 3N floats respectively. All frames are fully
//! periodic. When `type_map.raw` is absent, type index `i` falls back to
//! atomic number `i + 1`.

use std::fs;
use std::path::Path;

use super::{fmt_f64, parse_err};
use crate::elements;
use crate::error::{Error, Result};
use crate::structure::{AtomicStructure, Dataset, LabeledFrame};

fn read_file(dir: &Path, name: &str) -> Result<String> {
    fs::read_to_string(dir.join(name))
        .map_err(|e| parse_err(&dir.join(name).display().to_string(), 0, e.to_string()))
}

fn parse_float_lines(text: &str, file: &str, per_line: usize) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let nums: Vec<f64> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| parse_err(file, i + 1, format!("bad float '{t}'")))
            })
            .collect::<Result<_>>()?;
        if nums.len() != per_line {
            return Err(parse_err(
                file,
                i + 1,
                format!("expected {per_line} values, got {}", nums.len()),
            ));
        }
        rows.push(nums);
    }
    Ok(rows)
}

/// Parse a DeePMD raw directory into a dataset.
pub fn parse_deepmd_raw(dir: &Path) -> Result<Dataset> {
    let type_text = read_file(dir, "type.raw")?;
    let type_file = dir.join("type.raw").display().to_string();
    let types: Vec<usize> = type_text
        .split_whitespace()
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| parse_err(&type_file, 1, format!("bad type index '{t}'")))
        })
        .collect::<Result<_>>()?;
    if types.is_empty() {
        return Err(parse_err(&type_file, 1, "no atoms"));
    }
    let n = types.len();

    let type_map_path = dir.join("type_map.raw");
    let species: Vec<u32> = if type_map_path.exists() {
        let map_file = type_map_path.display().to_string();
        let text =
            fs::read_to_string(&type_map_path).map_err(|e| parse_err(&map_file, 0, e.to_string()))?;
        let zs: Vec<u32> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .enumerate()
            .map(|(i, sym)| {
                elements::atomic_number(sym)
                    .ok_or_else(|| parse_err(&map_file, i + 1, format!("unknown symbol '{sym}'")))
            })
            .collect::<Result<_>>()?;
        types
            .iter()
            .map(|&t| {
                zs.get(t).copied().ok_or_else(|| {
                    parse_err(&type_file, 1, format!("type index {t} outside type_map"))
                })
            })
            .collect::<Result<_>>()?
    } else {
        types.iter().map(|&t| t as u32 + 1).collect()
    };

    let box_file = dir.join("box.raw").display().to_string();
    let boxes = parse_float_lines(&read_file(dir, "box.raw")?, &box_file, 9)?;
    let coord_file = dir.join("coord.raw").display().to_string();
    let coords = parse_float_lines(&read_file(dir, "coord.raw")?, &coord_file, 3 * n)?;
    let energy_file = dir.join("energy.raw").display().to_string();
    let energies = parse_float_lines(&read_file(dir, "energy.raw")?, &energy_file, 1)?;
    let forces = if dir.join("force.raw").exists() {
        let force_file = dir.join("force.raw").display().to_string();
        Some(parse_float_lines(
            &read_file(dir, "force.raw")?,
            &force_file,
            3 * n,
        )?)
    } else {
        None
    };

    let n_frames = coords.len();
    for (name, len) in [
        ("box.raw", boxes.len()),
        ("energy.raw", energies.len()),
        ("force.raw", forces.as_ref().map_or(n_frames, |f| f.len())),
    ] {
        if len != n_frames {
            return Err(Error::Dataset(format!(
                "frame-count mismatch: {} has {len} frames but {} has {n_frames}",
                dir.join(name).display(),
                dir.join("coord.raw").display(),
            )));
        }
    }

    let mut frames = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let b = &boxes[f];
        let cell = [[b[0], b[1], b[2]], [b[3], b[4], b[5]], [b[6], b[7], b[8]]];
        let positions: Vec<[f64; 3]> = coords[f]
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        let structure = AtomicStructure::new(species.clone(), positions, Some(cell), [true; 3])?;
        let mut frame = LabeledFrame::new(structure);
        frame.energy = Some(energies[f][0]);
        if let Some(forces) = &forces {
            frame.forces = Some(
                forces[f]
                    .chunks_exact(3)
                    .map(|c| [c[0], c[1], c[2]])
                    .collect(),
            );
        }
        frames.push(frame);
    }
    Ok(Dataset::new(frames))
}

/// Write a dataset as a DeePMD raw directory (inverse of
/// [`parse_deepmd_raw`]). The format requires a fixed composition: every
/// frame must be periodic, energy-labeled, and share one species ordering.
pub fn write_deepmd_raw(dataset: &Dataset, dir: &Path) -> Result<()> {
    if dataset.is_empty() {
        fs::create_dir_all(dir)?;
        return Ok(());
    }
    let species = &dataset.frames[0].structure.species;
    for (i, frame) in dataset.frames.iter().enumerate() {
        if &frame.structure.species != species {
            return Err(Error::Dataset(format!(
                "frame {i} species ordering differs; deepmd raw requires fixed composition"
            )));
        }
        if !frame.structure.is_periodic() || frame.structure.cell.is_none() {
            return Err(Error::Dataset(format!(
                "frame {i} is not periodic; deepmd raw stores periodic frames only"
            )));
        }
        if frame.energy.is_none() {
            return Err(Error::Dataset(format!(
                "frame {i} has no energy; energy.raw requires one per frame"
            )));
        }
    }
    let with_forces = dataset.frames.iter().all(|f| f.forces.is_some());
    if !with_forces && dataset.frames.iter().any(|f| f.forces.is_some()) {
        return Err(Error::Dataset(
            "frames mix force-labeled and unlabeled; force.raw must cover all frames".into(),
        ));
    }

    // Distinct elements in order of first occurrence define the type map.
    let mut order: Vec<u32> = Vec::new();
    for &z in species {
        if !order.contains(&z) {
            order.push(z);
        }
    }

    fs::create_dir_all(dir)?;
    let type_line: Vec<String> = species
        .iter()
        .map(|z| order.iter().position(|o| o == z).unwrap().to_string())
        .collect();
    fs::write(dir.join("type.raw"), type_line.join(" ") + "\n")?;
    let map_lines: Vec<&str> = order
        .iter()
        .map(|&z| elements::symbol(z).expect("validated species"))
        .collect();
    fs::write(dir.join("type_map.raw"), map_lines.join("\n") + "\n")?;

    let mut box_out = String::new();
    let mut coord_out = String::new();
    let mut energy_out = String::new();
    let mut force_out = String::new();
    for frame in &dataset.frames {
        let cell = frame.structure.cell.unwrap();
        let row: Vec<String> = cell.iter().flatten().map(|&x| fmt_f64(x)).collect();
        box_out.push_str(&(row.join(" ") + "\n"));
        let row: Vec<String> = frame
            .structure
            .positions
            .iter()
            .flatten()
            .map(|&x| fmt_f64(x))
            .collect();
        coord_out.push_str(&(row.join(" ") + "\n"));
        energy_out.push_str(&(fmt_f64(frame.energy.unwrap()) + "\n"));
        if with_forces {
            let row: Vec<String> = frame
                .forces
                .as_ref()
                .unwrap()
                .iter()
                .flatten()
                .map(|&x| fmt_f64(x))
                .collect();
            force_out.push_str(&(row.join(" ") + "\n"));
        }
    }
    fs::write(dir.join("box.raw"), box_out)?;
    fs::write(dir.join("coord.raw"), coord_out)?;
    fs::write(dir.join("energy.raw"), energy_out)?;
    if with_forces {
        fs::write(dir.join("force.raw"), force_out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write_fixture(dir: &Path, files: &[(&str, &str)]) {
        fs::create_dir_all(dir).unwrap();
        for (name, content) in files {
            fs::write(dir.join(name), content).unwrap();
        }
    }

    #[test]
    fn two_copper_atoms() {
        let tmp = tempfile::tempdir().unwrap();
        write_fixture(
            tmp.path(),
            &[
                ("type.raw", "0 0\n"),
                ("type_map.raw", "Cu\n"),
                ("box.raw", "3.6 0 0 0 3.6 0 0 0 3.6\n"),
                ("coord.raw", "0 0 0 1.8 1.8 1.8\n"),
                ("energy.raw", "-7.2\n"),
                ("force.raw", "0 0 0 0 0 0\n"),
            ],
        );
        let ds = parse_deepmd_raw(tmp.path()).unwrap();
        assert_eq!(ds.len(), 1);
        let f = &ds.frames[0];
        assert_eq!(f.structure.species, vec![29, 29]);
        assert_eq!(f.structure.cell.unwrap()[0], [3.6, 0.0, 0.0]);
        assert_eq!(f.structure.pbc, [true; 3]);
        assert_eq!(f.energy, Some(-7.2));
    }

    #[test]
    fn frame_count_mismatch_names_file() {
        let tmp = tempfile::tempdir().unwrap();
        write_fixture(
            tmp.path(),
            &[
                ("type.raw", "0\n"),
                ("type_map.raw", "Cu\n"),
                ("box.raw", "3 0 0 0 3 0 0 0 3\n3 0 0 0 3 0 0 0 3\n"),
                ("coord.raw", "0 0 0\n0 0 0\n"),
                ("energy.raw", "-1\n-1\n-1\n"),
            ],
        );
        let err = parse_deepmd_raw(tmp.path()).unwrap_err();
        assert!(err.to_string().contains("energy.raw"), "{err}");
    }

    #[test]
    fn ragged_coord_line_names_file_and_line() {
        let tmp = tempfile::tempdir().unwrap();
        write_fixture(
            tmp.path(),
            &[
                ("type.raw", "0 0\n"),
                ("type_map.raw", "Si\n"),
                ("box.raw", "5 0 0 0 5 0 0 0 5\n"),
                ("coord.raw", "0 0 0 1\n"),
                ("energy.raw", "-1\n"),
            ],
        );
        let err = parse_deepmd_raw(tmp.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("coord.raw") && msg.contains(":1:"), "{msg}");
    }

    #[test]
    fn non_periodic_frame_rejected_by_writer() {
        let s = AtomicStructure::molecule(vec![1], vec![[0.0; 3]]).unwrap();
        let mut frame = LabeledFrame::new(s);
        frame.energy = Some(-1.0);
        let ds = Dataset::new(vec![frame]);
        let tmp = tempfile::tempdir().unwrap();
        assert!(write_deepmd_raw(&ds, tmp.path()).is_err());
    }

    #[test]
    fn mixed_composition_rejected_by_writer() {
        let cell = [[5.0, 0.0, 0.0], [0.0, 5.0, 0.0], [0.0, 0.0, 5.0]];
        let mk = |zs: Vec<u32>| {
            let pos = vec![[0.0; 3]; zs.len()];
            let s = AtomicStructure::new(zs, pos, Some(cell), [true; 3]).unwrap();
            let mut f = LabeledFrame::new(s);
            f.energy = Some(0.0);
            f
        };
        let ds = Dataset::new(vec![mk(vec![1, 8]), mk(vec![8, 1])]);
        let tmp = tempfile::tempdir().unwrap();
        assert!(write_deepmd_raw(&ds, tmp.path()).is_err());
    }

    #[test]
    fn fallback_without_type_map() {
        let tmp = tempfile::tempdir().unwrap();
        write_fixture(
            tmp.path(),
            &[
                ("type.raw", "0 5\n"),
                ("box.raw", "4 0 0 0 4 0 0 0 4\n"),
                ("coord.raw", "0 0 0 1 1 1\n"),
                ("energy.raw", "-3\n"),
            ],
        );
        let ds = parse_deepmd_raw(tmp.path()).unwrap();
        // type index i maps to Z = i + 1
        assert_eq!(ds.frames[0].structure.species, vec![1, 6]);
    }
}
