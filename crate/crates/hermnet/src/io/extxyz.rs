//! Extended-XYZ reader and writer.
//!
//! Frame layout: line 1 holds the atom count, line 2 holds `key=value`
//! properties (`Lattice="..."`, `Properties=...`, `energy=...`, optional
//! `pbc="T T F"`), then one line per atom with columns described by the
//! `Properties` descriptor. A `Lattice` without an explicit `pbc` key means
//! fully periodic.

use std::collections::BTreeMap;

use super::{fmt_f64, parse_err};
use crate::elements;
use crate::error::Result;
use crate::structure::{AtomicStructure, Dataset, LabeledFrame};

/// One field of a `Properties=` descriptor: name, type char, column count.
struct Field {
    name: String,
    kind: char,
    ncols: usize,
}

fn parse_properties(descriptor: &str, file: &str, line: usize) -> Result<Vec<Field>> {
    let parts: Vec<&str> = descriptor.split(':').collect();
    if parts.len() % 3 != 0 || parts.is_empty() {
        return Err(parse_err(
            file,
            line,
            format!("malformed Properties descriptor '{descriptor}'"),
        ));
    }
    let mut fields = Vec::new();
    for chunk in parts.chunks(3) {
        let kind = chunk[1].chars().next().unwrap_or('?');
        let ncols: usize = chunk[2].parse().map_err(|_| {
            parse_err(
                file,
                line,
                format!("bad column count '{}' in Properties", chunk[2]),
            )
        })?;
        fields.push(Field {
            name: chunk[0].to_string(),
            kind,
            ncols,
        });
    }
    Ok(fields)
}

/// Split a comment line into `key=value` pairs, honoring double quotes.
fn tokenize_comment(line: &str) -> Vec<(String, String)> {
    let mut pairs = Vec::new();
    let mut chars = line.chars().peekable();
    loop {
        while matches!(chars.peek(), Some(c) if c.is_whitespace()) {
            chars.next();
        }
        let mut key = String::new();
        let mut has_eq = false;
        while let Some(&c) = chars.peek() {
            if c == '=' {
                chars.next();
                has_eq = true;
                break;
            }
            if c.is_whitespace() {
                break;
            }
            key.push(c);
            chars.next();
        }
        if key.is_empty() {
            break;
        }
        if !has_eq {
            // bare word, ignore
            continue;
        }
        let mut value = String::new();
        if matches!(chars.peek(), Some('"')) {
            chars.next();
            for c in chars.by_ref() {
                if c == '"' {
                    break;
                }
                value.push(c);
            }
        } else {
            while let Some(&c) = chars.peek() {
                if c.is_whitespace() {
                    break;
                }
                value.push(c);
                chars.next();
            }
        }
        pairs.push((key, value));
    }
    pairs
}

/// Parse concatenated extended-XYZ frames. `source` names the stream for
/// error messages.
pub fn parse_extxyz(text: &str, source: &str) -> Result<Dataset> {
    let lines: Vec<&str> = text.lines().collect();
    let mut frames = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if lines[i].trim().is_empty() {
            i += 1;
            continue;
        }
        let natoms: usize = lines[i].trim().parse().map_err(|_| {
            parse_err(
                source,
                i + 1,
                format!("expected atom count, got '{}'", lines[i].trim()),
            )
        })?;
        if natoms == 0 {
            return Err(parse_err(source, i + 1, "frame with zero atoms"));
        }
        if i + 1 >= lines.len() {
            return Err(parse_err(source, i + 2, "missing comment line"));
        }
        let comment_line = i + 2;
        let pairs = tokenize_comment(lines[i + 1]);

        let mut cell: Option<[[f64; 3]; 3]> = None;
        let mut pbc: Option<[bool; 3]> = None;
        let mut energy: Option<f64> = None;
        let mut fields: Option<Vec<Field>> = None;
        let mut scalars = BTreeMap::new();
        for (key, value) in &pairs {
            match key.as_str() {
                "Lattice" | "lattice" => {
                    let nums: Vec<f64> = value
                        .split_whitespace()
                        .map(|t| t.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| {
                            parse_err(source, comment_line, format!("malformed Lattice '{value}'"))
                        })?;
                    if nums.len() != 9 {
                        return Err(parse_err(
                            source,
                            comment_line,
                            format!("Lattice needs 9 numbers, got {}", nums.len()),
                        ));
                    }
                    cell = Some([
                        [nums[0], nums[1], nums[2]],
                        [nums[3], nums[4], nums[5]],
                        [nums[6], nums[7], nums[8]],
                    ]);
                }
                "Properties" | "properties" => {
                    fields = Some(parse_properties(value, source, comment_line)?);
                }
                "energy" => {
                    energy = Some(value.parse().map_err(|_| {
                        parse_err(source, comment_line, format!("malformed energy '{value}'"))
                    })?);
                }
                "pbc" => {
                    let flags: Vec<bool> = value
                        .split_whitespace()
                        .map(|t| matches!(t, "T" | "t" | "true" | "True" | "1"))
                        .collect();
                    if flags.len() != 3 {
                        return Err(parse_err(source, comment_line, "pbc needs 3 flags"));
                    }
                    pbc = Some([flags[0], flags[1], flags[2]]);
                }
                _ => {
                    if let Ok(x) = value.parse::<f64>() {
                        scalars.insert(key.clone(), x);
                    }
                }
            }
        }
        let fields = fields.unwrap_or_else(|| {
            parse_properties("species:S:1:pos:R:3", source, comment_line).unwrap()
        });
        let total_cols: usize = fields.iter().map(|f| f.ncols).sum();
        let has_forces = fields
            .iter()
            .any(|f| f.name == "forces" && f.kind == 'R' && f.ncols == 3);

        let mut species = Vec::with_capacity(natoms);
        let mut positions = Vec::with_capacity(natoms);
        let mut forces: Vec<[f64; 3]> = Vec::with_capacity(natoms);
        for a in 0..natoms {
            let lineno = i + 3 + a;
            let line = lines.get(i + 2 + a).ok_or_else(|| {
                parse_err(
                    source,
                    lineno,
                    format!("frame declares {natoms} atoms but input ended after {a}"),
                )
            })?;
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.len() != total_cols {
                return Err(parse_err(
                    source,
                    lineno,
                    format!("expected {total_cols} columns, got {}", tokens.len()),
                ));
            }
            let mut col = 0;
            for field in &fields {
                match (field.name.as_str(), field.kind) {
                    ("species", 'S') => {
                        let sym = tokens[col];
                        let z = elements::atomic_number(sym).ok_or_else(|| {
                            parse_err(source, lineno, format!("unknown chemical symbol '{sym}'"))
                        })?;
                        species.push(z);
                    }
                    ("pos", 'R') => {
                        let mut p = [0.0; 3];
                        for (k, slot) in p.iter_mut().enumerate() {
                            *slot = tokens[col + k].parse().map_err(|_| {
                                parse_err(
                                    source,
                                    lineno,
                                    format!("bad position value '{}'", tokens[col + k]),
                                )
                            })?;
                        }
                        positions.push(p);
                    }
                    ("forces", 'R') => {
                        let mut f = [0.0; 3];
                        for (k, slot) in f.iter_mut().enumerate() {
                            *slot = tokens[col + k].parse().map_err(|_| {
                                parse_err(
                                    source,
                                    lineno,
                                    format!("bad force value '{}'", tokens[col + k]),
                                )
                            })?;
                        }
                        forces.push(f);
                    }
                    _ => {} // unknown field: skip its columns
                }
                col += field.ncols;
            }
        }

        let pbc = pbc.unwrap_or(if cell.is_some() {
            [true, true, true]
        } else {
            [false, false, false]
        });
        let structure = AtomicStructure::new(species, positions, cell, pbc)
            .map_err(|e| parse_err(source, comment_line, e.to_string()))?;
        let mut frame = LabeledFrame::new(structure);
        frame.energy = energy;
        frame.forces = if has_forces { Some(forces) } else { None };
        frame.scalars = scalars;
        frames.push(frame);
        i += 2 + natoms;
    }
    Ok(Dataset::new(frames))
}

/// Render a dataset as concatenated extended-XYZ text (inverse of
/// [`parse_extxyz`]).
pub fn write_extxyz(dataset: &Dataset) -> String {
    let mut out = String::new();
    for frame in &dataset.frames {
        let s = &frame.structure;
        out.push_str(&format!("{}\n", s.n_atoms()));

        let mut comment = String::new();
        if let Some(cell) = &s.cell {
            let flat: Vec<String> = cell.iter().flatten().map(|&x| fmt_f64(x)).collect();
            comment.push_str(&format!("Lattice=\"{}\" ", flat.join(" ")));
        }
        comment.push_str("Properties=species:S:1:pos:R:3");
        if frame.forces.is_some() {
            comment.push_str(":forces:R:3");
        }
        if let Some(e) = frame.energy {
            comment.push_str(&format!(" energy={}", fmt_f64(e)));
        }
        let pbc_str: Vec<&str> = s.pbc.iter().map(|&p| if p { "T" } else { "F" }).collect();
        comment.push_str(&format!(" pbc=\"{}\"", pbc_str.join(" ")));
        for (key, value) in &frame.scalars {
            comment.push_str(&format!(" {key}={}", fmt_f64(*value)));
        }
        out.push_str(&comment);
        out.push('\n');

        for (a, pos) in s.positions.iter().enumerate() {
            let sym = elements::symbol(s.species[a]).expect("validated species");
            out.push_str(&format!(
                "{sym} {} {} {}",
                fmt_f64(pos[0]),
                fmt_f64(pos[1]),
                fmt_f64(pos[2])
            ));
            if let Some(forces) = &frame.forces {
                let f = forces[a];
                out.push_str(&format!(" {} {} {}", fmt_f64(f[0]), fmt_f64(f[1]), fmt_f64(f[2])));
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_atom_h2_frame() {
        let text = "2\nProperties=species:S:1:pos:R:3 energy=-31.0\nH 0 0 0\nH 0 0 0.74\n";
        let ds = parse_extxyz(text, "test").unwrap();
        assert_eq!(ds.len(), 1);
        let f = &ds.frames[0];
        assert_eq!(f.structure.n_atoms(), 2);
        assert_eq!(f.energy, Some(-31.0));
        assert_eq!(ds.element_set(), vec![1]);
        assert!(f.forces.is_none());
        assert!(!f.structure.is_periodic());
    }

    #[test]
    fn lattice_implies_full_pbc() {
        let text = "1\nLattice=\"5 0 0 0 5 0 0 0 5\" Properties=species:S:1:pos:R:3\nCu 0 0 0\n";
        let ds = parse_extxyz(text, "test").unwrap();
        let s = &ds.frames[0].structure;
        assert_eq!(s.pbc, [true, true, true]);
        assert_eq!(
            s.cell.unwrap(),
            [[5.0, 0.0, 0.0], [0.0, 5.0, 0.0], [0.0, 0.0, 5.0]]
        );
    }

    #[test]
    fn atom_count_mismatch_carries_line() {
        let text = "3\nProperties=species:S:1:pos:R:3\nH 0 0 0\nH 0 0 1\n";
        let err = parse_extxyz(text, "bad.xyz").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad.xyz"), "{msg}");
        assert!(msg.contains('5'), "{msg}");
    }

    #[test]
    fn unknown_symbol_rejected() {
        let text = "1\nProperties=species:S:1:pos:R:3\nQq 0 0 0\n";
        let err = parse_extxyz(text, "t").unwrap_err();
        assert!(err.to_string().contains("Qq"));
    }

    #[test]
    fn malformed_lattice_rejected() {
        let text = "1\nLattice=\"5 0 0\" Properties=species:S:1:pos:R:3\nH 0 0 0\n";
        assert!(parse_extxyz(text, "t").is_err());
    }

    #[test]
    fn empty_input_empty_dataset() {
        assert!(parse_extxyz("", "t").unwrap().is_empty());
        assert_eq!(write_extxyz(&Dataset::default()), "");
    }

    #[test]
    fn forces_and_scalars_round_trip() {
        let s = AtomicStructure::molecule(
            vec![8, 1, 1],
            vec![[0.0, 0.0, 0.1], [0.76, 0.0, -0.47], [-0.76, 0.0, -0.47]],
        )
        .unwrap();
        let mut frame = LabeledFrame::with_labels(
            s,
            -76.4,
            vec![[0.1, -0.2, 0.3], [0.0, 0.0, 0.0], [-0.1, 0.2, -0.3]],
        )
        .unwrap();
        frame.scalars.insert("homo".into(), -0.25);
        let ds = Dataset::new(vec![frame]);
        let reparsed = parse_extxyz(&write_extxyz(&ds), "rt").unwrap();
        assert_eq!(reparsed, ds);
    }
}
