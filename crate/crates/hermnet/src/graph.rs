//! Cutoff graphs over atomic structures and their relation-typed
//! decompositions.
//!
//! Construction uses cell lists (bins of side >= r_cut). Periodic systems
//! are handled by replicating wrapped atoms over every lattice image that
//! can reach the home cell, so r_cut may exceed the cell dimensions; no
//! minimum-image assumption is made. Edges are sorted by (dst, src, offset)
//! so downstream accumulation order is reproducible.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::structure::{det3, AtomicStructure};

/// A directed edge `src -> dst` with the periodic image shift of `src`.
///
/// `r_vec = position(src) + offset . cell - position(dst)`: the vector
/// pointing from the destination (center) toward its neighbor.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub offset: [i32; 3],
    pub r_vec: [f64; 3],
    pub r_norm: f64,
}

/// How parameter blocks are keyed: by destination element, ordered element
/// pair, or destination plus unordered source pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RelationKey {
    /// The untyped relation of a freshly built cutoff graph.
    All,
    Vertex { dst: u32 },
    Pair { src: u32, dst: u32 },
    Triad { dst: u32, src_pair: (u32, u32) },
}

impl RelationKey {
    /// Triad key with the source pair stored sorted (A->B<-C == C->B<-A).
    pub fn triad(dst: u32, a: u32, b: u32) -> Self {
        RelationKey::Triad {
            dst,
            src_pair: (a.min(b), a.max(b)),
        }
    }

    /// Stable text form used in checkpoint tensor names.
    pub fn label(&self) -> String {
        match self {
            RelationKey::All => "all".into(),
            RelationKey::Vertex { dst } => format!("v[{dst}]"),
            RelationKey::Pair { src, dst } => format!("p[{src}->{dst}]"),
            RelationKey::Triad { dst, src_pair } => {
                format!("t[{},{}->{}]", src_pair.0, src_pair.1, dst)
            }
        }
    }

    /// Inverse of [`RelationKey::label`].
    pub fn parse_label(s: &str) -> Option<Self> {
        if s == "all" {
            return Some(RelationKey::All);
        }
        let (tag, rest) = s.split_at(1.min(s.len()));
        let inner = rest.strip_prefix('[')?.strip_suffix(']')?;
        match tag {
            "v" => Some(RelationKey::Vertex {
                dst: inner.parse().ok()?,
            }),
            "p" => {
                let (a, b) = inner.split_once("->")?;
                Some(RelationKey::Pair {
                    src: a.parse().ok()?,
                    dst: b.parse().ok()?,
                })
            }
            "t" => {
                let (pair, dst) = inner.split_once("->")?;
                let (a, b) = pair.split_once(',')?;
                Some(RelationKey::triad(
                    dst.parse().ok()?,
                    a.parse().ok()?,
                    b.parse().ok()?,
                ))
            }
            _ => None,
        }
    }
}

/// Directed edges partitioned by relation label.
#[derive(Debug, Clone)]
pub struct RelationalGraph {
    pub n_nodes: usize,
    pub species: Vec<u32>,
    pub relations: BTreeMap<RelationKey, Vec<Edge>>,
    pub r_cut: f64,
}

impl RelationalGraph {
    pub fn total_edges(&self) -> usize {
        self.relations.values().map(Vec::len).sum()
    }

    pub fn all_edges(&self) -> impl Iterator<Item = &Edge> {
        self.relations.values().flatten()
    }
}

/// Subgraph extraction flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecomposeVariant {
    Vertex,
    Pair,
    Triad,
}

fn inv3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let d = det3(m);
    let c = |i: usize, j: usize| -> f64 {
        let r = [(0usize..3).filter(|&k| k != i).collect::<Vec<_>>()];
        let rows = &r[0];
        let cols: Vec<usize> = (0..3).filter(|&k| k != j).collect();
        let minor = m[rows[0]][cols[0]] * m[rows[1]][cols[1]]
            - m[rows[0]][cols[1]] * m[rows[1]][cols[0]];
        if (i + j) % 2 == 0 {
            minor
        } else {
            -minor
        }
    };
    // inverse = adjugate / det; adjugate = transpose of cofactor matrix
    let mut inv = [[0.0; 3]; 3];
    for (i, row) in inv.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            *x = c(j, i) / d;
        }
    }
    inv
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Displacement `position(src) + offset . cell - position(dst)`. This is the
/// definitional formula for [`Edge::r_vec`]; keep the evaluation order fixed
/// so independently computed edges agree bitwise.
pub fn edge_vector(
    pos_src: [f64; 3],
    pos_dst: [f64; 3],
    offset: [i32; 3],
    cell: Option<&[[f64; 3]; 3]>,
) -> [f64; 3] {
    let mut v = [0.0; 3];
    for k in 0..3 {
        let mut shift = 0.0;
        if let Some(cell) = cell {
            for a in 0..3 {
                shift += offset[a] as f64 * cell[a][k];
            }
        }
        v[k] = pos_src[k] + shift - pos_dst[k];
    }
    v
}

/// Perpendicular width of the cell along each lattice direction:
/// `w_a = |det| / |L_b x L_c|`.
fn cell_widths(cell: &[[f64; 3]; 3]) -> [f64; 3] {
    let v = det3(cell).abs();
    [
        v / norm3(cross(cell[1], cell[2])),
        v / norm3(cross(cell[2], cell[0])),
        v / norm3(cross(cell[0], cell[1])),
    ]
}

fn sort_edges(edges: &mut [Edge]) {
    edges.sort_by(|a, b| {
        (a.dst, a.src, a.offset)
            .partial_cmp(&(b.dst, b.src, b.offset))
            .unwrap()
    });
}

struct BinGrid {
    origin: [f64; 3],
    side: f64,
    dims: [usize; 3],
    bins: Vec<Vec<usize>>,
}

impl BinGrid {
    fn build(points: &[[f64; 3]], side: f64) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let mut dims = [1usize; 3];
        for k in 0..3 {
            dims[k] = (((hi[k] - lo[k]) / side).floor() as usize + 1).max(1);
        }
        let mut grid = BinGrid {
            origin: lo,
            side,
            dims,
            bins: vec![Vec::new(); dims[0] * dims[1] * dims[2]],
        };
        for (i, p) in points.iter().enumerate() {
            let c = grid.coords(*p);
            let slot = grid.flat(c);
            grid.bins[slot].push(i);
        }
        grid
    }

    fn coords(&self, p: [f64; 3]) -> [usize; 3] {
        let mut c = [0usize; 3];
        for k in 0..3 {
            let raw = ((p[k] - self.origin[k]) / self.side).floor();
            c[k] = (raw.max(0.0) as usize).min(self.dims[k] - 1);
        }
        c
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        (c[0] * self.dims[1] + c[1]) * self.dims[2] + c[2]
    }

    fn neighbors_of(&self, p: [f64; 3]) -> impl Iterator<Item = usize> + '_ {
        let c = self.coords(p);
        let ranges: Vec<Vec<usize>> = (0..3)
            .map(|k| {
                let lo = c[k].saturating_sub(1);
                let hi = (c[k] + 1).min(self.dims[k] - 1);
                (lo..=hi).collect()
            })
            .collect();
        ranges[0]
            .clone()
            .into_iter()
            .flat_map(move |x| {
                let r1 = ranges[1].clone();
                let r2 = ranges[2].clone();
                r1.into_iter()
                    .flat_map(move |y| r2.clone().into_iter().map(move |z| [x, y, z]))
            })
            .flat_map(|c| self.bins[self.flat(c)].iter().copied())
    }
}

/// Build the full directed cutoff graph: every ordered pair `(src -> dst,
/// offset)` with `0 < |r_vec| <= r_cut`, as a single untyped relation.
pub fn build_cutoff_graph(structure: &AtomicStructure, r_cut: f64) -> Result<RelationalGraph> {
    if r_cut <= 0.0 {
        return Err(Error::Structure(format!("r_cut must be positive, got {r_cut}")));
    }
    let n = structure.n_atoms();
    let periodic = structure.is_periodic();
    let cell = structure.cell.filter(|_| periodic);

    // Wrap each atom into the home cell along periodic axes, remembering the
    // integer shift so edge offsets can be expressed against the original
    // coordinates.
    let mut wrapped: Vec<[f64; 3]> = structure.positions.clone();
    let mut shifts: Vec<[i32; 3]> = vec![[0; 3]; n];
    let mut image_range = [0i32; 3];
    if let Some(cell) = &cell {
        let inv = inv3(cell);
        let widths = cell_widths(cell);
        for a in 0..3 {
            if structure.pbc[a] {
                image_range[a] = (r_cut / widths[a]).floor() as i32 + 1;
            }
        }
        for (i, p) in structure.positions.iter().enumerate() {
            // fractional coordinates: f = p . cell^{-1}
            let mut frac = [0.0; 3];
            for (a, fr) in frac.iter_mut().enumerate() {
                for k in 0..3 {
                    *fr += p[k] * inv[k][a];
                }
            }
            for a in 0..3 {
                if structure.pbc[a] {
                    shifts[i][a] = frac[a].floor() as i32;
                }
            }
            for k in 0..3 {
                for a in 0..3 {
                    wrapped[i][k] -= shifts[i][a] as f64 * cell[a][k];
                }
            }
        }
    }

    // Replicate wrapped atoms over every candidate image.
    let mut points: Vec<[f64; 3]> = Vec::new();
    let mut labels: Vec<(usize, [i32; 3])> = Vec::new();
    for (j, p) in wrapped.iter().enumerate() {
        for nx in -image_range[0]..=image_range[0] {
            for ny in -image_range[1]..=image_range[1] {
                for nz in -image_range[2]..=image_range[2] {
                    let img = [nx, ny, nz];
                    let mut q = *p;
                    if let Some(cell) = &cell {
                        for k in 0..3 {
                            for a in 0..3 {
                                q[k] += img[a] as f64 * cell[a][k];
                            }
                        }
                    }
                    points.push(q);
                    labels.push((j, img));
                }
            }
        }
    }

    // Bin side slightly above r_cut: wrapping noise must not push a
    // boundary neighbor out of the adjacent bins.
    let side = r_cut * (1.0 + 1e-9) + 1e-6;
    let grid = BinGrid::build(&points, side);

    let mut edges = Vec::new();
    for dst in 0..n {
        for cand in grid.neighbors_of(wrapped[dst]) {
            let (src, img) = labels[cand];
            // Exact membership test against the original coordinates.
            let mut offset = [0i32; 3];
            for a in 0..3 {
                offset[a] = img[a] - shifts[src][a] + shifts[dst][a];
            }
            let r_vec = edge_vector(
                structure.positions[src],
                structure.positions[dst],
                offset,
                cell.as_ref(),
            );
            let r_norm = norm3(r_vec);
            if r_norm > 0.0 && r_norm <= r_cut {
                edges.push(Edge {
                    src,
                    dst,
                    offset,
                    r_vec,
                    r_norm,
                });
            }
        }
    }
    sort_edges(&mut edges);

    let mut relations = BTreeMap::new();
    relations.insert(RelationKey::All, edges);
    Ok(RelationalGraph {
        n_nodes: n,
        species: structure.species.clone(),
        relations,
        r_cut,
    })
}

/// Quadratic reference: enumerate every pair and every reachable image
/// offset directly. Used by the self-check suite and the test oracles; it
/// shares no search machinery with [`build_cutoff_graph`].
pub fn brute_force_cutoff_graph(
    structure: &AtomicStructure,
    r_cut: f64,
) -> Result<RelationalGraph> {
    if r_cut <= 0.0 {
        return Err(Error::Structure(format!("r_cut must be positive, got {r_cut}")));
    }
    let n = structure.n_atoms();
    let periodic = structure.is_periodic();
    let cell = structure.cell.filter(|_| periodic);

    let mut edges = Vec::new();
    for dst in 0..n {
        for src in 0..n {
            // Per-pair offset window from the fractional separation.
            let mut ranges: [std::ops::RangeInclusive<i32>; 3] = [0..=0, 0..=0, 0..=0];
            if let Some(cell) = &cell {
                let inv = inv3(cell);
                let widths = cell_widths(cell);
                let delta = [
                    structure.positions[src][0] - structure.positions[dst][0],
                    structure.positions[src][1] - structure.positions[dst][1],
                    structure.positions[src][2] - structure.positions[dst][2],
                ];
                let mut frac = [0.0; 3];
                for (a, fr) in frac.iter_mut().enumerate() {
                    for k in 0..3 {
                        *fr += delta[k] * inv[k][a];
                    }
                }
                for a in 0..3 {
                    if structure.pbc[a] {
                        let reach = r_cut / widths[a];
                        let lo = (-frac[a] - reach).floor() as i32 - 1;
                        let hi = (-frac[a] + reach).ceil() as i32 + 1;
                        ranges[a] = lo..=hi;
                    }
                }
            }
            for ox in ranges[0].clone() {
                for oy in ranges[1].clone() {
                    for oz in ranges[2].clone() {
                        let offset = [ox, oy, oz];
                        let r_vec = edge_vector(
                            structure.positions[src],
                            structure.positions[dst],
                            offset,
                            cell.as_ref(),
                        );
                        let r_norm = norm3(r_vec);
                        if r_norm > 0.0 && r_norm <= r_cut {
                            edges.push(Edge {
                                src,
                                dst,
                                offset,
                                r_vec,
                                r_norm,
                            });
                        }
                    }
                }
            }
        }
    }
    sort_edges(&mut edges);

    let mut relations = BTreeMap::new();
    relations.insert(RelationKey::All, edges);
    Ok(RelationalGraph {
        n_nodes: n,
        species: structure.species.clone(),
        relations,
        r_cut,
    })
}

/// Split an untyped graph into relation-labeled subgraphs. The vertex and
/// pair variants partition the edge set; the triad variant groups by
/// destination element (triad keys are materialized at the angular stage,
/// where source pairs are enumerated).
pub fn decompose(graph: &RelationalGraph, variant: DecomposeVariant) -> RelationalGraph {
    let mut relations: BTreeMap<RelationKey, Vec<Edge>> = BTreeMap::new();
    for edge in graph.all_edges() {
        let key = match variant {
            DecomposeVariant::Vertex | DecomposeVariant::Triad => RelationKey::Vertex {
                dst: graph.species[edge.dst],
            },
            DecomposeVariant::Pair => RelationKey::Pair {
                src: graph.species[edge.src],
                dst: graph.species[edge.dst],
            },
        };
        relations.entry(key).or_default().push(edge.clone());
    }
    RelationalGraph {
        n_nodes: graph.n_nodes,
        species: graph.species.clone(),
        relations,
        r_cut: graph.r_cut,
    }
}

/// Number of parameter relations each variant allocates over `n_e` elements:
/// `n_e`, `n_e^2`, and `n_e * n_e(n_e+1)/2`.
pub fn relation_count(element_set: &[u32], variant: DecomposeVariant) -> usize {
    let n_e = element_set.len();
    match variant {
        DecomposeVariant::Vertex => n_e,
        DecomposeVariant::Pair => n_e * n_e,
        DecomposeVariant::Triad => n_e * (n_e * (n_e + 1) / 2),
    }
}
