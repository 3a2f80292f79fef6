//! The HermConv forward pass.
//!
//! Node features are a scalar block `s` (`[n, f]`) and a vectorial block
//! carried as three `[n, f]` matrices, one per spatial axis; a global
//! rotation acts on the triple, never on the feature axis, which keeps every
//! op two-dimensional. Each layer runs a radial message/update per relation
//! followed by an angular message/update (skipped by HPNet), both as
//! residual updates summed over relations.

use std::collections::BTreeMap;
use std::rc::Rc;

use crate::elements;
use crate::error::{Error, Result};
use crate::graph::{build_cutoff_graph, decompose, DecomposeVariant, RelationKey};
use crate::model::filters::{cutoff_on_tape, radial_basis_on_tape};
use crate::model::params::{
    AngularBlock, Dense, Fault, LayerParams, ModelConfig, ModelParams, Variant,
};
use crate::structure::AtomicStructure;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Epsilon inside vector-norm square roots; keeps gradients finite when a
/// vector block vanishes.
const NORM_EPS: f64 = 1e-12;

/// Edges of one relation in a batch, in struct-of-arrays form.
/// `shift[e]` is `offset . cell` of the edge's frame.
#[derive(Debug, Clone, Default)]
pub struct EdgeSet {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub shift: Vec<[f64; 3]>,
    pub r_vec: Vec<[f64; 3]>,
}

impl EdgeSet {
    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

/// One or more structures merged into a block-diagonal graph. Node indices
/// of frame k are offset by the total atom count of frames before it.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub n_nodes: usize,
    pub n_frames: usize,
    pub species: Vec<u32>,
    pub positions: Vec<[f64; 3]>,
    pub frame_of_node: Vec<usize>,
    pub relations: BTreeMap<RelationKey, EdgeSet>,
}

/// Build and merge cutoff graphs. `decompose_as` selects the relation
/// keying; `None` keeps the single untyped relation.
pub fn batch_graphs(
    structures: &[&AtomicStructure],
    r_cut: f64,
    decompose_as: Option<DecomposeVariant>,
) -> Result<GraphBatch> {
    let mut batch = GraphBatch {
        n_nodes: 0,
        n_frames: structures.len(),
        species: Vec::new(),
        positions: Vec::new(),
        frame_of_node: Vec::new(),
        relations: BTreeMap::new(),
    };
    for (fi, s) in structures.iter().enumerate() {
        let graph = build_cutoff_graph(s, r_cut)?;
        let graph = match decompose_as {
            Some(v) => decompose(&graph, v),
            None => graph,
        };
        let offset = batch.n_nodes;
        for (key, edges) in &graph.relations {
            let set = batch.relations.entry(*key).or_default();
            for e in edges {
                set.src.push(e.src + offset);
                set.dst.push(e.dst + offset);
                let mut shift = [0.0; 3];
                if let Some(cell) = &s.cell {
                    for k in 0..3 {
                        for a in 0..3 {
                            shift[k] += e.offset[a] as f64 * cell[a][k];
                        }
                    }
                }
                set.shift.push(shift);
                set.r_vec.push(e.r_vec);
            }
        }
        batch.n_nodes += s.n_atoms();
        batch.species.extend_from_slice(&s.species);
        batch.positions.extend_from_slice(&s.positions);
        batch.frame_of_node.extend(std::iter::repeat(fi).take(s.n_atoms()));
    }
    Ok(batch)
}

/// The keying a variant uses for its radial relations.
pub fn decompose_variant(variant: Variant) -> DecomposeVariant {
    match variant {
        Variant::HVNet | Variant::HTNet => DecomposeVariant::Vertex,
        Variant::HPNet => DecomposeVariant::Pair,
    }
}

/// Per-node features on the tape.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub s: Var,
    pub v: [Var; 3],
    /// HTNet only: vector features split by the element of the edge source
    /// that contributed them; their sum reproduces `v`.
    pub v_by_src: Option<BTreeMap<u32, [Var; 3]>>,
}

fn dense_on_tape(tape: &Tape, d: &Dense<Var>, x: Var) -> Result<Var> {
    let y = tape.matmul(x, d.weight)?;
    match d.bias {
        Some(b) => tape.add_row_broadcast(y, b),
        None => Ok(y),
    }
}

fn mlp2(tape: &Tape, d1: &Dense<Var>, d2: &Dense<Var>, x: Var) -> Result<Var> {
    let h = tape.silu(dense_on_tape(tape, d1, x)?)?;
    dense_on_tape(tape, d2, h)
}

fn vocab_error(key: &RelationKey, stage: &str) -> Error {
    Error::Vocabulary(format!(
        "relation {} present in the graph but has no {stage} parameter block \
         (element unseen at training time)",
        key.label()
    ))
}

fn accumulate(tape: &Tape, slot: &mut Option<Var>, value: Var) -> Result<()> {
    *slot = Some(match slot.take() {
        None => value,
        Some(prev) => tape.add(prev, value)?,
    });
    Ok(())
}

/// Scalar invariants of the angular stage: per-channel spatial inner product
/// of the two channel-mixed vector blocks, the norm of the second, and the
/// first mixed block itself (reused for the vector update).
fn angular_invariants(
    tape: &Tape,
    v_rows: [Var; 3],
    mix_u: Var,
    mix_v: Var,
) -> Result<(Var, Var, [Var; 3])> {
    let mut uv = [v_rows[0]; 3];
    let mut vv = [v_rows[0]; 3];
    for axis in 0..3 {
        uv[axis] = tape.matmul(v_rows[axis], mix_u)?;
        vv[axis] = tape.matmul(v_rows[axis], mix_v)?;
    }
    let mut dot: Option<Var> = None;
    let mut nsq: Option<Var> = None;
    for axis in 0..3 {
        accumulate(tape, &mut dot, tape.mul(uv[axis], vv[axis])?)?;
        accumulate(tape, &mut nsq, tape.mul(vv[axis], vv[axis])?)?;
    }
    let vnorm = tape.sqrt(tape.add_scalar(nsq.unwrap(), NORM_EPS))?;
    Ok((dot.unwrap(), vnorm, uv))
}

/// Gate computation shared by the angular paths: feeds `[s, <Uv,Vv>, |Vv|]`
/// to the block MLP and splits the output into the three gates.
fn angular_gates(
    tape: &Tape,
    block: &AngularBlock<Var>,
    s_rows: Var,
    dot: Var,
    vnorm: Var,
    f: usize,
) -> Result<(Var, Var, Var)> {
    let gates = mlp2(
        tape,
        &block.gate1,
        &block.gate2,
        tape.concat_cols(&[s_rows, dot, vnorm])?,
    )?;
    Ok((
        tape.slice_cols(gates, 0, f)?,
        tape.slice_cols(gates, f, 2 * f)?,
        tape.slice_cols(gates, 2 * f, 3 * f)?,
    ))
}

struct RadialStage {
    ds: Option<Var>,
    dv: [Option<Var>; 3],
    dv_by_src: Option<BTreeMap<u32, [Option<Var>; 3]>>,
}

/// Radial message pass for one relation: per edge j -> i, gate the source
/// MLP features with the filtered radial basis, split into (a, b, c), and
/// accumulate `a` onto scalar features and `v_j . b + r_hat . c` onto
/// vector features of the destination.
#[allow(clippy::too_many_arguments)]
fn radial_relation(
    tape: &Tape,
    state: &NodeState,
    edges: &EdgeSet,
    block: &crate::model::params::RadialBlock<Var>,
    positions: Var,
    batch: &GraphBatch,
    config: &ModelConfig,
    stage: &mut RadialStage,
) -> Result<()> {
    let n = batch.n_nodes;
    let f = config.hidden;
    let src = Rc::new(edges.src.clone());
    let dst = Rc::new(edges.dst.clone());

    let s_j = tape.gather_rows(state.s, src.clone())?;
    let phi = mlp2(tape, &block.phi1, &block.phi2, s_j)?;

    let p_src = tape.gather_rows(positions, src.clone())?;
    let p_dst = tape.gather_rows(positions, dst.clone())?;
    let shift = tape.constant(Tensor::new(
        vec![edges.len(), 3],
        edges.shift.iter().flatten().copied().collect(),
    ));
    let mut r = tape.sub(tape.add(p_src, shift)?, p_dst)?;
    if config.fault == Fault::FlipRvecX {
        let mask: Vec<f64> = edges
            .r_vec
            .iter()
            .map(|v| if v[0] > 0.0 { -1.0 } else { 1.0 })
            .collect();
        r = tape.scale_rows(r, tape.constant(Tensor::column(&mask)))?;
    }
    let r_norm = tape.row_norm(r, 0.0)?;

    let rbf = radial_basis_on_tape(tape, r_norm, config.r_cut, config.n_rbf)?;
    let f_cut = cutoff_on_tape(tape, r_norm, config.r_cut, config.fault);
    let w = tape.scale_rows(tape.matmul(rbf, block.filter.weight)?, f_cut)?;

    let gates = tape.mul(phi, w)?;
    let gate_a = tape.slice_cols(gates, 0, f)?;
    let gate_b = tape.slice_cols(gates, f, 2 * f)?;
    let gate_c = tape.slice_cols(gates, 2 * f, 3 * f)?;

    accumulate(tape, &mut stage.ds, tape.scatter_add_rows(gate_a, dst.clone(), n)?)?;

    // Edge rows grouped by source element, for the HTNet decomposition.
    let src_groups: Vec<(u32, Rc<Vec<usize>>, Rc<Vec<usize>>)> = if stage.dv_by_src.is_some() {
        let mut groups: BTreeMap<u32, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
        for (row, (&j, &i)) in edges.src.iter().zip(edges.dst.iter()).enumerate() {
            let entry = groups.entry(batch.species[j]).or_default();
            entry.0.push(row);
            entry.1.push(i);
        }
        groups
            .into_iter()
            .map(|(el, (rows, dsts))| (el, Rc::new(rows), Rc::new(dsts)))
            .collect()
    } else {
        Vec::new()
    };

    for axis in 0..3 {
        let dir = tape.div(tape.slice_cols(r, axis, axis + 1)?, r_norm)?;
        let v_j = tape.gather_rows(state.v[axis], src.clone())?;
        let contrib = tape.add(tape.mul(v_j, gate_b)?, tape.scale_rows(gate_c, dir)?)?;
        accumulate(
            tape,
            &mut stage.dv[axis],
            tape.scatter_add_rows(contrib, dst.clone(), n)?,
        )?;
        if let Some(by_src) = &mut stage.dv_by_src {
            for (el, rows, dsts) in &src_groups {
                let sub = tape.gather_rows(contrib, rows.clone())?;
                let scattered = tape.scatter_add_rows(sub, dsts.clone(), n)?;
                let slots = by_src.entry(*el).or_insert([None, None, None]);
                accumulate(tape, &mut slots[axis], scattered)?;
            }
        }
    }
    Ok(())
}

/// One heterogeneous relational message passing layer.
fn hermconv_layer(
    tape: &Tape,
    state: &NodeState,
    batch: &GraphBatch,
    layer: &LayerParams<Var>,
    config: &ModelConfig,
    positions: Var,
    nodes_by_element: &BTreeMap<u32, Rc<Vec<usize>>>,
    untyped: bool,
) -> Result<NodeState> {
    let n = batch.n_nodes;
    let f = config.hidden;

    // Radial stage: all relations, summed, then one residual update.
    let mut stage = RadialStage {
        ds: None,
        dv: [None, None, None],
        dv_by_src: state.v_by_src.as_ref().map(|_| BTreeMap::new()),
    };
    for (key, edges) in &batch.relations {
        if edges.is_empty() {
            continue;
        }
        let block = layer.radial.get(key).ok_or_else(|| vocab_error(key, "radial"))?;
        radial_relation(tape, state, edges, block, positions, batch, config, &mut stage)?;
    }
    let s_rad = match stage.ds {
        Some(d) => tape.add(state.s, d)?,
        None => state.s,
    };
    let mut v_rad = state.v;
    for axis in 0..3 {
        if let Some(d) = stage.dv[axis] {
            v_rad[axis] = tape.add(state.v[axis], d)?;
        }
    }
    let mut v_by_src = state.v_by_src.clone();
    if let (Some(by_src), Some(deltas)) = (&mut v_by_src, stage.dv_by_src) {
        for (el, slots) in deltas {
            let comp = by_src
                .get_mut(&el)
                .expect("source element tracked for every element present");
            for axis in 0..3 {
                if let Some(d) = slots[axis] {
                    comp[axis] = tape.add(comp[axis], d)?;
                }
            }
        }
    }

    // Angular stage (HPNet: skipped).
    let mut ds_ang: Option<Var> = None;
    let mut dv_ang: [Option<Var>; 3] = [None, None, None];
    let mut dv_ang_by_src: BTreeMap<u32, [Option<Var>; 3]> = BTreeMap::new();

    if untyped {
        // Diagnostic homogeneous path: one angular block keyed `All`, run
        // over every node, if the parameters carry one.
        if let Some(block) = layer.angular.get(&RelationKey::All) {
            let idx: Rc<Vec<usize>> = Rc::new((0..n).collect());
            let s_rows = tape.gather_rows(s_rad, idx.clone())?;
            let mut v_rows = v_rad;
            for axis in 0..3 {
                v_rows[axis] = tape.gather_rows(v_rad[axis], idx.clone())?;
            }
            let (dot, vnorm, uv) = angular_invariants(tape, v_rows, block.mix_u, block.mix_v)?;
            let (a_ss, a_sv, a_vv) = angular_gates(tape, block, s_rows, dot, vnorm, f)?;
            let ds = tape.add(a_ss, tape.mul(a_sv, dot)?)?;
            accumulate(tape, &mut ds_ang, tape.scatter_add_rows(ds, idx.clone(), n)?)?;
            for axis in 0..3 {
                let dv = tape.mul(a_vv, uv[axis])?;
                accumulate(tape, &mut dv_ang[axis], tape.scatter_add_rows(dv, idx.clone(), n)?)?;
            }
        }
    } else {
        match config.variant {
            Variant::HPNet => {}
            Variant::HVNet => {
                for (&el, idx) in nodes_by_element {
                    let key = RelationKey::Vertex { dst: el };
                    let block = layer
                        .angular
                        .get(&key)
                        .ok_or_else(|| vocab_error(&key, "angular"))?;
                    let s_rows = tape.gather_rows(s_rad, idx.clone())?;
                    let mut v_rows = v_rad;
                    for axis in 0..3 {
                        v_rows[axis] = tape.gather_rows(v_rad[axis], idx.clone())?;
                    }
                    let (dot, vnorm, uv) =
                        angular_invariants(tape, v_rows, block.mix_u, block.mix_v)?;
                    let (a_ss, a_sv, a_vv) = angular_gates(tape, block, s_rows, dot, vnorm, f)?;
                    let ds = tape.add(a_ss, tape.mul(a_sv, dot)?)?;
                    accumulate(tape, &mut ds_ang, tape.scatter_add_rows(ds, idx.clone(), n)?)?;
                    for axis in 0..3 {
                        let dv = tape.mul(a_vv, uv[axis])?;
                        accumulate(
                            tape,
                            &mut dv_ang[axis],
                            tape.scatter_add_rows(dv, idx.clone(), n)?,
                        )?;
                    }
                }
            }
            Variant::HTNet => {
                let comps = v_by_src.as_ref().expect("HTNet tracks source components");
                let elements: Vec<u32> = nodes_by_element.keys().copied().collect();
                for (&dst_el, idx) in nodes_by_element {
                    let s_rows = tape.gather_rows(s_rad, idx.clone())?;
                    for (ai, &el_a) in elements.iter().enumerate() {
                        for &el_c in &elements[ai..] {
                            let key = RelationKey::triad(dst_el, el_a, el_c);
                            let block = layer
                                .angular
                                .get(&key)
                                .ok_or_else(|| vocab_error(&key, "angular"))?;
                            // Vector features restricted to contributions
                            // from the source pair; the unordered pair is
                            // aggregated once.
                            let mut va = comps[&el_a];
                            for axis in 0..3 {
                                va[axis] = tape.gather_rows(va[axis], idx.clone())?;
                            }
                            let (v_in, vc) = if el_a == el_c {
                                (va, None)
                            } else {
                                let mut vc = comps[&el_c];
                                let mut v_in = va;
                                for axis in 0..3 {
                                    vc[axis] = tape.gather_rows(vc[axis], idx.clone())?;
                                    v_in[axis] = tape.add(va[axis], vc[axis])?;
                                }
                                (v_in, Some(vc))
                            };
                            let (dot, vnorm, _) =
                                angular_invariants(tape, v_in, block.mix_u, block.mix_v)?;
                            let (a_ss, a_sv, a_vv) =
                                angular_gates(tape, block, s_rows, dot, vnorm, f)?;
                            let ds = tape.add(a_ss, tape.mul(a_sv, dot)?)?;
                            accumulate(
                                tape,
                                &mut ds_ang,
                                tape.scatter_add_rows(ds, idx.clone(), n)?,
                            )?;
                            // The vector update distributes over the source
                            // components: a_vv . U(va + vc) splits exactly
                            // into per-component terms.
                            let mut sources = vec![(el_a, va)];
                            if let Some(vc) = vc {
                                sources.push((el_c, vc));
                            }
                            for (el, v_comp_rows) in sources {
                                let slots =
                                    dv_ang_by_src.entry(el).or_insert([None, None, None]);
                                for axis in 0..3 {
                                    let u_comp = tape.matmul(v_comp_rows[axis], block.mix_u)?;
                                    let dv = tape.mul(a_vv, u_comp)?;
                                    let scattered =
                                        tape.scatter_add_rows(dv, idx.clone(), n)?;
                                    accumulate(tape, &mut dv_ang[axis], scattered)?;
                                    accumulate(tape, &mut slots[axis], scattered)?;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    let s_out = match ds_ang {
        Some(d) => tape.add(s_rad, d)?,
        None => s_rad,
    };
    let mut v_out = v_rad;
    for axis in 0..3 {
        if let Some(d) = dv_ang[axis] {
            v_out[axis] = tape.add(v_rad[axis], d)?;
        }
    }
    if let Some(by_src) = &mut v_by_src {
        for (el, slots) in dv_ang_by_src {
            let comp = by_src.get_mut(&el).expect("tracked element");
            for axis in 0..3 {
                if let Some(d) = slots[axis] {
                    comp[axis] = tape.add(comp[axis], d)?;
                }
            }
        }
    }

    Ok(NodeState {
        s: s_out,
        v: v_out,
        v_by_src,
    })
}

/// Everything the caller needs from one forward pass.
pub struct ForwardResult {
    /// `[n, 3]` differentiable position leaf.
    pub positions: Var,
    /// `[n_frames, 1]` predicted energies in eV.
    pub frame_energy: Var,
    /// `[n, 1]` per-atom contributions (reference plus readout).
    pub per_atom: Var,
}

fn check_vocabulary(batch: &GraphBatch, config: &ModelConfig) -> Result<()> {
    for &z in &batch.species {
        if !config.element_set.contains(&z) {
            let sym = elements::symbol(z).unwrap_or("?");
            return Err(Error::Vocabulary(format!(
                "element {sym} (Z={z}) is outside the model vocabulary {:?}",
                config.element_set
            )));
        }
    }
    Ok(())
}

/// Run the embedding and all HermConv layers; returns the final node state
/// and the position leaf. `untyped` expects `All`-keyed relations and
/// parameters (the homogeneous diagnostic path).
pub fn forward_features(
    tape: &Tape,
    batch: &GraphBatch,
    params: &ModelParams<Var>,
    config: &ModelConfig,
    untyped: bool,
) -> Result<(NodeState, Var)> {
    check_vocabulary(batch, config)?;
    let n = batch.n_nodes;
    let f = config.hidden;

    let positions = tape.variable(Tensor::new(
        vec![n, 3],
        batch.positions.iter().flatten().copied().collect(),
    ));

    let z_idx: Rc<Vec<usize>> = Rc::new(batch.species.iter().map(|&z| (z - 1) as usize).collect());
    let s = tape.gather_rows(params.embedding, z_idx)?;
    let zero = tape.constant(Tensor::zeros(n, f));
    let v = [zero, zero, zero];
    let v_by_src = if config.variant == Variant::HTNet && !untyped {
        let mut map = BTreeMap::new();
        for &el in batch.species.iter() {
            map.entry(el).or_insert_with(|| {
                let z = tape.constant(Tensor::zeros(n, f));
                [z, z, z]
            });
        }
        Some(map)
    } else {
        None
    };

    let mut nodes_by_element: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &z) in batch.species.iter().enumerate() {
        nodes_by_element.entry(z).or_default().push(i);
    }
    let nodes_by_element: BTreeMap<u32, Rc<Vec<usize>>> = nodes_by_element
        .into_iter()
        .map(|(k, v)| (k, Rc::new(v)))
        .collect();

    let mut state = NodeState { s, v, v_by_src };
    for layer in &params.layers {
        state = hermconv_layer(
            tape,
            &state,
            batch,
            layer,
            config,
            positions,
            &nodes_by_element,
            untyped,
        )?;
    }
    Ok((state, positions))
}

/// Full forward pass: features, per-atom readout with reference offsets,
/// and per-frame sum pooling.
pub fn forward(
    tape: &Tape,
    batch: &GraphBatch,
    params: &ModelParams<Var>,
    config: &ModelConfig,
    untyped: bool,
) -> Result<ForwardResult> {
    let (state, positions) = forward_features(tape, batch, params, config, untyped)?;
    let readout = mlp2(tape, &params.readout1, &params.readout2, state.s)?;
    let z_idx: Rc<Vec<usize>> = Rc::new(batch.species.iter().map(|&z| (z - 1) as usize).collect());
    let reference = tape.gather_rows(params.reference, z_idx)?;
    let per_atom = tape.add(readout, reference)?;
    let frame_energy = tape.scatter_add_rows(
        per_atom,
        Rc::new(batch.frame_of_node.clone()),
        batch.n_frames,
    )?;
    Ok(ForwardResult {
        positions,
        frame_energy,
        per_atom,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::init_params;
    use crate::tensor;

    fn bind(tape: &Tape, params: &ModelParams<Tensor>) -> ModelParams<Var> {
        params.map(|t| tape.variable(t.clone()))
    }

    fn small_config(variant: Variant, elements: Vec<u32>) -> ModelConfig {
        let mut c = ModelConfig::new(variant, elements);
        c.hidden = 4;
        c.layers = 2;
        c.r_cut = 5.0;
        c
    }

    #[test]
    fn isolated_node_state_unchanged_by_radial() {
        // No inbound edges: the whole layer reduces to the angular
        // self-gate; with zeroed gate MLPs the state is untouched.
        let config = small_config(Variant::HVNet, vec![1]);
        let mut params = init_params(&config, 0);
        for layer in &mut params.layers {
            for block in layer.angular.values_mut() {
                block.gate2.weight = Tensor::zeros(config.hidden, 3 * config.hidden);
                block.gate2.bias = Some(Tensor::zeros(1, 3 * config.hidden));
            }
        }
        let s = AtomicStructure::molecule(vec![1], vec![[0.0; 3]]).unwrap();
        let batch = batch_graphs(&[&s], config.r_cut, Some(DecomposeVariant::Vertex)).unwrap();
        let tape = Tape::new();
        let bound = bind(&tape, &params);
        let (state, _) = forward_features(&tape, &batch, &bound, &config, false).unwrap();
        let s0 = tape.to_tensor(bound.embedding);
        let got = tape.to_tensor(state.s);
        assert_eq!(got.data(), tensor::gather_rows(&s0, &[0]).unwrap().data());
        for axis in 0..3 {
            assert!(tape.with_value(state.v[axis], |t| t.iter().all(|&x| x == 0.0)));
        }
    }

    #[test]
    fn edge_exactly_at_cutoff_contributes_nothing() {
        let config = small_config(Variant::HVNet, vec![1]);
        let params = init_params(&config, 1);
        let pair =
            AtomicStructure::molecule(vec![1, 1], vec![[0.0; 3], [0.0, 0.0, 5.0]]).unwrap();
        let lone = AtomicStructure::molecule(vec![1], vec![[0.0; 3]]).unwrap();

        let run = |s: &AtomicStructure| -> Tensor {
            let batch = batch_graphs(&[s], config.r_cut, Some(DecomposeVariant::Vertex)).unwrap();
            assert!(batch.relations.values().map(EdgeSet::len).sum::<usize>() > 0 || s.n_atoms() == 1);
            let tape = Tape::new();
            let bound = bind(&tape, &params);
            let (state, _) = forward_features(&tape, &batch, &bound, &config, false).unwrap();
            tape.to_tensor(state.s)
        };
        let pair_s = run(&pair);
        let lone_s = run(&lone);
        // both atoms carry exactly the single-atom state: the r = r_cut edge
        // is present in the graph but its filter weight is exactly zero
        for row in 0..2 {
            for c in 0..config.hidden {
                assert_eq!(pair_s.at(row, c).to_bits(), lone_s.at(0, c).to_bits());
            }
        }
    }

    #[test]
    fn zeroed_phi_keeps_state_fixed_through_radial() {
        let mut config = small_config(Variant::HPNet, vec![1]);
        config.layers = 1;
        let mut params = init_params(&config, 2);
        for block in params.layers[0].radial.values_mut() {
            block.phi2.weight = Tensor::zeros(config.hidden, 3 * config.hidden);
            block.phi2.bias = Some(Tensor::zeros(1, 3 * config.hidden));
        }
        let s =
            AtomicStructure::molecule(vec![1, 1], vec![[0.0; 3], [0.0, 0.0, 1.0]]).unwrap();
        let batch = batch_graphs(&[&s], config.r_cut, Some(DecomposeVariant::Pair)).unwrap();
        let tape = Tape::new();
        let bound = bind(&tape, &params);
        let (state, _) = forward_features(&tape, &batch, &bound, &config, false).unwrap();
        let emb = tape.to_tensor(bound.embedding);
        let got = tape.to_tensor(state.s);
        for row in 0..2 {
            for c in 0..config.hidden {
                assert_eq!(got.at(row, c), emb.at(0, c));
            }
        }
    }

    #[test]
    fn vocabulary_mismatch_is_reported() {
        let config = small_config(Variant::HVNet, vec![1, 6, 7, 8]);
        let params = init_params(&config, 3);
        let s = AtomicStructure::molecule(vec![9], vec![[0.0; 3]]).unwrap();
        let batch = batch_graphs(&[&s], config.r_cut, Some(DecomposeVariant::Vertex)).unwrap();
        let tape = Tape::new();
        let bound = bind(&tape, &params);
        let err = forward_features(&tape, &batch, &bound, &config, false).unwrap_err();
        assert!(matches!(err, Error::Vocabulary(_)), "{err}");
    }

    #[test]
    fn angular_invariants_sweep_cos_theta() {
        // Two unit edges at angle theta summed into one vector feature:
        // <v, v> per channel equals |e1 + e2|^2 = 2 + 2 cos(theta).
        let tape = Tape::new();
        let identity = tape.constant(Tensor::matrix(1, 1, &[1.0]));
        for (theta, expect) in [(0.0, 4.0), (std::f64::consts::FRAC_PI_2, 2.0), (std::f64::consts::PI, 0.0)]
        {
            let e1 = [1.0, 0.0, 0.0];
            let e2 = [theta.cos(), theta.sin(), 0.0];
            let v_rows = [
                tape.variable(Tensor::matrix(1, 1, &[e1[0] + e2[0]])),
                tape.variable(Tensor::matrix(1, 1, &[e1[1] + e2[1]])),
                tape.variable(Tensor::matrix(1, 1, &[e1[2] + e2[2]])),
            ];
            let (dot, _, _) = angular_invariants(&tape, v_rows, identity, identity).unwrap();
            assert!(
                (tape.item(dot) - expect).abs() < 1e-12,
                "theta={theta}: got {} want {expect}",
                tape.item(dot)
            );
        }
    }

    #[test]
    fn angular_invariants_zero_vector() {
        let tape = Tape::new();
        let identity = tape.constant(Tensor::matrix(1, 1, &[1.0]));
        let zero = tape.constant(Tensor::zeros(2, 1));
        let (dot, vnorm, _) = angular_invariants(&tape, [zero, zero, zero], identity, identity).unwrap();
        assert!(tape.with_value(dot, |t| t.iter().all(|&x| x == 0.0)));
        // the norm guard leaves sqrt(eps), not zero
        assert!(tape.with_value(vnorm, |t| t.iter().all(|&x| x == NORM_EPS.sqrt())));
    }
}
