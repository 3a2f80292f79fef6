//! Model configuration and learnable parameters.
//!
//! [`ModelParams`] is generic over its leaf type: `ModelParams<Tensor>` is
//! the resting state (checkpoints, optimizer), `ModelParams<Var>` is the
//! same structure bound onto a tape for one forward/backward pass.

use std::collections::BTreeMap;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

use crate::elements::MAX_Z;
use crate::error::{Error, Result};
use crate::graph::RelationKey;
use crate::tensor::Tensor;

/// HermNet variant: how sub-network parameters are keyed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Radial and angular blocks keyed by destination element.
    HVNet,
    /// Radial blocks keyed by ordered element pair; no angular stage.
    HPNet,
    /// Radial blocks keyed by destination element, angular blocks by
    /// destination plus unordered source pair.
    HTNet,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::HVNet => "hvnet",
            Variant::HPNet => "hpnet",
            Variant::HTNet => "htnet",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        match s.to_ascii_lowercase().as_str() {
            "hvnet" => Some(Variant::HVNet),
            "hpnet" => Some(Variant::HPNet),
            "htnet" => Some(Variant::HTNet),
            _ => None,
        }
    }
}

/// Diagnostic fault injection for the self-check suite. `None` in all real
/// use; the other variants re-create known bug classes so the invariant
/// checks can demonstrate they catch them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Flip the sign of r_vec on edges whose x component is positive: a
    /// frame-dependent sign convention bug. Breaks rotation equivariance.
    FlipRvecX,
    /// Halve the cosine cutoff argument so f_cut(r_cut) = 1/2 instead of 0.
    /// Breaks smoothness at the cutoff.
    BluntCutoff,
}

/// Architecture hyperparameters plus the element vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Hidden width F.
    pub hidden: usize,
    /// Number of HermConv layers L.
    pub layers: usize,
    /// Radial basis size.
    pub n_rbf: usize,
    /// Cutoff radius in angstrom.
    pub r_cut: f64,
    /// Sorted distinct atomic numbers the model knows.
    pub element_set: Vec<u32>,
    /// Self-check fault hook; never serialized.
    pub fault: Fault,
}

impl ModelConfig {
    pub fn new(variant: Variant, element_set: Vec<u32>) -> Self {
        let mut element_set = element_set;
        element_set.sort_unstable();
        element_set.dedup();
        ModelConfig {
            variant,
            hidden: 128,
            layers: 3,
            n_rbf: 30,
            r_cut: 5.0,
            element_set,
            fault: Fault::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers == 0 || self.n_rbf == 0 {
            return Err(Error::Structure(
                "hidden, layers, and n_rbf must be at least 1".into(),
            ));
        }
        if self.r_cut <= 0.0 {
            return Err(Error::Structure("r_cut must be positive".into()));
        }
        if self.element_set.is_empty() {
            return Err(Error::Structure("element set is empty".into()));
        }
        if let Some(&z) = self.element_set.iter().find(|&&z| !(1..=MAX_Z).contains(&z)) {
            return Err(Error::Structure(format!("element {z} out of range")));
        }
        Ok(())
    }
}

/// One linear layer; `weight` is `[in, out]`, `bias` is `[1, out]`.
#[derive(Debug, Clone)]
pub struct Dense<T> {
    pub weight: T,
    pub bias: Option<T>,
}

/// Parameters of the radial message stage for one relation: the source
/// feature MLP phi (F -> F -> 3F) and the bias-free distance filter
/// (n_rbf -> 3F). The filter has no bias so the full edge weight vanishes
/// smoothly at the cutoff together with the radial basis.
#[derive(Debug, Clone)]
pub struct RadialBlock<T> {
    pub phi1: Dense<T>,
    pub phi2: Dense<T>,
    pub filter: Dense<T>,
}

/// Parameters of the angular stage for one relation: two bias-free channel
/// mixers (bias would break rotational covariance of the vector features)
/// and the gate MLP (3F -> F -> 3F).
#[derive(Debug, Clone)]
pub struct AngularBlock<T> {
    pub mix_u: T,
    pub mix_v: T,
    pub gate1: Dense<T>,
    pub gate2: Dense<T>,
}

#[derive(Debug, Clone, Default)]
pub struct LayerParams<T> {
    pub radial: BTreeMap<RelationKey, RadialBlock<T>>,
    pub angular: BTreeMap<RelationKey, AngularBlock<T>>,
}

/// All learnable weights. Keyed blocks encode the sharing scheme of each
/// variant; `reference` holds the per-element energy offsets in eV.
#[derive(Debug, Clone)]
pub struct ModelParams<T> {
    /// `[118, F]` species embedding, row Z-1.
    pub embedding: T,
    /// `[118, 1]` per-element reference energies.
    pub reference: T,
    pub layers: Vec<LayerParams<T>>,
    pub readout1: Dense<T>,
    pub readout2: Dense<T>,
}

impl<T> Dense<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Dense<U> {
        Dense {
            weight: f(&self.weight),
            bias: self.bias.as_ref().map(|b| f(b)),
        }
    }

    fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a T)) {
        f(format!("{prefix}.weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(format!("{prefix}.bias"), b);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut impl FnMut(String, &'a mut T)) {
        f(format!("{prefix}.weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(format!("{prefix}.bias"), b);
        }
    }
}

impl<T> ModelParams<T> {
    /// Rebuild the container with a new leaf type (e.g. bind tensors onto a
    /// tape). Traversal order matches [`ModelParams::visit`].
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> ModelParams<U> {
        let f = &mut f;
        ModelParams {
            embedding: f(&self.embedding),
            reference: f(&self.reference),
            layers: self
                .layers
                .iter()
                .map(|layer| LayerParams {
                    radial: layer
                        .radial
                        .iter()
                        .map(|(k, b)| {
                            (
                                *k,
                                RadialBlock {
                                    phi1: b.phi1.map(f),
                                    phi2: b.phi2.map(f),
                                    filter: b.filter.map(f),
                                },
                            )
                        })
                        .collect(),
                    angular: layer
                        .angular
                        .iter()
                        .map(|(k, b)| {
                            (
                                *k,
                                AngularBlock {
                                    mix_u: f(&b.mix_u),
                                    mix_v: f(&b.mix_v),
                                    gate1: b.gate1.map(f),
                                    gate2: b.gate2.map(f),
                                },
                            )
                        })
                        .collect(),
                })
                .collect(),
            readout1: self.readout1.map(f),
            readout2: self.readout2.map(f),
        }
    }

    /// Deterministic named traversal of every leaf.
    pub fn visit<'a>(&'a self, mut f: impl FnMut(String, &'a T)) {
        let f = &mut f;
        f("embedding".into(), &self.embedding);
        f("reference".into(), &self.reference);
        for (i, layer) in self.layers.iter().enumerate() {
            for (key, block) in &layer.radial {
                let p = format!("layers.{i}.radial.{}", key.label());
                block.phi1.visit(&format!("{p}.phi1"), f);
                block.phi2.visit(&format!("{p}.phi2"), f);
                block.filter.visit(&format!("{p}.filter"), f);
            }
            for (key, block) in &layer.angular {
                let p = format!("layers.{i}.angular.{}", key.label());
                f(format!("{p}.mix_u"), &block.mix_u);
                f(format!("{p}.mix_v"), &block.mix_v);
                block.gate1.visit(&format!("{p}.gate1"), f);
                block.gate2.visit(&format!("{p}.gate2"), f);
            }
        }
        self.readout1.visit("readout1", f);
        self.readout2.visit("readout2", f);
    }

    /// Mutable counterpart of [`ModelParams::visit`], same order.
    pub fn visit_mut<'a>(&'a mut self, mut f: impl FnMut(String, &'a mut T)) {
        let f = &mut f;
        f("embedding".into(), &mut self.embedding);
        f("reference".into(), &mut self.reference);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            for (key, block) in &mut layer.radial {
                let p = format!("layers.{i}.radial.{}", key.label());
                block.phi1.visit_mut(&format!("{p}.phi1"), f);
                block.phi2.visit_mut(&format!("{p}.phi2"), f);
                block.filter.visit_mut(&format!("{p}.filter"), f);
            }
            for (key, block) in &mut layer.angular {
                let p = format!("layers.{i}.angular.{}", key.label());
                f(format!("{p}.mix_u"), &mut block.mix_u);
                f(format!("{p}.mix_v"), &mut block.mix_v);
                block.gate1.visit_mut(&format!("{p}.gate1"), f);
                block.gate2.visit_mut(&format!("{p}.gate2"), f);
            }
        }
        self.readout1.visit_mut("readout1", f);
        self.readout2.visit_mut("readout2", f);
    }

    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        self.visit(|name, t| out.push((name, t)));
        out
    }
}

/// Radial relation keys the variant allocates for an element vocabulary.
pub fn radial_keys(variant: Variant, elements: &[u32]) -> Vec<RelationKey> {
    match variant {
        Variant::HVNet | Variant::HTNet => elements
            .iter()
            .map(|&dst| RelationKey::Vertex { dst })
            .collect(),
        Variant::HPNet => elements
            .iter()
            .flat_map(|&src| elements.iter().map(move |&dst| RelationKey::Pair { src, dst }))
            .collect(),
    }
}

/// Angular relation keys the variant allocates (empty for HPNet).
pub fn angular_keys(variant: Variant, elements: &[u32]) -> Vec<RelationKey> {
    match variant {
        Variant::HPNet => Vec::new(),
        Variant::HVNet => elements
            .iter()
            .map(|&dst| RelationKey::Vertex { dst })
            .collect(),
        Variant::HTNet => elements
            .iter()
            .flat_map(|&dst| {
                elements.iter().enumerate().flat_map(move |(i, &a)| {
                    elements[i..].iter().map(move |&c| RelationKey::triad(dst, a, c))
                })
            })
            .collect(),
    }
}

fn glorot(rng: &mut StdRng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::new(
        vec![rows, cols],
        (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect(),
    )
}

fn dense(rng: &mut StdRng, inp: usize, out: usize, bias: bool) -> Dense<Tensor> {
    Dense {
        weight: glorot(rng, inp, out),
        bias: bias.then(|| Tensor::zeros(1, out)),
    }
}

fn radial_block(rng: &mut StdRng, f: usize, n_rbf: usize) -> RadialBlock<Tensor> {
    RadialBlock {
        phi1: dense(rng, f, f, true),
        phi2: dense(rng, f, 3 * f, true),
        filter: dense(rng, n_rbf, 3 * f, false),
    }
}

fn angular_block(rng: &mut StdRng, f: usize) -> AngularBlock<Tensor> {
    AngularBlock {
        mix_u: glorot(rng, f, f),
        mix_v: glorot(rng, f, f),
        gate1: dense(rng, 3 * f, f, true),
        gate2: dense(rng, f, 3 * f, true),
    }
}

/// Fresh parameters. The final readout layer starts at zero so an untrained
/// model predicts the bare reference-energy sum.
pub fn init_params(config: &ModelConfig, seed: u64) -> ModelParams<Tensor> {
    let mut rng = StdRng::seed_from_u64(seed);
    let f = config.hidden;
    let normal = StandardNormal;
    let embedding = Tensor::new(
        vec![MAX_Z as usize, f],
        (0..MAX_Z as usize * f)
            .map(|_| normal.sample(&mut rng))
            .collect(),
    );
    let layers = (0..config.layers)
        .map(|_| LayerParams {
            radial: radial_keys(config.variant, &config.element_set)
                .into_iter()
                .map(|k| (k, radial_block(&mut rng, f, config.n_rbf)))
                .collect(),
            angular: angular_keys(config.variant, &config.element_set)
                .into_iter()
                .map(|k| (k, angular_block(&mut rng, f)))
                .collect(),
        })
        .collect();
    ModelParams {
        embedding,
        reference: Tensor::zeros(MAX_Z as usize, 1),
        layers,
        readout1: dense(&mut rng, f, f, true),
        readout2: Dense {
            weight: Tensor::zeros(f, 1),
            bias: Some(Tensor::zeros(1, 1)),
        },
    }
}
