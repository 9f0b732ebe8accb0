//! SchNet-style reference backbone and the interface variants consume.
//!
//! Parameter names (prefix is `backbone` or `second_backbone`):
//!
//! | name | shape |
//! |---|---|
//! | `{p}.embed.atom` | `[100, H]`, row `z - 1` |
//! | `{p}.embed.tag` | `[3, H]` (only with tag embeddings) |
//! | `{p}.block{l}.w1.weight` | `[H, H]` |
//! | `{p}.block{l}.filter.0.{weight,bias}` | `[K, H]`, `[H]` |
//! | `{p}.block{l}.filter.1.{weight,bias}` | `[H, H]`, `[H]` |
//! | `{p}.block{l}.w3.{weight,bias}` | `[H, H]`, `[H]` |
//! | `{p}.block{l}.w2.{weight,bias}` | `[H, H]`, `[H]` |
//! | `{p}.out.0.{weight,bias}` | `[H, H/2]`, `[H/2]` |
//! | `{p}.out.1.{weight,bias}` | `[H/2, 1]`, `[1]` (scalar output only) |

use serde::{Deserialize, Serialize};

use crate::batch::GraphBatch;
use crate::error::{Error, Result};
use crate::params::{Bindings, Initializer, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

pub const MAX_ATOMIC_NUMBER: u32 = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub hidden_dim: usize,
    pub num_interactions: usize,
    pub rbf_count: usize,
    /// Gaussian width, Å⁻².
    pub rbf_gamma: f64,
    /// Å.
    pub cutoff: f64,
    pub use_tag_embedding: bool,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            hidden_dim: 128,
            num_interactions: 4,
            rbf_count: 50,
            rbf_gamma: 10.0,
            cutoff: crate::graph::DEFAULT_CUTOFF,
            use_tag_embedding: true,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim < 4 || !self.hidden_dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "hidden_dim must be even and >= 4, got {}",
                self.hidden_dim
            )));
        }
        if self.rbf_count < 2 {
            return Err(Error::Config(format!("rbf_count must be >= 2, got {}", self.rbf_count)));
        }
        if self.num_interactions < 1 {
            return Err(Error::Config("num_interactions must be >= 1".into()));
        }
        if !(self.cutoff > 0.0) || !(self.rbf_gamma > 0.0) {
            return Err(Error::Config("cutoff and rbf_gamma must be positive".into()));
        }
        Ok(())
    }

    pub fn half_dim(&self) -> usize {
        self.hidden_dim / 2
    }
}

/// Gaussian expansion `exp(−γ (d − μ_k)²)` with centers evenly spaced on `[0, cutoff]`.
pub fn rbf_expand(distance: f64, config: &BackboneConfig) -> Tensor {
    let k = config.rbf_count;
    let mut out = Vec::with_capacity(k);
    push_rbf(&mut out, distance, config);
    Tensor::new(vec![k], out).expect("gaussians are finite")
}

fn push_rbf(out: &mut Vec<f64>, d: f64, config: &BackboneConfig) {
    let step = config.cutoff / (config.rbf_count - 1) as f64;
    for k in 0..config.rbf_count {
        let diff = d - k as f64 * step;
        out.push((-config.rbf_gamma * diff * diff).exp());
    }
}

/// Smooth cosine envelope, 1 at d = 0 and 0 at the cutoff.
pub fn cosine_cutoff(d: f64, cutoff: f64) -> f64 {
    if d >= cutoff {
        0.0
    } else {
        0.5 * ((std::f64::consts::PI * d / cutoff).cos() + 1.0)
    }
}

/// Which output projections a backbone owns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputKind {
    Scalar,
    Hidden,
}

/// Embedding / interaction / output stages of a geometric GNN.
///
/// Interaction updates return the non-residual part `F(h)`; callers add the
/// residual (see [`interaction_block`]) or combine it further.
pub trait Backbone {
    /// Edge features computed once per batch and shared by all layers.
    type Edges;

    fn config(&self) -> &BackboneConfig;
    fn register(&self, store: &mut ParamStore, init: &mut Initializer, output: OutputKind);
    fn prepare(&self, graph: &GraphBatch) -> Self::Edges;
    fn embed(&self, tape: &mut Tape, p: &Bindings, graph: &GraphBatch) -> Result<Var>;
    fn interaction_update(
        &self,
        layer: usize,
        tape: &mut Tape,
        p: &Bindings,
        h: Var,
        graph: &GraphBatch,
        edges: &Self::Edges,
    ) -> Result<Var>;
    fn output_scalar(&self, tape: &mut Tape, p: &Bindings, h: Var) -> Result<Var>;
    fn output_hidden(&self, tape: &mut Tape, p: &Bindings, h: Var) -> Result<Var>;
}

/// `h + F(h)`.
pub fn interaction_block<B: Backbone>(
    backbone: &B,
    layer: usize,
    tape: &mut Tape,
    p: &Bindings,
    h: Var,
    graph: &GraphBatch,
    edges: &B::Edges,
) -> Result<Var> {
    let delta = backbone.interaction_update(layer, tape, p, h, graph, edges)?;
    tape.add(h, delta)
}

/// Embedding followed by every interaction block.
pub fn encode<B: Backbone>(backbone: &B, tape: &mut Tape, p: &Bindings, graph: &GraphBatch) -> Result<Var> {
    let edges = backbone.prepare(graph);
    let mut h = backbone.embed(tape, p, graph)?;
    for layer in 0..backbone.config().num_interactions {
        h = interaction_block(backbone, layer, tape, p, h, graph, &edges)?;
    }
    Ok(h)
}

#[derive(Debug, Clone)]
pub struct SchNet {
    config: BackboneConfig,
    prefix: String,
}

/// Gaussian-expanded distances and cutoff envelope per edge.
#[derive(Debug, Clone)]
pub struct SchNetEdges {
    pub rbf: Tensor,
    pub envelope: Vec<f64>,
}

impl SchNet {
    pub fn new(config: BackboneConfig, prefix: impl Into<String>) -> Self {
        SchNet {
            config,
            prefix: prefix.into(),
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    fn name(&self, rest: &str) -> String {
        format!("{}.{}", self.prefix, rest)
    }

    fn dense(&self, tape: &mut Tape, p: &Bindings, x: Var, name: &str, bias: bool) -> Result<Var> {
        let w = p.get(&self.name(&format!("{name}.weight")))?;
        let b = if bias {
            Some(p.get(&self.name(&format!("{name}.bias")))?)
        } else {
            None
        };
        tape.linear(x, w, b)
    }
}

impl Backbone for SchNet {
    type Edges = SchNetEdges;

    fn config(&self) -> &BackboneConfig {
        &self.config
    }

    fn register(&self, store: &mut ParamStore, init: &mut Initializer, output: OutputKind) {
        let c = &self.config;
        let (h, k, half) = (c.hidden_dim, c.rbf_count, c.half_dim());
        store.insert(self.name("embed.atom"), init.embedding(MAX_ATOMIC_NUMBER as usize, h));
        if c.use_tag_embedding {
            store.insert(self.name("embed.tag"), init.embedding(3, h));
        }
        for l in 0..c.num_interactions {
            let b = format!("block{l}");
            store.insert(self.name(&format!("{b}.w1.weight")), init.glorot(h, h));
            store.insert(self.name(&format!("{b}.filter.0.weight")), init.glorot(k, h));
            store.insert(self.name(&format!("{b}.filter.0.bias")), init.zeros(h));
            store.insert(self.name(&format!("{b}.filter.1.weight")), init.glorot(h, h));
            store.insert(self.name(&format!("{b}.filter.1.bias")), init.zeros(h));
            store.insert(self.name(&format!("{b}.w3.weight")), init.glorot(h, h));
            store.insert(self.name(&format!("{b}.w3.bias")), init.zeros(h));
            // zero so every block starts as the identity map
            store.insert(self.name(&format!("{b}.w2.weight")), Tensor::zeros(&[h, h]));
            store.insert(self.name(&format!("{b}.w2.bias")), init.zeros(h));
        }
        store.insert(self.name("out.0.weight"), init.glorot(h, half));
        store.insert(self.name("out.0.bias"), init.zeros(half));
        if output == OutputKind::Scalar {
            store.insert(self.name("out.1.weight"), init.glorot(half, 1));
            store.insert(self.name("out.1.bias"), init.zeros(1));
        }
    }

    fn prepare(&self, graph: &GraphBatch) -> SchNetEdges {
        let k = self.config.rbf_count;
        let mut rbf = Vec::with_capacity(graph.num_edges() * k);
        for &d in &graph.distance {
            push_rbf(&mut rbf, d, &self.config);
        }
        SchNetEdges {
            rbf: Tensor::matrix(graph.num_edges(), k, rbf).expect("gaussians are finite"),
            envelope: graph
                .distance
                .iter()
                .map(|&d| cosine_cutoff(d, self.config.cutoff))
                .collect(),
        }
    }

    fn embed(&self, tape: &mut Tape, p: &Bindings, graph: &GraphBatch) -> Result<Var> {
        if let Some((atom, &z)) = graph
            .atomic_numbers
            .iter()
            .enumerate()
            .find(|(_, &z)| z == 0 || z > MAX_ATOMIC_NUMBER)
        {
            return Err(Error::AtomicNumber { atom, z });
        }
        let table = p.get(&self.name("embed.atom"))?;
        let rows = graph.atomic_numbers.iter().map(|&z| z as usize - 1).collect();
        let h = tape.gather_rows(table, rows)?;
        if !self.config.use_tag_embedding {
            return Ok(h);
        }
        let tag_table = p.get(&self.name("embed.tag"))?;
        let t = tape.gather_rows(tag_table, graph.tags.iter().map(|t| t.as_u8() as usize).collect())?;
        tape.add(h, t)
    }

    fn interaction_update(
        &self,
        layer: usize,
        tape: &mut Tape,
        p: &Bindings,
        h: Var,
        graph: &GraphBatch,
        edges: &SchNetEdges,
    ) -> Result<Var> {
        let b = format!("block{layer}");
        let rbf = tape.constant(edges.rbf.clone());
        let f = self.dense(tape, p, rbf, &format!("{b}.filter.0"), true)?;
        let f = tape.shifted_softplus(f);
        let f = self.dense(tape, p, f, &format!("{b}.filter.1"), true)?;
        let filter = tape.scale_rows(f, edges.envelope.clone())?;

        let x = self.dense(tape, p, h, &format!("{b}.w1"), false)?;
        let m = tape.gather_mul_scatter(x, filter, graph.src.clone(), graph.dst.clone(), graph.num_nodes())?;

        let v = self.dense(tape, p, m, &format!("{b}.w3"), true)?;
        let v = tape.shifted_softplus(v);
        self.dense(tape, p, v, &format!("{b}.w2"), true)
    }

    fn output_scalar(&self, tape: &mut Tape, p: &Bindings, h: Var) -> Result<Var> {
        let y = self.dense(tape, p, h, "out.0", true)?;
        let y = tape.shifted_softplus(y);
        self.dense(tape, p, y, "out.1", true)
    }

    fn output_hidden(&self, tape: &mut Tape, p: &Bindings, h: Var) -> Result<Var> {
        let y = self.dense(tape, p, h, "out.0", true)?;
        Ok(tape.shifted_softplus(y))
    }
}
