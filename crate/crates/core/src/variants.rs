//! The five prediction heads: the connected baseline and the four
//! disconnected architectures.
//!
//! | variant | graph | backbones | readout |
//! |---|---|---|---|
//! | `Connected` | full radius graph | one | per-atom scalar, sum |
//! | `DisconnectedBaseline` | no adsorbate↔catalyst edges | one | per-atom scalar, sum |
//! | `IndependentPooling` | disconnected | one, shared | per-atom hidden, pooled per component, concat, MLP |
//! | `IndependentBackbones` | disconnected | adsorbate and catalyst each own one | as above |
//! | `Attention` | disconnected + weighted cross edges | as above, with GAT exchange each layer | as above |
//!
//! Extra parameter names: `head.{i}.{weight,bias}` for the pooling head and,
//! per attention layer `l` and head `k`,
//! `attention.layer{l}.head{k}.{proj.weight,att_src,att_dst,att_edge,edge.weight,edge.bias}`,
//! `attention.layer{l}.value.weight` and `attention.layer{l}.norm_{ads,cat}.{weight,bias}`.
//! For two-backbone variants `backbone` encodes the adsorbate and
//! `second_backbone` the catalyst.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::backbone::{self, Backbone, BackboneConfig, OutputKind, SchNet, SchNetEdges};
use crate::batch::{CrossBatch, GraphBatch, GraphOptions, SplitBatch, SystemGraph};
use crate::error::{Error, Result};
use crate::graph::DEFAULT_MAX_NEIGHBORS;
use crate::params::{Bindings, Initializer, ParamStore};
use crate::system::AtomicSystem;
use crate::tensor::{Tape, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VariantKind {
    Connected,
    DisconnectedBaseline,
    IndependentPooling,
    IndependentBackbones,
    Attention,
}

impl VariantKind {
    pub const ALL: [VariantKind; 5] = [
        VariantKind::Connected,
        VariantKind::DisconnectedBaseline,
        VariantKind::IndependentPooling,
        VariantKind::IndependentBackbones,
        VariantKind::Attention,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VariantKind::Connected => "Connected",
            VariantKind::DisconnectedBaseline => "DisconnectedBaseline",
            VariantKind::IndependentPooling => "IndependentPooling",
            VariantKind::IndependentBackbones => "IndependentBackbones",
            VariantKind::Attention => "Attention",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s)
    }

    pub fn is_disconnected(self) -> bool {
        self != VariantKind::Connected
    }

    /// Heads that pool per component and finish with an MLP.
    pub fn uses_pooling_head(self) -> bool {
        matches!(
            self,
            VariantKind::IndependentPooling | VariantKind::IndependentBackbones | VariantKind::Attention
        )
    }

    pub fn has_second_backbone(self) -> bool {
        matches!(self, VariantKind::IndependentBackbones | VariantKind::Attention)
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionConfig {
    pub edge_rbf_count: usize,
    pub heads: usize,
    pub leaky_slope: f64,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            edge_rbf_count: 16,
            heads: 1,
            leaky_slope: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub max_neighbors: usize,
    pub remove_tag0: bool,
    pub center_z_on_surface: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            max_neighbors: DEFAULT_MAX_NEIGHBORS,
            remove_tag0: true,
            center_z_on_surface: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub variant: VariantKind,
    #[serde(default)]
    pub backbone: BackboneConfig,
    #[serde(default)]
    pub second_backbone: Option<BackboneConfig>,
    #[serde(default)]
    pub head_mlp_dims: Vec<usize>,
    #[serde(default)]
    pub attention: AttentionConfig,
    #[serde(default)]
    pub graph: GraphConfig,
}

impl ModelSpec {
    /// Spec with the default head for `variant` and, where needed, a second
    /// backbone identical in shape to the first.
    pub fn new(variant: VariantKind, backbone: BackboneConfig) -> Self {
        let h = backbone.hidden_dim;
        ModelSpec {
            variant,
            second_backbone: variant.has_second_backbone().then(|| backbone.clone()),
            head_mlp_dims: if variant.uses_pooling_head() {
                vec![2 * (h / 2), h, 1]
            } else {
                Vec::new()
            },
            backbone,
            attention: AttentionConfig::default(),
            graph: GraphConfig::default(),
        }
    }

    /// Fills in fields a hand-written config may leave out.
    pub fn normalized(mut self) -> Self {
        if self.variant.has_second_backbone() && self.second_backbone.is_none() {
            self.second_backbone = Some(self.backbone.clone());
        }
        if self.variant.uses_pooling_head() && self.head_mlp_dims.is_empty() {
            let h = self.backbone.hidden_dim;
            self.head_mlp_dims = vec![2 * (h / 2), h, 1];
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        match (&self.second_backbone, self.variant.has_second_backbone()) {
            (Some(second), true) => {
                second.validate()?;
                if second.hidden_dim != self.backbone.hidden_dim || second.cutoff != self.backbone.cutoff {
                    return Err(Error::Config(
                        "second_backbone must share hidden_dim and cutoff with backbone".into(),
                    ));
                }
                if self.variant == VariantKind::Attention && second.num_interactions != self.backbone.num_interactions {
                    return Err(Error::Config(
                        "attention backbones need the same num_interactions".into(),
                    ));
                }
            }
            (None, false) => {}
            (Some(_), false) => {
                return Err(Error::Config(format!("{} takes no second_backbone", self.variant)));
            }
            (None, true) => return Err(Error::Config(format!("{} requires second_backbone", self.variant))),
        }
        if self.variant.uses_pooling_head() {
            let d = &self.head_mlp_dims;
            let pooled = 2 * self.backbone.half_dim();
            if d.len() < 2 || d[0] != pooled || *d.last().unwrap() != 1 || d.contains(&0) {
                return Err(Error::Config(format!(
                    "head_mlp_dims must start at {pooled} and end at 1, got {d:?}"
                )));
            }
        } else if !self.head_mlp_dims.is_empty() {
            return Err(Error::Config(format!("{} has no pooling head", self.variant)));
        }
        if self.variant == VariantKind::Attention {
            let a = &self.attention;
            if a.edge_rbf_count < 2 || a.heads == 0 || !self.backbone.hidden_dim.is_multiple_of(a.heads) {
                return Err(Error::Config(format!(
                    "attention needs edge_rbf_count >= 2 and heads dividing hidden_dim, got {a:?}"
                )));
            }
        }
        if self.graph.max_neighbors == 0 {
            return Err(Error::Config("max_neighbors must be >= 1".into()));
        }
        Ok(())
    }

    pub fn graph_options(&self) -> GraphOptions {
        GraphOptions {
            cutoff: self.backbone.cutoff,
            max_neighbors: self.graph.max_neighbors,
            remove_tag0: self.graph.remove_tag0,
            disconnect: self.variant.is_disconnected(),
            cross_edges: self.variant == VariantKind::Attention,
            center_z_on_surface: self.graph.center_z_on_surface,
        }
    }
}

/// Affine map from raw model output to eV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetNorm {
    pub mean: f64,
    pub std: f64,
}

impl Default for TargetNorm {
    fn default() -> Self {
        TargetNorm { mean: 0.0, std: 1.0 }
    }
}

impl TargetNorm {
    pub fn from_targets(targets: &[f64]) -> Self {
        if targets.is_empty() {
            return Self::default();
        }
        let n = targets.len() as f64;
        let mean = targets.iter().sum::<f64>() / n;
        let var = targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
        let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        TargetNorm { mean, std }
    }

    pub fn to_energy(&self, raw: f64) -> f64 {
        self.mean + self.std * raw
    }

    pub fn to_raw(&self, energy: f64) -> f64 {
        (energy - self.mean) / self.std
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    params: ParamStore,
    norm: TargetNorm,
}

impl Model {
    /// Freshly initialized parameters drawn from `seed`.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamStore::new();
        let mut init = Initializer::new(seed);
        let output = if spec.variant.uses_pooling_head() {
            OutputKind::Hidden
        } else {
            OutputKind::Scalar
        };
        let (first, second) = backbones(&spec);
        first.register(&mut params, &mut init, output);
        if let Some(second) = &second {
            second.register(&mut params, &mut init, output);
        }
        if spec.variant == VariantKind::Attention {
            register_attention(&spec, &mut params, &mut init);
        }
        if spec.variant.uses_pooling_head() {
            for (i, w) in spec.head_mlp_dims.windows(2).enumerate() {
                params.insert(format!("head.{i}.weight"), init.glorot(w[0], w[1]));
                params.insert(format!("head.{i}.bias"), init.zeros(w[1]));
            }
        }
        Ok(Model {
            spec,
            params,
            norm: TargetNorm::default(),
        })
    }

    pub fn from_parts(spec: ModelSpec, params: ParamStore, norm: TargetNorm) -> Result<Self> {
        spec.validate()?;
        let reference = Model::new(spec.clone(), 0)?;
        for (name, t) in reference.params.iter() {
            let got = params.get(name)?;
            if got.shape() != t.shape() {
                return Err(Error::Config(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        if params.len() != reference.params.len() {
            let extra: Vec<_> = params
                .names()
                .filter(|n| !reference.params.contains(n))
                .cloned()
                .collect();
            return Err(Error::Config(format!("unexpected parameters {extra:?}")));
        }
        Ok(Model { spec, params, norm })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn variant(&self) -> VariantKind {
        self.spec.variant
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn norm(&self) -> TargetNorm {
        self.norm
    }

    pub fn set_norm(&mut self, norm: TargetNorm) {
        self.norm = norm;
    }

    /// Graph creation for one system under this variant's rules.
    pub fn prepare(&self, system: &AtomicSystem) -> Result<SystemGraph> {
        if self.spec.variant.uses_pooling_head() {
            system.validate_adslab()?;
        } else {
            system.validate()?;
        }
        SystemGraph::build(system, &self.spec.graph_options())
    }

    /// Raw (normalized-unit) outputs, one row per graph.
    pub fn forward(&self, tape: &mut Tape, p: &Bindings, graphs: &[&SystemGraph]) -> Result<Var> {
        forward_spec(&self.spec, tape, p, graphs)
    }

    pub fn predict_graphs(&self, graphs: &[&SystemGraph]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let p = self.params.bind_with(&mut tape, false);
        let out = self.forward(&mut tape, &p, graphs)?;
        let raw = tape.value(out);
        if !raw.is_finite() {
            return Err(Error::NonFinite("model output".into()));
        }
        Ok(raw.data().iter().map(|&r| self.norm.to_energy(r)).collect())
    }

    pub fn predict_batch(&self, systems: &[AtomicSystem]) -> Result<Vec<f64>> {
        let graphs = systems.iter().map(|s| self.prepare(s)).collect::<Result<Vec<_>>>()?;
        self.predict_graphs(&graphs.iter().collect::<Vec<_>>())
    }

    /// Predicted energy in eV.
    pub fn predict(&self, system: &AtomicSystem) -> Result<f64> {
        let g = self.prepare(system)?;
        Ok(self.predict_graphs(&[&g])?[0])
    }
}

fn backbones(spec: &ModelSpec) -> (SchNet, Option<SchNet>) {
    (
        SchNet::new(spec.backbone.clone(), "backbone"),
        spec.second_backbone.clone().map(|c| SchNet::new(c, "second_backbone")),
    )
}

fn check_variant(model: &Model, want: VariantKind) -> Result<()> {
    if model.variant() != want {
        return Err(Error::Config(format!("model is {}, expected {want}", model.variant())));
    }
    Ok(())
}

/// Full radius graph → backbone → per-atom scalars → sum.
pub fn predict_connected(model: &Model, system: &AtomicSystem) -> Result<f64> {
    check_variant(model, VariantKind::Connected)?;
    model.predict(system)
}

/// Adsorbate↔catalyst edges removed → backbone → per-atom scalars → sum.
pub fn predict_disconnected_baseline(model: &Model, system: &AtomicSystem) -> Result<f64> {
    check_variant(model, VariantKind::DisconnectedBaseline)?;
    model.predict(system)
}

pub fn predict_independent_pooling(model: &Model, system: &AtomicSystem) -> Result<f64> {
    check_variant(model, VariantKind::IndependentPooling)?;
    model.predict(system)
}

pub fn predict_independent_backbones(model: &Model, system: &AtomicSystem) -> Result<f64> {
    check_variant(model, VariantKind::IndependentBackbones)?;
    model.predict(system)
}

pub fn predict_attention(model: &Model, system: &AtomicSystem) -> Result<f64> {
    check_variant(model, VariantKind::Attention)?;
    model.predict(system)
}

fn register_attention(spec: &ModelSpec, store: &mut ParamStore, init: &mut Initializer) {
    let h = spec.backbone.hidden_dim;
    let a = &spec.attention;
    let dh = h / a.heads;
    for l in 0..spec.backbone.num_interactions {
        let base = format!("attention.layer{l}");
        for k in 0..a.heads {
            let hp = format!("{base}.head{k}");
            store.insert(format!("{hp}.proj.weight"), init.glorot(h, dh));
            store.insert(format!("{hp}.att_src"), init.glorot(dh, 1));
            store.insert(format!("{hp}.att_dst"), init.glorot(dh, 1));
            store.insert(format!("{hp}.att_edge"), init.glorot(dh, 1));
            store.insert(format!("{hp}.edge.weight"), init.glorot(a.edge_rbf_count, dh));
            store.insert(format!("{hp}.edge.bias"), init.zeros(dh));
        }
        store.insert(format!("{base}.value.weight"), init.glorot(h, h));
        for part in ["ads", "cat"] {
            store.insert(format!("{base}.norm_{part}.weight"), init.ones(h));
            store.insert(format!("{base}.norm_{part}.bias"), init.zeros(h));
        }
    }
}

/// Raw outputs for `graphs` under `spec` with parameters bound in `p`.
pub fn forward_spec(spec: &ModelSpec, tape: &mut Tape, p: &Bindings, graphs: &[&SystemGraph]) -> Result<Var> {
    let (first, second) = backbones(spec);
    match spec.variant {
        VariantKind::Connected | VariantKind::DisconnectedBaseline => {
            let batch = GraphBatch::from_graphs(graphs);
            let h = backbone::encode(&first, tape, p, &batch)?;
            let per_atom = first.output_scalar(tape, p, h)?;
            tape.scatter_add(per_atom, batch.graph_id.clone(), batch.num_graphs)
        }
        VariantKind::IndependentPooling => {
            let batch = GraphBatch::from_graphs(graphs);
            let h = backbone::encode(&first, tape, p, &batch)?;
            let hidden = first.output_hidden(tape, p, h)?;
            let key: Vec<usize> = batch
                .graph_id
                .iter()
                .zip(&batch.tags)
                .map(|(&g, t)| 2 * g + usize::from(t.is_catalyst()))
                .collect();
            for g in 0..batch.num_graphs {
                let has = |cat: bool| key.contains(&(2 * g + usize::from(cat)));
                if !has(false) {
                    return Err(Error::EmptyComponent("adsorbate"));
                }
                if !has(true) {
                    return Err(Error::EmptyComponent("catalyst"));
                }
            }
            let pooled = tape.scatter_add(hidden, key, 2 * batch.num_graphs)?;
            let ads = tape.gather_rows(pooled, (0..batch.num_graphs).map(|g| 2 * g).collect())?;
            let cat = tape.gather_rows(pooled, (0..batch.num_graphs).map(|g| 2 * g + 1).collect())?;
            let z = tape.concat_cols(ads, cat)?;
            head_mlp(spec, tape, p, z)
        }
        VariantKind::IndependentBackbones => {
            let second = second.ok_or_else(|| Error::Config("missing second_backbone".into()))?;
            let batch = SplitBatch::from_graphs(graphs)?;
            let h_ads = backbone::encode(&first, tape, p, &batch.ads)?;
            let h_cat = backbone::encode(&second, tape, p, &batch.cat)?;
            pool_two(spec, tape, p, (&first, h_ads, &batch.ads), (&second, h_cat, &batch.cat))
        }
        VariantKind::Attention => {
            let second = second.ok_or_else(|| Error::Config("missing second_backbone".into()))?;
            let batch = SplitBatch::from_graphs(graphs)?;
            let ctx = AttentionContext::new(spec, &first, &second, &batch)?;
            let mut h_ads = first.embed(tape, p, &batch.ads)?;
            let mut h_cat = second.embed(tape, p, &batch.cat)?;
            for layer in 0..spec.backbone.num_interactions {
                (h_ads, h_cat) = attention_inter_layer(&ctx, layer, tape, p, h_ads, h_cat)?;
            }
            pool_two(spec, tape, p, (&first, h_ads, &batch.ads), (&second, h_cat, &batch.cat))
        }
    }
}

fn pool_two(
    spec: &ModelSpec,
    tape: &mut Tape,
    p: &Bindings,
    (bb_ads, h_ads, ads): (&SchNet, Var, &GraphBatch),
    (bb_cat, h_cat, cat): (&SchNet, Var, &GraphBatch),
) -> Result<Var> {
    let o_ads = bb_ads.output_hidden(tape, p, h_ads)?;
    let o_cat = bb_cat.output_hidden(tape, p, h_cat)?;
    let pa = tape.scatter_add(o_ads, ads.graph_id.clone(), ads.num_graphs)?;
    let pc = tape.scatter_add(o_cat, cat.graph_id.clone(), cat.num_graphs)?;
    let z = tape.concat_cols(pa, pc)?;
    head_mlp(spec, tape, p, z)
}

/// Dense layers over `(adsorbate ‖ catalyst)`, shifted softplus between them.
fn head_mlp(spec: &ModelSpec, tape: &mut Tape, p: &Bindings, mut z: Var) -> Result<Var> {
    let layers = spec.head_mlp_dims.len() - 1;
    for i in 0..layers {
        let w = p.get(&format!("head.{i}.weight"))?;
        let b = p.get(&format!("head.{i}.bias"))?;
        z = tape.linear(z, w, Some(b))?;
        if i + 1 < layers {
            z = tape.shifted_softplus(z);
        }
    }
    Ok(z)
}

/// Gaussian features of the cross-edge weights. Centers span
/// `[−z_max, z_max]` where `z_max` is the largest |weight| of the edge's own
/// system (at least 1 Å); the width equals the center spacing.
pub fn cross_edge_rbf(cross: &CrossBatch, count: usize) -> Tensor {
    let n_graphs = cross.graph.iter().max().map_or(0, |g| g + 1);
    let mut z_max = vec![1.0f64; n_graphs];
    for (&w, &g) in cross.weight.iter().zip(&cross.graph) {
        z_max[g] = z_max[g].max(w.abs());
    }
    let mut data = Vec::with_capacity(cross.len() * count);
    for (&w, &g) in cross.weight.iter().zip(&cross.graph) {
        let zm = z_max[g];
        let step = 2.0 * zm / (count - 1) as f64;
        for k in 0..count {
            let u = (w - (-zm + k as f64 * step)) / step;
            data.push((-u * u).exp());
        }
    }
    Tensor::matrix(cross.len(), count, data).expect("gaussians are finite")
}

/// Everything an attention layer needs besides the node states.
pub struct AttentionContext<'a> {
    pub spec: &'a ModelSpec,
    pub ads_backbone: &'a SchNet,
    pub cat_backbone: &'a SchNet,
    pub batch: &'a SplitBatch,
    pub ads_edges: SchNetEdges,
    pub cat_edges: SchNetEdges,
    pub cross_rbf: Tensor,
}

impl<'a> AttentionContext<'a> {
    pub fn new(
        spec: &'a ModelSpec,
        ads_backbone: &'a SchNet,
        cat_backbone: &'a SchNet,
        batch: &'a SplitBatch,
    ) -> Result<Self> {
        if batch.cross.is_empty() {
            return Err(Error::Config("attention layer needs cross edges".into()));
        }
        Ok(AttentionContext {
            spec,
            ads_backbone,
            cat_backbone,
            batch,
            ads_edges: ads_backbone.prepare(&batch.ads),
            cat_edges: cat_backbone.prepare(&batch.cat),
            cross_rbf: cross_edge_rbf(&batch.cross, spec.attention.edge_rbf_count),
        })
    }
}

/// One exchange layer: intra-component updates `F_A`, `F_B`, GAT-style
/// attention over the cross edges added onto `(F_A(h_ads) ‖ F_B(h_cat))`,
/// then `Norm(· + h)` per component.
pub fn attention_inter_layer(
    ctx: &AttentionContext<'_>,
    layer: usize,
    tape: &mut Tape,
    p: &Bindings,
    h_ads: Var,
    h_cat: Var,
) -> Result<(Var, Var)> {
    let batch = ctx.batch;
    let cross = &batch.cross;
    if cross.is_empty() {
        return Err(Error::Config("attention layer needs cross edges".into()));
    }
    let d_ads = ctx
        .ads_backbone
        .interaction_update(layer, tape, p, h_ads, &batch.ads, &ctx.ads_edges)?;
    let d_cat = ctx
        .cat_backbone
        .interaction_update(layer, tape, p, h_cat, &batch.cat, &ctx.cat_edges)?;
    let x = tape.concat_rows(d_ads, d_cat)?;
    let n_ads = batch.ads.num_nodes();
    let n = n_ads + batch.cat.num_nodes();

    let base = format!("attention.layer{layer}");
    let rbf = tape.constant(ctx.cross_rbf.clone());
    let mut heads_out: Option<Var> = None;
    for k in 0..ctx.spec.attention.heads {
        let hp = format!("{base}.head{k}");
        let wh = tape.matmul(x, p.get(&format!("{hp}.proj.weight"))?)?;
        let s_src = tape.matmul(wh, p.get(&format!("{hp}.att_src"))?)?;
        let s_dst = tape.matmul(wh, p.get(&format!("{hp}.att_dst"))?)?;
        let e = tape.linear(
            rbf,
            p.get(&format!("{hp}.edge.weight"))?,
            Some(p.get(&format!("{hp}.edge.bias"))?),
        )?;
        let s_edge = tape.matmul(e, p.get(&format!("{hp}.att_edge"))?)?;
        let ls = tape.gather_rows(s_src, cross.src.clone())?;
        let ld = tape.gather_rows(s_dst, cross.dst.clone())?;
        let logit = tape.add(ls, ld)?;
        let logit = tape.add(logit, s_edge)?;
        let logit = tape.leaky_relu(logit, ctx.spec.attention.leaky_slope);
        let alpha = tape.segment_softmax(logit, cross.dst.clone())?;
        let msg = tape.gather_rows(wh, cross.src.clone())?;
        let msg = tape.mul_col(msg, alpha)?;
        let agg = tape.scatter_add(msg, cross.dst.clone(), n)?;
        heads_out = Some(match heads_out {
            None => agg,
            Some(prev) => tape.concat_cols(prev, agg)?,
        });
    }
    let attended = tape.matmul(heads_out.expect("heads >= 1"), p.get(&format!("{base}.value.weight"))?)?;
    let combined = tape.add(x, attended)?;
    let c_ads = tape.slice_rows(combined, 0, n_ads)?;
    let c_cat = tape.slice_rows(combined, n_ads, n)?;
    let r_ads = tape.add(c_ads, h_ads)?;
    let r_cat = tape.add(c_cat, h_cat)?;
    let out_ads = tape.layer_norm(
        r_ads,
        p.get(&format!("{base}.norm_ads.weight"))?,
        p.get(&format!("{base}.norm_ads.bias"))?,
        LAYER_NORM_EPS,
    )?;
    let out_cat = tape.layer_norm(
        r_cat,
        p.get(&format!("{base}.norm_cat.weight"))?,
        p.get(&format!("{base}.norm_cat.bias"))?,
        LAYER_NORM_EPS,
    )?;
    Ok((out_ads, out_cat))
}

/// Parameters for the two backbones of `spec`, for building an
/// [`AttentionContext`] outside a full forward pass.
pub fn spec_backbones(spec: &ModelSpec) -> (SchNet, Option<SchNet>) {
    backbones(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::Tag;

    fn small_backbone() -> BackboneConfig {
        BackboneConfig {
            hidden_dim: 8,
            num_interactions: 2,
            rbf_count: 6,
            rbf_gamma: 1.5,
            cutoff: 5.0,
            use_tag_embedding: true,
        }
    }

    fn adslab() -> AtomicSystem {
        AtomicSystem::new(
            "s",
            vec![29, 29, 78, 8, 1],
            vec![
                [0.0, 0.0, 0.0],
                [2.5, 0.0, 0.1],
                [1.2, 2.2, -0.1],
                [1.0, 1.0, 2.0],
                [1.6, 1.4, 2.6],
            ],
            vec![Tag::Surface, Tag::Surface, Tag::Surface, Tag::Adsorbate, Tag::Adsorbate],
        )
        .unwrap()
    }

    #[test]
    fn variant_strings_round_trip() {
        for v in VariantKind::ALL {
            let s = serde_json::to_string(&v).unwrap();
            assert_eq!(s, format!("\"{}\"", v.as_str()));
            assert_eq!(VariantKind::parse(v.as_str()), Some(v));
        }
    }

    #[test]
    fn spec_invariants() {
        for v in VariantKind::ALL {
            ModelSpec::new(v, small_backbone()).validate().unwrap();
        }
        let mut s = ModelSpec::new(VariantKind::IndependentBackbones, small_backbone());
        s.second_backbone = None;
        assert!(s.validate().is_err());
        let mut s = ModelSpec::new(VariantKind::Connected, small_backbone());
        s.second_backbone = Some(small_backbone());
        assert!(s.validate().is_err());
        let mut s = ModelSpec::new(VariantKind::IndependentPooling, small_backbone());
        s.head_mlp_dims = vec![8, 8, 2];
        assert!(s.validate().is_err());
        s.head_mlp_dims = vec![6, 1];
        assert!(s.validate().is_err());
    }

    #[test]
    fn connected_equals_disconnected_on_single_component() {
        let cat_only = adslab().subset(&[0, 1, 2]);
        let mut a = Model::new(ModelSpec::new(VariantKind::Connected, small_backbone()), 3).unwrap();
        let b = Model::new(ModelSpec::new(VariantKind::DisconnectedBaseline, small_backbone()), 3).unwrap();
        assert_eq!(a.params(), b.params());
        assert_eq!(a.predict(&cat_only).unwrap(), b.predict(&cat_only).unwrap());
        // the normalization affine map is applied on top
        a.set_norm(TargetNorm { mean: 1.0, std: 2.0 });
        let raw = b.predict(&cat_only).unwrap();
        assert!((a.predict(&cat_only).unwrap() - (1.0 + 2.0 * raw)).abs() < 1e-12);
    }

    #[test]
    fn pooling_heads_reject_single_component() {
        let cat_only = adslab().subset(&[0, 1, 2]);
        for v in [
            VariantKind::IndependentPooling,
            VariantKind::IndependentBackbones,
            VariantKind::Attention,
        ] {
            let m = Model::new(ModelSpec::new(v, small_backbone()), 1).unwrap();
            assert!(m.predict(&cat_only).is_err(), "{v}");
        }
    }

    #[test]
    fn zero_head_weights_give_bias() {
        let mut m = Model::new(ModelSpec::new(VariantKind::IndependentPooling, small_backbone()), 2).unwrap();
        let last = m.spec().head_mlp_dims.len() - 2;
        m.params_mut()
            .get_mut(&format!("head.{last}.weight"))
            .unwrap()
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = 0.0);
        m.params_mut().get_mut(&format!("head.{last}.bias")).unwrap().data_mut()[0] = -1.25;
        assert_eq!(m.predict(&adslab()).unwrap(), -1.25);
        let mut other = adslab();
        other.positions[4][2] += 1.0;
        assert_eq!(m.predict(&other).unwrap(), -1.25);
    }

    #[test]
    fn predict_fns_check_variant() {
        let m = Model::new(ModelSpec::new(VariantKind::Connected, small_backbone()), 2).unwrap();
        assert!(predict_connected(&m, &adslab()).is_ok());
        assert!(predict_attention(&m, &adslab()).is_err());
    }

    #[test]
    fn from_parts_rejects_wrong_shapes() {
        let m = Model::new(ModelSpec::new(VariantKind::Attention, small_backbone()), 2).unwrap();
        let mut params = m.params().clone();
        Model::from_parts(m.spec().clone(), params.clone(), TargetNorm::default()).unwrap();
        params.insert("head.0.bias", Tensor::zeros(&[3]));
        assert!(Model::from_parts(m.spec().clone(), params, TargetNorm::default()).is_err());
    }

    #[test]
    fn cross_rbf_peaks_at_matching_center() {
        let cross = CrossBatch {
            src: vec![0, 1],
            dst: vec![1, 0],
            weight: vec![2.0, -2.0],
            graph: vec![0, 0],
        };
        let t = cross_edge_rbf(&cross, 5);
        // z_max = 2 → centers -2, -1, 0, 1, 2
        assert_eq!(t.at(0, 4), 1.0);
        assert_eq!(t.at(1, 0), 1.0);
        assert!((t.at(0, 3) - (-1f64).exp()).abs() < 1e-15);
    }
}
