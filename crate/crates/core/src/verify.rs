//! Self-checks run by `adslab verify`: invariance, oracle-equivalence and
//! gradient suites, grouped by module.
//!
//! Every check reports a measured error next to its tolerance. A check that
//! errors out is reported as failed with the error text; nothing panics.

use std::fmt;

use serde::Serialize;

use crate::backbone::{self, cosine_cutoff, rbf_expand, Backbone, BackboneConfig, OutputKind, SchNet};
use crate::batch::{GraphBatch, SplitBatch};
use crate::data::{duplicate_target_stats, Dataset, TARGET_EQUAL_TOL};
use crate::error::{Error, Result};
use crate::eval::{
    benchmark_with_batch, evaluate, mean_abs_error, predict_systems, report_from_predictions, Prediction,
};
use crate::fixtures::{random_adslab, random_permutation, random_rotation, rigid_motion, z_rotation};
use crate::gradcheck::{check_fn_gradients, check_gradients, DEFAULT_EPSILON};
use crate::graph::{
    build_cross_attention_edges, build_radius_graph, component_masks, connected_components, disconnect_graph,
    remove_tag0_atoms,
};
use crate::params::{Initializer, ParamStore};
use crate::rng::SplitMix64;
use crate::synthetic::{generate_synthetic, InteractionMode, SyntheticConfig};
use crate::system::{AtomicSystem, Split, Tag, Vec3};
use crate::tensor::{shifted_softplus, Tape, Tensor, Var};
use crate::train::{train_on, TrainConfig};
use crate::variants::{
    attention_inter_layer, spec_backbones, AttentionContext, Model, ModelSpec, VariantKind, LAYER_NORM_EPS,
};

pub const MODULES: [&str; 6] = [
    "tensor-autodiff",
    "atomic-graph",
    "backbone",
    "variants",
    "data-io",
    "harness-cli",
];

pub const PERMUTATION_TOL: f64 = 1e-10;
pub const MOTION_TOL: f64 = 1e-9;
pub const GRADIENT_TOL: f64 = 1e-4;
pub const OP_GRADIENT_TOL: f64 = 1e-6;
pub const ORACLE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub module: &'static str,
    pub name: String,
    pub passed: bool,
    /// Measured error (or violation count); compared with `<=` to the tolerance.
    pub error: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl Check {
    pub fn measure(
        module: &'static str,
        name: impl Into<String>,
        tolerance: f64,
        outcome: Result<(f64, String)>,
    ) -> Check {
        let name = name.into();
        match outcome {
            Ok((error, detail)) => Check {
                module,
                name,
                passed: error.is_finite() && error <= tolerance,
                error,
                tolerance,
                detail,
            },
            Err(e) => Check {
                module,
                name,
                passed: false,
                error: f64::NAN,
                tolerance,
                detail: format!("error: {e}"),
            },
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{}] {}: error {:.3e} (tol {:.0e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.module,
            self.name,
            self.error,
            self.tolerance
        )?;
        if !self.detail.is_empty() {
            write!(f, " {}", self.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        let failed = self.failures().count();
        write!(
            f,
            "{} checks, {} passed, {failed} failed",
            self.checks.len(),
            self.checks.len() - failed
        )
    }
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    /// Random systems per property suite.
    pub systems: usize,
    pub seed: u64,
    /// Backbone for the invariance suites; gradient checks use a smaller one.
    pub backbone: BackboneConfig,
    /// Negative control: adds an adsorbate–catalyst edge to every
    /// disconnected topology before the disconnection check.
    pub inject_cross_edge: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            systems: 10,
            seed: 0,
            backbone: BackboneConfig {
                hidden_dim: 32,
                num_interactions: 2,
                rbf_count: 16,
                ..BackboneConfig::default()
            },
            inject_cross_edge: false,
        }
    }
}

/// `"all"` or one module name.
pub fn parse_scope(scope: &str) -> Result<Vec<&'static str>> {
    if scope == "all" {
        return Ok(MODULES.to_vec());
    }
    MODULES.iter().find(|m| **m == scope).map(|m| vec![*m]).ok_or_else(|| {
        Error::Config(format!(
            "unknown scope {scope:?}; expected all or one of {}",
            MODULES.join(", ")
        ))
    })
}

pub fn verify(scope: &str) -> Result<VerifyReport> {
    verify_with(scope, &VerifyOptions::default())
}

pub fn verify_with(scope: &str, opts: &VerifyOptions) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    for module in parse_scope(scope)? {
        checks.extend(match module {
            "tensor-autodiff" => tensor_checks(opts),
            "atomic-graph" => graph_checks(opts),
            "backbone" => backbone_checks(opts),
            "variants" => variant_checks(opts),
            "data-io" => data_checks(opts),
            _ => harness_checks(opts),
        });
    }
    Ok(VerifyReport { checks })
}

/// The random systems used by the property suites: 6 to 30 atoms.
pub fn random_systems(n: usize, seed: u64) -> Vec<AtomicSystem> {
    let mut rng = SplitMix64::derive(seed, 0x5359_5354);
    (0..n)
        .map(|_| random_adslab(rng.next_u64(), 6 + rng.below(25)))
        .collect()
}

/// Model with every parameter redrawn, so no term is hidden by a zero or
/// unit initial value.
pub fn random_model(variant: VariantKind, backbone: &BackboneConfig, seed: u64) -> Result<Model> {
    let mut model = Model::new(ModelSpec::new(variant, backbone.clone()), seed)?;
    model.params_mut().randomize(seed ^ 0x9e37_79b9);
    Ok(model)
}

fn gradient_backbone() -> BackboneConfig {
    BackboneConfig {
        hidden_dim: 8,
        num_interactions: 2,
        rbf_count: 8,
        rbf_gamma: 2.0,
        ..BackboneConfig::default()
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------- tensor-autodiff

fn weighted_sum(tape: &mut Tape, v: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(v).shape().to_vec();
    let n = tape.value(v).numel();
    let mut rng = SplitMix64::new(seed);
    let c = tape.constant(Tensor::new(shape, (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect())?);
    let prod = tape.mul(v, c)?;
    Ok(tape.sum(prod))
}

fn random_matrix(rng: &mut SplitMix64, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.uniform(-1.0, 1.0)).collect()).expect("finite")
}

type OpCase = (&'static str, fn(&mut Tape, &[Var]) -> Result<Var>, Vec<(usize, usize)>);

fn op_cases() -> Vec<OpCase> {
    vec![
        ("matmul", |t, x| t.matmul(x[0], x[1]), vec![(3, 4), (4, 2)]),
        (
            "scatter_add",
            |t, x| t.scatter_add(x[0], vec![2, 0, 2, 1, 2], 4),
            vec![(5, 3)],
        ),
        (
            "gather_rows",
            |t, x| t.gather_rows(x[0], vec![1, 1, 0, 3]),
            vec![(4, 2)],
        ),
        (
            "segment_softmax",
            |t, x| t.segment_softmax(x[0], vec![0, 1, 0, 0, 2, 1]),
            vec![(6, 1)],
        ),
        (
            "layer_norm",
            |t, x| t.layer_norm(x[0], x[1], x[2], LAYER_NORM_EPS),
            vec![(3, 5), (1, 5), (1, 5)],
        ),
        ("shifted_softplus", |t, x| Ok(t.shifted_softplus(x[0])), vec![(4, 3)]),
        ("leaky_relu", |t, x| Ok(t.leaky_relu(x[0], 0.2)), vec![(4, 3)]),
        (
            "gather_mul_scatter",
            |t, x| t.gather_mul_scatter(x[0], x[1], vec![0, 1, 2, 2, 3], vec![1, 0, 0, 3, 3], 4),
            vec![(4, 3), (5, 3)],
        ),
        ("mul_col", |t, x| t.mul_col(x[0], x[1]), vec![(4, 3), (4, 1)]),
        (
            "concat_and_slice",
            |t, x| {
                let r = t.concat_rows(x[0], x[1])?;
                let c = t.concat_cols(r, r)?;
                t.slice_rows(c, 1, 4)
            },
            vec![(2, 3), (3, 3)],
        ),
    ]
}

/// Every primitive's backward rule against central finite differences of a
/// random weighted sum of its output.
pub fn op_gradient_checks(seed: u64) -> Vec<Check> {
    let mut rng = SplitMix64::derive(seed, 0x4f50);
    op_cases()
        .into_iter()
        .map(|(name, op, shapes)| {
            let mut store = ParamStore::new();
            for (i, &(r, c)) in shapes.iter().enumerate() {
                store.insert(format!("x{i}"), random_matrix(&mut rng, r, c));
            }
            let weights = rng.next_u64();
            let n = shapes.len();
            let outcome = check_fn_gradients(
                &store,
                |tape, p| {
                    let xs = (0..n).map(|i| p.get(&format!("x{i}"))).collect::<Result<Vec<_>>>()?;
                    let out = op(tape, &xs)?;
                    weighted_sum(tape, out, weights)
                },
                DEFAULT_EPSILON,
            )
            .map(|r| (r.max_rel_error(), String::new()));
            Check::measure(
                "tensor-autodiff",
                format!("{name} gradient vs finite differences"),
                OP_GRADIENT_TOL,
                outcome,
            )
        })
        .collect()
}

fn forward_oracles(seed: u64) -> Vec<Check> {
    let mut rng = SplitMix64::derive(seed, 0x4f52);
    let a = random_matrix(&mut rng, 5, 7);
    let b = random_matrix(&mut rng, 7, 3);
    let matmul = (|| {
        let mut tape = Tape::new();
        let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
        let c = tape.matmul(va, vb)?;
        let mut naive = vec![0.0; 15];
        for i in 0..5 {
            for j in 0..3 {
                naive[i * 3 + j] = (0..7).map(|k| a.at(i, k) * b.at(k, j)).sum();
            }
        }
        Ok((max_abs_diff(tape.value(c).data(), &naive), String::new()))
    })();

    let values = random_matrix(&mut rng, 40, 3);
    let index: Vec<usize> = (0..40).map(|_| rng.below(9)).collect();
    let scatter = (|| {
        let mut tape = Tape::new();
        let v = tape.constant(values.clone());
        let out = tape.scatter_add(v, index.clone(), 10)?;
        let mut naive = vec![0.0; 30];
        for (j, &i) in index.iter().enumerate() {
            for d in 0..3 {
                naive[i * 3 + d] += values.at(j, d);
            }
        }
        Ok((
            max_abs_diff(tape.value(out).data(), &naive),
            "row 9 never indexed".to_string(),
        ))
    })();

    let logits: Vec<f64> = (0..30).map(|_| rng.uniform(-20.0, 20.0)).collect();
    let segment: Vec<usize> = (0..30).map(|_| rng.below(6)).collect();
    let softmax = (|| {
        let mut tape = Tape::new();
        let l = tape.constant(Tensor::column(logits.clone()));
        let out = tape.segment_softmax(l, segment.clone())?;
        let got = tape.value(out).data();
        let naive: Vec<f64> = (0..30)
            .map(|e| {
                let denom: f64 = (0..30)
                    .filter(|&k| segment[k] == segment[e])
                    .map(|k| logits[k].exp())
                    .sum();
                logits[e].exp() / denom
            })
            .collect();
        let mut sums = [0.0; 6];
        for (v, &s) in got.iter().zip(&segment) {
            sums[s] += v;
        }
        let norm_err = sums
            .iter()
            .enumerate()
            .filter(|(s, _)| segment.contains(s))
            .map(|(_, v)| (v - 1.0).abs())
            .fold(0.0, f64::max);
        Ok((max_abs_diff(got, &naive).max(norm_err), String::new()))
    })();

    vec![
        Check::measure("tensor-autodiff", "matmul vs triple loop", 1e-12, matmul),
        Check::measure("tensor-autodiff", "scatter_add vs loop", 0.0, scatter),
        Check::measure("tensor-autodiff", "segment_softmax vs direct exp-sum", 1e-12, softmax),
    ]
}

/// `check_gradients` for every variant on `per_variant` small random systems
/// (6 to 10 atoms); the error is the worst block over all systems.
pub fn model_gradient_checks(per_variant: usize, seed: u64) -> Vec<Check> {
    let bb = gradient_backbone();
    VariantKind::ALL
        .iter()
        .enumerate()
        .map(|(vi, &v)| {
            let outcome = (|| {
                let mut rng = SplitMix64::derive(seed, 0x4752_4144 + vi as u64);
                let mut worst: f64 = 0.0;
                let mut worst_block = String::new();
                for _ in 0..per_variant {
                    let model = random_model(v, &bb, rng.next_u64())?;
                    let system = random_adslab(rng.next_u64(), 6 + rng.below(5));
                    let report = check_gradients(&model, &system, DEFAULT_EPSILON)?;
                    if let Some(b) = report.worst() {
                        if b.rel_error >= worst {
                            worst = b.rel_error;
                            worst_block = b.name.clone();
                        }
                    }
                }
                Ok((worst, format!("({per_variant} systems, worst block {worst_block})")))
            })();
            Check::measure(
                "tensor-autodiff",
                format!("{v} gradients vs finite differences"),
                GRADIENT_TOL,
                outcome,
            )
        })
        .collect()
}

fn tensor_checks(opts: &VerifyOptions) -> Vec<Check> {
    let mut out = forward_oracles(opts.seed);
    out.extend(op_gradient_checks(opts.seed));
    out.extend(model_gradient_checks(2, opts.seed));
    out
}

// ---------------------------------------------------------------- atomic-graph

/// Multiset of `(src, dst, distance)` triples by brute force over the 27
/// nearest images (the cell widths are at least the cutoff).
fn brute_force_edges(system: &AtomicSystem, cutoff: f64) -> Vec<(usize, usize, i64)> {
    let mut shifts: Vec<Vec3> = vec![[0.0; 3]];
    if let Some(c) = &system.cell {
        shifts.clear();
        for a in -1i32..=1 {
            for b in -1i32..=1 {
                for d in -1i32..=1 {
                    let (a, b, d) = (f64::from(a), f64::from(b), f64::from(d));
                    shifts.push([
                        a * c[0][0] + b * c[1][0] + d * c[2][0],
                        a * c[0][1] + b * c[1][1] + d * c[2][1],
                        a * c[0][2] + b * c[1][2] + d * c[2][2],
                    ]);
                }
            }
        }
    }
    let p = &system.positions;
    let mut out = Vec::new();
    for i in 0..system.len() {
        for j in 0..system.len() {
            if i == j {
                continue;
            }
            for s in &shifts {
                let d = ((p[j][0] + s[0] - p[i][0]).powi(2)
                    + (p[j][1] + s[1] - p[i][1]).powi(2)
                    + (p[j][2] + s[2] - p[i][2]).powi(2))
                .sqrt();
                if d <= cutoff {
                    out.push((j, i, (d * 1e9).round() as i64));
                }
            }
        }
    }
    out.sort_unstable();
    out
}

fn graph_systems(opts: &VerifyOptions) -> Result<Vec<AtomicSystem>> {
    let mut systems = random_systems(opts.systems, opts.seed);
    let periodic = generate_synthetic(&SyntheticConfig {
        seed: opts.seed,
        n_train: 3,
        n_val_per_split: 0,
        ..SyntheticConfig::default()
    })?;
    systems.extend(periodic.systems);
    Ok(systems)
}

/// Counts edges joining the two components and component labels shared
/// across them.
pub fn disconnection_violations(topology: &crate::graph::GraphTopology, tags: &[Tag]) -> usize {
    let mixed = topology
        .edges()
        .filter(|&(s, d)| tags[s].is_adsorbate() != tags[d].is_adsorbate())
        .count();
    let labels = connected_components(topology.num_nodes, topology.edges());
    let mut ads_labels: Vec<usize> = (0..tags.len())
        .filter(|&i| tags[i].is_adsorbate())
        .map(|i| labels[i])
        .collect();
    ads_labels.sort_unstable();
    let merged = (0..tags.len())
        .filter(|&i| tags[i].is_catalyst() && ads_labels.binary_search(&labels[i]).is_ok())
        .count();
    mixed + merged
}

fn graph_checks(opts: &VerifyOptions) -> Vec<Check> {
    const M: &str = "atomic-graph";
    let cutoff = opts.backbone.cutoff;
    let systems = match graph_systems(opts) {
        Ok(s) => s,
        Err(e) => return vec![Check::measure(M, "fixtures", 0.0, Err(e))],
    };
    let n = systems.len();

    let radius = (|| {
        let mut bad = 0usize;
        for s in &systems {
            let topo = build_radius_graph(s, cutoff, usize::MAX)?;
            let mut got: Vec<(usize, usize, i64)> = (0..topo.num_edges())
                .map(|k| {
                    (
                        topo.edge_src[k],
                        topo.edge_dst[k],
                        (topo.edge_distance[k] * 1e9).round() as i64,
                    )
                })
                .collect();
            got.sort_unstable();
            if got != brute_force_edges(s, cutoff) {
                bad += 1;
            }
        }
        Ok((bad as f64, format!("({n} systems, 3 periodic)")))
    })();

    let capped = (|| {
        let mut worst = 0usize;
        for s in &systems {
            let topo = build_radius_graph(s, cutoff, 4)?;
            let mut indeg = vec![0usize; s.len()];
            topo.edge_dst.iter().for_each(|&d| indeg[d] += 1);
            worst = worst.max(indeg.into_iter().max().unwrap_or(0));
        }
        Ok((worst.saturating_sub(4) as f64, "max_neighbors = 4".to_string()))
    })();

    let disconnection = (|| {
        let mut violations = 0;
        for s in &systems {
            let mut topo = disconnect_graph(&build_radius_graph(s, cutoff, usize::MAX)?, &s.tags)?;
            if opts.inject_cross_edge {
                let (ads, cat) = component_masks(&s.tags)?;
                topo.edge_src.push(ads[0]);
                topo.edge_dst.push(cat[0]);
                topo.edge_distance.push(1.0);
                topo.edge_vector.push([0.0, 0.0, 1.0]);
            }
            violations += disconnection_violations(&topo, &s.tags);
        }
        Ok((violations as f64, format!("({n} systems)")))
    })();

    let cross = (|| {
        let mut bad = 0usize;
        for s in &systems {
            let set = build_cross_attention_edges(s, false);
            let (ads, cat) = component_masks(&s.tags)?;
            let weights_ok = (0..set.len()).all(|k| {
                let (i, j) = (set.src[k], set.dst[k]);
                let z = if s.tags[i].is_catalyst() {
                    s.positions[i][2]
                } else {
                    -s.positions[j][2]
                };
                set.weight[k] == z
            });
            if set.check_antisymmetric(&s.tags).is_err() || set.len() != 2 * ads.len() * cat.len() || !weights_ok {
                bad += 1;
            }
        }
        Ok((bad as f64, String::new()))
    })();

    let tag0 = (|| {
        let mut bad = 0usize;
        for s in &systems {
            let kept = remove_tag0_atoms(s)?;
            let expect: Vec<usize> = (0..s.len()).filter(|&i| s.tags[i] != Tag::Subsurface).collect();
            if kept != s.subset(&expect) {
                bad += 1;
            }
        }
        Ok((bad as f64, String::new()))
    })();

    let masks = (|| {
        let mut bad = 0usize;
        for s in &systems {
            let (ads, cat) = component_masks(&s.tags)?;
            let mut all: Vec<usize> = ads.iter().chain(&cat).copied().collect();
            all.sort_unstable();
            let sorted = ads.windows(2).all(|w| w[0] < w[1]) && cat.windows(2).all(|w| w[0] < w[1]);
            if all != (0..s.len()).collect::<Vec<_>>() || !sorted || ads.iter().any(|&i| !s.tags[i].is_adsorbate()) {
                bad += 1;
            }
        }
        Ok((bad as f64, String::new()))
    })();

    vec![
        Check::measure(M, "radius graph vs brute-force pairs", 0.0, radius),
        Check::measure(M, "max_neighbors cap", 0.0, capped),
        Check::measure(M, "disconnection", 0.0, disconnection),
        Check::measure(M, "cross-edge ±z antisymmetry", 0.0, cross),
        Check::measure(M, "tag-0 removal", 0.0, tag0),
        Check::measure(M, "component masks partition", 0.0, masks),
    ]
}

// ---------------------------------------------------------------- backbone

fn dense_row(x: &[f64], w: &Tensor, b: Option<&Tensor>) -> Vec<f64> {
    (0..w.cols())
        .map(|o| {
            let mut s = b.map_or(0.0, |b| b.data()[o]);
            for (i, xv) in x.iter().enumerate() {
                s += xv * w.at(i, o);
            }
            s
        })
        .collect()
}

/// Per-edge loop form of the non-residual interaction update `F(h)`.
pub fn loop_interaction_update(
    store: &ParamStore,
    prefix: &str,
    layer: usize,
    h: &Tensor,
    g: &GraphBatch,
    cfg: &BackboneConfig,
) -> Result<Vec<Vec<f64>>> {
    let get = |n: &str| store.get(&format!("{prefix}.block{layer}.{n}"));
    let (w1, f0w, f0b, f1w, f1b) = (
        get("w1.weight")?,
        get("filter.0.weight")?,
        get("filter.0.bias")?,
        get("filter.1.weight")?,
        get("filter.1.bias")?,
    );
    let (w3w, w3b, w2w, w2b) = (get("w3.weight")?, get("w3.bias")?, get("w2.weight")?, get("w2.bias")?);
    let hd = cfg.hidden_dim;
    let mut m = vec![vec![0.0; hd]; h.rows()];
    for e in 0..g.num_edges() {
        let rbf = rbf_expand(g.distance[e], cfg);
        let f: Vec<f64> = dense_row(rbf.data(), f0w, Some(f0b))
            .into_iter()
            .map(shifted_softplus)
            .collect();
        let f = dense_row(&f, f1w, Some(f1b));
        let env = cosine_cutoff(g.distance[e], cfg.cutoff);
        let xj = dense_row(h.row(g.src[e]), w1, None);
        for j in 0..hd {
            m[g.dst[e]][j] += xj[j] * f[j] * env;
        }
    }
    Ok(m.iter()
        .map(|mi| {
            let v: Vec<f64> = dense_row(mi, w3w, Some(w3b))
                .into_iter()
                .map(shifted_softplus)
                .collect();
            dense_row(&v, w2w, Some(w2b))
        })
        .collect())
}

fn backbone_checks(opts: &VerifyOptions) -> Vec<Check> {
    const M: &str = "backbone";
    let cfg = opts.backbone.clone();
    let systems = random_systems(opts.systems, opts.seed);

    let block = (|| {
        let net = SchNet::new(cfg.clone(), "backbone");
        let mut store = ParamStore::new();
        net.register(&mut store, &mut Initializer::new(opts.seed), OutputKind::Scalar);
        store.randomize(opts.seed);
        let mut worst: f64 = 0.0;
        for s in &systems {
            let model = Model::new(ModelSpec::new(VariantKind::Connected, cfg.clone()), 0)?;
            let sg = model.prepare(s)?;
            let g = GraphBatch::from_graphs(&[&sg]);
            let edges = net.prepare(&g);
            let mut tape = Tape::new();
            let p = store.bind_with(&mut tape, false);
            let mut h = net.embed(&mut tape, &p, &g)?;
            for layer in 0..cfg.num_interactions {
                let h_in = tape.value(h).clone();
                h = backbone::interaction_block(&net, layer, &mut tape, &p, h, &g, &edges)?;
                let delta = loop_interaction_update(&store, "backbone", layer, &h_in, &g, &cfg)?;
                let expect: Vec<f64> = delta
                    .iter()
                    .enumerate()
                    .flat_map(|(i, row)| row.iter().enumerate().map(move |(j, v)| (i, j, *v)))
                    .map(|(i, j, v)| h_in.at(i, j) + v)
                    .collect();
                worst = worst.max(max_abs_diff(tape.value(h).data(), &expect));
            }
        }
        Ok((worst, format!("({} systems, every layer)", systems.len())))
    })();

    let rbf = {
        let step = cfg.cutoff / (cfg.rbf_count - 1) as f64;
        let mut worst: f64 = 0.0;
        for k in 0..cfg.rbf_count {
            let d = k as f64 * step + 0.1;
            let v = rbf_expand(d, &cfg);
            worst = worst.max((v.data()[k] - (-cfg.rbf_gamma * 0.01).exp()).abs());
        }
        worst = worst
            .max(cosine_cutoff(cfg.cutoff, cfg.cutoff).abs())
            .max((cosine_cutoff(0.0, cfg.cutoff) - 1.0).abs());
        Ok((worst, String::new()))
    };

    let isolated = (|| {
        let model = random_model(VariantKind::Connected, &cfg, opts.seed)?;
        let gap = cfg.cutoff + 1.0;
        let three = AtomicSystem::new(
            "isolated",
            vec![29, 29, 29],
            vec![[0.0; 3], [gap, 0.0, 0.0], [0.0, gap, 0.0]],
            vec![Tag::Surface; 3],
        )?;
        let one = three.subset(&[0]);
        Ok((
            (model.predict(&three)? - 3.0 * model.predict(&one)?).abs(),
            "(atoms beyond the cutoff)".to_string(),
        ))
    })();

    vec![
        Check::measure(M, "interaction block vs per-edge loop", 1e-12, block),
        Check::measure(M, "rbf and cutoff envelope values", 1e-15, rbf),
        Check::measure(M, "atoms without neighbours are additive", 1e-12, isolated),
    ]
}

// ---------------------------------------------------------------- variants

/// Permutation, x–y translation with z rotation, full rigid motion
/// (Connected) and adsorbate-only rigid motion (disconnected variants) on
/// `systems`, with freshly randomized parameters per variant.
pub fn invariance_checks(backbone: &BackboneConfig, systems: &[AtomicSystem], seed: u64) -> Vec<Check> {
    const M: &str = "variants";
    let mut out = Vec::new();
    for (vi, &v) in VariantKind::ALL.iter().enumerate() {
        let mut perm_err: f64 = 0.0;
        let mut planar_err: f64 = 0.0;
        let mut rigid_err: f64 = 0.0;
        let mut ads_err: f64 = 0.0;
        let mut ads_response: f64 = 0.0;
        let result = (|| -> Result<()> {
            let model = random_model(v, backbone, seed.wrapping_add(vi as u64))?;
            let mut rng = SplitMix64::derive(seed, 0x494e_5600 + vi as u64);
            for s in systems {
                let e0 = model.predict(s)?;
                let perm = random_permutation(&mut rng, s.len());
                perm_err = perm_err.max((model.predict(&s.subset(&perm))? - e0).abs());

                let all: Vec<usize> = (0..s.len()).collect();
                let theta = rng.uniform(0.0, std::f64::consts::TAU);
                let shift = [rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0), 0.0];
                planar_err =
                    planar_err.max((model.predict(&rigid_motion(s, &all, &z_rotation(theta), shift))? - e0).abs());

                let rot = random_rotation(&mut rng);
                let shift = [rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)];
                let ads = s.adsorbate_indices();
                if v == VariantKind::Connected {
                    rigid_err = rigid_err.max((model.predict(&rigid_motion(s, &all, &rot, shift))? - e0).abs());
                    let moved = rigid_motion(s, &ads, &rot, [0.0, 0.0, 0.7]);
                    ads_response = ads_response.max((model.predict(&moved)? - e0).abs());
                }
                if v.is_disconnected() {
                    ads_err = ads_err.max((model.predict(&rigid_motion(s, &ads, &rot, shift))? - e0).abs());
                }
            }
            Ok(())
        })();
        let n = systems.len();
        let wrap = |e: f64| match &result {
            Ok(()) => Ok((e, format!("({n} systems)"))),
            Err(err) => Err(Error::Config(err.to_string())),
        };
        out.push(Check::measure(
            M,
            format!("{v} permutation invariance"),
            PERMUTATION_TOL,
            wrap(perm_err),
        ));
        out.push(Check::measure(
            M,
            format!("{v} x-y translation and z rotation"),
            MOTION_TOL,
            wrap(planar_err),
        ));
        if v == VariantKind::Connected {
            out.push(Check::measure(
                M,
                format!("{v} rigid motion"),
                MOTION_TOL,
                wrap(rigid_err),
            ));
            // negative control: moving the adsorbate alone must change the energy
            let response =
                wrap(ads_response).map(|(r, d)| (if r > 1e-6 { 0.0 } else { 1.0 }, format!("{d} max change {r:.3e}")));
            out.push(Check::measure(
                M,
                format!("{v} responds to adsorbate placement"),
                0.0,
                response,
            ));
        }
        if v.is_disconnected() {
            out.push(Check::measure(
                M,
                format!("{v} adsorbate-only rigid motion"),
                MOTION_TOL,
                wrap(ads_err),
            ));
        }
    }
    out
}

/// DisconnectedBaseline energy against the sum of its predictions on each
/// component alone. The target normalization is the identity, so the
/// prediction is a plain sum of per-atom terms.
pub fn decomposition_check(backbone: &BackboneConfig, systems: &[AtomicSystem], seed: u64) -> Check {
    let outcome = (|| {
        let model = random_model(VariantKind::DisconnectedBaseline, backbone, seed)?;
        let mut worst: f64 = 0.0;
        for s in systems {
            let whole = model.predict(s)?;
            let parts =
                model.predict(&s.subset(&s.adsorbate_indices()))? + model.predict(&s.subset(&s.catalyst_indices()))?;
            worst = worst.max((whole - parts).abs());
        }
        Ok((worst, format!("({} systems)", systems.len())))
    })();
    Check::measure(
        "variants",
        "DisconnectedBaseline equals sum over components",
        MOTION_TOL,
        outcome,
    )
}

/// Dense reference for one attention exchange layer: explicit per-node
/// neighbour lists and softmax, one head at a time.
pub fn dense_attention_layer(
    model: &Model,
    batch: &SplitBatch,
    layer: usize,
    h_ads: &Tensor,
    h_cat: &Tensor,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let spec = model.spec();
    let store = model.params();
    let cfg = &spec.backbone;
    let second = spec
        .second_backbone
        .as_ref()
        .ok_or_else(|| Error::Config("missing second_backbone".into()))?;
    let d_ads = loop_interaction_update(store, "backbone", layer, h_ads, &batch.ads, cfg)?;
    let d_cat = loop_interaction_update(store, "second_backbone", layer, h_cat, &batch.cat, second)?;
    let x: Vec<Vec<f64>> = d_ads.into_iter().chain(d_cat).collect();
    let n = x.len();
    let n_ads = h_ads.rows();
    let cross = &batch.cross;
    let att = &spec.attention;
    let base = format!("attention.layer{layer}");

    let count = att.edge_rbf_count;
    let rbf = |e: usize| -> Vec<f64> {
        let g = cross.graph[e];
        let zm = (0..cross.len())
            .filter(|&k| cross.graph[k] == g)
            .map(|k| cross.weight[k].abs())
            .fold(1.0, f64::max);
        let step = 2.0 * zm / (count - 1) as f64;
        (0..count)
            .map(|k| {
                let u = (cross.weight[e] + zm - k as f64 * step) / step;
                (-u * u).exp()
            })
            .collect()
    };

    let mut heads: Vec<Vec<f64>> = vec![Vec::new(); n];
    for k in 0..att.heads {
        let hp = format!("{base}.head{k}");
        let proj = store.get(&format!("{hp}.proj.weight"))?;
        let a_src = store.get(&format!("{hp}.att_src"))?;
        let a_dst = store.get(&format!("{hp}.att_dst"))?;
        let a_edge = store.get(&format!("{hp}.att_edge"))?;
        let we = store.get(&format!("{hp}.edge.weight"))?;
        let be = store.get(&format!("{hp}.edge.bias"))?;
        let wh: Vec<Vec<f64>> = x.iter().map(|r| dense_row(r, proj, None)).collect();
        let dot = |a: &[f64], b: &Tensor| a.iter().zip(b.data()).map(|(x, y)| x * y).sum::<f64>();
        for i in 0..n {
            let incoming: Vec<usize> = (0..cross.len()).filter(|&e| cross.dst[e] == i).collect();
            let logits: Vec<f64> = incoming
                .iter()
                .map(|&e| {
                    let edge = dense_row(&rbf(e), we, Some(be));
                    let l = dot(&wh[cross.src[e]], a_src) + dot(&wh[i], a_dst) + dot(&edge, a_edge);
                    if l > 0.0 {
                        l
                    } else {
                        att.leaky_slope * l
                    }
                })
                .collect();
            let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
            let mut acc = vec![0.0; proj.cols()];
            for (&e, l) in incoming.iter().zip(&logits) {
                let alpha = (l - mx).exp() / denom;
                for (a, w) in acc.iter_mut().zip(&wh[cross.src[e]]) {
                    *a += alpha * w;
                }
            }
            heads[i].extend(acc);
        }
    }
    let value = store.get(&format!("{base}.value.weight"))?;
    let norm = |row: Vec<f64>, part: &str| -> Result<Vec<f64>> {
        let g = store.get(&format!("{base}.norm_{part}.weight"))?;
        let b = store.get(&format!("{base}.norm_{part}.bias"))?;
        let c = row.len() as f64;
        let mu = row.iter().sum::<f64>() / c;
        let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / c;
        let s = (var + LAYER_NORM_EPS).sqrt();
        Ok(row
            .iter()
            .enumerate()
            .map(|(j, v)| (v - mu) / s * g.data()[j] + b.data()[j])
            .collect())
    };
    let mut out_ads = Vec::new();
    let mut out_cat = Vec::new();
    for i in 0..n {
        let attended = dense_row(&heads[i], value, None);
        let (h, part) = if i < n_ads {
            (h_ads.row(i), "ads")
        } else {
            (h_cat.row(i - n_ads), "cat")
        };
        let row: Vec<f64> = (0..x[i].len()).map(|j| x[i][j] + attended[j] + h[j]).collect();
        if i < n_ads {
            out_ads.push(norm(row, part)?);
        } else {
            out_cat.push(norm(row, part)?);
        }
    }
    Ok((out_ads, out_cat))
}

/// Tape attention layer against [`dense_attention_layer`] on every layer of
/// a randomized Attention model, for each system.
pub fn attention_oracle_error(model: &Model, systems: &[AtomicSystem]) -> Result<f64> {
    let spec = model.spec();
    let (first, second) = spec_backbones(spec);
    let second = second.ok_or_else(|| Error::Config("missing second_backbone".into()))?;
    let mut worst: f64 = 0.0;
    for s in systems {
        let g = model.prepare(s)?;
        let batch = SplitBatch::from_graphs(&[&g])?;
        let ctx = AttentionContext::new(spec, &first, &second, &batch)?;
        let mut tape = Tape::new();
        let p = model.params().bind_with(&mut tape, false);
        let mut h_ads = first.embed(&mut tape, &p, &batch.ads)?;
        let mut h_cat = second.embed(&mut tape, &p, &batch.cat)?;
        for layer in 0..spec.backbone.num_interactions {
            let (ea, ec) = dense_attention_layer(model, &batch, layer, tape.value(h_ads), tape.value(h_cat))?;
            (h_ads, h_cat) = attention_inter_layer(&ctx, layer, &mut tape, &p, h_ads, h_cat)?;
            let flat = |rows: Vec<Vec<f64>>| rows.into_iter().flatten().collect::<Vec<f64>>();
            worst = worst
                .max(max_abs_diff(tape.value(h_ads).data(), &flat(ea)))
                .max(max_abs_diff(tape.value(h_cat).data(), &flat(ec)));
        }
    }
    Ok(worst)
}

fn variant_checks(opts: &VerifyOptions) -> Vec<Check> {
    let systems = random_systems(opts.systems, opts.seed);
    let mut out = invariance_checks(&opts.backbone, &systems, opts.seed);
    out.push(decomposition_check(&opts.backbone, &systems, opts.seed));
    let small: Vec<AtomicSystem> = (0..opts.systems as u64)
        .map(|k| random_adslab(opts.seed + k, 3 + k as usize % 6))
        .collect();
    let outcome = (|| {
        let mut spec = ModelSpec::new(VariantKind::Attention, gradient_backbone());
        spec.attention.heads = 2;
        let mut model = Model::new(spec, opts.seed)?;
        model.params_mut().randomize(opts.seed);
        Ok((
            attention_oracle_error(&model, &small)?,
            format!("({} systems, 2 heads)", small.len()),
        ))
    })();
    out.push(Check::measure(
        "variants",
        "attention layer vs dense reference",
        ORACLE_TOL,
        outcome,
    ));
    out
}

// ---------------------------------------------------------------- data-io

/// Exhaustive pairwise recomputation of the duplicate-target statistic:
/// `(n_groups, n_multi_target)`. A system is multi-target when two members
/// of its group differ by more than the target tolerance.
pub fn pairwise_duplicate_oracle(dataset: &Dataset) -> (usize, usize) {
    let sys = &dataset.systems;
    let key = |s: &AtomicSystem| {
        (
            s.metadata.adsorbate_id.clone(),
            s.metadata.bulk_id.clone(),
            s.metadata.cell_hash.clone(),
        )
    };
    let target = |s: &AtomicSystem| s.target_energy.unwrap_or(f64::NAN);
    let mut groups = 0;
    let mut multi = 0;
    for i in 0..sys.len() {
        let ki = key(&sys[i]);
        if !(0..i).any(|j| key(&sys[j]) == ki) {
            groups += 1;
        }
        let members: Vec<usize> = (0..sys.len()).filter(|&j| key(&sys[j]) == ki).collect();
        let differs = members.iter().any(|&a| {
            members
                .iter()
                .any(|&b| (target(&sys[a]) - target(&sys[b])).abs() > TARGET_EQUAL_TOL)
        });
        if differs {
            multi += 1;
        }
    }
    (groups, multi)
}

fn data_checks(opts: &VerifyOptions) -> Vec<Check> {
    const M: &str = "data-io";
    let cfg = SyntheticConfig {
        seed: opts.seed,
        n_train: 40,
        n_val_per_split: 5,
        ..SyntheticConfig::default()
    };

    let round_trip = (|| {
        let ds = generate_synthetic(&cfg)?;
        let text = ds.to_jsonl()?;
        let back = Dataset::from_jsonl(&text)?;
        let same = back.systems == ds.systems && back.to_jsonl()? == text;
        Ok((f64::from(u8::from(!same)), format!("({} systems)", ds.len())))
    })();

    let determinism = (|| {
        let a = generate_synthetic(&cfg)?.to_jsonl()?;
        let b = generate_synthetic(&cfg)?.to_jsonl()?;
        let other = generate_synthetic(&SyntheticConfig {
            seed: cfg.seed + 1,
            ..cfg.clone()
        })?
        .to_jsonl()?;
        Ok((
            f64::from(u8::from(a != b || a == other)),
            "(same seed equal, next seed differs)".to_string(),
        ))
    })();

    let separable = (|| {
        let clean = |mode| SyntheticConfig {
            interaction_mode: mode,
            noise_std: 0.0,
            n_train: 200,
            adsorbate_vocab_size: 4,
            catalyst_vocab_size: 4,
            ..cfg.clone()
        };
        let sep = duplicate_target_stats(&generate_synthetic(&clean(InteractionMode::Separable))?)?;
        let bind = duplicate_target_stats(&generate_synthetic(&clean(InteractionMode::Binding))?)?;
        let bad = sep.n_multi_target + usize::from(bind.n_multi_target == 0);
        Ok((
            bad as f64,
            format!(
                "(noise-free multi-target fraction: separable {:.3}, binding {:.3})",
                sep.fraction_multi_target, bind.fraction_multi_target
            ),
        ))
    })();

    let stats = (|| {
        let mut rng = SplitMix64::derive(opts.seed, 0x4450);
        let mut systems = Vec::new();
        for i in 0..300 {
            let mut s = AtomicSystem::new(
                format!("s{i}"),
                vec![29, 8],
                vec![[0.0; 3], [0.0, 0.0, 2.0]],
                vec![Tag::Surface, Tag::Adsorbate],
            )?;
            s.metadata.adsorbate_id = format!("a{}", rng.below(6));
            s.metadata.bulk_id = format!("b{}", rng.below(8));
            s.metadata.cell_hash = format!("c{}", rng.below(2));
            s.target_energy = Some(rng.below(3) as f64 * 0.5);
            systems.push(s);
        }
        let ds = Dataset::new(systems)?;
        let got = duplicate_target_stats(&ds)?;
        let (groups, multi) = pairwise_duplicate_oracle(&ds);
        let err = got.n_groups.abs_diff(groups) + got.n_multi_target.abs_diff(multi);
        Ok((
            err as f64,
            format!("({} groups, fraction {:.4})", groups, got.fraction_multi_target),
        ))
    })();

    vec![
        Check::measure(M, "JSON Lines round trip", 0.0, round_trip),
        Check::measure(M, "generator determinism", 0.0, determinism),
        Check::measure(M, "separable targets ignore placement", 0.0, separable),
        Check::measure(M, "duplicate statistic vs pairwise oracle", 0.0, stats),
    ]
}

// ---------------------------------------------------------------- harness-cli

fn tiny_config(seed: u64) -> TrainConfig {
    let mut config = TrainConfig {
        model: ModelSpec::new(
            VariantKind::Connected,
            BackboneConfig {
                hidden_dim: 8,
                num_interactions: 1,
                rbf_count: 8,
                ..BackboneConfig::default()
            },
        ),
        batch_size: 8,
        epochs: 2,
        seed,
        ..TrainConfig::default()
    };
    config.optimizer.lr = 1e-2;
    config
}

fn harness_checks(opts: &VerifyOptions) -> Vec<Check> {
    const M: &str = "harness-cli";
    let mae = {
        let mut worst: f64 = 0.0;
        for c in [0.0, 0.7, 3.0, -1.5] {
            worst = worst.max((mean_abs_error(&[c, c], &[0.0, 2.0]) - (c.abs() + (c - 2.0).abs()) / 2.0).abs());
        }
        Ok((worst, "(constant predictor on targets {0, 2})".to_string()))
    };

    let dataset = generate_synthetic(&SyntheticConfig {
        seed: opts.seed,
        n_train: 24,
        n_val_per_split: 4,
        ..SyntheticConfig::default()
    });
    let dataset = match dataset {
        Ok(d) => d,
        Err(e) => return vec![Check::measure(M, "fixtures", 0.0, Err(e))],
    };

    let frozen = (|| {
        let mut config = tiny_config(opts.seed);
        config.optimizer.lr = 0.0;
        let outcome = train_on(&config, &dataset)?;
        let fresh = Model::new(config.model.clone(), config.seed)?;
        let same = outcome.model.params() == fresh.params();
        let constant = outcome.log.windows(2).all(|w| w[0].train_loss == w[1].train_loss);
        Ok((f64::from(u8::from(!same || !constant)), String::new()))
    })();

    let determinism = (|| {
        let config = tiny_config(opts.seed);
        let a = train_on(&config, &dataset)?.checkpoint().to_json()?;
        let b = train_on(&config, &dataset)?.checkpoint().to_json()?;
        Ok((f64::from(u8::from(a != b)), format!("({} checkpoint bytes)", a.len())))
    })();

    let reload = (|| {
        let config = tiny_config(opts.seed);
        let outcome = train_on(&config, &dataset)?;
        let model = crate::checkpoint::Checkpoint::from_json(&outcome.checkpoint().to_json()?)?.into_model()?;
        let val = dataset.split(Split::ValId);
        let preds = predict_systems(&model, &val, config.batch_size)?;
        let targets: Vec<f64> = val.iter().filter_map(|s| s.target_energy).collect();
        let logged = outcome
            .best
            .val_id_mae
            .ok_or_else(|| Error::Dataset("no val_id MAE logged".into()))?;
        Ok(((mean_abs_error(&preds, &targets) - logged).abs(), String::new()))
    })();

    let eval = (|| {
        let model = random_model(VariantKind::Connected, &tiny_config(0).model.backbone, opts.seed)?;
        let (r1, p1) = evaluate(&model, &dataset)?;
        let (r2, _) = evaluate(&model, &dataset)?;
        let dumped: Vec<Prediction> = serde_json::from_str(&serde_json::to_string(&p1)?)?;
        let recomputed = report_from_predictions(&dataset, &dumped);
        let mut err = if r1 == r2 { 0.0 } else { f64::INFINITY };
        for (split, mae) in &r1.mae_per_split {
            err = err.max((recomputed.mae_per_split[split] - mae).abs());
        }
        Ok((err, "(repeat and prediction-dump recomputation)".to_string()))
    })();

    let bench = (|| {
        let model = random_model(VariantKind::Connected, &tiny_config(0).model.backbone, opts.seed)?;
        let t = benchmark_with_batch(&model, &dataset.systems[..8], 5, 4)?;
        Ok((
            t.repetitions.len().abs_diff(5) as f64,
            format!("({:.0} ± {:.0} samples/s)", t.mean, t.std),
        ))
    })();

    vec![
        Check::measure(M, "MAE hand arithmetic", 1e-15, mae),
        Check::measure(M, "lr = 0 leaves parameters unchanged", 0.0, frozen),
        Check::measure(M, "training determinism", 0.0, determinism),
        Check::measure(M, "checkpoint reproduces logged val_id MAE", 1e-9, reload),
        Check::measure(M, "evaluate is pure and matches its dump", 1e-12, eval),
        Check::measure(M, "benchmark records every repetition", 0.0, bench),
    ]
}
