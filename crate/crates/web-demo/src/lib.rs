//! Browser demo: inspect the graphs each variant sees, sweep the adsorbate
//! height, and probe invariances. Every entry point returns a JSON string; the
//! plain-Rust functions behind them are tested natively.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use adslab_gnn::backbone::BackboneConfig;
use adslab_gnn::fixtures::{random_permutation, random_rotation, rigid_motion, z_rotation};
use adslab_gnn::graph::{build_cross_attention_edges, build_radius_graph, disconnect_graph, DEFAULT_CUTOFF};
use adslab_gnn::rng::SplitMix64;
use adslab_gnn::system::AtomicSystem;
use adslab_gnn::variants::{Model, VariantKind};
use adslab_gnn::verify::random_model;

/// Smallest and largest systems the page offers.
pub const MIN_ATOMS: usize = 4;
pub const MAX_ATOMS: usize = 40;

fn demo_backbone() -> BackboneConfig {
    BackboneConfig {
        hidden_dim: 32,
        num_interactions: 3,
        rbf_count: 20,
        ..BackboneConfig::default()
    }
}

fn demo_system(seed: u64, n_atoms: usize) -> AtomicSystem {
    adslab_gnn::fixtures::random_adslab(seed, n_atoms.clamp(MIN_ATOMS, MAX_ATOMS))
}

fn demo_models(seed: u64) -> Vec<Model> {
    let bb = demo_backbone();
    VariantKind::ALL
        .iter()
        .map(|&v| random_model(v, &bb, seed).expect("demo spec is valid"))
        .collect()
}

#[derive(Debug, Serialize)]
pub struct Atom {
    pub z: u32,
    pub tag: u8,
    pub position: [f64; 3],
}

/// Undirected edges, each listed once with `i < j`.
#[derive(Debug, Serialize)]
pub struct SystemView {
    pub atoms: Vec<Atom>,
    pub cutoff: f64,
    /// Edges kept by every variant.
    pub intra_edges: Vec<[usize; 2]>,
    /// Edges only the connected graph has.
    pub cross_edges: Vec<[usize; 2]>,
    /// Adsorbate-catalyst pairs joined by the attention variant's cross edges.
    pub attention_pairs: usize,
}

pub fn system_view(seed: u64, n_atoms: usize) -> SystemView {
    let s = demo_system(seed, n_atoms);
    let full = build_radius_graph(&s, DEFAULT_CUTOFF, usize::MAX).expect("cell-free system");
    let cut = disconnect_graph(&full, &s.tags).expect("tags match atoms");
    let once = |g: &adslab_gnn::graph::GraphTopology| {
        let mut v: Vec<[usize; 2]> = g.edges().filter(|(a, b)| a < b).map(|(a, b)| [a, b]).collect();
        v.sort_unstable();
        v
    };
    let intra = once(&cut);
    let cross = once(&full)
        .into_iter()
        .filter(|e| intra.binary_search(e).is_err())
        .collect();
    SystemView {
        atoms: (0..s.len())
            .map(|i| Atom {
                z: s.atomic_numbers[i],
                tag: s.tags[i].as_u8(),
                position: s.positions[i],
            })
            .collect(),
        cutoff: DEFAULT_CUTOFF,
        intra_edges: intra,
        cross_edges: cross,
        attention_pairs: build_cross_attention_edges(&s, true).len() / 2,
    }
}

#[derive(Debug, Serialize)]
pub struct Curve {
    pub variant: String,
    pub energy: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct HeightSweep {
    /// Offset added to every adsorbate z coordinate, Å.
    pub offsets: Vec<f64>,
    pub curves: Vec<Curve>,
}

/// Predicted energy per variant as the adsorbate is lifted from `from` to
/// `to` Å relative to its generated placement, with random-weight models.
pub fn height_sweep(seed: u64, n_atoms: usize, from: f64, to: f64, steps: usize) -> HeightSweep {
    let s = demo_system(seed, n_atoms);
    let steps = steps.clamp(2, 200);
    let offsets: Vec<f64> = (0..steps)
        .map(|k| from + (to - from) * k as f64 / (steps - 1) as f64)
        .collect();
    let ads = s.adsorbate_indices();
    let identity = z_rotation(0.0);
    let systems: Vec<AtomicSystem> = offsets
        .iter()
        .map(|&dz| rigid_motion(&s, &ads, &identity, [0.0, 0.0, dz]))
        .collect();
    let curves = demo_models(seed)
        .iter()
        .map(|m| Curve {
            variant: m.variant().to_string(),
            energy: m.predict_batch(&systems).expect("valid systems"),
        })
        .collect();
    HeightSweep { offsets, curves }
}

#[derive(Debug, Serialize)]
pub struct Probe {
    pub variant: String,
    pub energy: f64,
    /// |ΔE| after shuffling atom order.
    pub permutation: f64,
    /// |ΔE| after rotating the whole system about z and sliding it in the
    /// surface plane. Attention reads absolute catalyst heights, so a z shift
    /// is not a symmetry unless cross-edge heights are centred.
    pub rigid: f64,
    /// |ΔE| after rotating and translating the adsorbate alone.
    pub adsorbate_only: f64,
}

/// Prediction changes under three transforms. The adsorbate-only motion is
/// invisible to the disconnected variants and visible to the connected one.
pub fn invariance_probe(seed: u64, n_atoms: usize) -> Vec<Probe> {
    let s = demo_system(seed, n_atoms);
    let mut rng = SplitMix64::new(seed ^ 0x7072_6f62);
    let perm = random_permutation(&mut rng, s.len());
    let all: Vec<usize> = (0..s.len()).collect();
    let ads = s.adsorbate_indices();
    let shuffled = s.subset(&perm);
    let moved = rigid_motion(&s, &all, &z_rotation(rng.uniform(0.0, 6.3)), [1.3, -0.7, 0.0]);
    let shifted = rigid_motion(&s, &ads, &random_rotation(&mut rng), [0.8, 0.4, 0.6]);
    demo_models(seed)
        .iter()
        .map(|m| {
            let e = m.predict(&s).expect("valid system");
            let delta = |t: &AtomicSystem| (m.predict(t).expect("valid system") - e).abs();
            Probe {
                variant: m.variant().to_string(),
                energy: e,
                permutation: delta(&shuffled),
                rigid: delta(&moved),
                adsorbate_only: delta(&shifted),
            }
        })
        .collect()
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("plain data serializes")
}

#[wasm_bindgen(js_name = systemView)]
pub fn system_view_js(seed: u32, n_atoms: u32) -> String {
    to_json(&system_view(u64::from(seed), n_atoms as usize))
}

#[wasm_bindgen(js_name = heightSweep)]
pub fn height_sweep_js(seed: u32, n_atoms: u32, from: f64, to: f64, steps: u32) -> String {
    to_json(&height_sweep(
        u64::from(seed),
        n_atoms as usize,
        from,
        to,
        steps as usize,
    ))
}

#[wasm_bindgen(js_name = invarianceProbe)]
pub fn invariance_probe_js(seed: u32, n_atoms: u32) -> String {
    to_json(&invariance_probe(u64::from(seed), n_atoms as usize))
}
