//! Seeded synthetic adsorbate + slab datasets with known energy structure.
//!
//! Every catalyst is a 3×3×3 metal slab (bottom two layers tag 0, top layer
//! tag 1) in a periodic cell; every adsorbate is a 2-6 atom molecule of H, C,
//! N, O placed above the surface. Targets are
//!
//! ```text
//! E = f(adsorbate composition) + g(catalyst composition) [+ h(d_min)] + noise
//! ```
//!
//! with `f`, `g` per-element linear maps and `h(d) = -k / (1 + d)` where
//! `d_min` is the smallest adsorbate to surface-atom distance over periodic
//! images. The placement height depends on an (adsorbate, catalyst) affinity,
//! so in binding mode the energy depends on the pair and not on either side
//! alone.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{cell_hash, Dataset};
use crate::error::{Error, Result};
use crate::fixtures::{mat_vec, random_rotation};
use crate::graph::image_shifts;
use crate::rng::SplitMix64;
use crate::system::{AtomicSystem, Cell, Metadata, Split, Tag, Vec3};

pub const ADSORBATE_ELEMENTS: [u32; 4] = [1, 6, 7, 8];
/// Transition and post-transition metals used for slabs.
pub const METALS: [u32; 30] = [
    21, 22, 23, 24, 25, 26, 27, 28, 29, 30, 39, 40, 41, 42, 44, 45, 46, 47, 48, 72, 73, 74, 75, 76, 77, 78, 79, 31, 49,
    50,
];
pub const BINDING_STRENGTH: f64 = 2.0;

const SLAB_LAYERS: usize = 3;
const SLAB_SIDE: usize = 3;
const SLAB_BASE_Z: f64 = 10.0;
const CELL_HEIGHT: f64 = 35.0;
const MIN_ATOM_SEPARATION: f64 = 0.9;

const STREAM_COEFFICIENTS: u64 = 1;
const STREAM_ADSORBATE: u64 = 1 << 20;
const STREAM_CATALYST: u64 = 2 << 20;
const STREAM_SAMPLE: u64 = 3 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionMode {
    /// `E = f + g + noise`.
    Separable,
    /// `E = f + g + h(d_min) + noise`.
    Binding,
}

impl InteractionMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "separable" => Some(Self::Separable),
            "binding" => Some(Self::Binding),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Separable => "separable",
            Self::Binding => "binding",
        }
    }
}

impl fmt::Display for InteractionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_val_per_split: usize,
    pub adsorbate_vocab_size: usize,
    pub catalyst_vocab_size: usize,
    pub interaction_mode: InteractionMode,
    pub noise_std: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 0,
            n_train: 2000,
            n_val_per_split: 200,
            adsorbate_vocab_size: 24,
            catalyst_vocab_size: 40,
            interaction_mode: InteractionMode::Binding,
            noise_std: 0.05,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.adsorbate_vocab_size == 0 || self.catalyst_vocab_size == 0 {
            return Err(Error::Config("vocabulary sizes must be positive".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("noise_std must be >= 0, got {}", self.noise_std)));
        }
        Ok(())
    }
}

/// Molecule template, centred on its centroid.
#[derive(Debug, Clone)]
pub struct AdsorbateTemplate {
    pub atomic_numbers: Vec<u32>,
    pub positions: Vec<Vec3>,
    /// In (-1, 1); enters the placement height.
    pub affinity: f64,
}

#[derive(Debug, Clone)]
pub struct CatalystTemplate {
    pub lattice: f64,
    /// Element of each slab site, layer-major, bottom layer first.
    pub site_elements: Vec<u32>,
    /// In (-1, 1); enters the placement height.
    pub reactivity: f64,
}

/// Everything fixed by the seed: element coefficients and the vocabularies.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub config: SyntheticConfig,
    /// `f` coefficient per entry of [`ADSORBATE_ELEMENTS`].
    pub adsorbate_coef: [f64; 4],
    /// `g` coefficient per entry of [`METALS`].
    pub metal_coef: [f64; 30],
    pub adsorbates: Vec<AdsorbateTemplate>,
    pub catalysts: Vec<CatalystTemplate>,
}

fn element_index(table: &[u32], z: u32) -> Option<usize> {
    table.iter().position(|&e| e == z)
}

impl SyntheticWorld {
    pub fn new(config: SyntheticConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = SplitMix64::derive(config.seed, STREAM_COEFFICIENTS);
        let mut adsorbate_coef = [0.0; 4];
        for c in &mut adsorbate_coef {
            *c = rng.uniform(-1.0, 1.0);
        }
        let mut metal_coef = [0.0; 30];
        for c in &mut metal_coef {
            *c = rng.uniform(-0.1, 0.1);
        }
        let mut ads_affinity = [0.0; 4];
        for c in &mut ads_affinity {
            *c = rng.uniform(-1.0, 1.0);
        }
        let mut metal_reactivity = [0.0; 30];
        for c in &mut metal_reactivity {
            *c = rng.uniform(-1.0, 1.0);
        }
        let adsorbates = (0..config.adsorbate_vocab_size)
            .map(|a| make_adsorbate(config.seed, a, &ads_affinity))
            .collect();
        let catalysts = (0..config.catalyst_vocab_size)
            .map(|c| make_catalyst(config.seed, c, &metal_reactivity))
            .collect();
        Ok(SyntheticWorld {
            config,
            adsorbate_coef,
            metal_coef,
            adsorbates,
            catalysts,
        })
    }

    /// `f(adsorbate) + g(catalyst)`: per-atom coefficient sum.
    pub fn separable_energy(&self, system: &AtomicSystem) -> f64 {
        system
            .atomic_numbers
            .iter()
            .zip(&system.tags)
            .map(|(&z, t)| {
                if t.is_adsorbate() {
                    element_index(&ADSORBATE_ELEMENTS, z).map_or(0.0, |i| self.adsorbate_coef[i])
                } else {
                    element_index(&METALS, z).map_or(0.0, |i| self.metal_coef[i])
                }
            })
            .sum()
    }

    /// Noise-free target.
    pub fn clean_energy(&self, system: &AtomicSystem) -> f64 {
        let base = self.separable_energy(system);
        match self.config.interaction_mode {
            InteractionMode::Separable => base,
            InteractionMode::Binding => base + binding_energy(min_surface_distance(system)),
        }
    }

    /// Held-out tail of a vocabulary of size `n`: the last quarter, at least one
    /// entry, and empty only when `n == 1`.
    fn ood_start(n: usize) -> usize {
        if n < 2 {
            n
        } else {
            n - (n / 4).max(1)
        }
    }

    fn pick(rng: &mut SplitMix64, range: std::ops::Range<usize>, fallback: usize) -> usize {
        if range.is_empty() {
            rng.below(fallback)
        } else {
            range.start + rng.below(range.len())
        }
    }

    /// Draws the (adsorbate, catalyst) vocabulary indices for a split.
    fn draw_pair(&self, rng: &mut SplitMix64, split: Split) -> (usize, usize) {
        let na = self.adsorbates.len();
        let nc = self.catalysts.len();
        let (a_ood, c_ood) = (Self::ood_start(na), Self::ood_start(nc));
        let (ads_range, cat_range) = match split {
            Split::Train | Split::ValId => (0..a_ood, 0..c_ood),
            Split::ValOodAds => (a_ood..na, 0..c_ood),
            Split::ValOodCat => (0..a_ood, c_ood..nc),
            Split::ValOodBoth => (a_ood..na, c_ood..nc),
        };
        (Self::pick(rng, ads_range, na), Self::pick(rng, cat_range, nc))
    }

    /// Builds the sample with global index `index` in `split`.
    pub fn sample(&self, split: Split, index: usize, global: usize) -> AtomicSystem {
        let mut rng = SplitMix64::derive(self.config.seed, STREAM_SAMPLE + global as u64);
        let (a, c) = self.draw_pair(&mut rng, split);
        let ads = &self.adsorbates[a];
        let cat = &self.catalysts[c];

        let (mut numbers, mut positions, mut tags, cell) = slab(cat, &mut rng);
        let top_z = positions
            .iter()
            .zip(&tags)
            .filter(|(_, t)| **t == Tag::Surface)
            .map(|(p, _)| p[2])
            .fold(f64::NEG_INFINITY, f64::max);

        let rot = random_rotation(&mut rng);
        let placed: Vec<Vec3> = ads.positions.iter().map(|p| mat_vec(&rot, p)).collect();
        let min_z = placed.iter().map(|p| p[2]).fold(f64::INFINITY, f64::min);
        let height = 1.9 + 0.8 * ads.affinity * cat.reactivity + rng.uniform(-0.25, 0.25);
        let side = cat.lattice * SLAB_SIDE as f64;
        let (sx, sy) = (rng.uniform(0.0, side), rng.uniform(0.0, side));
        for p in placed {
            numbers.push(0);
            positions.push([p[0] + sx, p[1] + sy, p[2] - min_z + top_z + height]);
            tags.push(Tag::Adsorbate);
        }
        let n_cat = numbers.len() - ads.atomic_numbers.len();
        numbers[n_cat..].copy_from_slice(&ads.atomic_numbers);

        let mut system = AtomicSystem {
            id: format!("{}-{index:05}", split.as_str()),
            atomic_numbers: numbers,
            positions,
            tags,
            cell: Some(cell),
            target_energy: None,
            metadata: Metadata {
                adsorbate_id: format!("ads{a:03}"),
                bulk_id: format!("bulk{c:03}"),
                cell_hash: cell_hash(Some(&cell)),
                split,
            },
        };
        let noise = if self.config.noise_std > 0.0 {
            self.config.noise_std * rng.normal()
        } else {
            0.0
        };
        system.target_energy = Some(self.clean_energy(&system) + noise);
        system
    }

    pub fn generate(&self) -> Result<Dataset> {
        let mut systems = Vec::new();
        let mut global = 0;
        let counts = std::iter::once((Split::Train, self.config.n_train))
            .chain(Split::VALIDATION.iter().map(|&s| (s, self.config.n_val_per_split)));
        for (split, n) in counts {
            for i in 0..n {
                systems.push(self.sample(split, i, global));
                global += 1;
            }
        }
        Dataset::new(systems)
    }
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Dataset> {
    SyntheticWorld::new(config.clone())?.generate()
}

/// `h(d) = -k / (1 + d)`; strictly increasing in `d`.
pub fn binding_energy(d_min: f64) -> f64 {
    -BINDING_STRENGTH / (1.0 + d_min)
}

/// Smallest distance between an adsorbate atom and a tag-1 atom, over periodic
/// images when the system has a cell. Infinite if either set is empty.
pub fn min_surface_distance(system: &AtomicSystem) -> f64 {
    let shifts = image_shifts(system.cell.as_ref());
    let mut best = f64::INFINITY;
    for (i, ti) in system.tags.iter().enumerate() {
        if !ti.is_adsorbate() {
            continue;
        }
        for (j, tj) in system.tags.iter().enumerate() {
            if *tj != Tag::Surface {
                continue;
            }
            for s in &shifts {
                let d: f64 = (0..3)
                    .map(|k| (system.positions[j][k] + s[k] - system.positions[i][k]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                best = best.min(d);
            }
        }
    }
    best
}

fn make_adsorbate(seed: u64, a: usize, affinity: &[f64; 4]) -> AdsorbateTemplate {
    let mut rng = SplitMix64::derive(seed, STREAM_ADSORBATE + a as u64);
    let n = 2 + rng.below(5);
    let mut numbers = vec![[6, 7, 8][rng.below(3)]];
    let mut positions: Vec<Vec3> = vec![[0.0; 3]];
    const OTHERS: [u32; 5] = [1, 1, 6, 7, 8];
    while numbers.len() < n {
        let parent = rng.below(positions.len());
        let mut bond = rng.uniform(1.0, 1.5);
        let candidate = loop {
            let dir = random_unit(&mut rng);
            let p = [
                positions[parent][0] + bond * dir[0],
                positions[parent][1] + bond * dir[1],
                positions[parent][2] + bond * dir[2],
            ];
            if positions.iter().all(|q| dist(&p, q) >= MIN_ATOM_SEPARATION) {
                break p;
            }
            bond += 0.05;
        };
        positions.push(candidate);
        numbers.push(OTHERS[rng.below(5)]);
    }
    let centroid = centroid(&positions);
    for p in &mut positions {
        for k in 0..3 {
            p[k] -= centroid[k];
        }
    }
    let raw: f64 = numbers
        .iter()
        .map(|&z| affinity[element_index(&ADSORBATE_ELEMENTS, z).unwrap()])
        .sum();
    AdsorbateTemplate {
        atomic_numbers: numbers,
        positions,
        affinity: raw.tanh(),
    }
}

fn make_catalyst(seed: u64, c: usize, reactivity: &[f64; 30]) -> CatalystTemplate {
    let mut rng = SplitMix64::derive(seed, STREAM_CATALYST + c as u64);
    let n_elem = 1 + rng.below(3);
    let mut pool: Vec<u32> = METALS.to_vec();
    rng.shuffle(&mut pool);
    let elements = &pool[..n_elem];
    let lattice = rng.uniform(2.6, 2.9);
    // Lower layers are permutations of the top one, so the whole-slab
    // composition is three times the surface composition.
    let per_layer = SLAB_SIDE * SLAB_SIDE;
    let top: Vec<u32> = (0..per_layer).map(|_| elements[rng.below(n_elem)]).collect();
    let mut site_elements = Vec::with_capacity(SLAB_LAYERS * per_layer);
    for _ in 1..SLAB_LAYERS {
        let mut layer = top.clone();
        rng.shuffle(&mut layer);
        site_elements.extend(layer);
    }
    site_elements.extend(top);
    let n_sites = site_elements.len();
    let mean: f64 = site_elements
        .iter()
        .map(|&z| reactivity[element_index(&METALS, z).unwrap()])
        .sum::<f64>()
        / n_sites as f64;
    CatalystTemplate {
        lattice,
        site_elements,
        reactivity: (3.0 * mean).tanh(),
    }
}

/// Slab atoms with a small per-sample jitter, and the periodic cell.
fn slab(cat: &CatalystTemplate, rng: &mut SplitMix64) -> (Vec<u32>, Vec<Vec3>, Vec<Tag>, Cell) {
    let a = cat.lattice;
    let dz = 0.82 * a;
    let mut numbers = Vec::new();
    let mut positions = Vec::new();
    let mut tags = Vec::new();
    let mut site = 0;
    for layer in 0..SLAB_LAYERS {
        let offset = (layer % 3) as f64 * a / 3.0;
        for i in 0..SLAB_SIDE {
            for j in 0..SLAB_SIDE {
                let jitter = [
                    rng.uniform(-0.05, 0.05),
                    rng.uniform(-0.05, 0.05),
                    rng.uniform(-0.05, 0.05),
                ];
                positions.push([
                    i as f64 * a + offset + jitter[0],
                    j as f64 * a + offset + jitter[1],
                    SLAB_BASE_Z + layer as f64 * dz + jitter[2],
                ]);
                numbers.push(cat.site_elements[site]);
                tags.push(if layer + 1 == SLAB_LAYERS {
                    Tag::Surface
                } else {
                    Tag::Subsurface
                });
                site += 1;
            }
        }
    }
    let side = a * SLAB_SIDE as f64;
    let cell = [[side, 0.0, 0.0], [0.0, side, 0.0], [0.0, 0.0, CELL_HEIGHT]];
    (numbers, positions, tags, cell)
}

fn random_unit(rng: &mut SplitMix64) -> Vec3 {
    loop {
        let v = [rng.normal(), rng.normal(), rng.normal()];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-9 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

fn dist(a: &Vec3, b: &Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn centroid(ps: &[Vec3]) -> Vec3 {
    let n = ps.len() as f64;
    let mut c = [0.0; 3];
    for p in ps {
        for k in 0..3 {
            c[k] += p[k] / n;
        }
    }
    c
}
