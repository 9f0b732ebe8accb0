//! Random adsorbate–catalyst systems and rigid transforms for property checks.

use crate::rng::SplitMix64;
use crate::system::{AtomicSystem, Tag, Vec3};

pub type Mat3 = [[f64; 3]; 3];

const METALS: [u32; 8] = [26, 27, 28, 29, 46, 47, 78, 79];
const LIGHT: [u32; 4] = [1, 6, 7, 8];
const MIN_SEPARATION: f64 = 1.0;

fn far_enough(p: &Vec3, others: &[Vec3]) -> bool {
    others.iter().all(|q| dist(p, q) >= MIN_SEPARATION)
}

fn dist(a: &Vec3, b: &Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// A cell-free system of `n_atoms` (at least 3) atoms: a catalyst patch with
/// surface and subsurface atoms, and a small adsorbate above it. Atoms are
/// at least 1 Å apart and every radius-graph distance is distinct with
/// probability one.
pub fn random_adslab(seed: u64, n_atoms: usize) -> AtomicSystem {
    assert!(n_atoms >= 3, "need room for both components");
    let mut rng = SplitMix64::new(seed);
    let n_ads = 1 + rng.below((n_atoms - 2).min(5));
    let n_cat = n_atoms - n_ads;
    let side = 2.0 + (n_cat as f64).sqrt() * 1.6;

    let mut positions: Vec<Vec3> = Vec::with_capacity(n_atoms);
    let mut numbers = Vec::with_capacity(n_atoms);
    let mut tags = Vec::with_capacity(n_atoms);
    while positions.len() < n_cat {
        let p = [rng.uniform(0.0, side), rng.uniform(0.0, side), rng.uniform(0.0, 3.0)];
        if far_enough(&p, &positions) {
            positions.push(p);
            numbers.push(METALS[rng.below(METALS.len())]);
            tags.push(if p[2] > 1.5 { Tag::Surface } else { Tag::Subsurface });
        }
    }
    // the two highest catalyst atoms are surface, so cross edges reach an
    // adsorbate from more than one source whenever possible
    let mut by_height: Vec<usize> = (0..n_cat).collect();
    by_height.sort_by(|&a, &b| positions[b][2].total_cmp(&positions[a][2]));
    for &i in by_height.iter().take(2) {
        tags[i] = Tag::Surface;
    }

    let centre = [side / 2.0, side / 2.0, 5.0];
    while positions.len() < n_atoms {
        let p = [
            centre[0] + rng.uniform(-1.5, 1.5),
            centre[1] + rng.uniform(-1.5, 1.5),
            centre[2] + rng.uniform(-1.0, 1.0),
        ];
        if far_enough(&p, &positions) {
            positions.push(p);
            numbers.push(LIGHT[rng.below(LIGHT.len())]);
            tags.push(Tag::Adsorbate);
        }
    }
    AtomicSystem::new(format!("random-{seed}"), numbers, positions, tags).expect("valid by construction")
}

/// Uniform random rotation from a normalized Gaussian quaternion.
pub fn random_rotation(rng: &mut SplitMix64) -> Mat3 {
    let (w, x, y, z) = loop {
        let q = [rng.normal(), rng.normal(), rng.normal(), rng.normal()];
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-9 {
            break (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
        }
    };
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

pub fn z_rotation(theta: f64) -> Mat3 {
    let (s, c) = theta.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

pub fn mat_vec(m: &Mat3, v: &Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Applies `p ↦ R·(p − c) + c + t` to the atoms in `atoms`, with `c` their
/// centroid. When every atom moves, the cell vectors are rotated as well.
pub fn rigid_motion(system: &AtomicSystem, atoms: &[usize], rot: &Mat3, shift: Vec3) -> AtomicSystem {
    let mut out = system.clone();
    let n = atoms.len().max(1) as f64;
    let mut c = [0.0; 3];
    for &i in atoms {
        for d in 0..3 {
            c[d] += system.positions[i][d] / n;
        }
    }
    for &i in atoms {
        let p = system.positions[i];
        let r = mat_vec(rot, &[p[0] - c[0], p[1] - c[1], p[2] - c[2]]);
        out.positions[i] = [r[0] + c[0] + shift[0], r[1] + c[1] + shift[1], r[2] + c[2] + shift[2]];
    }
    if atoms.len() == system.len() {
        if let Some(cell) = &mut out.cell {
            for row in cell.iter_mut() {
                *row = mat_vec(rot, row);
            }
        }
    }
    out
}

pub fn random_permutation(rng: &mut SplitMix64, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut p);
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_systems_are_valid_adslabs() {
        for seed in 0..40 {
            let n = 6 + seed as usize % 25;
            let s = random_adslab(seed, n);
            assert_eq!(s.len(), n);
            s.validate_adslab().unwrap();
            assert!(s.tags.contains(&Tag::Surface));
        }
    }

    #[test]
    fn rotations_are_orthonormal() {
        let mut rng = SplitMix64::new(5);
        for _ in 0..20 {
            let r = random_rotation(&mut rng);
            for i in 0..3 {
                for j in 0..3 {
                    let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                    assert!((dot - f64::from(u8::from(i == j))).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rigid_motion_keeps_distances() {
        let s = random_adslab(3, 12);
        let mut rng = SplitMix64::new(1);
        let r = random_rotation(&mut rng);
        let all: Vec<usize> = (0..s.len()).collect();
        let m = rigid_motion(&s, &all, &r, [1.0, -2.0, 0.5]);
        for i in 0..s.len() {
            for j in 0..s.len() {
                assert!(
                    (dist(&s.positions[i], &s.positions[j]) - dist(&m.positions[i], &m.positions[j])).abs() < 1e-12
                );
            }
        }
    }
}
