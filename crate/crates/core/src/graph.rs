//! Graph creation: radius graphs with periodic images, adsorbate/catalyst
//! disconnection, subsurface-atom removal and the weighted bipartite
//! cross-edge set used by the attention variant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::system::{AtomicSystem, Cell, Tag, Vec3};

pub const DEFAULT_CUTOFF: f64 = 6.0;
pub const DEFAULT_MAX_NEIGHBORS: usize = 50;

/// Directed edges `src → dst`. `edge_vector[k]` is the displacement from
/// `dst` to the (possibly periodic) image of `src`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GraphTopology {
    pub num_nodes: usize,
    pub edge_src: Vec<usize>,
    pub edge_dst: Vec<usize>,
    pub edge_distance: Vec<f64>,
    pub edge_vector: Vec<Vec3>,
    pub cross_edges: Option<CrossEdgeSet>,
}

impl GraphTopology {
    pub fn num_edges(&self) -> usize {
        self.edge_src.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edge_src.iter().copied().zip(self.edge_dst.iter().copied())
    }

    /// Keeps edges for which `keep(k)` holds, preserving order.
    fn filter_edges(&self, keep: impl Fn(usize) -> bool) -> GraphTopology {
        let idx: Vec<usize> = (0..self.num_edges()).filter(|&k| keep(k)).collect();
        GraphTopology {
            num_nodes: self.num_nodes,
            edge_src: idx.iter().map(|&k| self.edge_src[k]).collect(),
            edge_dst: idx.iter().map(|&k| self.edge_dst[k]).collect(),
            edge_distance: idx.iter().map(|&k| self.edge_distance[k]).collect(),
            edge_vector: idx.iter().map(|&k| self.edge_vector[k]).collect(),
            cross_edges: self.cross_edges.clone(),
        }
    }
}

/// Catalyst ↔ adsorbate edges carrying a signed height weight.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CrossEdgeSet {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub weight: Vec<f64>,
}

impl CrossEdgeSet {
    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    /// Checks that edges come in `(i→j, z), (j→i, −z)` pairs joining a
    /// catalyst node and an adsorbate node.
    pub fn check_antisymmetric(&self, tags: &[Tag]) -> std::result::Result<(), String> {
        if self.src.len() != self.dst.len() || self.src.len() != self.weight.len() {
            return Err("ragged cross-edge arrays".into());
        }
        let mut forward = std::collections::HashMap::new();
        for k in 0..self.len() {
            let (s, d) = (self.src[k], self.dst[k]);
            let (ts, td) = match (tags.get(s), tags.get(d)) {
                (Some(a), Some(b)) => (*a, *b),
                _ => return Err(format!("cross edge {k} ({s}→{d}) out of range")),
            };
            if ts.is_adsorbate() == td.is_adsorbate() {
                return Err(format!("cross edge {k} ({s}→{d}) does not join catalyst and adsorbate"));
            }
            if ts.is_catalyst() && forward.insert((s, d), self.weight[k]).is_some() {
                return Err(format!("duplicate cross edge {s}→{d}"));
            }
        }
        let mut reverse_seen = 0;
        for k in 0..self.len() {
            let (s, d) = (self.src[k], self.dst[k]);
            if tags[s].is_adsorbate() {
                match forward.get(&(d, s)) {
                    Some(&w) if w == -self.weight[k] => reverse_seen += 1,
                    Some(&w) => {
                        return Err(format!(
                            "edge {s}→{d} has weight {} but its pair has {w}",
                            self.weight[k]
                        ));
                    }
                    None => return Err(format!("edge {s}→{d} has no catalyst→adsorbate partner")),
                }
            }
        }
        if reverse_seen != forward.len() {
            return Err("unpaired catalyst→adsorbate edges".into());
        }
        Ok(())
    }
}

fn det(c: &Cell) -> f64 {
    c[0][0] * (c[1][1] * c[2][2] - c[1][2] * c[2][1]) - c[0][1] * (c[1][0] * c[2][2] - c[1][2] * c[2][0])
        + c[0][2] * (c[1][0] * c[2][1] - c[1][1] * c[2][0])
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: Vec3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Perpendicular widths of the cell along each lattice direction.
pub fn cell_widths(cell: &Cell) -> Result<Vec3> {
    let volume = det(cell).abs();
    if volume < 1e-6 {
        return Err(Error::DegenerateCell(volume));
    }
    Ok([
        volume / norm(cross(cell[1], cell[2])),
        volume / norm(cross(cell[2], cell[0])),
        volume / norm(cross(cell[0], cell[1])),
    ])
}

/// Lattice shifts for the 27-cell neighbourhood, or just the origin.
pub fn image_shifts(cell: Option<&Cell>) -> Vec<Vec3> {
    match cell {
        None => vec![[0.0; 3]],
        Some(c) => {
            let mut out = Vec::with_capacity(27);
            for na in -1..=1 {
                for nb in -1..=1 {
                    for nc in -1..=1 {
                        let (fa, fb, fc) = (na as f64, nb as f64, nc as f64);
                        out.push([
                            fa * c[0][0] + fb * c[1][0] + fc * c[2][0],
                            fa * c[0][1] + fb * c[1][1] + fc * c[2][1],
                            fa * c[0][2] + fb * c[1][2] + fc * c[2][2],
                        ]);
                    }
                }
            }
            out
        }
    }
}

/// Directed edges `j → i` for every pair within `cutoff`, including periodic
/// images when the system has a cell. Each node keeps at most
/// `max_neighbors` incoming edges: nearest first, ties to the lower source
/// index. Self-pairs are never connected, even through an image.
pub fn build_radius_graph(system: &AtomicSystem, cutoff: f64, max_neighbors: usize) -> Result<GraphTopology> {
    if !(cutoff > 0.0) {
        return Err(Error::Config(format!("cutoff must be positive, got {cutoff}")));
    }
    if max_neighbors == 0 {
        return Err(Error::Config("max_neighbors must be at least 1".into()));
    }
    if let Some(cell) = &system.cell {
        let widths = cell_widths(cell)?;
        if let Some(&w) = widths.iter().find(|&&w| w < cutoff) {
            return Err(Error::CellTooSmall { width: w, cutoff });
        }
    }
    let shifts = image_shifts(system.cell.as_ref());
    let n = system.len();
    let pos = &system.positions;
    let mut topo = GraphTopology {
        num_nodes: n,
        ..Default::default()
    };
    let mut candidates: Vec<(f64, usize, usize, Vec3)> = Vec::new();
    for i in 0..n {
        candidates.clear();
        for j in 0..n {
            if j == i {
                continue;
            }
            for (s, shift) in shifts.iter().enumerate() {
                let v = [
                    pos[j][0] + shift[0] - pos[i][0],
                    pos[j][1] + shift[1] - pos[i][1],
                    pos[j][2] + shift[2] - pos[i][2],
                ];
                let d = norm(v);
                if d <= cutoff {
                    candidates.push((d, j, s, v));
                }
            }
        }
        if candidates.len() > max_neighbors {
            candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            candidates.truncate(max_neighbors);
        }
        for &(d, j, _, v) in candidates.iter() {
            topo.edge_src.push(j);
            topo.edge_dst.push(i);
            topo.edge_distance.push(d);
            topo.edge_vector.push(v);
        }
    }
    Ok(topo)
}

/// Drops every edge joining an adsorbate node to a catalyst node.
pub fn disconnect_graph(topology: &GraphTopology, tags: &[Tag]) -> Result<GraphTopology> {
    if tags.len() != topology.num_nodes {
        return Err(Error::shape("disconnect_graph", &[topology.num_nodes], &[tags.len()]));
    }
    Ok(topology
        .filter_edges(|k| tags[topology.edge_src[k]].is_adsorbate() == tags[topology.edge_dst[k]].is_adsorbate()))
}

/// Removes fixed subsurface (tag 0) atoms, keeping survivor order.
pub fn remove_tag0_atoms(system: &AtomicSystem) -> Result<AtomicSystem> {
    let keep: Vec<usize> = (0..system.len())
        .filter(|&i| system.tags[i] != Tag::Subsurface)
        .collect();
    if keep.is_empty() {
        return Err(Error::InvalidSystem {
            id: system.id.clone(),
            reason: "every atom is tag 0".into(),
        });
    }
    Ok(system.subset(&keep))
}

/// Highest surface (tag 1) z, falling back to the highest catalyst z.
pub fn surface_height(system: &AtomicSystem) -> Option<f64> {
    let top = |want: &dyn Fn(Tag) -> bool| {
        system
            .positions
            .iter()
            .zip(&system.tags)
            .filter(|(_, &t)| want(t))
            .map(|(p, _)| p[2])
            .fold(None, |m: Option<f64>, z| Some(m.map_or(z, |m| m.max(z))))
    };
    top(&|t| t == Tag::Surface).or_else(|| top(&|t: Tag| t.is_catalyst()))
}

/// For every catalyst atom `i` (tag 0 or 1) and adsorbate atom `j`, the edge
/// `i → j` with weight `z_i` and `j → i` with weight `−z_i`. With
/// `center_z_on_surface`, `z_i` is measured from the top surface layer.
pub fn build_cross_attention_edges(system: &AtomicSystem, center_z_on_surface: bool) -> CrossEdgeSet {
    let origin = if center_z_on_surface {
        surface_height(system).unwrap_or(0.0)
    } else {
        0.0
    };
    let ads = system.adsorbate_indices();
    let cat = system.catalyst_indices();
    let mut set = CrossEdgeSet::default();
    for &i in &cat {
        let z = system.positions[i][2] - origin;
        for &j in &ads {
            set.src.push(i);
            set.dst.push(j);
            set.weight.push(z);
            set.src.push(j);
            set.dst.push(i);
            set.weight.push(-z);
        }
    }
    set
}

/// Adsorbate (tag 2) and catalyst (tag 0/1) node indices, ascending.
pub fn component_masks(tags: &[Tag]) -> Result<(Vec<usize>, Vec<usize>)> {
    let (ads, cat): (Vec<usize>, Vec<usize>) = (0..tags.len()).partition(|&i| tags[i].is_adsorbate());
    if ads.is_empty() {
        return Err(Error::EmptyComponent("adsorbate"));
    }
    if cat.is_empty() {
        return Err(Error::EmptyComponent("catalyst"));
    }
    Ok((ads, cat))
}

/// Connected-component label per node (union-find over undirected edges).
pub fn connected_components(num_nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Vec<usize> {
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut parent: Vec<usize> = (0..num_nodes).collect();
    for (a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    (0..num_nodes).map(|x| find(&mut parent, x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn system(pos: Vec<Vec3>, tags: Vec<Tag>) -> AtomicSystem {
        let n = pos.len();
        AtomicSystem::new("t", vec![6; n], pos, tags).unwrap()
    }

    #[test]
    fn two_atoms_within_and_beyond_cutoff() {
        let s = system(vec![[0.0; 3], [1.0, 0.0, 0.0]], vec![Tag::Surface, Tag::Adsorbate]);
        let g = build_radius_graph(&s, 6.0, 50).unwrap();
        let mut edges: Vec<_> = g.edges().collect();
        edges.sort();
        assert_eq!(edges, vec![(0, 1), (1, 0)]);
        assert_eq!(g.edge_distance, vec![1.0, 1.0]);

        let s = system(vec![[0.0; 3], [7.0, 0.0, 0.0]], vec![Tag::Surface, Tag::Adsorbate]);
        assert_eq!(build_radius_graph(&s, 6.0, 50).unwrap().num_edges(), 0);
    }

    fn brute_force(s: &AtomicSystem, cutoff: f64) -> Vec<(usize, usize, i64)> {
        let mut out = Vec::new();
        for i in 0..s.len() {
            for j in 0..s.len() {
                if i == j {
                    continue;
                }
                let d: f64 = (0..3)
                    .map(|k| (s.positions[i][k] - s.positions[j][k]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if d <= cutoff {
                    out.push((j, i, (d * 1e9).round() as i64));
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn cubic_cluster_matches_brute_force() {
        let mut pos = Vec::new();
        for x in 0..2 {
            for y in 0..2 {
                for z in 0..2 {
                    pos.push([x as f64 * 2.0, y as f64 * 2.0, z as f64 * 2.0]);
                }
            }
        }
        let s = system(pos, vec![Tag::Surface; 8]);
        // spans nearest (2.0) and face diagonals (2.83) but not body diagonals (3.46)
        let g = build_radius_graph(&s, 3.0, 50).unwrap();
        let mut got: Vec<_> = (0..g.num_edges())
            .map(|k| (g.edge_src[k], g.edge_dst[k], (g.edge_distance[k] * 1e9).round() as i64))
            .collect();
        got.sort();
        assert_eq!(got, brute_force(&s, 3.0));
        assert_eq!(got.len(), 8 * 6);
    }

    #[test]
    fn periodic_images_and_cell_errors() {
        let mut s = system(
            vec![[0.5, 0.5, 0.5], [7.5, 0.5, 0.5]],
            vec![Tag::Surface, Tag::Adsorbate],
        );
        s.cell = Some([[8.0, 0.0, 0.0], [0.0, 8.0, 0.0], [0.0, 0.0, 8.0]]);
        let g = build_radius_graph(&s, 6.0, 50).unwrap();
        // direct separation 7.0, image separation 1.0
        let mut d = g.edge_distance.clone();
        d.sort_by(f64::total_cmp);
        assert!((d[0] - 1.0).abs() < 1e-12 && (d[1] - 1.0).abs() < 1e-12);
        for k in 0..g.num_edges() {
            assert!((norm(g.edge_vector[k]) - g.edge_distance[k]).abs() < 1e-9);
        }

        s.cell = Some([[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, 8.0]]);
        assert!(matches!(build_radius_graph(&s, 6.0, 50), Err(Error::DegenerateCell(_))));
        s.cell = Some([[4.0, 0.0, 0.0], [0.0, 8.0, 0.0], [0.0, 0.0, 8.0]]);
        assert!(matches!(
            build_radius_graph(&s, 6.0, 50),
            Err(Error::CellTooSmall { .. })
        ));
    }

    #[test]
    fn neighbor_cap_keeps_nearest_with_index_ties() {
        // node 0 at origin, four sources at distances 1, 2, 2, 3
        let pos = vec![
            [0.0; 3],
            [3.0, 0.0, 0.0],
            [0.0, 2.0, 0.0],
            [0.0, -2.0, 0.0],
            [1.0, 0.0, 0.0],
        ];
        let s = system(pos, vec![Tag::Surface; 5]);
        let g = build_radius_graph(&s, 10.0, 2).unwrap();
        let into0: Vec<usize> = (0..g.num_edges())
            .filter(|&k| g.edge_dst[k] == 0)
            .map(|k| g.edge_src[k])
            .collect();
        assert_eq!(into0, vec![4, 2]);
    }

    #[test]
    fn disconnect_examples() {
        let s = system(vec![[0.0; 3], [1.0, 0.0, 0.0]], vec![Tag::Adsorbate, Tag::Surface]);
        let g = build_radius_graph(&s, 6.0, 50).unwrap();
        assert_eq!(disconnect_graph(&g, &s.tags).unwrap().num_edges(), 0);

        let tags = [Tag::Adsorbate, Tag::Adsorbate, Tag::Surface, Tag::Surface];
        let g = GraphTopology {
            num_nodes: 4,
            edge_src: vec![0, 2, 1],
            edge_dst: vec![1, 3, 2],
            edge_distance: vec![1.0; 3],
            edge_vector: vec![[1.0, 0.0, 0.0]; 3],
            cross_edges: None,
        };
        let d = disconnect_graph(&g, &tags).unwrap();
        assert_eq!(d.edges().collect::<Vec<_>>(), vec![(0, 1), (2, 3)]);
        assert_eq!(disconnect_graph(&d, &tags).unwrap(), d);
    }

    #[test]
    fn disconnect_random_graph_matches_predicate_oracle() {
        let mut rng = SplitMix64::new(5);
        let n = 20;
        let tags: Vec<Tag> = (0..n)
            .map(|_| [Tag::Subsurface, Tag::Surface, Tag::Adsorbate][rng.below(3)])
            .collect();
        let pos: Vec<Vec3> = (0..n)
            .map(|_| [rng.uniform(0.0, 6.0), rng.uniform(0.0, 6.0), rng.uniform(0.0, 6.0)])
            .collect();
        let s = system(pos, tags.clone());
        let g = build_radius_graph(&s, 4.0, 50).unwrap();
        let d = disconnect_graph(&g, &tags).unwrap();
        let mut removed = Vec::new();
        for (a, b) in g.edges() {
            let side = |t: Tag| t == Tag::Adsorbate;
            if side(tags[a]) != side(tags[b]) {
                removed.push((a, b));
            }
        }
        assert_eq!(d.num_edges() + removed.len(), g.num_edges());
        let kept: std::collections::HashSet<_> = d.edges().collect();
        assert!(removed.iter().all(|e| !kept.contains(e)));
        let comp = connected_components(n, d.edges());
        for i in 0..n {
            for j in 0..n {
                if comp[i] == comp[j] {
                    assert_eq!(tags[i].is_adsorbate(), tags[j].is_adsorbate());
                }
            }
        }
    }

    #[test]
    fn tag0_removal() {
        let s = system(
            vec![[0.0; 3], [1.0; 3], [2.0; 3]],
            vec![Tag::Subsurface, Tag::Surface, Tag::Adsorbate],
        );
        let r = remove_tag0_atoms(&s).unwrap();
        assert_eq!(r.tags, vec![Tag::Surface, Tag::Adsorbate]);
        assert_eq!(r.positions, vec![[1.0; 3], [2.0; 3]]);

        let s = system(vec![[0.0; 3], [1.0; 3]], vec![Tag::Surface, Tag::Adsorbate]);
        assert_eq!(remove_tag0_atoms(&s).unwrap(), s);

        let s = system(vec![[0.0; 3]], vec![Tag::Subsurface]);
        assert!(remove_tag0_atoms(&s).is_err());

        let mut rng = SplitMix64::new(9);
        let mut tags = vec![Tag::Subsurface; 12];
        tags.extend(vec![Tag::Surface; 10]);
        tags.extend(vec![Tag::Adsorbate; 8]);
        rng.shuffle(&mut tags);
        let pos: Vec<Vec3> = (0..30).map(|_| [rng.normal(), rng.normal(), rng.normal()]).collect();
        let s = system(pos.clone(), tags.clone());
        let r = remove_tag0_atoms(&s).unwrap();
        let expect: Vec<Vec3> = (0..30)
            .filter(|&i| tags[i] != Tag::Subsurface)
            .map(|i| pos[i])
            .collect();
        assert_eq!(r.len(), 18);
        assert_eq!(r.positions, expect);
    }

    #[test]
    fn cross_edges_single_pair_and_counts() {
        let s = system(
            vec![[0.0, 0.0, 3.2], [0.0, 0.0, 5.0]],
            vec![Tag::Surface, Tag::Adsorbate],
        );
        let c = build_cross_attention_edges(&s, false);
        assert_eq!(c.src, vec![0, 1]);
        assert_eq!(c.dst, vec![1, 0]);
        assert_eq!(c.weight, vec![3.2, -3.2]);
        c.check_antisymmetric(&s.tags).unwrap();

        let s = system(
            vec![[0.0; 3], [1.0; 3], [2.0; 3], [3.0; 3], [4.0; 3]],
            vec![
                Tag::Surface,
                Tag::Subsurface,
                Tag::Adsorbate,
                Tag::Adsorbate,
                Tag::Adsorbate,
            ],
        );
        let c = build_cross_attention_edges(&s, false);
        assert_eq!(c.len(), 12);
        c.check_antisymmetric(&s.tags).unwrap();
    }

    #[test]
    fn cross_edge_weights_follow_catalyst_z_only() {
        let base = system(
            vec![[0.0, 0.0, 1.0], [2.0, 0.0, 1.5], [0.5, 0.5, 4.0], [1.0, 0.5, 4.5]],
            vec![Tag::Surface, Tag::Surface, Tag::Adsorbate, Tag::Adsorbate],
        );
        let w0 = build_cross_attention_edges(&base, false).weight;
        let mut moved = base.clone();
        for i in [2, 3] {
            moved.positions[i][0] += 3.0;
            moved.positions[i][2] += 1.7;
        }
        assert_eq!(build_cross_attention_edges(&moved, false).weight, w0);
        let mut lifted = base.clone();
        for i in [0, 1] {
            lifted.positions[i][2] += 0.75;
        }
        let w1 = build_cross_attention_edges(&lifted, false).weight;
        for (a, b) in w0.iter().zip(&w1) {
            assert!(((b - a).abs() - 0.75).abs() < 1e-12);
        }
        // centered weights ignore the lift
        assert_eq!(
            build_cross_attention_edges(&lifted, true).weight,
            build_cross_attention_edges(&base, true).weight
        );
    }

    #[test]
    fn antisymmetry_check_catches_broken_pairs() {
        let tags = [Tag::Surface, Tag::Adsorbate];
        let bad = CrossEdgeSet {
            src: vec![0, 1],
            dst: vec![1, 0],
            weight: vec![1.0, 1.0],
        };
        assert!(bad.check_antisymmetric(&tags).is_err());
        let missing = CrossEdgeSet {
            src: vec![0],
            dst: vec![1],
            weight: vec![1.0],
        };
        assert!(missing.check_antisymmetric(&tags).is_err());
    }

    #[test]
    fn masks() {
        use Tag::*;
        assert_eq!(
            component_masks(&[Adsorbate, Surface, Subsurface, Adsorbate]).unwrap(),
            (vec![0, 3], vec![1, 2])
        );
        assert_eq!(component_masks(&[Adsorbate, Surface]).unwrap(), (vec![0], vec![1]));
        assert!(component_masks(&[Surface, Surface]).is_err());
        assert!(component_masks(&[Adsorbate]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn masks_partition_the_range(raw in proptest::collection::vec(0u8..3, 2..60)) {
            let tags: Vec<Tag> = raw.iter().map(|&t| Tag::try_from(t as i64).unwrap()).collect();
            if let Ok((ads, cat)) = component_masks(&tags) {
                let mut all: Vec<usize> = ads.iter().chain(&cat).copied().collect();
                all.sort();
                proptest::prop_assert_eq!(all, (0..tags.len()).collect::<Vec<_>>());
                proptest::prop_assert!(ads.windows(2).all(|w| w[0] < w[1]));
                proptest::prop_assert!(cat.windows(2).all(|w| w[0] < w[1]));
            }
        }

        #[test]
        fn uncapped_radius_graph_is_symmetric(seed in 0u64..500) {
            let mut rng = SplitMix64::new(seed);
            let n = 2 + rng.below(15);
            let pos: Vec<Vec3> = (0..n).map(|_| [rng.uniform(0.0, 8.0), rng.uniform(0.0, 8.0), rng.uniform(0.0, 8.0)]).collect();
            let s = system(pos, vec![Tag::Surface; n]);
            let g = build_radius_graph(&s, 4.0, 1000).unwrap();
            let set: std::collections::HashSet<_> = g.edges().collect();
            for &(a, b) in &set {
                proptest::prop_assert!(set.contains(&(b, a)));
            }
        }
    }
}
