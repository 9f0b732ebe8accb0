//! Per-system graphs and their concatenation into batches.
//!
//! Systems are batched by stacking nodes with index offsets and a per-node
//! graph id; pooling then scatters by graph id.

use crate::error::Result;
use crate::graph::{self, CrossEdgeSet, GraphTopology};
use crate::system::{AtomicSystem, Tag};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphOptions {
    pub cutoff: f64,
    pub max_neighbors: usize,
    pub remove_tag0: bool,
    pub disconnect: bool,
    pub cross_edges: bool,
    pub center_z_on_surface: bool,
}

/// One system after graph creation, ready to be batched.
#[derive(Debug, Clone)]
pub struct SystemGraph {
    pub atomic_numbers: Vec<u32>,
    pub tags: Vec<Tag>,
    pub topology: GraphTopology,
}

impl SystemGraph {
    pub fn build(system: &AtomicSystem, opts: &GraphOptions) -> Result<Self> {
        let owned;
        let system = if opts.remove_tag0 {
            owned = graph::remove_tag0_atoms(system)?;
            &owned
        } else {
            system
        };
        let mut topology = graph::build_radius_graph(system, opts.cutoff, opts.max_neighbors)?;
        if opts.disconnect {
            topology = graph::disconnect_graph(&topology, &system.tags)?;
        }
        if opts.cross_edges {
            topology.cross_edges = Some(graph::build_cross_attention_edges(system, opts.center_z_on_surface));
        }
        Ok(SystemGraph {
            atomic_numbers: system.atomic_numbers.clone(),
            tags: system.tags.clone(),
            topology,
        })
    }

    pub fn len(&self) -> usize {
        self.atomic_numbers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atomic_numbers.is_empty()
    }
}

/// Nodes and edges of one or more graphs, indices global to the batch.
#[derive(Debug, Clone, Default)]
pub struct GraphBatch {
    pub atomic_numbers: Vec<u32>,
    pub tags: Vec<Tag>,
    pub graph_id: Vec<usize>,
    pub num_graphs: usize,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub distance: Vec<f64>,
}

impl GraphBatch {
    pub fn num_nodes(&self) -> usize {
        self.atomic_numbers.len()
    }

    pub fn num_edges(&self) -> usize {
        self.src.len()
    }

    pub fn from_graphs(graphs: &[&SystemGraph]) -> Self {
        let mut b = GraphBatch {
            num_graphs: graphs.len(),
            ..Default::default()
        };
        for (g, sg) in graphs.iter().enumerate() {
            let all: Vec<usize> = (0..sg.len()).collect();
            b.append(g, sg, &all);
        }
        b
    }

    /// Appends the nodes of `sg` listed in `keep` (with edges among them) as graph `g`.
    fn append(&mut self, g: usize, sg: &SystemGraph, keep: &[usize]) {
        let offset = self.num_nodes();
        let mut local = vec![usize::MAX; sg.len()];
        for (new, &old) in keep.iter().enumerate() {
            local[old] = offset + new;
            self.atomic_numbers.push(sg.atomic_numbers[old]);
            self.tags.push(sg.tags[old]);
            self.graph_id.push(g);
        }
        let t = &sg.topology;
        for k in 0..t.num_edges() {
            let (s, d) = (local[t.edge_src[k]], local[t.edge_dst[k]]);
            if s != usize::MAX && d != usize::MAX {
                self.src.push(s);
                self.dst.push(d);
                self.distance.push(t.edge_distance[k]);
            }
        }
    }
}

/// Cross edges in the combined indexing `[all adsorbate nodes, all catalyst nodes]`.
#[derive(Debug, Clone, Default)]
pub struct CrossBatch {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub weight: Vec<f64>,
    /// Graph each edge belongs to.
    pub graph: Vec<usize>,
}

impl CrossBatch {
    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

/// Adsorbate and catalyst parts of a batch as separate graphs.
#[derive(Debug, Clone, Default)]
pub struct SplitBatch {
    pub ads: GraphBatch,
    pub cat: GraphBatch,
    pub cross: CrossBatch,
}

impl SplitBatch {
    pub fn from_graphs(graphs: &[&SystemGraph]) -> Result<Self> {
        let mut out = SplitBatch::default();
        out.ads.num_graphs = graphs.len();
        out.cat.num_graphs = graphs.len();
        // (graph, ads offset, cat offset, local maps) for remapping cross edges
        let mut maps = Vec::with_capacity(graphs.len());
        for (g, sg) in graphs.iter().enumerate() {
            let (ads, cat) = graph::component_masks(&sg.tags)?;
            let mut local = vec![(false, 0usize); sg.len()];
            let (a0, c0) = (out.ads.num_nodes(), out.cat.num_nodes());
            for (k, &i) in ads.iter().enumerate() {
                local[i] = (true, a0 + k);
            }
            for (k, &i) in cat.iter().enumerate() {
                local[i] = (false, c0 + k);
            }
            out.ads.append(g, sg, &ads);
            out.cat.append(g, sg, &cat);
            maps.push(local);
        }
        let n_ads = out.ads.num_nodes();
        for (g, sg) in graphs.iter().enumerate() {
            if let Some(cross) = &sg.topology.cross_edges {
                let combined = |i: usize| {
                    let (is_ads, k) = maps[g][i];
                    if is_ads {
                        k
                    } else {
                        n_ads + k
                    }
                };
                push_cross(&mut out.cross, cross, g, combined);
            }
        }
        Ok(out)
    }

    pub fn num_graphs(&self) -> usize {
        self.ads.num_graphs
    }
}

fn push_cross(out: &mut CrossBatch, cross: &CrossEdgeSet, g: usize, map: impl Fn(usize) -> usize) {
    for k in 0..cross.len() {
        out.src.push(map(cross.src[k]));
        out.dst.push(map(cross.dst[k]));
        out.weight.push(cross.weight[k]);
        out.graph.push(g);
    }
}
