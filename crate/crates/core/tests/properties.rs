use std::collections::BTreeMap;

use proptest::prelude::*;

use adslab_gnn::backbone::BackboneConfig;
use adslab_gnn::data::{duplicate_target_stats, Dataset};
use adslab_gnn::fixtures::random_adslab;
use adslab_gnn::graph::{build_cross_attention_edges, build_radius_graph, disconnect_graph};
use adslab_gnn::system::{AtomicSystem, Split, Tag};
use adslab_gnn::tensor::{Tape, Tensor};
use adslab_gnn::variants::VariantKind;
use adslab_gnn::verify::{pairwise_duplicate_oracle, random_model};

fn edge_set(src: &[usize], dst: &[usize]) -> Vec<(usize, usize)> {
    let mut v: Vec<(usize, usize)> = src.iter().copied().zip(dst.iter().copied()).collect();
    v.sort_unstable();
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scatter_add_matches_loop(
        rows in prop::collection::vec((0usize..7, prop::collection::vec(-10.0f64..10.0, 3)), 0..40)
    ) {
        let index: Vec<usize> = rows.iter().map(|r| r.0).collect();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.1.clone()).collect();
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::matrix(rows.len(), 3, flat.clone()).unwrap());
        let out = tape.scatter_add(v, index.clone(), 7).unwrap();
        let mut expect = [0.0; 21];
        for (j, &i) in index.iter().enumerate() {
            for d in 0..3 {
                expect[i * 3 + d] += flat[j * 3 + d];
            }
        }
        prop_assert_eq!(tape.value(out).data(), &expect[..]);
    }

    #[test]
    fn segment_softmax_is_a_distribution(
        entries in prop::collection::vec((0usize..5, -300.0f64..300.0), 1..50)
    ) {
        let segment: Vec<usize> = entries.iter().map(|e| e.0).collect();
        let logits: Vec<f64> = entries.iter().map(|e| e.1).collect();
        let mut tape = Tape::new();
        let l = tape.constant(Tensor::column(logits));
        let out = tape.segment_softmax(l, segment.clone()).unwrap();
        let mut sums: BTreeMap<usize, f64> = BTreeMap::new();
        for (&p, &s) in tape.value(out).data().iter().zip(&segment) {
            prop_assert!((0.0..=1.0).contains(&p));
            *sums.entry(s).or_default() += p;
        }
        for total in sums.values() {
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn radius_graph_is_symmetric_and_within_cutoff(seed in any::<u64>(), n in 3usize..25, cutoff in 1.5f64..7.0) {
        let s = random_adslab(seed, n);
        let g = build_radius_graph(&s, cutoff, usize::MAX).unwrap();
        prop_assert!(g.edge_distance.iter().all(|&d| d <= cutoff && d > 0.0));
        let fwd = edge_set(&g.edge_src, &g.edge_dst);
        let rev = edge_set(&g.edge_dst, &g.edge_src);
        prop_assert_eq!(fwd, rev);
    }

    #[test]
    fn disconnection_keeps_exactly_the_intra_component_edges(seed in any::<u64>(), n in 3usize..25) {
        let s = random_adslab(seed, n);
        let full = build_radius_graph(&s, 6.0, usize::MAX).unwrap();
        let cut = disconnect_graph(&full, &s.tags).unwrap();
        let same = |a: usize, b: usize| s.tags[a].is_adsorbate() == s.tags[b].is_adsorbate();
        prop_assert!(cut.edges().all(|(a, b)| same(a, b)));
        prop_assert_eq!(cut.num_edges(), full.edges().filter(|&(a, b)| same(a, b)).count());
    }

    #[test]
    fn cross_edges_are_antisymmetric(seed in any::<u64>(), n in 3usize..25, centred in any::<bool>()) {
        let s = random_adslab(seed, n);
        let e = build_cross_attention_edges(&s, centred);
        prop_assert!(e.check_antisymmetric(&s.tags).is_ok());
        prop_assert_eq!(e.len(), 2 * s.adsorbate_indices().len() * s.catalyst_indices().len());
    }

    #[test]
    fn jsonl_round_trip(seeds in prop::collection::vec(any::<u64>(), 1..6), target in prop::option::of(-50.0f64..50.0)) {
        let systems: Vec<AtomicSystem> = seeds
            .iter()
            .enumerate()
            .map(|(i, &seed)| {
                let mut s = random_adslab(seed, 6);
                s.id = format!("sys{i}");
                s.target_energy = target;
                s.metadata.split = Split::ALL[i % Split::ALL.len()];
                s
            })
            .collect();
        let ds = Dataset::new(systems).unwrap();
        let text = ds.to_jsonl().unwrap();
        let back = Dataset::from_jsonl(&text).unwrap();
        prop_assert_eq!(&back.systems, &ds.systems);
        prop_assert_eq!(back.to_jsonl().unwrap(), text);
    }

    #[test]
    fn duplicate_stats_match_pairwise_oracle(
        rows in prop::collection::vec((0u8..4, 0u8..4, 0u8..2, 0u8..3), 0..120)
    ) {
        let systems: Vec<AtomicSystem> = rows
            .iter()
            .enumerate()
            .map(|(i, &(a, b, c, t))| {
                let mut s = AtomicSystem::new(
                    format!("s{i}"),
                    vec![29, 8],
                    vec![[0.0; 3], [0.0, 0.0, 2.0]],
                    vec![Tag::Surface, Tag::Adsorbate],
                )
                .unwrap();
                s.metadata.adsorbate_id = format!("a{a}");
                s.metadata.bulk_id = format!("b{b}");
                s.metadata.cell_hash = format!("c{c}");
                s.target_energy = Some(f64::from(t) * 0.25);
                s
            })
            .collect();
        let ds = Dataset::new(systems).unwrap();
        let stats = duplicate_target_stats(&ds).unwrap();
        let (groups, multi) = pairwise_duplicate_oracle(&ds);
        prop_assert_eq!(stats.n_groups, groups);
        prop_assert_eq!(stats.n_multi_target, multi);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn predictions_ignore_atom_order(seed in any::<u64>(), n in 6usize..20, perm_seed in any::<u64>()) {
        let cfg = BackboneConfig { hidden_dim: 16, num_interactions: 2, rbf_count: 10, ..BackboneConfig::default() };
        let s = random_adslab(seed, n);
        let mut order: Vec<usize> = (0..n).collect();
        adslab_gnn::rng::SplitMix64::new(perm_seed).shuffle(&mut order);
        let shuffled = s.subset(&order);
        for v in VariantKind::ALL {
            let m = random_model(v, &cfg, seed).unwrap();
            let (a, b) = (m.predict(&s).unwrap(), m.predict(&shuffled).unwrap());
            prop_assert!((a - b).abs() <= 1e-10, "{v}: {a} vs {b}");
        }
    }
}
