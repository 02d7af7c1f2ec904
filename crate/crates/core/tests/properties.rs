use std::collections::BTreeSet;

use powersim_core::graph::{dist_k_neighborhood, members, power_graph, Graph};
use powersim_core::hash::{EventKind, EventSpec, HashFamily, Threshold};
use powersim_core::mis::{beeping_mis_gk, check_shatter_outcome, luby_gk};
use powersim_core::netdecomp::{decompose, verify_nd, NdQuality};
use powersim_core::ruling::{awerbuch_ruling_set, DistanceColoring};
use powersim_core::runtime::Message;
use powersim_core::sparsify::{sparsify_power, SparsifyParams, StageMode};
use powersim_core::verify::{check_degree_cap, check_power_mis, check_ruling_set};
use powersim_core::SimConfig;
use proptest::prelude::*;

fn graph() -> impl Strategy<Value = Graph> {
    (2usize..24, any::<u64>()).prop_flat_map(|(n, seed)| {
        proptest::collection::vec((0..n, 0..n), 0..3 * n).prop_map(move |raw| {
            let edges: BTreeSet<(usize, usize)> =
                raw.into_iter().filter(|(a, b)| a != b).map(|(a, b)| (a.min(b), a.max(b))).collect();
            let edges: Vec<(usize, usize)> = edges.into_iter().collect();
            Graph::from_edges(n, &edges, seed).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn power_graph_matches_bfs(g in graph(), k in 1u32..4) {
        let p = power_graph(&g, k).unwrap();
        for v in 0..g.n() {
            let d = g.bfs(v);
            for w in 0..g.n() {
                let near = w != v && d[w].is_some_and(|d| d <= k);
                prop_assert_eq!(p.has_edge(v, w), near);
            }
            prop_assert_eq!(dist_k_neighborhood(&g, v, k, None), p.neighbors(v).to_vec());
        }
    }

    #[test]
    fn messages_round_trip(fields in proptest::collection::vec((any::<u64>(), 1u32..64), 0..12)) {
        let mut m = Message::new();
        for &(v, w) in &fields {
            m.push(v & ((1u64 << w) - 1), w);
        }
        prop_assert_eq!(m.bit_len(), fields.iter().map(|f| f.1).sum::<u32>());
        let mut r = m.reader();
        for &(v, w) in &fields {
            prop_assert_eq!(r.read(w), Some(v & ((1u64 << w) - 1)));
        }
        prop_assert_eq!(r.remaining(), 0);
    }

    #[test]
    fn awerbuch_sets_meet_their_claims(g in graph(), k in 1u32..4, base in 2u64..5) {
        let col = DistanceColoring::from_ids(&g, k);
        let r = awerbuch_ruling_set(&g, k, &col, base, &SimConfig::for_n(g.n(), 1)).unwrap();
        prop_assert!(check_ruling_set(&g, &r.set, r.alpha, r.beta).pass);
    }

    #[test]
    fn luby_outputs_mis_of_power(g in graph(), k in 1u32..4, seed in any::<u64>()) {
        let r = luby_gk(&g, k, &vec![true; g.n()], 3, &SimConfig::for_n(g.n(), seed)).unwrap();
        prop_assert!(check_power_mis(&g, k, &r.set));
    }

    #[test]
    fn beeping_steps_stay_independent(g in graph(), k in 1u32..4, steps in 0u32..6, seed in any::<u64>()) {
        let out = beeping_mis_gk(&g, k, &vec![true; g.n()], steps, &SimConfig::for_n(g.n(), seed)).unwrap();
        let all: Vec<usize> = (0..g.n()).collect();
        prop_assert!(check_shatter_outcome(&g, k, &all, &out));
    }

    #[test]
    fn decompositions_verify(g in graph(), sep in 1u32..6) {
        let nd = decompose(&g, &vec![true; g.n()], sep, NdQuality::Greedy).unwrap();
        prop_assert!(verify_nd(&g, &nd).pass);
    }

    #[test]
    fn hash_outputs_stay_in_range(a in 1u32..6, b in 1u32..6, k in 1u32..4, seed in any::<u64>(), x in any::<u64>()) {
        let f = HashFamily::new(a, b, k).unwrap();
        let bits: Vec<bool> = (0..f.gamma()).map(|i| seed >> (i % 64) & 1 == 1).collect();
        prop_assert!(f.eval(&bits, x & ((1u64 << a) - 1)) < 1u64 << b);
    }

    #[test]
    fn event_semantics(xs in proptest::collection::vec(any::<bool>(), 0..10), cap in 0usize..5) {
        let count = xs.iter().filter(|&&b| b).count();
        let vbl: Vec<u64> = (0..xs.len() as u64).collect();
        let none = EventSpec { owner: 0, vbl: vbl.clone(), kind: EventKind::NoneSet };
        let above = EventSpec { owner: 0, vbl, kind: EventKind::CountAbove(cap) };
        prop_assert_eq!(none.holds(&xs), count == 0);
        prop_assert_eq!(above.holds(&xs), count > cap);
        prop_assert!(Threshold::never().accept_count() == 0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn sparsification_invariants(g in graph(), k in 1u32..4, pick in any::<u64>()) {
        let p = SparsifyParams::desk();
        let q0: Vec<bool> = (0..g.n()).map(|v| pick >> (v % 64) & 1 == 1).collect();
        let res = sparsify_power(&g, k, &q0, &p, StageMode::Derandomized, &p.config(g.n(), 1)).unwrap();
        prop_assert!(check_degree_cap(&g, &members(&res.q), k, res.cap).pass);
        for w in res.sets.windows(2) {
            prop_assert!((0..g.n()).all(|v| !w[1][v] || w[0][v]));
        }
        let a = g.bfs_multi(&members(&q0), u32::MAX);
        let b = g.bfs_multi(&members(&res.q), u32::MAX);
        for v in 0..g.n() {
            if let Some(x) = a[v] {
                prop_assert!(b[v].is_some_and(|y| y <= x + k * k + k));
            }
        }
    }
}
