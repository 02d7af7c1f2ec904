//! Brute-force checks. Pure graph computations with no simulator state, used
//! to validate every distributed result.

use alloc::vec;
use alloc::vec::Vec;

use crate::graph::{Graph, Vertex};

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RulingReport {
    pub pass: bool,
    /// Two members closer than `alpha`, with their distance.
    pub too_close: Option<(Vertex, Vertex, u32)>,
    /// A vertex farther than `beta` from the set, with its distance (`None` = unreachable).
    pub undominated: Option<(Vertex, Option<u32>)>,
    /// Largest distance from any vertex to the set.
    pub max_distance: Option<u32>,
}

/// Distance from every vertex to the nearest member of `set`.
pub fn distance_to_set(g: &Graph, set: &[Vertex]) -> Vec<Option<u32>> {
    g.bfs_multi(set, u32::MAX)
}

/// Is `set` `alpha`-independent (pairwise distance ≥ alpha) and `beta`-dominating?
pub fn check_ruling_set(g: &Graph, set: &[Vertex], alpha: u32, beta: u32) -> RulingReport {
    let mut too_close = None;
    let mut is_member = vec![false; g.n()];
    for &v in set {
        is_member[v] = true;
    }
    'outer: for &u in set {
        if alpha <= 1 {
            break;
        }
        let near = g.bfs_multi(&[u], alpha - 1);
        for &w in set {
            if w != u {
                if let Some(d) = near[w] {
                    too_close = Some((u.min(w), u.max(w), d));
                    break 'outer;
                }
            }
        }
    }
    let dist = distance_to_set(g, set);
    let mut undominated = None;
    let mut max_distance = Some(0);
    for (v, d) in dist.iter().enumerate() {
        match d {
            Some(d) => {
                max_distance = max_distance.map(|m: u32| m.max(*d));
                if *d > beta && undominated.is_none() {
                    undominated = Some((v, Some(*d)));
                }
            }
            None => {
                max_distance = None;
                if undominated.is_none() {
                    undominated = Some((v, None));
                }
            }
        }
    }
    if g.n() == 0 {
        max_distance = Some(0);
    }
    RulingReport { pass: too_close.is_none() && undominated.is_none(), too_close, undominated, max_distance }
}

/// Maximal independent set of `g` itself.
pub fn check_mis(g: &Graph, set: &[Vertex]) -> bool {
    check_ruling_set(g, set, 2, 1).pass
}

/// MIS of `G^k`, checked on `g` without materializing the power graph.
pub fn check_power_mis(g: &Graph, k: u32, set: &[Vertex]) -> bool {
    check_ruling_set(g, set, k + 1, k).pass
}

/// MIS of `G^k[domain]`: members in `domain`, pairwise farther than `k`, and
/// every domain vertex within `k` of a member.
pub fn check_power_mis_on(g: &Graph, k: u32, domain: &[Vertex], set: &[Vertex]) -> bool {
    let dom = crate::graph::mask(g.n(), domain);
    if set.iter().any(|&v| !dom[v]) {
        return false;
    }
    for &u in set {
        let near = g.bfs_multi(&[u], k);
        if set.iter().any(|&w| w != u && near[w].is_some()) {
            return false;
        }
    }
    let dist = g.bfs_multi(set, k);
    domain.iter().all(|&v| dist[v].is_some())
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DegreeCapReport {
    pub pass: bool,
    pub max: usize,
    pub argmax: Option<Vertex>,
}

/// `max_v |N^k(v) ∩ Q|` against `cap`.
pub fn check_degree_cap(g: &Graph, q: &[Vertex], k: u32, cap: usize) -> DegreeCapReport {
    let degs = power_degrees(g, q, k);
    let mut max = 0;
    let mut argmax = None;
    for (v, &d) in degs.iter().enumerate() {
        if argmax.is_none() || d > max {
            max = d;
            argmax = Some(v);
        }
    }
    DegreeCapReport { pass: max <= cap, max, argmax }
}

/// `|N^k(v) ∩ Q|` for every vertex.
pub fn power_degrees(g: &Graph, q: &[Vertex], k: u32) -> Vec<usize> {
    let in_q = crate::graph::mask(g.n(), q);
    (0..g.n())
        .map(|v| {
            g.bfs_multi(&[v], k).iter().enumerate().filter(|&(w, d)| w != v && d.is_some() && in_q[w]).count()
        })
        .collect()
}

/// Is `G^k[set]` connected? The empty set counts as connected.
pub fn is_k_connected(g: &Graph, set: &[Vertex], k: u32) -> bool {
    k_components(g, set, k).len() <= 1
}

/// Connected components of `G^k[set]`, each sorted.
pub fn k_components(g: &Graph, set: &[Vertex], k: u32) -> Vec<Vec<Vertex>> {
    let in_set = crate::graph::mask(g.n(), set);
    let mut seen = vec![false; g.n()];
    let mut out = Vec::new();
    let mut sorted = set.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    for &s in &sorted {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut comp = vec![s];
        let mut i = 0;
        while i < comp.len() {
            let u = comp[i];
            i += 1;
            for (w, d) in g.bfs_multi(&[u], k).into_iter().enumerate() {
                if d.is_some() && in_set[w] && !seen[w] {
                    seen[w] = true;
                    comp.push(w);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Outcome of the search for a far-apart subset.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FarSetSearch {
    pub found: Option<Vec<Vertex>>,
    /// False when some group exceeded the exhaustive cap and was searched greedily.
    pub exhaustive: bool,
}

/// Largest group size searched exhaustively.
pub const EXHAUSTIVE_CAP: usize = 24;

/// Looks for a subset of `b_set` of size ≥ `size_floor` whose members are
/// pairwise at distance ≥ `indep_dist`. Groups of at most
/// [`EXHAUSTIVE_CAP`] candidates are searched exactly; larger ones greedily.
pub fn max_independent_far_set(g: &Graph, b_set: &[Vertex], indep_dist: u32, size_floor: usize) -> FarSetSearch {
    let mut cands = b_set.to_vec();
    cands.sort_unstable();
    cands.dedup();
    if size_floor == 0 {
        return FarSetSearch { found: Some(Vec::new()), exhaustive: true };
    }
    let c = cands.len();
    let mut conflict = vec![vec![false; c]; c];
    for i in 0..c {
        let near = g.bfs_multi(&[cands[i]], indep_dist.saturating_sub(1));
        for j in 0..c {
            if i != j && near[cands[j]].is_some() {
                conflict[i][j] = true;
            }
        }
    }
    if c <= EXHAUSTIVE_CAP {
        let mut best = Vec::new();
        let mut cur = Vec::new();
        max_indep(&conflict, 0, &mut cur, &mut best, size_floor);
        let found = (best.len() >= size_floor).then(|| best.iter().map(|&i| cands[i]).collect());
        return FarSetSearch { found, exhaustive: true };
    }
    let mut chosen: Vec<usize> = Vec::new();
    for i in 0..c {
        if chosen.iter().all(|&j| !conflict[i][j]) {
            chosen.push(i);
        }
    }
    let found = (chosen.len() >= size_floor).then(|| chosen.iter().map(|&i| cands[i]).collect());
    FarSetSearch { found, exhaustive: false }
}

fn max_indep(conflict: &[Vec<bool>], from: usize, cur: &mut Vec<usize>, best: &mut Vec<usize>, goal: usize) {
    if cur.len() > best.len() {
        *best = cur.clone();
    }
    if best.len() >= goal {
        return;
    }
    let c = conflict.len();
    if cur.len() + (c - from) <= best.len() {
        return;
    }
    for i in from..c {
        if cur.iter().all(|&j| !conflict[i][j]) {
            cur.push(i);
            max_indep(conflict, i + 1, cur, best, goal);
            cur.pop();
            if best.len() >= goal {
                return;
            }
        }
    }
}

/// Given an `s`-connected `u_set` and an `(alpha, beta)`-ruling set `r_subset`
/// of it, checks that `r_subset` is `alpha`-independent and
/// `(s + 2 beta)`-connected. Returns `None` when the preconditions fail.
pub fn check_54ruling_connectivity(
    h: &Graph,
    u_set: &[Vertex],
    r_subset: &[Vertex],
    s: u32,
    alpha: u32,
    beta: u32,
) -> Option<bool> {
    if !is_k_connected(h, u_set, s) {
        return None;
    }
    let in_u = crate::graph::mask(h.n(), u_set);
    if r_subset.iter().any(|&r| !in_u[r]) {
        return None;
    }
    let dist = h.bfs_multi(r_subset, beta);
    if u_set.iter().any(|&u| dist[u].is_none()) {
        return None;
    }
    let independent = check_ruling_set(h, r_subset, alpha, u32::MAX).too_close.is_none();
    Some(independent && is_k_connected(h, r_subset, s + 2 * beta))
}
