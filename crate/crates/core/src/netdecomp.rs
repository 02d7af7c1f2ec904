//! Colored low-diameter clusterings with same-color separation, built by
//! greedy ball carving from the global view. Construction costs no rounds;
//! callers set `nd_oracle_used` on their reports.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::comm::{Links, TreeLink};
use crate::graph::{Graph, Vertex};
use crate::{log_n, Error, Result};

/// Ball growth rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum NdQuality {
    /// Stop when the next layer adds less than a `1/log n` fraction; radius
    /// capped at `2 log n` layers.
    Greedy,
    /// Stop when the next layer at most doubles the ball; at most `log n` layers.
    AppendixProfile,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Cluster {
    pub color: u32,
    pub center: Vertex,
    /// Sorted.
    pub members: Vec<Vertex>,
    /// Steiner tree as parent pointers; the center maps to `None`.
    pub tree: BTreeMap<Vertex, Option<Vertex>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NetDecomp {
    pub domain: Vec<bool>,
    pub clusters: Vec<Cluster>,
    pub colors: u32,
    /// Claimed bound on pairwise `G`-distance inside a cluster.
    pub weak_diam: u32,
    /// Claimed minimum `G`-distance between same-color clusters.
    pub separation: u32,
    /// Claimed bound on same-color trees sharing an edge.
    pub congestion: u32,
}

/// Multi-source BFS in `g` avoiding `blocked`, up to `limit`.
fn bfs_avoiding(g: &Graph, src: Vertex, blocked: &[bool], limit: u32) -> (Vec<Option<u32>>, Vec<Option<Vertex>>) {
    let n = g.n();
    let mut dist = vec![None; n];
    let mut parent = vec![None; n];
    let mut q = VecDeque::new();
    dist[src] = Some(0);
    q.push_back(src);
    while let Some(u) = q.pop_front() {
        let d = dist[u].unwrap();
        if d == limit {
            continue;
        }
        // Smallest-ID parent: visit neighbors of each layer in ID order.
        let mut nb: Vec<Vertex> = g.neighbors(u).to_vec();
        nb.sort_by_key(|&w| g.id(w));
        for w in nb {
            if blocked[w] {
                continue;
            }
            match dist[w] {
                None => {
                    dist[w] = Some(d + 1);
                    parent[w] = Some(u);
                    q.push_back(w);
                }
                Some(dw) if dw == d + 1
                    && g.id(u) < g.id(parent[w].unwrap()) => {
                        parent[w] = Some(u);
                    }
                _ => {}
            }
        }
    }
    (dist, parent)
}

/// Decomposes `domain` into colored clusters such that same-color clusters
/// are at `G`-distance at least `separation`.
pub fn decompose(g: &Graph, domain: &[bool], separation: u32, quality: NdQuality) -> Result<NetDecomp> {
    if separation < 1 {
        return Err(Error::InvalidParameter(format!("separation {separation} < 1")));
    }
    let n = g.n();
    let logn = log_n(n) as usize;
    let layer = separation.saturating_sub(1).max(1);
    let max_layers = match quality {
        NdQuality::Greedy => 2 * logn as u32,
        NdQuality::AppendixProfile => logn as u32,
    };
    let mut unclustered: BTreeSet<(u64, Vertex)> = (0..n).filter(|&v| domain[v]).map(|v| (g.id(v), v)).collect();
    let mut clusters = Vec::new();
    let mut color = 0u32;
    let mut max_layers_used = 0u32;
    while !unclustered.is_empty() {
        let mut candidates = unclustered.clone();
        let mut used = vec![false; n];
        while let Some(&(_, v)) = candidates.iter().next() {
            let (dist, parent) = bfs_avoiding(g, v, &used, (max_layers + 1) * layer);
            let within = |r: u32| -> Vec<Vertex> {
                candidates.iter().map(|&(_, u)| u).filter(|&u| dist[u].is_some_and(|d| d <= r * layer)).collect()
            };
            let mut r = 0;
            let mut ball = within(0);
            loop {
                let next = within(r + 1);
                let stop = match quality {
                    NdQuality::Greedy => next.len() * logn <= ball.len() * (logn + 1),
                    NdQuality::AppendixProfile => next.len() <= 2 * ball.len(),
                };
                if stop || r == max_layers {
                    for &u in &next {
                        candidates.remove(&(g.id(u), u));
                    }
                    break;
                }
                r += 1;
                ball = next;
            }
            max_layers_used = max_layers_used.max(r);
            let radius = r * layer;
            let mut tree = BTreeMap::new();
            tree.insert(v, None);
            for &u in &ball {
                let mut x = u;
                while let Some(p) = parent[x] {
                    if tree.contains_key(&x) {
                        break;
                    }
                    tree.insert(x, Some(p));
                    x = p;
                }
            }
            for x in 0..n {
                if dist[x].is_some_and(|d| d <= radius) {
                    used[x] = true;
                }
            }
            for &u in &ball {
                unclustered.remove(&(g.id(u), u));
            }
            clusters.push(Cluster { color, center: v, members: ball, tree });
        }
        color += 1;
    }
    Ok(NetDecomp {
        domain: domain.to_vec(),
        clusters,
        colors: color,
        weak_diam: 2 * max_layers * layer,
        separation,
        congestion: 1,
    })
}

impl NetDecomp {
    pub fn color_of(&self) -> Vec<Option<u32>> {
        let n = self.domain.len();
        let mut c = vec![None; n];
        for cl in &self.clusters {
            for &v in &cl.members {
                c[v] = Some(cl.color);
            }
        }
        c
    }

    /// Steiner trees of one color as per-node links, named by center ID.
    pub fn links(&self, g: &Graph, color: u32) -> Links {
        let mut links: Links = vec![BTreeMap::new(); g.n()];
        for cl in self.clusters.iter().filter(|c| c.color == color) {
            let name = g.id(cl.center);
            let mut children: BTreeMap<Vertex, Vec<u64>> = BTreeMap::new();
            for (&x, &p) in &cl.tree {
                if let Some(p) = p {
                    children.entry(p).or_default().push(g.id(x));
                }
            }
            for (&x, &p) in &cl.tree {
                let mut depth = 0;
                let mut y = x;
                while let Some(q) = cl.tree[&y] {
                    depth += 1;
                    y = q;
                }
                let mut ch = children.remove(&x).unwrap_or_default();
                ch.sort_unstable();
                links[x].insert(name, TreeLink { parent: p.map(|q| g.id(q)), children: ch, depth });
            }
        }
        links
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NdReport {
    pub pass: bool,
    pub witnesses: Vec<String>,
}

/// Checks cover, disjointness, separation, weak diameter and Steiner trees
/// against the decomposition's own claims.
pub fn verify_nd(g: &Graph, nd: &NetDecomp) -> NdReport {
    let n = g.n();
    let mut w = Vec::new();
    let mut owner: Vec<Option<usize>> = vec![None; n];
    for (i, cl) in nd.clusters.iter().enumerate() {
        for &v in &cl.members {
            if !nd.domain.get(v).copied().unwrap_or(false) {
                w.push(format!("cluster {i} holds v{v} outside the domain"));
            }
            if let Some(j) = owner[v] {
                w.push(format!("v{v} in clusters {j} and {i}"));
            }
            owner[v] = Some(i);
        }
        if cl.color >= nd.colors {
            w.push(format!("cluster {i} color {} >= {}", cl.color, nd.colors));
        }
    }
    for v in 0..n {
        if nd.domain[v] && owner[v].is_none() {
            w.push(format!("v{v} not covered"));
        }
    }
    for (i, cl) in nd.clusters.iter().enumerate() {
        let sources: Vec<Vertex> = cl.members.clone();
        let d = g.bfs_multi(&sources, nd.separation.saturating_sub(1));
        for (j, other) in nd.clusters.iter().enumerate() {
            if j <= i || other.color != cl.color {
                continue;
            }
            if let Some(&u) = other.members.iter().find(|&&u| d[u].is_some()) {
                w.push(format!("same-color clusters {i} and {j} within {} (v{u})", nd.separation - 1));
            }
        }
        for &a in &cl.members {
            let da = g.bfs(a);
            for &b in &cl.members {
                match da[b] {
                    Some(x) if x <= nd.weak_diam => {}
                    other => {
                        w.push(format!("cluster {i}: dist(v{a}, v{b}) = {other:?} > {}", nd.weak_diam));
                    }
                }
            }
        }
        let mut roots = 0;
        for (&x, &p) in &cl.tree {
            match p {
                None => roots += 1,
                Some(p) => {
                    if !g.has_edge(x, p) {
                        w.push(format!("cluster {i}: tree edge v{x}-v{p} not in G"));
                    }
                    if !cl.tree.contains_key(&p) {
                        w.push(format!("cluster {i}: parent v{p} of v{x} outside the tree"));
                    }
                }
            }
        }
        if roots != 1 {
            w.push(format!("cluster {i}: {roots} tree roots"));
        }
        for &m in &cl.members {
            let mut x = m;
            let mut steps = 0;
            loop {
                match cl.tree.get(&x) {
                    None => {
                        w.push(format!("cluster {i}: member v{m} not in its tree"));
                        break;
                    }
                    Some(None) => break,
                    Some(Some(p)) => {
                        x = *p;
                        steps += 1;
                        if steps > n {
                            w.push(format!("cluster {i}: tree has a cycle"));
                            break;
                        }
                    }
                }
            }
        }
    }
    let mut load: BTreeMap<(u32, Vertex, Vertex), u32> = BTreeMap::new();
    for cl in &nd.clusters {
        for (&x, &p) in &cl.tree {
            if let Some(p) = p {
                *load.entry((cl.color, x.min(p), x.max(p))).or_default() += 1;
            }
        }
    }
    if let Some((&(c, a, b), &l)) = load.iter().find(|(_, &l)| l > nd.congestion) {
        w.push(format!("color {c}: edge v{a}-v{b} in {l} trees > {}", nd.congestion));
    }
    // Vertex-disjointness within a color is what keeps per-node tree state small.
    NdReport { pass: w.is_empty(), witnesses: w }
}

/// Color bound promised by [`decompose`]: `4 log n · max(1, log log n)`.
pub fn color_bound(n: usize) -> u32 {
    let l = log_n(n);
    4 * l * log_n(l as usize).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate, GraphKind};

    fn all(n: usize) -> Vec<bool> {
        vec![true; n]
    }

    #[test]
    fn clique_is_one_cluster() {
        let g = generate(GraphKind::Complete { n: 9 }, 1).unwrap();
        let nd = decompose(&g, &all(9), 2, NdQuality::Greedy).unwrap();
        assert_eq!((nd.clusters.len(), nd.colors), (1, 1));
        assert!(verify_nd(&g, &nd).pass);
    }

    #[test]
    fn far_apart_domain_gives_singletons_in_one_color() {
        let g = generate(GraphKind::Path { n: 13 }, 1).unwrap();
        let mut dom = vec![false; 13];
        for v in [0, 6, 12] {
            dom[v] = true;
        }
        let nd = decompose(&g, &dom, 5, NdQuality::Greedy).unwrap();
        assert_eq!(nd.colors, 1);
        assert!(nd.clusters.iter().all(|c| c.members.len() == 1));
        assert!(verify_nd(&g, &nd).pass);
    }

    #[test]
    fn grid_with_separation_five() {
        let g = generate(GraphKind::Grid { rows: 16, cols: 16 }, 1).unwrap();
        let nd = decompose(&g, &all(256), 5, NdQuality::Greedy).unwrap();
        let rep = verify_nd(&g, &nd);
        assert!(rep.pass, "{:?}", rep.witnesses);
        assert!(nd.colors <= color_bound(256));
    }

    #[test]
    fn verify_catches_close_same_color_clusters() {
        let g = generate(GraphKind::Path { n: 2 }, 1).unwrap();
        let nd = NetDecomp {
            domain: all(2),
            clusters: vec![
                Cluster { color: 0, center: 0, members: vec![0], tree: BTreeMap::from([(0, None)]) },
                Cluster { color: 0, center: 1, members: vec![1], tree: BTreeMap::from([(1, None)]) },
            ],
            colors: 1,
            weak_diam: 0,
            separation: 2,
            congestion: 1,
        };
        let rep = verify_nd(&g, &nd);
        assert!(!rep.pass);
        assert!(rep.witnesses[0].contains("clusters 0 and 1"));
    }

    #[test]
    fn random_graphs_verify() {
        for seed in 0..20 {
            let g = generate(GraphKind::Gnp { n: 80, p: 0.05 }, seed).unwrap();
            for (sep, q) in [(3, NdQuality::Greedy), (7, NdQuality::AppendixProfile)] {
                let dom: Vec<bool> = (0..80).map(|v| !(v + seed as usize).is_multiple_of(4)).collect();
                let nd = decompose(&g, &dom, sep, q).unwrap();
                let rep = verify_nd(&g, &nd);
                assert!(rep.pass, "seed {seed}: {:?}", rep.witnesses);
                assert!(nd.colors <= color_bound(80), "{} colors", nd.colors);
            }
        }
    }

    #[test]
    fn empty_domain() {
        let g = generate(GraphKind::Path { n: 4 }, 1).unwrap();
        let nd = decompose(&g, &[false; 4], 3, NdQuality::Greedy).unwrap();
        assert!(nd.clusters.is_empty());
        assert!(verify_nd(&g, &nd).pass);
    }
}
