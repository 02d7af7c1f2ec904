//! Undirected simple graphs with per-vertex identifiers, power graphs,
//! BFS utilities and seeded generators.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::rng::{self, Rng};
use crate::{ceil_log2, Error, Result};

pub type Vertex = usize;

/// Extra identifier bits on top of `ceil(log2 n)`.
pub const DEFAULT_ID_SLACK: u32 = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    adj: Vec<Vec<Vertex>>,
    ids: Vec<u64>,
    id_bits: u32,
    index: BTreeMap<u64, Vertex>,
}

impl Graph {
    /// Builds a graph whose identifiers are a seeded permutation of `0..n`.
    pub fn from_edges(n: usize, edges: &[(Vertex, Vertex)], id_seed: u64) -> Result<Graph> {
        let mut ids: Vec<u64> = (0..n as u64).collect();
        Rng::new(rng::derive(id_seed, 0x1d5)).shuffle(&mut ids);
        let bits = ceil_log2(n as u64) + DEFAULT_ID_SLACK;
        Graph::with_ids(n, edges, ids, bits)
    }

    /// Builds a graph with explicit identifiers of at most `id_bits` bits.
    pub fn with_ids(n: usize, edges: &[(Vertex, Vertex)], ids: Vec<u64>, id_bits: u32) -> Result<Graph> {
        if ids.len() != n {
            return Err(Error::InvalidParameter(format!("{} ids for {} vertices", ids.len(), n)));
        }
        if id_bits == 0 || id_bits > 63 {
            return Err(Error::InvalidParameter(format!("id_bits = {id_bits}")));
        }
        let mut index = BTreeMap::new();
        for (v, &id) in ids.iter().enumerate() {
            if id >> id_bits != 0 {
                return Err(Error::InvalidParameter(format!("id {id} does not fit in {id_bits} bits")));
            }
            if index.insert(id, v).is_some() {
                return Err(Error::InvalidParameter(format!("duplicate id {id}")));
            }
        }
        let mut adj = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::InvalidParameter(format!("edge ({u},{v}) out of range")));
            }
            if u == v {
                return Err(Error::InvalidParameter(format!("self-loop at {u}")));
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        for (u, list) in adj.iter_mut().enumerate() {
            list.sort_unstable();
            if list.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidParameter(format!("parallel edge at {u}")));
            }
        }
        Ok(Graph { adj, ids, id_bits, index })
    }

    pub fn n(&self) -> usize {
        self.adj.len()
    }

    pub fn m(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn neighbors(&self, v: Vertex) -> &[Vertex] {
        &self.adj[v]
    }

    pub fn degree(&self, v: Vertex) -> usize {
        self.adj[v].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adj.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn has_edge(&self, u: Vertex, v: Vertex) -> bool {
        self.adj[u].binary_search(&v).is_ok()
    }

    pub fn id(&self, v: Vertex) -> u64 {
        self.ids[v]
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn id_bits(&self) -> u32 {
        self.id_bits
    }

    pub fn vertex_of(&self, id: u64) -> Option<Vertex> {
        self.index.get(&id).copied()
    }

    /// Edges as `(u, v)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> Vec<(Vertex, Vertex)> {
        let mut out = Vec::with_capacity(self.m());
        for (u, list) in self.adj.iter().enumerate() {
            for &v in list {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    /// Hop distances from `src`, `None` where unreachable.
    pub fn bfs(&self, src: Vertex) -> Vec<Option<u32>> {
        self.bfs_multi(&[src], u32::MAX)
    }

    /// Multi-source BFS truncated at `limit` hops.
    pub fn bfs_multi(&self, sources: &[Vertex], limit: u32) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.n()];
        let mut queue = VecDeque::new();
        for &s in sources {
            if dist[s].is_none() {
                dist[s] = Some(0);
                queue.push_back(s);
            }
        }
        while let Some(u) = queue.pop_front() {
            let d = dist[u].unwrap();
            if d >= limit {
                continue;
            }
            for &w in &self.adj[u] {
                if dist[w].is_none() {
                    dist[w] = Some(d + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    pub fn distance(&self, u: Vertex, v: Vertex) -> Option<u32> {
        self.bfs(u)[v]
    }

    /// Connected components, each sorted, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<Vertex>> {
        let mut seen = vec![false; self.n()];
        let mut out = Vec::new();
        for s in 0..self.n() {
            if seen[s] {
                continue;
            }
            let mut comp = vec![s];
            seen[s] = true;
            let mut i = 0;
            while i < comp.len() {
                let u = comp[i];
                i += 1;
                for &w in &self.adj[u] {
                    if !seen[w] {
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

    pub fn is_connected(&self) -> bool {
        self.components().len() <= 1
    }

    /// Subgraph induced on `vs`, keeping identifiers. Returns the graph and
    /// the map from new vertex index to old.
    pub fn induced_subgraph(&self, vs: &[Vertex]) -> (Graph, Vec<Vertex>) {
        let mut sorted: Vec<Vertex> = vs.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut local = vec![usize::MAX; self.n()];
        for (i, &v) in sorted.iter().enumerate() {
            local[v] = i;
        }
        let mut edges = Vec::new();
        for (i, &v) in sorted.iter().enumerate() {
            for &w in &self.adj[v] {
                let j = local[w];
                if j != usize::MAX && i < j {
                    edges.push((i, j));
                }
            }
        }
        let ids = sorted.iter().map(|&v| self.ids[v]).collect();
        let g = Graph::with_ids(sorted.len(), &edges, ids, self.id_bits)
            .expect("induced subgraph of a valid graph is valid");
        (g, sorted)
    }

    /// Diameter of the graph, `None` if disconnected.
    pub fn diameter(&self) -> Option<u32> {
        let mut best = 0;
        for v in 0..self.n() {
            for d in self.bfs(v) {
                best = best.max(d?);
            }
        }
        Some(best)
    }
}

/// `G^k`: same vertices and identifiers, an edge wherever `1 <= dist <= k`.
pub fn power_graph(g: &Graph, k: u32) -> Result<Graph> {
    if k < 1 {
        return Err(Error::InvalidParameter(format!("power exponent {k} < 1")));
    }
    let mut edges = Vec::new();
    for u in 0..g.n() {
        for (v, d) in g.bfs_multi(&[u], k).into_iter().enumerate() {
            if u < v && d.is_some() {
                edges.push((u, v));
            }
        }
    }
    Ok(Graph::with_ids(g.n(), &edges, g.ids.clone(), g.id_bits).expect("power graph is simple"))
}

/// `N^s(v) ∩ restrict`, sorted, never containing `v`.
pub fn dist_k_neighborhood(g: &Graph, v: Vertex, s: u32, restrict: Option<&[bool]>) -> Vec<Vertex> {
    g.bfs_multi(&[v], s)
        .into_iter()
        .enumerate()
        .filter(|&(w, d)| w != v && d.is_some() && restrict.is_none_or(|r| r[w]))
        .map(|(w, _)| w)
        .collect()
}

/// Shortest-path tree of depth `depth` around `root`. Among equally close
/// candidate parents, the one with the smallest identifier wins.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BfsTree {
    pub root: Vertex,
    pub depth: u32,
    pub parent: Vec<Option<Vertex>>,
    pub children: Vec<Vec<Vertex>>,
    pub dist: Vec<Option<u32>>,
}

impl BfsTree {
    pub fn contains(&self, v: Vertex) -> bool {
        self.dist[v].is_some()
    }

    pub fn members(&self) -> Vec<Vertex> {
        (0..self.dist.len()).filter(|&v| self.contains(v)).collect()
    }

    /// Height of the tree actually realized.
    pub fn height(&self) -> u32 {
        self.dist.iter().flatten().copied().max().unwrap_or(0)
    }
}

pub fn bfs_tree(g: &Graph, root: Vertex, depth: u32) -> BfsTree {
    let dist = g.bfs_multi(&[root], depth);
    let n = g.n();
    let mut parent = vec![None; n];
    let mut children = vec![Vec::new(); n];
    for v in 0..n {
        let Some(d) = dist[v] else { continue };
        if d == 0 {
            continue;
        }
        let p = g
            .neighbors(v)
            .iter()
            .copied()
            .filter(|&w| dist[w] == Some(d - 1))
            .min_by_key(|&w| g.id(w))
            .expect("BFS layer has a predecessor");
        parent[v] = Some(p);
        children[p].push(v);
    }
    for c in &mut children {
        c.sort_unstable_by_key(|&w| g.id(w));
    }
    BfsTree { root, depth, parent, children, dist }
}

/// Vertex mask from a list.
pub fn mask(n: usize, vs: &[Vertex]) -> Vec<bool> {
    let mut m = vec![false; n];
    for &v in vs {
        m[v] = true;
    }
    m
}

/// List from a vertex mask.
pub fn members(m: &[bool]) -> Vec<Vertex> {
    (0..m.len()).filter(|&v| m[v]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GraphKind {
    Path { n: usize },
    Cycle { n: usize },
    Grid { rows: usize, cols: usize },
    Gnp { n: usize, p: f64 },
    RandomRegular { n: usize, d: usize },
    Star { leaves: usize },
    Complete { n: usize },
    Empty { n: usize },
}

/// Deterministic generator: the same `(kind, seed)` always yields the same graph.
pub fn generate(kind: GraphKind, seed: u64) -> Result<Graph> {
    let edges = match kind {
        GraphKind::Path { n } => (1..n).map(|i| (i - 1, i)).collect(),
        GraphKind::Cycle { n } => {
            if n < 3 {
                return Err(Error::InvalidParameter(format!("cycle needs n >= 3, got {n}")));
            }
            let mut e: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
            e.push((0, n - 1));
            e
        }
        GraphKind::Grid { rows, cols } => {
            let mut e = Vec::new();
            for r in 0..rows {
                for c in 0..cols {
                    let v = r * cols + c;
                    if c + 1 < cols {
                        e.push((v, v + 1));
                    }
                    if r + 1 < rows {
                        e.push((v, v + cols));
                    }
                }
            }
            e
        }
        GraphKind::Gnp { n, p } => {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!("edge probability {p}")));
            }
            gnp_edges(n, p, seed)
        }
        GraphKind::RandomRegular { n, d } => regular_edges(n, d, seed)?,
        GraphKind::Star { leaves } => (1..=leaves).map(|i| (0, i)).collect(),
        GraphKind::Complete { n } => {
            let mut e = Vec::new();
            for u in 0..n {
                for v in u + 1..n {
                    e.push((u, v));
                }
            }
            e
        }
        GraphKind::Empty { .. } => Vec::new(),
    };
    let n = match kind {
        GraphKind::Path { n }
        | GraphKind::Cycle { n }
        | GraphKind::Gnp { n, .. }
        | GraphKind::RandomRegular { n, .. }
        | GraphKind::Complete { n }
        | GraphKind::Empty { n } => n,
        GraphKind::Grid { rows, cols } => rows * cols,
        GraphKind::Star { leaves } => leaves + 1,
    };
    Graph::from_edges(n, &edges, seed)
}

fn gnp_edges(n: usize, p: f64, seed: u64) -> Vec<(Vertex, Vertex)> {
    let all = p >= 1.0;
    let threshold = (p * 18_446_744_073_709_551_616.0) as u64;
    let key = rng::derive(seed, 0x67e9);
    let mut e = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if all || rng::key(&[key, u as u64, v as u64]) < threshold {
                e.push((u, v));
            }
        }
    }
    e
}

/// Circulant start graph followed by seeded degree-preserving double-edge swaps.
fn regular_edges(n: usize, d: usize, seed: u64) -> Result<Vec<(Vertex, Vertex)>> {
    if d >= n.max(1) || (n * d) % 2 == 1 {
        return Err(Error::InvalidParameter(format!("no simple {d}-regular graph on {n} vertices")));
    }
    let mut edges = Vec::with_capacity(n * d / 2);
    for i in 0..n {
        for j in 1..=d / 2 {
            edges.push(norm(i, (i + j) % n));
        }
        if d % 2 == 1 && i < n / 2 {
            edges.push(norm(i, i + n / 2));
        }
    }
    let mut set: alloc::collections::BTreeSet<(Vertex, Vertex)> = edges.iter().copied().collect();
    let m = edges.len();
    if m < 2 {
        return Ok(edges);
    }
    let mut r = Rng::new(rng::derive(seed, 0x2e9));
    for _ in 0..10 * m {
        let i = r.below(m as u64) as usize;
        let j = r.below(m as u64) as usize;
        let (a, b) = edges[i];
        let (c, e) = edges[j];
        let (x, y) = if r.next_u64() & 1 == 0 { (norm(a, c), norm(b, e)) } else { (norm(a, e), norm(b, c)) };
        if x.0 == x.1 || y.0 == y.1 || x == y || set.contains(&x) || set.contains(&y) {
            continue;
        }
        set.remove(&edges[i]);
        set.remove(&edges[j]);
        set.insert(x);
        set.insert(y);
        edges[i] = x;
        edges[j] = y;
    }
    edges.sort_unstable();
    Ok(edges)
}

fn norm(u: Vertex, v: Vertex) -> (Vertex, Vertex) {
    if u < v {
        (u, v)
    } else {
        (v, u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(n: usize) -> Graph {
        generate(GraphKind::Path { n }, 1).unwrap()
    }

    #[test]
    fn rejects_self_loops_and_parallel_edges() {
        assert!(Graph::from_edges(3, &[(0, 0)], 0).is_err());
        assert!(Graph::from_edges(3, &[(0, 1), (1, 0)], 0).is_err());
        assert!(Graph::with_ids(2, &[(0, 1)], vec![1, 1], 3).is_err());
    }

    #[test]
    fn ids_are_a_permutation() {
        let g = path(20);
        let mut ids = g.ids().to_vec();
        ids.sort_unstable();
        assert_eq!(ids, (0..20).collect::<Vec<u64>>());
        assert_eq!(g.id_bits(), 5 + DEFAULT_ID_SLACK);
    }

    #[test]
    fn power_of_path() {
        let g = path(5);
        assert_eq!(power_graph(&g, 1).unwrap().edges(), g.edges());
        let g2 = power_graph(&g, 2).unwrap();
        assert_eq!(g2.edges(), vec![(0, 1), (0, 2), (1, 2), (1, 3), (2, 3), (2, 4), (3, 4)]);
        assert!(power_graph(&g, 0).is_err());
        let k4 = generate(GraphKind::Complete { n: 4 }, 0).unwrap();
        assert_eq!(power_graph(&k4, 3).unwrap().edges(), k4.edges());
    }

    #[test]
    fn neighborhoods_on_c6() {
        let g = generate(GraphKind::Cycle { n: 6 }, 0).unwrap();
        assert_eq!(dist_k_neighborhood(&g, 0, 2, None), vec![1, 2, 4, 5]);
        assert!(dist_k_neighborhood(&g, 0, 0, None).is_empty());
        let r = mask(6, &[2, 3]);
        assert_eq!(dist_k_neighborhood(&g, 0, 2, Some(&r)), vec![2]);
    }

    #[test]
    fn bfs_tree_tie_break() {
        // C4 with identity ids: v2 has equally short parents v1 and v3.
        let g = Graph::with_ids(4, &[(0, 1), (1, 2), (2, 3), (3, 0)], vec![0, 1, 2, 3], 3).unwrap();
        let t = bfs_tree(&g, 0, 2);
        assert_eq!(t.parent[2], Some(1));
        let star = generate(GraphKind::Star { leaves: 3 }, 0).unwrap();
        let t = bfs_tree(&star, 0, 1);
        assert!((1..4).all(|l| t.parent[l] == Some(0)));
        let p3 = path(3);
        let t = bfs_tree(&p3, 1, 0);
        assert_eq!(t.members(), vec![1]);
    }

    #[test]
    fn generators_are_deterministic() {
        let a = generate(GraphKind::Gnp { n: 64, p: 0.1 }, 7).unwrap();
        let b = generate(GraphKind::Gnp { n: 64, p: 0.1 }, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(path(5).m(), 4);
        assert_eq!(generate(GraphKind::Cycle { n: 6 }, 0).unwrap().m(), 6);
        assert!(generate(GraphKind::RandomRegular { n: 5, d: 3 }, 0).is_err());
        let r = generate(GraphKind::RandomRegular { n: 64, d: 5 }, 3).unwrap();
        assert!((0..64).all(|v| r.degree(v) == 5));
        let grid = generate(GraphKind::Grid { rows: 3, cols: 4 }, 0).unwrap();
        assert_eq!(grid.m(), 3 * 3 + 2 * 4);
    }

    #[test]
    fn induced_subgraph_keeps_ids() {
        let g = path(6);
        let (h, map) = g.induced_subgraph(&[4, 1, 2]);
        assert_eq!(map, vec![1, 2, 4]);
        assert_eq!(h.edges(), vec![(0, 1)]);
        assert_eq!(h.id(2), g.id(4));
    }
}
