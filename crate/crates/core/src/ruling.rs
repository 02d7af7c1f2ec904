//! Ruling sets: the Awerbuch digit algorithm, sparsify-then-MIS on `G^k`,
//! and the sampled β-ruling pipeline.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::comm::{beep, beep_tree, learn_to_radius, simulate_on_power_subgraph, SparseOverlay};
use crate::graph::{members, Graph, Vertex};
use crate::mis::luby_gk;
use crate::netdecomp::{decompose, NdQuality};
use crate::rng::{key, Rng};
use crate::runtime::{Incoming, Message, NodeProgram, RoundCtx, RoundReport, SimConfig};
use crate::sparsify::{sparsify_with_nd, SparsifyParams, SparsifyResult, StageMode};
use crate::verify::{check_power_mis_on, check_ruling_set, RulingReport};
use crate::{ceil_log2, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RulingSetResult {
    /// Sorted vertices.
    pub set: Vec<Vertex>,
    pub alpha: u32,
    pub beta: u32,
    pub report: RoundReport,
}

impl RulingSetResult {
    pub fn check(&self, g: &Graph) -> RulingReport {
        check_ruling_set(g, &self.set, self.alpha, self.beta)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DistanceColoring {
    pub colors: Vec<u64>,
    pub k: u32,
    /// Palette size; colors lie in `0..gamma`.
    pub gamma: u64,
}

impl DistanceColoring {
    /// IDs are globally unique, so they color `G^k` for every `k`.
    pub fn from_ids(g: &Graph, k: u32) -> DistanceColoring {
        DistanceColoring { colors: g.ids().to_vec(), k, gamma: 1u64 << g.id_bits() }
    }

    /// Checks the palette and that vertices of `domain` within `k` hops differ.
    pub fn validate(&self, g: &Graph, domain: &[bool]) -> Result<()> {
        if self.colors.len() != g.n() {
            return Err(Error::InvalidParameter(format!("{} colors for {} vertices", self.colors.len(), g.n())));
        }
        for v in (0..g.n()).filter(|&v| domain[v]) {
            if self.colors[v] >= self.gamma {
                return Err(Error::InvalidParameter(format!("color {} of v{v} outside 0..{}", self.colors[v], self.gamma)));
            }
            let near = g.bfs_multi(&[v], self.k);
            if let Some(w) = (0..g.n()).find(|&w| w != v && domain[w] && near[w].is_some() && self.colors[w] == self.colors[v]) {
                return Err(Error::InvalidParameter(format!(
                    "v{v} and v{w} are {} apart with color {}",
                    near[w].unwrap(),
                    self.colors[v]
                )));
            }
        }
        Ok(())
    }
}

/// `ceil(log_b gamma)` digits, zero for a single color.
pub fn digit_count(gamma: u64, base: u64) -> u32 {
    let mut m = 0;
    let mut reach = 1u128;
    while reach < gamma as u128 {
        reach *= base as u128;
        m += 1;
    }
    m
}

/// Output of the Awerbuch run with knock-out tracking.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AwerbuchRun {
    pub result: RulingSetResult,
    pub digits: u32,
    /// For each domain member, the ruler whose ball it ended in.
    pub owner: Vec<Option<Vertex>>,
    /// Beep-path edges `(child, parent)` per ruler, deduplicated.
    pub tree_edges: BTreeMap<Vertex, BTreeSet<(Vertex, Vertex)>>,
}

/// Awerbuch's algorithm on `domain`: digits of the color, most significant
/// first, `base` steps per digit. In step `s`, members whose digit is `s`
/// beep for `k` hops and members with a larger digit that hear it leave.
/// A member knocked out merges its ball into the beeper it traces back to.
pub fn awerbuch_on(
    g: &Graph,
    k: u32,
    domain: &[bool],
    coloring: &DistanceColoring,
    base: u64,
    trusted: bool,
    cfg: &SimConfig,
) -> Result<AwerbuchRun> {
    if base < 2 {
        return Err(Error::InvalidParameter(format!("base {base} < 2")));
    }
    if k < 1 {
        return Err(Error::InvalidParameter("k < 1".into()));
    }
    if coloring.k < k {
        return Err(Error::InvalidParameter(format!("distance-{} coloring used at distance {k}", coloring.k)));
    }
    if !trusted {
        coloring.validate(g, domain)?;
    }
    let n = g.n();
    let m = digit_count(coloring.gamma, base);
    let mut alive = domain.to_vec();
    let mut owner: Vec<Option<Vertex>> = (0..n).map(|v| domain[v].then_some(v)).collect();
    let mut tree_edges: BTreeMap<Vertex, BTreeSet<(Vertex, Vertex)>> = BTreeMap::new();
    let mut report = RoundReport::default();
    let digit = |v: Vertex, i: u32| coloring.colors[v] / base.pow(m - 1 - i) % base;
    for i in 0..m {
        for s in 0..base {
            let beepers: Vec<bool> = (0..n).map(|v| alive[v] && digit(v, i) == s).collect();
            if beepers.iter().any(|&b| b) {
                let (heard, r) = beep_tree(g, &beepers, k, cfg)?;
                report.then(&r);
                for v in 0..n {
                    if !(alive[v] && digit(v, i) > s) {
                        continue;
                    }
                    let Some((_, mut p)) = heard[v] else { continue };
                    alive[v] = false;
                    let mut path = Vec::new();
                    let mut x = v;
                    while let Some(px) = p {
                        path.push((x, px));
                        x = px;
                        p = heard[x].unwrap().1;
                    }
                    let u = x;
                    let moved = tree_edges.remove(&v).unwrap_or_default();
                    let t = tree_edges.entry(u).or_default();
                    t.extend(moved);
                    t.extend(path);
                    for o in owner.iter_mut() {
                        if *o == Some(v) {
                            *o = Some(u);
                        }
                    }
                }
            }
            // Silent steps still take their k rounds on the shared schedule.
            else {
                report.charge(k as u64);
            }
        }
    }
    let set = members(&alive);
    let result = RulingSetResult { set, alpha: k + 1, beta: k * m, report };
    Ok(AwerbuchRun { result, digits: m, owner, tree_edges })
}

/// Awerbuch ruling set of all of `G`.
pub fn awerbuch_ruling_set(
    g: &Graph,
    k: u32,
    coloring: &DistanceColoring,
    base: u64,
    cfg: &SimConfig,
) -> Result<RulingSetResult> {
    let run = awerbuch_on(g, k, &vec![true; g.n()], coloring, base, false, cfg)?;
    Ok(run.result)
}

/// `ceil(n^(1/c))`, the base that gives `c` digits for ID colorings.
pub fn root_base(n: usize, c: u32) -> u64 {
    let mut b = 2u64;
    while (b as u128).pow(c) < n as u128 {
        b += 1;
    }
    b
}

/// Local-minimum-ID greedy MIS: an undecided node joins once every
/// undecided neighbor has a larger ID. One-bit messages: `1` = joined,
/// `0` = left.
#[derive(Debug, Clone)]
pub struct GreedyMis {
    id: u64,
    undecided: BTreeSet<u64>,
    state: Option<bool>,
    announced: bool,
}

impl GreedyMis {
    pub fn new(view: &crate::runtime::LocalView) -> GreedyMis {
        GreedyMis { id: view.id, undecided: view.neighbor_ids.iter().copied().collect(), state: None, announced: false }
    }
}

impl NodeProgram for GreedyMis {
    type Output = bool;

    fn on_round(&mut self, ctx: &mut RoundCtx<'_>, inbox: &[Incoming]) {
        for m in inbox {
            let joined = m.msg.reader().read_bool().unwrap_or(false);
            self.undecided.remove(&m.from);
            if joined && self.state.is_none() {
                self.state = Some(false);
            }
        }
        if self.state.is_none() && self.undecided.iter().all(|&w| w > self.id) {
            self.state = Some(true);
        }
        if let (Some(s), false) = (self.state, self.announced) {
            self.announced = true;
            let targets: Vec<u64> = self.undecided.iter().copied().collect();
            for w in targets {
                ctx.send(w, Message::from_bits(s as u64, 1));
            }
        }
    }

    fn halted(&self) -> bool {
        self.announced
    }

    fn finish(self) -> bool {
        self.state == Some(true)
    }
}

/// Which MIS algorithm runs on `G^k[Q]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum MisPlugin {
    /// [`GreedyMis`] simulated through the overlay.
    GreedyMinId,
}

/// MIS of `G^k[Q]` through `overlay` (radius `k` over `Q`), giving a
/// `(k+1, β+k)`-ruling set when `Q` is `β`-dominating.
pub fn ruling_via_sparsification(
    g: &Graph,
    k: u32,
    overlay: &SparseOverlay,
    beta_q: u32,
    plugin: MisPlugin,
    cfg: &SimConfig,
) -> Result<RulingSetResult> {
    if overlay.radius != k {
        return Err(Error::Precondition(format!("overlay radius {} but k = {k}", overlay.radius)));
    }
    let (out, report) = match plugin {
        MisPlugin::GreedyMinId => simulate_on_power_subgraph(g, overlay, cfg, |_, view| GreedyMis::new(view))?,
    };
    let set: Vec<Vertex> = out.into_iter().filter(|&(_, b)| b).map(|(v, _)| v).collect();
    let q = overlay.members();
    if !check_power_mis_on(g, k, &q, &set) {
        return Err(Error::OracleFailure(format!("plug-in output is not an MIS of G^{k}[Q]")));
    }
    Ok(RulingSetResult { set, alpha: k + 1, beta: beta_q + k, report })
}

/// Overlay of radius `k` over the result of a radius-`k−1` sparsification.
pub fn overlay_for(g: &Graph, k: u32, sp: Option<&SparsifyResult>, cfg: &SimConfig) -> Result<(SparseOverlay, RoundReport)> {
    if let Some(ov) = sp.and_then(|s| s.overlays.last()).filter(|o| o.radius == k) {
        return Ok((ov.clone(), RoundReport::default()));
    }
    let q = sp.map(|s| s.q.clone()).unwrap_or_else(|| vec![true; g.n()]);
    let (ov, mut report) = SparseOverlay::init(g, &q, cfg)?;
    let (ov, r) = learn_to_radius(g, &ov, k, cfg)?;
    report.then(&r);
    Ok((ov, report))
}

/// A `(k+1, k²)`-ruling set: network-decomposition sparsification of
/// radius `k−1`, then a deterministic MIS of `G^k[Q]`.
pub fn k_ruling_set_of_gk(g: &Graph, k: u32, params: &SparsifyParams, cfg: &SimConfig) -> Result<RulingSetResult> {
    if k < 1 {
        return Err(Error::InvalidParameter("k < 1".into()));
    }
    let mut report = RoundReport::default();
    let sp = if k >= 2 {
        let all = vec![true; g.n()];
        let nd = decompose(g, &all, 2 * (k - 1) + 1, NdQuality::Greedy)?;
        let sp = sparsify_with_nd(g, k - 1, &all, params, &nd, StageMode::Derandomized, cfg)?;
        report.then(&sp.report);
        Some(sp)
    } else {
        None
    };
    let beta_q = sp.as_ref().map_or(0, |s| s.claimed_domination);
    let (ov, r) = overlay_for(g, k, sp.as_ref(), cfg)?;
    report.then(&r);
    let mut res = ruling_via_sparsification(g, k, &ov, beta_q, MisPlugin::GreedyMinId, cfg)?;
    report.then(&res.report);
    res.report = report;
    if !res.check(g).pass {
        return Err(Error::OracleFailure(format!("not a ({}, {})-ruling set: {:?}", res.alpha, res.beta, res.check(g))));
    }
    Ok(res)
}

/// `min(Δ^k, n−1)`: nobody has more distance-`k` neighbors than that.
pub fn power_degree_bound(g: &Graph, k: u32) -> u64 {
    let n1 = g.n().saturating_sub(1) as u64;
    let mut d = 1u64;
    for _ in 0..k {
        d = d.saturating_mul(g.max_degree() as u64);
        if d >= n1 {
            return n1;
        }
    }
    d.min(n1)
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Kp12Step {
    pub q: Vec<bool>,
    pub iterations: u32,
    pub retries: u32,
    pub report: RoundReport,
}

/// One sampling step on `G^k[active]`. Iteration `j` samples each active
/// node with probability `min(1, f^j / Δ^k)`; sampled nodes join `Q` and
/// beep for `k` hops, and active nodes that hear them drop out. The last
/// iteration samples everyone left.
pub fn kp12_sparsify_step(g: &Graph, k: u32, active: &[bool], f: u64, cfg: &SimConfig) -> Result<Kp12Step> {
    if f < 2 {
        return Err(Error::InvalidParameter(format!("f = {f} < 2")));
    }
    let n = g.n();
    let dk = power_degree_bound(g, k).max(1);
    let mut iterations = 1u32;
    let mut reach = f as u128;
    while reach < dk as u128 {
        reach *= f as u128;
        iterations += 1;
    }
    let max_retries = 8;
    for retry in 0..=max_retries {
        let mut report = RoundReport::default();
        let mut alive = active.to_vec();
        let mut q = vec![false; n];
        let mut fj = 1u128;
        for j in 1..=iterations {
            fj *= f as u128;
            let sampled: Vec<bool> = (0..n)
                .map(|v| {
                    alive[v] && {
                        let mut r = Rng::new(key(&[cfg.rng_seed, 0x6b70, retry as u64, j as u64, g.id(v)]));
                        fj >= dk as u128 || r.ratio(fj as u64, dk)
                    }
                })
                .collect();
            let (heard, r) = beep(g, &sampled, k, cfg)?;
            report.then(&r);
            for v in 0..n {
                if sampled[v] {
                    q[v] = true;
                    alive[v] = false;
                } else if alive[v] && heard[v].is_some() {
                    alive[v] = false;
                }
            }
        }
        let qs = members(&q);
        let d = g.bfs_multi(&qs, k);
        if (0..n).all(|v| !active[v] || d[v].is_some()) {
            return Ok(Kp12Step { q, iterations, retries: retry, report });
        }
    }
    Err(Error::OracleFailure(format!("sampling step left active nodes undominated after {max_retries} retries")))
}

/// `f_s = 2^((log Δ^k)^(1 − s/(β−1)))`, rounded to an integer ≥ 2.
pub fn beta_schedule(g: &Graph, k: u32, beta: u32) -> Vec<u64> {
    let l = (ceil_log2(power_degree_bound(g, k).max(2))) as f64;
    (1..beta)
        .map(|s| {
            let e = libm::pow(l, 1.0 - s as f64 / (beta - 1) as f64);
            (libm::round(libm::exp2(e)) as u64).max(2)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BetaRulingResult {
    pub ruling: RulingSetResult,
    pub schedule: Vec<u64>,
    pub set_sizes: Vec<usize>,
    pub retries: u32,
}

/// `β−1` sampling steps with the `f_s` schedule, then Luby on `G^k[Q]`.
/// Claims `(k+1, β·k)`.
pub fn beta_ruling_set_gk(g: &Graph, k: u32, beta: u32, cfg: &SimConfig) -> Result<BetaRulingResult> {
    if beta < 2 {
        return Err(Error::InvalidParameter(format!("beta = {beta} < 2")));
    }
    if k < 1 {
        return Err(Error::InvalidParameter("k < 1".into()));
    }
    let schedule = beta_schedule(g, k, beta);
    let mut q = vec![true; g.n()];
    let mut report = RoundReport::default();
    let mut set_sizes = vec![g.n()];
    let mut retries = 0;
    for (s, &f) in schedule.iter().enumerate() {
        let step = kp12_sparsify_step(g, k, &q, f, &cfg.with_seed(key(&[cfg.rng_seed, s as u64])))?;
        report.then(&step.report);
        retries += step.retries;
        q = step.q;
        set_sizes.push(q.iter().filter(|&&b| b).count());
    }
    let mis = luby_gk(g, k, &q, 3, cfg)?;
    report.then(&mis.report);
    let ruling = RulingSetResult { set: mis.set, alpha: k + 1, beta: beta * k, report };
    Ok(BetaRulingResult { ruling, schedule, set_sizes, retries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate, GraphKind};

    fn cfg(g: &Graph) -> SimConfig {
        SimConfig::for_n(g.n(), 5)
    }

    #[test]
    fn digits() {
        assert_eq!(digit_count(1, 2), 0);
        assert_eq!(digit_count(6, 2), 3);
        assert_eq!(digit_count(64, 8), 2);
        assert_eq!(digit_count(65, 8), 3);
        assert_eq!(root_base(64, 2), 8);
        assert_eq!(root_base(65, 2), 9);
    }

    #[test]
    fn single_color_keeps_everyone() {
        let g = generate(GraphKind::Empty { n: 5 }, 1).unwrap();
        let col = DistanceColoring { colors: vec![0; 5], k: 1, gamma: 1 };
        let r = awerbuch_ruling_set(&g, 1, &col, 2, &cfg(&g)).unwrap();
        assert_eq!(r.set.len(), 5);
        assert_eq!(r.beta, 0);
        assert!(r.check(&g).pass);
    }

    #[test]
    fn cycle_with_id_colors() {
        let g = Graph::with_ids(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0)], (0..6).collect(), 3).unwrap();
        let col = DistanceColoring { colors: (0..6).collect(), k: 1, gamma: 6 };
        let r = awerbuch_ruling_set(&g, 1, &col, 2, &cfg(&g)).unwrap();
        assert_eq!((r.alpha, r.beta), (2, 3));
        assert!(r.check(&g).pass);
    }

    #[test]
    fn invalid_coloring_names_a_pair() {
        let g = generate(GraphKind::Path { n: 3 }, 1).unwrap();
        let col = DistanceColoring { colors: vec![0, 1, 0], k: 2, gamma: 2 };
        let e = awerbuch_ruling_set(&g, 2, &col, 2, &cfg(&g)).unwrap_err();
        assert!(matches!(e, Error::InvalidParameter(m) if m.contains("v0") && m.contains("v2")));
    }

    #[test]
    fn root_base_instance() {
        let g = generate(GraphKind::Gnp { n: 64, p: 0.06 }, 2).unwrap();
        let b = root_base(g.n(), 2);
        let col = DistanceColoring { colors: (0..64).map(|v| g.id(v) % 64).collect(), k: 2, gamma: 64 };
        let col = if col.validate(&g, &[true; 64]).is_ok() { col } else { DistanceColoring::from_ids(&g, 2) };
        let run = awerbuch_on(&g, 2, &[true; 64], &col, b, false, &cfg(&g)).unwrap();
        assert!(run.result.check(&g).pass);
        assert!(run.result.report.rounds_used <= 3 * 2 * b * run.digits as u64);
        for (u, edges) in &run.tree_edges {
            for &(c, p) in edges {
                assert!(g.has_edge(c, p));
                let _ = u;
            }
        }
    }

    #[test]
    fn greedy_plugin_and_headline_sets() {
        for k in 1..=3 {
            for seed in 0..2 {
                let g = generate(GraphKind::Gnp { n: 64, p: 0.08 }, seed).unwrap();
                let p = SparsifyParams::desk();
                let c = p.config(g.n(), seed);
                let r = k_ruling_set_of_gk(&g, k, &p, &c).unwrap();
                assert_eq!((r.alpha, r.beta), (k + 1, k * k));
                assert!(r.check(&g).pass);
            }
        }
    }

    #[test]
    fn star_graph() {
        let g = generate(GraphKind::Star { leaves: 9 }, 1).unwrap();
        let p = SparsifyParams::desk();
        for k in 1..=3 {
            let r = k_ruling_set_of_gk(&g, k, &p, &p.config(g.n(), 1)).unwrap();
            assert!(r.check(&g).pass);
            assert!(check_ruling_set(&g, &r.set, k + 1, 2).pass);
        }
    }

    #[test]
    fn sampling_step_dominates() {
        let g = generate(GraphKind::Gnp { n: 128, p: 0.1 }, 3).unwrap();
        let s = kp12_sparsify_step(&g, 1, &[true; 128], 4, &cfg(&g)).unwrap();
        let q = members(&s.q);
        assert!(check_ruling_set(&g, &q, 1, 1).pass);
        let big = kp12_sparsify_step(&g, 1, &[true; 128], 1 << 20, &cfg(&g)).unwrap();
        assert_eq!(big.iterations, 1);
        assert!(big.q.iter().all(|&b| b));
        let none = kp12_sparsify_step(&g, 1, &[false; 128], 4, &cfg(&g)).unwrap();
        assert!(none.q.iter().all(|&b| !b));
    }

    #[test]
    fn beta_ruling_sets() {
        for (k, beta) in [(1, 2), (2, 2), (2, 3)] {
            let g = generate(GraphKind::Gnp { n: 128, p: 0.05 }, 7).unwrap();
            let r = beta_ruling_set_gk(&g, k, beta, &cfg(&g)).unwrap();
            assert_eq!(r.schedule.len(), beta as usize - 1);
            assert_eq!(*r.schedule.last().unwrap(), 2);
            assert!(check_ruling_set(&g, &r.ruling.set, k + 1, beta * k).pass);
        }
    }
}
