//! Sparsification: pick `Q ⊆ Q_0` with few distance-`k` members around every
//! node while keeping every node close to `Q`.
//!
//! A stage samples active nodes with a k-wise independent hash and
//! deactivates everything within two hops (of the current power graph) of a
//! sampled node. The derandomized stage fixes the hash seed bit by bit with
//! conditional expectations summed over a spanning tree.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::comm::{beep, broadcast_from_q, certify_degrees, convergecast_sum, downcast, learn_ids_one_hop, SparseOverlay};
use crate::graph::{power_graph, Graph, Vertex};
use crate::hash::{
    count_fired, fix_seed, seed_to_hex, BitCandidates, EventKind, EventSpec, ExpectationConfig, HashFamily, Threshold,
};
use crate::netdecomp::{verify_nd, NetDecomp};
use crate::rng::{key, Rng};
use crate::runtime::{leader_spanning_tree, Message, RoundReport, SimConfig, SpanningForest};
use crate::{floor_log2, log_n, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Profile {
    /// Constants (24, 72, 2^5, 8 log n).
    Paper,
    /// Constants (3, 9, 2^2, pairwise), small enough that desk-sized graphs run stages.
    Desk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Independence {
    Fixed(u32),
    TimesLogN(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SparsifyParams {
    pub profile: Profile,
    pub c_samp: u64,
    pub cap_c: u64,
    /// Stages stop `slack_log2` short of `log Δ_A - log log n`.
    pub slack_log2: u32,
    pub indep: Independence,
    pub expectation: ExpectationConfig,
    /// Extra seed-fixing attempts, each with one more degree of independence
    /// and twice the sample, when a seed leaves events firing.
    pub max_attempts: u32,
    /// Run brute-force oracles after every stage and iteration.
    pub oracle_checks: bool,
}

impl SparsifyParams {
    pub fn paper() -> SparsifyParams {
        SparsifyParams {
            profile: Profile::Paper,
            c_samp: 24,
            cap_c: 72,
            slack_log2: 5,
            indep: Independence::TimesLogN(8),
            expectation: ExpectationConfig::default(),
            max_attempts: 3,
            oracle_checks: true,
        }
    }

    pub fn desk() -> SparsifyParams {
        SparsifyParams {
            profile: Profile::Desk,
            c_samp: 3,
            cap_c: 9,
            slack_log2: 2,
            indep: Independence::Fixed(2),
            expectation: ExpectationConfig::default(),
            max_attempts: 3,
            oracle_checks: true,
        }
    }

    pub fn for_profile(p: Profile) -> SparsifyParams {
        match p {
            Profile::Paper => Self::paper(),
            Profile::Desk => Self::desk(),
        }
    }

    /// `cap_c · log n`.
    pub fn cap(&self, n: usize) -> usize {
        self.cap_c as usize * log_n(n) as usize
    }

    pub fn independence(&self, n: usize) -> u32 {
        match self.indep {
            Independence::Fixed(k) => k,
            Independence::TimesLogN(c) => c * log_n(n),
        }
    }

    /// Broadcasts on the sparsified sets need `bandwidth ≥ maxdeg = cap + 1`.
    pub fn min_bandwidth(&self, n: usize) -> u32 {
        self.cap(n) as u32 + 1
    }

    /// A default configuration with enough bandwidth for this profile.
    pub fn config(&self, n: usize, seed: u64) -> SimConfig {
        let mut c = SimConfig::for_n(n, seed);
        c.bandwidth_bits = c.bandwidth_bits.max(self.min_bandwidth(n));
        c
    }
}

/// `r = ⌊log Δ_A − log log n⌋ − slack_log2`, computed on integers.
pub fn stage_count(delta_a: u64, logn: u64, slack_log2: u32) -> i64 {
    if delta_a < logn || logn == 0 {
        return -(slack_log2 as i64) - 1;
    }
    floor_log2(delta_a / logn) as i64 - slack_log2 as i64
}

/// Accepted hash outputs out of `2^b` so that `P(X_v = 1) ≈ c_samp·2^i·log n / Δ_A`;
/// at least one, at most all.
pub fn accept_count(c_samp: u64, i: u32, logn: u64, delta_a: u64, b: u32) -> u64 {
    let num = (c_samp as u128) << i;
    let num = num * logn as u128;
    let acc = (num << b) / delta_a.max(1) as u128;
    acc.clamp(1, 1u128 << b) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum StageMode {
    Derandomized,
    Randomized,
}

/// Oracle counts of the three stage guarantees failing.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClauseFailures {
    /// `d^s(v, M_i) > cap`.
    pub degree: usize,
    /// High active degree but neither sampled nor next to a sampled node.
    pub undominated: usize,
    /// `d^s(v, H_{i+1}) ≥ Δ_A / 2^i`.
    pub residual: usize,
}

impl ClauseFailures {
    pub fn total(&self) -> usize {
        self.degree + self.undominated + self.residual
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StageRecord {
    pub iteration: u32,
    pub stage: u32,
    pub active: usize,
    pub selected: usize,
    pub remaining: usize,
    pub max_active_degree: usize,
    pub high_degree: usize,
    pub events: usize,
    pub attempts: u32,
    pub estimated_bits: u32,
    pub fired: usize,
    /// Nodes whose active degree exceeded `Δ_A / 2^{i-1}` at the start.
    pub precondition_violations: usize,
    /// Fixed seed per spanning-tree component, `γ:hex`.
    pub seeds: Vec<String>,
    pub failures: ClauseFailures,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IterationRecord {
    pub iteration: u32,
    pub delta_a: u64,
    pub stages_planned: i64,
    /// `Δ_A` too small for any stage; the active set was returned as is.
    pub fallback: bool,
    pub size_before: usize,
    pub size_after: usize,
    pub stages: Vec<StageRecord>,
}

#[derive(Debug, Clone)]
pub struct SparsifyResult {
    pub q: Vec<bool>,
    pub k: u32,
    pub cap: usize,
    /// `k² + k`, added to `dist(v, Q_0)`.
    pub claimed_domination: u32,
    /// `Q_0 ⊇ Q_1 ⊇ … ⊇ Q_k`.
    pub sets: Vec<Vec<bool>>,
    pub iterations: Vec<IterationRecord>,
    /// After iteration `s`: radius `s+1` over `Q_s`.
    pub overlays: Vec<SparseOverlay>,
    pub report: RoundReport,
}

/// One spanning-tree component, as its own graph (IDs kept).
struct Part {
    sub: Graph,
    map: Vec<Vertex>,
    forest: SpanningForest,
    root_id: u64,
}

fn parts(g: &Graph, forest: &SpanningForest) -> Vec<Part> {
    let mut groups: BTreeMap<Vertex, Vec<Vertex>> = BTreeMap::new();
    for v in 0..g.n() {
        groups.entry(forest.root_of[v]).or_default().push(v);
    }
    groups
        .into_iter()
        .map(|(root, vs)| {
            let (sub, map) = g.induced_subgraph(&vs);
            let pos: BTreeMap<Vertex, usize> = map.iter().enumerate().map(|(i, &v)| (v, i)).collect();
            let m = map.len();
            let f = SpanningForest {
                roots: vec![pos[&root]],
                root_of: vec![pos[&root]; m],
                parent: map.iter().map(|v| forest.parent[*v].map(|p| pos[&p])).collect(),
                children: map.iter().map(|v| forest.children[*v].iter().map(|c| pos[c]).collect()).collect(),
                depth: map.iter().map(|v| forest.depth[*v]).collect(),
            };
            Part { sub, map, forest: f, root_id: g.id(root) }
        })
        .collect()
}

struct Ctx<'a> {
    g: &'a Graph,
    ov: &'a SparseOverlay,
    parts: &'a [Part],
    part_of: Vec<(usize, usize)>,
    power: Option<Graph>,
    s: u32,
    delta_a: u64,
    logn: u64,
    cap: usize,
    params: &'a SparsifyParams,
    mode: StageMode,
    cfg: &'a SimConfig,
}

/// Sums `(α_0, α_1)` over one component: a two-lane convergecast, then the
/// chosen bit goes back down.
fn tree_aggregate_bit(part: &Part, c: &BitCandidates, cfg: &SimConfig, report: &mut RoundReport, pos: &BTreeMap<Vertex, usize>) -> Result<(u128, u128)> {
    let mut vals = vec![vec![0u128; 2]; part.sub.n()];
    let mut widest = 0u128;
    for &(v, a0, a1) in &c.per_owner {
        let i = pos[&v];
        vals[i][0] += a0;
        vals[i][1] += a1;
        widest = widest.max(vals[i][0]).max(vals[i][1]);
    }
    let bits = (128 - widest.leading_zeros()).max(1);
    let (sums, r1) = convergecast_sum(&part.sub, &part.forest, &vals, bits, cfg)?;
    report.then(&r1);
    let root = part.forest.roots[0];
    let s = &sums[&root];
    let bit = s[1] < s[0];
    let msgs = BTreeMap::from([(root, Message::from_bits(bit as u64, 1))]);
    let (_, r2) = downcast(&part.sub, &part.forest, &msgs, 1, cfg)?;
    report.then(&r2);
    Ok((s[0], s[1]))
}

fn stage(
    cx: &Ctx<'_>,
    i: u32,
    active: &mut [bool],
    inactive_known: &mut [BTreeSet<u64>],
) -> Result<(Vec<bool>, StageRecord, RoundReport)> {
    let g = cx.g;
    let n = g.n();
    let s = cx.s as usize;
    let mut report = RoundReport::default();
    let act_nb: Vec<Vec<u64>> = (0..n)
        .map(|v| cx.ov.known[v][s].iter().copied().filter(|x| !inactive_known[v].contains(x)).collect())
        .collect();
    let deg: Vec<usize> = act_nb.iter().map(Vec::len).collect();
    let precondition_violations = deg.iter().filter(|&&d| (d as u128) << (i - 1) > cx.delta_a as u128).count();
    if precondition_violations > 0 && cx.mode == StageMode::Derandomized {
        return Err(Error::Precondition(format!(
            "stage {i}: active degree above Δ_A/2^(i-1) at {precondition_violations} nodes"
        )));
    }
    let high: Vec<bool> = deg.iter().map(|&d| (d as u128) << i >= cx.delta_a as u128).collect();
    let mut events = Vec::new();
    for v in 0..n {
        if high[v] {
            let mut vbl = act_nb[v].clone();
            if active[v] {
                vbl.push(g.id(v));
                vbl.sort_unstable();
            }
            events.push(EventSpec { owner: v, vbl, kind: EventKind::NoneSet });
        }
        events.push(EventSpec { owner: v, vbl: act_nb[v].clone(), kind: EventKind::CountAbove(cx.cap) });
    }

    let a = g.id_bits();
    let base_k = cx.params.independence(n);
    let mut sampled = vec![false; n];
    let mut attempts_max = 0;
    let mut estimated_bits = 0;
    let mut fired_total = 0;
    let mut seeds = Vec::new();
    let mut part_reports = RoundReport::default();
    for (pi, part) in cx.parts.iter().enumerate() {
        let pos: BTreeMap<Vertex, usize> = part.map.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let evs: Vec<EventSpec> = events.iter().filter(|e| cx.part_of[e.owner].0 == pi).cloned().collect();
        let mut prep = RoundReport::default();
        let (family, seed, th) = match cx.mode {
            StageMode::Randomized => {
                let family = HashFamily::new(a, a, base_k)?;
                let th = Threshold::below(accept_count(cx.params.c_samp, i, cx.logn, cx.delta_a, a));
                let mut rng = Rng::new(key(&[cx.cfg.rng_seed, 0x5ba5, cx.s as u64, i as u64, part.root_id]));
                let seed: Vec<bool> = (0..family.gamma()).map(|_| rng.bits(1) == 1).collect();
                fired_total += count_fired(&family, th, &seed, &evs);
                (family, seed, th)
            }
            StageMode::Derandomized => {
                let mut chosen = None;
                for attempt in 0..=cx.params.max_attempts {
                    let family = HashFamily::new(a, a, base_k + attempt)?;
                    let th = Threshold::below(accept_count(cx.params.c_samp, i, cx.logn, cx.delta_a, a));
                    let mut exp = cx.params.expectation;
                    exp.sample_count <<= attempt;
                    let mut rep = RoundReport::default();
                    let out = fix_seed(&family, th, &evs, &exp, attempt as u64, |c| {
                        tree_aggregate_bit(part, c, cx.cfg, &mut rep, &pos)
                    });
                    prep.then(&rep);
                    attempts_max = attempts_max.max(attempt + 1);
                    match out {
                        Ok(o) if o.fired == 0 => {
                            estimated_bits += o.estimated_bits;
                            chosen = Some((family, o.seed, th));
                            break;
                        }
                        Ok(_) | Err(Error::Invariant(_)) => continue,
                        Err(e) => return Err(e),
                    }
                }
                chosen.ok_or_else(|| {
                    Error::OracleFailure(format!(
                        "stage {i}: no seed without firing events after {} attempts",
                        cx.params.max_attempts + 1
                    ))
                })?
            }
        };
        seeds.push(seed_to_hex(&seed));
        let coeffs = family.coefficients(&seed);
        for &v in &part.map {
            if active[v] && th.sampled(family.eval_coeffs(&coeffs, g.id(v))) {
                sampled[v] = true;
            }
        }
        part_reports.alongside(&prep);
    }
    report.then(&part_reports);

    // Deactivate everything within two hops of G^s, i.e. 2s hops of G.
    let (reached, r) = beep(g, &sampled, 2 * cx.s, cx.cfg)?;
    report.then(&r);
    let before: Vec<bool> = active.to_vec();
    let mut newly = vec![false; n];
    for v in 0..n {
        if active[v] && reached[v].is_some() {
            active[v] = false;
            newly[v] = true;
        }
    }
    let msgs: BTreeMap<Vertex, Message> =
        (0..n).filter(|&v| newly[v]).map(|v| (v, Message::from_bits(1, 1))).collect();
    let (got, _, r) = broadcast_from_q(g, cx.ov, &newly, &msgs, 1, cx.cfg)?;
    report.then(&r);
    for (v, m) in got.into_iter().enumerate() {
        inactive_known[v].extend(m.into_keys());
    }

    let mut failures = ClauseFailures::default();
    if cx.params.oracle_checks {
        let p = cx.power.as_ref().unwrap();
        for v in 0..n {
            let nb = p.neighbors(v);
            let truth_deg = nb.iter().filter(|&&w| before[w]).count();
            debug_assert_eq!(truth_deg, deg[v], "active-degree knowledge out of date");
            if nb.iter().filter(|&&w| sampled[w]).count() > cx.cap {
                failures.degree += 1;
            }
            if high[v] && !sampled[v] && !nb.iter().any(|&w| sampled[w]) {
                failures.undominated += 1;
            }
            let left = nb.iter().filter(|&&w| active[w]).count();
            if (left as u128) << i >= cx.delta_a as u128 {
                failures.residual += 1;
            }
        }
        if cx.mode == StageMode::Derandomized && failures.total() > 0 {
            return Err(Error::Invariant(format!("derandomized stage {i} failed its oracle: {failures:?}")));
        }
    }
    let rec = StageRecord {
        iteration: cx.s,
        stage: i,
        active: before.iter().filter(|&&b| b).count(),
        selected: sampled.iter().filter(|&&b| b).count(),
        remaining: active.iter().filter(|&&b| b).count(),
        max_active_degree: deg.iter().copied().max().unwrap_or(0),
        high_degree: high.iter().filter(|&&b| b).count(),
        events: events.len(),
        attempts: attempts_max,
        estimated_bits,
        fired: fired_total,
        precondition_violations,
        seeds,
        failures,
    };
    Ok((sampled, rec, report))
}

/// DetSparsification on `G^s`, where `s` is the overlay's radius and its
/// member set is the active set `A`. Returns `∪ M_i ∪ H_{r+1}`.
pub fn det_sparsify_g(
    g: &Graph,
    ov: &SparseOverlay,
    delta_a: u64,
    params: &SparsifyParams,
    mode: StageMode,
    cfg: &SimConfig,
) -> Result<(Vec<bool>, IterationRecord, RoundReport)> {
    det_sparsify_inner(g, ov, delta_a, params, mode, cfg, log_n(g.n()) as u64, params.cap(g.n()))
}

#[allow(clippy::too_many_arguments)]
fn det_sparsify_inner(
    g: &Graph,
    ov: &SparseOverlay,
    delta_a: u64,
    params: &SparsifyParams,
    mode: StageMode,
    cfg: &SimConfig,
    logn: u64,
    cap: usize,
) -> Result<(Vec<bool>, IterationRecord, RoundReport)> {
    let n = g.n();
    let s = ov.radius;
    if s == 0 {
        return Err(Error::InvalidParameter("overlay radius 0".into()));
    }
    let a_size = ov.q.iter().filter(|&&b| b).count();
    if let Some(v) = (0..n).find(|&v| ov.known[v][s as usize].len() as u64 > delta_a) {
        return Err(Error::Precondition(format!(
            "Δ_A = {delta_a} understated: node {} has {} active neighbors",
            g.id(v),
            ov.known[v][s as usize].len()
        )));
    }
    let r = stage_count(delta_a, logn, params.slack_log2);
    let mut rec = IterationRecord {
        iteration: s,
        delta_a,
        stages_planned: r,
        fallback: r <= 0,
        size_before: a_size,
        size_after: a_size,
        stages: Vec::new(),
    };
    let mut report = RoundReport::default();
    if r <= 0 || a_size == 0 {
        return Ok((ov.q.clone(), rec, report));
    }
    let ps = parts(g, &ov.forest);
    let mut part_of = vec![(0, 0); n];
    for (pi, p) in ps.iter().enumerate() {
        for (j, &v) in p.map.iter().enumerate() {
            part_of[v] = (pi, j);
        }
    }
    let cx = Ctx {
        g,
        ov,
        parts: &ps,
        part_of,
        power: if params.oracle_checks { Some(power_graph(g, s)?) } else { None },
        s,
        delta_a,
        logn,
        cap,
        params,
        mode,
        cfg,
    };
    let mut active = ov.q.clone();
    let mut inactive_known = vec![BTreeSet::new(); n];
    let mut q = vec![false; n];
    for i in 1..=r as u32 {
        let (m, st, rep) = stage(&cx, i, &mut active, &mut inactive_known)?;
        report.then(&rep);
        for v in 0..n {
            q[v] |= m[v];
        }
        rec.stages.push(st);
    }
    for v in 0..n {
        q[v] |= active[v];
    }
    rec.size_after = q.iter().filter(|&&b| b).count();
    Ok((q, rec, report))
}

/// Degree and domination oracles for one iteration.
fn check_iteration(g: &Graph, s: u32, prev: &[bool], q: &[bool], cap: usize) -> Result<()> {
    let p = power_graph(g, s)?;
    for v in 0..g.n() {
        let d = p.neighbors(v).iter().filter(|&&w| q[w]).count();
        if d > cap {
            return Err(Error::Invariant(format!("iteration {s}: d^{s}(v{v}, Q) = {d} > {cap}")));
        }
    }
    let prev_set: Vec<Vertex> = (0..g.n()).filter(|&v| prev[v]).collect();
    let q_set: Vec<Vertex> = (0..g.n()).filter(|&v| q[v]).collect();
    let dp = g.bfs_multi(&prev_set, u32::MAX);
    let dq = g.bfs_multi(&q_set, u32::MAX);
    for v in 0..g.n() {
        if let Some(a) = dp[v] {
            match dq[v] {
                Some(b) if b <= a + 2 * s => {}
                other => {
                    return Err(Error::Invariant(format!(
                        "iteration {s}: dist(v{v}, Q) = {other:?} > {} + dist(v{v}, Q_prev) = {}",
                        2 * s,
                        a + 2 * s
                    )))
                }
            }
        }
    }
    Ok(())
}

/// Iterated sparsification for `G^k`: iteration `s` runs DetSparsification
/// on `G^s` over the previous result, then every node learns one more hop
/// of identifiers.
pub fn sparsify_power(
    g: &Graph,
    k: u32,
    q0: &[bool],
    params: &SparsifyParams,
    mode: StageMode,
    cfg: &SimConfig,
) -> Result<SparsifyResult> {
    sparsify_inner(g, k, q0, params, mode, cfg, log_n(g.n()) as u64, g.max_degree(), params.cap(g.n()))
}

#[allow(clippy::too_many_arguments)]
fn sparsify_inner(
    g: &Graph,
    k: u32,
    q0: &[bool],
    params: &SparsifyParams,
    mode: StageMode,
    cfg: &SimConfig,
    logn: u64,
    delta: usize,
    cap: usize,
) -> Result<SparsifyResult> {
    if k < 1 {
        return Err(Error::InvalidParameter("k < 1".into()));
    }
    if q0.len() != g.n() {
        return Err(Error::InvalidParameter(format!("Q_0 mask of length {} for {} vertices", q0.len(), g.n())));
    }
    if (cfg.bandwidth_bits as usize) < cap + 1 {
        return Err(Error::Precondition(format!(
            "bandwidth {} below cap + 1 = {}; use SparsifyParams::config",
            cfg.bandwidth_bits,
            cap + 1
        )));
    }
    let (forest, mut report) = leader_spanning_tree(g, cfg, true)?;
    let ov = SparseOverlay::with_forest(g, q0, forest);
    let (mut ov, r) = learn_ids_one_hop(g, &ov, cfg)?;
    report.then(&r);
    let mut sets = vec![q0.to_vec()];
    let mut iterations = Vec::new();
    let mut overlays = Vec::new();
    for s in 1..=k {
        let delta_a = if s == 1 { delta as u64 } else { delta as u64 * (cap as u64 + 1) }.max(1);
        let (q, rec, rep) = det_sparsify_inner(g, &ov, delta_a, params, mode, cfg, logn, cap)?;
        report.then(&rep);
        if params.oracle_checks && mode == StageMode::Derandomized {
            check_iteration(g, s, sets.last().unwrap(), &q, cap)?;
        }
        iterations.push(rec);
        let restricted = ov.restrict(g, &q);
        let (certified, r1) = certify_degrees(g, &restricted, cfg)?;
        let (next, r2) = learn_ids_one_hop(g, &certified, cfg)?;
        report.then(&r1);
        report.then(&r2);
        sets.push(q);
        overlays.push(next.clone());
        ov = next;
    }
    Ok(SparsifyResult {
        q: sets.last().unwrap().clone(),
        k,
        cap,
        claimed_domination: k * k + k,
        sets,
        iterations,
        overlays,
        report,
    })
}

/// Sparsification one network-decomposition color at a time. Each cluster
/// runs [`sparsify_power`] on `G[C ∪ N^k(C)]` with the still-active part of
/// `C` as `Q_0`; border nodes only observe. After each color, selected nodes
/// deactivate every globally active node within `2k` hops.
pub fn sparsify_with_nd(
    g: &Graph,
    k: u32,
    q0: &[bool],
    params: &SparsifyParams,
    nd: &NetDecomp,
    mode: StageMode,
    cfg: &SimConfig,
) -> Result<SparsifyResult> {
    if k < 1 {
        return Err(Error::InvalidParameter("k < 1".into()));
    }
    if nd.separation < 2 * k + 1 {
        return Err(Error::InvalidParameter(format!("decomposition separation {} < 2k+1 = {}", nd.separation, 2 * k + 1)));
    }
    let check = verify_nd(g, nd);
    if !check.pass {
        return Err(Error::InvalidParameter(format!("invalid decomposition: {:?}", check.witnesses.first())));
    }
    let n = g.n();
    let logn = log_n(n) as u64;
    let cap = params.cap(n);
    let mut active = q0.to_vec();
    let mut q = vec![false; n];
    let mut report = RoundReport { nd_oracle_used: true, ..RoundReport::default() };
    let mut iterations = Vec::new();
    for color in 0..nd.colors {
        let mut color_report = RoundReport::default();
        let mut selected = vec![false; n];
        for cl in nd.clusters.iter().filter(|c| c.color == color) {
            let near = g.bfs_multi(&cl.members, k);
            let region: Vec<Vertex> = (0..n).filter(|&v| near[v].is_some()).collect();
            let (sub, map) = g.induced_subgraph(&region);
            let in_c: BTreeSet<Vertex> = cl.members.iter().copied().collect();
            let sub_q0: Vec<bool> = map.iter().map(|&v| in_c.contains(&v) && active[v]).collect();
            let res = sparsify_inner(&sub, k, &sub_q0, params, mode, cfg, logn, g.max_degree(), cap)?;
            for (i, &v) in map.iter().enumerate() {
                if res.q[i] {
                    selected[v] = true;
                    q[v] = true;
                }
            }
            for &v in &cl.members {
                active[v] = false;
            }
            iterations.extend(res.iterations);
            color_report.alongside(&res.report);
        }
        let (reached, r) = beep(g, &selected, 2 * k, cfg)?;
        color_report.then(&r);
        for v in 0..n {
            if reached[v].is_some() {
                active[v] = false;
            }
        }
        report.then(&color_report);
    }
    if params.oracle_checks && mode == StageMode::Derandomized {
        let p = power_graph(g, k)?;
        for v in 0..n {
            let d = p.neighbors(v).iter().filter(|&&w| q[w]).count();
            if d > cap {
                return Err(Error::Invariant(format!("d^{k}(v{v}, Q) = {d} > {cap}")));
            }
        }
    }
    Ok(SparsifyResult {
        q: q.clone(),
        k,
        cap,
        claimed_domination: k * k + k,
        sets: vec![q0.to_vec(), q],
        iterations,
        overlays: Vec::new(),
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate, mask, members, GraphKind};
    use crate::netdecomp::{decompose, NdQuality};
    use crate::verify::check_degree_cap;

    fn dom_ok(g: &Graph, q0: &[bool], q: &[bool], extra: u32) -> bool {
        let a: Vec<Vertex> = (0..g.n()).filter(|&v| q0[v]).collect();
        let b: Vec<Vertex> = (0..g.n()).filter(|&v| q[v]).collect();
        let da = g.bfs_multi(&a, u32::MAX);
        let db = g.bfs_multi(&b, u32::MAX);
        (0..g.n()).all(|v| match (da[v], db[v]) {
            (Some(x), Some(y)) => y <= x + extra,
            (None, _) => true,
            (Some(_), None) => false,
        })
    }

    #[test]
    fn stage_counts() {
        assert_eq!(stage_count(1 << 20, 16, 5), 11);
        assert!(stage_count(100, 8, 5) <= 0);
        assert_eq!(accept_count(24, 1, 10, 1024, 10), 480);
    }

    #[test]
    fn empty_active_set() {
        let g = generate(GraphKind::Gnp { n: 30, p: 0.2 }, 1).unwrap();
        let p = SparsifyParams::desk();
        let c = p.config(30, 1);
        let res = sparsify_power(&g, 2, &[false; 30], &p, StageMode::Derandomized, &c).unwrap();
        assert!(res.q.iter().all(|&b| !b));
    }

    #[test]
    fn single_active_vertex_survives() {
        let g = generate(GraphKind::Gnp { n: 40, p: 0.5 }, 3).unwrap();
        let p = SparsifyParams::desk();
        let c = p.config(40, 1);
        let q0 = mask(40, &[7]);
        let res = sparsify_power(&g, 2, &q0, &p, StageMode::Derandomized, &c).unwrap();
        assert_eq!(res.q, q0);
    }

    #[test]
    fn small_delta_falls_back() {
        let g = generate(GraphKind::Cycle { n: 12 }, 1).unwrap();
        let p = SparsifyParams::desk();
        let c = p.config(12, 1);
        let res = sparsify_power(&g, 1, &[true; 12], &p, StageMode::Derandomized, &c).unwrap();
        assert!(res.iterations[0].fallback);
        assert_eq!(res.q, vec![true; 12]);
        assert!(dom_ok(&g, &[true; 12], &res.q, 2));
    }

    #[test]
    fn twelve_node_stage_meets_all_clauses() {
        let g = generate(GraphKind::Gnp { n: 12, p: 0.9 }, 2).unwrap();
        let mut p = SparsifyParams::desk();
        p.c_samp = 1;
        p.cap_c = 3;
        p.slack_log2 = 0;
        let c = p.config(12, 1);
        let res = sparsify_power(&g, 1, &[true; 12], &p, StageMode::Derandomized, &c).unwrap();
        assert!(!res.iterations[0].stages.is_empty());
        for st in &res.iterations[0].stages {
            assert_eq!(st.failures.total(), 0);
        }
    }

    #[test]
    fn dense_graph_runs_stages_and_holds_invariants() {
        for seed in 0..3 {
            let g = generate(GraphKind::Gnp { n: 96, p: 0.6 }, seed).unwrap();
            let p = SparsifyParams::desk();
            let c = p.config(96, seed);
            let all = vec![true; 96];
            let res = sparsify_power(&g, 2, &all, &p, StageMode::Derandomized, &c).unwrap();
            assert!(res.iterations.iter().any(|it| !it.fallback));
            for (s, w) in res.sets.windows(2).enumerate() {
                assert!((0..96).all(|v| !w[1][v] || w[0][v]), "not monotone at {s}");
            }
            assert!(check_degree_cap(&g, &members(&res.q), 2, res.cap).pass);
            assert!(dom_ok(&g, &all, &res.q, 6));
        }
    }

    #[test]
    fn nd_variant_with_single_cluster_matches() {
        let g = generate(GraphKind::Gnp { n: 48, p: 0.5 }, 4).unwrap();
        let p = SparsifyParams::desk();
        let c = p.config(48, 4);
        let all = vec![true; 48];
        let nd = decompose(&g, &all, 2 * 2 + 1, NdQuality::Greedy).unwrap();
        assert_eq!(nd.clusters.len(), 1);
        let a = sparsify_power(&g, 2, &all, &p, StageMode::Derandomized, &c).unwrap();
        let b = sparsify_with_nd(&g, 2, &all, &p, &nd, StageMode::Derandomized, &c).unwrap();
        assert_eq!(a.q, b.q);
        assert!(b.report.nd_oracle_used);
    }

    #[test]
    fn nd_variant_on_sparse_graph() {
        for seed in 0..3 {
            let g = generate(GraphKind::Gnp { n: 120, p: 0.04 }, seed).unwrap();
            let p = SparsifyParams::desk();
            let c = p.config(120, seed);
            let all = vec![true; 120];
            let nd = decompose(&g, &all, 5, NdQuality::Greedy).unwrap();
            let res = sparsify_with_nd(&g, 2, &all, &p, &nd, StageMode::Derandomized, &c).unwrap();
            assert!(check_degree_cap(&g, &members(&res.q), 2, res.cap).pass);
            assert!(dom_ok(&g, &all, &res.q, 6));
        }
        let g = generate(GraphKind::Path { n: 6 }, 1).unwrap();
        let p = SparsifyParams::desk();
        let nd = decompose(&g, &[true; 6], 3, NdQuality::Greedy).unwrap();
        assert!(matches!(
            sparsify_with_nd(&g, 2, &[true; 6], &p, &nd, StageMode::Derandomized, &p.config(6, 1)),
            Err(Error::InvalidParameter(_))
        ));
    }
}
