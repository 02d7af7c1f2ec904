//! Randomized MIS on `G` and `G^k`: Luby with `k`-hop floods, BeepingMIS
//! with ID-tagged beeps, shattering, ball partitions and ball graphs.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::comm::{beep, owner_flood};
use crate::graph::{members, Graph, Vertex};
use crate::netdecomp::{decompose, verify_nd, NdQuality};
use crate::rng::{key, Rng};
use crate::ruling::{awerbuch_on, power_degree_bound, DistanceColoring, RulingSetResult};
use crate::runtime::{run_chunked, Incoming, Message, NodeProgram, RoundCtx, RoundReport, SimConfig};
use crate::verify::{check_power_mis, is_k_connected, k_components};
use crate::{bits_for, ceil_log2, log_n, Error, Result};

// ---------------------------------------------------------------------------
// Luby.

struct LubyPhase {
    k: u32,
    x_bits: u32,
    id_bits: u32,
    own: Option<(u64, u64)>,
    best: Option<(u64, u64)>,
    sent: Option<(u64, u64)>,
    joined: bool,
    alerted: bool,
    round: u64,
}

impl NodeProgram for LubyPhase {
    type Output = (bool, bool);

    fn on_round(&mut self, ctx: &mut RoundCtx<'_>, inbox: &[Incoming]) {
        let r = ctx.round();
        self.round = r;
        let k = self.k as u64;
        if r <= k + 1 {
            for m in inbox {
                let mut rd = m.msg.reader();
                let x = rd.read(self.x_bits).unwrap();
                let id = rd.read(self.id_bits).unwrap();
                self.best = Some(self.best.map_or((x, id), |b| b.min((x, id))));
            }
            if r == 1 {
                self.best = self.own;
            }
            if r <= k {
                if let Some(b) = self.best.filter(|b| self.sent != Some(*b)) {
                    self.sent = Some(b);
                    let mut msg = Message::from_bits(b.0, self.x_bits);
                    msg.push(b.1, self.id_bits);
                    ctx.send_all(&msg);
                }
                return;
            }
            if self.own.is_some() && self.best == self.own {
                self.joined = true;
                ctx.send_all(&Message::from_bits(1, 1));
            }
            return;
        }
        if !inbox.is_empty() && !self.alerted && !self.joined {
            self.alerted = true;
            if r - (k + 1) < k {
                ctx.send_all(&Message::from_bits(1, 1));
            }
        }
    }

    fn halted(&self) -> bool {
        self.round > self.k as u64
    }

    fn finish(self) -> (bool, bool) {
        (self.joined, self.alerted)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LubyResult {
    pub set: Vec<Vertex>,
    pub phases: u32,
    pub report: RoundReport,
}

/// Luby on `G^k[domain]`. Every phase each undecided node draws `x_v` from
/// `[n^c_exp]`; `(x_v, ID)` pairs are min-flooded for `k` hops and local
/// minima join, then alert their `k`-hop neighborhood.
pub fn luby_gk(g: &Graph, k: u32, domain: &[bool], c_exp: u32, cfg: &SimConfig) -> Result<LubyResult> {
    if k < 1 {
        return Err(Error::InvalidParameter("k < 1".into()));
    }
    if c_exp < 3 {
        return Err(Error::InvalidParameter(format!("c_exp = {c_exp} < 3")));
    }
    let n = g.n();
    let x_bits = (c_exp * log_n(n)).min(63);
    let id_bits = g.id_bits();
    let mut undecided = domain.to_vec();
    let mut set = Vec::new();
    let mut report = RoundReport::default();
    let mut phases = 0;
    while undecided.iter().any(|&b| b) {
        if report.rounds_used >= cfg.round_limit {
            return Err(Error::Timeout(alloc::boxed::Box::new(report)));
        }
        phases += 1;
        let (out, r) = run_chunked(g, cfg, x_bits + id_bits, |v, _| {
            let own = undecided[v].then(|| {
                let mut rng = Rng::new(key(&[cfg.rng_seed, 0x10b, phases as u64, g.id(v)]));
                (rng.bits(x_bits), g.id(v))
            });
            LubyPhase { k, x_bits, id_bits, own, best: None, sent: None, joined: false, alerted: false, round: 0 }
        })?;
        report.then(&r);
        for (v, (joined, alerted)) in out.into_iter().enumerate() {
            if joined {
                set.push(v);
                undecided[v] = false;
            } else if alerted {
                undecided[v] = false;
            }
        }
    }
    set.sort_unstable();
    Ok(LubyResult { set, phases, report })
}

// ---------------------------------------------------------------------------
// BeepingMIS.

#[derive(Debug, Clone, Default)]
struct Lane {
    marked: bool,
    /// Best hops-left per beeper ID heard so far.
    best: BTreeMap<u64, u32>,
    sent: Vec<(u64, u32)>,
    joined: bool,
    dominated: bool,
}

impl Lane {
    /// Up to two distinct IDs with the most hops left, smallest ID first on ties.
    fn top2(&self) -> Vec<(u64, u32)> {
        let mut all: Vec<(u64, u32)> = self.best.iter().map(|(&id, &h)| (id, h)).filter(|&(_, h)| h >= 1).collect();
        all.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        all.truncate(2);
        all
    }
}

/// One BeepingMIS step for several independent instances packed into one
/// message: `k` rounds of tuple relays, a decision, then `k` rounds of
/// join alerts.
struct BeepStep {
    k: u32,
    id: u64,
    id_bits: u32,
    hop_bits: u32,
    lanes: Vec<Lane>,
    round: u64,
}

impl NodeProgram for BeepStep {
    type Output = Vec<(bool, bool, bool)>;

    fn on_round(&mut self, ctx: &mut RoundCtx<'_>, inbox: &[Incoming]) {
        let r = ctx.round();
        self.round = r;
        let k = self.k as u64;
        if r <= k + 1 {
            for m in inbox {
                let mut rd = m.msg.reader();
                for lane in self.lanes.iter_mut() {
                    let c = rd.read(2).unwrap();
                    for _ in 0..c {
                        let id = rd.read(self.id_bits).unwrap();
                        let h = rd.read(self.hop_bits).unwrap() as u32;
                        let e = lane.best.entry(id).or_insert(h);
                        *e = (*e).max(h);
                    }
                }
            }
            if r == 1 {
                for lane in self.lanes.iter_mut().filter(|l| l.marked) {
                    lane.best.insert(self.id, self.k);
                }
            }
            if r <= k {
                let tops: Vec<Vec<(u64, u32)>> = self.lanes.iter().map(Lane::top2).collect();
                if tops.iter().zip(&self.lanes).any(|(t, l)| *t != l.sent) {
                    let mut msg = Message::new();
                    for (lane, t) in self.lanes.iter_mut().zip(tops) {
                        msg.push(t.len() as u64, 2);
                        for &(id, h) in &t {
                            msg.push(id, self.id_bits);
                            msg.push((h - 1) as u64, self.hop_bits);
                        }
                        lane.sent = t;
                    }
                    ctx.send_all(&msg);
                }
                return;
            }
            let mut flags = Message::new();
            let mut any = false;
            for lane in self.lanes.iter_mut() {
                let other = lane.best.keys().any(|&id| id != self.id);
                lane.joined = lane.marked && !other;
                flags.push_bool(lane.joined);
                any |= lane.joined;
            }
            if any {
                ctx.send_all(&flags);
            }
            return;
        }
        let mut fresh = Message::new();
        let mut any = false;
        let mut heard = vec![false; self.lanes.len()];
        for m in inbox {
            let mut rd = m.msg.reader();
            for h in heard.iter_mut() {
                *h |= rd.read_bool().unwrap_or(false);
            }
        }
        for (lane, h) in self.lanes.iter_mut().zip(heard) {
            let new = h && !lane.dominated && !lane.joined;
            if new {
                lane.dominated = true;
            }
            fresh.push_bool(new);
            any |= new;
        }
        if any && r - (k + 1) < k {
            ctx.send_all(&fresh);
        }
    }

    fn halted(&self) -> bool {
        self.round > self.k as u64
    }

    fn finish(self) -> Self::Output {
        let id = self.id;
        self.lanes.into_iter().map(|l| (l.best.keys().any(|&x| x != id), l.joined, l.dominated)).collect()
    }
}

/// Per-instance result of BeepingMIS.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ShatterOutcome {
    /// Joined nodes, sorted.
    pub independent: Vec<Vertex>,
    /// Participants neither in nor within `k` of `independent`.
    pub undecided: Vec<Vertex>,
    /// Components of `undecided` in `G^k`.
    pub components: Vec<Vec<Vertex>>,
    pub steps: u32,
    pub report: RoundReport,
}

/// BeepingMIS identifiers. `Compact` must be unique within `2k` hops among
/// participants.
#[derive(Debug, Clone, Copy)]
pub enum BeepIds<'a> {
    Original,
    Compact { ids: &'a [u64], bits: u32 },
}

/// Runs `instances` independent BeepingMIS executions side by side on the
/// same participants for up to `steps` steps, stopping early once no
/// instance has undecided participants. Marking probability starts at 1/2,
/// halves after hearing another beeper within `k`, otherwise doubles up to 1/2.
/// Returns per instance `(joined, still undecided)` masks.
#[allow(clippy::type_complexity)]
pub fn beeping_mis_multi(
    g: &Graph,
    k: u32,
    participants: &[bool],
    steps: u32,
    ids: BeepIds<'_>,
    instances: usize,
    salt: u64,
    cfg: &SimConfig,
) -> Result<(Vec<(Vec<bool>, Vec<bool>)>, u32, RoundReport)> {
    if k < 1 {
        return Err(Error::InvalidParameter("k < 1".into()));
    }
    let n = g.n();
    let (id_of, id_bits): (Vec<u64>, u32) = match ids {
        BeepIds::Original => (g.ids().to_vec(), g.id_bits()),
        BeepIds::Compact { ids, bits } => {
            for v in (0..n).filter(|&v| participants[v]) {
                let near = g.bfs_multi(&[v], 2 * k);
                if let Some(w) = (0..n).find(|&w| w != v && participants[w] && near[w].is_some() && ids[w] == ids[v]) {
                    return Err(Error::Precondition(format!("v{v} and v{w} share ID {} within {} hops", ids[v], 2 * k)));
                }
            }
            (ids.to_vec(), bits)
        }
    };
    let hop_bits = bits_for(k as u64);
    let max_bits = instances as u32 * (2 + 2 * (id_bits + hop_bits));
    let mut undecided: Vec<Vec<bool>> = vec![participants.to_vec(); instances];
    let mut joined = vec![vec![false; n]; instances];
    let mut exp = vec![vec![1u32; n]; instances];
    let mut report = RoundReport::default();
    let frame = crate::runtime::frame_for(max_bits, cfg.bandwidth_bits);
    let mut done = 0;
    for step in 0..steps {
        if undecided.iter().all(|u| u.iter().all(|&b| !b)) {
            break;
        }
        done = step + 1;
        let (out, mut r) = run_chunked(g, cfg, max_bits, |v, _| BeepStep {
            k,
            id: id_of[v],
            id_bits,
            hop_bits,
            lanes: (0..instances)
                .map(|i| Lane {
                    marked: undecided[i][v] && {
                        let mut rng = Rng::new(key(&[cfg.rng_seed, salt, step as u64, i as u64, g.id(v)]));
                        rng.coin_pow2(exp[i][v])
                    },
                    ..Lane::default()
                })
                .collect(),
            round: 0,
        })?;
        // The step occupies its full schedule even when the tail is silent.
        r.rounds_used = r.rounds_used.max(2 * k as u64 * frame);
        report.then(&r);
        for (v, lanes) in out.into_iter().enumerate() {
            for (i, (heard, j, dom)) in lanes.into_iter().enumerate() {
                if undecided[i][v] {
                    if j {
                        joined[i][v] = true;
                        undecided[i][v] = false;
                    } else if dom {
                        undecided[i][v] = false;
                    }
                }
                exp[i][v] = if heard { exp[i][v] + 1 } else { exp[i][v].saturating_sub(1).max(1) };
            }
        }
    }
    Ok((joined.into_iter().zip(undecided).collect(), done, report))
}

/// Single-instance BeepingMIS on `G^k` with original IDs.
pub fn beeping_mis_gk(g: &Graph, k: u32, participants: &[bool], steps: u32, cfg: &SimConfig) -> Result<ShatterOutcome> {
    let (mut res, done, report) = beeping_mis_multi(g, k, participants, steps, BeepIds::Original, 1, 0xbee9, cfg)?;
    let (joined, undecided) = res.pop().unwrap();
    let undecided = members(&undecided);
    Ok(ShatterOutcome {
        independent: members(&joined),
        components: k_components(g, &undecided, k),
        undecided,
        steps: done,
        report,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MisParams {
    pub c_pre: u32,
    pub c_post: u32,
    /// Connectivity parameter `s` of the shattering argument.
    pub s_conn: u32,
    /// Re-runs of a color whose parallel executions all failed.
    pub max_retries: u32,
}

impl Default for MisParams {
    fn default() -> Self {
        MisParams { c_pre: 8, c_post: 8, s_conn: 8, max_retries: 4 }
    }
}

/// `ceil(c_pre · s_conn · log Δ^k)` steps.
pub fn preshatter_steps(g: &Graph, k: u32, s_conn: u32, c_pre: u32) -> u32 {
    let l = ceil_log2(power_degree_bound(g, k).max(2));
    c_pre * s_conn * l
}

/// BeepingMIS on all of `V` for [`preshatter_steps`] steps.
pub fn preshatter(g: &Graph, k: u32, s_conn: u32, c_pre: u32, cfg: &SimConfig) -> Result<ShatterOutcome> {
    beeping_mis_gk(g, k, &vec![true; g.n()], preshatter_steps(g, k, s_conn, c_pre), cfg)
}

// ---------------------------------------------------------------------------
// Balls.

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BallPartition {
    pub r_set: Vec<Vertex>,
    /// Ruler of each domain member.
    pub owner: Vec<Option<Vertex>>,
    pub balls: BTreeMap<Vertex, Vec<Vertex>>,
    /// Tree edges `(child, parent)` per ruler.
    pub steiner: BTreeMap<Vertex, BTreeSet<(Vertex, Vertex)>>,
    /// Each ball is connected in `G^connectivity`.
    pub connectivity: u32,
    /// Largest number of trees sharing an edge.
    pub congestion: usize,
    /// Largest distance from a member to its ruler.
    pub domination: u32,
}

fn edge_congestion(steiner: &BTreeMap<Vertex, BTreeSet<(Vertex, Vertex)>>) -> usize {
    let mut load: BTreeMap<(Vertex, Vertex), usize> = BTreeMap::new();
    for edges in steiner.values() {
        let uniq: BTreeSet<(Vertex, Vertex)> = edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
        for e in uniq {
            *load.entry(e).or_default() += 1;
        }
    }
    load.values().copied().max().unwrap_or(0)
}

impl BallPartition {
    fn from_owner(
        g: &Graph,
        owner: Vec<Option<Vertex>>,
        steiner: BTreeMap<Vertex, BTreeSet<(Vertex, Vertex)>>,
        connectivity: u32,
    ) -> BallPartition {
        let mut balls: BTreeMap<Vertex, Vec<Vertex>> = BTreeMap::new();
        for (v, o) in owner.iter().enumerate() {
            if let Some(o) = o {
                balls.entry(*o).or_default().push(v);
            }
        }
        let domination = balls
            .iter()
            .flat_map(|(&r, b)| {
                let d = g.bfs(r);
                b.iter().map(move |&v| d[v].unwrap_or(u32::MAX)).collect::<Vec<_>>()
            })
            .max()
            .unwrap_or(0);
        BallPartition {
            r_set: balls.keys().copied().collect(),
            congestion: edge_congestion(&steiner),
            owner,
            balls,
            steiner,
            connectivity,
            domination,
        }
    }

    /// Disjoint, covering `domain` exactly, rulers in their own balls, and
    /// every ball connected in `G^connectivity`.
    pub fn verify(&self, g: &Graph, domain: &[bool]) -> Result<()> {
        for v in 0..g.n() {
            match (domain[v], self.owner[v]) {
                (true, None) => return Err(Error::OracleFailure(format!("v{v} has no ball"))),
                (false, Some(_)) => return Err(Error::OracleFailure(format!("v{v} outside the domain has a ball"))),
                _ => {}
            }
        }
        for (&r, ball) in &self.balls {
            if self.owner[r] != Some(r) {
                return Err(Error::OracleFailure(format!("ruler v{r} is not in its own ball")));
            }
            if !is_k_connected(g, ball, self.connectivity) {
                return Err(Error::OracleFailure(format!("ball of v{r} is not {}-connected", self.connectivity)));
            }
        }
        Ok(())
    }
}

/// Awerbuch on `domain` with beep radius `radius` and ID colors, tracking
/// knock-outs: each ball is `radius`-connected.
pub fn ball_ruling_set(
    g: &Graph,
    radius: u32,
    domain: &[bool],
    cfg: &SimConfig,
) -> Result<(RulingSetResult, BallPartition)> {
    let col = DistanceColoring::from_ids(g, radius);
    let run = awerbuch_on(g, radius, domain, &col, 2, true, cfg)?;
    let bp = BallPartition::from_owner(g, run.owner, run.tree_edges, radius);
    bp.verify(g, domain)?;
    let mut res = run.result;
    // Members learn their ruler's ID back along the beep paths.
    let depth = bp.steiner.values().map(|e| e.len()).max().unwrap_or(0) as u64;
    res.report.charge(depth.min(radius as u64 * run.digits as u64) * bp.congestion.max(1) as u64);
    Ok((res, bp))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BallGraph {
    /// Rulers in vertex order of `graph`.
    pub rulers: Vec<Vertex>,
    /// One vertex per ruler, carrying the ruler's ID.
    pub graph: Graph,
    /// `Ball⁺` owner of every node reached.
    pub plus_owner: Vec<Option<Vertex>>,
    pub report: RoundReport,
}

/// Distance-`k` ball graph: every ball floods its ruler's ID for `k` hops,
/// nodes outside the domain join the border of the first ball to reach
/// them (smallest ID on ties), and balls whose `Ball⁺` sets touch are adjacent.
pub fn build_distance_k_ballgraph(g: &Graph, bp: &BallPartition, k: u32, cfg: &SimConfig) -> Result<BallGraph> {
    let owners: Vec<Option<u64>> = bp.owner.iter().map(|o| o.map(|r| g.id(r))).collect();
    let (flood, mut report) = owner_flood(g, &owners, k, cfg)?;
    let plus_owner: Vec<Option<Vertex>> =
        flood.iter().map(|a| a.map(|(o, _, _)| g.vertex_of(o).expect("owner is a vertex"))).collect();
    // One exchange of owner IDs across every edge.
    report.charge(1);
    let rulers = bp.r_set.clone();
    let index: BTreeMap<Vertex, usize> = rulers.iter().enumerate().map(|(i, &r)| (r, i)).collect();
    let mut edges = BTreeSet::new();
    for (a, b) in g.edges() {
        if let (Some(x), Some(y)) = (plus_owner[a], plus_owner[b]) {
            if x != y {
                let (i, j) = (index[&x], index[&y]);
                edges.insert((i.min(j), i.max(j)));
            }
        }
    }
    let edges: Vec<(usize, usize)> = edges.into_iter().collect();
    let graph = Graph::with_ids(rulers.len(), &edges, rulers.iter().map(|&r| g.id(r)).collect(), g.id_bits())?;
    Ok(BallGraph { rulers, graph, plus_owner, report })
}

impl BallGraph {
    /// `dist_G(Ball(v), Ball(w)) ≤ k ⇒ dist_B(v, w) ≤ k`, by brute force.
    pub fn verify(&self, g: &Graph, bp: &BallPartition, k: u32) -> Result<()> {
        for (i, r) in self.rulers.iter().enumerate() {
            let near = g.bfs_multi(&bp.balls[r], k);
            let bd = self.graph.bfs_multi(&[i], k);
            for (j, s) in self.rulers.iter().enumerate() {
                if i != j && bp.balls[s].iter().any(|&v| near[v].is_some()) && bd[j].is_none() {
                    return Err(Error::OracleFailure(format!(
                        "balls of v{r} and v{s} are within {k} in G but not in the ball graph"
                    )));
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Shattering pipelines.

#[derive(Debug, Clone, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MisStats {
    pub preshatter_steps: u32,
    pub undecided_after_preshatter: usize,
    pub largest_component: usize,
    pub balls: usize,
    pub colors: u32,
    pub palette: u64,
    pub instances: usize,
    pub post_steps: u32,
    pub retries: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MisResult {
    pub set: Vec<Vertex>,
    pub stats: MisStats,
    pub report: RoundReport,
}

/// Greedy distance-`d` coloring of `domain` in ID order; returns colors and
/// the palette size.
fn compact_ids(g: &Graph, domain: &[bool], d: u32) -> (Vec<u64>, u64) {
    let mut order: Vec<Vertex> = members(domain);
    order.sort_by_key(|&v| g.id(v));
    let mut color = vec![u64::MAX; g.n()];
    let mut palette = 1;
    for v in order {
        let near = g.bfs_multi(&[v], d);
        let used: BTreeSet<u64> = (0..g.n()).filter(|&w| near[w].is_some() && color[w] != u64::MAX).map(|w| color[w]).collect();
        let c = (0..).find(|c| !used.contains(c)).unwrap();
        color[v] = c;
        palette = palette.max(c + 1);
    }
    for c in color.iter_mut() {
        if *c == u64::MAX {
            *c = 0;
        }
    }
    (color, palette.max(2))
}

/// Finishes an MIS of `G^k[domain]` given a ball partition of `domain`:
/// decompose the ball graph with separation `k+1`, then sweep the colors,
/// running parallel BeepingMIS executions per cluster and keeping a
/// successful one. Returns the joined nodes.
fn finish_with_balls(
    g: &Graph,
    k: u32,
    domain: &[bool],
    bp: &BallPartition,
    params: &MisParams,
    cfg: &SimConfig,
    stats: &mut MisStats,
) -> Result<(Vec<Vertex>, RoundReport)> {
    let n = g.n();
    let bg = build_distance_k_ballgraph(g, bp, k, cfg)?;
    bg.verify(g, bp, k)?;
    let mut report = bg.report.clone();
    let all = vec![true; bg.graph.n()];
    let nd = decompose(&bg.graph, &all, k + 1, NdQuality::Greedy)?;
    let check = verify_nd(&bg.graph, &nd);
    if !check.pass {
        return Err(Error::Invariant(format!("ball-graph decomposition failed: {:?}", check.witnesses.first())));
    }
    report.nd_oracle_used = true;
    stats.colors = nd.colors;
    stats.balls = bp.r_set.len();
    let ball_index: BTreeMap<Vertex, usize> = bg.rulers.iter().enumerate().map(|(i, &r)| (r, i)).collect();
    let mut cluster_of_ball = vec![0usize; bg.rulers.len()];
    for (ci, c) in nd.clusters.iter().enumerate() {
        for &b in &c.members {
            cluster_of_ball[b] = ci;
        }
    }
    let cluster_of: Vec<Option<usize>> =
        (0..n).map(|v| bp.owner[v].map(|r| cluster_of_ball[ball_index[&r]])).collect();
    let cluster_members: Vec<Vec<Vertex>> = {
        let mut cm = vec![Vec::new(); nd.clusters.len()];
        for v in 0..n {
            if let Some(c) = cluster_of[v] {
                cm[c].push(v);
            }
        }
        cm
    };
    // Same-color clusters must be more than k apart in G.
    for (ci, c) in nd.clusters.iter().enumerate() {
        let near = g.bfs_multi(&cluster_members[ci], k);
        for v in 0..n {
            if let Some(cj) = cluster_of[v] {
                if cj != ci && nd.clusters[cj].color == c.color && near[v].is_some() {
                    return Err(Error::Invariant(format!("same-color clusters {ci} and {cj} within {k} hops")));
                }
            }
        }
    }
    let (ids, palette) = compact_ids(g, domain, 2 * k);
    let id_bits = bits_for(palette - 1);
    let instances = (log_n(n).div_ceil(ceil_log2(palette).max(1))).max(1) as usize;
    let steps = params.c_post * ceil_log2(palette).max(1);
    stats.palette = palette;
    stats.instances = instances;
    stats.post_steps = steps;

    let mut decided = vec![false; n];
    let mut joined_all = Vec::new();
    for color in 0..nd.colors {
        let mut pending: Vec<usize> = (0..nd.clusters.len()).filter(|&c| nd.clusters[c].color == color).collect();
        let mut color_report = RoundReport::default();
        let mut new_joined = vec![false; n];
        let mut attempt = 0;
        while !pending.is_empty() {
            if attempt > params.max_retries {
                return Err(Error::OracleFailure(format!(
                    "color {color}: every execution failed in {} clusters after {} retries",
                    pending.len(),
                    params.max_retries
                )));
            }
            let part: Vec<bool> = (0..n)
                .map(|v| domain[v] && !decided[v] && cluster_of[v].is_some_and(|c| pending.contains(&c)))
                .collect();
            let salt = key(&[0x5eeb, color as u64, attempt as u64]);
            let (res, _, r) =
                beeping_mis_multi(g, k, &part, steps, BeepIds::Compact { ids: &ids, bits: id_bits }, instances, salt, cfg)?;
            color_report.then(&r);
            // Success bits per instance go up each cluster's tree and the choice comes back down.
            let height = pending
                .iter()
                .map(|&c| {
                    let d = g.bfs_multi(&cluster_members[c][..1], u32::MAX);
                    cluster_members[c].iter().filter_map(|&v| d[v]).max().unwrap_or(0)
                })
                .max()
                .unwrap_or(0);
            color_report.charge(2 * height as u64 + 2);
            pending.retain(|&c| {
                let ok = (0..instances).find(|&i| cluster_members[c].iter().all(|&v| !part[v] || !res[i].1[v]));
                match ok {
                    Some(i) => {
                        for &v in &cluster_members[c] {
                            if part[v] && res[i].0[v] {
                                new_joined[v] = true;
                            }
                        }
                        false
                    }
                    None => true,
                }
            });
            if !pending.is_empty() {
                attempt += 1;
                stats.retries += 1;
            }
        }
        let (heard, r) = beep(g, &new_joined, k, cfg)?;
        color_report.then(&r);
        for v in 0..n {
            if heard[v].is_some() {
                decided[v] = true;
            }
            if new_joined[v] {
                joined_all.push(v);
            }
        }
        report.then(&color_report);
    }
    joined_all.sort_unstable();
    Ok((joined_all, report))
}

/// MIS of `G^k`: preshattering, then balls around a `(5k+1)`-independent
/// ruling set of the undecided nodes, a decomposition of the distance-`k`
/// ball graph, and a color sweep with parallel executions.
pub fn mis_gk(g: &Graph, k: u32, params: &MisParams, cfg: &SimConfig) -> Result<MisResult> {
    if k < 1 {
        return Err(Error::InvalidParameter("k < 1".into()));
    }
    let pre = preshatter(g, k, params.s_conn, params.c_pre, cfg)?;
    let mut stats = MisStats {
        preshatter_steps: pre.steps,
        undecided_after_preshatter: pre.undecided.len(),
        largest_component: pre.components.iter().map(Vec::len).max().unwrap_or(0),
        ..MisStats::default()
    };
    let mut report = pre.report.clone();
    let mut set = pre.independent.clone();
    if !pre.undecided.is_empty() {
        let domain = crate::graph::mask(g.n(), &pre.undecided);
        let (rs, bp) = ball_ruling_set(g, 5 * k, &domain, cfg)?;
        report.then(&rs.report);
        let (joined, r) = finish_with_balls(g, k, &domain, &bp, params, cfg, &mut stats)?;
        report.then(&r);
        set.extend(joined);
        set.sort_unstable();
    }
    if !check_power_mis(g, k, &set) {
        return Err(Error::OracleFailure(format!("output is not an MIS of G^{k}")));
    }
    Ok(MisResult { set, stats, report })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ShatterApproach {
    /// Shatter twice, then closest-ruler balls per component.
    TwoPhase,
    /// One shattering run and knock-out balls, as for `G^k` with `k = 1`.
    OnePhase,
}

/// MIS of `G` by shattering.
pub fn mis_g_shattering(g: &Graph, approach: ShatterApproach, params: &MisParams, cfg: &SimConfig) -> Result<MisResult> {
    match approach {
        ShatterApproach::OnePhase => mis_gk(g, 1, params, cfg),
        ShatterApproach::TwoPhase => two_phase(g, params, cfg),
    }
}

fn two_phase(g: &Graph, params: &MisParams, cfg: &SimConfig) -> Result<MisResult> {
    let n = g.n();
    let steps = preshatter_steps(g, 1, 1, params.c_pre);
    let first = beeping_mis_gk(g, 1, &vec![true; n], steps, cfg)?;
    let mut report = first.report.clone();
    let mut set = first.independent.clone();
    let mut stats = MisStats {
        preshatter_steps: first.steps,
        undecided_after_preshatter: first.undecided.len(),
        largest_component: first.components.iter().map(Vec::len).max().unwrap_or(0),
        ..MisStats::default()
    };
    if !first.undecided.is_empty() {
        // Every component of the undecided nodes shatters again on its own.
        let (h1, map1) = g.induced_subgraph(&first.undecided);
        let second = beeping_mis_gk(&h1, 1, &vec![true; h1.n()], steps, cfg)?;
        report.then(&second.report);
        set.extend(second.independent.iter().map(|&v| map1[v]));
        if !second.undecided.is_empty() {
            let rest: Vec<Vertex> = second.undecided.iter().map(|&v| map1[v]).collect();
            let (h, map) = g.induced_subgraph(&rest);
            let all = vec![true; h.n()];
            let col = DistanceColoring::from_ids(&h, 4);
            let rs = awerbuch_on(&h, 4, &all, &col, 2, true, cfg)?;
            report.then(&rs.result.report);
            // Closest ruler, smallest ID on ties, by a flood inside the component.
            let owners: Vec<Option<u64>> = (0..h.n()).map(|v| rs.result.set.binary_search(&v).ok().map(|_| h.id(v))).collect();
            let (flood, r) = owner_flood(&h, &owners, rs.result.beta, cfg)?;
            report.then(&r);
            let owner: Vec<Option<Vertex>> = flood.iter().map(|a| a.map(|(o, _, _)| h.vertex_of(o).unwrap())).collect();
            let mut steiner: BTreeMap<Vertex, BTreeSet<(Vertex, Vertex)>> = BTreeMap::new();
            for (v, a) in flood.iter().enumerate() {
                if let Some((o, _, Some(p))) = a {
                    steiner.entry(h.vertex_of(*o).unwrap()).or_default().insert((v, *p));
                }
            }
            let bp = BallPartition::from_owner(&h, owner, steiner, 1);
            bp.verify(&h, &all)?;
            let (joined, r) = finish_with_balls(&h, 1, &all, &bp, params, cfg, &mut stats)?;
            report.then(&r);
            set.extend(joined.iter().map(|&v| map[v]));
        }
        set.sort_unstable();
    }
    if !check_power_mis(g, 1, &set) {
        return Err(Error::OracleFailure("output is not an MIS of G".into()));
    }
    Ok(MisResult { set, stats, report })
}

/// Independence safety: `set` is independent in `G^k` and no member of
/// `undecided` is within `k` of it.
pub fn check_shatter_outcome(g: &Graph, k: u32, participants: &[Vertex], out: &ShatterOutcome) -> bool {
    let near = g.bfs_multi(&out.independent, k);
    let in_i = crate::graph::mask(g.n(), &out.independent);
    let indep = out.independent.iter().all(|&v| {
        let d = g.bfs_multi(&[v], k);
        (0..g.n()).all(|w| w == v || !in_i[w] || d[w].is_none())
    });
    let decided: BTreeSet<Vertex> = participants.iter().copied().filter(|&v| near[v].is_some()).collect();
    let und: BTreeSet<Vertex> = out.undecided.iter().copied().collect();
    indep && participants.iter().all(|v| decided.contains(v) != und.contains(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate, GraphKind};

    fn cfg(g: &Graph, seed: u64) -> SimConfig {
        SimConfig::for_n(g.n(), seed)
    }

    #[test]
    fn luby_small_cases() {
        let k4 = generate(GraphKind::Complete { n: 4 }, 1).unwrap();
        let r = luby_gk(&k4, 1, &[true; 4], 3, &cfg(&k4, 1)).unwrap();
        assert_eq!(r.set.len(), 1);
        let one = generate(GraphKind::Empty { n: 1 }, 1).unwrap();
        assert_eq!(luby_gk(&one, 1, &[true], 3, &cfg(&one, 1)).unwrap().set, vec![0]);
        let p5 = generate(GraphKind::Path { n: 5 }, 1).unwrap();
        for seed in 0..5 {
            let r = luby_gk(&p5, 2, &[true; 5], 3, &cfg(&p5, seed)).unwrap();
            assert!(check_power_mis(&p5, 2, &r.set));
        }
    }

    #[test]
    fn luby_on_powers() {
        for k in 1..=3 {
            let g = generate(GraphKind::Gnp { n: 100, p: 0.04 }, k as u64).unwrap();
            let r = luby_gk(&g, k, &[true; 100], 3, &cfg(&g, 2)).unwrap();
            assert!(check_power_mis(&g, k, &r.set));
            assert!(r.report.violations.is_empty());
        }
    }

    #[test]
    fn two_tuple_relay_on_p3() {
        // Both endpoints of P3 beep with k = 2; the middle relays both tuples.
        let g = generate(GraphKind::Path { n: 3 }, 1).unwrap();
        let (out, _) = run_chunked(&g, &cfg(&g, 1), 40, |v, view| BeepStep {
            k: 2,
            id: view.id,
            id_bits: g.id_bits(),
            hop_bits: 2,
            lanes: vec![Lane { marked: v != 1, ..Lane::default() }],
            round: 0,
        })
        .unwrap();
        assert!(out[0][0].0 && out[2][0].0);
        assert!(!out[0][0].1 && !out[2][0].1);
    }

    #[test]
    fn beeping_never_joins_neighbors() {
        let g = generate(GraphKind::Path { n: 2 }, 1).unwrap();
        for seed in 0..20 {
            let out = beeping_mis_gk(&g, 1, &[true; 2], 30, &cfg(&g, seed)).unwrap();
            assert!(out.independent.len() <= 1);
        }
        let iso = generate(GraphKind::Empty { n: 3 }, 1).unwrap();
        let out = preshatter(&iso, 1, 8, 8, &cfg(&iso, 1)).unwrap();
        assert_eq!(out.independent, vec![0, 1, 2]);
        assert!(out.undecided.is_empty());
        assert!(out.steps < 20);
    }

    #[test]
    fn beeping_outcomes_are_safe() {
        for k in 1..=3 {
            let g = generate(GraphKind::Gnp { n: 80, p: 0.05 }, 9).unwrap();
            let all: Vec<Vertex> = (0..80).collect();
            let out = beeping_mis_gk(&g, k, &[true; 80], 4, &cfg(&g, 3)).unwrap();
            assert!(check_shatter_outcome(&g, k, &all, &out));
        }
    }

    #[test]
    fn balls_and_ball_graph() {
        let g = generate(GraphKind::Path { n: 7 }, 1).unwrap();
        let dom: Vec<bool> = (0..7).map(|v| (1..6).contains(&v)).collect();
        let (rs, bp) = ball_ruling_set(&g, 2, &dom, &cfg(&g, 1)).unwrap();
        assert!(bp.verify(&g, &dom).is_ok());
        assert_eq!(rs.set, bp.r_set);
        let single = crate::graph::mask(7, &[3]);
        let (_, bp1) = ball_ruling_set(&g, 2, &single, &cfg(&g, 1)).unwrap();
        assert_eq!(bp1.balls[&3], vec![3]);
        let far = crate::graph::mask(7, &[0, 3]);
        let (_, bp2) = ball_ruling_set(&g, 2, &far, &cfg(&g, 1)).unwrap();
        assert_eq!(bp2.r_set, vec![0, 3]);
        let bgr = build_distance_k_ballgraph(&g, &bp2, 3, &cfg(&g, 1)).unwrap();
        assert!(bgr.verify(&g, &bp2, 3).is_ok());
        assert_eq!(bgr.graph.m(), 1);
    }

    #[test]
    fn mis_of_powers() {
        for k in 1..=3 {
            for seed in 0..3 {
                let g = generate(GraphKind::Gnp { n: 96, p: 0.05 }, seed).unwrap();
                let p = MisParams { c_pre: 1, s_conn: 1, ..MisParams::default() };
                let r = mis_gk(&g, k, &p, &cfg(&g, seed)).unwrap();
                assert!(check_power_mis(&g, k, &r.set));
            }
        }
        let e = generate(GraphKind::Empty { n: 6 }, 1).unwrap();
        assert_eq!(mis_gk(&e, 2, &MisParams::default(), &cfg(&e, 1)).unwrap().set.len(), 6);
    }

    #[test]
    fn short_preshatter_exercises_balls() {
        let g = generate(GraphKind::Gnp { n: 120, p: 0.08 }, 4).unwrap();
        let p = MisParams { c_pre: 0, ..MisParams::default() };
        let r = mis_gk(&g, 2, &p, &cfg(&g, 4)).unwrap();
        assert_eq!(r.stats.undecided_after_preshatter, 120);
        assert!(r.stats.balls >= 1);
        assert!(check_power_mis(&g, 2, &r.set));
    }

    #[test]
    fn both_approaches_for_g() {
        let g = generate(GraphKind::Gnp { n: 256, p: 0.03 }, 5).unwrap();
        for a in [ShatterApproach::TwoPhase, ShatterApproach::OnePhase] {
            let r = mis_g_shattering(&g, a, &MisParams::default(), &cfg(&g, 5)).unwrap();
            assert!(check_power_mis(&g, 1, &r.set));
        }
        let short = MisParams { c_pre: 0, ..MisParams::default() };
        let r = mis_g_shattering(&g, ShatterApproach::TwoPhase, &short, &cfg(&g, 5)).unwrap();
        assert!(check_power_mis(&g, 1, &r.set));
        let m: Vec<(usize, usize)> = (0..8).map(|i| (2 * i, 2 * i + 1)).collect();
        let pm = Graph::from_edges(16, &m, 1).unwrap();
        let r = mis_g_shattering(&pm, ShatterApproach::TwoPhase, &MisParams::default(), &cfg(&pm, 1)).unwrap();
        assert_eq!(r.set.len(), 8);
    }
}
