//! Synchronous message-passing engine with a per-edge, per-direction,
//! per-round bit budget.
//!
//! A node program sees only its [`LocalView`]: its own identifier, the
//! identifiers of its neighbors in the communication graph, and the globals
//! `n`, `Δ` and the identifier width. Anything about a power graph has to be
//! learned by sending messages.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::mem;

use crate::graph::{Graph, Vertex};
use crate::rng::Rng;
use crate::{bits_for, log_n, Error, Result};

/// A bit string, packed LSB-first into 64-bit words.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Message {
    words: Vec<u64>,
    len: u32,
}

impl Message {
    pub fn new() -> Self {
        Message::default()
    }

    pub fn bit_len(&self) -> u32 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Appends the low `width` bits of `value`.
    pub fn push(&mut self, value: u64, width: u32) {
        debug_assert!(width <= 64);
        debug_assert!(width == 64 || value >> width == 0, "value {value} wider than {width} bits");
        let mut value = value;
        let mut width = width;
        while width > 0 {
            let off = self.len % 64;
            if off == 0 {
                self.words.push(0);
            }
            let take = width.min(64 - off);
            let part = if take == 64 { value } else { value & ((1u64 << take) - 1) };
            *self.words.last_mut().unwrap() |= part << off;
            value = if take == 64 { 0 } else { value >> take };
            width -= take;
            self.len += take;
        }
    }

    pub fn push_bool(&mut self, b: bool) {
        self.push(b as u64, 1);
    }

    pub fn append(&mut self, other: &Message) {
        let mut r = other.reader();
        while r.remaining() > 0 {
            let w = r.remaining().min(64);
            self.push(r.read(w).unwrap(), w);
        }
    }

    /// Bits `start..start + len` as a new message.
    pub fn slice(&self, start: u32, len: u32) -> Message {
        let mut r = self.reader();
        r.skip(start);
        let mut out = Message::new();
        let mut left = len.min(self.len.saturating_sub(start));
        while left > 0 {
            let w = left.min(64);
            out.push(r.read(w).unwrap(), w);
            left -= w;
        }
        out
    }

    pub fn reader(&self) -> BitReader<'_> {
        BitReader { msg: self, pos: 0 }
    }

    pub fn from_bits(value: u64, width: u32) -> Message {
        let mut m = Message::new();
        m.push(value, width);
        m
    }
}

pub struct BitReader<'a> {
    msg: &'a Message,
    pos: u32,
}

impl BitReader<'_> {
    pub fn remaining(&self) -> u32 {
        self.msg.len - self.pos
    }

    pub fn read(&mut self, width: u32) -> Option<u64> {
        if width > self.remaining() {
            return None;
        }
        let mut out = 0u64;
        let mut got = 0;
        while got < width {
            let word = self.msg.words[(self.pos / 64) as usize];
            let off = self.pos % 64;
            let take = (width - got).min(64 - off);
            let part = if take == 64 { word } else { (word >> off) & ((1u64 << take) - 1) };
            out |= part << got;
            got += take;
            self.pos += take;
        }
        Some(out)
    }

    pub fn read_bool(&mut self) -> Option<bool> {
        self.read(1).map(|b| b == 1)
    }

    pub fn skip(&mut self, bits: u32) {
        self.pos = (self.pos + bits).min(self.msg.len);
    }
}

/// What a node knows before the first round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalView {
    pub id: u64,
    /// Sorted identifiers of the neighbors in the communication graph.
    pub neighbor_ids: Vec<u64>,
    pub n: usize,
    pub max_degree: usize,
    pub id_bits: u32,
    pub bandwidth_bits: u32,
    /// Only present when the run was configured to expose it.
    pub diameter: Option<u32>,
}

impl LocalView {
    pub fn degree(&self) -> usize {
        self.neighbor_ids.len()
    }

    pub fn is_neighbor(&self, id: u64) -> bool {
        self.neighbor_ids.binary_search(&id).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimConfig {
    pub bandwidth_bits: u32,
    pub rng_seed: u64,
    pub round_limit: u64,
    pub trace: bool,
    pub expose_diameter: bool,
}

pub const DEFAULT_BANDWIDTH_FACTOR: u32 = 4;

impl SimConfig {
    /// `4 * ceil(log2 n)` bits per edge per direction per round.
    pub fn for_n(n: usize, seed: u64) -> SimConfig {
        SimConfig {
            bandwidth_bits: DEFAULT_BANDWIDTH_FACTOR * log_n(n),
            rng_seed: seed,
            round_limit: 1_000_000,
            trace: false,
            expose_diameter: false,
        }
    }

    pub fn with_seed(&self, seed: u64) -> SimConfig {
        SimConfig { rng_seed: seed, ..self.clone() }
    }

    fn validate(&self) -> Result<()> {
        if self.bandwidth_bits == 0 || self.round_limit == 0 {
            return Err(Error::InvalidParameter(format!(
                "bandwidth_bits = {}, round_limit = {}",
                self.bandwidth_bits, self.round_limit
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TraceEntry {
    pub round: u64,
    pub from: u64,
    pub to: u64,
    pub bits: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RoundReport {
    /// Last round in which any message was sent.
    pub rounds_used: u64,
    pub max_bits_on_edge: u32,
    pub total_bits: u64,
    pub messages: u64,
    pub violations: Vec<String>,
    /// Some rounds were spent by a step computed from the global view and not charged.
    pub nd_oracle_used: bool,
    /// A pipelined primitive ran with fewer than one bit per stream per round.
    pub degraded_pipelining: bool,
    pub trace: Vec<TraceEntry>,
}

impl RoundReport {
    /// Accounts for `other` running after `self`.
    pub fn then(&mut self, other: &RoundReport) {
        let offset = self.rounds_used;
        self.trace.extend(other.trace.iter().map(|t| TraceEntry { round: t.round + offset, ..t.clone() }));
        self.rounds_used += other.rounds_used;
        self.absorb(other);
    }

    /// Accounts for `other` running at the same time as `self` on disjoint edges.
    pub fn alongside(&mut self, other: &RoundReport) {
        self.trace.extend(other.trace.iter().cloned());
        self.rounds_used = self.rounds_used.max(other.rounds_used);
        self.absorb(other);
    }

    /// Charges rounds spent outside the engine, such as local bookkeeping phases.
    pub fn charge(&mut self, rounds: u64) {
        self.rounds_used += rounds;
    }

    fn absorb(&mut self, other: &RoundReport) {
        self.max_bits_on_edge = self.max_bits_on_edge.max(other.max_bits_on_edge);
        self.total_bits += other.total_bits;
        self.messages += other.messages;
        self.violations.extend(other.violations.iter().cloned());
        self.nd_oracle_used |= other.nd_oracle_used;
        self.degraded_pipelining |= other.degraded_pipelining;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Incoming {
    pub from: u64,
    pub msg: Message,
}

/// Per-node handle for one round.
pub struct RoundCtx<'a> {
    round: u64,
    view: &'a LocalView,
    rng: Rng,
    outbox: &'a mut Vec<(u64, Message)>,
}

impl<'a> RoundCtx<'a> {
    pub(crate) fn new(round: u64, view: &'a LocalView, seed: u64, outbox: &'a mut Vec<(u64, Message)>) -> Self {
        RoundCtx { round, view, rng: Rng::for_node(seed, view.id, round), outbox }
    }

    /// 1-based round number.
    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn view(&self) -> &LocalView {
        self.view
    }

    pub fn rng(&mut self) -> &mut Rng {
        &mut self.rng
    }

    /// Queues `msg` for neighbor `to`. Several sends to the same neighbor in
    /// one round are concatenated and count against one budget.
    pub fn send(&mut self, to: u64, msg: Message) {
        self.outbox.push((to, msg));
    }

    pub fn send_all(&mut self, msg: &Message) {
        for &w in &self.view.neighbor_ids {
            self.outbox.push((w, msg.clone()));
        }
    }
}

pub trait NodeProgram {
    type Output;

    fn on_round(&mut self, ctx: &mut RoundCtx<'_>, inbox: &[Incoming]);

    /// A halted node is skipped until a message arrives for it.
    fn halted(&self) -> bool {
        false
    }

    fn finish(self) -> Self::Output;
}

pub fn local_views(g: &Graph, cfg: &SimConfig) -> Vec<LocalView> {
    let diameter = if cfg.expose_diameter { g.diameter() } else { None };
    let max_degree = g.max_degree();
    (0..g.n())
        .map(|v| {
            let mut neighbor_ids: Vec<u64> = g.neighbors(v).iter().map(|&w| g.id(w)).collect();
            neighbor_ids.sort_unstable();
            LocalView {
                id: g.id(v),
                neighbor_ids,
                n: g.n(),
                max_degree,
                id_bits: g.id_bits(),
                bandwidth_bits: cfg.bandwidth_bits,
                diameter,
            }
        })
        .collect()
}

/// Runs one program instance per vertex until every node has halted and no
/// message is in flight.
pub fn run<P, F>(g: &Graph, cfg: &SimConfig, mut factory: F) -> Result<(Vec<P::Output>, RoundReport)>
where
    P: NodeProgram,
    F: FnMut(Vertex, &LocalView) -> P,
{
    cfg.validate()?;
    let n = g.n();
    let views = local_views(g, cfg);
    let mut nodes: Vec<P> = (0..n).map(|v| factory(v, &views[v])).collect();
    let mut inboxes: Vec<Vec<Incoming>> = vec![Vec::new(); n];
    let mut report = RoundReport::default();
    let mut outbox = Vec::new();
    let mut round = 0u64;
    loop {
        let pending = inboxes.iter().any(|b| !b.is_empty());
        if !pending && nodes.iter().all(|p| p.halted()) {
            break;
        }
        if round >= cfg.round_limit {
            return Err(Error::Timeout(alloc::boxed::Box::new(report)));
        }
        round += 1;
        let mut next: Vec<Vec<Incoming>> = vec![Vec::new(); n];
        let mut sent_any = false;
        for v in 0..n {
            let inbox = mem::take(&mut inboxes[v]);
            if nodes[v].halted() && inbox.is_empty() {
                continue;
            }
            outbox.clear();
            {
                let mut ctx = RoundCtx::new(round, &views[v], cfg.rng_seed, &mut outbox);
                nodes[v].on_round(&mut ctx, &inbox);
            }
            if outbox.is_empty() {
                continue;
            }
            let mut per_dest: BTreeMap<u64, Message> = BTreeMap::new();
            for (to, msg) in outbox.drain(..) {
                per_dest.entry(to).or_default().append(&msg);
            }
            for (to, msg) in per_dest {
                let w = match g.vertex_of(to) {
                    Some(w) if g.has_edge(v, w) => w,
                    _ => return Err(Error::InvalidDestination { from: g.id(v), to }),
                };
                let bits = msg.bit_len();
                sent_any = true;
                report.messages += 1;
                report.total_bits += bits as u64;
                report.max_bits_on_edge = report.max_bits_on_edge.max(bits);
                if cfg.trace {
                    report.trace.push(TraceEntry { round, from: g.id(v), to, bits });
                }
                if bits > cfg.bandwidth_bits {
                    report.violations.push(format!(
                        "round {round}: {} -> {to} carried {bits} bits, budget {}",
                        g.id(v),
                        cfg.bandwidth_bits
                    ));
                }
                next[w].push(Incoming { from: g.id(v), msg });
            }
        }
        if sent_any {
            report.rounds_used = round;
        }
        if !report.violations.is_empty() {
            return Err(Error::BandwidthViolation(alloc::boxed::Box::new(report)));
        }
        for b in &mut next {
            b.sort_by_key(|m| m.from);
        }
        inboxes = next;
    }
    Ok((nodes.into_iter().map(P::finish).collect(), report))
}

/// Runs a program whose messages may be longer than the bandwidth. Each
/// logical round takes `frame` physical rounds; a logical message is cut into
/// bandwidth-sized chunks sent back to back, and the receiver concatenates
/// whatever arrives from a sender during the frame.
pub struct Chunked<P> {
    inner: P,
    view: LocalView,
    frame: u64,
    bandwidth: u32,
    seed: u64,
    outgoing: Vec<(u64, Message)>,
    assembling: BTreeMap<u64, Message>,
}

impl<P: NodeProgram> Chunked<P> {
    pub fn new(inner: P, view: &LocalView, frame: u64, seed: u64) -> Self {
        let frame = frame.max(1);
        let mut logical = view.clone();
        logical.bandwidth_bits = view.bandwidth_bits.saturating_mul(frame as u32);
        Chunked {
            inner,
            view: logical,
            frame,
            bandwidth: view.bandwidth_bits,
            seed,
            outgoing: Vec::new(),
            assembling: BTreeMap::new(),
        }
    }
}

/// Physical rounds per logical round for messages of up to `max_bits` bits.
pub fn frame_for(max_bits: u32, bandwidth: u32) -> u64 {
    (max_bits.max(1) as u64).div_ceil(bandwidth as u64)
}

impl<P: NodeProgram> NodeProgram for Chunked<P> {
    type Output = P::Output;

    fn on_round(&mut self, ctx: &mut RoundCtx<'_>, inbox: &[Incoming]) {
        for m in inbox {
            self.assembling.entry(m.from).or_default().append(&m.msg);
        }
        let phase = (ctx.round() - 1) % self.frame;
        if phase == 0 {
            let logical_round = (ctx.round() - 1) / self.frame + 1;
            let ready: Vec<Incoming> =
                mem::take(&mut self.assembling).into_iter().map(|(from, msg)| Incoming { from, msg }).collect();
            if !self.inner.halted() || !ready.is_empty() {
                let mut out = Vec::new();
                {
                    let mut inner_ctx = RoundCtx::new(logical_round, &self.view, self.seed, &mut out);
                    self.inner.on_round(&mut inner_ctx, &ready);
                }
                let mut per_dest: BTreeMap<u64, Message> = BTreeMap::new();
                for (to, msg) in out {
                    per_dest.entry(to).or_default().append(&msg);
                }
                self.outgoing = per_dest.into_iter().collect();
            }
        }
        if self.outgoing.is_empty() {
            return;
        }
        let last = phase + 1 == self.frame;
        let bw = self.bandwidth;
        for (to, msg) in &self.outgoing {
            let start = phase as u32 * bw;
            if start >= msg.bit_len() {
                continue;
            }
            // Anything that does not fit in the frame goes out with the last
            // chunk, where the engine flags it as a budget violation.
            let len = if last { msg.bit_len() - start } else { bw };
            ctx.send(*to, msg.slice(start, len));
        }
        if last {
            self.outgoing.clear();
        }
    }

    fn halted(&self) -> bool {
        self.inner.halted() && self.outgoing.is_empty() && self.assembling.is_empty()
    }

    fn finish(self) -> P::Output {
        self.inner.finish()
    }
}

/// Runs `factory`'s programs with logical messages of up to `max_bits` bits.
pub fn run_chunked<P, F>(
    g: &Graph,
    cfg: &SimConfig,
    max_bits: u32,
    mut factory: F,
) -> Result<(Vec<P::Output>, RoundReport)>
where
    P: NodeProgram,
    F: FnMut(Vertex, &LocalView) -> P,
{
    let frame = frame_for(max_bits, cfg.bandwidth_bits);
    let seed = cfg.rng_seed;
    run(g, cfg, |v, view| Chunked::new(factory(v, view), view, frame, seed))
}

/// Spanning forest with one BFS tree per connected component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanningForest {
    pub roots: Vec<Vertex>,
    pub root_of: Vec<Vertex>,
    pub parent: Vec<Option<Vertex>>,
    pub children: Vec<Vec<Vertex>>,
    pub depth: Vec<u32>,
}

impl SpanningForest {
    pub fn height(&self) -> u32 {
        self.depth.iter().copied().max().unwrap_or(0)
    }
}

struct LeaderNode {
    id: u64,
    id_bits: u32,
    root: u64,
    parent: Option<u64>,
    dist: u32,
    children: Vec<u64>,
    started: bool,
}

const TAG_EXPLORE: u64 = 0;
const TAG_CHILD: u64 = 1;

impl NodeProgram for LeaderNode {
    type Output = (u64, Option<u64>, u32, Vec<u64>);

    fn on_round(&mut self, ctx: &mut RoundCtx<'_>, inbox: &[Incoming]) {
        let mut improved = !self.started;
        self.started = true;
        for m in inbox {
            let mut r = m.msg.reader();
            let tag = r.read(1).unwrap();
            let root = r.read(self.id_bits).unwrap();
            if tag == TAG_CHILD {
                if root == self.root {
                    self.children.push(m.from);
                }
                continue;
            }
            // Inbox is sorted by sender, so the first best offer has the smallest sender id.
            if root < self.root {
                self.root = root;
                self.parent = Some(m.from);
                self.dist = (ctx.round() - 1) as u32;
                self.children.clear();
                improved = true;
            }
        }
        if !improved {
            return;
        }
        let mut explore = Message::from_bits(TAG_EXPLORE, 1);
        explore.push(self.root, self.id_bits);
        let neighbors = ctx.view().neighbor_ids.clone();
        for w in neighbors {
            if Some(w) == self.parent {
                let mut child = Message::from_bits(TAG_CHILD, 1);
                child.push(self.root, self.id_bits);
                ctx.send(w, child);
            } else {
                ctx.send(w, explore.clone());
            }
        }
    }

    fn halted(&self) -> bool {
        self.started
    }

    fn finish(self) -> Self::Output {
        let _ = self.id;
        let mut c = self.children;
        c.sort_unstable();
        c.dedup();
        (self.root, self.parent, self.dist, c)
    }
}

/// Elects the minimum-identifier node of each component and builds a BFS
/// tree from it by flooding. Without `per_component`, a disconnected graph is
/// an error.
pub fn leader_spanning_tree(g: &Graph, cfg: &SimConfig, per_component: bool) -> Result<(SpanningForest, RoundReport)> {
    let (out, report) = run(g, cfg, |_, view| LeaderNode {
        id: view.id,
        id_bits: view.id_bits,
        root: view.id,
        parent: None,
        dist: 0,
        children: Vec::new(),
        started: false,
    })?;
    let n = g.n();
    let mut forest = SpanningForest {
        roots: Vec::new(),
        root_of: vec![0; n],
        parent: vec![None; n],
        children: vec![Vec::new(); n],
        depth: vec![0; n],
    };
    for (v, (root, parent, dist, children)) in out.into_iter().enumerate() {
        forest.root_of[v] = g.vertex_of(root).expect("root id exists");
        forest.parent[v] = parent.map(|p| g.vertex_of(p).unwrap());
        forest.depth[v] = dist;
        let mut ch: Vec<Vertex> = children.into_iter().map(|c| g.vertex_of(c).unwrap()).collect();
        ch.sort_unstable_by_key(|&c| g.id(c));
        forest.children[v] = ch;
        if parent.is_none() {
            forest.roots.push(v);
        }
    }
    if !per_component && forest.roots.len() > 1 {
        return Err(Error::Disconnected { components: forest.roots.len() });
    }
    Ok((forest, report))
}

/// Bits for a hop counter in `0..=max`.
pub fn counter_bits(max: u64) -> u32 {
    bits_for(max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{bfs_tree, generate, GraphKind};

    struct SendIdOnce {
        learned: Vec<u64>,
        done: bool,
    }

    impl NodeProgram for SendIdOnce {
        type Output = Vec<u64>;
        fn on_round(&mut self, ctx: &mut RoundCtx<'_>, inbox: &[Incoming]) {
            for m in inbox {
                self.learned.push(m.msg.reader().read(m.msg.bit_len()).unwrap());
            }
            if !self.done {
                let v = ctx.view();
                ctx.send_all(&Message::from_bits(v.id, v.id_bits));
                self.done = true;
            }
        }
        fn halted(&self) -> bool {
            self.done
        }
        fn finish(self) -> Vec<u64> {
            self.learned
        }
    }

    fn two_nodes() -> Graph {
        Graph::with_ids(2, &[(0, 1)], vec![1, 2], 3).unwrap()
    }

    #[test]
    fn id_exchange_takes_one_round() {
        let g = two_nodes();
        let cfg = SimConfig { bandwidth_bits: 3, ..SimConfig::for_n(2, 0) };
        let (out, rep) = run(&g, &cfg, |_, _| SendIdOnce { learned: vec![], done: false }).unwrap();
        assert_eq!(out, vec![vec![2], vec![1]]);
        assert_eq!(rep.rounds_used, 1);
        assert!(rep.violations.is_empty());
    }

    #[test]
    fn budget_is_enforced() {
        let g = two_nodes();
        let cfg = SimConfig { bandwidth_bits: 2, ..SimConfig::for_n(2, 0) };
        let err = run(&g, &cfg, |_, _| SendIdOnce { learned: vec![], done: false }).unwrap_err();
        match err {
            Error::BandwidthViolation(r) => assert_eq!(r.violations.len(), 2),
            e => panic!("unexpected {e:?}"),
        }
    }

    struct FloodBit {
        have: bool,
        sent: bool,
    }

    impl NodeProgram for FloodBit {
        type Output = bool;
        fn on_round(&mut self, ctx: &mut RoundCtx<'_>, inbox: &[Incoming]) {
            self.have |= !inbox.is_empty();
            if self.have && !self.sent {
                self.sent = true;
                let targets: Vec<u64> =
                    ctx.view().neighbor_ids.iter().copied().filter(|w| inbox.iter().all(|m| m.from != *w)).collect();
                for w in targets {
                    ctx.send(w, Message::from_bits(1, 1));
                }
            }
        }
        fn halted(&self) -> bool {
            !self.have || self.sent
        }
        fn finish(self) -> bool {
            self.have
        }
    }

    #[test]
    fn flood_on_p5_takes_diameter_rounds() {
        let g = generate(GraphKind::Path { n: 5 }, 3).unwrap();
        let cfg = SimConfig::for_n(5, 0);
        let (out, rep) = run(&g, &cfg, |v, _| FloodBit { have: v == 0, sent: false }).unwrap();
        assert!(out.iter().all(|&b| b));
        assert_eq!(rep.rounds_used, 4);
    }

    struct Echo {
        sent_at: Option<u64>,
        latency: Option<u64>,
        starter: bool,
    }

    impl NodeProgram for Echo {
        type Output = Option<u64>;
        fn on_round(&mut self, ctx: &mut RoundCtx<'_>, inbox: &[Incoming]) {
            if self.starter && self.sent_at.is_none() {
                self.sent_at = Some(ctx.round());
                ctx.send_all(&Message::from_bits(0, 1));
            }
            for m in inbox {
                if m.msg.reader().read(1) == Some(0) && !self.starter {
                    ctx.send(m.from, Message::from_bits(1, 1));
                } else if self.starter {
                    self.latency = Some(ctx.round() - self.sent_at.unwrap());
                }
            }
        }
        fn halted(&self) -> bool {
            !self.starter || self.sent_at.is_some()
        }
        fn finish(self) -> Option<u64> {
            self.latency
        }
    }

    #[test]
    fn messages_arrive_exactly_one_round_later() {
        let g = two_nodes();
        let cfg = SimConfig::for_n(2, 0);
        let (out, _) = run(&g, &cfg, |v, _| Echo { sent_at: None, latency: None, starter: v == 0 }).unwrap();
        assert_eq!(out[0], Some(2));
    }

    #[test]
    fn non_neighbor_send_is_rejected() {
        struct Bad;
        impl NodeProgram for Bad {
            type Output = ();
            fn on_round(&mut self, ctx: &mut RoundCtx<'_>, _: &[Incoming]) {
                ctx.send(ctx.view().id + 100, Message::from_bits(0, 1));
            }
            fn finish(self) {}
        }
        let g = two_nodes();
        assert!(matches!(run(&g, &SimConfig::for_n(2, 0), |_, _| Bad), Err(Error::InvalidDestination { .. })));
    }

    #[test]
    fn round_limit_times_out() {
        struct Forever;
        impl NodeProgram for Forever {
            type Output = ();
            fn on_round(&mut self, _: &mut RoundCtx<'_>, _: &[Incoming]) {}
            fn finish(self) {}
        }
        let g = two_nodes();
        let cfg = SimConfig { round_limit: 7, ..SimConfig::for_n(2, 0) };
        assert!(matches!(run(&g, &cfg, |_, _| Forever), Err(Error::Timeout(_))));
    }

    #[test]
    fn leader_tree_is_min_id_bfs_tree() {
        for seed in 0..5 {
            let g = generate(GraphKind::Gnp { n: 40, p: 0.12 }, seed).unwrap();
            let cfg = SimConfig::for_n(g.n(), 0);
            let per = leader_spanning_tree(&g, &cfg, true).unwrap().0;
            for comp in g.components() {
                let root = *comp.iter().min_by_key(|&&v| g.id(v)).unwrap();
                let t = bfs_tree(&g, root, u32::MAX);
                for &v in &comp {
                    assert_eq!(per.root_of[v], root);
                    assert_eq!(per.parent[v], t.parent[v]);
                    assert_eq!(Some(per.depth[v]), t.dist[v]);
                    let mut c = t.children[v].clone();
                    c.sort_unstable_by_key(|&c| g.id(c));
                    assert_eq!(per.children[v], c);
                }
            }
            if g.components().len() > 1 {
                assert!(leader_spanning_tree(&g, &cfg, false).is_err());
            }
        }
    }

    #[test]
    fn leader_on_small_graphs() {
        let g = Graph::with_ids(5, &[(0, 1), (1, 2), (2, 3), (3, 4)], vec![0, 4, 3, 2, 1], 4).unwrap();
        let (f, rep) = leader_spanning_tree(&g, &SimConfig::for_n(5, 0), false).unwrap();
        assert_eq!(f.roots, vec![0]);
        assert!(rep.rounds_used <= 9);
        let single = Graph::with_ids(1, &[], vec![0], 2).unwrap();
        let (f, rep) = leader_spanning_tree(&single, &SimConfig::for_n(1, 0), false).unwrap();
        assert_eq!(f.roots, vec![0]);
        assert_eq!(rep.rounds_used, 0);
        let c6 = Graph::with_ids(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0)], vec![5, 4, 3, 0, 2, 1], 4)
            .unwrap();
        assert_eq!(leader_spanning_tree(&c6, &SimConfig::for_n(6, 0), false).unwrap().0.roots, vec![3]);
    }

    #[test]
    fn chunked_delivers_long_messages() {
        struct Long {
            got: Vec<Message>,
            sent: bool,
        }
        impl NodeProgram for Long {
            type Output = Vec<Message>;
            fn on_round(&mut self, ctx: &mut RoundCtx<'_>, inbox: &[Incoming]) {
                self.got.extend(inbox.iter().map(|m| m.msg.clone()));
                if !self.sent {
                    self.sent = true;
                    let mut m = Message::new();
                    for i in 0..10 {
                        m.push(ctx.view().id * 100 + i, 10);
                    }
                    ctx.send_all(&m);
                }
            }
            fn halted(&self) -> bool {
                self.sent
            }
            fn finish(self) -> Vec<Message> {
                self.got
            }
        }
        let g = two_nodes();
        let cfg = SimConfig { bandwidth_bits: 8, ..SimConfig::for_n(2, 0) };
        let (out, rep) = run_chunked(&g, &cfg, 100, |_, _| Long { got: vec![], sent: false }).unwrap();
        assert_eq!(rep.rounds_used, 13);
        assert!(rep.max_bits_on_edge <= 8);
        let mut r = out[0][0].reader();
        assert_eq!(r.read(10), Some(200));
        assert_eq!(out[0][0].bit_len(), 100);
    }

    #[test]
    fn message_bits_round_trip() {
        let mut m = Message::new();
        m.push(5, 3);
        m.push(u64::MAX, 64);
        m.push(0, 7);
        m.push(1, 1);
        let mut r = m.reader();
        assert_eq!(r.read(3), Some(5));
        assert_eq!(r.read(64), Some(u64::MAX));
        assert_eq!(r.read(7), Some(0));
        assert_eq!(r.read(1), Some(1));
        assert_eq!(r.read(1), None);
        assert_eq!(m.slice(3, 64).reader().read(64), Some(u64::MAX));
    }
}
