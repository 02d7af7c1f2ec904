//! Communication on sparse subsets of power graphs: learning identifiers one
//! hop further, broadcasts down per-node BFS trees, addressed messages between
//! nearby members, convergecasts, and running a whole program on `G^s[Q]`.
//!
//! Every primitive is a node program on the communication graph `G`; trees
//! are known only as per-node parent/children links.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::graph::{Graph, Vertex};
use crate::runtime::{
    leader_spanning_tree, run, run_chunked, Incoming, LocalView, Message, NodeProgram, RoundCtx, RoundReport,
    SimConfig, SpanningForest,
};
use crate::{bits_for, Error, Result};

/// One node's position in one tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeLink {
    pub parent: Option<u64>,
    /// Sorted identifiers.
    pub children: Vec<u64>,
    pub depth: u32,
}

/// Per vertex: tree identifier (usually the root's ID) to link.
pub type Links = Vec<BTreeMap<u64, TreeLink>>;

/// Links of a spanning forest, one tree per component named by its root's ID.
pub fn forest_links(g: &Graph, f: &SpanningForest) -> Links {
    (0..g.n())
        .map(|v| {
            let mut m = BTreeMap::new();
            let mut children: Vec<u64> = f.children[v].iter().map(|&c| g.id(c)).collect();
            children.sort_unstable();
            m.insert(
                g.id(f.root_of[v]),
                TreeLink { parent: f.parent[v].map(|p| g.id(p)), children, depth: f.depth[v] },
            );
            m
        })
        .collect()
}

/// Bits per stream per round and rounds per frame for `streams` streams
/// sharing one directed edge. With fewer bandwidth bits than streams, each
/// stream gets one bit every `frame` rounds.
pub fn slot_plan(bandwidth: u32, streams: usize) -> (u32, u64, bool) {
    let p = streams.max(1) as u64;
    let bw = bandwidth as u64;
    if bw >= p {
        ((bw / p) as u32, 1, false)
    } else {
        (1, p.div_ceil(bw), true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Phase `h` moves data from depth `h-1` to depth `h`.
    Down,
    /// Phase `h` moves data from depth `h` to depth `h-1`, deepest first.
    Up,
}

/// Static parameters of a hop-phased tree streaming run. Every stream is a
/// count prefix followed by that many fixed-width items.
#[derive(Debug, Clone, Copy)]
pub struct StreamPlan {
    pub item_bits: u32,
    pub max_items: usize,
    /// Upper bound on the streams sharing one directed edge in one phase.
    pub streams_per_edge: usize,
    pub height: u32,
    pub direction: Direction,
}

impl StreamPlan {
    fn count_bits(&self) -> u32 {
        bits_for(self.max_items as u64)
    }

    /// Rounds per phase.
    pub fn window(&self, bandwidth: u32) -> u64 {
        let (b, frame, _) = slot_plan(bandwidth, self.streams_per_edge);
        let longest = self.count_bits() as u64 + self.max_items as u64 * self.item_bits as u64;
        frame * longest.div_ceil(b as u64)
    }

    pub fn total_rounds(&self, bandwidth: u32) -> u64 {
        self.height as u64 * self.window(bandwidth)
    }
}

/// What a node does with streams in a hop-phased run.
pub trait StreamLogic {
    /// Items for neighbor `to` in tree `tree`, asked at the start of the phase.
    fn emit(&mut self, tree: u64, to: u64) -> Vec<Message>;
    /// A complete stream from neighbor `from` in tree `tree`.
    fn absorb(&mut self, tree: u64, from: u64, items: Vec<Message>);
}

struct OutStream {
    content: Message,
    sent: u32,
}

struct InStream {
    tree: u64,
    content: Message,
    total: Option<u32>,
    done: bool,
}

struct StreamNode<L> {
    links: BTreeMap<u64, TreeLink>,
    plan: StreamPlan,
    slot_bits: u32,
    frame: u64,
    window: u64,
    logic: L,
    out: BTreeMap<u64, Vec<OutStream>>,
    inp: BTreeMap<u64, Vec<InStream>>,
    last_round: u64,
    crossings: BTreeMap<u64, u64>,
}

impl<L: StreamLogic> StreamNode<L> {
    fn new(links: BTreeMap<u64, TreeLink>, plan: StreamPlan, bandwidth: u32, logic: L) -> Self {
        let (slot_bits, frame, _) = slot_plan(bandwidth, plan.streams_per_edge);
        StreamNode {
            links,
            plan,
            slot_bits,
            frame,
            window: plan.window(bandwidth),
            logic,
            out: BTreeMap::new(),
            inp: BTreeMap::new(),
            last_round: 0,
            crossings: BTreeMap::new(),
        }
    }

    fn hop(&self, phase: u64) -> u32 {
        match self.plan.direction {
            Direction::Down => phase as u32 + 1,
            Direction::Up => self.plan.height - phase as u32,
        }
    }

    fn start_phase(&mut self, phase: u64) {
        let h = self.hop(phase);
        let cw = self.plan.count_bits();
        self.out.clear();
        self.inp.clear();
        let trees: Vec<(u64, TreeLink)> = self.links.iter().map(|(&t, l)| (t, l.clone())).collect();
        for (tree, link) in trees {
            let (send_to, recv_from): (Vec<u64>, Vec<u64>) = match self.plan.direction {
                Direction::Down => (
                    if link.depth + 1 == h { link.children.clone() } else { Vec::new() },
                    if link.depth == h { link.parent.into_iter().collect() } else { Vec::new() },
                ),
                Direction::Up => (
                    if link.depth == h { link.parent.into_iter().collect() } else { Vec::new() },
                    if link.depth + 1 == h { link.children.clone() } else { Vec::new() },
                ),
            };
            for to in send_to {
                let items = self.logic.emit(tree, to);
                let mut content = Message::from_bits(items.len() as u64, cw);
                for it in &items {
                    debug_assert_eq!(it.bit_len(), self.plan.item_bits);
                    content.append(it);
                }
                *self.crossings.entry(to).or_default() += items.len() as u64;
                self.out.entry(to).or_default().push(OutStream { content, sent: 0 });
            }
            for from in recv_from {
                self.inp.entry(from).or_default().push(InStream { tree, content: Message::new(), total: None, done: false });
            }
        }
        // Streams on one edge are laid out by tree identifier; `links` iterates in that order.
    }

    fn parse(&mut self, m: &Incoming, t: u64) {
        let cw = self.plan.count_bits();
        let ib = self.plan.item_bits;
        let slot = self.slot_bits;
        let frame = self.frame;
        let Some(streams) = self.inp.get_mut(&m.from) else { return };
        let mut r = m.msg.reader();
        let mut finished = Vec::new();
        for (i, s) in streams.iter_mut().enumerate() {
            if !(frame == 1 || i as u64 % frame == t % frame) || s.done {
                continue;
            }
            let have = s.content.bit_len();
            let mut budget = slot;
            if s.total.is_none() {
                let take = budget.min(cw - have);
                let Some(bits) = r.read(take) else { return };
                s.content.push(bits, take);
                budget -= take;
                if s.content.bit_len() == cw {
                    let count = s.content.reader().read(cw).unwrap();
                    s.total = Some(cw + count as u32 * ib);
                }
            }
            if let Some(total) = s.total {
                let take = budget.min(total - s.content.bit_len());
                let mut left = take;
                while left > 0 {
                    let w = left.min(64);
                    let Some(bits) = r.read(w) else { return };
                    s.content.push(bits, w);
                    left -= w;
                }
                if s.content.bit_len() == total {
                    s.done = true;
                    finished.push(i);
                }
            }
        }
        for i in finished {
            let s = &streams[i];
            let mut rd = s.content.reader();
            let count = rd.read(cw).unwrap();
            let items = (0..count)
                .map(|k| s.content.slice(cw + k as u32 * ib, ib))
                .collect();
            let tree = s.tree;
            self.logic.absorb(tree, m.from, items);
        }
    }
}

impl<L: StreamLogic> NodeProgram for StreamNode<L> {
    type Output = (L, BTreeMap<u64, u64>);

    fn on_round(&mut self, ctx: &mut RoundCtx<'_>, inbox: &[Incoming]) {
        let r = ctx.round();
        self.last_round = r;
        if r >= 2 {
            let t_prev = (r - 2) % self.window.max(1);
            for m in inbox {
                self.parse(m, t_prev);
            }
        }
        let total = self.plan.height as u64 * self.window;
        if r > total {
            return;
        }
        let phase = (r - 1) / self.window;
        let t = (r - 1) % self.window;
        if t == 0 {
            self.start_phase(phase);
        }
        let last = t + 1 == self.window;
        let slot = self.slot_bits;
        let mut sends = Vec::new();
        for (&to, streams) in self.out.iter_mut() {
            let mut msg = Message::new();
            for (i, s) in streams.iter_mut().enumerate() {
                let len = s.content.bit_len();
                if s.sent >= len || !(self.frame == 1 || i as u64 % self.frame == t % self.frame) {
                    if last && s.sent < len {
                        // Overflow beyond the window goes out now and trips the budget.
                        msg.append(&s.content.slice(s.sent, len - s.sent));
                        s.sent = len;
                    }
                    continue;
                }
                let take = if last { len - s.sent } else { slot.min(len - s.sent) };
                msg.append(&s.content.slice(s.sent, take));
                s.sent += take;
            }
            if !msg.is_empty() {
                sends.push((to, msg));
            }
        }
        for (to, msg) in sends {
            ctx.send(to, msg);
        }
    }

    fn halted(&self) -> bool {
        self.last_round >= self.plan.height as u64 * self.window
    }

    fn finish(self) -> (L, BTreeMap<u64, u64>) {
        (self.logic, self.crossings)
    }
}

/// Per directed edge `(from id, to id)`: items that crossed it.
pub type Crossings = BTreeMap<(u64, u64), u64>;

/// Runs a hop-phased streaming program over a family of trees.
pub fn run_streams<L, F>(
    g: &Graph,
    links: &Links,
    plan: StreamPlan,
    cfg: &SimConfig,
    mut logic: F,
) -> Result<(Vec<L>, Crossings, RoundReport)>
where
    L: StreamLogic,
    F: FnMut(Vertex) -> L,
{
    if plan.height == 0 {
        let out = (0..g.n()).map(&mut logic).collect();
        return Ok((out, Crossings::new(), RoundReport::default()));
    }
    let (_, _, degraded) = slot_plan(cfg.bandwidth_bits, plan.streams_per_edge);
    let (out, mut report) =
        run(g, cfg, |v, view: &LocalView| StreamNode::new(links[v].clone(), plan, view.bandwidth_bits, logic(v)))?;
    report.degraded_pipelining |= degraded;
    let mut crossings = Crossings::new();
    let mut logics = Vec::with_capacity(g.n());
    for (v, (l, c)) in out.into_iter().enumerate() {
        for (to, k) in c {
            if k > 0 {
                crossings.insert((g.id(v), to), k);
            }
        }
        logics.push(l);
    }
    Ok((logics, crossings, report))
}

/// Number of trees of the family containing each undirected edge, keyed by
/// `(min id, max id)`.
pub fn tree_edge_counts(g: &Graph, links: &Links) -> BTreeMap<(u64, u64), usize> {
    let mut load = BTreeMap::new();
    for v in 0..g.n() {
        let me = g.id(v);
        for l in links[v].values() {
            if let Some(p) = l.parent {
                *load.entry((me.min(p), me.max(p))).or_default() += 1;
            }
        }
    }
    load
}

/// Largest number of trees sharing one directed edge in any single phase.
pub fn max_streams_per_edge(g: &Graph, links: &Links) -> usize {
    tree_edge_counts(g, links).values().copied().max().unwrap_or(0)
}

// ---------------------------------------------------------------------------
// Aggregation and dissemination over tree families.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregate {
    Sum,
    Max,
    Or,
}

struct AggLogic {
    op: Aggregate,
    width: u32,
    lanes: usize,
    acc: BTreeMap<u64, Vec<u64>>,
}

impl AggLogic {
    fn combine(&self, a: &mut [u64], b: &[u64]) {
        for (x, &y) in a.iter_mut().zip(b) {
            *x = match self.op {
                Aggregate::Sum => *x + y,
                Aggregate::Max => (*x).max(y),
                Aggregate::Or => *x | y,
            };
        }
    }
}

impl StreamLogic for AggLogic {
    fn emit(&mut self, tree: u64, _to: u64) -> Vec<Message> {
        let v = self.acc.get(&tree).cloned().unwrap_or_else(|| vec![0; self.lanes]);
        v.iter().map(|&x| Message::from_bits(x, self.width)).collect()
    }

    fn absorb(&mut self, tree: u64, _from: u64, items: Vec<Message>) {
        let vals: Vec<u64> = items.iter().map(|m| m.reader().read(self.width).unwrap()).collect();
        let mut cur = self.acc.get(&tree).cloned().unwrap_or_else(|| vec![0; self.lanes]);
        self.combine(&mut cur, &vals);
        self.acc.insert(tree, cur);
    }
}

/// Aggregates per-node lane values up every tree of the family. `values[v]`
/// maps tree id to that node's lanes; `width` must hold every partial result.
/// Returns each tree's total, keyed by tree id.
pub fn tree_aggregate(
    g: &Graph,
    links: &Links,
    values: &[BTreeMap<u64, Vec<u64>>],
    lanes: usize,
    width: u32,
    op: Aggregate,
    cfg: &SimConfig,
) -> Result<(BTreeMap<u64, Vec<u64>>, RoundReport)> {
    let height = links.iter().flat_map(|m| m.values().map(|l| l.depth)).max().unwrap_or(0);
    let plan = StreamPlan {
        item_bits: width,
        max_items: lanes,
        streams_per_edge: max_streams_per_edge(g, links).max(1),
        height,
        direction: Direction::Up,
    };
    let (logics, _, report) = run_streams(g, links, plan, cfg, |v| AggLogic {
        op,
        width,
        lanes,
        acc: links[v].keys().map(|&t| (t, values[v].get(&t).cloned().unwrap_or_else(|| vec![0; lanes]))).collect(),
    })?;
    let mut out = BTreeMap::new();
    for (v, l) in logics.into_iter().enumerate() {
        for (t, link) in &links[v] {
            if link.parent.is_none() {
                out.insert(*t, l.acc.get(t).cloned().unwrap_or_else(|| vec![0; lanes]));
            }
        }
    }
    Ok((out, report))
}

struct DownLogic {
    width: u32,
    have: BTreeMap<u64, Vec<Message>>,
}

impl StreamLogic for DownLogic {
    fn emit(&mut self, tree: u64, _to: u64) -> Vec<Message> {
        self.have.get(&tree).cloned().unwrap_or_default()
    }

    fn absorb(&mut self, tree: u64, _from: u64, items: Vec<Message>) {
        let _ = self.width;
        self.have.insert(tree, items);
    }
}

/// Sends each root's items (each `width` bits, at most `max_items`) to every
/// member of its tree. Returns, per vertex, tree id to items.
pub fn tree_downcast(
    g: &Graph,
    links: &Links,
    root_items: &BTreeMap<u64, Vec<Message>>,
    max_items: usize,
    width: u32,
    cfg: &SimConfig,
) -> Result<(Vec<BTreeMap<u64, Vec<Message>>>, RoundReport)> {
    let height = links.iter().flat_map(|m| m.values().map(|l| l.depth)).max().unwrap_or(0);
    let plan = StreamPlan {
        item_bits: width,
        max_items,
        streams_per_edge: max_streams_per_edge(g, links).max(1),
        height,
        direction: Direction::Down,
    };
    let (logics, _, report) = run_streams(g, links, plan, cfg, |v| {
        let mut have = BTreeMap::new();
        for (t, l) in &links[v] {
            if l.parent.is_none() {
                have.insert(*t, root_items.get(t).cloned().unwrap_or_default());
            }
        }
        DownLogic { width, have }
    })?;
    Ok((logics.into_iter().map(|l| l.have).collect(), report))
}

/// Max over each component, then shared with every node of the component.
pub fn agree_on_max(g: &Graph, forest: &SpanningForest, values: &[u64], cfg: &SimConfig) -> Result<(Vec<u64>, RoundReport)> {
    let links = forest_links(g, forest);
    let width = bits_for(values.iter().copied().max().unwrap_or(0)).clamp(1, 64);
    let per: Vec<BTreeMap<u64, Vec<u64>>> =
        (0..g.n()).map(|v| links[v].keys().map(|&t| (t, vec![values[v]])).collect()).collect();
    let (tot, mut report) = tree_aggregate(g, &links, &per, 1, width, Aggregate::Max, cfg)?;
    let items: BTreeMap<u64, Vec<Message>> =
        tot.iter().map(|(&t, v)| (t, vec![Message::from_bits(v[0], width)])).collect();
    let (got, r2) = tree_downcast(g, &links, &items, 1, width, cfg)?;
    report.then(&r2);
    let out = (0..g.n())
        .map(|v| {
            let t = g.id(forest.root_of[v]);
            got[v].get(&t).and_then(|m| m.first()).map(|m| m.reader().read(width).unwrap()).unwrap_or(0)
        })
        .collect();
    Ok((out, report))
}

// ---------------------------------------------------------------------------
// Pipelined convergecast of sums.

struct SumNode {
    parent: Option<u64>,
    children: Vec<u64>,
    lanes: usize,
    lane_bits: u32,
    chunk: u32,
    own: Vec<u128>,
    received: BTreeMap<u64, Vec<u64>>,
    carry: Vec<u128>,
    next: usize,
    result: Vec<u128>,
}

impl SumNode {
    fn chunks_per_lane(&self) -> usize {
        self.lane_bits.div_ceil(self.chunk) as usize
    }

    fn chunk_len(&self, c: usize) -> u32 {
        let j = c % self.chunks_per_lane();
        self.chunk.min(self.lane_bits - j as u32 * self.chunk)
    }

    fn total_chunks(&self) -> usize {
        self.lanes * self.chunks_per_lane()
    }
}

impl NodeProgram for SumNode {
    type Output = Vec<u128>;

    fn on_round(&mut self, ctx: &mut RoundCtx<'_>, inbox: &[Incoming]) {
        for m in inbox {
            let c = self.received.get(&m.from).map_or(0, Vec::len);
            let len = self.chunk_len(c);
            let v = m.msg.reader().read(len).unwrap();
            self.received.entry(m.from).or_default().push(v);
        }
        // One chunk per round, once every child has delivered it.
        if self.next >= self.total_chunks() {
            return;
        }
        let c = self.next;
        if !self.children.iter().all(|ch| self.received.get(ch).map_or(0, Vec::len) > c) {
            return;
        }
        let per = self.chunks_per_lane();
        let lane = c / per;
        let j = c % per;
        let len = self.chunk_len(c);
        let own = (self.own[lane] >> (j as u32 * self.chunk)) & ((1u128 << len) - 1);
        let mut sum = own + self.carry[lane];
        for ch in &self.children {
            sum += self.received[ch][c] as u128;
        }
        let out = sum & ((1u128 << len) - 1);
        self.carry[lane] = sum >> len;
        self.next += 1;
        match self.parent {
            Some(p) => ctx.send(p, Message::from_bits(out as u64, len)),
            None => self.result[lane] |= out << (j as u32 * self.chunk),
        }
    }

    fn halted(&self) -> bool {
        self.next >= self.total_chunks()
    }

    fn finish(self) -> Vec<u128> {
        self.result
    }
}

/// Sums `values[v][lane]` (each below `2^value_bits`) up every component's
/// spanning tree, pipelined in bandwidth-sized chunks, least significant
/// first. Returns each root's lane sums, keyed by root vertex.
pub fn convergecast_sum(
    g: &Graph,
    forest: &SpanningForest,
    values: &[Vec<u128>],
    value_bits: u32,
    cfg: &SimConfig,
) -> Result<(BTreeMap<Vertex, Vec<u128>>, RoundReport)> {
    let lanes = values.first().map_or(0, Vec::len);
    let lane_bits = (value_bits + bits_for(g.n() as u64)).clamp(1, 126);
    let chunk = cfg.bandwidth_bits.min(64);
    let (out, report) = run(g, cfg, |v, _| {
        let mut children: Vec<u64> = forest.children[v].iter().map(|&c| g.id(c)).collect();
        children.sort_unstable();
        SumNode {
            parent: forest.parent[v].map(|p| g.id(p)),
            children,
            lanes,
            lane_bits,
            chunk,
            own: values[v].clone(),
            received: BTreeMap::new(),
            carry: vec![0; lanes],
            next: 0,
            result: vec![0; lanes],
        }
    })?;
    let mut res = BTreeMap::new();
    for &r in &forest.roots {
        res.insert(r, out[r].clone());
    }
    Ok((res, report))
}

struct PipeDown {
    parent: Option<u64>,
    children: Vec<u64>,
    len: u32,
    chunk: u32,
    have: Message,
    forwarded: u32,
}

impl NodeProgram for PipeDown {
    type Output = Message;

    fn on_round(&mut self, ctx: &mut RoundCtx<'_>, inbox: &[Incoming]) {
        for m in inbox {
            if Some(m.from) == self.parent {
                self.have.append(&m.msg);
            }
        }
        if self.forwarded < self.have.bit_len() {
            let take = self.chunk.min(self.have.bit_len() - self.forwarded);
            let piece = self.have.slice(self.forwarded, take);
            self.forwarded += take;
            for &c in &self.children {
                ctx.send(c, piece.clone());
            }
        }
    }

    fn halted(&self) -> bool {
        self.forwarded >= self.len
    }

    fn finish(self) -> Message {
        self.have
    }
}

/// Pipelines each root's `len`-bit message down its component's tree.
pub fn downcast(
    g: &Graph,
    forest: &SpanningForest,
    root_msgs: &BTreeMap<Vertex, Message>,
    len: u32,
    cfg: &SimConfig,
) -> Result<(Vec<Message>, RoundReport)> {
    let chunk = cfg.bandwidth_bits;
    run(g, cfg, |v, _| {
        let mut children: Vec<u64> = forest.children[v].iter().map(|&c| g.id(c)).collect();
        children.sort_unstable();
        let have = if forest.parent[v].is_none() { root_msgs.get(&v).cloned().unwrap_or_default() } else { Message::new() };
        PipeDown { parent: forest.parent[v].map(|p| g.id(p)), children, len, chunk, have, forwarded: 0 }
    })
}

// ---------------------------------------------------------------------------
// Sparse overlays.

/// Knowledge about a subset `Q` that every node holds: identifiers of its
/// `Q`-members up to distance `radius`, and its place in the depth-`radius`
/// BFS tree of each nearby member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseOverlay {
    pub q: Vec<bool>,
    pub radius: u32,
    /// Certified bound on `|N^{radius-1}[v] ∩ Q|` (closed neighborhood) over all `v`.
    pub maxdeg: usize,
    /// Certified bound on `|N^{radius}[v] ∩ Q|` (closed neighborhood) over all `v`.
    pub knowledge_maxdeg: usize,
    /// `known[v][r]`: sorted IDs of `N^r(v, Q)` for `r = 0..=radius`.
    pub known: Vec<Vec<Vec<u64>>>,
    pub trees: Links,
    /// Per vertex, `(tree, child) -> sorted Q-IDs in that child's subtree`.
    pub subtree_q: Option<Vec<BTreeMap<(u64, u64), Vec<u64>>>>,
    pub forest: SpanningForest,
}

impl SparseOverlay {
    /// Radius-0 overlay: nobody knows anything yet, each member owns a one-node tree.
    /// Builds the spanning forest used for certification by leader election.
    pub fn init(g: &Graph, q: &[bool], cfg: &SimConfig) -> Result<(SparseOverlay, RoundReport)> {
        let (forest, report) = leader_spanning_tree(g, cfg, true)?;
        Ok((SparseOverlay::with_forest(g, q, forest), report))
    }

    pub fn with_forest(g: &Graph, q: &[bool], forest: SpanningForest) -> SparseOverlay {
        let n = g.n();
        let trees = (0..n)
            .map(|v| {
                let mut m = BTreeMap::new();
                if q[v] {
                    m.insert(g.id(v), TreeLink { parent: None, children: Vec::new(), depth: 0 });
                }
                m
            })
            .collect();
        SparseOverlay {
            q: q.to_vec(),
            radius: 0,
            maxdeg: 0,
            knowledge_maxdeg: usize::from(q.iter().any(|&b| b)),
            known: vec![vec![Vec::new()]; n],
            trees,
            subtree_q: None,
            forest,
        }
    }

    pub fn members(&self) -> Vec<Vertex> {
        crate::graph::members(&self.q)
    }

    /// Sorted IDs of `N^radius(v, Q)`: the neighbors of `v` in `G^radius[Q]`.
    pub fn neighbors_in_power(&self, v: Vertex) -> &[u64] {
        &self.known[v][self.radius as usize]
    }

    /// Drops members outside `keep`. Knowledge and trees shrink accordingly;
    /// degree bounds stay valid since they only decrease.
    pub fn restrict(&self, g: &Graph, keep: &[bool]) -> SparseOverlay {
        let q: Vec<bool> = (0..g.n()).map(|v| self.q[v] && keep[v]).collect();
        let kept_ids: BTreeSet<u64> = (0..g.n()).filter(|&v| q[v]).map(|v| g.id(v)).collect();
        let known = self
            .known
            .iter()
            .map(|per_r| per_r.iter().map(|ids| ids.iter().copied().filter(|i| kept_ids.contains(i)).collect()).collect())
            .collect();
        let trees = self
            .trees
            .iter()
            .map(|m| m.iter().filter(|(t, _)| kept_ids.contains(t)).map(|(t, l)| (*t, l.clone())).collect())
            .collect();
        SparseOverlay {
            q,
            radius: self.radius,
            maxdeg: self.maxdeg,
            knowledge_maxdeg: self.knowledge_maxdeg,
            known,
            trees,
            subtree_q: None,
            forest: self.forest.clone(),
        }
    }
}

struct LearnNode {
    id: u64,
    id_bits: u32,
    count_bits: u32,
    closed: Vec<u64>,
    known_s: BTreeSet<u64>,
    heard: BTreeMap<u64, u64>,
    new_parents: BTreeMap<u64, u64>,
    new_children: BTreeMap<u64, Vec<u64>>,
    step: u32,
}

fn id_list(ids: &[u64], count_bits: u32, id_bits: u32) -> Message {
    let mut m = Message::from_bits(ids.len() as u64, count_bits);
    for &i in ids {
        m.push(i, id_bits);
    }
    m
}

fn read_id_list(m: &Message, count_bits: u32, id_bits: u32) -> Vec<u64> {
    let mut r = m.reader();
    let c = r.read(count_bits).unwrap_or(0);
    (0..c).map_while(|_| r.read(id_bits)).collect()
}

impl NodeProgram for LearnNode {
    type Output = (BTreeMap<u64, u64>, BTreeMap<u64, Vec<u64>>, Vec<u64>);

    fn on_round(&mut self, ctx: &mut RoundCtx<'_>, inbox: &[Incoming]) {
        self.step += 1;
        match self.step {
            1 => {
                let m = id_list(&self.closed, self.count_bits, self.id_bits);
                ctx.send_all(&m);
            }
            2 => {
                // The inbox is sorted by sender, so the first sender of x has the smallest ID.
                for m in inbox {
                    for x in read_id_list(&m.msg, self.count_bits, self.id_bits) {
                        if x != self.id {
                            self.heard.entry(x).or_insert(m.from);
                        }
                    }
                }
                let mut confirm: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
                for (&x, &w) in &self.heard {
                    if !self.known_s.contains(&x) {
                        self.new_parents.insert(x, w);
                        confirm.entry(w).or_default().push(x);
                    }
                }
                for (w, xs) in confirm {
                    ctx.send(w, id_list(&xs, self.count_bits, self.id_bits));
                }
            }
            _ => {
                for m in inbox {
                    for x in read_id_list(&m.msg, self.count_bits, self.id_bits) {
                        self.new_children.entry(x).or_default().push(m.from);
                    }
                }
            }
        }
    }

    fn halted(&self) -> bool {
        self.step >= 3
    }

    fn finish(self) -> Self::Output {
        let all: Vec<u64> = self.heard.keys().copied().collect();
        (self.new_parents, self.new_children, all)
    }
}

/// Every node learns `N^{s+1}(v, Q)` from its neighbors' closed
/// `N^s`-sets, and each member's tree grows by one level: a node at distance
/// exactly `s+1` from `x` joins `T_x` under the smallest-ID neighbor that
/// reported `x`. The new knowledge degree bound is certified by a
/// max-convergecast over the spanning forest.
pub fn learn_ids_one_hop(g: &Graph, ov: &SparseOverlay, cfg: &SimConfig) -> Result<(SparseOverlay, RoundReport)> {
    let s = ov.radius as usize;
    let a = g.id_bits();
    let k = ov.knowledge_maxdeg;
    let count_bits = bits_for(k as u64);
    let max_bits = count_bits + k as u32 * a;
    let (out, mut report) = run_chunked(g, cfg, max_bits, |v, view| {
        let mut closed = ov.known[v][s].clone();
        if ov.q[v] {
            closed.push(view.id);
            closed.sort_unstable();
        }
        LearnNode {
            id: view.id,
            id_bits: a,
            count_bits,
            closed,
            known_s: ov.known[v][s].iter().copied().collect(),
            heard: BTreeMap::new(),
            new_parents: BTreeMap::new(),
            new_children: BTreeMap::new(),
            step: 0,
        }
    })?;
    let mut next = ov.clone();
    next.radius += 1;
    next.subtree_q = None;
    for (v, (parents, children, all)) in out.into_iter().enumerate() {
        next.known[v].push(all);
        for (x, w) in parents {
            next.trees[v].insert(x, TreeLink { parent: Some(w), children: Vec::new(), depth: ov.radius + 1 });
        }
        for (x, mut cs) in children {
            let link = next.trees[v].get_mut(&x).expect("confirmation from a tree member");
            link.children.append(&mut cs);
            link.children.sort_unstable();
        }
    }
    let closed_counts: Vec<u64> =
        (0..g.n()).map(|v| (next.known[v][s + 1].len() + usize::from(next.q[v])) as u64).collect();
    let (agreed, r2) = agree_on_max(g, &next.forest, &closed_counts, cfg)?;
    report.then(&r2);
    next.maxdeg = ov.knowledge_maxdeg;
    next.knowledge_maxdeg = agreed.iter().copied().max().unwrap_or(0) as usize;
    Ok((next, report))
}

/// Extends the overlay until its radius is `radius`.
pub fn learn_to_radius(g: &Graph, ov: &SparseOverlay, radius: u32, cfg: &SimConfig) -> Result<(SparseOverlay, RoundReport)> {
    let mut cur = ov.clone();
    let mut report = RoundReport::default();
    while cur.radius < radius {
        let (nxt, r) = learn_ids_one_hop(g, &cur, cfg)?;
        report.then(&r);
        cur = nxt;
    }
    Ok((cur, report))
}

fn check_bandwidth(ov: &SparseOverlay, cfg: &SimConfig) -> Result<()> {
    if (cfg.bandwidth_bits as usize) < ov.maxdeg {
        return Err(Error::Precondition(format!(
            "bandwidth {} below maxdeg {}",
            cfg.bandwidth_bits, ov.maxdeg
        )));
    }
    Ok(())
}

struct BroadcastNode {
    /// Trees I belong to whose root sends: tree id -> (depth, parent, children).
    trees: BTreeMap<u64, TreeLink>,
    len: u32,
    slot_bits: u32,
    frame: u64,
    end: u64,
    have: BTreeMap<u64, Message>,
    round: u64,
}

impl BroadcastNode {
    fn piece(&self, j: u64) -> (u32, u32) {
        let start = j as u32 * self.slot_bits;
        (start, self.slot_bits.min(self.len - start))
    }

    fn pieces(&self) -> u64 {
        (self.len.max(1)).div_ceil(self.slot_bits) as u64
    }
}

impl NodeProgram for BroadcastNode {
    type Output = BTreeMap<u64, Message>;

    fn on_round(&mut self, ctx: &mut RoundCtx<'_>, inbox: &[Incoming]) {
        let r = ctx.round();
        self.round = r;
        let pieces = self.pieces();
        if r >= 2 {
            let (sr, ph) = ((r - 2) / self.frame, (r - 2) % self.frame);
            for m in inbox {
                let streams: Vec<u64> =
                    self.trees.iter().filter(|(_, l)| l.parent == Some(m.from)).map(|(&t, _)| t).collect();
                let mut rd = m.msg.reader();
                for (i, t) in streams.into_iter().enumerate() {
                    if self.frame > 1 && i as u64 % self.frame != ph {
                        continue;
                    }
                    let d = self.trees[&t].depth as u64;
                    if sr + 1 < d || sr + 1 - d >= pieces {
                        continue;
                    }
                    let (_, len) = self.piece(sr + 1 - d);
                    let bits = rd.read(len).expect("piece present");
                    self.have.entry(t).or_default().push(bits, len);
                }
            }
        }
        if r > self.end {
            return;
        }
        let (sr, ph) = ((r - 1) / self.frame, (r - 1) % self.frame);
        let mut per_child: BTreeMap<u64, Message> = BTreeMap::new();
        let mut index: BTreeMap<u64, u64> = BTreeMap::new();
        for (&t, l) in &self.trees {
            for &c in &l.children {
                let i = *index.entry(c).and_modify(|i| *i += 1).or_insert(0);
                if self.frame > 1 && i % self.frame != ph {
                    continue;
                }
                let d = l.depth as u64;
                if sr < d || sr - d >= pieces {
                    continue;
                }
                let (start, len) = self.piece(sr - d);
                let piece = self.have[&t].slice(start, len);
                per_child.entry(c).or_default().append(&piece);
            }
        }
        for (c, m) in per_child {
            if !m.is_empty() {
                ctx.send(c, m);
            }
        }
    }

    fn halted(&self) -> bool {
        self.round >= self.end
    }

    fn finish(self) -> BTreeMap<u64, Message> {
        self.have
    }
}

/// Per directed edge `(from id, to id)`, the number of distinct root
/// messages that crossed it.
pub fn stream_crossings(g: &Graph, trees: &Links) -> Crossings {
    let mut c = Crossings::new();
    for v in 0..g.n() {
        for l in trees[v].values() {
            for &ch in &l.children {
                *c.entry((g.id(v), ch)).or_default() += 1;
            }
        }
    }
    c
}

/// Every sender `x` in `Q` delivers its `len`-bit message to all of
/// `N^radius(x)` down `T_x`. Each tree gets `bandwidth / (2 maxdeg)` bits
/// of every edge; pieces move one hop per frame, so piece `j` crosses the
/// edge into depth `d` in frame `d - 1 + j`. `senders` must be known to
/// every member of the senders' trees.
pub fn broadcast_from_q(
    g: &Graph,
    ov: &SparseOverlay,
    senders: &[bool],
    msgs: &BTreeMap<Vertex, Message>,
    len: u32,
    cfg: &SimConfig,
) -> Result<(Vec<BTreeMap<u64, Message>>, Crossings, RoundReport)> {
    check_bandwidth(ov, cfg)?;
    let n = g.n();
    let active: BTreeSet<u64> = (0..n).filter(|&v| ov.q[v] && senders[v]).map(|v| g.id(v)).collect();
    if active.is_empty() || len == 0 {
        return Ok((vec![BTreeMap::new(); n], Crossings::new(), RoundReport::default()));
    }
    for v in 0..n {
        if ov.q[v] && senders[v] && msgs.get(&v).map(Message::bit_len) != Some(len) {
            return Err(Error::InvalidParameter(format!("sender {} lacks a {len}-bit message", g.id(v))));
        }
    }
    let (slot_bits, frame, degraded) = slot_plan(cfg.bandwidth_bits, 2 * ov.maxdeg.max(1));
    let pieces = len.div_ceil(slot_bits) as u64;
    let end = frame * (ov.radius as u64 + pieces);
    let trees: Links =
        (0..n).map(|v| ov.trees[v].iter().filter(|(t, _)| active.contains(t)).map(|(t, l)| (*t, l.clone())).collect()).collect();
    let (out, mut report) = run(g, cfg, |v, _| {
        let mut have = BTreeMap::new();
        if ov.q[v] && senders[v] {
            have.insert(g.id(v), msgs[&v].clone());
        }
        BroadcastNode { trees: trees[v].clone(), len, slot_bits, frame, end, have, round: 0 }
    })?;
    report.degraded_pipelining |= degraded;
    let received = out
        .into_iter()
        .enumerate()
        .map(|(v, mut m)| {
            m.remove(&g.id(v));
            m
        })
        .collect();
    Ok((received, stream_crossings(g, &trees), report))
}

struct SubtreeLogic {
    id: u64,
    in_q: bool,
    id_bits: u32,
    /// (tree, child) -> Q-IDs below that child.
    below: BTreeMap<(u64, u64), Vec<u64>>,
}

impl StreamLogic for SubtreeLogic {
    fn emit(&mut self, tree: u64, _to: u64) -> Vec<Message> {
        let mut ids: Vec<u64> =
            self.below.range((tree, 0)..=(tree, u64::MAX)).flat_map(|(_, v)| v.iter().copied()).collect();
        if self.in_q {
            ids.push(self.id);
        }
        ids.sort_unstable();
        ids.into_iter().map(|i| Message::from_bits(i, self.id_bits)).collect()
    }

    fn absorb(&mut self, tree: u64, from: u64, items: Vec<Message>) {
        let ids = items.iter().map(|m| m.reader().read(self.id_bits).unwrap()).collect();
        self.below.insert((tree, from), ids);
    }
}

/// Fills `subtree_q`: each tree node learns, per child, which members of `Q`
/// lie in that child's subtree. One upcast over all trees.
pub fn prepare_routing(g: &Graph, ov: &SparseOverlay, cfg: &SimConfig) -> Result<(SparseOverlay, RoundReport)> {
    check_bandwidth(ov, cfg)?;
    let a = g.id_bits();
    let plan = StreamPlan {
        item_bits: a,
        max_items: ov.maxdeg.max(1),
        streams_per_edge: 2 * ov.maxdeg.max(1),
        height: ov.radius,
        direction: Direction::Up,
    };
    let (logics, _, report) = run_streams(g, &ov.trees, plan, cfg, |v| SubtreeLogic {
        id: g.id(v),
        in_q: ov.q[v],
        id_bits: a,
        below: BTreeMap::new(),
    })?;
    let mut next = ov.clone();
    next.subtree_q = Some(logics.into_iter().map(|l| l.below).collect());
    Ok((next, report))
}

struct RouteLogic {
    id: u64,
    id_bits: u32,
    payload_bits: u32,
    below: BTreeMap<(u64, u64), Vec<u64>>,
    /// tree -> tuples (dest, payload) still to forward.
    pending: BTreeMap<u64, Vec<(u64, Message)>>,
    delivered: Vec<(u64, Message)>,
}

impl StreamLogic for RouteLogic {
    fn emit(&mut self, tree: u64, to: u64) -> Vec<Message> {
        let Some(below) = self.below.get(&(tree, to)) else { return Vec::new() };
        let Some(pending) = self.pending.get(&tree) else { return Vec::new() };
        pending
            .iter()
            .filter(|(d, _)| below.binary_search(d).is_ok())
            .map(|(d, p)| {
                let mut m = Message::from_bits(*d, self.id_bits);
                m.append(p);
                m
            })
            .collect()
    }

    fn absorb(&mut self, tree: u64, _from: u64, items: Vec<Message>) {
        for it in items {
            let dest = it.reader().read(self.id_bits).unwrap();
            let payload = it.slice(self.id_bits, self.payload_bits);
            if dest == self.id {
                self.delivered.push((tree, payload));
            } else {
                self.pending.entry(tree).or_default().push((dest, payload));
            }
        }
    }
}

/// Each member `x` sends an `m`-bit message to chosen members `y` of
/// `N^radius(x, Q)`. Tuples `(ID(y), msg)` travel down `T_x` and enter a
/// child's subtree only if `y` lies in it. Hops run in consecutive windows
/// sized for `maxdeg` tuples per stream and `2 maxdeg` streams per edge.
/// Returns, per vertex, `(sender id, message)` sorted by sender.
pub fn q_message(
    g: &Graph,
    ov: &SparseOverlay,
    msgs: &BTreeMap<Vertex, Vec<(u64, Message)>>,
    m: u32,
    cfg: &SimConfig,
) -> Result<(Vec<Vec<(u64, Message)>>, Crossings, RoundReport)> {
    check_bandwidth(ov, cfg)?;
    for (&x, list) in msgs {
        let nb = ov.neighbors_in_power(x);
        for (y, msg) in list {
            if !ov.q[x] || nb.binary_search(y).is_err() {
                return Err(Error::InvalidDestination { from: g.id(x), to: *y });
            }
            if msg.bit_len() != m {
                return Err(Error::InvalidParameter(format!("message of {} bits, expected {m}", msg.bit_len())));
            }
        }
    }
    let routed;
    let mut report = RoundReport::default();
    let ov = if ov.subtree_q.is_some() {
        ov
    } else {
        let (r, rep) = prepare_routing(g, ov, cfg)?;
        report.then(&rep);
        routed = r;
        &routed
    };
    let below = ov.subtree_q.as_ref().unwrap();
    let a = g.id_bits();
    let plan = StreamPlan {
        item_bits: a + m,
        max_items: ov.maxdeg.max(1),
        streams_per_edge: 2 * ov.maxdeg.max(1),
        height: ov.radius,
        direction: Direction::Down,
    };
    let (logics, crossings, rep) = run_streams(g, &ov.trees, plan, cfg, |v| {
        let mut pending = BTreeMap::new();
        if let Some(list) = msgs.get(&v) {
            let mut l = list.clone();
            l.sort_by_key(|p| p.0);
            pending.insert(g.id(v), l);
        }
        RouteLogic { id: g.id(v), id_bits: a, payload_bits: m, below: below[v].clone(), pending, delivered: Vec::new() }
    })?;
    report.then(&rep);
    let out = logics
        .into_iter()
        .map(|l| {
            let mut d = l.delivered;
            d.sort_by_key(|p| p.0);
            d
        })
        .collect();
    Ok((out, crossings, report))
}

/// Runs `factory`'s program on the virtual graph `G^s[Q]`, one inner round
/// at a time. Each inner round is a [`q_message`] exchange whose tuples carry
/// a length field and the padded inner message. Inner nodes see `N^s(v, Q)`
/// as their neighbors, `n` of `G`, and `Δ · maxdeg` as the degree bound.
/// Returns outputs for members of `Q` (by vertex) and the physical cost.
pub fn simulate_on_power_subgraph<P, F>(
    g: &Graph,
    ov: &SparseOverlay,
    cfg: &SimConfig,
    mut factory: F,
) -> Result<(BTreeMap<Vertex, P::Output>, RoundReport)>
where
    P: NodeProgram,
    F: FnMut(Vertex, &LocalView) -> P,
{
    let members = ov.members();
    let mut report = RoundReport::default();
    if members.is_empty() {
        return Ok((BTreeMap::new(), report));
    }
    let (ov, rep) = prepare_routing(g, ov, cfg)?;
    report.then(&rep);
    let inner_bw = cfg.bandwidth_bits;
    let len_bits = bits_for(inner_bw as u64);
    let m = len_bits + inner_bw;
    let views: BTreeMap<Vertex, LocalView> = members
        .iter()
        .map(|&v| {
            (
                v,
                LocalView {
                    id: g.id(v),
                    neighbor_ids: ov.neighbors_in_power(v).to_vec(),
                    n: g.n(),
                    max_degree: g.max_degree() * ov.maxdeg.max(1),
                    id_bits: g.id_bits(),
                    bandwidth_bits: inner_bw,
                    diameter: None,
                },
            )
        })
        .collect();
    let mut nodes: BTreeMap<Vertex, P> = members.iter().map(|&v| (v, factory(v, &views[&v]))).collect();
    let mut inbox: BTreeMap<Vertex, Vec<Incoming>> = BTreeMap::new();
    let mut round = 0u64;
    let plan_rounds = StreamPlan {
        item_bits: g.id_bits() + m,
        max_items: ov.maxdeg.max(1),
        streams_per_edge: 2 * ov.maxdeg.max(1),
        height: ov.radius,
        direction: Direction::Down,
    }
    .total_rounds(cfg.bandwidth_bits);
    let mut outbox = Vec::new();
    loop {
        let pending = inbox.values().any(|b| !b.is_empty());
        if !pending && nodes.values().all(|p| p.halted()) {
            break;
        }
        if round >= cfg.round_limit {
            return Err(Error::Timeout(alloc::boxed::Box::new(report)));
        }
        round += 1;
        let mut sends: BTreeMap<Vertex, Vec<(u64, Message)>> = BTreeMap::new();
        for (&v, node) in nodes.iter_mut() {
            let ib = inbox.remove(&v).unwrap_or_default();
            if node.halted() && ib.is_empty() {
                continue;
            }
            outbox.clear();
            {
                let mut ctx = RoundCtx::new(round, &views[&v], cfg.rng_seed, &mut outbox);
                node.on_round(&mut ctx, &ib);
            }
            let mut per_dest: BTreeMap<u64, Message> = BTreeMap::new();
            for (to, msg) in outbox.drain(..) {
                per_dest.entry(to).or_default().append(&msg);
            }
            for (to, msg) in per_dest {
                if msg.bit_len() > inner_bw {
                    report.violations.push(format!(
                        "inner round {round}: {} -> {to} carried {} bits, budget {inner_bw}",
                        g.id(v),
                        msg.bit_len()
                    ));
                    return Err(Error::BandwidthViolation(alloc::boxed::Box::new(report)));
                }
                let mut framed = Message::from_bits(msg.bit_len() as u64, len_bits);
                framed.append(&msg);
                let pad = m - framed.bit_len();
                let mut padded = framed;
                let mut left = pad;
                while left > 0 {
                    let w = left.min(64);
                    padded.push(0, w);
                    left -= w;
                }
                sends.entry(v).or_default().push((to, padded));
            }
        }
        if sends.is_empty() {
            continue;
        }
        let (recv, _, rep) = q_message(g, &ov, &sends, m, cfg)?;
        // The exchange occupies its full schedule before the next inner round starts.
        let mut step = rep.clone();
        step.rounds_used = plan_rounds;
        report.then(&step);
        let mut next: BTreeMap<Vertex, Vec<Incoming>> = BTreeMap::new();
        for (v, list) in recv.into_iter().enumerate() {
            for (from, framed) in list {
                let mut r = framed.reader();
                let l = r.read(len_bits).unwrap() as u32;
                next.entry(v).or_default().push(Incoming { from, msg: framed.slice(len_bits, l) });
            }
        }
        for b in next.values_mut() {
            b.sort_by_key(|m| m.from);
        }
        inbox = next;
    }
    Ok((nodes.into_iter().map(|(v, p)| (v, p.finish())).collect(), report))
}

/// The simulated round count is honest only if every inner round is charged
/// its full schedule; exposed for reporting.
pub fn q_message_schedule(g: &Graph, ov: &SparseOverlay, m: u32, cfg: &SimConfig) -> u64 {
    StreamPlan {
        item_bits: g.id_bits() + m,
        max_items: ov.maxdeg.max(1),
        streams_per_edge: 2 * ov.maxdeg.max(1),
        height: ov.radius,
        direction: Direction::Down,
    }
    .total_rounds(cfg.bandwidth_bits)
}

// ---------------------------------------------------------------------------
// Beeps.

struct BeepNode {
    source: bool,
    hops: u32,
    heard: Option<u32>,
    parent: Option<u64>,
    started: bool,
}

impl NodeProgram for BeepNode {
    type Output = (Option<u32>, Option<u64>);

    fn on_round(&mut self, ctx: &mut RoundCtx<'_>, inbox: &[Incoming]) {
        let r = ctx.round();
        if !self.started {
            self.started = true;
            if self.source {
                self.heard = Some(0);
                if self.hops > 0 {
                    ctx.send_all(&Message::from_bits(1, 1));
                }
            }
            return;
        }
        if self.heard.is_none() && !inbox.is_empty() {
            let d = (r - 1) as u32;
            self.heard = Some(d);
            self.parent = inbox.iter().map(|m| m.from).min();
            if d < self.hops {
                ctx.send_all(&Message::from_bits(1, 1));
            }
        }
    }

    fn halted(&self) -> bool {
        self.started
    }

    fn finish(self) -> (Option<u32>, Option<u64>) {
        (self.heard, self.parent)
    }
}

/// One-bit flags from `sources` flooded for `hops` hops; merged flags cost
/// nothing extra. Returns each node's distance to the nearest source, if
/// within `hops`.
pub fn beep(g: &Graph, sources: &[bool], hops: u32, cfg: &SimConfig) -> Result<(Vec<Option<u32>>, RoundReport)> {
    let (out, report) = beep_tree(g, sources, hops, cfg)?;
    Ok((out.into_iter().map(|b| b.map(|(d, _)| d)).collect(), report))
}

/// [`beep`], also returning the smallest-ID neighbor each node first heard
/// the flag from (`None` at sources). Following parents leads to a source.
pub fn beep_tree(
    g: &Graph,
    sources: &[bool],
    hops: u32,
    cfg: &SimConfig,
) -> Result<(Vec<Option<(u32, Option<Vertex>)>>, RoundReport)> {
    let (out, report) =
        run(g, cfg, |v, _| BeepNode { source: sources[v], hops, heard: None, parent: None, started: false })?;
    let out = out
        .into_iter()
        .map(|(d, p)| d.map(|d| (d, p.map(|id| g.vertex_of(id).expect("parent is a neighbor")))))
        .collect();
    Ok((out, report))
}

struct OwnerFlood {
    hops: u32,
    id_bits: u32,
    /// `(owner id, distance, parent id)`.
    adopted: Option<(u64, u32, Option<u64>)>,
    started: bool,
}

impl NodeProgram for OwnerFlood {
    type Output = Option<(u64, u32, Option<u64>)>;

    fn on_round(&mut self, ctx: &mut RoundCtx<'_>, inbox: &[Incoming]) {
        if !self.started {
            self.started = true;
            if let Some((o, 0, _)) = self.adopted {
                if self.hops > 0 {
                    ctx.send_all(&Message::from_bits(o, self.id_bits));
                }
            }
            return;
        }
        if self.adopted.is_some() || inbox.is_empty() {
            return;
        }
        let (owner, from) = inbox
            .iter()
            .map(|m| (m.msg.reader().read(self.id_bits).unwrap_or(u64::MAX), m.from))
            .min()
            .unwrap();
        let d = (ctx.round() - 1) as u32;
        self.adopted = Some((owner, d, Some(from)));
        if d < self.hops {
            ctx.send_all(&Message::from_bits(owner, self.id_bits));
        }
    }

    fn halted(&self) -> bool {
        self.started
    }

    fn finish(self) -> Self::Output {
        self.adopted
    }
}

/// Multi-source BFS for `hops` hops. Sources start with an owner ID; every
/// other node adopts the smallest owner among the first arrivals, and its
/// parent is the smallest-ID neighbor that delivered it.
/// Returns `(owner, distance, parent)` per reached node.
pub fn owner_flood(
    g: &Graph,
    owners: &[Option<u64>],
    hops: u32,
    cfg: &SimConfig,
) -> Result<(Vec<Option<(u64, u32, Option<Vertex>)>>, RoundReport)> {
    let id_bits = g.id_bits();
    let (out, report) = run(g, cfg, |v, _| OwnerFlood {
        hops,
        id_bits,
        adopted: owners[v].map(|o| (o, 0, None)),
        started: false,
    })?;
    let out = out
        .into_iter()
        .map(|a| a.map(|(o, d, p)| (o, d, p.map(|id| g.vertex_of(id).expect("parent is a neighbor")))))
        .collect();
    Ok((out, report))
}

/// Recomputes both degree bounds of an overlay from the nodes' current
/// knowledge: one max-convergecast with two lanes, then a downcast.
pub fn certify_degrees(g: &Graph, ov: &SparseOverlay, cfg: &SimConfig) -> Result<(SparseOverlay, RoundReport)> {
    let s = ov.radius as usize;
    let closed = |v: Vertex, r: usize| (ov.known[v][r].len() + usize::from(ov.q[v])) as u64;
    let inner: Vec<u64> = (0..g.n()).map(|v| if s == 0 { 0 } else { closed(v, s - 1) }).collect();
    let outer: Vec<u64> = (0..g.n()).map(|v| closed(v, s)).collect();
    let (a, mut report) = agree_on_max(g, &ov.forest, &inner, cfg)?;
    let (b, r2) = agree_on_max(g, &ov.forest, &outer, cfg)?;
    report.then(&r2);
    let mut next = ov.clone();
    next.maxdeg = a.into_iter().max().unwrap_or(0) as usize;
    next.knowledge_maxdeg = b.into_iter().max().unwrap_or(0) as usize;
    Ok((next, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{dist_k_neighborhood, generate, mask, power_graph, GraphKind};

    fn cfg(g: &Graph) -> SimConfig {
        SimConfig::for_n(g.n(), 7)
    }

    fn overlay(g: &Graph, q: &[bool], s: u32) -> SparseOverlay {
        let c = cfg(g);
        let (ov, _) = SparseOverlay::init(g, q, &c).unwrap();
        learn_to_radius(g, &ov, s, &c).unwrap().0
    }

    fn ids(g: &Graph, vs: &[Vertex]) -> Vec<u64> {
        let mut v: Vec<u64> = vs.iter().map(|&x| g.id(x)).collect();
        v.sort_unstable();
        v
    }

    /// Two hubs joined by an edge, each with `d/2` pendant members.
    fn gadget(d: usize) -> (Graph, Vec<bool>, Vertex, Vertex) {
        let mut edges = vec![(0, 1)];
        for i in 0..d / 2 {
            edges.push((0, 2 + i));
            edges.push((1, 2 + d / 2 + i));
        }
        let g = Graph::from_edges(d + 2, &edges, 3).unwrap();
        let q: Vec<bool> = (0..d + 2).map(|v| v >= 2).collect();
        (g, q, 0, 1)
    }

    #[test]
    fn learn_ids_on_a_path() {
        let g = generate(GraphKind::Path { n: 3 }, 1).unwrap();
        let q = mask(3, &[0, 2]);
        let ov = overlay(&g, &q, 1);
        assert_eq!(ov.known[1][1], ids(&g, &[0, 2]));
        assert!(ov.known[0][1].is_empty());
        let ov = overlay(&g, &q, 2);
        assert_eq!(ov.known[0][2], ids(&g, &[2]));
        let t = &ov.trees[2][&g.id(0)];
        assert_eq!((t.parent, t.depth), (Some(g.id(1)), 2));
    }

    #[test]
    fn knowledge_and_trees_match_bfs() {
        for seed in 0..4 {
            let g = generate(GraphKind::Gnp { n: 40, p: 0.08 }, seed).unwrap();
            let q: Vec<bool> = (0..g.n()).map(|v| (v * 7 + seed as usize).is_multiple_of(3)).collect();
            let ov = overlay(&g, &q, 3);
            for v in 0..g.n() {
                for r in 0..=3 {
                    assert_eq!(ov.known[v][r as usize], ids(&g, &dist_k_neighborhood(&g, v, r, Some(&q))));
                }
                let dist = g.bfs(v);
                for x in 0..g.n() {
                    let link = ov.trees[v].get(&g.id(x));
                    let within = q[x] && dist[x].is_some_and(|d| d <= 3);
                    assert_eq!(link.is_some(), within);
                    if let Some(l) = link {
                        assert_eq!(Some(l.depth), dist[x]);
                        if let Some(p) = l.parent {
                            let pv = g.vertex_of(p).unwrap();
                            assert!(g.has_edge(v, pv));
                            assert_eq!(ov.trees[pv][&g.id(x)].depth + 1, l.depth);
                            assert!(ov.trees[pv][&g.id(x)].children.contains(&g.id(v)));
                        }
                    }
                }
            }
            let bound = (0..g.n()).map(|v| dist_k_neighborhood(&g, v, 2, Some(&q)).len() + usize::from(q[v])).max().unwrap();
            assert_eq!(ov.maxdeg, bound);
            for (_, load) in tree_edge_counts(&g, &ov.trees) {
                assert!(load <= 2 * ov.maxdeg);
            }
        }
    }

    #[test]
    fn broadcast_on_a_path_arrives_fast() {
        let g = generate(GraphKind::Path { n: 3 }, 1).unwrap();
        let q = mask(3, &[0]);
        let c = cfg(&g);
        let ov = overlay(&g, &q, 2);
        let len = c.bandwidth_bits;
        let msgs = BTreeMap::from([(0, Message::from_bits(0b1011, len))]);
        let (got, _, rep) = broadcast_from_q(&g, &ov, &q, &msgs, len, &c).unwrap();
        assert_eq!(got[2][&g.id(0)], msgs[&0]);
        assert!(rep.rounds_used <= 4, "{}", rep.rounds_used);
    }

    #[test]
    fn broadcast_reaches_exactly_the_ball() {
        let g = generate(GraphKind::Gnp { n: 50, p: 0.07 }, 9).unwrap();
        let q: Vec<bool> = (0..g.n()).map(|v| v % 4 == 1).collect();
        let c = cfg(&g);
        let ov = overlay(&g, &q, 2);
        let msgs: BTreeMap<Vertex, Message> =
            crate::graph::members(&q).into_iter().map(|v| (v, Message::from_bits(g.id(v) * 3 + 1, 30))).collect();
        let (got, _, rep) = broadcast_from_q(&g, &ov, &q, &msgs, 30, &c).unwrap();
        assert!(rep.violations.is_empty());
        for v in 0..g.n() {
            let expect = ids(&g, &dist_k_neighborhood(&g, v, 2, Some(&q)));
            assert_eq!(got[v].keys().copied().collect::<Vec<_>>(), expect);
            for (x, m) in &got[v] {
                assert_eq!(m.reader().read(30), Some(x * 3 + 1));
            }
        }
    }

    #[test]
    fn gadget_broadcast_and_q_message_crossings() {
        let d = 8;
        let (g, q, v, w) = gadget(d);
        let c = cfg(&g);
        let ov = overlay(&g, &q, 3);
        assert_eq!(ov.maxdeg, d);
        let msgs: BTreeMap<Vertex, Message> =
            crate::graph::members(&q).into_iter().map(|x| (x, Message::from_bits(1, 6))).collect();
        let (_, cross, rep) = broadcast_from_q(&g, &ov, &q, &msgs, 6, &c).unwrap();
        let (vi, wi) = (g.id(v), g.id(w));
        assert_eq!(cross[&(vi, wi)] + cross[&(wi, vi)], d as u64);
        assert!(rep.max_bits_on_edge <= c.bandwidth_bits);

        let mut qm: BTreeMap<Vertex, Vec<(u64, Message)>> = BTreeMap::new();
        for x in crate::graph::members(&q) {
            let list = ov.neighbors_in_power(x).iter().map(|&y| (y, Message::from_bits(g.id(x) ^ y, 4))).collect();
            qm.insert(x, list);
        }
        let (got, cross, rep) = q_message(&g, &ov, &qm, 4, &c).unwrap();
        assert_eq!(cross[&(vi, wi)], (d * d / 4) as u64);
        assert_eq!(cross[&(wi, vi)], (d * d / 4) as u64);
        assert!(rep.max_bits_on_edge <= c.bandwidth_bits);
        for y in crate::graph::members(&q) {
            assert_eq!(got[y].len(), d - 1);
            for (x, m) in &got[y] {
                assert_eq!(m.reader().read(4), Some((x ^ g.id(y)) & 0xf));
            }
        }
    }

    #[test]
    fn q_message_rejects_far_destinations() {
        let g = generate(GraphKind::Path { n: 5 }, 2).unwrap();
        let q = mask(5, &[0, 4]);
        let c = cfg(&g);
        let ov = overlay(&g, &q, 2);
        let msgs = BTreeMap::from([(0, vec![(g.id(4), Message::from_bits(1, 2))])]);
        assert!(matches!(q_message(&g, &ov, &msgs, 2, &c), Err(Error::InvalidDestination { .. })));
    }

    #[test]
    fn sums_and_maxima_over_the_forest() {
        let g = generate(GraphKind::Gnp { n: 60, p: 0.03 }, 4).unwrap();
        let c = cfg(&g);
        let (f, _) = leader_spanning_tree(&g, &c, true).unwrap();
        let vals: Vec<Vec<u128>> = (0..g.n()).map(|v| vec![v as u128 * 1000 + 7, (v % 5) as u128]).collect();
        let (sums, _) = convergecast_sum(&g, &f, &vals, 16, &c).unwrap();
        for (&r, s) in &sums {
            let comp: Vec<Vertex> = (0..g.n()).filter(|&v| f.root_of[v] == r).collect();
            assert_eq!(s[0], comp.iter().map(|&v| vals[v][0]).sum::<u128>());
            assert_eq!(s[1], comp.iter().map(|&v| vals[v][1]).sum::<u128>());
        }
        let raw: Vec<u64> = (0..g.n()).map(|v| (v * 37 % 101) as u64).collect();
        let (mx, _) = agree_on_max(&g, &f, &raw, &c).unwrap();
        for v in 0..g.n() {
            let best = (0..g.n()).filter(|&u| f.root_of[u] == f.root_of[v]).map(|u| raw[u]).max().unwrap();
            assert_eq!(mx[v], best);
        }
        let msgs: BTreeMap<Vertex, Message> = f.roots.iter().map(|&r| (r, Message::from_bits(g.id(r), 40))).collect();
        let (got, _) = downcast(&g, &f, &msgs, 40, &c).unwrap();
        for v in 0..g.n() {
            assert_eq!(got[v].reader().read(40), Some(g.id(f.root_of[v])));
        }
    }

    struct Echo {
        id: u64,
        got: Vec<(u64, u64)>,
        done: bool,
    }

    impl NodeProgram for Echo {
        type Output = Vec<(u64, u64)>;
        fn on_round(&mut self, ctx: &mut RoundCtx<'_>, inbox: &[Incoming]) {
            match ctx.round() {
                1 => {
                    let salt = ctx.rng().below(8);
                    let m = Message::from_bits(self.id * 8 + salt, 20);
                    ctx.send_all(&m);
                }
                2 => {
                    for m in inbox {
                        self.got.push((m.from, m.msg.reader().read(20).unwrap()));
                        ctx.send(m.from, Message::from_bits(self.id, 12));
                    }
                }
                _ => {
                    for m in inbox {
                        self.got.push((m.from, m.msg.reader().read(12).unwrap()));
                    }
                    self.done = true;
                }
            }
        }
        fn halted(&self) -> bool {
            self.done
        }
        fn finish(self) -> Vec<(u64, u64)> {
            self.got
        }
    }

    #[test]
    fn simulation_matches_a_direct_run() {
        let g = generate(GraphKind::Gnp { n: 40, p: 0.08 }, 5).unwrap();
        let q: Vec<bool> = (0..g.n()).map(|v| v % 3 == 0).collect();
        let c = cfg(&g);
        let ov = overlay(&g, &q, 2);
        let (sim, rep) =
            simulate_on_power_subgraph(&g, &ov, &c, |_, view| Echo { id: view.id, got: Vec::new(), done: false }).unwrap();
        assert!(rep.violations.is_empty());
        let (h, map) = power_graph(&g, 2).unwrap().induced_subgraph(&crate::graph::members(&q));
        let (direct, _) = run(&h, &c, |_, view| Echo { id: view.id, got: Vec::new(), done: false }).unwrap();
        for (i, out) in direct.into_iter().enumerate() {
            assert_eq!(sim[&map[i]], out);
        }
    }
}
