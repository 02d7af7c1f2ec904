//! k-wise independent hashing over GF(2^m) and seed fixing by the method of
//! conditional expectations.
//!
//! A seed of `k_ind * m` bits is read as the coefficients of a polynomial of
//! degree `k_ind - 1`, highest coefficient first and each coefficient
//! most-significant bit first. Bit `B_1` is therefore the top bit of the
//! leading coefficient, and a seed prefix fixes the top bits of the seed read
//! as one big integer.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::graph::Vertex;
use crate::rng;
use crate::{Error, Result};

/// Low-weight irreducible polynomials over GF(2): for each degree `m`, the
/// exponents strictly between 0 and `m`. The polynomial is `x^m + Σ x^e + 1`.
const IRREDUCIBLE: [&[u32]; 33] = [
    &[],
    &[],
    &[1],
    &[1],
    &[1],
    &[2],
    &[1],
    &[1],
    &[4, 3, 1],
    &[1],
    &[3],
    &[2],
    &[3],
    &[4, 3, 1],
    &[5],
    &[1],
    &[5, 3, 1],
    &[3],
    &[3],
    &[5, 2, 1],
    &[3],
    &[2],
    &[1],
    &[5],
    &[4, 3, 1],
    &[3],
    &[4, 3, 1],
    &[5, 2, 1],
    &[1],
    &[2],
    &[1],
    &[3],
    &[7, 3, 2],
];

pub const MAX_FIELD_BITS: u32 = 32;

/// The reduction polynomial of GF(2^m), including the `x^m` term.
pub fn modulus(m: u32) -> u64 {
    let mut p = (1u64 << m) | 1;
    for &e in IRREDUCIBLE[m as usize] {
        p |= 1 << e;
    }
    p
}

/// Product in GF(2^m).
#[inline]
pub fn gf_mul(mut a: u64, mut b: u64, m: u32) -> u64 {
    let low = modulus(m) & !(1u64 << m);
    let top = 1u64 << (m - 1);
    let mask = if m == 64 { u64::MAX } else { (1u64 << m) - 1 };
    let mut acc = 0;
    while b != 0 {
        if b & 1 == 1 {
            acc ^= a;
        }
        b >>= 1;
        let carry = a & top != 0;
        a = (a << 1) & mask;
        if carry {
            a ^= low;
        }
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HashFamily {
    pub a: u32,
    pub b: u32,
    pub k_ind: u32,
    pub m: u32,
}

impl HashFamily {
    pub fn new(a: u32, b: u32, k_ind: u32) -> Result<HashFamily> {
        let m = a.max(b);
        if a == 0 || b == 0 || k_ind == 0 || m > MAX_FIELD_BITS {
            return Err(Error::InvalidParameter(format!("hash family a={a} b={b} k={k_ind}")));
        }
        Ok(HashFamily { a, b, k_ind, m })
    }

    /// Seed length `γ = k_ind * m`.
    pub fn gamma(&self) -> u32 {
        self.k_ind * self.m
    }

    /// Coefficients `c_{k-1}, ..., c_0` read from the seed.
    pub fn coefficients(&self, seed: &[bool]) -> Vec<u64> {
        assert_eq!(seed.len(), self.gamma() as usize, "seed length");
        seed.chunks(self.m as usize).map(|c| c.iter().fold(0u64, |acc, &b| acc << 1 | b as u64)).collect()
    }

    /// `h(x)`: the polynomial evaluated at `x`, truncated to the low `b` bits.
    pub fn eval(&self, seed: &[bool], x: u64) -> u64 {
        self.eval_coeffs(&self.coefficients(seed), x)
    }

    #[inline]
    pub fn eval_coeffs(&self, coeffs: &[u64], x: u64) -> u64 {
        debug_assert!(x >> self.a == 0, "input {x} wider than {} bits", self.a);
        let mut h = 0u64;
        for &c in coeffs {
            h = gf_mul(h, x, self.m) ^ c;
        }
        if self.b >= 64 {
            h
        } else {
            h & ((1u64 << self.b) - 1)
        }
    }
}

/// Sampling rule `X_w = [h(w) <= T]`, stored as the number of accepted outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Threshold {
    accept: u64,
}

impl Threshold {
    /// `X_w = 1` iff `h(w) <= t`.
    pub fn at_most(t: u64) -> Threshold {
        Threshold { accept: t.saturating_add(1) }
    }

    /// `X_w = 0` always.
    pub fn never() -> Threshold {
        Threshold { accept: 0 }
    }

    /// `X_w = 1` iff `h(w) < accept`.
    pub fn below(accept: u64) -> Threshold {
        Threshold { accept }
    }

    pub fn accept_count(&self) -> u64 {
        self.accept
    }

    #[inline]
    pub fn sampled(&self, h: u64) -> bool {
        h < self.accept
    }
}

#[derive(Debug, Clone, Copy)]
pub enum EventKind {
    /// No input in `vbl` is sampled (an undominated high-degree node).
    NoneSet,
    /// More than `cap` inputs in `vbl` are sampled (degree overflow).
    CountAbove(usize),
    AnySet,
    Custom(fn(&[bool]) -> bool),
}

impl PartialEq for EventKind {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (EventKind::NoneSet, EventKind::NoneSet) | (EventKind::AnySet, EventKind::AnySet) => true,
            (EventKind::CountAbove(a), EventKind::CountAbove(b)) => a == b,
            (EventKind::Custom(a), EventKind::Custom(b)) => core::ptr::fn_addr_eq(*a, *b),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventSpec {
    pub owner: Vertex,
    /// Identifiers whose sampling decisions the event reads.
    pub vbl: Vec<u64>,
    pub kind: EventKind,
}

impl EventSpec {
    pub fn holds(&self, x: &[bool]) -> bool {
        match self.kind {
            EventKind::NoneSet => x.iter().all(|&b| !b),
            EventKind::CountAbove(cap) => x.iter().filter(|&&b| b).count() > cap,
            EventKind::AnySet => x.iter().any(|&b| b),
            EventKind::Custom(f) => f(x),
        }
    }

    fn holds_count(&self, count: usize) -> Option<bool> {
        match self.kind {
            EventKind::NoneSet => Some(count == 0),
            EventKind::CountAbove(cap) => Some(count > cap),
            EventKind::AnySet => Some(count > 0),
            EventKind::Custom(_) => None,
        }
    }

    /// `Some(value)` if the outcome does not depend on the seed.
    fn constant(&self) -> Option<bool> {
        match self.kind {
            EventKind::NoneSet if self.vbl.is_empty() => Some(true),
            EventKind::AnySet if self.vbl.is_empty() => Some(false),
            EventKind::CountAbove(cap) if self.vbl.len() <= cap => Some(false),
            _ => None,
        }
    }
}

/// Outcome of all events under one fully fixed seed.
pub fn count_fired(family: &HashFamily, th: Threshold, seed: &[bool], events: &[EventSpec]) -> usize {
    let coeffs = family.coefficients(seed);
    events
        .iter()
        .filter(|e| {
            let x: Vec<bool> = e.vbl.iter().map(|&w| th.sampled(family.eval_coeffs(&coeffs, w))).collect();
            e.holds(&x)
        })
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ExpectationConfig {
    /// Enumerate all completions when at most this many seed bits are free.
    pub exact_threshold: u32,
    /// Completions sampled otherwise. Kept a power of two so expectations stay dyadic.
    pub sample_count: u32,
}

impl Default for ExpectationConfig {
    fn default() -> Self {
        ExpectationConfig { exact_threshold: 20, sample_count: 4096 }
    }
}

/// `num / 2^den_log2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dyadic {
    pub num: u128,
    pub den_log2: u32,
}

impl Dyadic {
    pub fn as_f64(&self) -> f64 {
        self.num as f64 / libm::exp2(self.den_log2 as f64)
    }

    /// Compares `self` and `other` exactly.
    pub fn cmp_exact(&self, other: &Dyadic) -> core::cmp::Ordering {
        let e = self.den_log2.max(other.den_log2);
        let a = self.num << (e - self.den_log2);
        let b = other.num << (e - other.den_log2);
        a.cmp(&b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Expectation {
    pub value: Dyadic,
    pub estimated: bool,
}

/// Per-event outcome tables over the completions of a seed prefix.
struct Tables {
    free: u32,
    /// One bitset of `2^free` bits per non-constant event, indexed by the
    /// completion read as an integer (first free bit most significant).
    bits: Vec<Vec<u64>>,
    owners: Vec<Vertex>,
    /// Constant events that always fire, by owner.
    always: Vec<Vertex>,
    estimated: bool,
}

impl Tables {
    fn len(&self) -> u64 {
        1u64 << self.free
    }

    /// Completions in `lo..hi` on which event `e` fires.
    fn count(&self, e: usize, lo: u64, hi: u64) -> u64 {
        popcount_range(&self.bits[e], lo, hi)
    }
}

fn popcount_range(bits: &[u64], lo: u64, hi: u64) -> u64 {
    let mut total = 0u64;
    let mut i = lo;
    while i < hi {
        let w = (i / 64) as usize;
        let off = i % 64;
        let take = (64 - off).min(hi - i);
        let word = bits[w] >> off;
        let word = if take == 64 { word } else { word & ((1u64 << take) - 1) };
        total += word.count_ones() as u64;
        i += take;
    }
    total
}

fn seed_with(prefix: &[bool], completion: u64, free: u32) -> Vec<bool> {
    let mut s = prefix.to_vec();
    for j in (0..free).rev() {
        s.push(completion >> j & 1 == 1);
    }
    s
}

fn split_events(events: &[EventSpec]) -> (Vec<usize>, Vec<Vertex>) {
    let mut live = Vec::new();
    let mut always = Vec::new();
    for (i, e) in events.iter().enumerate() {
        match e.constant() {
            Some(true) => always.push(e.owner),
            Some(false) => {}
            None => live.push(i),
        }
    }
    (live, always)
}

/// Builds exact tables over all completions of `prefix`.
fn exact_tables(family: &HashFamily, th: Threshold, prefix: &[bool], events: &[EventSpec]) -> Tables {
    let gamma = family.gamma();
    let free = gamma - prefix.len() as u32;
    let (live, always) = split_events(events);
    let words = ((1u64 << free) as usize).div_ceil(64);
    let mut bits = vec![vec![0u64; words]; live.len()];
    let fast = family.k_ind == 2 && family.b == family.m && live.iter().all(|&i| events[i].holds_count(0).is_some());
    if fast {
        fill_linear(family, th, prefix, events, &live, &mut bits);
    } else {
        let mut ids: Vec<u64> = live.iter().flat_map(|&i| events[i].vbl.iter().copied()).collect();
        ids.sort_unstable();
        ids.dedup();
        let idx: Vec<Vec<usize>> =
            live.iter().map(|&i| events[i].vbl.iter().map(|w| ids.binary_search(w).unwrap()).collect()).collect();
        let mut x = vec![false; ids.len()];
        let mut local = Vec::new();
        for c in 0..(1u64 << free) {
            let coeffs = family.coefficients(&seed_with(prefix, c, free));
            for (j, &w) in ids.iter().enumerate() {
                x[j] = th.sampled(family.eval_coeffs(&coeffs, w));
            }
            for (t, &i) in live.iter().enumerate() {
                local.clear();
                local.extend(idx[t].iter().map(|&j| x[j]));
                if events[i].holds(&local) {
                    bits[t][(c / 64) as usize] |= 1 << (c % 64);
                }
            }
        }
    }
    Tables { free, bits, owners: live.iter().map(|&i| events[i].owner).collect(), always, estimated: false }
}

/// Pairwise family `h(x) = c1 x + c0` with untruncated output. For a fixed
/// `c1`, `{c0 : h(w) < accept}` is a union of aligned dyadic blocks, so the
/// sampled count of every event across all `c0` comes from one difference
/// array per row.
fn fill_linear(
    family: &HashFamily,
    th: Threshold,
    prefix: &[bool],
    events: &[EventSpec],
    live: &[usize],
    bits: &mut [Vec<u64>],
) {
    let m = family.m;
    let free = family.gamma() - prefix.len() as u32;
    let size = 1u64 << m;
    let prefix_value = prefix.iter().fold(0u64, |acc, &b| acc << 1 | b as u64);
    let base = prefix_value << free;
    let (c1_base, c0_base) = (base >> m, base & (size - 1));
    let rows = if free >= m { 1u64 << (free - m) } else { 1 };
    let row_len = size.min(1u64 << free);
    let accept = th.accept_count().min(size);
    let mut diff = vec![0i32; size as usize + 1];
    for r in 0..rows {
        let c1 = c1_base + r;
        for (t, &i) in live.iter().enumerate() {
            diff.iter_mut().for_each(|d| *d = 0);
            for &w in &events[i].vbl {
                add_blocks(&mut diff, gf_mul(c1, w, m), accept, m);
            }
            let mut run = 0i32;
            for z in 0..c0_base + row_len {
                run += diff[z as usize];
                if z >= c0_base && events[i].holds_count(run as usize).unwrap() {
                    let idx = r * size + (z - c0_base);
                    bits[t][(idx / 64) as usize] |= 1 << (idx % 64);
                }
            }
        }
    }
}

/// Adds +1 on every `z` with `z ^ y < accept`.
fn add_blocks(diff: &mut [i32], y: u64, accept: u64, m: u32) {
    let size = 1u64 << m;
    if accept >= size {
        diff[0] += 1;
        diff[size as usize] -= 1;
        return;
    }
    for j in 0..m {
        if accept >> j & 1 == 0 {
            continue;
        }
        let high = ((accept ^ y) >> (j + 1)) << (j + 1);
        let lo = high | (y & (1 << j));
        let lo = lo & !((1u64 << j) - 1);
        diff[lo as usize] += 1;
        diff[(lo + (1 << j)) as usize] -= 1;
    }
}

/// Tables over a fixed pseudo-random sample of completions. Sample `s` is
/// shared between sibling prefixes: its free bits after the next one come
/// from a counter-derived stream keyed by the sample index only.
fn sampled_tables(
    family: &HashFamily,
    th: Threshold,
    prefix: &[bool],
    events: &[EventSpec],
    samples: u32,
    salt: u64,
) -> Tables {
    let gamma = family.gamma();
    let free = gamma - prefix.len() as u32;
    let (live, always) = split_events(events);
    let s_log = 32 - (samples.max(2) - 1).leading_zeros();
    let samples = 1u64 << s_log;
    // Index layout: top bit = next seed bit, remaining bits = sample index.
    let mut bits = vec![vec![0u64; ((2 * samples) as usize).div_ceil(64)]; live.len()];
    let mut ids: Vec<u64> = live.iter().flat_map(|&i| events[i].vbl.iter().copied()).collect();
    ids.sort_unstable();
    ids.dedup();
    let idx: Vec<Vec<usize>> =
        live.iter().map(|&i| events[i].vbl.iter().map(|w| ids.binary_search(w).unwrap()).collect()).collect();
    let mut x = vec![false; ids.len()];
    let mut local = Vec::new();
    for next in 0..2u64 {
        for s in 0..samples {
            let mut seed = prefix.to_vec();
            seed.push(next == 1);
            let mut r = rng::Rng::new(rng::key(&[salt, prefix.len() as u64, s]));
            for _ in 1..free {
                seed.push(r.next_u64() & 1 == 1);
            }
            let coeffs = family.coefficients(&seed);
            for (j, &w) in ids.iter().enumerate() {
                x[j] = th.sampled(family.eval_coeffs(&coeffs, w));
            }
            for (t, &i) in live.iter().enumerate() {
                local.clear();
                local.extend(idx[t].iter().map(|&j| x[j]));
                if events[i].holds(&local) {
                    let idx = next * samples + s;
                    bits[t][(idx / 64) as usize] |= 1 << (idx % 64);
                }
            }
        }
    }
    Tables { free: s_log + 1, bits, owners: live.iter().map(|&i| events[i].owner).collect(), always, estimated: true }
}

fn tables(
    family: &HashFamily,
    th: Threshold,
    prefix: &[bool],
    events: &[EventSpec],
    cfg: &ExpectationConfig,
    salt: u64,
) -> Tables {
    let free = family.gamma() - prefix.len() as u32;
    if free <= cfg.exact_threshold {
        exact_tables(family, th, prefix, events)
    } else {
        sampled_tables(family, th, prefix, events, cfg.sample_count, salt)
    }
}

/// Expected number of events that fire over uniformly random completions of
/// `prefix`; exact when few bits are free, otherwise a deterministic sample
/// estimate.
pub fn cond_expectation(
    family: &HashFamily,
    th: Threshold,
    prefix: &[bool],
    events: &[EventSpec],
    cfg: &ExpectationConfig,
) -> Expectation {
    let t = tables(family, th, prefix, events, cfg, 0);
    let total: u128 = (0..t.bits.len()).map(|e| t.count(e, 0, t.len()) as u128).sum::<u128>()
        + ((t.always.len() as u128) << t.free);
    Expectation { value: Dyadic { num: total, den_log2: t.free }, estimated: t.estimated }
}

/// Per-owner conditional expectations for both values of the next seed bit:
/// `(owner, α_{v,0}, α_{v,1})` as numerators over a common power of two.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitCandidates {
    pub per_owner: Vec<(Vertex, u128, u128)>,
    pub den_log2: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FixOutcome {
    pub seed: Vec<bool>,
    /// Seed bits fixed from sampled rather than exact expectations.
    pub estimated_bits: u32,
    /// Events that fire under the returned seed.
    pub fired: usize,
}

/// Sums `(α_0, α_1)` over owners. Distributed drivers replace this with a convergecast.
pub fn local_aggregate(c: &BitCandidates) -> Result<(u128, u128)> {
    Ok(c.per_owner.iter().fold((0, 0), |(a, b), &(_, x, y)| (a + x, b + y)))
}

/// Fixes the seed bit by bit, each time keeping the value with the smaller
/// aggregated conditional expectation (ties go to 0).
pub fn fix_seed<A>(
    family: &HashFamily,
    th: Threshold,
    events: &[EventSpec],
    cfg: &ExpectationConfig,
    salt: u64,
    mut aggregate: A,
) -> Result<FixOutcome>
where
    A: FnMut(&BitCandidates) -> Result<(u128, u128)>,
{
    let gamma = family.gamma();
    let mut prefix: Vec<bool> = Vec::with_capacity(gamma as usize);
    let mut estimated_bits = 0;
    while (prefix.len() as u32) < gamma {
        let free = gamma - prefix.len() as u32;
        if free <= cfg.exact_threshold {
            let t = exact_tables(family, th, &prefix, events);
            // Walk the remaining bits inside one set of exact tables.
            let mut lo = 0u64;
            let mut width = t.len();
            while width > 1 {
                let half = width / 2;
                let mut per_owner = Vec::with_capacity(t.owners.len() + t.always.len());
                for e in 0..t.bits.len() {
                    per_owner.push((t.owners[e], t.count(e, lo, lo + half) as u128, t.count(e, lo + half, lo + width) as u128));
                }
                for &o in &t.always {
                    per_owner.push((o, half as u128, half as u128));
                }
                per_owner.sort_by_key(|p| p.0);
                let c = BitCandidates { per_owner, den_log2: crate::floor_log2(half) };
                let (s0, s1) = aggregate(&c)?;
                if s1 < s0 {
                    prefix.push(true);
                    lo += half;
                } else {
                    prefix.push(false);
                }
                width = half;
            }
            break;
        }
        let t = sampled_tables(family, th, &prefix, events, cfg.sample_count, salt);
        let half = t.len() / 2;
        let mut per_owner = Vec::new();
        for e in 0..t.bits.len() {
            per_owner.push((t.owners[e], t.count(e, 0, half) as u128, t.count(e, half, t.len()) as u128));
        }
        for &o in &t.always {
            per_owner.push((o, half as u128, half as u128));
        }
        per_owner.sort_by_key(|p| p.0);
        let c = BitCandidates { per_owner, den_log2: crate::floor_log2(half) };
        let (s0, s1) = aggregate(&c)?;
        prefix.push(s1 < s0);
        estimated_bits += 1;
    }
    let fired = count_fired(family, th, &prefix, events);
    if fired > 0 && estimated_bits == 0 {
        return Err(Error::Invariant(format!(
            "exact seed fixing ended with {fired} events firing; the initial expectation was not below 1"
        )));
    }
    Ok(FixOutcome { seed: prefix, estimated_bits, fired })
}

/// `γ:hex`, bits packed most significant first, zero padded to whole nibbles.
pub fn seed_to_hex(seed: &[bool]) -> String {
    let mut s = format!("{}:", seed.len());
    for chunk in seed.chunks(4) {
        let mut v = 0u32;
        for (i, &b) in chunk.iter().enumerate() {
            v |= (b as u32) << (3 - i);
        }
        s.push(core::char::from_digit(v, 16).unwrap());
    }
    s
}

pub fn seed_from_hex(s: &str) -> Result<Vec<bool>> {
    let (len, hex) = s.split_once(':').ok_or_else(|| Error::InvalidParameter(format!("seed dump {s}")))?;
    let len: usize = len.parse().map_err(|_| Error::InvalidParameter(format!("seed length {len}")))?;
    let mut bits = Vec::with_capacity(hex.len() * 4);
    for ch in hex.chars() {
        let v = ch.to_digit(16).ok_or_else(|| Error::InvalidParameter(format!("hex digit {ch}")))?;
        for i in (0..4).rev() {
            bits.push(v >> i & 1 == 1);
        }
    }
    if bits.len() < len || bits.len() >= len + 4 {
        return Err(Error::InvalidParameter(format!("seed dump length mismatch in {s}")));
    }
    bits.truncate(len);
    Ok(bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly_mod(mut a: u128, p: u128) -> u128 {
        let dp = 127 - p.leading_zeros();
        while a != 0 && 127 - a.leading_zeros() >= dp {
            a ^= p << (127 - a.leading_zeros() - dp);
        }
        a
    }

    fn poly_gcd(mut a: u128, mut b: u128) -> u128 {
        while b != 0 {
            let r = poly_mod(a, b);
            a = b;
            b = r;
        }
        a
    }

    /// `x^(2^e) mod p`, by repeated squaring in the ring GF(2)[x]/(p).
    fn frobenius(e: u32, p: u128) -> u128 {
        let mut x: u128 = 2;
        for _ in 0..e {
            let mut sq = 0u128;
            for i in 0..64 {
                if x >> i & 1 == 1 {
                    sq ^= 1 << (2 * i);
                }
            }
            x = poly_mod(sq, p);
        }
        x
    }

    #[test]
    fn table_polynomials_are_irreducible() {
        // Rabin's test.
        for m in 1..=32u32 {
            let p = modulus(m) as u128;
            assert_eq!(frobenius(m, p), poly_mod(2, p), "m={m}");
            for q in 2..=m {
                if m % q == 0 && (2..q).all(|d| q % d != 0) {
                    let h = frobenius(m / q, p) ^ 2;
                    assert_eq!(poly_gcd(p, poly_mod(h, p)), 1, "m={m} q={q}");
                }
            }
        }
    }

    #[test]
    fn field_multiplication_has_inverses() {
        for m in 1..=8 {
            for a in 1..(1u64 << m) {
                assert!((1..(1u64 << m)).any(|b| gf_mul(a, b, m) == 1), "m={m} a={a}");
            }
        }
    }

    fn seed_of(value: u64, gamma: u32) -> Vec<bool> {
        (0..gamma).rev().map(|i| value >> i & 1 == 1).collect()
    }

    #[test]
    fn constant_polynomial() {
        let f = HashFamily::new(3, 2, 1).unwrap();
        let seed = seed_of(0b110, 3);
        for x in 0..8 {
            assert_eq!(f.eval(&seed, x), 0b10);
        }
    }

    #[test]
    fn pairwise_uniform_on_two_bits() {
        let f = HashFamily::new(2, 2, 2).unwrap();
        for x in 0..4 {
            for y in 0..4 {
                if x == y {
                    continue;
                }
                let mut counts = [[0u32; 4]; 4];
                for s in 0..16 {
                    let seed = seed_of(s, 4);
                    counts[f.eval(&seed, x) as usize][f.eval(&seed, y) as usize] += 1;
                }
                assert!(counts.iter().flatten().all(|&c| c == 1));
            }
        }
    }

    #[test]
    fn threshold_semantics() {
        let f = HashFamily::new(3, 3, 2).unwrap();
        let th = Threshold::at_most(7);
        for s in 0..64 {
            let seed = seed_of(s, 6);
            assert!((0..8).all(|x| th.sampled(f.eval(&seed, x))));
        }
        assert!(!Threshold::never().sampled(0));
    }

    fn ev(owner: usize, vbl: &[u64], kind: EventKind) -> EventSpec {
        EventSpec { owner, vbl: vbl.to_vec(), kind }
    }

    #[test]
    fn expectations() {
        let f = HashFamily::new(3, 3, 2).unwrap();
        let cfg = ExpectationConfig::default();
        let any = [ev(0, &[5], EventKind::AnySet)];
        let full = seed_of(0b101_011, 6);
        let e = cond_expectation(&f, Threshold::at_most(3), &full, &any, &cfg);
        assert_eq!(e.value.den_log2, 0);
        assert_eq!(e.value.num as usize, count_fired(&f, Threshold::at_most(3), &full, &any));
        // X = [h <= 2^(b-1) - 1] has probability exactly 1/2.
        let half = cond_expectation(&f, Threshold::at_most(3), &[], &any, &cfg);
        assert_eq!(half.value.cmp_exact(&Dyadic { num: 1, den_log2: 1 }), core::cmp::Ordering::Equal);
        assert!(!half.estimated);
        // Inclusive threshold T = 2^(b-1) accepts one extra output: 5/8.
        let incl = cond_expectation(&f, Threshold::at_most(4), &[], &any, &cfg);
        assert_eq!(incl.value.cmp_exact(&Dyadic { num: 5, den_log2: 3 }), core::cmp::Ordering::Equal);
    }

    #[test]
    fn two_event_expectation_matches_enumeration() {
        let f = HashFamily::new(3, 3, 2).unwrap();
        let th = Threshold::at_most(2);
        let events = [ev(0, &[1, 2, 3], EventKind::NoneSet), ev(1, &[2, 4, 6], EventKind::CountAbove(1))];
        let brute: usize = (0..64).map(|s| count_fired(&f, th, &seed_of(s, 6), &events)).sum();
        let e = cond_expectation(&f, th, &[], &events, &ExpectationConfig::default());
        assert_eq!(e.value, Dyadic { num: brute as u128, den_log2: 6 });
        let prefix = [true, false];
        let brute: usize = (0..16).map(|s| count_fired(&f, th, &seed_of(0b10 << 4 | s, 6), &events)).sum();
        assert_eq!(
            cond_expectation(&f, th, &prefix, &events, &ExpectationConfig::default()).value,
            Dyadic { num: brute as u128, den_log2: 4 }
        );
    }

    #[test]
    fn linear_fast_path_matches_generic() {
        let f = HashFamily::new(5, 5, 2).unwrap();
        let th = Threshold::at_most(6);
        let events = vec![
            ev(0, &[1, 2, 3, 9, 17], EventKind::NoneSet),
            ev(1, &[2, 4, 6, 8, 10, 12], EventKind::CountAbove(2)),
            ev(2, &[31], EventKind::AnySet),
        ];
        let mut custom = events.clone();
        custom.push(ev(3, &[7], EventKind::Custom(|_| false)));
        for prefix_len in [0usize, 3, 5, 7] {
            let prefix: Vec<bool> = (0..prefix_len).map(|i| i % 3 == 1).collect();
            let fast = exact_tables(&f, th, &prefix, &events);
            let slow = exact_tables(&f, th, &prefix, &custom);
            for e in 0..events.len() {
                assert_eq!(fast.bits[e], slow.bits[e], "prefix {prefix_len} event {e}");
            }
        }
    }

    #[test]
    fn fix_seed_avoids_single_event() {
        let f = HashFamily::new(3, 3, 2).unwrap();
        let th = Threshold::at_most(3);
        let events = [ev(0, &[5], EventKind::AnySet)];
        let out = fix_seed(&f, th, &events, &ExpectationConfig::default(), 0, local_aggregate).unwrap();
        assert!(f.eval(&out.seed, 5) > 3);
        assert_eq!(out.fired, 0);
        let none = fix_seed(&f, th, &[], &ExpectationConfig::default(), 0, local_aggregate).unwrap();
        assert!(none.seed.iter().all(|&b| !b));
    }

    #[test]
    fn estimated_mode_is_flagged() {
        let f = HashFamily::new(4, 4, 3).unwrap();
        let th = Threshold::at_most(3);
        let events = [ev(0, &[1, 2, 3, 4], EventKind::CountAbove(2))];
        let cfg = ExpectationConfig { exact_threshold: 8, sample_count: 256 };
        let e = cond_expectation(&f, th, &[], &events, &cfg);
        assert!(e.estimated);
        let out = fix_seed(&f, th, &events, &cfg, 9, local_aggregate).unwrap();
        assert_eq!(out.estimated_bits, 4);
        assert_eq!(out.fired, 0);
    }

    #[test]
    fn hex_round_trip() {
        let seed: Vec<bool> = (0..13).map(|i| i % 3 == 0).collect();
        let h = seed_to_hex(&seed);
        assert_eq!(seed_from_hex(&h).unwrap(), seed);
        assert!(seed_from_hex("5:zz").is_err());
    }
}
