//! Experiment descriptors, per-seed runs with oracle verdicts, sweeps and
//! the CSV/JSON report formats.

use anyhow::{bail, Result};
use powersim_core::graph::{members, Graph};
use powersim_core::mis::{
    check_shatter_outcome, luby_gk, mis_g_shattering, mis_gk, preshatter, MisParams, ShatterApproach,
};
use powersim_core::netdecomp::{decompose, NdQuality};
use powersim_core::ruling::{awerbuch_ruling_set, beta_ruling_set_gk, k_ruling_set_of_gk, DistanceColoring};
use powersim_core::sparsify::{sparsify_power, sparsify_with_nd, Profile, SparsifyParams, StageMode};
use powersim_core::verify::{check_degree_cap, check_mis, check_power_mis, check_ruling_set};
use powersim_core::{RoundReport, SimConfig, Vertex};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::io::GraphSource;

/// First line of every results CSV.
pub const CSV_SCHEMA: &str = "# powersim results v1";
/// First line of every sweep CSV.
pub const SWEEP_SCHEMA: &str = "# powersim sweep v1";
pub const DETAIL_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Algorithm {
    /// Sparsify `G^k` starting from all of `V`.
    Sparsify,
    /// Sparsification one decomposition color at a time.
    SparsifyNd,
    /// Awerbuch-style ruling set of `G^k` from identifier digits.
    Awerbuch,
    /// `(k+1, k²)`-ruling set via sparsification and a local MIS.
    KRulingSet,
    /// `(k+1, β·k)`-ruling set by sampling.
    BetaRuling,
    Luby,
    /// MIS of `G^k` by shattering.
    MisGk,
    MisGTwoPhase,
    MisGOnePhase,
    /// Only the BeepingMIS shattering phase.
    Preshatter,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Sparsify => "sparsify",
            Algorithm::SparsifyNd => "sparsify_nd",
            Algorithm::Awerbuch => "awerbuch",
            Algorithm::KRulingSet => "k_ruling_set",
            Algorithm::BetaRuling => "beta_ruling",
            Algorithm::Luby => "luby",
            Algorithm::MisGk => "mis_gk",
            Algorithm::MisGTwoPhase => "mis_g_two_phase",
            Algorithm::MisGOnePhase => "mis_g_one_phase",
            Algorithm::Preshatter => "preshatter",
        }
    }

    fn on_g_only(self) -> bool {
        matches!(self, Algorithm::MisGTwoPhase | Algorithm::MisGOnePhase)
    }

    fn uses_sparsifier(self) -> bool {
        matches!(self, Algorithm::Sparsify | Algorithm::SparsifyNd | Algorithm::KRulingSet)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ProfileName {
    Paper,
    #[default]
    Desk,
}

impl ProfileName {
    pub fn params(self) -> SparsifyParams {
        SparsifyParams::for_profile(match self {
            ProfileName::Paper => Profile::Paper,
            ProfileName::Desk => Profile::Desk,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            ProfileName::Paper => "paper",
            ProfileName::Desk => "desk",
        }
    }
}

fn default_beta() -> u32 {
    2
}

fn default_base() -> u64 {
    2
}

/// One graph source, one algorithm, a list of seeds. Each seed generates its
/// own graph (or, for files, its own identifiers) and drives the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub graph: String,
    pub algorithm: Algorithm,
    pub k: u32,
    #[serde(default)]
    pub profile: ProfileName,
    pub seeds: Vec<u64>,
    /// Overrides the default per-edge budget.
    #[serde(default)]
    pub bandwidth: Option<u32>,
    /// For `beta_ruling`.
    #[serde(default = "default_beta")]
    pub beta: u32,
    /// Digit base for `awerbuch`.
    #[serde(default = "default_base")]
    pub base: u64,
}

impl Experiment {
    pub fn new(graph: &str, algorithm: Algorithm, k: u32, seeds: Vec<u64>) -> Experiment {
        Experiment {
            graph: graph.to_string(),
            algorithm,
            k,
            profile: ProfileName::Desk,
            seeds,
            bandwidth: None,
            beta: default_beta(),
            base: default_base(),
        }
    }

    /// Rejects parameter combinations no run could use.
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            bail!("k must be at least 1");
        }
        if self.algorithm.on_g_only() && self.k != 1 {
            bail!("{} works on G itself; use k = 1", self.algorithm.name());
        }
        if self.algorithm == Algorithm::BetaRuling && self.beta < 2 {
            bail!("beta must be at least 2");
        }
        if self.algorithm == Algorithm::Awerbuch && self.base < 2 {
            bail!("base must be at least 2");
        }
        if self.bandwidth == Some(0) {
            bail!("bandwidth must be positive");
        }
        GraphSource::parse(&self.graph)?;
        Ok(())
    }

    pub fn config(&self, n: usize, seed: u64) -> SimConfig {
        let mut cfg = if self.algorithm.uses_sparsifier() {
            self.profile.params().config(n, seed)
        } else {
            SimConfig::for_n(n, seed)
        };
        if let Some(b) = self.bandwidth {
            cfg.bandwidth_bits = b;
        }
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// Oracles accepted the output.
    Pass,
    /// The output came back but an oracle rejected it.
    Fail,
    /// The algorithm aborted (bandwidth, timeout, failed internal check).
    Error,
}

/// One CSV line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub seed: u64,
    pub graph: String,
    pub n: usize,
    pub m: usize,
    pub max_degree: usize,
    pub k: u32,
    pub algorithm: String,
    pub profile: String,
    pub bandwidth: u32,
    pub set_size: usize,
    /// Claimed minimum distance inside the set, if the output claims one.
    pub alpha: Option<u32>,
    /// Claimed domination distance, if the output claims one.
    pub beta: Option<u32>,
    pub rounds: u64,
    pub max_bits: u32,
    pub total_bits: u64,
    pub messages: u64,
    pub nd_oracle_used: bool,
    pub verdict: Verdict,
    pub note: String,
}

pub const ROW_FIELDS: &[&str] = &[
    "seed",
    "graph",
    "n",
    "m",
    "max_degree",
    "k",
    "algorithm",
    "profile",
    "bandwidth",
    "set_size",
    "alpha",
    "beta",
    "rounds",
    "max_bits",
    "total_bits",
    "messages",
    "nd_oracle_used",
    "verdict",
    "note",
];

/// Full record of one run, written as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detail {
    pub schema: u32,
    pub experiment: Experiment,
    pub seed: u64,
    pub config: SimConfig,
    pub row: Row,
    pub set: Vec<Vertex>,
    pub violations: Vec<String>,
    pub degraded_pipelining: bool,
    /// Algorithm-specific records.
    pub extra: Value,
}

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub rows: Vec<Row>,
    pub details: Vec<Detail>,
}

impl Outcome {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.verdict == Verdict::Pass)
    }
}

struct Produced {
    set: Vec<Vertex>,
    alpha: Option<u32>,
    beta: Option<u32>,
    report: RoundReport,
    ok: bool,
    note: String,
    extra: Value,
}

fn ruling_note(r: &powersim_core::verify::RulingReport) -> String {
    if r.pass {
        String::new()
    } else {
        format!("too_close={:?} undominated={:?}", r.too_close, r.undominated)
    }
}

fn execute(exp: &Experiment, g: &Graph, cfg: &SimConfig) -> powersim_core::Result<Produced> {
    let k = exp.k;
    let all = vec![true; g.n()];
    let everyone: Vec<Vertex> = (0..g.n()).collect();
    let params = exp.profile.params();
    Ok(match exp.algorithm {
        Algorithm::Sparsify | Algorithm::SparsifyNd => {
            let res = if exp.algorithm == Algorithm::Sparsify {
                sparsify_power(g, k, &all, &params, StageMode::Derandomized, cfg)?
            } else {
                let nd = decompose(g, &all, 2 * k + 1, NdQuality::Greedy)?;
                sparsify_with_nd(g, k, &all, &params, &nd, StageMode::Derandomized, cfg)?
            };
            let set = members(&res.q);
            let cap = check_degree_cap(g, &set, k, res.cap);
            let dom = check_ruling_set(g, &set, 1, res.claimed_domination);
            let mut note = String::new();
            if !cap.pass {
                note = format!("degree {} > cap {} at v{:?}", cap.max, res.cap, cap.argmax);
            } else if !dom.pass {
                note = ruling_note(&dom);
            }
            Produced {
                ok: cap.pass && dom.pass,
                alpha: None,
                beta: Some(res.claimed_domination),
                note,
                extra: json!({ "cap": res.cap, "max_power_degree": cap.max, "iterations": res.iterations }),
                set,
                report: res.report,
            }
        }
        Algorithm::Awerbuch | Algorithm::KRulingSet => {
            let res = if exp.algorithm == Algorithm::Awerbuch {
                awerbuch_ruling_set(g, k, &DistanceColoring::from_ids(g, k), exp.base, cfg)?
            } else {
                k_ruling_set_of_gk(g, k, &params, cfg)?
            };
            let check = res.check(g);
            Produced {
                ok: check.pass,
                alpha: Some(res.alpha),
                beta: Some(res.beta),
                note: ruling_note(&check),
                extra: json!({ "max_distance": check.max_distance }),
                set: res.set,
                report: res.report,
            }
        }
        Algorithm::BetaRuling => {
            let res = beta_ruling_set_gk(g, k, exp.beta, cfg)?;
            let check = res.ruling.check(g);
            Produced {
                ok: check.pass,
                alpha: Some(res.ruling.alpha),
                beta: Some(res.ruling.beta),
                note: ruling_note(&check),
                extra: json!({ "schedule": res.schedule, "set_sizes": res.set_sizes, "retries": res.retries }),
                set: res.ruling.set,
                report: res.ruling.report,
            }
        }
        Algorithm::Luby => {
            let res = luby_gk(g, k, &all, 3, cfg)?;
            let ok = check_power_mis(g, k, &res.set);
            Produced {
                ok,
                alpha: Some(k + 1),
                beta: Some(k),
                note: if ok { String::new() } else { "not an MIS of G^k".into() },
                extra: json!({ "phases": res.phases }),
                set: res.set,
                report: res.report,
            }
        }
        Algorithm::MisGk | Algorithm::MisGTwoPhase | Algorithm::MisGOnePhase => {
            let mp = MisParams::default();
            let res = match exp.algorithm {
                Algorithm::MisGk => mis_gk(g, k, &mp, cfg)?,
                Algorithm::MisGTwoPhase => mis_g_shattering(g, ShatterApproach::TwoPhase, &mp, cfg)?,
                _ => mis_g_shattering(g, ShatterApproach::OnePhase, &mp, cfg)?,
            };
            let ok = if k == 1 { check_mis(g, &res.set) } else { check_power_mis(g, k, &res.set) };
            Produced {
                ok,
                alpha: Some(k + 1),
                beta: Some(k),
                note: if ok { String::new() } else { "not an MIS of G^k".into() },
                extra: json!({ "stats": res.stats }),
                set: res.set,
                report: res.report,
            }
        }
        Algorithm::Preshatter => {
            let mp = MisParams::default();
            let out = preshatter(g, k, mp.s_conn, mp.c_pre, cfg)?;
            let ok = check_shatter_outcome(g, k, &everyone, &out);
            let largest = out.components.iter().map(Vec::len).max().unwrap_or(0);
            Produced {
                ok,
                alpha: Some(k + 1),
                beta: None,
                note: if ok { String::new() } else { "shattering outcome inconsistent".into() },
                extra: json!({ "steps": out.steps, "undecided": out.undecided.len(), "largest_component": largest }),
                set: out.independent,
                report: out.report,
            }
        }
    })
}

/// Runs one seed. Usage errors (bad graph source) come back as `Err`;
/// algorithm failures become a row with verdict `error`.
pub fn run_seed(exp: &Experiment, seed: u64) -> Result<(Row, Detail)> {
    let g = GraphSource::parse(&exp.graph)?.load(seed)?;
    let cfg = exp.config(g.n(), seed);
    let mut row = Row {
        seed,
        graph: exp.graph.clone(),
        n: g.n(),
        m: g.m(),
        max_degree: g.max_degree(),
        k: exp.k,
        algorithm: exp.algorithm.name().to_string(),
        profile: exp.profile.name().to_string(),
        bandwidth: cfg.bandwidth_bits,
        set_size: 0,
        alpha: None,
        beta: None,
        rounds: 0,
        max_bits: 0,
        total_bits: 0,
        messages: 0,
        nd_oracle_used: false,
        verdict: Verdict::Error,
        note: String::new(),
    };
    let mut detail = Detail {
        schema: DETAIL_SCHEMA,
        experiment: exp.clone(),
        seed,
        config: cfg.clone(),
        row: row.clone(),
        set: Vec::new(),
        violations: Vec::new(),
        degraded_pipelining: false,
        extra: Value::Null,
    };
    match execute(exp, &g, &cfg) {
        Ok(p) => {
            row.set_size = p.set.len();
            row.alpha = p.alpha;
            row.beta = p.beta;
            row.rounds = p.report.rounds_used;
            row.max_bits = p.report.max_bits_on_edge;
            row.total_bits = p.report.total_bits;
            row.messages = p.report.messages;
            row.nd_oracle_used = p.report.nd_oracle_used;
            row.verdict = if p.ok && p.report.max_bits_on_edge <= cfg.bandwidth_bits {
                Verdict::Pass
            } else {
                Verdict::Fail
            };
            row.note = p.note;
            detail.set = p.set;
            detail.violations = p.report.violations;
            detail.degraded_pipelining = p.report.degraded_pipelining;
            detail.extra = p.extra;
        }
        Err(e) => row.note = e.to_string(),
    }
    detail.row = row.clone();
    Ok((row, detail))
}

pub fn run_experiment(exp: &Experiment) -> Result<Outcome> {
    exp.validate()?;
    let mut out = Outcome::default();
    for &seed in &exp.seeds {
        let (row, detail) = run_seed(exp, seed)?;
        out.rows.push(row);
        out.details.push(detail);
    }
    out.rows.sort_by_key(|r| r.seed);
    out.details.sort_by_key(|d| d.seed);
    Ok(out)
}

fn csv_text<T: Serialize>(schema: &str, fields: &[&str], rows: &[T]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(fields)?;
    for r in rows {
        w.serialize(r)?;
    }
    let body = String::from_utf8(w.into_inner()?)?;
    Ok(format!("{schema}\n{body}"))
}

pub fn rows_to_csv(rows: &[Row]) -> Result<String> {
    csv_text(CSV_SCHEMA, ROW_FIELDS, rows)
}

pub fn rows_from_csv(text: &str) -> Result<Vec<Row>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn details_to_json(details: &[Detail]) -> Result<String> {
    Ok(serde_json::to_string_pretty(details)? + "\n")
}

/// A cartesian sweep over sizes and `k` for one graph family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    /// `gnp`, `regular`, `path`, `cycle`, `star`, `complete` or `empty`.
    pub family: String,
    /// `p` for `gnp`, `d` for `regular`.
    #[serde(default)]
    pub param: Option<String>,
    pub sizes: Vec<usize>,
    pub ks: Vec<u32>,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub profile: ProfileName,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub bandwidth: Option<u32>,
    #[serde(default = "default_beta")]
    pub beta: u32,
    #[serde(default = "default_base")]
    pub base: u64,
}

/// Lower medians over one sweep cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub graph: String,
    pub n: usize,
    pub k: u32,
    pub algorithm: String,
    pub profile: String,
    pub runs: usize,
    pub passed: usize,
    pub median_rounds: u64,
    pub median_max_bits: u32,
    pub median_total_bits: u64,
    pub median_messages: u64,
    pub median_set_size: usize,
}

pub const CELL_FIELDS: &[&str] = &[
    "graph",
    "n",
    "k",
    "algorithm",
    "profile",
    "runs",
    "passed",
    "median_rounds",
    "median_max_bits",
    "median_total_bits",
    "median_messages",
    "median_set_size",
];

fn lower_median<T: Ord + Copy + Default>(mut xs: Vec<T>) -> T {
    xs.sort_unstable();
    if xs.is_empty() {
        T::default()
    } else {
        xs[(xs.len() - 1) / 2]
    }
}

impl Sweep {
    pub fn graph_spec(&self, n: usize) -> Result<String> {
        let param = || self.param.clone().ok_or_else(|| anyhow::anyhow!("family {} needs a parameter", self.family));
        Ok(match self.family.as_str() {
            "gnp" | "regular" => format!("{}:{n}:{}", self.family, param()?),
            "path" | "cycle" | "star" | "complete" | "empty" => format!("{}:{n}", self.family),
            other => bail!("unsupported sweep family `{other}`"),
        })
    }

    pub fn experiments(&self) -> Result<Vec<Experiment>> {
        let mut out = Vec::new();
        for &n in &self.sizes {
            for &k in &self.ks {
                out.push(Experiment {
                    graph: self.graph_spec(n)?,
                    algorithm: self.algorithm,
                    k,
                    profile: self.profile,
                    seeds: self.seeds.clone(),
                    bandwidth: self.bandwidth,
                    beta: self.beta,
                    base: self.base,
                });
            }
        }
        Ok(out)
    }
}

/// Runs every cell; returns per-cell medians and the underlying outcome.
pub fn run_sweep(sweep: &Sweep) -> Result<(Vec<Cell>, Outcome)> {
    let mut cells = Vec::new();
    let mut all = Outcome::default();
    for exp in sweep.experiments()? {
        let out = run_experiment(&exp)?;
        let r = &out.rows;
        cells.push(Cell {
            graph: exp.graph.clone(),
            n: r.first().map_or(0, |x| x.n),
            k: exp.k,
            algorithm: exp.algorithm.name().to_string(),
            profile: exp.profile.name().to_string(),
            runs: r.len(),
            passed: r.iter().filter(|x| x.verdict == Verdict::Pass).count(),
            median_rounds: lower_median(r.iter().map(|x| x.rounds).collect()),
            median_max_bits: lower_median(r.iter().map(|x| x.max_bits).collect()),
            median_total_bits: lower_median(r.iter().map(|x| x.total_bits).collect()),
            median_messages: lower_median(r.iter().map(|x| x.messages).collect()),
            median_set_size: lower_median(r.iter().map(|x| x.set_size).collect()),
        });
        all.rows.extend(out.rows);
        all.details.extend(out.details);
    }
    Ok((cells, all))
}

pub fn cells_to_csv(cells: &[Cell]) -> Result<String> {
    csv_text(SWEEP_SCHEMA, CELL_FIELDS, cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_zero_is_rejected() {
        let e = Experiment::new("path:5", Algorithm::Luby, 0, vec![1]);
        assert!(run_experiment(&e).is_err());
        let e = Experiment::new("path:5", Algorithm::MisGTwoPhase, 2, vec![1]);
        assert!(e.validate().is_err());
    }

    #[test]
    fn csv_round_trip() {
        let e = Experiment::new("gnp:24:0.2", Algorithm::Luby, 2, vec![1, 2]);
        let out = run_experiment(&e).unwrap();
        assert!(out.all_pass());
        let text = rows_to_csv(&out.rows).unwrap();
        assert!(text.starts_with(CSV_SCHEMA));
        assert_eq!(rows_from_csv(&text).unwrap(), out.rows);
    }

    #[test]
    fn medians() {
        assert_eq!(lower_median(vec![5u64, 1, 3, 9]), 3);
        assert_eq!(lower_median(Vec::<u64>::new()), 0);
    }

    #[test]
    fn empty_sweep_is_header_only() {
        let s = Sweep {
            family: "gnp".into(),
            param: Some("0.1".into()),
            sizes: vec![],
            ks: vec![1],
            algorithm: Algorithm::Luby,
            profile: ProfileName::Desk,
            seeds: vec![1],
            bandwidth: None,
            beta: 2,
            base: 2,
        };
        let (cells, _) = run_sweep(&s).unwrap();
        let text = cells_to_csv(&cells).unwrap();
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn tight_bandwidth_is_an_error_row() {
        let mut e = Experiment::new("gnp:32:0.2", Algorithm::Sparsify, 1, vec![3]);
        e.bandwidth = Some(2);
        let out = run_experiment(&e).unwrap();
        assert_eq!(out.rows[0].verdict, Verdict::Error);
        assert!(!out.all_pass());
    }
}
