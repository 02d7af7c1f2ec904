use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use powersim::experiment::{
    cells_to_csv, details_to_json, rows_to_csv, run_experiment, run_sweep, Algorithm, Detail, Experiment, ProfileName, Sweep,
};
use powersim::io::{format_edge_list, parse_list, parse_vertex_set, GraphSource};
use powersim_core::verify::{check_power_mis, check_ruling_set};
use serde_json::json;

#[derive(Parser)]
#[command(name = "powersim", version, about = "CONGEST simulations of ruling sets and MIS on graph powers")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct Shared {
    #[arg(long, value_enum, default_value = "desk")]
    profile: ProfileName,
    /// Seeds as `a..b` (inclusive) or `a,b,c`.
    #[arg(long, default_value = "1")]
    seeds: String,
    /// Per-edge bits per round; defaults depend on the algorithm.
    #[arg(long)]
    bandwidth: Option<u32>,
    /// β for `beta_ruling`.
    #[arg(long, default_value_t = 2)]
    beta: u32,
    /// Digit base for `awerbuch`.
    #[arg(long, default_value_t = 2)]
    base: u64,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a generated graph as an edge list.
    Generate {
        /// e.g. `gnp:64:0.1`, `regular:64:3`, `grid:4x5`, `path:10`.
        #[arg(long)]
        graph: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one algorithm over a list of seeds.
    Run {
        /// Generator spec or edge-list file.
        #[arg(long, required_unless_present = "descriptor")]
        graph: Option<String>,
        #[arg(long, value_enum, required_unless_present = "descriptor")]
        algo: Option<Algorithm>,
        #[arg(long, default_value_t = 1)]
        k: u32,
        /// JSON experiment descriptor; replaces the other run flags.
        #[arg(long, conflicts_with_all = ["graph", "algo"])]
        descriptor: Option<PathBuf>,
        #[command(flatten)]
        shared: Shared,
        /// Directory for `results.csv` and `details.json`; CSV goes to stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cartesian sweep over sizes and k, one CSV line of medians per cell.
    Sweep {
        #[arg(long)]
        family: String,
        /// `p` for gnp, `d` for regular.
        #[arg(long)]
        param: Option<String>,
        /// Sizes as `a..b` or `a,b,c`.
        #[arg(long)]
        sizes: String,
        #[arg(long, default_value = "1")]
        ks: String,
        #[arg(long, value_enum)]
        algo: Algorithm,
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a vertex set against a graph.
    Verify {
        #[arg(long)]
        graph: String,
        /// Vertex list (one index per line), JSON vertex array, or `details.json` from `run`.
        #[arg(long)]
        set: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Check an (alpha, beta)-ruling set.
        #[arg(long)]
        alpha: Option<u32>,
        #[arg(long)]
        beta: Option<u32>,
        /// Check a maximal independent set of G^k.
        #[arg(long, conflicts_with = "alpha")]
        mis: Option<u32>,
    },
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn apply(exp: &mut Experiment, s: &Shared) -> Result<()> {
    exp.profile = s.profile;
    exp.seeds = parse_list(&s.seeds)?;
    exp.bandwidth = s.bandwidth;
    exp.beta = s.beta;
    exp.base = s.base;
    Ok(())
}

/// `Ok(false)` means an oracle rejected something.
fn dispatch(cmd: Cmd) -> Result<bool> {
    match cmd {
        Cmd::Generate { graph, seed, out } => {
            let g = GraphSource::parse(&graph)?.load(seed)?;
            write_out(out.as_deref(), &format_edge_list(&g))?;
            Ok(true)
        }
        Cmd::Run { graph, algo, k, descriptor, shared, out } => {
            let exp = match descriptor {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
                }
                None => {
                    let (Some(graph), Some(algo)) = (graph, algo) else { bail!("--graph and --algo are required") };
                    let mut e = Experiment::new(&graph, algo, k, Vec::new());
                    apply(&mut e, &shared)?;
                    e
                }
            };
            let outcome = run_experiment(&exp)?;
            let csv = rows_to_csv(&outcome.rows)?;
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir)?;
                    write_out(Some(&dir.join("results.csv")), &csv)?;
                    write_out(Some(&dir.join("details.json")), &details_to_json(&outcome.details)?)?;
                }
                None => write_out(None, &csv)?,
            }
            for r in outcome.rows.iter().filter(|r| r.verdict != powersim::experiment::Verdict::Pass) {
                eprintln!("seed {}: {:?} {}", r.seed, r.verdict, r.note);
            }
            Ok(outcome.all_pass())
        }
        Cmd::Sweep { family, param, sizes, ks, algo, shared, out } => {
            let sweep = Sweep {
                family,
                param,
                sizes: parse_list(&sizes)?,
                ks: parse_list(&ks)?,
                algorithm: algo,
                profile: shared.profile,
                seeds: parse_list(&shared.seeds)?,
                bandwidth: shared.bandwidth,
                beta: shared.beta,
                base: shared.base,
            };
            let (cells, outcome) = run_sweep(&sweep)?;
            write_out(out.as_deref(), &cells_to_csv(&cells)?)?;
            Ok(outcome.all_pass())
        }
        Cmd::Verify { graph, set, seed, alpha, beta, mis } => {
            let g = GraphSource::parse(&graph)?.load(seed)?;
            let text = std::fs::read_to_string(&set).with_context(|| format!("reading {}", set.display()))?;
            let mut reports = Vec::new();
            let mut all_pass = true;
            for (i, rec) in result_records(&text)?.into_iter().enumerate() {
                if let Some(&v) = rec.set.iter().find(|&&v| v >= g.n()) {
                    bail!("record {i}: vertex {v} out of range for n = {}", g.n());
                }
                let (pass, report) = match (mis, alpha.or(rec.alpha), beta.or(rec.beta)) {
                    (Some(0), _, _) => bail!("k must be at least 1"),
                    (Some(k), _, _) => {
                        let pass = check_power_mis(&g, k, &rec.set);
                        (pass, json!({ "check": "mis", "k": k, "pass": pass, "size": rec.set.len() }))
                    }
                    (None, Some(a), Some(b)) => {
                        let r = check_ruling_set(&g, &rec.set, a, b);
                        (r.pass, json!({ "check": "ruling_set", "alpha": a, "beta": b, "report": r }))
                    }
                    (None, Some(a), None) => {
                        let r = check_ruling_set(&g, &rec.set, a, u32::MAX);
                        let pass = r.too_close.is_none();
                        (pass, json!({ "check": "independence", "alpha": a, "pass": pass, "too_close": r.too_close }))
                    }
                    (None, None, _) => bail!("record {i}: give --alpha and --beta, or --mis K"),
                };
                all_pass &= pass;
                reports.push(report);
            }
            println!("{}", serde_json::to_string_pretty(&reports)?);
            Ok(all_pass)
        }
    }
}

/// A set to check, with the claims its producer made, if known.
struct Record {
    set: Vec<usize>,
    alpha: Option<u32>,
    beta: Option<u32>,
}

/// Plain vertex lists, a JSON array of vertices, or detail records as
/// written by `run` (one object or an array).
fn result_records(text: &str) -> Result<Vec<Record>> {
    let t = text.trim_start();
    if !t.starts_with('[') && !t.starts_with('{') {
        return Ok(vec![Record { set: parse_vertex_set(text)?, alpha: None, beta: None }]);
    }
    let v: serde_json::Value = serde_json::from_str(t)?;
    let items = match v {
        serde_json::Value::Array(a) if a.iter().all(|x| x.is_u64()) => {
            let set = serde_json::from_value(serde_json::Value::Array(a))?;
            return Ok(vec![Record { set, alpha: None, beta: None }]);
        }
        serde_json::Value::Array(a) => a,
        other => vec![other],
    };
    items
        .into_iter()
        .map(|d| {
            let d: Detail = serde_json::from_value(d).context("not a detail record")?;
            // Sparsifier outputs claim no independence.
            let alpha = d.row.alpha.or(d.row.beta.map(|_| 1));
            Ok(Record { set: d.set, alpha, beta: d.row.beta })
        })
        .collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
