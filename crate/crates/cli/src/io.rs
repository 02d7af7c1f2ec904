//! Edge-list files and graph sources.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use powersim_core::graph::{generate, GraphKind};
use powersim_core::Graph;

/// Parses `n m` followed by `m` lines of `u v`. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse_edge_list(text: &str) -> Result<(usize, Vec<(usize, usize)>)> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (ln, header) = lines.next().ok_or_else(|| anyhow!("empty graph file"))?;
    let (n, m) = pair(header).with_context(|| format!("line {ln}: header must be `n m`"))?;
    let mut edges = Vec::with_capacity(m);
    for (ln, l) in lines {
        let (u, v) = pair(l).with_context(|| format!("line {ln}: expected `u v`"))?;
        if u >= n || v >= n {
            bail!("line {ln}: vertex out of range 0..{n}");
        }
        edges.push((u, v));
    }
    if edges.len() != m {
        bail!("header promises {m} edges, found {}", edges.len());
    }
    Ok((n, edges))
}

fn pair(l: &str) -> Result<(usize, usize)> {
    let mut it = l.split_whitespace();
    let a = it.next().ok_or_else(|| anyhow!("missing field"))?.parse()?;
    let b = it.next().ok_or_else(|| anyhow!("missing field"))?.parse()?;
    if it.next().is_some() {
        bail!("trailing fields");
    }
    Ok((a, b))
}

pub fn format_edge_list(g: &Graph) -> String {
    let edges = g.edges();
    let mut s = format!("{} {}\n", g.n(), edges.len());
    for (u, v) in edges {
        s.push_str(&format!("{u} {v}\n"));
    }
    s
}

/// Where a graph comes from: an edge-list file or a generator.
#[derive(Debug, Clone, PartialEq)]
pub enum GraphSource {
    File(PathBuf),
    Generated(GraphKind),
}

impl GraphSource {
    /// `gnp:N:P`, `regular:N:D`, `path:N`, `cycle:N`, `grid:RxC`, `star:L`,
    /// `complete:N`, `empty:N`; anything else is a file path.
    pub fn parse(s: &str) -> Result<GraphSource> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |i: usize| -> Result<usize> {
            parts.get(i).ok_or_else(|| anyhow!("`{s}`: missing size"))?.parse().with_context(|| format!("`{s}`"))
        };
        let kind = match parts[0] {
            "gnp" => GraphKind::Gnp {
                n: num(1)?,
                p: parts.get(2).ok_or_else(|| anyhow!("`{s}`: missing p"))?.parse().with_context(|| format!("`{s}`"))?,
            },
            "regular" => GraphKind::RandomRegular { n: num(1)?, d: num(2)? },
            "path" => GraphKind::Path { n: num(1)? },
            "cycle" => GraphKind::Cycle { n: num(1)? },
            "star" => GraphKind::Star { leaves: num(1)? },
            "complete" => GraphKind::Complete { n: num(1)? },
            "empty" => GraphKind::Empty { n: num(1)? },
            "grid" => {
                let dims = parts.get(1).ok_or_else(|| anyhow!("`{s}`: missing RxC"))?;
                let (r, c) = dims.split_once('x').ok_or_else(|| anyhow!("`{s}`: grid needs RxC"))?;
                GraphKind::Grid { rows: r.parse()?, cols: c.parse()? }
            }
            _ => return Ok(GraphSource::File(PathBuf::from(s))),
        };
        Ok(GraphSource::Generated(kind))
    }

    /// Generators use `seed` for structure and IDs; files use it for IDs only.
    pub fn load(&self, seed: u64) -> Result<Graph> {
        match self {
            GraphSource::Generated(kind) => Ok(generate(*kind, seed)?),
            GraphSource::File(p) => load_graph(p, seed),
        }
    }
}

pub fn load_graph(path: &Path, id_seed: u64) -> Result<Graph> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let (n, edges) = parse_edge_list(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(Graph::from_edges(n, &edges, id_seed)?)
}

/// One vertex index per line; `#` comments allowed.
pub fn parse_vertex_set(text: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (i, l) in text.lines().enumerate() {
        let l = l.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        out.push(l.parse().with_context(|| format!("line {}: not a vertex index", i + 1))?);
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Inclusive ranges `a..b` and comma lists, e.g. `1..5` or `1,4,9`.
pub fn parse_list<T>(s: &str) -> Result<Vec<T>>
where
    T: std::str::FromStr + Copy + PartialOrd + std::ops::Add<Output = T> + From<u8>,
    <T as std::str::FromStr>::Err: std::error::Error + Send + Sync + 'static,
{
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let (a, b): (T, T) = (a.parse()?, b.parse()?);
            let mut x = a;
            while x <= b {
                out.push(x);
                x = x + T::from(1);
            }
        } else {
            out.push(part.parse()?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edge_list_round_trip() {
        let g = generate(GraphKind::Gnp { n: 20, p: 0.2 }, 3).unwrap();
        let (n, e) = parse_edge_list(&format_edge_list(&g)).unwrap();
        assert_eq!((n, e), (g.n(), g.edges()));
    }

    #[test]
    fn bad_files() {
        assert!(parse_edge_list("").is_err());
        assert!(parse_edge_list("3 1\n0 5\n").is_err());
        assert!(parse_edge_list("3 2\n0 1\n").is_err());
        assert!(parse_edge_list("3 1\n0 x\n").is_err());
        assert_eq!(parse_edge_list("# c\n3 1\n\n0 2\n").unwrap(), (3, vec![(0, 2)]));
    }

    #[test]
    fn sources_and_lists() {
        assert_eq!(GraphSource::parse("gnp:64:0.15").unwrap(), GraphSource::Generated(GraphKind::Gnp { n: 64, p: 0.15 }));
        assert_eq!(GraphSource::parse("grid:4x5").unwrap(), GraphSource::Generated(GraphKind::Grid { rows: 4, cols: 5 }));
        assert!(matches!(GraphSource::parse("g.txt").unwrap(), GraphSource::File(_)));
        assert!(GraphSource::parse("gnp:x:1").is_err());
        assert_eq!(parse_list::<u64>("1..5").unwrap(), vec![1, 2, 3, 4, 5]);
        assert_eq!(parse_list::<u32>("1,3").unwrap(), vec![1, 3]);
        assert!(parse_list::<u64>("").unwrap().is_empty());
    }
}
