//! Text formats for graphs, latent embeddings, and spectral embeddings.
//!
//! Graphs are edge lists with `#` header lines carrying the generating
//! parameters. Latent and embedding files are plain CSV with full-precision
//! floats so a write/read cycle is lossless.

use crate::error::{Error, Result};
use crate::model::{GraphMeta, GraphSample, LatentEmbedding};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::Path;

fn parse_err(path: &Path, line_no: usize, what: impl std::fmt::Display) -> Error {
    Error::Parse(format!("{}:{line_no}: {what}", path.display()))
}

fn write_meta_header(out: &mut String, meta: &GraphMeta) {
    let _ = writeln!(out, "# gmbm-graph version {}", meta.tool_version);
    let _ = writeln!(out, "# n {}", meta.n);
    let _ = writeln!(out, "# d {}", meta.d);
    let _ = writeln!(out, "# mu {}", meta.mu);
    if let Some(p) = meta.p {
        let _ = writeln!(out, "# p {p}");
    }
    if let Some(tau) = meta.tau {
        let _ = writeln!(out, "# tau {tau}");
    }
    let _ = writeln!(out, "# seed {}", meta.seed);
}

fn need<'a>(key: &str, v: Option<&'a str>) -> std::result::Result<&'a str, String> {
    v.ok_or_else(|| format!("missing value for {key}"))
}

fn parse_meta_line(meta: &mut GraphMeta, line: &str) -> std::result::Result<(), String> {
    let body = line.trim_start_matches('#').trim();
    let mut parts = body.split_whitespace();
    let Some(key) = parts.next() else {
        return Ok(());
    };
    let rest = parts.next();
    match key {
        "gmbm-graph" => {
            // "version <x>" tail; keep the recorded tool version.
            if let Some(v) = body.split_whitespace().nth(2) {
                meta.tool_version = v.to_string();
            }
        }
        "n" => meta.n = need(key, rest)?.parse().map_err(|e| format!("n: {e}"))?,
        "d" => meta.d = need(key, rest)?.parse().map_err(|e| format!("d: {e}"))?,
        "mu" => meta.mu = need(key, rest)?.parse().map_err(|e| format!("mu: {e}"))?,
        "p" => meta.p = Some(need(key, rest)?.parse().map_err(|e| format!("p: {e}"))?),
        "tau" => meta.tau = Some(need(key, rest)?.parse().map_err(|e| format!("tau: {e}"))?),
        "seed" => meta.seed = need(key, rest)?.parse().map_err(|e| format!("seed: {e}"))?,
        _ => {} // unknown keys pass through for forward compatibility
    }
    Ok(())
}

/// Write a graph as a header plus `i j` edge lines, 0-based, i < j,
/// lexicographically sorted.
pub fn write_graph(path: &Path, graph: &GraphSample) -> Result<()> {
    let mut header = String::new();
    write_meta_header(&mut header, &graph.meta);
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(header.as_bytes())?;
    for (i, j) in graph.edges() {
        writeln!(w, "{i} {j}")?;
    }
    w.flush()?;
    Ok(())
}

/// Read a graph written by [`write_graph`]. Edge orientation and order in
/// the body are not required; duplicates collapse.
pub fn read_graph(path: &Path) -> Result<GraphSample> {
    let text = fs::read_to_string(path)?;
    let mut meta = GraphMeta::default();
    let mut saw_n = false;
    let mut edges: Vec<(u32, u32)> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if trimmed.starts_with('#') {
            if trimmed.trim_start_matches('#').trim().starts_with("n ") {
                saw_n = true;
            }
            parse_meta_line(&mut meta, trimmed).map_err(|e| parse_err(path, line_no, e))?;
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_err(path, line_no, "expected exactly two vertex ids"));
        };
        let i: u32 = a
            .parse()
            .map_err(|e| parse_err(path, line_no, format!("vertex id: {e}")))?;
        let j: u32 = b
            .parse()
            .map_err(|e| parse_err(path, line_no, format!("vertex id: {e}")))?;
        edges.push((i, j));
    }
    if !saw_n {
        return Err(Error::Parse(format!(
            "{}: header is missing the vertex count",
            path.display()
        )));
    }
    GraphSample::from_edges(meta.n, &edges, meta)
}

/// Write latent vectors as CSV: one row per vertex, `label` then the d
/// coordinates at full precision. Parameters ride along as `#` lines.
pub fn write_latents(path: &Path, latents: &LatentEmbedding, meta: &GraphMeta) -> Result<()> {
    let mut header = String::new();
    write_meta_header(&mut header, meta);
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(header.as_bytes())?;
    write!(w, "label")?;
    for k in 0..latents.d {
        write!(w, ",u{k}")?;
    }
    writeln!(w)?;
    for i in 0..latents.n {
        write!(w, "{}", latents.labels[i])?;
        for x in latents.row_u(i) {
            write!(w, ",{x:.16e}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a latent CSV written by [`write_latents`].
pub fn read_latents(path: &Path) -> Result<(LatentEmbedding, GraphMeta)> {
    let text = fs::read_to_string(path)?;
    let mut meta = GraphMeta::default();
    let mut labels: Vec<i8> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut d: Option<usize> = None;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if trimmed.starts_with('#') {
            parse_meta_line(&mut meta, trimmed).map_err(|e| parse_err(path, line_no, e))?;
            continue;
        }
        if trimmed.starts_with("label") {
            continue; // column header
        }
        let mut fields = trimmed.split(',');
        let label_field = fields.next().unwrap();
        let label: i8 = label_field
            .trim()
            .parse()
            .map_err(|e| parse_err(path, line_no, format!("label: {e}")))?;
        if label != 1 && label != -1 {
            return Err(parse_err(path, line_no, format!("label must be +-1, got {label}")));
        }
        let mut row = 0usize;
        for f in fields {
            let x: f64 = f
                .trim()
                .parse()
                .map_err(|e| parse_err(path, line_no, format!("coordinate: {e}")))?;
            u.push(x);
            row += 1;
        }
        match d {
            None => d = Some(row),
            Some(expect) if expect != row => {
                return Err(parse_err(
                    path,
                    line_no,
                    format!("expected {expect} coordinates, got {row}"),
                ));
            }
            _ => {}
        }
        labels.push(label);
    }
    let d = d.ok_or_else(|| Error::Parse(format!("{}: no data rows", path.display())))?;
    let n = labels.len();
    let emb = LatentEmbedding::from_rows(n, d, u, labels)?;
    Ok((emb, meta))
}

/// Write a spectral embedding as CSV: vertex id then the coordinate row.
pub fn write_embedding(path: &Path, n: usize, d: usize, rows: &[f64]) -> Result<()> {
    if rows.len() != n * d {
        return Err(Error::ShapeMismatch(format!(
            "embedding has {} values, expected {n} x {d}",
            rows.len()
        )));
    }
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    write!(w, "vertex")?;
    for k in 0..d {
        write!(w, ",e{k}")?;
    }
    writeln!(w)?;
    for i in 0..n {
        write!(w, "{i}")?;
        for x in &rows[i * d..(i + 1) * d] {
            write!(w, ",{x:.16e}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Read an embedding CSV written by [`write_embedding`].
pub fn read_embedding(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<f64> = Vec::new();
    let mut d: Option<usize> = None;
    let mut n = 0usize;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with("vertex") {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() < 2 {
            return Err(parse_err(path, line_no, "expected vertex id and coordinates"));
        }
        let count = fields.len() - 1;
        match d {
            None => d = Some(count),
            Some(expect) if expect != count => {
                return Err(parse_err(
                    path,
                    line_no,
                    format!("expected {expect} coordinates, got {count}"),
                ));
            }
            _ => {}
        }
        for f in &fields[1..] {
            let x: f64 = f
                .trim()
                .parse()
                .map_err(|e| parse_err(path, line_no, format!("coordinate: {e}")))?;
            rows.push(x);
        }
        n += 1;
    }
    let d = d.ok_or_else(|| Error::Parse(format!("{}: no data rows", path.display())))?;
    Ok((n, d, rows))
}
