//! Folds the stage CSVs of a working directory into one summary table.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};

use crate::stages::{CACHE_CSV, INFERENCE_CSV, INTERIOR_CSV, LOAD_CSV, PARTITION_CSV, REORDER_CSV, REPORT_CSV, SAMPLE_CSV};
use crate::Usage;

#[derive(Debug, Default)]
pub struct Report {
    pub rows: Vec<(String, String, String)>,
}

impl Report {
    fn push(&mut self, section: &str, metric: &str, value: impl ToString) {
        self.rows.push((section.into(), metric.into(), value.to_string()));
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "section,metric,value")?;
        for (s, m, v) in &self.rows {
            writeln!(w, "{s},{m},{v}")?;
        }
        Ok(())
    }

    pub fn print_table(&self) {
        let width = self.rows.iter().map(|(s, m, _)| s.len() + m.len() + 1).max().unwrap_or(0);
        for (s, m, v) in &self.rows {
            println!("{:<width$}  {v}", format!("{s}.{m}"));
        }
    }
}

/// Header map plus data rows of a small CSV.
fn read_csv(path: &Path) -> Result<Option<(Vec<String>, Vec<Vec<String>>)>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let header = match lines.next() {
        Some(h) => h.split(',').map(str::to_string).collect(),
        None => return Err(Usage(format!("{} is empty", path.display())).into()),
    };
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    Ok(Some((header, rows)))
}

fn column<'a>(header: &[String], row: &'a [String], name: &str, path: &Path) -> Result<&'a str> {
    let i = header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Usage(format!("{} lacks column `{name}`", path.display())))?;
    row.get(i)
        .map(String::as_str)
        .ok_or_else(|| Usage(format!("{}: short row", path.display())).into())
}

pub fn build(dir: &Path) -> Result<Report> {
    let mut r = Report::default();

    let path = dir.join(PARTITION_CSV);
    if let Some((_, rows)) = read_csv(&path)? {
        let mut edges = Vec::new();
        for row in &rows {
            if row[0] == "summary" {
                for kv in &row[1..] {
                    if let Some((k, v)) = kv.split_once('=') {
                        r.push("partition", k, v);
                    }
                }
            } else if let Some(e) = row.get(2) {
                edges.push(e.clone());
            }
        }
        r.push("partition", "partitions", edges.len());
    }

    let path = dir.join(INTERIOR_CSV);
    if let Some((_, rows)) = read_csv(&path)? {
        if let Some(row) = rows.iter().find(|row| row[0] == "all") {
            r.push("partition", "interior_fraction", &row[1]);
        }
    }

    let path = dir.join(SAMPLE_CSV);
    if let Some((h, rows)) = read_csv(&path)? {
        let mut edges = 0u64;
        for row in &rows {
            edges += column(&h, row, "edges", &path)?.parse::<u64>()?;
        }
        r.push("sampling", "sampled_edges", edges);
    }

    let path = dir.join(LOAD_CSV);
    if let Some((h, rows)) = read_csv(&path)? {
        let mut loads = Vec::new();
        for row in &rows {
            let v = column(&h, row, "normalized", &path)?;
            loads.push(if v == "inf" { f64::INFINITY } else { v.parse::<f64>()? });
        }
        let max = loads.iter().copied().fold(0.0, f64::max);
        r.push("sampling", "max_normalized_load", format!("{max:.6}"));
        r.push("sampling", "shards", loads.len());
    }

    let path = dir.join(REORDER_CSV);
    if let Some((h, rows)) = read_csv(&path)? {
        if let Some(row) = rows.first() {
            r.push("reorder", "algorithm", column(&h, row, "algorithm", &path)?);
            r.push("reorder", "mean_chunk_span", column(&h, row, "mean_chunk_span", &path)?);
            r.push("reorder", "mean_neighbor_gap", column(&h, row, "mean_neighbor_gap", &path)?);
        }
    }

    let path = dir.join(INFERENCE_CSV);
    if let Some((h, rows)) = read_csv(&path)? {
        if let Some(row) = rows.first() {
            for name in ["layerwise_invocations", "samplewise_invocations", "max_rel_diff", "backing_reads"] {
                let v = column(&h, row, name, &path)?;
                if !v.is_empty() {
                    r.push("inference", name, v);
                }
            }
        }
    }

    let path = dir.join(CACHE_CSV);
    if let Some((h, rows)) = read_csv(&path)? {
        if let Some(row) = rows.first() {
            for name in ["static_hits", "dynamic_hits", "chunks_fetched", "hit_ratio"] {
                r.push("inference", name, column(&h, row, name, &path)?);
            }
        }
    }

    if r.rows.is_empty() {
        return Err(Usage(format!(
            "no stage outputs in {} (expected {PARTITION_CSV}, {LOAD_CSV}, {REORDER_CSV}, {CACHE_CSV} ...)",
            dir.display()
        ))
        .into());
    }
    Ok(r)
}

pub fn run(dir: &Path) -> Result<Report> {
    let r = build(dir)?;
    let mut w = std::io::BufWriter::new(fs::File::create(dir.join(REPORT_CSV))?);
    r.write_csv(&mut w)?;
    w.flush()?;
    Ok(r)
}
