use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{pooled_std, Summary};

use super::config::Method;
use super::runner::METRICS_CSV;

/// One line of `metrics.csv`: a seed's test precision, already averaged
/// over the swap arms.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub scenario: String,
    pub method: Method,
    pub seed: u64,
    pub ks: Vec<usize>,
    pub a_to_b: Vec<f64>,
    pub b_to_a: Vec<f64>,
    pub mean: Vec<f64>,
}

impl MetricsRow {
    pub fn at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.mean[i])
    }
}

fn header(ks: &[usize]) -> Vec<String> {
    let mut h = vec!["scenario".to_string(), "method".into(), "seed".into()];
    for k in ks {
        h.push(format!("prec{k}_a_to_b"));
        h.push(format!("prec{k}_b_to_a"));
        h.push(format!("prec{k}"));
    }
    h
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory csv flushes")).expect("csv is utf-8")
}

/// Renders rows sharing one `ks` list as `metrics.csv`.
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let ks = rows.first().map(|r| r.ks.clone()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header(&ks)).expect("in-memory write");
    for r in rows {
        let mut rec = vec![r.scenario.clone(), r.method.name().to_string(), r.seed.to_string()];
        for i in 0..r.ks.len() {
            rec.push(r.a_to_b[i].to_string());
            rec.push(r.b_to_a[i].to_string());
            rec.push(r.mean[i].to_string());
        }
        w.write_record(&rec).expect("in-memory write");
    }
    finish(w)
}

fn parse_k(col: &str) -> Option<(usize, &str)> {
    let rest = col.strip_prefix("prec")?;
    let digits = rest.find(|c: char| !c.is_ascii_digit()).unwrap_or(rest.len());
    Some((rest[..digits].parse().ok()?, &rest[digits..]))
}

/// Parses a `metrics.csv` file back into rows.
pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let parse_err = |detail: String| Error::parse(path, detail);
    let mut rd = csv::Reader::from_path(path).map_err(|e| parse_err(e.to_string()))?;
    let head: Vec<String> = rd
        .headers()
        .map_err(|e| parse_err(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if head.len() < 6 || !(head.len() - 3).is_multiple_of(3) || head[..3] != ["scenario", "method", "seed"] {
        return Err(parse_err(format!("unexpected header {:?}", head.join(","))));
    }
    let mut ks = Vec::new();
    for chunk in head[3..].chunks(3) {
        let k = match chunk.iter().map(|c| parse_k(c)).collect::<Option<Vec<_>>>().as_deref() {
            Some([(k1, "_a_to_b"), (k2, "_b_to_a"), (k3, "")]) if k1 == k2 && k2 == k3 => *k1,
            _ => return Err(parse_err(format!("unexpected columns {chunk:?}"))),
        };
        ks.push(k);
    }
    let mut rows = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        let at = |what: &str, e: &dyn std::fmt::Display| parse_err(format!("row {}: bad {what}: {e}", line + 1));
        let method: Method = rec[1].parse().map_err(|e: Error| at("method", &e))?;
        let seed: u64 = rec[2].parse().map_err(|e| at("seed", &e))?;
        let mut vals = Vec::with_capacity(rec.len() - 3);
        for field in rec.iter().skip(3) {
            vals.push(field.parse::<f64>().map_err(|e| at("value", &e))?);
        }
        rows.push(MetricsRow {
            scenario: rec[0].to_string(),
            method,
            seed,
            ks: ks.clone(),
            a_to_b: vals.iter().step_by(3).copied().collect(),
            b_to_a: vals.iter().skip(1).step_by(3).copied().collect(),
            mean: vals.iter().skip(2).step_by(3).copied().collect(),
        });
    }
    Ok(rows)
}

/// Precision cutoff the report tabulates: 1 when every row has it,
/// otherwise the smallest cutoff common to all rows.
fn report_k(rows: &[MetricsRow]) -> Option<usize> {
    let mut common: Vec<usize> = rows.first()?.ks.clone();
    for r in rows {
        common.retain(|k| r.ks.contains(k));
    }
    common.iter().copied().find(|&k| k == 1).or_else(|| common.iter().copied().min())
}

fn cell(s: &Summary) -> String {
    format!("{:.1} ± {:.1}", 100.0 * s.mean, 100.0 * s.std)
}

/// Methods × scenarios table of Prec@K in percent, plus an average column
/// (mean of scenario means ± pooled std). Returns `(text, csv)`, both
/// empty when there are no rows.
pub fn render_report(rows: &[MetricsRow]) -> (String, String) {
    let Some(k) = report_k(rows) else {
        return (String::new(), String::new());
    };
    let mut scenarios: Vec<&str> = Vec::new();
    for r in rows {
        if !scenarios.contains(&r.scenario.as_str()) {
            scenarios.push(&r.scenario);
        }
    }
    let mut values: BTreeMap<Method, BTreeMap<&str, Vec<f64>>> = BTreeMap::new();
    for r in rows {
        let v = r.at(k).expect("k is common to all rows");
        values.entry(r.method).or_default().entry(&r.scenario).or_default().push(v);
    }

    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(["method", "scenario", "k", "mean", "std", "n"]).expect("in-memory write");
    let mut table: Vec<Vec<String>> = Vec::new();
    let mut head = vec![format!("Prec@{k} (%)")];
    head.extend(scenarios.iter().map(|s| s.to_string()));
    head.push("Average".into());
    table.push(head);
    for (method, by_scenario) in &values {
        let mut line = vec![method.name().to_string()];
        let mut means = Vec::new();
        let mut stds = Vec::new();
        for scen in &scenarios {
            match by_scenario.get(scen) {
                Some(v) => {
                    let s = Summary::of(v);
                    line.push(cell(&s));
                    means.push(s.mean);
                    stds.push(s.std);
                    csv.write_record([
                        method.name().to_string(),
                        scen.to_string(),
                        k.to_string(),
                        s.mean.to_string(),
                        s.std.to_string(),
                        s.n.to_string(),
                    ])
                    .expect("in-memory write");
                }
                None => line.push("-".into()),
            }
        }
        let avg = Summary {
            mean: means.iter().sum::<f64>() / means.len() as f64,
            std: pooled_std(&stds),
            n: means.len(),
        };
        line.push(cell(&avg));
        csv.write_record([
            method.name().to_string(),
            "average".into(),
            k.to_string(),
            avg.mean.to_string(),
            avg.std.to_string(),
            avg.n.to_string(),
        ])
        .expect("in-memory write");
        table.push(line);
    }

    let ncols = table[0].len();
    let widths: Vec<usize> = (0..ncols)
        .map(|c| table.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut text = String::new();
    for row in &table {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, v)| {
                let pad = widths[c] - v.chars().count();
                if c == 0 {
                    format!("{v}{}", " ".repeat(pad))
                } else {
                    format!("{}{v}", " ".repeat(pad))
                }
            })
            .collect();
        text.push_str(cells.join("  ").trim_end());
        text.push('\n');
    }
    (text, finish(csv))
}

/// Collects every `metrics.csv` under `dir` (sorted path order), dropping
/// repeated `(scenario, method, seed)` rows after their first occurrence.
pub fn collect_rows(dir: &Path) -> Result<Vec<MetricsRow>> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
        ));
    }
    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::parse(dir, e.to_string()))?;
        if entry.file_type().is_file() && entry.file_name() == METRICS_CSV {
            for r in read_metrics_csv(entry.path())? {
                if seen.insert((r.scenario.clone(), r.method, r.seed)) {
                    rows.push(r);
                }
            }
        }
    }
    Ok(rows)
}

/// Rebuilds the table from all results under `dir`; `None` when there are
/// none.
pub fn cmd_report(dir: &Path) -> Result<Option<(String, String)>> {
    let rows = collect_rows(dir)?;
    if rows.is_empty() {
        return Ok(None);
    }
    if report_k(&rows).is_none() {
        return Err(Error::Contract("result files share no precision cutoff".into()));
    }
    Ok(Some(render_report(&rows)))
}
