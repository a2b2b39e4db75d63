//! Aligned text tables: one row per method and shot count, one column per split.

use std::fmt::Write as _;

#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub method: String,
    pub shots: usize,
    /// Mean-IoU per split; `None` for splits that were not run.
    pub folds: [Option<f64>; 4],
}

impl TableRow {
    pub fn mean(&self) -> Option<f64> {
        let v: Vec<f64> = self.folds.iter().flatten().copied().collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.2}", 100.0 * x))
}

/// Renders rows as percentages; rows with more shots than a same-method row
/// get a delta column against the fewest-shot row.
pub fn render_table(rows: &[TableRow]) -> String {
    let header = [
        "Method", "Shot", "Split-0", "Split-1", "Split-2", "Split-3", "Mean", "Delta",
    ];
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let base = rows
                .iter()
                .filter(|o| o.method == r.method && o.shots < r.shots)
                .min_by_key(|o| o.shots);
            let delta = match (base.and_then(TableRow::mean), r.mean()) {
                (Some(b), Some(m)) => format!("{:+.2}", 100.0 * (m - b)),
                _ => String::new(),
            };
            let mut cols = vec![r.method.clone(), r.shots.to_string()];
            cols.extend(r.folds.iter().map(|f| cell(*f)));
            cols.push(cell(r.mean()));
            cols.push(delta);
            cols
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|i| {
            body.iter()
                .map(|r| r[i].len())
                .chain([header[i].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    let line = |cols: &[&str], out: &mut String| {
        let parts: Vec<String> = cols
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&header, &mut out);
    let _ = writeln!(
        out,
        "{}",
        "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1))
    );
    for r in &body {
        line(&r.iter().map(String::as_str).collect::<Vec<_>>(), &mut out);
    }
    out
}
