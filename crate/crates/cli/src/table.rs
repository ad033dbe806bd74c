//! Report tables: one section per metric, one row per (dataset, method).

use featgen_core::discovery::EvalReport;
use featgen_core::gbdt::{Direction, MetricKind};

struct Row {
    dataset: String,
    method: String,
    n: usize,
    baseline: String,
    mean: String,
    std: String,
}

fn scale(kind: MetricKind) -> (f64, usize) {
    match kind {
        // AUC is shown as a percentage.
        MetricKind::Auc => (100.0, 2),
        MetricKind::Mse => (1.0, 4),
    }
}

fn fmt(kind: MetricKind, v: f64) -> String {
    let (factor, digits) = scale(kind);
    format!("{:.*}", digits, v * factor)
}

pub fn heading(kind: MetricKind) -> String {
    let arrow = match kind.direction() {
        Direction::HigherBetter => "↑ higher is better",
        Direction::LowerBetter => "↓ lower is better",
    };
    match kind {
        MetricKind::Auc => format!("AUC x100 ({arrow})"),
        MetricKind::Mse => format!("MSE ({arrow})"),
    }
}

fn sections(reports: &[EvalReport]) -> Vec<(MetricKind, Vec<Row>)> {
    let mut out: Vec<(MetricKind, Vec<Row>)> = Vec::new();
    for kind in [MetricKind::Auc, MetricKind::Mse] {
        let rows: Vec<Row> = reports
            .iter()
            .filter(|r| r.metric == kind)
            .map(|r| Row {
                dataset: r.dataset.clone(),
                method: r.method.clone(),
                n: r.maxima.len(),
                baseline: fmt(kind, r.baseline.value),
                mean: fmt(kind, r.mean),
                std: fmt(kind, r.std),
            })
            .collect();
        if !rows.is_empty() {
            out.push((kind, rows));
        }
    }
    out
}

pub fn render_text(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    for (i, (kind, rows)) in sections(reports).into_iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&heading(kind));
        out.push('\n');
        let cells: Vec<[String; 5]> = std::iter::once([
            "dataset".to_string(),
            "method".into(),
            "n".into(),
            "baseline".into(),
            "mean ± std".into(),
        ])
        .chain(rows.iter().map(|r| {
            [
                r.dataset.clone(),
                r.method.clone(),
                r.n.to_string(),
                r.baseline.clone(),
                format!("{} ± {}", r.mean, r.std),
            ]
        }))
        .collect();
        let widths: Vec<usize> = (0..5)
            .map(|c| {
                cells
                    .iter()
                    .map(|row| row[c].chars().count())
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        for row in &cells {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(cell, w)| format!("{cell}{}", " ".repeat(w - cell.chars().count())))
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn render_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("metric,direction,dataset,method,n,baseline,mean,std\n");
    for (kind, rows) in sections(reports) {
        let direction = match kind.direction() {
            Direction::HigherBetter => "higher",
            Direction::LowerBetter => "lower",
        };
        for r in rows {
            out.push_str(&format!(
                "{},{direction},{},{},{},{},{},{}\n",
                kind,
                csv_field(&r.dataset),
                csv_field(&r.method),
                r.n,
                r.baseline,
                r.mean,
                r.std
            ));
        }
    }
    out
}
