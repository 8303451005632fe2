//! Figure artifacts: training curves, confusion heatmaps, ROC plots, KDE
//! overlays and flow diagrams, each as SVG with a CSV of the plotted numbers.

mod kde;
mod sankey;
pub mod svg;

pub use kde::{kde, kde_grid, silverman_bandwidth, spike_bandwidth, KdeCurve};
pub use sankey::{sankey_flows, SankeyEdge, SankeyFlows};

use crate::error::Result;
use crate::train::{EvaluationReport, TrainingLog};
use std::fmt::Write as _;
use std::path::Path;
use svg::{bounds, color, line_panel, Doc, Series};

fn write_csv<R: serde::Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = R>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Loss and accuracy per epoch, train against validation.
pub fn curves_svg(log: &TrainingLog) -> String {
    let pick = |f: fn(&crate::train::EpochRecord) -> f64| -> Vec<(f64, f64)> {
        log.records.iter().map(|r| (r.epoch as f64, f(r))).collect()
    };
    let (tl, vl) = (pick(|r| r.train_loss), pick(|r| r.val_loss));
    let (ta, va) = (pick(|r| r.train_acc), pick(|r| r.val_acc));
    let mut doc = Doc::new(640.0, 660.0);
    let loss = [
        Series { name: "train".into(), points: &tl },
        Series { name: "validation".into(), points: &vl },
    ];
    let (x0, x1, _, y1) = bounds(&loss);
    line_panel(&mut doc, 0.0, 0.0, "Loss", "epoch", "cross-entropy", &loss, (x0, x1, 0.0, y1));
    let acc = [
        Series { name: "train".into(), points: &ta },
        Series { name: "validation".into(), points: &va },
    ];
    let (x0, x1, y0, _) = bounds(&acc);
    line_panel(&mut doc, 0.0, 330.0, "Accuracy", "epoch", "accuracy", &acc, (x0, x1, y0.min(1.0 - 1e-9), 1.0));
    doc.finish()
}

pub fn render_curves(log: &TrainingLog, svg_path: &Path, csv_path: &Path) -> Result<()> {
    std::fs::write(svg_path, curves_svg(log))?;
    write_csv(
        csv_path,
        &["epoch", "train_loss", "val_loss", "train_acc", "val_acc"],
        log.records.iter().map(|r| (r.epoch, r.train_loss, r.val_loss, r.train_acc, r.val_acc)),
    )
}

/// Heatmap with rows as true classes; cell shade is the row share and the
/// cell text the raw count.
pub fn confusion_svg(confusion: &[Vec<usize>], labels: &[&str]) -> String {
    let n = confusion.len();
    let cell = 110.0;
    let (left, top) = (170.0, 60.0);
    let mut doc = Doc::new(left + cell * n as f64 + 40.0, top + cell * n as f64 + 60.0);
    doc.text(left + cell * n as f64 / 2.0, 24.0, 14.0, "middle", "Confusion matrix");
    doc.text(left + cell * n as f64 / 2.0, 46.0, 11.0, "middle", "predicted");
    for (i, row) in confusion.iter().enumerate() {
        let total: usize = row.iter().sum();
        let y = top + cell * i as f64;
        doc.text(left - 8.0, y + cell / 2.0, 11.0, "end", labels.get(i).copied().unwrap_or(""));
        for (j, &c) in row.iter().enumerate() {
            let share = if total == 0 { 0.0 } else { c as f64 / total as f64 };
            let shade = (255.0 * (1.0 - 0.8 * share)).round() as u8;
            let x = left + cell * j as f64;
            doc.rect(x, y, cell - 2.0, cell - 2.0, &format!("rgb({shade},{shade},255)"));
            let _ = writeln!(
                doc.body,
                r#"<text class="cell" x="{:.2}" y="{:.2}" font-size="16" text-anchor="middle">{c}</text>"#,
                x + cell / 2.0,
                y + cell / 2.0 + 5.0
            );
        }
    }
    for j in 0..n {
        let x = left + cell * j as f64 + cell / 2.0;
        doc.text(x, top + cell * n as f64 + 18.0, 10.0, "middle", labels.get(j).copied().unwrap_or(""));
    }
    doc.finish()
}

pub fn render_confusion(confusion: &[Vec<usize>], labels: &[&str], svg_path: &Path, csv_path: &Path) -> Result<()> {
    std::fs::write(svg_path, confusion_svg(confusion, labels))?;
    let mut rows = Vec::new();
    for (i, row) in confusion.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            rows.push((i, j, c));
        }
    }
    write_csv(csv_path, &["true", "predicted", "count"], rows)
}

/// One-vs-rest ROC curves, one polyline per class with a defined AUC.
pub fn roc_svg(report: &EvaluationReport, labels: &[&str]) -> String {
    let pts: Vec<(String, Vec<(f64, f64)>)> = report
        .roc
        .iter()
        .enumerate()
        .filter_map(|(c, r)| {
            r.as_ref().map(|r| {
                let name = format!("{} (AUC {:.4})", labels.get(c).copied().unwrap_or("?"), r.auc);
                (name, r.points.iter().map(|p| (p[0], p[1])).collect())
            })
        })
        .collect();
    let series: Vec<Series> = pts.iter().map(|(n, p)| Series { name: n.clone(), points: p }).collect();
    let mut doc = Doc::new(760.0, 340.0);
    let title = match report.macro_auc {
        Some(m) => format!("ROC, macro-AUC {m:.4}"),
        None => "ROC".to_string(),
    };
    line_panel(&mut doc, 0.0, 0.0, &title, "false positive rate", "true positive rate", &series, (0.0, 1.0, 0.0, 1.0));
    doc.finish()
}

pub fn render_roc(report: &EvaluationReport, labels: &[&str], svg_path: &Path, csv_path: &Path) -> Result<()> {
    std::fs::write(svg_path, roc_svg(report, labels))?;
    let mut rows = Vec::new();
    for (c, r) in report.roc.iter().enumerate() {
        if let Some(r) = r {
            rows.extend(r.points.iter().map(|p| (c, p[0], p[1])));
        }
    }
    write_csv(csv_path, &["class", "fpr", "tpr"], rows)
}

/// Overlaid density curves for one feature; legends carry sample counts.
pub fn kde_svg(curves: &[KdeCurve]) -> String {
    let pts: Vec<Vec<(f64, f64)>> = curves
        .iter()
        .map(|k| k.grid.iter().copied().zip(k.density.iter().copied()).collect())
        .collect();
    let series: Vec<Series> = curves
        .iter()
        .zip(&pts)
        .map(|(k, p)| Series { name: k.source.clone(), points: p })
        .collect();
    let (x0, x1, _, y1) = bounds(&series);
    let feature = curves.first().map_or("", |k| k.feature.as_str());
    let mut doc = Doc::new(860.0, 340.0);
    line_panel(&mut doc, 0.0, 0.0, &format!("Density of {feature}"), feature, "density", &series, (x0, x1, 0.0, y1));
    doc.finish()
}

pub fn render_kde(curves: &[KdeCurve], svg_path: &Path, csv_path: &Path) -> Result<()> {
    std::fs::write(svg_path, kde_svg(curves))?;
    let mut rows = Vec::new();
    for k in curves {
        for (x, d) in k.grid.iter().zip(&k.density) {
            rows.push((k.source.as_str(), k.n, k.bandwidth, *x, *d));
        }
    }
    write_csv(csv_path, &["series", "n", "bandwidth", "x", "density"], rows)
}

/// Column per stage, node bars sized by row count, ribbons of width
/// proportional to the transition count.
pub fn sankey_svg(flows: &SankeyFlows) -> String {
    let stages = flows.stages.len();
    let (col_gap, bar_w, height, gap) = (220.0, 14.0, 480.0, 6.0);
    let total = flows.stage_total(0).max(1) as f64;
    let mut doc = Doc::new(80.0 + col_gap * (stages.max(1) - 1) as f64 + 200.0, height + 100.0);
    let mut node_y: Vec<Vec<f64>> = Vec::with_capacity(stages);
    let mut scale = f64::INFINITY;
    for s in 0..stages {
        let n = flows.nodes[s].len() as f64;
        scale = scale.min((height - gap * (n - 1.0)) / total);
    }
    for s in 0..stages {
        let x = 40.0 + col_gap * s as f64;
        doc.text(x + bar_w / 2.0, 24.0, 12.0, "middle", &flows.stages[s]);
        let mut y = 40.0;
        let mut ys = Vec::new();
        for (n, t) in flows.node_totals(s).into_iter().enumerate() {
            ys.push(y);
            let h = t as f64 * scale;
            if t > 0 {
                doc.rect(x, y, bar_w, h, color(n));
                doc.text(x + bar_w + 4.0, y + h / 2.0 + 3.0, 9.0, "start", &format!("{} ({t})", flows.nodes[s][n]));
                y += h + gap;
            }
        }
        node_y.push(ys);
    }
    let mut out_off: Vec<Vec<f64>> = node_y.clone();
    let mut in_off: Vec<Vec<f64>> = node_y.clone();
    for e in &flows.edges {
        let w = e.count as f64 * scale;
        let x0 = 40.0 + col_gap * e.stage as f64 + bar_w;
        let x1 = 40.0 + col_gap * (e.stage + 1) as f64;
        let y0 = out_off[e.stage][e.from] + w / 2.0;
        let y1 = in_off[e.stage + 1][e.to] + w / 2.0;
        out_off[e.stage][e.from] += w;
        in_off[e.stage + 1][e.to] += w;
        let mx = (x0 + x1) / 2.0;
        let _ = writeln!(
            doc.body,
            r#"<path d="M{x0:.2},{y0:.2} C{mx:.2},{y0:.2} {mx:.2},{y1:.2} {x1:.2},{y1:.2}" fill="none" stroke="{}" stroke-opacity="0.4" stroke-width="{:.2}"/>"#,
            color(e.from),
            w.max(0.5)
        );
    }
    doc.finish()
}

pub fn render_sankey(flows: &SankeyFlows, svg_path: &Path, csv_path: &Path) -> Result<()> {
    std::fs::write(svg_path, sankey_svg(flows))?;
    let rows = flows.edges.iter().map(|e| {
        (
            flows.stages[e.stage].as_str(),
            flows.nodes[e.stage][e.from].as_str(),
            flows.stages[e.stage + 1].as_str(),
            flows.nodes[e.stage + 1][e.to].as_str(),
            e.count,
        )
    });
    write_csv(csv_path, &["source_stage", "source", "target_stage", "target", "count"], rows)
}

/// Grouped bars: one group per metric, one bar per model.
pub fn bar_chart_svg(title: &str, metrics: &[String], models: &[String], values: &[Vec<f64>]) -> String {
    let (left, top, h) = (60.0, 40.0, 260.0);
    let group_w = 30.0 * models.len().max(1) as f64 + 20.0;
    let width = left + group_w * metrics.len() as f64;
    let mut doc = Doc::new(width + 200.0, top + h + 80.0);
    doc.text(width / 2.0, 22.0, 14.0, "middle", title);
    doc.line(left, top + h, width, top + h, "black");
    doc.line(left, top, left, top + h, "black");
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let y = top + h - v * h;
        doc.line(left - 4.0, y, left, y, "black");
        doc.text(left - 6.0, y + 3.0, 10.0, "end", &format!("{v:.2}"));
    }
    for (g, metric) in metrics.iter().enumerate() {
        let gx = left + 10.0 + group_w * g as f64;
        for (m, row) in values.iter().enumerate() {
            let v = row[g].clamp(0.0, 1.0);
            doc.rect(gx + 30.0 * m as f64, top + h - v * h, 26.0, v * h, color(m));
        }
        doc.text(gx + (group_w - 20.0) / 2.0, top + h + 16.0, 10.0, "middle", metric);
    }
    for (m, name) in models.iter().enumerate() {
        let ly = top + 10.0 + 14.0 * m as f64;
        doc.rect(width + 10.0, ly - 8.0, 10.0, 10.0, color(m));
        doc.text(width + 26.0, ly + 1.0, 10.0, "start", name);
    }
    doc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::evaluate;

    #[test]
    fn confusion_cells_show_counts() {
        let m = vec![vec![5, 1, 0], vec![2, 7, 1], vec![0, 0, 9]];
        let s = confusion_svg(&m, &["a", "b", "c"]);
        let cells: Vec<usize> = s
            .lines()
            .filter(|l| l.contains("class=\"cell\""))
            .map(|l| l.split('>').nth(1).unwrap().split('<').next().unwrap().parse().unwrap())
            .collect();
        assert_eq!(cells, vec![5, 1, 0, 2, 7, 1, 0, 0, 9]);
    }

    #[test]
    fn roc_polylines_keep_every_point() {
        let probs = [[0.7, 0.2, 0.1], [0.1, 0.6, 0.3], [0.3, 0.3, 0.4], [0.5, 0.4, 0.1], [0.2, 0.2, 0.6]];
        let r = evaluate(&probs, &[0, 1, 2, 1, 2]).unwrap();
        let s = roc_svg(&r, &["a", "b", "c"]);
        let counts: Vec<usize> = s
            .lines()
            .filter(|l| l.contains("class=\"series\""))
            .map(|l| l.split("points=\"").nth(1).unwrap().trim_end_matches("\"/>").split(' ').count())
            .collect();
        let expected: Vec<usize> = r.roc.iter().flatten().map(|c| c.points.len()).collect();
        assert_eq!(counts, expected);
    }
}
