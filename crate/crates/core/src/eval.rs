//! Pose and pocket metrics with percentile summaries.
//!
//! Percentiles use the nearest-rank rule: the `p`-th percentile of `n`
//! sorted values is the value at 1-based rank `max(1, ceil(p/100 * n))`.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::complex::ComplexRecord;
use crate::error::{Error, Result};
use crate::geom::{self, Point};

fn same_len(pred: &[Point], truth: &[Point]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!("{} predicted points for {} true points", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("no points to compare".into()));
    }
    Ok(())
}

/// Root mean squared per-atom deviation, index-matched, no superposition.
pub fn ligand_rmsd(pred: &[Point], truth: &[Point]) -> Result<f64> {
    same_len(pred, truth)?;
    let s: f64 = pred.iter().zip(truth).map(|(&p, &t)| geom::dist2(p, t)).sum();
    Ok((s / pred.len() as f64).sqrt())
}

/// Distance between the two centroids.
pub fn centroid_distance(pred: &[Point], truth: &[Point]) -> Result<f64> {
    same_len(pred, truth)?;
    Ok(geom::dist(geom::centroid(pred), geom::centroid(truth)))
}

/// Percentages of values strictly below 2 Å and 5 Å.
pub fn success_rates(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::InvalidInput("success rate of an empty set".into()));
    }
    let n = values.len() as f64;
    let below = |t: f64| 100.0 * values.iter().filter(|&&v| v < t).count() as f64 / n;
    Ok((below(2.0), below(5.0)))
}

/// Residue-level classification accuracy of one complex, in percent.
pub fn residue_accuracy(selection: &[bool], truth: &[bool]) -> Result<f64> {
    if selection.len() != truth.len() || truth.is_empty() {
        return Err(Error::Shape(format!(
            "selection of {} residues against {} labels",
            selection.len(),
            truth.len()
        )));
    }
    let hits = selection.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(100.0 * hits as f64 / truth.len() as f64)
}

/// Per-complex residue accuracy averaged over complexes, in percent.
pub fn pocket_accuracy(selections: &[Vec<bool>], truths: &[Vec<bool>]) -> Result<f64> {
    if selections.len() != truths.len() || truths.is_empty() {
        return Err(Error::InvalidInput("pocket accuracy needs matching, nonempty sets".into()));
    }
    let mut s = 0.0;
    for (a, b) in selections.iter().zip(truths) {
        s += residue_accuracy(a, b)?;
    }
    Ok(s / truths.len() as f64)
}

/// RMSD between predicted and holo coordinates over the true pocket residues.
pub fn pocket_rmsd(pred: &[Point], holo: &[Point], labels: &[bool]) -> Result<f64> {
    same_len(pred, holo)?;
    if labels.len() != holo.len() {
        return Err(Error::Shape("pocket labels do not cover every residue".into()));
    }
    let (p, t): (Vec<Point>, Vec<Point>) = pred
        .iter()
        .zip(holo)
        .zip(labels)
        .filter(|(_, &on)| on)
        .map(|((&p, &t), _)| (p, t))
        .unzip();
    ligand_rmsd(&p, &t)
}

/// Nearest-rank percentile of `sorted` (ascending, nonempty), `p` in [0, 100].
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty slice");
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Metrics of one predicted complex.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexMetrics {
    pub id: String,
    pub ligand_rmsd: f64,
    pub centroid_distance: f64,
    pub pocket_accuracy: f64,
    pub pocket_rmsd: f64,
    pub runtime_s: Option<f64>,
}

/// `pred` carries predicted poses in its holo slots and the predicted pocket
/// indicator in its labels; `truth` is the reference record.
pub fn evaluate_pair(pred: &ComplexRecord, truth: &ComplexRecord) -> Result<ComplexMetrics> {
    if pred.n_atoms() != truth.n_atoms() || pred.n_residues() != truth.n_residues() {
        return Err(Error::Shape(format!("prediction {} does not match its reference in size", pred.id)));
    }
    let lig = pred.holo_ligand();
    let lig_true = truth.holo_ligand();
    Ok(ComplexMetrics {
        id: truth.id.clone(),
        ligand_rmsd: ligand_rmsd(&lig, &lig_true)?,
        centroid_distance: centroid_distance(&lig, &lig_true)?,
        pocket_accuracy: residue_accuracy(&pred.pocket_labels(), &truth.pocket_labels())?,
        pocket_rmsd: pocket_rmsd(&pred.holo_residues(), &truth.holo_residues(), &truth.pocket_labels())?,
        runtime_s: pred.runtime_s,
    })
}

/// Matches predictions to references by id; every reference needs a prediction.
pub fn evaluate(preds: &[ComplexRecord], truths: &[ComplexRecord]) -> Result<Vec<ComplexMetrics>> {
    let by_id: HashMap<&str, &ComplexRecord> = preds.iter().map(|p| (p.id.as_str(), p)).collect();
    if by_id.len() != preds.len() {
        return Err(Error::InvalidInput("duplicate ids among predictions".into()));
    }
    truths
        .par_iter()
        .map(|t| {
            let p = by_id
                .get(t.id.as_str())
                .ok_or_else(|| Error::InvalidInput(format!("no prediction for complex {}", t.id)))?;
            evaluate_pair(p, t)
        })
        .collect()
}

/// Percentiles, mean and success rates of one distance metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistanceSummary {
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub mean: f64,
    pub pct_below_2a: f64,
    pub pct_below_5a: f64,
}

impl DistanceSummary {
    pub fn of(values: &[f64]) -> Result<Self> {
        let (pct_below_2a, pct_below_5a) = success_rates(values)?;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            p25: percentile(&sorted, 25.0),
            p50: percentile(&sorted, 50.0),
            p75: percentile(&sorted, 75.0),
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
            pct_below_2a,
            pct_below_5a,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricSummary {
    pub n: usize,
    pub ligand_rmsd: DistanceSummary,
    pub centroid_distance: DistanceSummary,
    /// Mean over complexes that recorded a runtime.
    pub mean_runtime_s: Option<f64>,
    pub pocket_accuracy: f64,
    pub pocket_rmsd: f64,
}

pub fn summarize(metrics: &[ComplexMetrics]) -> Result<MetricSummary> {
    if metrics.is_empty() {
        return Err(Error::InvalidInput("nothing to summarize".into()));
    }
    // fixed order so sums do not depend on input order
    let mut m: Vec<&ComplexMetrics> = metrics.iter().collect();
    m.sort_by(|a, b| a.id.cmp(&b.id));
    let n = m.len() as f64;
    let rmsd: Vec<f64> = m.iter().map(|c| c.ligand_rmsd).collect();
    let cent: Vec<f64> = m.iter().map(|c| c.centroid_distance).collect();
    let runtimes: Vec<f64> = m.iter().filter_map(|c| c.runtime_s).collect();
    Ok(MetricSummary {
        n: m.len(),
        ligand_rmsd: DistanceSummary::of(&rmsd)?,
        centroid_distance: DistanceSummary::of(&cent)?,
        mean_runtime_s: (!runtimes.is_empty()).then(|| runtimes.iter().sum::<f64>() / runtimes.len() as f64),
        pocket_accuracy: m.iter().map(|c| c.pocket_accuracy).sum::<f64>() / n,
        pocket_rmsd: m.iter().map(|c| c.pocket_rmsd).sum::<f64>() / n,
    })
}

pub const SUMMARY_HEADER: [&str; 18] = [
    "method",
    "n",
    "rmsd_p25",
    "rmsd_p50",
    "rmsd_p75",
    "rmsd_mean",
    "rmsd_below_2A_pct",
    "rmsd_below_5A_pct",
    "centroid_p25",
    "centroid_p50",
    "centroid_p75",
    "centroid_mean",
    "centroid_below_2A_pct",
    "centroid_below_5A_pct",
    "mean_runtime_s",
    "pocket_residue_accuracy_pct",
    "pocket_rmsd",
    "note",
];

impl MetricSummary {
    pub fn csv_row(&self, method: &str) -> Vec<String> {
        let d = |s: &DistanceSummary| {
            [s.p25, s.p50, s.p75, s.mean, s.pct_below_2a, s.pct_below_5a].map(|v| format!("{v:.4}"))
        };
        let mut row = vec![method.to_string(), self.n.to_string()];
        row.extend(d(&self.ligand_rmsd));
        row.extend(d(&self.centroid_distance));
        row.push(self.mean_runtime_s.map(|v| format!("{v:.4}")).unwrap_or_default());
        row.push(format!("{:.4}", self.pocket_accuracy));
        row.push(format!("{:.4}", self.pocket_rmsd));
        row.push("pocket accuracy reconstructed as per-residue selection accuracy averaged over complexes".into());
        row
    }
}

/// One summary row per labelled method.
pub fn write_summary_csv(path: &Path, rows: &[(String, MetricSummary)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(SUMMARY_HEADER).map_err(|e| Error::csv(path, e))?;
    for (method, s) in rows {
        w.write_record(s.csv_row(method)).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn write_metrics_csv(path: &Path, metrics: &[ComplexMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for m in metrics {
        w.serialize(m).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
