//! Component losses, the two players' payoffs and the shared potential.
//!
//! Plain `f64` versions serve evaluation and tests; the `*_var` versions
//! record the same quantities on a tape for training.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Point};
use crate::tape::{huber_scalar, Tape, Var};
use crate::tensor::Tensor;

/// Lower/upper clamp for probabilities entering the cross-entropy.
pub const PROB_CLAMP: f64 = 1e-7;
/// Huber transition point, Å.
pub const HUBER_DELTA: f64 = 1.0;
/// Guard under the square root of the differentiable distance map.
pub const DIST_MAP_EPS: f64 = 1e-8;

/// Weights of the component losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub alpha_cls: f64,
    pub alpha_center: f64,
    /// Ligand coordinate weight.
    pub alpha2: f64,
    /// Pocket coordinate weight.
    pub beta: f64,
    /// Shared distance-map weight.
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha_cls: 1.0,
            alpha_center: 0.05,
            alpha2: 50.0,
            beta: 15.0,
            gamma: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha_cls, self.alpha_center, self.alpha2, self.beta, self.gamma];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0, got {self:?}")));
        }
        Ok(())
    }
}

/// The five raw component losses of one joint prediction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub pocket_cls: f64,
    pub pocket_center: f64,
    pub ligand_coord: f64,
    pub pocket_coord: f64,
    pub dis_map: f64,
}

/// Components together with the derived payoffs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub pocket_cls: f64,
    pub pocket_center: f64,
    pub pocket_pred: f64,
    pub ligand_coord: f64,
    pub pocket_coord: f64,
    pub dis_map: f64,
    pub j_l: f64,
    pub j_p: f64,
    pub potential_f: f64,
}

impl LossReport {
    pub fn new(c: LossComponents, w: &LossWeights) -> Self {
        Self {
            pocket_cls: c.pocket_cls,
            pocket_center: c.pocket_center,
            pocket_pred: pocket_pred_loss(c.pocket_cls, c.pocket_center, w),
            ligand_coord: c.ligand_coord,
            pocket_coord: c.pocket_coord,
            dis_map: c.dis_map,
            j_l: payoff_l(&c, w),
            j_p: payoff_p(&c, w),
            potential_f: potential_f(&c, w),
        }
    }

    pub fn components(&self) -> LossComponents {
        LossComponents {
            pocket_cls: self.pocket_cls,
            pocket_center: self.pocket_center,
            ligand_coord: self.ligand_coord,
            pocket_coord: self.pocket_coord,
            dis_map: self.dis_map,
        }
    }

    /// Element-wise mean of several reports' components, re-weighted.
    pub fn mean(reports: &[LossReport], w: &LossWeights) -> LossReport {
        let n = reports.len().max(1) as f64;
        let mut c = LossComponents::default();
        for r in reports {
            c.pocket_cls += r.pocket_cls / n;
            c.pocket_center += r.pocket_center / n;
            c.ligand_coord += r.ligand_coord / n;
            c.pocket_coord += r.pocket_coord / n;
            c.dis_map += r.dis_map / n;
        }
        LossReport::new(c, w)
    }

    /// Largest relative mismatch between stored and recomputed composites.
    pub fn consistency_error(&self, w: &LossWeights) -> f64 {
        let fresh = LossReport::new(self.components(), w);
        [
            (self.pocket_pred, fresh.pocket_pred),
            (self.j_l, fresh.j_l),
            (self.j_p, fresh.j_p),
            (self.potential_f, fresh.potential_f),
        ]
        .iter()
        .map(|(a, b)| (a - b).abs() / b.abs().max(1e-300))
        .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        [
            self.pocket_cls,
            self.pocket_center,
            self.ligand_coord,
            self.pocket_coord,
            self.dis_map,
            self.j_l,
            self.j_p,
            self.potential_f,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

pub fn pocket_pred_loss(cls: f64, center: f64, w: &LossWeights) -> f64 {
    w.alpha_cls * cls + w.alpha_center * center
}

/// Ligand player's loss.
pub fn payoff_l(c: &LossComponents, w: &LossWeights) -> f64 {
    pocket_pred_loss(c.pocket_cls, c.pocket_center, w) + w.alpha2 * c.ligand_coord + w.gamma * c.dis_map
}

/// Protein player's loss.
pub fn payoff_p(c: &LossComponents, w: &LossWeights) -> f64 {
    w.beta * c.pocket_coord + w.gamma * c.dis_map
}

/// Shared potential: every weighted term counted once.
pub fn potential_f(c: &LossComponents, w: &LossWeights) -> f64 {
    pocket_pred_loss(c.pocket_cls, c.pocket_center, w)
        + w.alpha2 * c.ligand_coord
        + w.beta * c.pocket_coord
        + w.gamma * c.dis_map
}

/// Element-wise Huber summed over `residuals`.
pub fn huber(residuals: &[f64], delta: f64) -> f64 {
    residuals.iter().map(|&d| huber_scalar(d, delta)).sum()
}

fn bce(y: bool, p: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if y {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Class-weighted cross-entropy of one complex: `(p/q) * sum_j BCE`, with
/// `p` residues of which `q` are pocket.
pub fn pocket_cls_single(probs: &[f64], labels: &[bool]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} probabilities for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let q = labels.iter().filter(|&&y| y).count();
    if q == 0 {
        return Err(Error::InvalidInput("complex has no pocket residues".into()));
    }
    let ratio = labels.len() as f64 / q as f64;
    Ok(ratio * probs.iter().zip(labels).map(|(&p, &y)| bce(y, p)).sum::<f64>())
}

/// Mean over complexes of [`pocket_cls_single`].
pub fn pocket_cls_loss(probs: &[&[f64]], labels: &[&[bool]]) -> Result<f64> {
    batch_mean(probs, labels, |p, y| pocket_cls_single(p, y))
}

fn batch_mean<A: ?Sized, B: ?Sized>(
    a: &[&A],
    b: &[&B],
    f: impl Fn(&A, &B) -> Result<f64>,
) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("batch sizes differ: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += f(x, y)?;
    }
    Ok(s / a.len() as f64)
}

/// Huber of one center residual summed over xyz.
pub fn center_huber(pred: Point, truth: Point) -> f64 {
    huber(&geom::sub(truth, pred), HUBER_DELTA)
}

pub fn pocket_center_loss(pred: &[Point], truth: &[Point]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Shape(format!("{} predicted vs {} true centers", pred.len(), truth.len())));
    }
    Ok(pred.iter().zip(truth).map(|(&p, &t)| center_huber(p, t)).sum::<f64>() / pred.len() as f64)
}

/// Per-complex coordinate Huber: summed over points and xyz, divided by the
/// number of points.
pub fn coord_huber(pred: &[Point], truth: &[Point]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Shape(format!("{} predicted vs {} true points", pred.len(), truth.len())));
    }
    let s: f64 = pred
        .iter()
        .zip(truth)
        .map(|(&p, &t)| huber(&geom::sub(p, t), HUBER_DELTA))
        .sum();
    Ok(s / pred.len() as f64)
}

pub fn ligand_coord_loss(pred: &[&[Point]], truth: &[&[Point]]) -> Result<f64> {
    batch_mean(pred, truth, coord_huber)
}

pub fn pocket_coord_loss(pred: &[&[Point]], truth: &[&[Point]]) -> Result<f64> {
    batch_mean(pred, truth, coord_huber)
}

/// `D[j][k] = |atom_j - residue_k|`, as an `n_l x n_p` matrix.
pub fn distance_map(atoms: &[Point], residues: &[Point]) -> Tensor {
    Tensor::from_fn(atoms.len(), residues.len(), |j, k| geom::dist(atoms[j], residues[k]))
}

/// Mean squared difference between predicted and true distance maps.
pub fn dis_map_single(
    pred_atoms: &[Point],
    pred_res: &[Point],
    true_atoms: &[Point],
    true_res: &[Point],
) -> Result<f64> {
    if pred_atoms.len() != true_atoms.len() || pred_res.len() != true_res.len() {
        return Err(Error::Shape("distance map shapes differ".into()));
    }
    if pred_atoms.is_empty() || pred_res.is_empty() {
        return Err(Error::InvalidInput("empty distance map".into()));
    }
    let a = distance_map(pred_atoms, pred_res);
    let b = distance_map(true_atoms, true_res);
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / a.len() as f64)
}

/// Row index pairs enumerating every `(atom, residue)` combination.
pub(crate) fn all_pairs(n_l: usize, n_p: usize) -> (Rc<[usize]>, Rc<[usize]>) {
    let a: Vec<usize> = (0..n_l).flat_map(|j| std::iter::repeat(j).take(n_p)).collect();
    let r: Vec<usize> = (0..n_l).flat_map(|_| 0..n_p).collect();
    (a.into(), r.into())
}

/// Per-complex class-weighted cross-entropy from logits (`n_p x 1`).
pub fn pocket_cls_var(tape: &mut Tape<'_>, logits: Var, labels: &[bool]) -> Result<Var> {
    let n = labels.len();
    if tape.value(logits).shape() != (n, 1) {
        return Err(Error::Shape("logits do not match label count".into()));
    }
    let q = labels.iter().filter(|&&y| y).count();
    if q == 0 {
        return Err(Error::InvalidInput("complex has no pocket residues".into()));
    }
    let y = Tensor::from_vec(n, 1, labels.iter().map(|&b| f64::from(u8::from(b))).collect());
    let p = tape.sigmoid(logits);
    let p = tape.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let lp = tape.log(p);
    let one_minus = tape.affine(p, -1.0, 1.0);
    let lq = tape.log(one_minus);
    // -(y ln p + (1 - y) ln(1 - p))
    let yv = tape.constant(y.clone());
    let ny = tape.constant(y.map(|v| 1.0 - v));
    let a = tape.mul(yv, lp);
    let b = tape.mul(ny, lq);
    let s = tape.add(a, b);
    let s = tape.sum_all(s);
    Ok(tape.scale(s, -(n as f64) / q as f64))
}

/// Huber of a `1 x 3` center against a fixed target.
pub fn center_huber_var(tape: &mut Tape<'_>, center: Var, truth: Point) -> Var {
    let t = tape.constant(Tensor::from_points(&[truth]));
    let d = tape.sub(center, t);
    let h = tape.huber(d, HUBER_DELTA);
    tape.sum_all(h)
}

/// Per-point coordinate Huber of an `n x 3` prediction.
pub fn coord_huber_var(tape: &mut Tape<'_>, pred: Var, truth: &[Point]) -> Result<Var> {
    if tape.value(pred).shape() != (truth.len(), 3) || truth.is_empty() {
        return Err(Error::Shape("coordinate prediction does not match truth".into()));
    }
    let t = tape.constant(Tensor::from_points(truth));
    let d = tape.sub(pred, t);
    let h = tape.huber(d, HUBER_DELTA);
    let s = tape.sum_all(h);
    Ok(tape.scale(s, 1.0 / truth.len() as f64))
}

/// Distance-map MSE with differentiable predicted coordinates.
pub fn dis_map_var(
    tape: &mut Tape<'_>,
    pred_atoms: Var,
    pred_res: Var,
    true_atoms: &[Point],
    true_res: &[Point],
) -> Result<Var> {
    let (n_l, n_p) = (true_atoms.len(), true_res.len());
    if tape.value(pred_atoms).shape() != (n_l, 3) || tape.value(pred_res).shape() != (n_p, 3) {
        return Err(Error::Shape("distance map inputs do not match truth".into()));
    }
    if n_l == 0 || n_p == 0 {
        return Err(Error::InvalidInput("empty distance map".into()));
    }
    let (ai, ri) = all_pairs(n_l, n_p);
    let a = tape.gather_rows(pred_atoms, ai);
    let r = tape.gather_rows(pred_res, ri);
    let diff = tape.sub(a, r);
    let sq = tape.square(diff);
    let d2 = tape.sum_cols(sq);
    let d2 = tape.affine(d2, 1.0, DIST_MAP_EPS);
    let d = tape.sqrt(d2);
    let truth = distance_map(true_atoms, true_res);
    let t = tape.constant(Tensor::from_vec(n_l * n_p, 1, truth.into_vec()));
    let e = tape.sub(d, t);
    let e = tape.square(e);
    Ok(tape.mean_all(e))
}

/// Weighted sum of component vars on the tape.
pub fn weighted_sum(tape: &mut Tape<'_>, terms: &[(f64, Var)]) -> Var {
    let mut acc: Option<Var> = None;
    for &(w, v) in terms {
        let s = tape.scale(v, w);
        acc = Some(match acc {
            Some(a) => tape.add(a, s),
            None => s,
        });
    }
    acc.unwrap_or_else(|| tape.constant(Tensor::scalar(0.0)))
}
