//! Central finite-difference check of the rollout gradients.
//!
//! Each player's loss is differentiated with the opponent's poses replayed
//! and the pocket selection fixed, which is exactly the function the tape
//! differentiates (opponent outputs are stop-gradient inputs there).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::complex::{AtomRecord, ComplexRecord, ResidueRecord};
use crate::engine::{rollout, EngineConfig, Models, Phase, Player, RolloutOptions};
use crate::error::Result;
use crate::game::Strategy;
use crate::geom::{self, Point};
use crate::net::{GradMap, ModelKind, ModelParams};

/// Gradient agreement for one parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorCheck {
    pub model: String,
    pub tensor: String,
    pub entries: usize,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    pub max_abs_err: f64,
    /// `|g_num - g_ana| / max(|g_num|, |g_ana|, floor)` over the whole tensor.
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradcheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.tensors.iter().map(|t| t.rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

/// Norms below this count as zero gradients and are compared absolutely.
pub const NORM_FLOOR: f64 = 1e-6;

/// Compact complex whose pairwise distances all sit inside the graph
/// cutoffs, so the edge sets cannot change under small perturbations.
pub fn probe_complex(seed: u64, n_atoms: usize, n_res: usize, d_l: usize, d_p: usize) -> ComplexRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, 0.3).expect("valid sigma");
    let noisy = |p: Point, rng: &mut ChaCha8Rng| -> Point {
        [p[0] + jitter.sample(rng), p[1] + jitter.sample(rng), p[2] + jitter.sample(rng)]
    };
    let feat = |d: usize, rng: &mut ChaCha8Rng| -> Vec<f64> { (0..d).map(|_| StandardNormal.sample(rng)).collect() };
    let residues: Vec<ResidueRecord> = (0..n_res)
        .map(|j| {
            let dir = geom::random_unit(&mut rng);
            let apo = geom::scale(dir, 2.5);
            let holo = noisy(apo, &mut rng);
            ResidueRecord {
                feat: feat(d_p, &mut rng),
                apo,
                holo,
                pocket: j < n_res.div_ceil(2),
            }
        })
        .collect();
    let atoms: Vec<AtomRecord> = (0..n_atoms)
        .map(|_| {
            let holo = geom::scale(geom::random_unit(&mut rng), 1.0);
            let apo = geom::add(noisy(holo, &mut rng), [1.0, 0.5, 0.0]);
            AtomRecord {
                feat: feat(d_l, &mut rng),
                apo,
                holo,
            }
        })
        .collect();
    let bonds = (1..n_atoms).map(|i| [i - 1, i]).collect();
    ComplexRecord {
        id: format!("probe-{seed}"),
        atoms,
        residues,
        bonds,
        runtime_s: None,
    }
}

fn own_loss(player: Player, r: &crate::objectives::LossReport) -> f64 {
    match player {
        Player::Ligand => r.j_l,
        Player::Protein => r.j_p,
    }
}

fn slot(s: &mut Strategy, kind: ModelKind) -> &mut ModelParams {
    match kind {
        ModelKind::Pocket => &mut s.pocket,
        ModelKind::Ligand => &mut s.ligand,
        ModelKind::Protein => &mut s.protein,
    }
}

/// Checks every tensor of all three models with step `h`.
pub fn gradcheck(rec: &ComplexRecord, models: Models<'_>, cfg: &EngineConfig, h: f64) -> Result<GradcheckReport> {
    let base = Strategy::from_models(models);
    let mut tensors = Vec::new();
    for player in [Player::Ligand, Player::Protein] {
        let phase = Phase::Train(player);
        let first = rollout(rec, models, cfg, phase, &RolloutOptions::default())?;
        let frozen = RolloutOptions {
            fixed_selection: Some(first.selection.indicator.clone()),
            replay: Some(first.replay.clone()),
            ..RolloutOptions::default()
        };
        let analytic = rollout(
            rec,
            models,
            cfg,
            phase,
            &RolloutOptions {
                want_grads: true,
                ..frozen.clone()
            },
        )?;
        let owned: Vec<(ModelKind, GradMap)> = match player {
            Player::Ligand => vec![
                (ModelKind::Pocket, analytic.grads.pocket.expect("pocket gradients")),
                (ModelKind::Ligand, analytic.grads.ligand.expect("ligand gradients")),
            ],
            Player::Protein => vec![(ModelKind::Protein, analytic.grads.protein.expect("protein gradients"))],
        };
        let eval = |s: &Strategy| -> Result<f64> { Ok(own_loss(player, &rollout(rec, s.models(), cfg, phase, &frozen)?.report)) };

        for (kind, grads) in owned {
            for (name, g_ana) in &grads {
                let numeric: Vec<f64> = (0..g_ana.len())
                    .into_par_iter()
                    .map(|i| -> Result<f64> {
                        let mut s = base.clone();
                        let x0 = slot(&mut s, kind).get(name).expect("tensor exists").data()[i];
                        slot(&mut s, kind).get_mut(name).unwrap().data_mut()[i] = x0 + h;
                        let up = eval(&s)?;
                        slot(&mut s, kind).get_mut(name).unwrap().data_mut()[i] = x0 - h;
                        let down = eval(&s)?;
                        Ok((up - down) / (2.0 * h))
                    })
                    .collect::<Result<_>>()?;
                let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
                let analytic_norm = norm(&mut g_ana.data().iter().copied());
                let numeric_norm = norm(&mut numeric.iter().copied());
                let diff = norm(&mut g_ana.data().iter().zip(&numeric).map(|(a, b)| a - b));
                let max_abs_err = g_ana.data().iter().zip(&numeric).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                tensors.push(TensorCheck {
                    model: kind.name().to_string(),
                    tensor: name.clone(),
                    entries: g_ana.len(),
                    analytic_norm,
                    numeric_norm,
                    max_abs_err,
                    rel_err: diff / analytic_norm.max(numeric_norm).max(NORM_FLOOR),
                });
            }
        }
    }
    Ok(GradcheckReport { tensors })
}
