//! Potential-game machinery: the potential `F`, unilateral deviation probes,
//! improvement-path extraction from training traces and best-response gaps.
//!
//! `F = pocket_pred + alpha2 * ligand_coord + beta * pocket_coord + gamma * dis_map`
//! differs from `J_L` only by `beta * pocket_coord` and from `J_P` only by
//! the ligand player's private terms, so any change in one player's
//! parameters moves that player's loss and `F` by the same amount, provided
//! the opponent's outputs stay fixed. Probes guarantee that by replaying the
//! opponent's recorded poses and reusing the base pocket selection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::complex::ComplexRecord;
use crate::engine::{rollout, Adam, EngineConfig, Models, Phase, Player, RolloutOptions, TrainTrace};
use crate::error::{Error, Result};
use crate::net::{GradMap, ModelParams};
use crate::objectives::{payoff_l, payoff_p, LossComponents, LossWeights};

pub use crate::objectives::potential_f;

/// Loss of `player` under weights `w`.
pub fn payoff(player: Player, c: &LossComponents, w: &LossWeights) -> f64 {
    match player {
        Player::Ligand => payoff_l(c, w),
        Player::Protein => payoff_p(c, w),
    }
}

/// Owned copies of the three models.
#[derive(Debug, Clone, PartialEq)]
pub struct Strategy {
    pub pocket: ModelParams,
    pub ligand: ModelParams,
    pub protein: ModelParams,
}

impl Strategy {
    pub fn from_models(m: Models<'_>) -> Self {
        Self {
            pocket: m.pocket.clone(),
            ligand: m.ligand.clone(),
            protein: m.protein.clone(),
        }
    }

    pub fn models(&self) -> Models<'_> {
        Models {
            pocket: &self.pocket,
            ligand: &self.ligand,
            protein: &self.protein,
        }
    }

    /// Models owned by `player`.
    fn owned_mut(&mut self, player: Player) -> Vec<&mut ModelParams> {
        match player {
            Player::Ligand => vec![&mut self.pocket, &mut self.ligand],
            Player::Protein => vec![&mut self.protein],
        }
    }

    /// Players whose parameters differ between `self` and `other`.
    pub fn differing_players(&self, other: &Strategy) -> Vec<Player> {
        let mut out = Vec::new();
        if self.pocket.values() != other.pocket.values() || self.ligand.values() != other.ligand.values() {
            out.push(Player::Ligand);
        }
        if self.protein.values() != other.protein.values() {
            out.push(Player::Protein);
        }
        out
    }
}

/// Seeded Gaussian perturbation of every parameter entry of one player.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Perturbation {
    pub seed: u64,
    pub magnitude: f64,
}

impl Perturbation {
    pub fn apply(&self, base: &Strategy, player: Player) -> Strategy {
        let mut out = base.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        for params in out.owned_mut(player) {
            for (_, value, _) in params.values_and_grads_mut() {
                for v in value.data_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v += self.magnitude * z;
                }
            }
        }
        out
    }
}

/// Base and deviated evaluations of one unilateral deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationProbe {
    pub player: Player,
    pub perturbation: Perturbation,
    /// Players whose parameters actually differ between the two points.
    pub perturbed: Vec<Player>,
    pub weights: LossWeights,
    pub base: LossComponents,
    pub deviated: LossComponents,
}

impl DeviationProbe {
    /// Evaluates `base` and `deviated` on `rec` in `player`'s training
    /// phase, with the opponent's poses and the pocket selection taken from
    /// the base rollout.
    pub fn evaluate(
        rec: &ComplexRecord,
        base: &Strategy,
        deviated: &Strategy,
        player: Player,
        perturbation: Perturbation,
        cfg: &EngineConfig,
    ) -> Result<Self> {
        let phase = Phase::Train(player);
        let first = rollout(rec, base.models(), cfg, phase, &RolloutOptions::default())?;
        let frozen = RolloutOptions {
            fixed_selection: Some(first.selection.indicator.clone()),
            replay: Some(first.replay.clone()),
            ..RolloutOptions::default()
        };
        let b = rollout(rec, base.models(), cfg, phase, &frozen)?;
        let d = rollout(rec, deviated.models(), cfg, phase, &frozen)?;
        Ok(Self {
            player,
            perturbation,
            perturbed: base.differing_players(deviated),
            weights: cfg.weights,
            base: b.report.components(),
            deviated: d.report.components(),
        })
    }

    /// Perturbs `player`'s models of `base` and evaluates the deviation.
    pub fn run(
        rec: &ComplexRecord,
        base: &Strategy,
        player: Player,
        perturbation: Perturbation,
        cfg: &EngineConfig,
    ) -> Result<Self> {
        let deviated = perturbation.apply(base, player);
        Self::evaluate(rec, base, &deviated, player, perturbation, cfg)
    }

    pub fn delta_j(&self) -> f64 {
        payoff(self.player, &self.deviated, &self.weights) - payoff(self.player, &self.base, &self.weights)
    }

    /// Change in a potential built from `potential_weights`.
    pub fn delta_f_with(&self, potential_weights: &LossWeights) -> f64 {
        potential_f(&self.deviated, potential_weights) - potential_f(&self.base, potential_weights)
    }
}

/// Outcome of one potential-identity check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PotentialCheck {
    pub seed: u64,
    pub player: Player,
    pub delta_j: f64,
    pub delta_f: f64,
    /// `|delta_j - delta_f|`.
    pub residual: f64,
    /// `tol * (1 + |delta_f|)`.
    pub bound: f64,
    pub passed: bool,
}

/// Checks `|dJ - dF| <= tol * (1 + |dF|)` for the deviating player.
pub fn verify_exact_potential(probe: &DeviationProbe, tol: f64) -> Result<PotentialCheck> {
    verify_potential_with(probe, &probe.weights, tol)
}

/// As [`verify_exact_potential`], with `F` built from other weights. A
/// wrong potential should fail this check.
pub fn verify_potential_with(probe: &DeviationProbe, potential_weights: &LossWeights, tol: f64) -> Result<PotentialCheck> {
    if probe.perturbed.len() > 1 {
        return Err(Error::Contract("both players' parameters differ; the deviation is not unilateral".into()));
    }
    if let Some(&p) = probe.perturbed.first() {
        if p != probe.player {
            return Err(Error::Contract(format!(
                "probe is labelled for player {} but player {p} deviated",
                probe.player
            )));
        }
    }
    let delta_j = probe.delta_j();
    let delta_f = probe.delta_f_with(potential_weights);
    let residual = (delta_j - delta_f).abs();
    let bound = tol * (1.0 + delta_f.abs());
    Ok(PotentialCheck {
        seed: probe.perturbation.seed,
        player: probe.player,
        delta_j,
        delta_f,
        residual,
        bound,
        passed: residual <= bound,
    })
}

/// Runs `n` seeded probes for each player in parallel.
pub fn potential_sweep(
    rec: &ComplexRecord,
    base: &Strategy,
    cfg: &EngineConfig,
    n: usize,
    magnitude: f64,
    seed: u64,
    tol: f64,
) -> Result<Vec<PotentialCheck>> {
    let jobs: Vec<(Player, u64)> = [Player::Ligand, Player::Protein]
        .into_iter()
        .flat_map(|p| (0..n as u64).map(move |i| (p, crate::seed::derive_seed(seed, i))))
        .collect();
    jobs.par_iter()
        .map(|&(player, s)| {
            let probe = DeviationProbe::run(rec, base, player, Perturbation { seed: s, magnitude }, cfg)?;
            verify_exact_potential(&probe, tol)
        })
        .collect()
}

/// One step whose acting player lowered its own loss by more than `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Improvement {
    pub step: usize,
    pub player: Player,
    pub drop: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AfipReport {
    pub epsilon: f64,
    pub improvements: Vec<Improvement>,
    /// Longest run of consecutive improving transitions.
    pub longest_run: usize,
    /// Trace index where the final improvement-free stretch begins (the
    /// trace length when the last transition still improved).
    pub plateau_start: usize,
    /// Transitions observed inside that stretch.
    pub plateau_len: usize,
    /// The final stretch saw steps of both players and no improvement.
    pub stationary: bool,
}

/// Scans the trace player by player. Entry `t` is compared with the next
/// entry acted by the same player, so both losses come from the same
/// rollout structure; the transition counts as an improvement when that
/// player's loss fell by more than `epsilon`.
pub fn extract_afip(trace: &TrainTrace, epsilon: f64) -> AfipReport {
    let e = &trace.entries;
    let own = |i: usize| match e[i].acting {
        Player::Ligand => e[i].report.j_l,
        Player::Protein => e[i].report.j_p,
    };
    let mut improvements = Vec::new();
    // (entry index, improved, player)
    let mut flags = Vec::new();
    for t in 0..e.len() {
        let player = e[t].acting;
        let Some(next) = (t + 1..e.len()).find(|&u| e[u].acting == player) else {
            continue;
        };
        let drop = own(t) - own(next);
        let improved = drop > epsilon;
        if improved {
            improvements.push(Improvement {
                step: e[t].step,
                player,
                drop,
            });
        }
        flags.push((t, improved, player));
    }
    let mut longest_run = 0;
    let mut run = 0;
    for &(_, f, _) in &flags {
        run = if f { run + 1 } else { 0 };
        longest_run = longest_run.max(run);
    }
    let tail_from = flags.iter().rposition(|&(_, f, _)| f).map_or(0, |i| i + 1);
    let tail = &flags[tail_from..];
    let plateau_start = tail.first().map_or(e.len(), |&(t, _, _)| t);
    let saw = |p: Player| tail.iter().any(|&(_, _, q)| q == p);
    AfipReport {
        epsilon,
        improvements,
        longest_run,
        plateau_start,
        plateau_len: tail.len(),
        stationary: saw(Player::Ligand) && saw(Player::Protein),
    }
}

/// Mean loss of `player` over `records`, summed in the given order.
fn mean_payoff(records: &[&ComplexRecord], s: &Strategy, player: Player, cfg: &EngineConfig, grads: bool) -> Result<(f64, Vec<(Option<GradMap>, Option<GradMap>)>)> {
    let opts = RolloutOptions {
        want_grads: grads,
        ..RolloutOptions::default()
    };
    let results: Vec<_> = records
        .par_iter()
        .map(|rec| rollout(rec, s.models(), cfg, Phase::Train(player), &opts))
        .collect::<Result<_>>()?;
    let n = records.len() as f64;
    let mut total = 0.0;
    let mut g = Vec::with_capacity(results.len());
    for r in results {
        total += payoff(player, &r.report.components(), &cfg.weights) / n;
        g.push(match player {
            Player::Ligand => (r.grads.pocket, r.grads.ligand),
            Player::Protein => (r.grads.protein, None),
        });
    }
    Ok((total, g))
}

/// Best-response gap per player: own loss minus own loss after `steps`
/// full-batch Adam steps (constant `lr`) on that player alone.
pub fn nash_gap(base: &Strategy, records: &[ComplexRecord], cfg: &EngineConfig, steps: usize, lr: f64) -> Result<(f64, f64)> {
    if records.is_empty() {
        return Err(Error::InvalidInput("nash gap needs at least one complex".into()));
    }
    let mut sorted: Vec<&ComplexRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let gap = |player: Player| -> Result<f64> {
        if steps == 0 {
            return Ok(0.0);
        }
        let (before, _) = mean_payoff(&sorted, base, player, cfg, false)?;
        let mut s = base.clone();
        let mut adams: Vec<Adam> = s.owned_mut(player).into_iter().map(|p| Adam::new(p)).collect();
        for _ in 0..steps {
            let (_, grads) = mean_payoff(&sorted, &s, player, cfg, true)?;
            let scale = 1.0 / grads.len() as f64;
            for (slot, (params, adam)) in s.owned_mut(player).into_iter().zip(adams.iter_mut()).enumerate() {
                params.zero_grad();
                for g in &grads {
                    let g = if slot == 0 { &g.0 } else { &g.1 };
                    params.accumulate_grads(g.as_ref().expect("acting player gradients"), scale)?;
                }
                adam.step(params, lr, cfg.loops.param_clamp);
            }
        }
        let (after, _) = mean_payoff(&sorted, &s, player, cfg, false)?;
        Ok(before - after)
    };
    Ok((gap(Player::Ligand)?, gap(Player::Protein)?))
}
