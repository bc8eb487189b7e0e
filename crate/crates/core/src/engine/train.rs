use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::complex::ComplexRecord;
use crate::config::{ModelConfig, RunConfig};
use crate::engine::{derive_seed, Adam, Checkpoint, EngineConfig, Models, Phase, Player, RolloutOptions};
use crate::error::{Error, Result};
use crate::geom::Point;
use crate::net::{GradMap, ModelKind, ModelParams};
use crate::objectives::LossReport;

use super::rollout::rollout;

pub const TRACE_HEADER: &str = "step,acting_player,pocket_cls,pocket_center,ligand_coord,pocket_coord,dis_map,J_L,J_P,F";

const CHECKPOINT_FILE: &str = "checkpoint.json";

/// Parameters and optimizer state of all three models.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub pocket: ModelParams,
    pub ligand: ModelParams,
    pub protein: ModelParams,
    adam_pocket: Adam,
    adam_ligand: Adam,
    adam_protein: Adam,
    /// Next epoch to run.
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: usize,
}

impl TrainState {
    pub fn init(model: &ModelConfig, d_l: usize, d_p: usize, seed: u64) -> Result<Self> {
        let make = |kind: ModelKind, stream: u64| {
            ModelParams::init(model.shape(kind, d_l, d_p), derive_seed(seed, stream), model.coord_init())
        };
        Ok(Self::from_params(
            make(ModelKind::Pocket, 11)?,
            make(ModelKind::Ligand, 12)?,
            make(ModelKind::Protein, 13)?,
        ))
    }

    pub fn from_params(pocket: ModelParams, ligand: ModelParams, protein: ModelParams) -> Self {
        Self {
            adam_pocket: Adam::new(&pocket),
            adam_ligand: Adam::new(&ligand),
            adam_protein: Adam::new(&protein),
            pocket,
            ligand,
            protein,
            epoch: 0,
            step: 0,
        }
    }

    /// Restores parameters; optimizer moments start fresh.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let (s, l, p) = ck.models()?;
        let mut st = Self::from_params(s, l, p);
        st.epoch = ck.epoch;
        st.step = ck.step;
        Ok(st)
    }

    pub fn models(&self) -> Models<'_> {
        Models {
            pocket: &self.pocket,
            ligand: &self.ligand,
            protein: &self.protein,
        }
    }

    pub fn checkpoint(&self, cfg: &RunConfig) -> Checkpoint {
        Checkpoint::new(cfg, self.epoch, self.step, &self.pocket, &self.ligand, &self.protein)
    }

    /// Averages per-sample gradients into the acting models and steps them.
    /// Returns false when any update was skipped for non-finite gradients.
    fn apply(&mut self, acting: Player, grads: &[(Option<GradMap>, Option<GradMap>)], lr: f64, clamp: Option<f64>) -> Result<bool> {
        let scale = 1.0 / grads.len() as f64;
        let slots: Vec<(&mut ModelParams, &mut Adam, usize)> = match acting {
            Player::Ligand => vec![
                (&mut self.pocket, &mut self.adam_pocket, 0),
                (&mut self.ligand, &mut self.adam_ligand, 1),
            ],
            Player::Protein => vec![(&mut self.protein, &mut self.adam_protein, 0)],
        };
        let mut ok = true;
        for (params, adam, slot) in slots {
            params.zero_grad();
            for g in grads {
                let g = if slot == 0 { &g.0 } else { &g.1 };
                let g = g.as_ref().ok_or_else(|| Error::Contract("rollout returned no gradients".into()))?;
                params.accumulate_grads(g, scale)?;
            }
            ok &= adam.step(params, lr, clamp);
        }
        Ok(ok)
    }
}

/// Mean loss of one optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub step: usize,
    pub epoch: usize,
    pub acting: Player,
    pub report: LossReport,
    /// Seconds since training started; not written to the CSV.
    pub wall_time: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub entries: Vec<TraceEntry>,
}

impl TrainTrace {
    pub fn potentials(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.report.potential_f).collect()
    }
}

/// Writes one row per step. Wall time is left out so equal seeds give
/// byte-identical files.
pub fn write_trace_csv(path: &Path, trace: &TrainTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(TRACE_HEADER.split(',')).map_err(|e| Error::csv(path, e))?;
    for e in &trace.entries {
        let r = &e.report;
        let row = [
            e.step.to_string(),
            e.acting.symbol().to_string(),
            r.pocket_cls.to_string(),
            r.pocket_center.to_string(),
            r.ligand_coord.to_string(),
            r.pocket_coord.to_string(),
            r.dis_map.to_string(),
            r.j_l.to_string(),
            r.j_p.to_string(),
            r.potential_f.to_string(),
        ];
        w.write_record(&row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub seed: u64,
    /// Where `checkpoint.json` is refreshed after every epoch.
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub trace: TrainTrace,
    /// Steps dropped because a loss or gradient was not finite.
    pub skipped_steps: usize,
}

/// Runs epochs `state.epoch..cfg.loops.epochs`. Each epoch belongs to one
/// acting player; the other player's models are only read.
pub fn train(records: &[ComplexRecord], cfg: &RunConfig, state: TrainState, opts: &TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    let engine = cfg.engine();
    let lc = &engine.loops;
    let stochastic = lc.dropout > 0.0 || engine.pocket.gumbel_train;
    let start = Instant::now();
    let mut state = state;
    let mut trace = TrainTrace::default();
    let mut skipped = 0;

    for epoch in state.epoch..lc.epochs {
        let acting = lc.acting_player(epoch);
        let lr = lc.schedule.rate(lc.learning_rate, epoch, lc.epochs);
        let mut order: Vec<usize> = (0..records.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, 1 << 32 | epoch as u64)));

        for batch in order.chunks(lc.batch_size) {
            let step_seed = derive_seed(opts.seed, state.step as u64);
            let results: Vec<Result<(LossReport, (Option<GradMap>, Option<GradMap>))>> = batch
                .par_iter()
                .enumerate()
                .map(|(i, &idx)| {
                    let ro = RolloutOptions {
                        stochastic,
                        seed: derive_seed(step_seed, i as u64),
                        want_grads: true,
                        ..RolloutOptions::default()
                    };
                    let r = rollout(&records[idx], state.models(), &engine, Phase::Train(acting), &ro)?;
                    let g = match acting {
                        Player::Ligand => (r.grads.pocket, r.grads.ligand),
                        Player::Protein => (r.grads.protein, None),
                    };
                    Ok((r.report, g))
                })
                .collect();

            let mut reports = Vec::with_capacity(batch.len());
            let mut grads = Vec::with_capacity(batch.len());
            let mut numerical = None;
            for (res, &idx) in results.into_iter().zip(batch) {
                match res {
                    Ok((rep, g)) => {
                        reports.push(rep);
                        grads.push(g);
                    }
                    Err(e) if e.is_numerical() => numerical = Some((records[idx].id.clone(), e)),
                    Err(e) => return Err(e),
                }
            }
            if let Some((id, e)) = numerical {
                skipped += 1;
                log::warn!("step {}: {id}: {e}; update skipped", state.step);
                state.step += 1;
                continue;
            }
            if !state.apply(acting, &grads, lr, lc.param_clamp)? {
                skipped += 1;
            }
            let report = LossReport::mean(&reports, &engine.weights);
            log::debug!(
                "epoch {epoch} step {} [{acting}] J_L={:.5} J_P={:.5} F={:.5}",
                state.step,
                report.j_l,
                report.j_p,
                report.potential_f
            );
            trace.entries.push(TraceEntry {
                step: state.step,
                epoch,
                acting,
                report,
                wall_time: start.elapsed().as_secs_f64(),
            });
            state.step += 1;
        }
        state.epoch = epoch + 1;
        if let Some(dir) = &opts.checkpoint_dir {
            state.checkpoint(cfg).save(&dir.join(CHECKPOINT_FILE))?;
        }
        if let Some(last) = trace.entries.last() {
            log::info!("epoch {epoch} [{acting}] F={:.5}", last.report.potential_f);
        }
    }
    Ok(TrainOutcome {
        state,
        trace,
        skipped_steps: skipped,
    })
}

/// Poses produced for one complex at inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub ligand: Vec<Point>,
    /// Every residue: predicted where selected, apo elsewhere.
    pub residues: Vec<Point>,
    pub selection: Vec<bool>,
    pub report: LossReport,
    pub runtime_s: f64,
}

impl Prediction {
    /// Copy of `input` carrying the predicted poses in its holo slots and
    /// the predicted pocket indicator.
    pub fn to_record(&self, input: &ComplexRecord) -> Result<ComplexRecord> {
        if input.id != self.id || input.n_atoms() != self.ligand.len() || input.n_residues() != self.residues.len() {
            return Err(Error::InvalidInput(format!(
                "prediction {} does not match complex {}",
                self.id, input.id
            )));
        }
        let mut out = input.clone();
        for (a, &p) in out.atoms.iter_mut().zip(&self.ligand) {
            a.holo = p;
        }
        for ((r, &p), &on) in out.residues.iter_mut().zip(&self.residues).zip(&self.selection) {
            r.holo = p;
            r.pocket = on;
        }
        out.runtime_s = Some(self.runtime_s);
        Ok(out)
    }
}

/// Deterministic inference over every complex, in input order.
pub fn infer(records: &[ComplexRecord], models: Models<'_>, cfg: &EngineConfig) -> Result<Vec<Prediction>> {
    cfg.validate()?;
    records
        .par_iter()
        .map(|rec| {
            let t0 = Instant::now();
            let r = rollout(rec, models, cfg, Phase::Inference, &RolloutOptions::default())?;
            Ok(Prediction {
                id: rec.id.clone(),
                ligand: r.ligand,
                residues: r.residues,
                selection: r.selection.indicator,
                report: r.report,
                runtime_s: t0.elapsed().as_secs_f64(),
            })
        })
        .collect()
}
