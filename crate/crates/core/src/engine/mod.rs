//! Alternating loop self-play: rollouts, optimizer and training driver.

mod checkpoint;
mod optim;
mod rollout;
mod train;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::complex::GraphConfig;
use crate::error::{Error, Result};
use crate::net::PocketConfig;
use crate::objectives::LossWeights;

pub use crate::seed::derive_seed;
pub use checkpoint::{Checkpoint, ModelDump, CHECKPOINT_FORMAT};
pub use optim::{Adam, LrSchedule};
pub use rollout::{
    ligand_phase_step, protein_phase_step, rollout, ForwardCounts, Models, Phase, PhaseGrads, Replay, RolloutOptions,
    RolloutResult,
};
pub use train::{
    infer, train, write_trace_csv, Prediction, TraceEntry, TrainOptions, TrainOutcome, TrainState, TrainTrace,
    TRACE_HEADER,
};

/// The two players of the docking game.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Player {
    /// Owns the pocket classifier and the ligand docking model.
    #[serde(rename = "L")]
    Ligand,
    /// Owns the pocket docking model.
    #[serde(rename = "P")]
    Protein,
}

impl Player {
    pub fn other(self) -> Player {
        match self {
            Player::Ligand => Player::Protein,
            Player::Protein => Player::Ligand,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Player::Ligand => "L",
            Player::Protein => "P",
        }
    }
}

impl fmt::Display for Player {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// When interface edges are rebuilt from the moving coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecomputeInterface {
    /// At the start of every outer round.
    Outer,
    /// Before every model forward.
    Inner,
    /// Only once, at the initial pocket placement.
    Never,
}

/// Loop counts and optimisation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopConfig {
    pub m_l: usize,
    pub m_p: usize,
    pub n_l: usize,
    pub n_p: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub schedule: LrSchedule,
    /// Epochs per acting-player switch.
    pub alternation_period: usize,
    pub recompute_interface: RecomputeInterface,
    /// Hand the opponent the refined pose instead of the round's input pose.
    pub exchange_uses_refined: bool,
    /// Optional bound on every parameter entry after each update.
    pub param_clamp: Option<f64>,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            m_l: 2,
            m_p: 2,
            n_l: 6,
            n_p: 6,
            epochs: 200,
            batch_size: 4,
            learning_rate: 5e-5,
            dropout: 0.1,
            schedule: LrSchedule::Linear,
            alternation_period: 1,
            recompute_interface: RecomputeInterface::Outer,
            exchange_uses_refined: false,
            param_clamp: None,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [self.m_l, self.m_p, self.n_l, self.n_p, self.epochs, self.batch_size, self.alternation_period];
        if counts.contains(&0) {
            return Err(Error::Config(format!(
                "loop counts, epochs, batch size and alternation period must be >= 1: {self:?}"
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if let Some(c) = self.param_clamp {
            if !(c > 0.0) {
                return Err(Error::Config("param_clamp must be positive".into()));
            }
        }
        Ok(())
    }

    /// Acting player during `epoch` (0-based), starting with the ligand player.
    pub fn acting_player(&self, epoch: usize) -> Player {
        if (epoch / self.alternation_period) % 2 == 0 {
            Player::Ligand
        } else {
            Player::Protein
        }
    }
}

/// Everything a rollout needs besides the parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EngineConfig {
    pub loops: LoopConfig,
    pub weights: LossWeights,
    pub graph: GraphConfig,
    pub pocket: PocketConfig,
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        self.loops.validate()?;
        self.weights.validate()?;
        self.graph.validate()?;
        self.pocket.validate()
    }
}
