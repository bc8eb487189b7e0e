#![allow(dead_code)]

use dockgame::complex::ComplexRecord;
use dockgame::config::RunConfig;
use dockgame::data::{self, SynthSpec};
use dockgame::engine::{EngineConfig, LrSchedule, TrainState};
use dockgame::geom::Point;

/// Small synthetic complex, quick enough for per-test rollouts.
pub fn small_complex(seed: u64) -> ComplexRecord {
    let spec = SynthSpec {
        n_complexes: 1,
        atoms: [5, 7],
        residues: [14, 18],
        pocket: [4, 6],
        seed,
        ..SynthSpec::default()
    };
    data::generate(&spec).unwrap().remove(0)
}

pub fn small_dataset(n: usize, seed: u64) -> Vec<ComplexRecord> {
    let spec = SynthSpec {
        n_complexes: n,
        atoms: [5, 7],
        residues: [14, 18],
        pocket: [4, 6],
        seed,
        ..SynthSpec::default()
    };
    data::generate(&spec).unwrap()
}

/// Tiny preset with short loops; coordinate heads start at `coord_scale`.
pub fn tiny_config(coord_scale: f64) -> RunConfig {
    let mut cfg = RunConfig::default().with_tiny_model();
    cfg.model.coord_init_scale = coord_scale;
    cfg.loops.m_l = 2;
    cfg.loops.m_p = 2;
    cfg.loops.n_l = 2;
    cfg.loops.n_p = 2;
    cfg.loops.dropout = 0.0;
    cfg
}

pub fn engine(cfg: &RunConfig) -> EngineConfig {
    cfg.engine()
}

pub fn fresh_state(cfg: &RunConfig, rec: &ComplexRecord, seed: u64) -> TrainState {
    TrainState::init(&cfg.model, rec.atoms[0].feat.len(), rec.residues[0].feat.len(), seed).unwrap()
}

/// Settings under which a single complex is fitted in 200 steps.
pub fn overfit_config() -> RunConfig {
    let mut cfg = tiny_config(0.0);
    cfg.loops.epochs = 200;
    cfg.loops.batch_size = 1;
    cfg.loops.learning_rate = 2e-3;
    cfg.loops.schedule = LrSchedule::Constant;
    cfg.synth.n_complexes = 1;
    cfg
}

pub fn max_dev(a: &[Point], b: &[Point]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(p, q)| (0..3).map(move |k| (p[k] - q[k]).abs()))
        .fold(0.0, f64::max)
}
