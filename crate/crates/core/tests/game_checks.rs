mod common;

use dockgame::engine::{Player, TraceEntry, TrainTrace};
use dockgame::game::{
    extract_afip, nash_gap, verify_exact_potential, verify_potential_with, DeviationProbe, Perturbation, Strategy,
};
use dockgame::objectives::{LossComponents, LossReport, LossWeights};
use dockgame::Error;
use proptest::prelude::*;

fn base_strategy(seed: u64) -> (dockgame::complex::ComplexRecord, dockgame::config::RunConfig, Strategy) {
    let rec = common::small_complex(seed);
    let cfg = common::tiny_config(0.1);
    let st = common::fresh_state(&cfg, &rec, seed);
    let s = Strategy::from_models(st.models());
    (rec, cfg, s)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn unilateral_deviations_move_loss_and_potential_equally(
        seed in 0u64..50,
        pseed in any::<u64>(),
        magnitude in 1e-3f64..5e-2,
        ligand in any::<bool>(),
    ) {
        let (rec, cfg, base) = base_strategy(seed);
        let player = if ligand { Player::Ligand } else { Player::Protein };
        let probe = DeviationProbe::run(&rec, &base, player, Perturbation { seed: pseed, magnitude }, &common::engine(&cfg)).unwrap();
        prop_assert_eq!(&probe.perturbed, &vec![player]);
        let check = verify_exact_potential(&probe, 1e-9).unwrap();
        prop_assert!(check.passed, "{:?}", check);
        prop_assert!(check.delta_j != 0.0);
    }
}

#[test]
fn a_wrong_potential_fails_the_identity() {
    let (rec, cfg, base) = base_strategy(2);
    let probe = DeviationProbe::run(&rec, &base, Player::Ligand, Perturbation { seed: 1, magnitude: 2e-2 }, &common::engine(&cfg)).unwrap();
    assert!((probe.deviated.dis_map - probe.base.dis_map).abs() > 1e-6);
    assert!(verify_exact_potential(&probe, 1e-9).unwrap().passed);
    let doubled = LossWeights {
        gamma: 2.0 * cfg.weights.gamma,
        ..cfg.weights
    };
    assert!(!verify_potential_with(&probe, &doubled, 1e-9).unwrap().passed);
}

#[test]
fn bilateral_deviation_is_a_contract_error() {
    let (rec, cfg, base) = base_strategy(3);
    let p = Perturbation { seed: 5, magnitude: 1e-2 };
    let both = p.apply(&p.apply(&base, Player::Ligand), Player::Protein);
    let probe = DeviationProbe::evaluate(&rec, &base, &both, Player::Ligand, p, &common::engine(&cfg)).unwrap();
    assert!(matches!(verify_exact_potential(&probe, 1e-9), Err(Error::Contract(_))));
    // a probe labelled for the player that did not move is rejected too
    let other = p.apply(&base, Player::Protein);
    let probe = DeviationProbe::evaluate(&rec, &base, &other, Player::Ligand, p, &common::engine(&cfg)).unwrap();
    assert!(matches!(verify_exact_potential(&probe, 1e-9), Err(Error::Contract(_))));
}

fn trace(losses: &[f64]) -> TrainTrace {
    let entries = losses
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            let mut report = LossReport::new(
                LossComponents {
                    pocket_cls: 0.0,
                    pocket_center: 0.0,
                    ligand_coord: 0.0,
                    pocket_coord: 0.0,
                    dis_map: 0.0,
                },
                &LossWeights::default(),
            );
            report.j_l = j;
            report.j_p = j;
            TraceEntry {
                step: i + 1,
                epoch: i,
                acting: if i % 2 == 0 { Player::Ligand } else { Player::Protein },
                report,
                wall_time: 0.0,
            }
        })
        .collect();
    TrainTrace { entries }
}

#[test]
fn strictly_falling_trace_improves_at_every_step() {
    let eps = 1e-4;
    let losses: Vec<f64> = (0..12).map(|i| 10.0 - 2.0 * eps * i as f64 * 1.5).collect();
    let r = extract_afip(&trace(&losses), eps);
    // every entry but the last one of each player has a successor
    assert_eq!(r.improvements.len(), 10);
    assert_eq!(r.longest_run, 10);
    assert_eq!(r.plateau_len, 0);
    assert!(!r.stationary);
}

#[test]
fn flat_trace_is_a_plateau_from_the_start() {
    let r = extract_afip(&trace(&[3.0; 10]), 1e-4);
    assert!(r.improvements.is_empty());
    assert_eq!(r.plateau_start, 0);
    assert_eq!(r.plateau_len, 8);
    assert!(r.stationary);
}

#[test]
fn descent_then_flat_ends_in_a_plateau() {
    let mut losses: Vec<f64> = (0..8).map(|i| 5.0 - i as f64).collect();
    losses.extend([-3.0, -3.0, -3.0, -3.0, -3.0, -3.0]);
    let r = extract_afip(&trace(&losses), 1e-4);
    assert!(!r.improvements.is_empty());
    assert!(r.plateau_len > 0 && r.stationary);
    assert!(r.improvements.iter().all(|i| i.step <= r.plateau_start + 1));
}

#[test]
fn nash_gap_of_zero_steps_is_zero() {
    let (_, cfg, base) = base_strategy(4);
    let recs = common::small_dataset(3, 4);
    assert_eq!(nash_gap(&base, &recs, &common::engine(&cfg), 0, 1e-3).unwrap(), (0.0, 0.0));
    assert!(nash_gap(&base, &[], &common::engine(&cfg), 1, 1e-3).is_err());
}

#[test]
fn nash_gap_ignores_record_order_and_is_positive_when_fresh() {
    let recs = common::small_dataset(3, 6);
    let cfg = common::tiny_config(0.1);
    let base = Strategy::from_models(common::fresh_state(&cfg, &recs[0], 6).models());
    let engine = common::engine(&cfg);
    let a = nash_gap(&base, &recs, &engine, 5, 1e-2).unwrap();
    let mut rev = recs.clone();
    rev.reverse();
    assert_eq!(nash_gap(&base, &rev, &engine, 5, 1e-2).unwrap(), a);
    assert!(a.0 > 0.01, "ligand gap {}", a.0);
}
