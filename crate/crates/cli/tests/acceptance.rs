//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit when any
//! criterion fails. The supplementary line does not affect the exit status.
//! Runs single-threaded.

use std::cell::Cell;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use dockgame::complex::{build_complex_graph, place_ligand_at_center, ComplexGraph, ComplexRecord, GraphConfig};
use dockgame::config::RunConfig;
use dockgame::data::{self, SynthSpec};
use dockgame::engine::{infer, train, LrSchedule, Player, TrainOptions, TrainOutcome, TrainState};
use dockgame::eval::{self, centroid_distance, ligand_rmsd, pocket_rmsd};
use dockgame::game::{self, extract_afip, Strategy};
use dockgame::geom::{Point, RigidMotion};
use dockgame::gradcheck;
use dockgame::net::{graph_inputs, model_forward, CoordInit, Dropout, ModelKind, ModelParams, ModelShape, Topology};
use dockgame::objectives::distance_map;
use dockgame::tape::Tape;
use dockgame::tensor::Tensor;
use nalgebra::{DMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn state_for(cfg: &RunConfig, rec: &ComplexRecord) -> TrainState {
    TrainState::init(&cfg.model, rec.atoms[0].feat.len(), rec.residues[0].feat.len(), cfg.seed).unwrap()
}

fn potential_identity() -> Check {
    let cfg = RunConfig::default().with_tiny_model();
    let mut synth = cfg.synth.clone();
    synth.n_complexes = 1;
    let rec = data::generate(&synth).unwrap().remove(0);
    let st = state_for(&cfg, &rec);
    let base = Strategy::from_models(st.models());
    let t = Instant::now();
    let checks = game::potential_sweep(&rec, &base, &cfg.engine(), 100, 1e-3, cfg.seed, 1e-9).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let per = |p: Player| checks.iter().filter(|c| c.player == p).count();
    let failed = checks.iter().filter(|c| !c.passed).count();
    let worst = checks.iter().map(|c| c.residual / (1.0 + c.delta_f.abs())).fold(0.0, f64::max);
    ensure(
        failed == 0 && per(Player::Ligand) == 100 && per(Player::Protein) == 100 && secs < 60.0,
        format!("{} probes, {failed} failed, worst relative residual {worst:.2e}, {secs:.1} s", checks.len()),
    )
}

fn gradient_check() -> Check {
    let mut cfg = RunConfig::default().with_tiny_model();
    cfg.model.coord_init_scale = 0.1;
    (cfg.loops.m_l, cfg.loops.m_p, cfg.loops.n_l, cfg.loops.n_p) = (2, 2, 2, 2);
    let rec = gradcheck::probe_complex(cfg.seed, 4, 6, cfg.synth.d_l, cfg.synth.d_p);
    let st = state_for(&cfg, &rec);
    let t = Instant::now();
    let report = gradcheck::gradcheck(&rec, st.models(), &cfg.engine(), 1e-4).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let models: std::collections::BTreeSet<&str> = report.tensors.iter().map(|t| t.model.as_str()).collect();
    let max = report.max_rel_err();
    ensure(
        max <= 1e-4 && models.len() == 3 && secs < 300.0,
        format!("{} tensors over {} models, max relative error {max:.2e}, {secs:.1} s", report.tensors.len(), models.len()),
    )
}

fn forward(g: &ComplexGraph, p: &ModelParams) -> (Vec<Point>, Vec<Point>, Vec<Tensor>) {
    let topo = Topology::from_graph(g).unwrap();
    let mut tape = Tape::new();
    let bp = p.bind(&mut tape, false);
    let inp = graph_inputs(&mut tape, g);
    let o = model_forward(&mut tape, &bp, &topo, inp, &mut Dropout::off()).unwrap();
    let mut feats = vec![
        tape.value(o.state.atom_feats).clone(),
        tape.value(o.state.res_feats).clone(),
        tape.value(o.state.pair).clone(),
    ];
    if let Some(l) = o.logits {
        feats.push(tape.value(l).clone());
    }
    (
        tape.value(o.state.atom_coords).to_points(),
        tape.value(o.state.res_coords).to_points(),
        feats,
    )
}

fn max_point_dev(a: &[Point], b: &[Point]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(p, q)| (0..3).map(move |k| (p[k] - q[k]).abs()))
        .fold(0.0, f64::max)
}

fn equivariance() -> Check {
    let spec = SynthSpec {
        n_complexes: 1,
        atoms: [5, 7],
        residues: [14, 18],
        pocket: [4, 6],
        seed: 3,
        ..SynthSpec::default()
    };
    let rec = data::generate(&spec).unwrap().remove(0);
    let g = build_complex_graph(&rec, &GraphConfig::default()).unwrap();
    let g = place_ligand_at_center(&g, rec.true_pocket_center());
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut coord_dev, mut feat_dev) = (0.0f64, 0.0f64);
    for kind in [ModelKind::Pocket, ModelKind::Ligand, ModelKind::Protein] {
        let shape = ModelShape {
            kind,
            layers: 2,
            hidden: 12,
            d_l: rec.atoms[0].feat.len(),
            d_p: rec.residues[0].feat.len(),
        };
        let p = ModelParams::init(shape, 5, CoordInit::Scaled(1.0)).unwrap();
        let (a0, r0, f0) = forward(&g, &p);
        for _ in 0..20 {
            let m = RigidMotion::random(&mut rng, 20.0);
            let mut moved = g.clone();
            moved.set_atom_coords(&m.apply_all(&g.atom_coords()));
            moved.set_residue_coords(&m.apply_all(&g.residue_coords()));
            let (a, r, f) = forward(&moved, &p);
            coord_dev = coord_dev
                .max(max_point_dev(&a, &m.apply_all(&a0)))
                .max(max_point_dev(&r, &m.apply_all(&r0)));
            for (x, y) in f.iter().zip(&f0) {
                let d = x.data().iter().zip(y.data()).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
                feat_dev = feat_dev.max(d);
            }
        }
    }
    ensure(
        coord_dev <= 1e-6 && feat_dev <= 1e-6,
        format!("3 models x 20 motions, coordinate deviation {coord_dev:.2e} A, feature deviation {feat_dev:.2e}"),
    )
}

fn metric_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cloud = |n: usize, rng: &mut ChaCha8Rng| -> Vec<Point> {
        (0..n).map(|_| [rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0)]).collect()
    };
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + b.abs());
    let (mut bad, mut order_bad) = (0usize, 0usize);
    for _ in 0..1000 {
        let n = rng.gen_range(1..40);
        let (a, b) = (cloud(n, &mut rng), cloud(n, &mut rng));
        let r = cloud(rng.gen_range(1..12), &mut rng);
        let ma = DMatrix::from_fn(n, 3, |i, k| a[i][k]);
        let mb = DMatrix::from_fn(n, 3, |i, k| b[i][k]);
        let rmsd_ref = ((&ma - &mb).norm_squared() / n as f64).sqrt();
        let cd_ref = (ma.row_mean() - mb.row_mean()).norm();
        let rmsd = ligand_rmsd(&a, &b).unwrap();
        let cd = centroid_distance(&a, &b).unwrap();
        let dm = distance_map(&a, &r);
        let dm_ok = a.iter().enumerate().all(|(i, x)| {
            r.iter().enumerate().all(|(j, y)| {
                close(dm.data()[i * r.len() + j], (Vector3::from(*x) - Vector3::from(*y)).norm())
            })
        });
        if !(close(rmsd, rmsd_ref) && close(cd, cd_ref) && dm_ok) {
            bad += 1;
        }
        if cd > rmsd * (1.0 + 1e-12) + 1e-12 {
            order_bad += 1;
        }
    }
    ensure(
        bad == 0 && order_bad == 0,
        format!("1000 instances, {bad} oracle mismatches, {order_bad} centroid > RMSD"),
    )
}

fn overfit_config() -> RunConfig {
    let mut cfg = RunConfig::default().with_tiny_model();
    (cfg.loops.m_l, cfg.loops.m_p, cfg.loops.n_l, cfg.loops.n_p) = (2, 2, 2, 2);
    cfg.loops.dropout = 0.0;
    cfg.loops.epochs = 200;
    cfg.loops.batch_size = 1;
    cfg.loops.learning_rate = 2e-3;
    cfg.loops.schedule = LrSchedule::Constant;
    cfg.synth.n_complexes = 1;
    cfg
}

struct Probe {
    rec: ComplexRecord,
    cfg: RunConfig,
    out: TrainOutcome,
    secs: f64,
}

fn overfit_probe() -> Probe {
    let cfg = overfit_config();
    let recs = data::generate(&cfg.synth).unwrap();
    let t = Instant::now();
    let out = train(&recs, &cfg, state_for(&cfg, &recs[0]), &TrainOptions::default()).unwrap();
    Probe {
        rec: recs[0].clone(),
        cfg,
        out,
        secs: t.elapsed().as_secs_f64(),
    }
}

fn overfit(p: &Probe) -> Check {
    let pred = &infer(std::slice::from_ref(&p.rec), p.out.state.models(), &p.cfg.engine()).unwrap()[0];
    let lig = ligand_rmsd(&pred.ligand, &p.rec.holo_ligand()).unwrap();
    let poc = pocket_rmsd(&pred.residues, &p.rec.holo_residues(), &p.rec.pocket_labels()).unwrap();
    let steps = p.out.trace.entries.len();
    ensure(
        lig < 0.5 && poc < 0.5 && steps == 200 && p.secs < 600.0,
        format!("{steps} steps, ligand RMSD {lig:.3} A, pocket RMSD {poc:.3} A, {:.1} s", p.secs),
    )
}

fn afip(p: &Probe) -> Check {
    let r = extract_afip(&p.out.trace, 1e-4);
    let n = p.out.trace.entries.len();
    let detail = format!(
        "{} improvements, longest run {}, plateau from entry {} of {n} ({} transitions, both players: {})",
        r.improvements.len(),
        r.longest_run,
        r.plateau_start,
        r.plateau_len,
        r.stationary
    );
    ensure(!r.improvements.is_empty() && r.plateau_len > 0 && r.stationary, detail)
}

/// Epoch means of each player's own loss, averaged over consecutive blocks
/// of ten of that player's epochs; each block may exceed its predecessor by
/// at most 5 %.
fn smoothed_descent(p: &Probe) -> Check {
    let mut worst = (0.0f64, String::new());
    for player in [Player::Ligand, Player::Protein] {
        let mut means: Vec<(usize, f64, usize)> = Vec::new();
        for e in p.out.trace.entries.iter().filter(|e| e.acting == player) {
            let j = match player {
                Player::Ligand => e.report.j_l,
                Player::Protein => e.report.j_p,
            };
            match means.last_mut() {
                Some((ep, s, k)) if *ep == e.epoch => {
                    *s += j;
                    *k += 1;
                }
                _ => means.push((e.epoch, j, 1)),
            }
        }
        let m: Vec<f64> = means.iter().map(|&(_, s, k)| s / k as f64).collect();
        let blocks: Vec<f64> = m.chunks_exact(10).map(|w| w.iter().sum::<f64>() / 10.0).collect();
        for (i, w) in blocks.windows(2).enumerate() {
            let ratio = w[1] / w[0];
            if ratio > worst.0 {
                worst = (ratio, format!("{player} block {} {:.4} after {:.4}", i + 1, w[1], w[0]));
            }
        }
    }
    ensure(worst.0 <= 1.05, format!("largest block-to-block ratio {:.3} ({})", worst.0, worst.1))
}

fn ablation() -> Check {
    let mut cfg = RunConfig::default().with_tiny_model();
    cfg.loops.epochs = 100;
    cfg.loops.batch_size = 4;
    cfg.loops.learning_rate = 2e-3;
    cfg.loops.dropout = 0.0;
    cfg.synth.n_complexes = 200;
    let records = data::generate(&cfg.synth).unwrap();
    let (train_set, _, test_set) = data::split(&records, (0.8, 0.1, 0.1), cfg.seed).unwrap();
    let t = Instant::now();
    let mut means = Vec::new();
    let mut steps = Vec::new();
    for k in [1, 2] {
        let mut c = cfg.clone();
        (c.loops.m_l, c.loops.m_p, c.loops.n_l, c.loops.n_p) = (k, k, k, k);
        let out = train(&train_set, &c, state_for(&c, &records[0]), &TrainOptions::default()).unwrap();
        let preds = infer(&test_set, out.state.models(), &c.engine()).unwrap();
        let pred_records: Vec<ComplexRecord> = preds.iter().zip(&test_set).map(|(p, r)| p.to_record(r).unwrap()).collect();
        let s = eval::summarize(&eval::evaluate(&pred_records, &test_set).unwrap()).unwrap();
        means.push(s.ligand_rmsd.mean);
        steps.push(out.state.step);
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(
        means[1] <= 0.95 * means[0] && steps[0] == steps[1] && secs < 7200.0,
        format!(
            "{} test complexes, {} steps each, mean RMSD (1,1) {:.4} A vs (2,2) {:.4} A, {secs:.0} s",
            test_set.len(),
            steps[0],
            means[0],
            means[1]
        ),
    )
}

fn inference_speed() -> Check {
    let spec = SynthSpec {
        n_complexes: 1,
        atoms: [150, 150],
        residues: [150, 150],
        pocket: [10, 14],
        seed: 5,
        ..SynthSpec::default()
    };
    let rec = data::generate(&spec).unwrap().remove(0);
    let cfg = RunConfig::default().with_tiny_model();
    let st = state_for(&cfg, &rec);
    let preds = infer(std::slice::from_ref(&rec), st.models(), &cfg.engine()).unwrap();
    let secs = preds[0].runtime_s;
    ensure(secs < 1.0, format!("150 atoms x 150 residues in {secs:.3} s"))
}

fn dockgame(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_dockgame"))
        .args(args)
        .args(["--log-level", "warn"])
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = |p: &str| dir.path().join(p).to_string_lossy().into_owned();
    let data = path("d.jsonl");
    dockgame(&["gen", "--tiny", "--seed", "7", "--count", "6", "--out", &data])?;
    for run in ["a", "b"] {
        dockgame(&["train", "--jobs", "1", "--tiny", "--seed", "7", "--epochs", "6", "--lr", "1e-3", "--data", &data, "--out", &path(run)])?;
    }
    let read = |r: &str| std::fs::read(Path::new(&path(r)).join("trace.csv")).map_err(|e| e.to_string());
    let (a, b) = (read("a")?, read("b")?);
    ensure(a == b && !a.is_empty(), format!("two trace CSVs of {} and {} bytes, identical: {}", a.len(), b.len(), a == b))
}

fn main() -> ExitCode {
    rayon::ThreadPoolBuilder::new().num_threads(1).build_global().unwrap();
    panic::set_hook(Box::new(|_| {}));
    let failed = Cell::new(0);
    let report = |name: &str, f: &mut dyn FnMut() -> Check| {
        let t = Instant::now();
        let res = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match res {
            Ok(d) => println!("PASS  {name}: {d} [{secs:.1} s]"),
            Err(d) => {
                failed.set(failed.get() + 1);
                println!("FAIL  {name}: {d} [{secs:.1} s]");
            }
        }
    };
    report("exact potential identity", &mut potential_identity);
    report("gradient check", &mut gradient_check);
    report("E(3) equivariance", &mut equivariance);
    report("metric oracles", &mut metric_oracles);
    let probe = overfit_probe();
    report("overfit probe", &mut || overfit(&probe));
    report("improvement path", &mut || afip(&probe));
    report("ablation direction", &mut ablation);
    report("inference speed", &mut inference_speed);
    report("train determinism", &mut determinism);
    let primary_failed = failed.get();
    // reported for visibility, not part of the exit status
    report("supplementary: smoothed loss descent", &mut || smoothed_descent(&probe));
    println!("{primary_failed} failing acceptance criteria, {} failing supplementary", failed.get() - primary_failed);
    if primary_failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
