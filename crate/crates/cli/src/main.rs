//! `dockgame`: data generation, training, inference, evaluation and the
//! game-theoretic checks from one binary.
//!
//! Exit codes: 0 success, 1 usage error, 2 invalid input or failed check,
//! 3 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dockgame::config::RunConfig;
use dockgame::data::{self, LoadedDataset};
use dockgame::engine::{self, Checkpoint, TrainOptions, TrainState};
use dockgame::eval;
use dockgame::game::{self, Strategy};
use dockgame::gradcheck;
use dockgame::Error;

#[derive(Parser, Debug)]
#[command(name = "dockgame", version, about = "Two-player docking game with loop self-play training", arg_required_else_help = true)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct Global {
    /// Worker threads; 1 is the deterministic reference mode.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Use the small model preset.
    #[arg(long, global = true)]
    tiny: bool,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log level: error, warn, info, debug, trace.
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic dataset.
    Gen {
        /// TOML file holding synthetic-data settings (the `[synth]` keys).
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the number of complexes.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train the three models by alternating self-play.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoint.json and trace.csv.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Predict poses for every complex in a dataset.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against references.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write per-complex metrics.
        #[arg(long)]
        per_complex: Option<PathBuf>,
        #[arg(long, default_value = "LoopPlay")]
        label: String,
    },
    /// Check the exact-potential identity with unilateral deviations.
    VerifyPotential {
        /// Parameters to probe; fresh ones when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset to take the probe complex from; synthetic when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value_t = 100)]
        probes: usize,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        /// Standard deviation of the Gaussian parameter perturbation.
        #[arg(long, default_value_t = 1e-3)]
        magnitude: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare tape gradients with central finite differences.
    Gradcheck {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-4)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep loop counts (M, N) and tabulate test metrics.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        /// Grid points as `M,N`, e.g. `--grid 1,1 2,2`.
        #[arg(long, num_args = 1.., required = true, value_parser = parse_pair)]
        grid: Vec<(usize, usize)>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        /// Train/validation/test fractions.
        #[arg(long, default_value = "0.8,0.1,0.1", value_parser = parse_fractions)]
        split: (f64, f64, f64),
    },
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected M,N, got {s:?}"))?;
    let p = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("{x:?}: {e}"));
    Ok((p(a)?, p(b)?))
}

fn parse_fractions(s: &str) -> Result<(f64, f64, f64), String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match v.as_slice() {
        &[a, b, c] => Ok((a, b, c)),
        _ => Err(format!("expected three fractions, got {s:?}")),
    }
}

type CliResult = Result<ExitCode, Error>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() || e.kind() == clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.global.log_level)
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.global.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(1);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("thread pool is configured once");
    }
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}

/// Configuration file, then command-line overrides.
fn load_config(g: &Global) -> Result<RunConfig, Error> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
        cfg.synth.seed = s;
    }
    if g.tiny {
        cfg = cfg.with_tiny_model();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_records(path: &Path) -> Result<Vec<dockgame::complex::ComplexRecord>, Error> {
    let LoadedDataset { records, warnings, .. } = data::load_dataset(path)?;
    for w in warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(records)
}

fn fresh_or_loaded(cfg: &RunConfig, checkpoint: Option<&Path>, d_l: usize, d_p: usize) -> Result<(RunConfig, Strategy), Error> {
    match checkpoint {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            let (pocket, ligand, protein) = ck.models()?;
            Ok((ck.config, Strategy { pocket, ligand, protein }))
        }
        None => {
            let st = TrainState::init(&cfg.model, d_l, d_p, cfg.seed)?;
            Ok((
                cfg.clone(),
                Strategy {
                    pocket: st.pocket,
                    ligand: st.ligand,
                    protein: st.protein,
                },
            ))
        }
    }
}

fn run(cli: &Cli) -> CliResult {
    let cfg = load_config(&cli.global)?;
    match &cli.cmd {
        Cmd::Gen { spec, out, count } => {
            let mut synth = match spec {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::io(format!("reading {}", p.display()), e))?;
                    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
                }
                None => cfg.synth.clone(),
            };
            if let Some(s) = cli.global.seed {
                synth.seed = s;
            }
            if let Some(n) = count {
                synth.n_complexes = *n;
            }
            let records = data::generate(&synth)?;
            data::save_dataset(out, &records, "dataset")?;
            log::info!("wrote {} complexes to {}", records.len(), out.display());
        }
        Cmd::Train {
            data: path,
            out,
            epochs,
            lr,
            resume,
        } => {
            let mut cfg = cfg;
            if let Some(e) = epochs {
                cfg.loops.epochs = *e;
            }
            if let Some(r) = lr {
                cfg.loops.learning_rate = *r;
            }
            cfg.validate()?;
            let records = load_records(path)?;
            let first = records
                .first()
                .ok_or_else(|| Error::InvalidInput(format!("{}: no complexes to train on", path.display())))?;
            let (d_l, d_p) = (first.atoms[0].feat.len(), first.residues[0].feat.len());
            let state = match resume {
                Some(p) => TrainState::from_checkpoint(&Checkpoint::load(p)?)?,
                None => TrainState::init(&cfg.model, d_l, d_p, cfg.seed)?,
            };
            std::fs::create_dir_all(out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
            let opts = TrainOptions {
                seed: cfg.seed,
                checkpoint_dir: Some(out.clone()),
            };
            let outcome = engine::train(&records, &cfg, state, &opts)?;
            engine::write_trace_csv(&out.join("trace.csv"), &outcome.trace)?;
            std::fs::write(out.join("config.toml"), cfg.to_toml_string())
                .map_err(|e| Error::io(format!("writing {}", out.display()), e))?;
            if let Some(last) = outcome.trace.entries.last() {
                println!(
                    "steps={} skipped={} J_L={:.6} J_P={:.6} F={:.6}",
                    outcome.state.step, outcome.skipped_steps, last.report.j_l, last.report.j_p, last.report.potential_f
                );
            }
        }
        Cmd::Infer { checkpoint, data: path, out } => {
            let ck = Checkpoint::load(checkpoint)?;
            let (s, l, p) = ck.models()?;
            let models = engine::Models {
                pocket: &s,
                ligand: &l,
                protein: &p,
            };
            let records = load_records(path)?;
            let preds = engine::infer(&records, models, &ck.config.engine())?;
            let out_records = preds
                .iter()
                .zip(&records)
                .map(|(p, r)| p.to_record(r))
                .collect::<Result<Vec<_>, _>>()?;
            data::save_dataset(out, &out_records, "prediction")?;
            let mean = preds.iter().map(|p| p.runtime_s).sum::<f64>() / preds.len().max(1) as f64;
            println!("predicted {} complexes, mean runtime {mean:.4} s", preds.len());
        }
        Cmd::Eval {
            pred,
            truth,
            out,
            per_complex,
            label,
        } => {
            let preds = load_records(pred)?;
            let truths = load_records(truth)?;
            let metrics = eval::evaluate(&preds, &truths)?;
            let summary = eval::summarize(&metrics)?;
            eval::write_summary_csv(out, &[(label.clone(), summary)])?;
            if let Some(p) = per_complex {
                eval::write_metrics_csv(p, &metrics)?;
            }
            println!(
                "n={} rmsd_mean={:.4} below_2A={:.2}% below_5A={:.2}% pocket_residue_acc={:.2}% pocket_rmsd={:.4}",
                summary.n,
                summary.ligand_rmsd.mean,
                summary.ligand_rmsd.pct_below_2a,
                summary.ligand_rmsd.pct_below_5a,
                summary.pocket_accuracy,
                summary.pocket_rmsd
            );
        }
        Cmd::VerifyPotential {
            checkpoint,
            data: path,
            index,
            probes,
            tol,
            magnitude,
            out,
        } => {
            let rec = match path {
                Some(p) => {
                    let recs = load_records(p)?;
                    recs.get(*index)
                        .cloned()
                        .ok_or_else(|| Error::InvalidInput(format!("{} has no complex {index}", p.display())))?
                }
                None => {
                    let mut synth = cfg.synth.clone();
                    synth.n_complexes = 1;
                    data::generate(&synth)?.remove(0)
                }
            };
            let (d_l, d_p) = (rec.atoms[0].feat.len(), rec.residues[0].feat.len());
            let (run_cfg, base) = fresh_or_loaded(&cfg, checkpoint.as_deref(), d_l, d_p)?;
            let checks = game::potential_sweep(&rec, &base, &run_cfg.engine(), *probes, *magnitude, cfg.seed, *tol)?;
            if let Some(p) = out {
                let mut w = csv::Writer::from_path(p).map_err(|e| Error::io(format!("writing {}", p.display()), e.into()))?;
                for c in &checks {
                    w.serialize(c).map_err(|e| Error::io(format!("writing {}", p.display()), e.into()))?;
                }
                w.flush().map_err(|e| Error::io(format!("writing {}", p.display()), e))?;
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            let worst = checks.iter().map(|c| c.residual / (1.0 + c.delta_f.abs())).fold(0.0, f64::max);
            println!("probes={} failed={failed} max_relative_residual={worst:.3e}", checks.len());
            if failed > 0 {
                return Ok(ExitCode::from(2));
            }
        }
        Cmd::Gradcheck { checkpoint, step, tol, out } => {
            let mut cfg = cfg;
            if checkpoint.is_none() && !cli.global.tiny && cli.global.config.is_none() {
                cfg = cfg.with_tiny_model();
            }
            let rec = gradcheck::probe_complex(cfg.seed, 4, 6, cfg.synth.d_l, cfg.synth.d_p);
            let (run_cfg, s) = fresh_or_loaded(&cfg, checkpoint.as_deref(), cfg.synth.d_l, cfg.synth.d_p)?;
            let report = gradcheck::gradcheck(&rec, s.models(), &run_cfg.engine(), *step)?;
            if let Some(p) = out {
                let mut w = csv::Writer::from_path(p).map_err(|e| Error::io(format!("writing {}", p.display()), e.into()))?;
                for t in &report.tensors {
                    w.serialize(t).map_err(|e| Error::io(format!("writing {}", p.display()), e.into()))?;
                }
                w.flush().map_err(|e| Error::io(format!("writing {}", p.display()), e))?;
            }
            let max = report.max_rel_err();
            let worst = report.worst().map(|t| format!("{}/{}", t.model, t.tensor)).unwrap_or_default();
            println!("tensors={} max_relative_error={max:.3e} worst={worst}", report.tensors.len());
            if !(max <= *tol) {
                return Ok(ExitCode::from(2));
            }
        }
        Cmd::Ablate {
            data: path,
            grid,
            out,
            epochs,
            split,
        } => {
            let records = load_records(path)?;
            let (train_set, _val, test_set) = data::split(&records, *split, cfg.seed)?;
            if train_set.is_empty() || test_set.is_empty() {
                return Err(Error::InvalidInput("ablation needs nonempty train and test splits".into()));
            }
            let (d_l, d_p) = (records[0].atoms[0].feat.len(), records[0].residues[0].feat.len());
            let mut rows = Vec::new();
            for &(m, n) in grid {
                let mut c = cfg.clone();
                (c.loops.m_l, c.loops.m_p, c.loops.n_l, c.loops.n_p) = (m, m, n, n);
                if let Some(e) = epochs {
                    c.loops.epochs = *e;
                }
                c.validate()?;
                let state = TrainState::init(&c.model, d_l, d_p, c.seed)?;
                let outcome = engine::train(&train_set, &c, state, &TrainOptions {
                    seed: c.seed,
                    checkpoint_dir: None,
                })?;
                let preds = engine::infer(&test_set, outcome.state.models(), &c.engine())?;
                let pred_records = preds
                    .iter()
                    .zip(&test_set)
                    .map(|(p, r)| p.to_record(r))
                    .collect::<Result<Vec<_>, _>>()?;
                let summary = eval::summarize(&eval::evaluate(&pred_records, &test_set)?)?;
                println!("LoopPlay({m},{n}) steps={} rmsd_mean={:.4}", outcome.state.step, summary.ligand_rmsd.mean);
                rows.push((format!("LoopPlay({m},{n})"), summary));
            }
            eval::write_summary_csv(out, &rows)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
