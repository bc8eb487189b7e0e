//! One complex through pocket prediction and the two-level pose loop.
//!
//! Coordinates inside the loop live in a frame centred on the predicted
//! pocket center `o`. The ligand starts at `apo - centroid(apo) + (c - o)`
//! where `c` is the differentiable center and `o` its value, so the
//! placement carries the pocket model's gradient while sitting exactly at
//! the predicted center.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::complex::{
    build_complex_graph, extract_pocket_subgraph, interface_pairs, place_ligand_at_center, ComplexGraph,
    ComplexRecord, PocketSelection,
};
use crate::engine::{EngineConfig, Player, RecomputeInterface};
use crate::error::{Error, Result};
use crate::geom::{self, Point};
use crate::net::models::gumbel_noise;
use crate::net::{
    model_forward, pocket_center_var, select_residues, BoundParams, Dropout, GradMap, ModelInputs, ModelKind,
    ModelParams, Topology,
};
use crate::objectives::{
    center_huber_var, coord_huber_var, dis_map_var, pocket_cls_var, weighted_sum, LossComponents, LossReport,
};
use crate::tape::{self, Tape, Var};
use crate::tensor::Tensor;

/// Parameters of all three models.
#[derive(Debug, Clone, Copy)]
pub struct Models<'a> {
    pub pocket: &'a ModelParams,
    pub ligand: &'a ModelParams,
    pub protein: &'a ModelParams,
}

impl Models<'_> {
    fn check(&self) -> Result<()> {
        let want = [
            (self.pocket, ModelKind::Pocket),
            (self.ligand, ModelKind::Ligand),
            (self.protein, ModelKind::Protein),
        ];
        for (p, k) in want {
            if p.kind() != k {
                return Err(Error::InvalidInput(format!(
                    "expected {} parameters, got {}",
                    k.name(),
                    p.kind().name()
                )));
            }
        }
        Ok(())
    }
}

/// Which loop structure runs and who receives gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Training phase of one player; the other is frozen.
    Train(Player),
    /// Both models frozen; each refines against the other's latest pose.
    Inference,
}

/// Opponent outputs of every outer round, in absolute coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub rounds: Vec<Vec<Point>>,
}

#[derive(Debug, Clone, Default)]
pub struct RolloutOptions {
    /// Sample dropout masks and (if configured) Gumbel noise.
    pub stochastic: bool,
    pub seed: u64,
    /// Compute gradients for the acting player's models.
    pub want_grads: bool,
    /// Use this residue indicator instead of thresholding the classifier.
    pub fixed_selection: Option<Vec<bool>>,
    /// Replace frozen-opponent forwards with recorded poses.
    pub replay: Option<Replay>,
}

/// Number of forwards each model performed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ForwardCounts {
    pub pocket: usize,
    pub ligand: usize,
    pub protein: usize,
}

/// Gradients for the acting player's models.
#[derive(Debug, Clone, Default)]
pub struct PhaseGrads {
    pub pocket: Option<GradMap>,
    pub ligand: Option<GradMap>,
    pub protein: Option<GradMap>,
}

#[derive(Debug, Clone)]
pub struct RolloutResult {
    pub report: LossReport,
    pub selection: PocketSelection,
    /// Full-protein indices of the selected residues.
    pub selected: Vec<usize>,
    /// Final ligand pose.
    pub ligand: Vec<Point>,
    /// Final pose of the selected residues.
    pub pocket: Vec<Point>,
    /// Every residue: predicted where selected, apo elsewhere.
    pub residues: Vec<Point>,
    /// What the frozen opponent produced each outer round.
    pub replay: Replay,
    pub grads: PhaseGrads,
    pub forwards: ForwardCounts,
}

fn shifted(points: &[Point], by: Point) -> Vec<Point> {
    points.iter().map(|&p| geom::sub(p, by)).collect()
}

/// Builds topologies from the current coordinate values.
struct TopologyCache {
    n_atoms: usize,
    n_res: usize,
    ligand_edges: Vec<(usize, usize)>,
    protein_edges: Vec<(usize, usize)>,
    cutoff: f64,
}

impl TopologyCache {
    fn build(&self, tape: &Tape<'_>, atoms: Var, res: Var) -> Result<Topology> {
        let a = tape.value(atoms).to_points();
        let r = tape.value(res).to_points();
        let iface = interface_pairs(&a, &r, self.cutoff);
        Topology::new(self.n_atoms, self.n_res, &self.ligand_edges, &self.protein_edges, &iface)
    }
}

struct Stage<'a> {
    atom_feats: Var,
    res_feats: Var,
    ligand: &'a BoundParams,
    protein: &'a BoundParams,
    ligand_src: &'a ModelParams,
    protein_src: &'a ModelParams,
    drop_ligand: Dropout,
    drop_protein: Dropout,
    policy: RecomputeInterface,
    topo: Topology,
    cache: TopologyCache,
    counts: ForwardCounts,
}

impl Stage<'_> {
    fn refresh_inner(&mut self, tape: &Tape<'_>, atoms: Var, res: Var) -> Result<()> {
        if self.policy == RecomputeInterface::Inner {
            self.topo = self.cache.build(tape, atoms, res)?;
        }
        Ok(())
    }

    fn refresh_outer(&mut self, tape: &Tape<'_>, atoms: Var, res: Var) -> Result<()> {
        if self.policy == RecomputeInterface::Outer {
            self.topo = self.cache.build(tape, atoms, res)?;
        }
        Ok(())
    }

    fn inputs(&self, atoms: Var, res: Var) -> ModelInputs {
        ModelInputs {
            atom_feats: self.atom_feats,
            res_feats: self.res_feats,
            atom_coords: atoms,
            res_coords: res,
        }
    }

    fn ligand_forward(&mut self, tape: &mut Tape<'_>, atoms: Var, res: Var) -> Result<Var> {
        self.refresh_inner(tape, atoms, res)?;
        self.counts.ligand += 1;
        if self.is_constant(tape, self.ligand, atoms, res) {
            let (a, _) = self.detached(tape, self.ligand_src, atoms, res, Player::Ligand)?;
            return Ok(a);
        }
        let out = model_forward(tape, self.ligand, &self.topo, self.inputs(atoms, res), &mut self.drop_ligand)?;
        Ok(out.state.atom_coords)
    }

    fn protein_forward(&mut self, tape: &mut Tape<'_>, atoms: Var, res: Var) -> Result<Var> {
        self.refresh_inner(tape, atoms, res)?;
        self.counts.protein += 1;
        if self.is_constant(tape, self.protein, atoms, res) {
            let (_, r) = self.detached(tape, self.protein_src, atoms, res, Player::Protein)?;
            return Ok(r);
        }
        let out = model_forward(tape, self.protein, &self.topo, self.inputs(atoms, res), &mut self.drop_protein)?;
        Ok(out.state.res_coords)
    }

    /// No gradient can flow through a forward of frozen parameters on
    /// untracked inputs.
    fn is_constant(&self, tape: &Tape<'_>, bp: &BoundParams, atoms: Var, res: Var) -> bool {
        !bp.is_trainable() && !tape.is_tracked(atoms) && !tape.is_tracked(res)
    }

    /// Runs a forward on a scratch tape and copies only the output poses
    /// back, so the intermediates are freed at once. Values and dropout
    /// draws are the same as on the main tape.
    fn detached(&mut self, tape: &mut Tape<'_>, params: &ModelParams, atoms: Var, res: Var, who: Player) -> Result<(Var, Var)> {
        let mut scratch = Tape::new();
        let bp = params.bind(&mut scratch, false);
        let inputs = ModelInputs {
            atom_feats: scratch.constant(tape.value(self.atom_feats).clone()),
            res_feats: scratch.constant(tape.value(self.res_feats).clone()),
            atom_coords: scratch.constant(tape.value(atoms).clone()),
            res_coords: scratch.constant(tape.value(res).clone()),
        };
        let drop = match who {
            Player::Ligand => &mut self.drop_ligand,
            Player::Protein => &mut self.drop_protein,
        };
        let out = model_forward(&mut scratch, &bp, &self.topo, inputs, drop)?;
        let a = tape.constant(scratch.value(out.state.atom_coords).clone());
        let r = tape.constant(scratch.value(out.state.res_coords).clone());
        Ok((a, r))
    }
}

fn dropout(p: f64, on: bool, rng: &mut ChaCha8Rng, stream: u64) -> Dropout {
    if on && p > 0.0 {
        let mut r = rng.clone();
        r.set_stream(stream);
        Dropout::new(p, r)
    } else {
        Dropout::off()
    }
}

/// Runs one complex end to end. See [`Phase`] for the loop variants.
pub fn rollout(
    rec: &ComplexRecord,
    models: Models<'_>,
    cfg: &EngineConfig,
    phase: Phase,
    opts: &RolloutOptions,
) -> Result<RolloutResult> {
    models.check()?;
    rec.validate()?;
    let graph = build_complex_graph(rec, &cfg.graph)?;
    let c0 = graph.protein_center();
    let placed = place_ligand_at_center(&graph, c0);
    let acting = match phase {
        Phase::Train(p) => Some(p),
        Phase::Inference => None,
    };
    let grads_for = |p: Player| opts.want_grads && acting == Some(p);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut tape = Tape::new();
    let bs = models.pocket.bind(&mut tape, grads_for(Player::Ligand));
    let bl = models.ligand.bind(&mut tape, grads_for(Player::Ligand));
    let bp = models.protein.bind(&mut tape, grads_for(Player::Protein));

    // pocket prediction, frame centred on the protein
    let atom_feats = tape.constant(rec.atom_features());
    let res_feats_full = tape.constant(rec.residue_features());
    let lig_c0 = shifted(&placed.atom_coords(), c0);
    let res_c0 = shifted(&placed.residue_coords(), c0);
    let full_inputs = ModelInputs {
        atom_feats,
        res_feats: res_feats_full,
        atom_coords: tape.constant(Tensor::from_points(&lig_c0)),
        res_coords: tape.constant(Tensor::from_points(&res_c0)),
    };
    let topo_full = Topology::from_graph(&placed)?;
    let train_s = opts.stochastic && acting == Some(Player::Ligand);
    let mut drop_s = dropout(cfg.loops.dropout, train_s, &mut rng, 1);
    let out_s = model_forward(&mut tape, &bs, &topo_full, full_inputs, &mut drop_s)?;
    let logits = out_s.logits.expect("pocket model has a head");
    let noise = (train_s && cfg.pocket.gumbel_train).then(|| {
        let mut g = rng.clone();
        g.set_stream(2);
        gumbel_noise(&mut g, rec.n_residues())
    });
    let center = pocket_center_var(&mut tape, logits, full_inputs.res_coords, cfg.pocket.temperature, noise);
    let probs: Vec<f64> = tape.value(logits).data().iter().map(|&z| tape::sigmoid(z)).collect();
    let cv = tape.value(center).row(0);
    let center_val: Point = [cv[0], cv[1], cv[2]];
    let indicator = match &opts.fixed_selection {
        Some(ind) => {
            if ind.len() != rec.n_residues() || !ind.iter().any(|&b| b) {
                return Err(Error::InvalidInput(
                    "fixed selection must cover every residue and select at least one".into(),
                ));
            }
            ind.clone()
        }
        None => select_residues(&probs, &res_c0, center_val, &cfg.pocket),
    };
    let selection = PocketSelection {
        indicator,
        probs,
        center: geom::add(center_val, c0),
    };
    let cls = pocket_cls_var(&mut tape, logits, &rec.pocket_labels())?;
    let center_loss = center_huber_var(&mut tape, center, geom::sub(rec.true_pocket_center(), c0));

    // pocket frame
    let origin = selection.center;
    let sub: ComplexGraph = extract_pocket_subgraph(&placed, &selection)?;
    let selected = sub.residue_map.clone();
    let apo_lig = rec.apo_ligand();
    let lig_rel = shifted(&apo_lig, geom::centroid(&apo_lig));
    let offset = {
        let cval = tape.constant(Tensor::from_points(&[center_val]));
        tape.sub(center, cval)
    };
    let lig_rel = tape.constant(Tensor::from_points(&lig_rel));
    let x_lig0 = tape.add_row(lig_rel, offset);
    let apo_res = rec.apo_residues();
    let sel_apo: Vec<Point> = selected.iter().map(|&j| apo_res[j]).collect();
    let x_res0 = tape.constant(Tensor::from_points(&shifted(&sel_apo, origin)));
    let holo_res = rec.holo_residues();
    let true_lig = shifted(&rec.holo_ligand(), origin);
    let true_res: Vec<Point> = shifted(&selected.iter().map(|&j| holo_res[j]).collect::<Vec<_>>(), origin);

    let res_feats_sub = tape.constant(tape.value(res_feats_full).gather_rows(&selected));
    let cache = TopologyCache {
        n_atoms: sub.n_atoms(),
        n_res: sub.n_residues(),
        ligand_edges: sub.ligand_edges.clone(),
        protein_edges: sub.protein_edges.clone(),
        cutoff: cfg.graph.interface_cutoff,
    };
    let topo0 = cache.build(&tape, x_lig0, x_res0)?;
    let train_l = opts.stochastic && acting == Some(Player::Ligand);
    let train_p = opts.stochastic && acting == Some(Player::Protein);
    let mut stage = Stage {
        atom_feats,
        res_feats: res_feats_sub,
        ligand: &bl,
        protein: &bp,
        ligand_src: models.ligand,
        protein_src: models.protein,
        drop_ligand: dropout(cfg.loops.dropout, train_l, &mut rng, 3),
        drop_protein: dropout(cfg.loops.dropout, train_p, &mut rng, 4),
        policy: cfg.loops.recompute_interface,
        topo: topo0,
        cache,
        counts: ForwardCounts {
            pocket: 1,
            ..ForwardCounts::default()
        },
    };

    let replayed = |tape: &mut Tape<'_>, k: usize| -> Result<Option<Var>> {
        match &opts.replay {
            None => Ok(None),
            Some(r) => {
                let pts = r
                    .rounds
                    .get(k)
                    .ok_or_else(|| Error::InvalidInput(format!("replay has no round {k}")))?;
                Ok(Some(tape.constant(Tensor::from_points(&shifted(pts, origin)))))
            }
        }
    };

    let (mut xl, mut xr) = (x_lig0, x_res0);
    let mut rounds = Vec::new();
    match phase {
        Phase::Train(Player::Ligand) => {
            for k in 0..cfg.loops.m_l {
                stage.refresh_outer(&tape, xl, xr)?;
                let mut y = xl;
                for _ in 0..cfg.loops.n_l {
                    y = stage.ligand_forward(&mut tape, y, xr)?;
                }
                let exchanged = if cfg.loops.exchange_uses_refined { y } else { xl };
                let next_res = match replayed(&mut tape, k)? {
                    Some(v) => v,
                    None => {
                        let frozen = tape.detach(exchanged);
                        stage.protein_forward(&mut tape, frozen, xr)?
                    }
                };
                rounds.push(geom_abs(&tape, next_res, origin));
                xl = y;
                xr = next_res;
            }
        }
        Phase::Train(Player::Protein) => {
            for k in 0..cfg.loops.m_p {
                stage.refresh_outer(&tape, xl, xr)?;
                let mut y = xr;
                for _ in 0..cfg.loops.n_p {
                    y = stage.protein_forward(&mut tape, xl, y)?;
                }
                let exchanged = if cfg.loops.exchange_uses_refined { y } else { xr };
                let next_lig = match replayed(&mut tape, k)? {
                    Some(v) => v,
                    None => {
                        let frozen = tape.detach(exchanged);
                        let xl_frozen = tape.detach(xl);
                        stage.ligand_forward(&mut tape, xl_frozen, frozen)?
                    }
                };
                rounds.push(geom_abs(&tape, next_lig, origin));
                xr = y;
                xl = next_lig;
            }
        }
        Phase::Inference => {
            for _ in 0..cfg.loops.m_l.max(cfg.loops.m_p) {
                stage.refresh_outer(&tape, xl, xr)?;
                let mut yl = xl;
                for _ in 0..cfg.loops.n_l {
                    yl = stage.ligand_forward(&mut tape, yl, xr)?;
                }
                let mut yr = xr;
                for _ in 0..cfg.loops.n_p {
                    yr = stage.protein_forward(&mut tape, xl, yr)?;
                }
                xl = yl;
                xr = yr;
            }
        }
    }
    let forwards = stage.counts;

    let lig_loss = coord_huber_var(&mut tape, xl, &true_lig)?;
    let res_loss = coord_huber_var(&mut tape, xr, &true_res)?;
    let dis = dis_map_var(&mut tape, xl, xr, &true_lig, &true_res)?;
    let w = cfg.weights;
    let j_l = weighted_sum(
        &mut tape,
        &[(w.alpha_cls, cls), (w.alpha_center, center_loss), (w.alpha2, lig_loss), (w.gamma, dis)],
    );
    let j_p = weighted_sum(&mut tape, &[(w.beta, res_loss), (w.gamma, dis)]);
    let comps = LossComponents {
        pocket_cls: tape.value(cls).item(),
        pocket_center: tape.value(center_loss).item(),
        ligand_coord: tape.value(lig_loss).item(),
        pocket_coord: tape.value(res_loss).item(),
        dis_map: tape.value(dis).item(),
    };
    let report = LossReport::new(comps, &w);
    if !report.is_finite() {
        return Err(Error::NonFinite(format!("complex {}: loss report {report:?}", rec.id)));
    }

    let mut grads = PhaseGrads::default();
    if opts.want_grads {
        match acting {
            Some(Player::Ligand) => {
                let g = tape.backward(j_l)?;
                grads.pocket = Some(bs.collect(&tape, &g));
                grads.ligand = Some(bl.collect(&tape, &g));
            }
            Some(Player::Protein) => {
                let g = tape.backward(j_p)?;
                grads.protein = Some(bp.collect(&tape, &g));
            }
            None => {}
        }
    }

    let ligand = geom_abs(&tape, xl, origin);
    let pocket = geom_abs(&tape, xr, origin);
    let mut residues = apo_res;
    for (&j, &p) in selected.iter().zip(&pocket) {
        residues[j] = p;
    }
    Ok(RolloutResult {
        report,
        selection,
        selected,
        ligand,
        pocket,
        residues,
        replay: Replay { rounds },
        grads,
        forwards,
    })
}

fn geom_abs(tape: &Tape<'_>, v: Var, origin: Point) -> Vec<Point> {
    tape.value(v).to_points().into_iter().map(|p| geom::add(p, origin)).collect()
}

/// Ligand player's training step on one complex: loss report and gradients
/// for the pocket and ligand models. The protein model is only read.
pub fn ligand_phase_step(
    rec: &ComplexRecord,
    params_s: &ModelParams,
    params_l: &ModelParams,
    frozen_p: &ModelParams,
    cfg: &EngineConfig,
    seed: u64,
    stochastic: bool,
) -> Result<(LossReport, GradMap, GradMap)> {
    let models = Models {
        pocket: params_s,
        ligand: params_l,
        protein: frozen_p,
    };
    let opts = RolloutOptions {
        stochastic,
        seed,
        want_grads: true,
        ..RolloutOptions::default()
    };
    let r = rollout(rec, models, cfg, Phase::Train(Player::Ligand), &opts)?;
    let PhaseGrads { pocket, ligand, .. } = r.grads;
    Ok((r.report, pocket.expect("ligand phase grads"), ligand.expect("ligand phase grads")))
}

/// Protein player's training step on one complex; mirror of
/// [`ligand_phase_step`].
pub fn protein_phase_step(
    rec: &ComplexRecord,
    frozen_s: &ModelParams,
    frozen_l: &ModelParams,
    params_p: &ModelParams,
    cfg: &EngineConfig,
    seed: u64,
    stochastic: bool,
) -> Result<(LossReport, GradMap)> {
    let models = Models {
        pocket: frozen_s,
        ligand: frozen_l,
        protein: params_p,
    };
    let opts = RolloutOptions {
        stochastic,
        seed,
        want_grads: true,
        ..RolloutOptions::default()
    };
    let r = rollout(rec, models, cfg, Phase::Train(Player::Protein), &opts)?;
    Ok((r.report, r.grads.protein.expect("protein phase grads")))
}
