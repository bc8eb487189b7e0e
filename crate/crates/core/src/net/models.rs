//! Model assemblies: pocket classifier, ligand docking and pocket docking.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::complex::{ComplexGraph, PocketSelection};
use crate::error::{Error, Result};
use crate::geom::{self, Point};
use crate::net::layer::{layer_forward, Dropout, StateVars, Topology};
use crate::net::params::{BoundParams, ModelKind, ModelParams};
use crate::tape::{self, Tape, Var};
use crate::tensor::Tensor;

/// Per-layer state as plain values.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub atom_feats: Tensor,
    pub residue_feats: Tensor,
    pub atom_coords: Tensor,
    pub residue_coords: Tensor,
    /// `(n_l * n_p) x d`, row `i * n_p + j`.
    pub pair_embed: Tensor,
}

/// Model inputs registered on a tape.
#[derive(Debug, Clone, Copy)]
pub struct ModelInputs {
    pub atom_feats: Var,
    pub res_feats: Var,
    pub atom_coords: Var,
    pub res_coords: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct ModelOutputs {
    pub state: StateVars,
    /// Per-residue pocket logits, `n_p x 1`; pocket model only.
    pub logits: Option<Var>,
}

/// Registers a graph's features and current coordinates as constants.
pub fn graph_inputs(tape: &mut Tape<'_>, g: &ComplexGraph) -> ModelInputs {
    let af: Vec<Vec<f64>> = g.ligand_atoms.iter().map(|a| a.feature.clone()).collect();
    let rf: Vec<Vec<f64>> = g.residues.iter().map(|r| r.feature.clone()).collect();
    ModelInputs {
        atom_feats: tape.constant(Tensor::from_rows(&af)),
        res_feats: tape.constant(Tensor::from_rows(&rf)),
        atom_coords: tape.constant(Tensor::from_points(&g.atom_coords())),
        res_coords: tape.constant(Tensor::from_points(&g.residue_coords())),
    }
}

fn embed(tape: &mut Tape<'_>, bp: &BoundParams, inp: &ModelInputs, n_pairs: usize) -> Result<StateVars> {
    let s = bp.shape();
    let check = |v: Var, want: usize, what: &str| {
        let got = tape.value(v).cols();
        if got != want {
            return Err(Error::Shape(format!("{what} features have width {got}, model expects {want}")));
        }
        Ok(())
    };
    check(inp.atom_feats, s.d_l, "atom")?;
    check(inp.res_feats, s.d_p, "residue")?;
    let h = tape.matmul(inp.atom_feats, bp.var("embed_atom.w")?);
    let atom_feats = tape.add_row(h, bp.var("embed_atom.b")?);
    let h = tape.matmul(inp.res_feats, bp.var("embed_res.w")?);
    let res_feats = tape.add_row(h, bp.var("embed_res.b")?);
    let pair = tape.constant(Tensor::zeros(n_pairs, s.hidden));
    Ok(StateVars {
        atom_feats,
        res_feats,
        atom_coords: inp.atom_coords,
        res_coords: inp.res_coords,
        pair,
    })
}

/// Full forward of one model on the tape.
pub fn model_forward(
    tape: &mut Tape<'_>,
    bp: &BoundParams,
    topo: &Topology,
    inp: ModelInputs,
    drop: &mut Dropout,
) -> Result<ModelOutputs> {
    let shape = *bp.shape();
    let mut s = embed(tape, bp, &inp, topo.n_atoms * topo.n_res)?;
    for l in 0..shape.layers {
        s = layer_forward(tape, bp, topo, s, l, shape.plan(l), drop)?;
    }
    let logits = if shape.kind == ModelKind::Pocket {
        let z = tape.matmul(s.res_feats, bp.var("head.w")?);
        Some(tape.add_row(z, bp.var("head.b")?))
    } else {
        None
    };
    Ok(ModelOutputs { state: s, logits })
}

/// Embedded initial state of `graph` under `params` (layer 0 input).
pub fn initial_state(graph: &ComplexGraph, params: &ModelParams) -> Result<LayerState> {
    let mut tape = Tape::new();
    let bp = params.bind(&mut tape, false);
    let inp = graph_inputs(&mut tape, graph);
    let s = embed(&mut tape, &bp, &inp, graph.n_atoms() * graph.n_residues())?;
    Ok(read_state(&tape, s))
}

fn read_state(tape: &Tape<'_>, s: StateVars) -> LayerState {
    LayerState {
        atom_feats: tape.value(s.atom_feats).clone(),
        residue_feats: tape.value(s.res_feats).clone(),
        atom_coords: tape.value(s.atom_coords).clone(),
        residue_coords: tape.value(s.res_coords).clone(),
        pair_embed: tape.value(s.pair).clone(),
    }
}

/// One layer on plain values. A coordinate stream is updated only when the
/// model owns that stream at this layer and it is not frozen.
pub fn fabind_layer_forward(
    state: &LayerState,
    graph: &ComplexGraph,
    params: &ModelParams,
    layer_index: usize,
    freeze_residue_coords: bool,
    freeze_atom_coords: bool,
) -> Result<LayerState> {
    let shape = params.shape();
    if layer_index >= shape.layers {
        return Err(Error::Shape(format!(
            "layer {layer_index} out of range for a {}-layer model",
            shape.layers
        )));
    }
    let mut plan = shape.plan(layer_index);
    plan.atom_coords &= !freeze_atom_coords;
    plan.res_coords &= !freeze_residue_coords;
    let topo = Topology::from_graph(graph)?;
    let mut tape = Tape::new();
    let bp = params.bind(&mut tape, false);
    let s = StateVars {
        atom_feats: tape.constant(state.atom_feats.clone()),
        res_feats: tape.constant(state.residue_feats.clone()),
        atom_coords: tape.constant(state.atom_coords.clone()),
        res_coords: tape.constant(state.residue_coords.clone()),
        pair: tape.constant(state.pair_embed.clone()),
    };
    let out = layer_forward(&mut tape, &bp, &topo, s, layer_index, plan, &mut Dropout::off())?;
    Ok(read_state(&tape, out))
}

/// Pocket selection and center settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PocketConfig {
    pub threshold: f64,
    /// Softmax temperature of the center weights.
    pub temperature: f64,
    /// Residues taken around the center when none clears the threshold.
    pub k_min: usize,
    /// Sample Gumbel noise for the center weights during training.
    pub gumbel_train: bool,
}

impl Default for PocketConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            temperature: 1.0,
            k_min: 8,
            gumbel_train: false,
        }
    }
}

impl PocketConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("pocket threshold {} not in (0,1)", self.threshold)));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("pocket temperature must be positive".into()));
        }
        if self.k_min == 0 {
            return Err(Error::Config("pocket k_min must be at least 1".into()));
        }
        Ok(())
    }
}

/// Standard Gumbel samples, one per residue.
pub fn gumbel_noise(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    Tensor::from_fn(n, 1, |_, _| {
        let u: f64 = rng.gen_range(1e-12..1.0);
        -(-u.ln()).ln()
    })
}

/// Softmax-weighted residue centroid, `1 x 3`.
pub fn pocket_center_var(
    tape: &mut Tape<'_>,
    logits: Var,
    res_coords: Var,
    temperature: f64,
    noise: Option<Tensor>,
) -> Var {
    let mut z = logits;
    if let Some(g) = noise {
        let g = tape.constant(g);
        z = tape.add(z, g);
    }
    let z = tape.scale(z, 1.0 / temperature);
    let w = tape.softmax(z);
    let weighted = tape.mul_col(res_coords, w);
    tape.sum_rows(weighted)
}

/// Threshold indicator with the nearest-`k_min` fallback.
pub fn select_residues(probs: &[f64], coords: &[Point], center: Point, cfg: &PocketConfig) -> Vec<bool> {
    let mut ind: Vec<bool> = probs.iter().map(|&p| p >= cfg.threshold).collect();
    if !ind.iter().any(|&b| b) {
        let mut order: Vec<usize> = (0..coords.len()).collect();
        order.sort_by(|&a, &b| {
            geom::dist2(coords[a], center)
                .total_cmp(&geom::dist2(coords[b], center))
                .then(a.cmp(&b))
        });
        for &j in order.iter().take(cfg.k_min) {
            ind[j] = true;
        }
    }
    ind
}

/// Runs the pocket classifier on `graph` (ligand already placed at the
/// protein center) and returns the selection.
pub fn pocket_predict(graph: &ComplexGraph, params_s: &ModelParams, cfg: &PocketConfig) -> Result<PocketSelection> {
    if params_s.kind() != ModelKind::Pocket {
        return Err(Error::InvalidInput("pocket_predict needs pocket model parameters".into()));
    }
    let topo = Topology::from_graph(graph)?;
    let mut tape = Tape::new();
    let bp = params_s.bind(&mut tape, false);
    let inp = graph_inputs(&mut tape, graph);
    let out = model_forward(&mut tape, &bp, &topo, inp, &mut Dropout::off())?;
    let logits = out.logits.expect("pocket model has a head");
    let center = pocket_center_var(&mut tape, logits, inp.res_coords, cfg.temperature, None);
    let probs: Vec<f64> = tape.value(logits).data().iter().map(|&z| tape::sigmoid(z)).collect();
    let c = tape.value(center).row(0);
    let center = [c[0], c[1], c[2]];
    let indicator = select_residues(&probs, &graph.residue_coords(), center, cfg);
    Ok(PocketSelection {
        indicator,
        probs,
        center,
    })
}

/// Runs a docking model on `graph` centered on its residue centroid and
/// returns (atom coords, residue coords) in the original frame.
fn dock_forward(graph: &ComplexGraph, params: &ModelParams, kind: ModelKind) -> Result<(Vec<Point>, Vec<Point>)> {
    if params.kind() != kind {
        return Err(Error::InvalidInput(format!(
            "expected {} model parameters, got {}",
            kind.name(),
            params.kind().name()
        )));
    }
    let origin = graph.protein_center();
    let mut centered = graph.clone();
    let shift = geom::scale(origin, -1.0);
    let mut a = graph.atom_coords();
    let mut r = graph.residue_coords();
    geom::translate(&mut a, shift);
    geom::translate(&mut r, shift);
    centered.set_atom_coords(&a);
    centered.set_residue_coords(&r);

    let topo = Topology::from_graph(&centered)?;
    let mut tape = Tape::new();
    let bp = params.bind(&mut tape, false);
    let inp = graph_inputs(&mut tape, &centered);
    let out = model_forward(&mut tape, &bp, &topo, inp, &mut Dropout::off())?;
    // add the predicted displacement to the original coordinates so an
    // identity model reproduces its input bit for bit
    let shift_back = |before: &[Point], after: Vec<Point>, orig: Vec<Point>| -> Vec<Point> {
        orig.iter()
            .zip(before.iter().zip(after))
            .map(|(&o, (&b, x))| geom::add(o, geom::sub(x, b)))
            .collect()
    };
    let a_out = tape.value(out.state.atom_coords).to_points();
    let r_out = tape.value(out.state.res_coords).to_points();
    Ok((
        shift_back(&a, a_out, graph.atom_coords()),
        shift_back(&r, r_out, graph.residue_coords()),
    ))
}

/// Predicted ligand coordinates; residue coordinates act as fixed context.
pub fn ligand_dock_forward(subgraph: &ComplexGraph, params_l: &ModelParams) -> Result<Vec<Point>> {
    Ok(dock_forward(subgraph, params_l, ModelKind::Ligand)?.0)
}

/// Predicted pocket residue coordinates; atom coordinates act as fixed context.
pub fn pocket_dock_forward(subgraph: &ComplexGraph, params_p: &ModelParams) -> Result<Vec<Point>> {
    Ok(dock_forward(subgraph, params_p, ModelKind::Protein)?.1)
}
