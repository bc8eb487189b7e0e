//! One message-passing layer over the heterogeneous complex graph.
//!
//! Messages run over three edge sets: ligand bonds, residue contacts and
//! atom–residue interface pairs. A message is an MLP of the two endpoint
//! features, the squared distance and (interface only) the pair embedding.
//! Coordinates move along relative position vectors:
//!
//! ```text
//! x_i <- x_i + sum_j (x_i - x_j) * phi(m_ij) / (|x_i - x_j| + 1)
//! ```
//!
//! so the update commutes with rotations and translations, while features
//! and pair embeddings only see distances.

use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::complex::ComplexGraph;
use crate::error::{Error, Result};
use crate::net::params::{BoundParams, LayerPlan};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Added under every square root of a squared distance.
pub const DIST_EPS: f64 = 1e-8;

/// Directed edge lists and degree normalisers for one graph.
#[derive(Debug, Clone)]
pub struct Topology {
    pub n_atoms: usize,
    pub n_res: usize,
    ll_src: Rc<[usize]>,
    ll_dst: Rc<[usize]>,
    pp_src: Rc<[usize]>,
    pp_dst: Rc<[usize]>,
    lp_atom: Rc<[usize]>,
    lp_res: Rc<[usize]>,
    lp_pair: Rc<[usize]>,
    inv_deg_ll: Tensor,
    inv_deg_pp: Tensor,
    inv_deg_la: Tensor,
    inv_deg_ra: Tensor,
}

fn inv_degree(idx: &[usize], n: usize) -> Tensor {
    let mut deg = vec![0usize; n];
    for &i in idx {
        deg[i] += 1;
    }
    Tensor::from_vec(n, 1, deg.iter().map(|&d| 1.0 / d.max(1) as f64).collect())
}

fn both_directions(edges: &[(usize, usize)]) -> (Vec<usize>, Vec<usize>) {
    let mut src = Vec::with_capacity(2 * edges.len());
    let mut dst = Vec::with_capacity(2 * edges.len());
    for &(a, b) in edges {
        src.push(a);
        dst.push(b);
        src.push(b);
        dst.push(a);
    }
    (src, dst)
}

impl Topology {
    pub fn new(
        n_atoms: usize,
        n_res: usize,
        ligand_edges: &[(usize, usize)],
        protein_edges: &[(usize, usize)],
        interface_edges: &[(usize, usize)],
    ) -> Result<Self> {
        let check = |edges: &[(usize, usize)], na: usize, nb: usize, what: &str| {
            if let Some(&(a, b)) = edges.iter().find(|&&(a, b)| a >= na || b >= nb) {
                return Err(Error::Shape(format!("{what} edge ({a}, {b}) out of range")));
            }
            Ok(())
        };
        check(ligand_edges, n_atoms, n_atoms, "ligand")?;
        check(protein_edges, n_res, n_res, "protein")?;
        check(interface_edges, n_atoms, n_res, "interface")?;

        let (ll_src, ll_dst) = both_directions(ligand_edges);
        let (pp_src, pp_dst) = both_directions(protein_edges);
        let lp_atom: Vec<usize> = interface_edges.iter().map(|e| e.0).collect();
        let lp_res: Vec<usize> = interface_edges.iter().map(|e| e.1).collect();
        let lp_pair: Vec<usize> = interface_edges.iter().map(|&(a, r)| a * n_res + r).collect();
        Ok(Self {
            n_atoms,
            n_res,
            inv_deg_ll: inv_degree(&ll_dst, n_atoms),
            inv_deg_pp: inv_degree(&pp_dst, n_res),
            inv_deg_la: inv_degree(&lp_atom, n_atoms),
            inv_deg_ra: inv_degree(&lp_res, n_res),
            ll_src: ll_src.into(),
            ll_dst: ll_dst.into(),
            pp_src: pp_src.into(),
            pp_dst: pp_dst.into(),
            lp_atom: lp_atom.into(),
            lp_res: lp_res.into(),
            lp_pair: lp_pair.into(),
        })
    }

    pub fn from_graph(g: &ComplexGraph) -> Result<Self> {
        Self::new(
            g.n_atoms(),
            g.n_residues(),
            &g.ligand_edges,
            &g.protein_edges,
            &g.interface_edges,
        )
    }

    pub fn n_interface(&self) -> usize {
        self.lp_atom.len()
    }
}

/// Node and pair state flowing between layers, as tape handles.
#[derive(Debug, Clone, Copy)]
pub struct StateVars {
    pub atom_feats: Var,
    pub res_feats: Var,
    pub atom_coords: Var,
    pub res_coords: Var,
    pub pair: Var,
}

/// Inverted dropout on hidden activations; inactive when `rng` is `None`.
pub struct Dropout {
    pub p: f64,
    pub rng: Option<ChaCha8Rng>,
}

impl Dropout {
    pub fn off() -> Self {
        Self { p: 0.0, rng: None }
    }

    pub fn new(p: f64, rng: ChaCha8Rng) -> Self {
        Self { p, rng: Some(rng) }
    }

    fn apply(&mut self, tape: &mut Tape<'_>, x: Var) -> Var {
        let p = self.p;
        let Some(rng) = self.rng.as_mut().filter(|_| p > 0.0) else {
            return x;
        };
        let (r, c) = tape.value(x).shape();
        let keep = 1.0 / (1.0 - p);
        let mask = Tensor::from_fn(r, c, |_, _| if rng.gen::<f64>() < p { 0.0 } else { keep });
        let m = tape.constant(mask);
        tape.mul(x, m)
    }
}

/// Two-layer SiLU MLP: `w2 · silu(w1 · x + b1) (+ b2)`.
pub(crate) fn mlp(
    tape: &mut Tape<'_>,
    bp: &BoundParams,
    prefix: &str,
    x: Var,
    drop: Option<&mut Dropout>,
) -> Result<Var> {
    let w1 = bp.var(&format!("{prefix}.w1"))?;
    let b1 = bp.var(&format!("{prefix}.b1"))?;
    let w2 = bp.var(&format!("{prefix}.w2"))?;
    if tape.value(x).cols() != tape.value(w1).rows() {
        return Err(Error::Shape(format!(
            "{prefix}: input width {} but weight expects {}",
            tape.value(x).cols(),
            tape.value(w1).rows()
        )));
    }
    let h = tape.matmul(x, w1);
    let h = tape.add_row(h, b1);
    let mut h = tape.silu(h);
    if let Some(d) = drop {
        h = d.apply(tape, h);
    }
    let out = tape.matmul(h, w2);
    let b2 = format!("{prefix}.b2");
    if bp.has(&b2) {
        let b2 = bp.var(&b2)?;
        Ok(tape.add_row(out, b2))
    } else {
        Ok(out)
    }
}

struct EdgeGeom {
    diff: Var,
    d2: Var,
    inv_len: Var,
}

/// `x_dst - x_src` per edge, its squared length and `1 / (|d| + 1)`.
fn edge_geometry(
    tape: &mut Tape<'_>,
    x_dst: Var,
    dst: &Rc<[usize]>,
    x_src: Var,
    src: &Rc<[usize]>,
) -> EdgeGeom {
    let a = tape.gather_rows(x_dst, dst.clone());
    let b = tape.gather_rows(x_src, src.clone());
    let diff = tape.sub(a, b);
    let sq = tape.square(diff);
    let d2 = tape.sum_cols(sq);
    let r = tape.affine(d2, 1.0, DIST_EPS);
    let r = tape.sqrt(r);
    let r = tape.affine(r, 1.0, 1.0);
    let inv_len = tape.recip(r);
    EdgeGeom { diff, d2, inv_len }
}

/// Coordinate shift accumulated on the `dst` side of each edge.
fn coord_shift(
    tape: &mut Tape<'_>,
    bp: &BoundParams,
    prefix: &str,
    msg: Var,
    geo: &EdgeGeom,
    dst: &Rc<[usize]>,
    n: usize,
) -> Result<Var> {
    let phi = mlp(tape, bp, prefix, msg, None)?;
    let w = tape.mul(phi, geo.inv_len);
    let step = tape.mul_col(geo.diff, w);
    Ok(tape.scatter_rows(step, dst.clone(), n))
}

/// Mean of edge messages over each node's incoming edges.
fn aggregate(tape: &mut Tape<'_>, msg: Var, dst: &Rc<[usize]>, n: usize, inv_deg: &Tensor) -> Var {
    let s = tape.scatter_rows(msg, dst.clone(), n);
    let inv = tape.constant(inv_deg.clone());
    tape.mul_col(s, inv)
}

/// Applies layer `layer` of the bound model, updating the streams in `plan`.
pub fn layer_forward(
    tape: &mut Tape<'_>,
    bp: &BoundParams,
    topo: &Topology,
    s: StateVars,
    layer: usize,
    plan: LayerPlan,
    drop: &mut Dropout,
) -> Result<StateVars> {
    let d = bp.shape().hidden;
    let expect = |what: &str, v: Var, rows: usize, cols: usize| -> Result<()> {
        let t = tape.value(v);
        if t.shape() != (rows, cols) {
            return Err(Error::Shape(format!(
                "{what}: expected {rows}x{cols}, got {}x{}",
                t.rows(),
                t.cols()
            )));
        }
        Ok(())
    };
    expect("atom features", s.atom_feats, topo.n_atoms, d)?;
    expect("residue features", s.res_feats, topo.n_res, d)?;
    expect("atom coords", s.atom_coords, topo.n_atoms, 3)?;
    expect("residue coords", s.res_coords, topo.n_res, 3)?;
    expect("pair embedding", s.pair, topo.n_atoms * topo.n_res, d)?;

    let pre = format!("l{layer}");
    let mut out = s;

    // ligand bonds
    let mut ll = None;
    if plan.msg_ll() {
        let geo = edge_geometry(tape, s.atom_coords, &topo.ll_dst, s.atom_coords, &topo.ll_src);
        let hi = tape.gather_rows(s.atom_feats, topo.ll_dst.clone());
        let hj = tape.gather_rows(s.atom_feats, topo.ll_src.clone());
        let inp = tape.concat_cols(&[hi, hj, geo.d2]);
        let m = mlp(tape, bp, &format!("{pre}.msg_ll"), inp, None)?;
        ll = Some((m, geo));
    }

    // residue contacts
    let mut pp = None;
    if plan.msg_pp() {
        let geo = edge_geometry(tape, s.res_coords, &topo.pp_dst, s.res_coords, &topo.pp_src);
        let hi = tape.gather_rows(s.res_feats, topo.pp_dst.clone());
        let hj = tape.gather_rows(s.res_feats, topo.pp_src.clone());
        let inp = tape.concat_cols(&[hi, hj, geo.d2]);
        let m = mlp(tape, bp, &format!("{pre}.msg_pp"), inp, None)?;
        pp = Some((m, geo));
    }

    // interface; geometry is taken atom-side (x_atom - x_res)
    let geo_lp = edge_geometry(tape, s.atom_coords, &topo.lp_atom, s.res_coords, &topo.lp_res);
    let ha = tape.gather_rows(s.atom_feats, topo.lp_atom.clone());
    let hr = tape.gather_rows(s.res_feats, topo.lp_res.clone());
    let pij = tape.gather_rows(s.pair, topo.lp_pair.clone());
    let inp = tape.concat_cols(&[ha, hr, geo_lp.d2, pij]);
    let m_lp = mlp(tape, bp, &format!("{pre}.msg_lp"), inp, None)?;

    if plan.atom_coords {
        let (m_ll, geo_ll) = ll.as_ref().expect("ll messages planned with atom coords");
        let a = coord_shift(tape, bp, &format!("{pre}.coord_ll"), *m_ll, geo_ll, &topo.ll_dst, topo.n_atoms)?;
        let b = coord_shift(tape, bp, &format!("{pre}.coord_la"), m_lp, &geo_lp, &topo.lp_atom, topo.n_atoms)?;
        let x = tape.add(s.atom_coords, a);
        out.atom_coords = tape.add(x, b);
    }
    if plan.res_coords {
        let (m_pp, geo_pp) = pp.as_ref().expect("pp messages planned with residue coords");
        let a = coord_shift(tape, bp, &format!("{pre}.coord_pp"), *m_pp, geo_pp, &topo.pp_dst, topo.n_res)?;
        // residue side of an interface edge points the other way
        let flipped = EdgeGeom {
            diff: tape.scale(geo_lp.diff, -1.0),
            d2: geo_lp.d2,
            inv_len: geo_lp.inv_len,
        };
        let b = coord_shift(tape, bp, &format!("{pre}.coord_ra"), m_lp, &flipped, &topo.lp_res, topo.n_res)?;
        let x = tape.add(s.res_coords, a);
        out.res_coords = tape.add(x, b);
    }

    if plan.atom_feats {
        let (m_ll, _) = ll.as_ref().expect("ll messages planned with atom features");
        let agg_ll = aggregate(tape, *m_ll, &topo.ll_dst, topo.n_atoms, &topo.inv_deg_ll);
        let agg_lp = aggregate(tape, m_lp, &topo.lp_atom, topo.n_atoms, &topo.inv_deg_la);
        let inp = tape.concat_cols(&[s.atom_feats, agg_ll, agg_lp]);
        let dh = mlp(tape, bp, &format!("{pre}.node_atom"), inp, Some(drop))?;
        out.atom_feats = tape.add(s.atom_feats, dh);
    }
    if plan.res_feats {
        let (m_pp, _) = pp.as_ref().expect("pp messages planned with residue features");
        let agg_pp = aggregate(tape, *m_pp, &topo.pp_dst, topo.n_res, &topo.inv_deg_pp);
        let agg_lp = aggregate(tape, m_lp, &topo.lp_res, topo.n_res, &topo.inv_deg_ra);
        let inp = tape.concat_cols(&[s.res_feats, agg_pp, agg_lp]);
        let dh = mlp(tape, bp, &format!("{pre}.node_res"), inp, Some(drop))?;
        out.res_feats = tape.add(s.res_feats, dh);
    }
    if plan.pair {
        let w = bp.var(&format!("{pre}.pair.w"))?;
        let dp = tape.matmul(m_lp, w);
        let dp = tape.scatter_rows(dp, topo.lp_pair.clone(), topo.n_atoms * topo.n_res);
        out.pair = tape.add(s.pair, dp);
    }
    Ok(out)
}
