mod common;

use dockgame::complex::{build_complex_graph, place_ligand_at_center, ComplexGraph, ComplexRecord, GraphConfig};
use dockgame::geom::RigidMotion;
use dockgame::net::{graph_inputs, model_forward, CoordInit, Dropout, ModelKind, ModelParams, ModelShape, Topology};
use dockgame::tape::Tape;
use dockgame::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Out {
    atoms: Tensor,
    residues: Tensor,
    atom_feats: Tensor,
    res_feats: Tensor,
    pair: Tensor,
    logits: Option<Tensor>,
}

fn run(g: &ComplexGraph, p: &ModelParams) -> Out {
    let topo = Topology::from_graph(g).unwrap();
    let mut tape = Tape::new();
    let bp = p.bind(&mut tape, false);
    let inp = graph_inputs(&mut tape, g);
    let o = model_forward(&mut tape, &bp, &topo, inp, &mut Dropout::off()).unwrap();
    Out {
        atoms: tape.value(o.state.atom_coords).clone(),
        residues: tape.value(o.state.res_coords).clone(),
        atom_feats: tape.value(o.state.atom_feats).clone(),
        res_feats: tape.value(o.state.res_feats).clone(),
        pair: tape.value(o.state.pair).clone(),
        logits: o.logits.map(|v| tape.value(v).clone()),
    }
}

/// Ligand placed on the true pocket so every model sees interface edges.
fn docked_graph(rec: &ComplexRecord) -> ComplexGraph {
    let g = build_complex_graph(rec, &GraphConfig::default()).unwrap();
    let g = place_ligand_at_center(&g, rec.true_pocket_center());
    assert!(!g.interface_edges.is_empty());
    g
}

fn params(kind: ModelKind, rec: &ComplexRecord, seed: u64) -> ModelParams {
    let shape = ModelShape {
        kind,
        layers: 2,
        hidden: 12,
        d_l: rec.atoms[0].feat.len(),
        d_p: rec.residues[0].feat.len(),
    };
    ModelParams::init(shape, seed, CoordInit::Scaled(1.0)).unwrap()
}

fn moved(g: &ComplexGraph, m: &RigidMotion) -> ComplexGraph {
    let mut out = g.clone();
    out.set_atom_coords(&m.apply_all(&g.atom_coords()));
    out.set_residue_coords(&m.apply_all(&g.residue_coords()));
    out
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn all_models_are_e3_equivariant() {
    let rec = common::small_complex(3);
    let g = docked_graph(&rec);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for kind in [ModelKind::Pocket, ModelKind::Ligand, ModelKind::Protein] {
        let p = params(kind, &rec, 5);
        let base = run(&g, &p);
        for _ in 0..20 {
            let m = RigidMotion::random(&mut rng, 20.0);
            let out = run(&moved(&g, &m), &p);
            let want_atoms = m.apply_all(&base.atoms.to_points());
            let want_res = m.apply_all(&base.residues.to_points());
            assert!(common::max_dev(&out.atoms.to_points(), &want_atoms) <= 1e-6, "{kind:?} atom coords");
            assert!(common::max_dev(&out.residues.to_points(), &want_res) <= 1e-6, "{kind:?} residue coords");
            assert!(max_abs_diff(&out.atom_feats, &base.atom_feats) <= 1e-6, "{kind:?} atom feats");
            assert!(max_abs_diff(&out.res_feats, &base.res_feats) <= 1e-6, "{kind:?} residue feats");
            assert!(max_abs_diff(&out.pair, &base.pair) <= 1e-6, "{kind:?} pair embedding");
            if let (Some(a), Some(b)) = (&out.logits, &base.logits) {
                assert!(max_abs_diff(a, b) <= 1e-6, "{kind:?} logits");
            }
        }
    }
}

#[test]
fn permuting_residues_permutes_outputs() {
    let rec = common::small_complex(4);
    let n = rec.n_residues();
    let perm: Vec<usize> = (0..n).rev().collect();
    let mut shuffled = rec.clone();
    shuffled.residues = perm.iter().map(|&j| rec.residues[j].clone()).collect();
    let g = docked_graph(&rec);
    let gs = docked_graph(&shuffled);
    for kind in [ModelKind::Pocket, ModelKind::Ligand, ModelKind::Protein] {
        let p = params(kind, &rec, 8);
        let a = run(&g, &p);
        let b = run(&gs, &p);
        assert!(max_abs_diff(&a.atoms, &b.atoms) < 1e-9);
        assert!(max_abs_diff(&a.atom_feats, &b.atom_feats) < 1e-9);
        assert!(max_abs_diff(&a.residues.gather_rows(&perm), &b.residues) < 1e-9);
        assert!(max_abs_diff(&a.res_feats.gather_rows(&perm), &b.res_feats) < 1e-9);
        let pair_perm: Vec<usize> = (0..rec.n_atoms()).flat_map(|i| perm.iter().map(move |&j| i * n + j)).collect();
        assert!(max_abs_diff(&a.pair.gather_rows(&pair_perm), &b.pair) < 1e-9);
        if let (Some(x), Some(y)) = (&a.logits, &b.logits) {
            assert!(max_abs_diff(&x.gather_rows(&perm), y) < 1e-9);
        }
    }
}

#[test]
fn forward_is_bitwise_deterministic() {
    let rec = common::small_complex(5);
    let g = docked_graph(&rec);
    for kind in [ModelKind::Pocket, ModelKind::Ligand, ModelKind::Protein] {
        let p = params(kind, &rec, 1);
        let (a, b) = (run(&g, &p), run(&g, &p));
        assert_eq!(a.atoms, b.atoms);
        assert_eq!(a.residues, b.residues);
        assert_eq!(a.res_feats, b.res_feats);
        assert_eq!(a.logits, b.logits);
    }
}

#[test]
fn same_seed_gives_same_parameters() {
    let rec = common::small_complex(6);
    for kind in [ModelKind::Pocket, ModelKind::Ligand, ModelKind::Protein] {
        assert_eq!(params(kind, &rec, 3), params(kind, &rec, 3));
        assert_ne!(params(kind, &rec, 3), params(kind, &rec, 4));
    }
}

#[test]
fn zero_parameter_model_has_empty_gradients() {
    let shape = ModelShape {
        kind: ModelKind::Ligand,
        layers: 1,
        hidden: 4,
        d_l: 2,
        d_p: 2,
    };
    let p = ModelParams::empty(shape);
    let mut tape = Tape::new();
    let bp = p.bind(&mut tape, true);
    let x = tape.input(Tensor::from_points(&[[1.0, 2.0, 3.0]]));
    let sq = tape.square(x);
    let loss = tape.sum_all(sq);
    let g = tape.backward(loss).unwrap();
    assert!(bp.collect(&tape, &g).is_empty());
}

#[test]
fn zero_coordinate_heads_keep_poses() {
    let rec = common::small_complex(7);
    let g = docked_graph(&rec);
    for kind in [ModelKind::Ligand, ModelKind::Protein] {
        let shape = *params(kind, &rec, 0).shape();
        let p = ModelParams::init(shape, 2, CoordInit::Zero).unwrap();
        let out = run(&g, &p);
        assert_eq!(out.atoms.to_points(), g.atom_coords());
        assert_eq!(out.residues.to_points(), g.residue_coords());
    }
}
