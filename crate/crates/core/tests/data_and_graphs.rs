mod common;

use std::collections::HashSet;
use std::fs;

use dockgame::complex::{
    build_complex_graph, extract_pocket_subgraph, place_ligand_at_center, GraphConfig, PocketSelection,
};
use dockgame::data::{generate, load_dataset, quantize, save_dataset, split, SynthSpec};
use dockgame::geom::{self, RigidMotion};
use dockgame::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn spec(n: usize, seed: u64) -> SynthSpec {
    SynthSpec {
        n_complexes: n,
        seed,
        ..SynthSpec::default()
    }
}

#[test]
fn save_load_round_trip_is_lossless_at_nine_digits() {
    let recs = generate(&spec(12, 4)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    save_dataset(&path, &recs, "dataset").unwrap();
    let loaded = load_dataset(&path).unwrap();
    assert!(loaded.warnings.is_empty());
    assert_eq!(loaded.header.unwrap().count, 12);
    assert_eq!(loaded.records.len(), recs.len());
    for (a, b) in loaded.records.iter().zip(&recs) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.bonds, b.bonds);
        assert_eq!(a.pocket_labels(), b.pocket_labels());
        for (p, q) in a.atoms.iter().zip(&b.atoms) {
            assert_eq!(p.feat, q.feat);
            assert_eq!(p.apo, q.apo.map(quantize));
            assert_eq!(p.holo, q.holo.map(quantize));
        }
        for (p, q) in a.residues.iter().zip(&b.residues) {
            assert_eq!(p.apo, q.apo.map(quantize));
            assert!(geom::dist(p.holo, q.holo) < 1e-7);
        }
    }
    // a second trip is exact
    let again = dir.path().join("e.jsonl");
    save_dataset(&again, &loaded.records, "dataset").unwrap();
    assert_eq!(load_dataset(&again).unwrap().records, loaded.records);
}

#[test]
fn truncated_line_names_its_line() {
    let recs = generate(&spec(3, 1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    save_dataset(&path, &recs, "dataset").unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let cut = format!("{}\n{}\n{}\n", lines[0], lines[1], &lines[2][..lines[2].len() / 2]);
    fs::write(&path, cut).unwrap();
    match load_dataset(&path) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn empty_file_loads_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.jsonl");
    fs::write(&path, "").unwrap();
    let d = load_dataset(&path).unwrap();
    assert!(d.records.is_empty());
    assert_eq!(d.warnings.len(), 1);
}

#[test]
fn invalid_record_is_rejected_with_line() {
    let mut recs = generate(&spec(2, 2)).unwrap();
    for r in &mut recs[1].residues {
        r.pocket = false;
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    save_dataset(&path, &recs, "dataset").unwrap();
    assert!(matches!(load_dataset(&path), Err(Error::Parse { line: 3, .. })));
}

#[test]
fn split_is_disjoint_exhaustive_and_seeded() {
    let recs = generate(&spec(10, 3)).unwrap();
    let (a, b, c) = split(&recs, (0.8, 0.1, 0.1), 7).unwrap();
    assert_eq!((a.len(), b.len(), c.len()), (8, 1, 1));
    let ids: HashSet<String> = a.iter().chain(&b).chain(&c).map(|r| r.id.clone()).collect();
    assert_eq!(ids.len(), 10);
    let again = split(&recs, (0.8, 0.1, 0.1), 7).unwrap();
    assert_eq!(again.0, a);
    let (all, none, rest) = split(&recs, (1.0, 0.0, 0.0), 7).unwrap();
    assert_eq!((all.len(), none.len(), rest.len()), (10, 0, 0));
    assert!(split(&recs, (0.5, 0.5, 0.5), 7).is_err());
}

#[test]
fn generation_is_order_independent() {
    let many = generate(&spec(6, 9)).unwrap();
    let few = generate(&spec(3, 9)).unwrap();
    assert_eq!(&many[..3], &few[..]);
}

#[test]
fn holo_ligand_centroid_sits_inside_the_pocket() {
    for r in generate(&spec(50, 11)).unwrap() {
        let pocket: Vec<_> = r.residues.iter().filter(|x| x.pocket).map(|x| x.holo).collect();
        let c = geom::centroid(&pocket);
        let radius = pocket.iter().map(|&p| geom::dist(p, c)).fold(0.0, f64::max);
        let lig = geom::centroid(&r.holo_ligand());
        assert!(geom::dist(lig, c) <= radius, "{}: ligand centroid outside pocket sphere", r.id);
        r.validate().unwrap();
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn graph_construction_is_rigid_invariant(seed in 0u64..500, motion_seed in any::<u64>()) {
        let rec = common::small_complex(seed);
        let cfg = GraphConfig::default();
        let g = build_complex_graph(&rec, &cfg).unwrap();
        prop_assert_eq!(&build_complex_graph(&rec, &cfg).unwrap(), &g);
        let m = RigidMotion::random(&mut ChaCha8Rng::seed_from_u64(motion_seed), 30.0);
        let mut moved = rec.clone();
        for a in &mut moved.atoms {
            a.apo = m.apply(a.apo);
        }
        for x in &mut moved.residues {
            x.apo = m.apply(x.apo);
        }
        let gm = build_complex_graph(&moved, &cfg).unwrap();
        // rounding could only flip a pair sitting exactly on a cutoff
        prop_assert_eq!(&gm.protein_edges, &g.protein_edges);
        prop_assert_eq!(&gm.interface_edges, &g.interface_edges);
        prop_assert_eq!(&gm.ligand_edges, &g.ligand_edges);
        for &(i, j) in &g.protein_edges {
            prop_assert!(i < j);
            prop_assert!(geom::dist(g.residues[i].coord, g.residues[j].coord) <= cfg.residue_cutoff);
        }
        for &(a, r) in &g.interface_edges {
            prop_assert!(geom::dist(g.ligand_atoms[a].coord, g.residues[r].coord) <= cfg.interface_cutoff);
        }
    }

    #[test]
    fn pocket_subgraph_edges_exist_in_parent(seed in 0u64..500, mask in any::<u64>()) {
        let rec = common::small_complex(seed);
        let g = build_complex_graph(&rec, &GraphConfig::default()).unwrap();
        let g = place_ligand_at_center(&g, rec.true_pocket_center());
        let mut indicator: Vec<bool> = (0..g.n_residues()).map(|j| mask >> (j % 64) & 1 == 1).collect();
        indicator[0] = true;
        let sel = PocketSelection { indicator, probs: vec![0.5; g.n_residues()], center: rec.true_pocket_center() };
        let sub = extract_pocket_subgraph(&g, &sel).unwrap();
        prop_assert_eq!(&sub.residue_map, &sel.selected());
        let parent_pp: HashSet<_> = g.protein_edges.iter().copied().collect();
        for &(i, j) in &sub.protein_edges {
            prop_assert!(parent_pp.contains(&(sub.residue_map[i], sub.residue_map[j])));
        }
        let parent_lp: HashSet<_> = g.interface_edges.iter().copied().collect();
        for &(a, r) in &sub.interface_edges {
            prop_assert!(parent_lp.contains(&(a, sub.residue_map[r])));
        }
        prop_assert_eq!(&sub.ligand_edges, &g.ligand_edges);
    }

    #[test]
    fn placement_is_idempotent(seed in 0u64..500, t in prop::array::uniform3(-20.0f64..20.0)) {
        let rec = common::small_complex(seed);
        let g = build_complex_graph(&rec, &GraphConfig::default()).unwrap();
        let once = place_ligand_at_center(&g, t);
        let twice = place_ligand_at_center(&once, t);
        prop_assert!(common::max_dev(&once.atom_coords(), &twice.atom_coords()) < 1e-12);
        prop_assert!(geom::dist(geom::centroid(&once.atom_coords()), t) < 1e-9);
    }
}

#[test]
fn shipped_schema_matches_the_writer() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../schema/complex_record.v1.json");
    let schema: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(schema["$id"], dockgame::data::SCHEMA_VERSION);
    assert_eq!(schema["$defs"]["header"]["properties"]["schema"]["const"], dockgame::data::SCHEMA_VERSION);
    let rec = serde_json::to_value(&generate(&spec(1, 0)).unwrap()[0]).unwrap();
    let keys = |v: &serde_json::Value| -> Vec<String> {
        let mut k: Vec<String> = v.as_object().unwrap().keys().cloned().collect();
        k.sort();
        k
    };
    let required = |name: &str| -> Vec<String> {
        let mut k: Vec<String> = schema["$defs"][name]["required"]
            .as_array()
            .unwrap()
            .iter()
            .map(|s| s.as_str().unwrap().to_string())
            .collect();
        k.sort();
        k
    };
    assert_eq!(keys(&rec), required("record"));
    assert_eq!(keys(&rec["atoms"][0]), required("atom"));
    assert_eq!(keys(&rec["residues"][0]), required("residue"));
}
