//! Protein–ligand complex graphs.
//!
//! A [`ComplexRecord`] is the stored sample (apo and holo coordinates for the
//! ligand atoms and protein residues). [`ComplexGraph`] is the heterogeneous
//! graph built from one pose of it: ligand bonds, residue–residue contacts and
//! atom–residue interface contacts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Point};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomRecord {
    pub feat: Vec<f64>,
    pub apo: Point,
    pub holo: Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidueRecord {
    pub feat: Vec<f64>,
    pub apo: Point,
    pub holo: Point,
    #[serde(with = "bool_as_int")]
    pub pocket: bool,
}

/// One complex as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexRecord {
    pub id: String,
    pub atoms: Vec<AtomRecord>,
    pub residues: Vec<ResidueRecord>,
    pub bonds: Vec<[usize; 2]>,
    /// Inference wall time, present only on prediction files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_s: Option<f64>,
}

mod bool_as_int {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(D::Error::custom(format!("pocket must be 0 or 1, got {other}"))),
        }
    }
}

impl ComplexRecord {
    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn n_residues(&self) -> usize {
        self.residues.len()
    }

    pub fn apo_ligand(&self) -> Vec<Point> {
        self.atoms.iter().map(|a| a.apo).collect()
    }

    pub fn holo_ligand(&self) -> Vec<Point> {
        self.atoms.iter().map(|a| a.holo).collect()
    }

    pub fn apo_residues(&self) -> Vec<Point> {
        self.residues.iter().map(|r| r.apo).collect()
    }

    pub fn holo_residues(&self) -> Vec<Point> {
        self.residues.iter().map(|r| r.holo).collect()
    }

    pub fn pocket_labels(&self) -> Vec<bool> {
        self.residues.iter().map(|r| r.pocket).collect()
    }

    /// Centroid of the holo coordinates of the labelled pocket residues.
    pub fn true_pocket_center(&self) -> Point {
        let pts: Vec<Point> = self
            .residues
            .iter()
            .filter(|r| r.pocket)
            .map(|r| r.holo)
            .collect();
        geom::centroid(&pts)
    }

    pub fn atom_features(&self) -> Tensor {
        Tensor::from_rows(&self.atoms.iter().map(|a| a.feat.clone()).collect::<Vec<_>>())
    }

    pub fn residue_features(&self) -> Tensor {
        Tensor::from_rows(
            &self
                .residues
                .iter()
                .map(|r| r.feat.clone())
                .collect::<Vec<_>>(),
        )
    }

    /// Checks every structural invariant of a stored complex.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(format!("complex {}: {msg}", self.id)));
        if self.atoms.is_empty() {
            return bad("no ligand atoms".into());
        }
        if self.residues.is_empty() {
            return bad("no protein residues".into());
        }
        let d_l = self.atoms[0].feat.len();
        if let Some(i) = self.atoms.iter().position(|a| a.feat.len() != d_l) {
            return bad(format!("atom {i} feature length differs from {d_l}"));
        }
        let d_p = self.residues[0].feat.len();
        if let Some(i) = self.residues.iter().position(|r| r.feat.len() != d_p) {
            return bad(format!("residue {i} feature length differs from {d_p}"));
        }
        let finite = |p: &Point| p.iter().all(|v| v.is_finite());
        for (i, a) in self.atoms.iter().enumerate() {
            if !finite(&a.apo) || !finite(&a.holo) || a.feat.iter().any(|v| !v.is_finite()) {
                return bad(format!("atom {i} has non-finite values"));
            }
        }
        for (i, r) in self.residues.iter().enumerate() {
            if !finite(&r.apo) || !finite(&r.holo) || r.feat.iter().any(|v| !v.is_finite()) {
                return bad(format!("residue {i} has non-finite values"));
            }
        }
        for &[a, b] in &self.bonds {
            if a >= self.atoms.len() || b >= self.atoms.len() {
                return bad(format!("bond ({a}, {b}) out of range"));
            }
            if a == b {
                return bad(format!("self bond on atom {a}"));
            }
        }
        if !self.residues.iter().any(|r| r.pocket) {
            return bad("no pocket residue labelled".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphConfig {
    /// Residue–residue contact radius, Å (inclusive).
    pub residue_cutoff: f64,
    /// Atom–residue interface radius, Å (inclusive).
    pub interface_cutoff: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            residue_cutoff: 8.0,
            interface_cutoff: 10.0,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.residue_cutoff > 0.0 && self.interface_cutoff > 0.0) {
            return Err(Error::Config("graph cutoffs must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LigandAtom {
    pub feature: Vec<f64>,
    pub coord: Point,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProteinResidue {
    pub feature: Vec<f64>,
    /// Cα position.
    pub coord: Point,
    pub is_pocket_true: bool,
}

/// Heterogeneous ligand/protein graph for one pose.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGraph {
    pub ligand_atoms: Vec<LigandAtom>,
    pub residues: Vec<ProteinResidue>,
    /// Chemical bonds, unordered.
    pub ligand_edges: Vec<(usize, usize)>,
    /// Residue contacts, stored with `i < j`.
    pub protein_edges: Vec<(usize, usize)>,
    /// `(atom, residue)` pairs within the interface cutoff.
    pub interface_edges: Vec<(usize, usize)>,
    /// Interaction embeddings, `(n_l * n_p) x d`, row `i * n_p + j`.
    pub pair_embed: Option<Tensor>,
    /// Index of each residue in the full protein.
    pub residue_map: Vec<usize>,
    pub config: GraphConfig,
}

impl ComplexGraph {
    pub fn n_atoms(&self) -> usize {
        self.ligand_atoms.len()
    }

    pub fn n_residues(&self) -> usize {
        self.residues.len()
    }

    pub fn atom_coords(&self) -> Vec<Point> {
        self.ligand_atoms.iter().map(|a| a.coord).collect()
    }

    pub fn residue_coords(&self) -> Vec<Point> {
        self.residues.iter().map(|r| r.coord).collect()
    }

    /// Mean Cα position of all residues.
    pub fn protein_center(&self) -> Point {
        geom::centroid(&self.residue_coords())
    }

    pub fn set_atom_coords(&mut self, coords: &[Point]) {
        assert_eq!(coords.len(), self.ligand_atoms.len());
        for (a, &c) in self.ligand_atoms.iter_mut().zip(coords) {
            a.coord = c;
        }
    }

    pub fn set_residue_coords(&mut self, coords: &[Point]) {
        assert_eq!(coords.len(), self.residues.len());
        for (r, &c) in self.residues.iter_mut().zip(coords) {
            r.coord = c;
        }
    }

    /// Recomputes the distance-defined interface edges from current coordinates.
    pub fn recompute_interface(&mut self) {
        self.interface_edges = interface_pairs(
            &self.atom_coords(),
            &self.residue_coords(),
            self.config.interface_cutoff,
        );
    }

    /// Allocates zeroed pair embeddings of width `d` if absent or mis-sized.
    pub fn ensure_pair_embed(&mut self, d: usize) -> &Tensor {
        let rows = self.n_atoms() * self.n_residues();
        let ok = matches!(&self.pair_embed, Some(t) if t.shape() == (rows, d));
        if !ok {
            self.pair_embed = Some(Tensor::zeros(rows, d));
        }
        self.pair_embed.as_ref().expect("allocated above")
    }
}

pub(crate) fn residue_pairs(coords: &[Point], cutoff: f64) -> Vec<(usize, usize)> {
    let c2 = cutoff * cutoff;
    let mut edges = Vec::new();
    for i in 0..coords.len() {
        for j in (i + 1)..coords.len() {
            if geom::dist2(coords[i], coords[j]) <= c2 {
                edges.push((i, j));
            }
        }
    }
    edges
}

pub(crate) fn interface_pairs(atoms: &[Point], residues: &[Point], cutoff: f64) -> Vec<(usize, usize)> {
    let c2 = cutoff * cutoff;
    let mut edges = Vec::new();
    for (i, &a) in atoms.iter().enumerate() {
        for (j, &r) in residues.iter().enumerate() {
            if geom::dist2(a, r) <= c2 {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// Builds the full graph from the apo coordinates of `record`.
pub fn build_complex_graph(record: &ComplexRecord, cfg: &GraphConfig) -> Result<ComplexGraph> {
    if record.atoms.is_empty() || record.residues.is_empty() {
        return Err(Error::InvalidInput(format!(
            "complex {}: empty ligand or protein",
            record.id
        )));
    }
    cfg.validate()?;
    let ligand_atoms: Vec<LigandAtom> = record
        .atoms
        .iter()
        .map(|a| LigandAtom {
            feature: a.feat.clone(),
            coord: a.apo,
        })
        .collect();
    let residues: Vec<ProteinResidue> = record
        .residues
        .iter()
        .map(|r| ProteinResidue {
            feature: r.feat.clone(),
            coord: r.apo,
            is_pocket_true: r.pocket,
        })
        .collect();
    let atom_xyz: Vec<Point> = ligand_atoms.iter().map(|a| a.coord).collect();
    let res_xyz: Vec<Point> = residues.iter().map(|r| r.coord).collect();

    let mut ligand_edges: Vec<(usize, usize)> = record
        .bonds
        .iter()
        .map(|&[a, b]| (a.min(b), a.max(b)))
        .filter(|(a, b)| a != b)
        .collect();
    ligand_edges.sort_unstable();
    ligand_edges.dedup();

    Ok(ComplexGraph {
        protein_edges: residue_pairs(&res_xyz, cfg.residue_cutoff),
        interface_edges: interface_pairs(&atom_xyz, &res_xyz, cfg.interface_cutoff),
        residue_map: (0..residues.len()).collect(),
        ligand_atoms,
        residues,
        ligand_edges,
        pair_embed: None,
        config: *cfg,
    })
}

/// Rigidly translates the ligand so its centroid sits at `target`.
pub fn place_ligand_at_center(graph: &ComplexGraph, target: Point) -> ComplexGraph {
    let mut out = graph.clone();
    let mut coords = out.atom_coords();
    let shift = geom::sub(target, geom::centroid(&coords));
    geom::translate(&mut coords, shift);
    out.set_atom_coords(&coords);
    out.recompute_interface();
    out
}

/// Pocket subgraph: every ligand atom, only the selected residues.
pub fn extract_pocket_subgraph(graph: &ComplexGraph, sel: &PocketSelection) -> Result<ComplexGraph> {
    if sel.indicator.len() != graph.n_residues() {
        return Err(Error::Shape(format!(
            "selection covers {} residues, graph has {}",
            sel.indicator.len(),
            graph.n_residues()
        )));
    }
    let kept: Vec<usize> = sel
        .indicator
        .iter()
        .enumerate()
        .filter_map(|(j, &on)| on.then_some(j))
        .collect();
    if kept.is_empty() {
        return Err(Error::InvalidInput(
            "pocket selection is empty; apply the fallback first".into(),
        ));
    }
    let mut local = vec![usize::MAX; graph.n_residues()];
    for (new, &old) in kept.iter().enumerate() {
        local[old] = new;
    }
    let protein_edges = graph
        .protein_edges
        .iter()
        .filter_map(|&(a, b)| {
            let (la, lb) = (local[a], local[b]);
            (la != usize::MAX && lb != usize::MAX).then_some((la.min(lb), la.max(lb)))
        })
        .collect();
    let mut out = ComplexGraph {
        ligand_atoms: graph.ligand_atoms.clone(),
        residues: kept.iter().map(|&j| graph.residues[j].clone()).collect(),
        ligand_edges: graph.ligand_edges.clone(),
        protein_edges,
        interface_edges: Vec::new(),
        pair_embed: None,
        residue_map: kept.iter().map(|&j| graph.residue_map[j]).collect(),
        config: graph.config,
    };
    out.recompute_interface();
    Ok(out)
}

/// Predicted pocket: per-residue indicator, probabilities and centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct PocketSelection {
    pub indicator: Vec<bool>,
    pub probs: Vec<f64>,
    pub center: Point,
}

impl PocketSelection {
    pub fn selected(&self) -> Vec<usize> {
        self.indicator
            .iter()
            .enumerate()
            .filter_map(|(j, &on)| on.then_some(j))
            .collect()
    }

    pub fn n_selected(&self) -> usize {
        self.indicator.iter().filter(|&&b| b).count()
    }
}
