//! Synthetic complexes with known apo/holo ground truth, and the
//! line-delimited dataset format.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::complex::{AtomRecord, ComplexRecord, ResidueRecord};
use crate::error::{Error, Result};
use crate::geom::{self, Point, RigidMotion};
use crate::seed::derive_seed;

/// Schema tag written in the first line of every dataset file.
pub const SCHEMA_VERSION: &str = "dockgame-complex/v1";

/// Lattice spacing of generated residues, Å.
const LATTICE: f64 = 3.8;
const BOND_LENGTH: f64 = 1.5;
const MIN_ATOM_GAP: f64 = 1.2;

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_complexes: usize,
    /// Inclusive `[min, max]` ligand atom count.
    pub atoms: [usize; 2],
    /// Inclusive `[min, max]` residue count.
    pub residues: [usize; 2],
    /// Inclusive `[min, max]` pocket residue count.
    pub pocket: [usize; 2],
    /// Peak pocket deformation between apo and holo, Å.
    pub holo_displacement: f64,
    /// Per-coordinate Gaussian noise, Å.
    pub noise_sigma: f64,
    /// Distance of the apo ligand from its holo placement, Å.
    pub ligand_offset: f64,
    /// Largest rotation of the apo ligand about its centroid, degrees.
    pub ligand_rotation_deg: f64,
    /// Added to the first feature of every pocket residue.
    pub pocket_feature_signal: f64,
    pub d_l: usize,
    pub d_p: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_complexes: 200,
            atoms: [8, 15],
            residues: [30, 60],
            pocket: [6, 12],
            holo_displacement: 1.5,
            noise_sigma: 0.1,
            ligand_offset: 4.0,
            ligand_rotation_deg: 30.0,
            pocket_feature_signal: 2.0,
            d_l: 8,
            d_p: 16,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let range = |r: [usize; 2], what: &str| {
            if r[0] == 0 || r[0] > r[1] {
                return Err(Error::Config(format!("{what} range {r:?} is empty or starts at zero")));
            }
            Ok(())
        };
        range(self.atoms, "atom")?;
        range(self.residues, "residue")?;
        range(self.pocket, "pocket")?;
        if self.pocket[1] > self.residues[0] {
            return Err(Error::Config(format!(
                "pocket size up to {} exceeds the smallest protein ({} residues)",
                self.pocket[1], self.residues[0]
            )));
        }
        let nonneg = [
            ("noise_sigma", self.noise_sigma),
            ("holo_displacement", self.holo_displacement),
            ("ligand_offset", self.ligand_offset),
            ("ligand_rotation_deg", self.ligand_rotation_deg),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.d_l == 0 || self.d_p == 0 {
            return Err(Error::Config("feature dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// Rounds to 9 significant digits, the precision of stored coordinates.
pub fn quantize(x: f64) -> f64 {
    format!("{x:.8e}").parse().expect("formatted float parses")
}

fn quantize_point(p: Point) -> Point {
    [quantize(p[0]), quantize(p[1]), quantize(p[2])]
}

fn normal_point(rng: &mut ChaCha8Rng, sigma: f64) -> Point {
    let n: Point = [
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    ];
    geom::scale(n, sigma)
}

/// Compact blob of lattice points, perturbed.
fn residue_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point> {
    let side = (n as f64).cbrt().ceil() as i64 + 1;
    let mid = (side - 1) as f64 / 2.0;
    let mut sites: Vec<Point> = Vec::new();
    for i in 0..side {
        for j in 0..side {
            for k in 0..side {
                sites.push([
                    (i as f64 - mid) * LATTICE,
                    (j as f64 - mid) * LATTICE,
                    (k as f64 - mid) * LATTICE,
                ]);
            }
        }
    }
    sites.sort_by(|a, b| geom::norm(*a).total_cmp(&geom::norm(*b)));
    sites.truncate(n);
    sites
        .into_iter()
        .map(|p| geom::add(p, normal_point(rng, 0.4)))
        .collect()
}

/// Random tree conformer with fixed bond length, plus a few ring closures.
fn ligand_conformer(rng: &mut ChaCha8Rng, n: usize) -> (Vec<Point>, Vec<[usize; 2]>) {
    let mut pts: Vec<Point> = vec![[0.0; 3]];
    let mut bonds = Vec::new();
    for i in 1..n {
        let mut best: Option<(Point, usize, f64)> = None;
        for _ in 0..20 {
            let parent = rng.gen_range(0..i);
            let cand = geom::add(pts[parent], geom::scale(geom::random_unit(rng), BOND_LENGTH));
            let gap = pts
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != parent)
                .map(|(_, &p)| geom::dist(p, cand))
                .fold(f64::INFINITY, f64::min);
            if best.map_or(true, |b| gap > b.2) {
                best = Some((cand, parent, gap));
            }
            if gap >= MIN_ATOM_GAP {
                break;
            }
        }
        let (p, parent, _) = best.expect("at least one candidate");
        pts.push(p);
        bonds.push([parent, i]);
    }
    let bonded: HashSet<(usize, usize)> = bonds.iter().map(|b| (b[0].min(b[1]), b[0].max(b[1]))).collect();
    let mut extra: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| ((a + 1)..n).map(move |b| (a, b)))
        .filter(|p| !bonded.contains(p))
        .filter(|&(a, b)| geom::dist(pts[a], pts[b]) < 2.0 * BOND_LENGTH)
        .collect();
    extra.shuffle(rng);
    for (a, b) in extra.into_iter().take(n / 5) {
        bonds.push([a, b]);
    }
    (pts, bonds)
}

fn generate_one(spec: &SynthSpec, index: usize) -> ComplexRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, index as u64));
    let n_res = rng.gen_range(spec.residues[0]..=spec.residues[1]);
    let n_atoms = rng.gen_range(spec.atoms[0]..=spec.atoms[1]);
    let n_pocket = rng.gen_range(spec.pocket[0]..=spec.pocket[1]).min(n_res);

    let apo_res = residue_cloud(&mut rng, n_res);
    let centroid = geom::centroid(&apo_res);
    let surface = (0..n_res)
        .max_by(|&a, &b| {
            geom::dist2(apo_res[a], centroid)
                .total_cmp(&geom::dist2(apo_res[b], centroid))
                .then(b.cmp(&a))
        })
        .expect("nonempty protein");
    let mut order: Vec<usize> = (0..n_res).collect();
    order.sort_by(|&a, &b| {
        geom::dist2(apo_res[a], apo_res[surface])
            .total_cmp(&geom::dist2(apo_res[b], apo_res[surface]))
            .then(a.cmp(&b))
    });
    let mut is_pocket = vec![false; n_res];
    for &j in order.iter().take(n_pocket) {
        is_pocket[j] = true;
    }
    let pocket_pts: Vec<Point> = (0..n_res).filter(|&j| is_pocket[j]).map(|j| apo_res[j]).collect();
    let pocket_center = geom::centroid(&pocket_pts);
    let pocket_radius = pocket_pts
        .iter()
        .map(|&p| geom::dist(p, pocket_center))
        .fold(0.0, f64::max)
        .max(1.0);

    // smooth contraction toward the pocket center, peak `holo_displacement`
    let s2 = 2.0 * pocket_radius * pocket_radius;
    let holo_res: Vec<Point> = apo_res
        .iter()
        .map(|&p| {
            let to_center = geom::sub(pocket_center, p);
            let r = geom::norm(to_center);
            let bump = if r > 1e-9 && spec.holo_displacement > 0.0 {
                geom::scale(to_center, spec.holo_displacement * (-r * r / s2).exp() / r)
            } else {
                [0.0; 3]
            };
            geom::add(geom::add(p, bump), normal_point(&mut rng, spec.noise_sigma))
        })
        .collect();

    let (conf, bonds) = ligand_conformer(&mut rng, n_atoms);
    let conf_c = geom::centroid(&conf);
    let spin = RigidMotion::random(&mut rng, 0.0);
    let jitter_scale = 0.3 * pocket_radius;
    let site = geom::add(pocket_center, normal_point(&mut rng, jitter_scale.min(1.0)));
    let holo_lig: Vec<Point> = conf
        .iter()
        .map(|&p| {
            let x = geom::add(spin.rotate(geom::sub(p, conf_c)), site);
            geom::add(x, normal_point(&mut rng, spec.noise_sigma))
        })
        .collect();

    let angle = spec.ligand_rotation_deg.to_radians() * rng.gen::<f64>();
    let axis = geom::random_unit(&mut rng);
    let shift = geom::scale(geom::random_unit(&mut rng), spec.ligand_offset);
    let holo_c = geom::centroid(&holo_lig);
    let tilt = RigidMotion::from_axis_angle(axis, angle, [0.0; 3]);
    let apo_lig: Vec<Point> = holo_lig
        .iter()
        .map(|&p| {
            let moved = if angle == 0.0 {
                geom::add(p, shift)
            } else {
                geom::add(geom::add(tilt.rotate(geom::sub(p, holo_c)), holo_c), shift)
            };
            geom::add(moved, normal_point(&mut rng, spec.noise_sigma))
        })
        .collect();

    let feat = |rng: &mut ChaCha8Rng, d: usize| -> Vec<f64> {
        (0..d).map(|_| quantize(StandardNormal.sample(rng))).collect()
    };
    let atoms = (0..n_atoms)
        .map(|i| AtomRecord {
            feat: feat(&mut rng, spec.d_l),
            apo: quantize_point(apo_lig[i]),
            holo: quantize_point(holo_lig[i]),
        })
        .collect();
    let residues = (0..n_res)
        .map(|j| {
            let mut f = feat(&mut rng, spec.d_p);
            if is_pocket[j] {
                f[0] = quantize(f[0] + spec.pocket_feature_signal);
            }
            ResidueRecord {
                feat: f,
                apo: quantize_point(apo_res[j]),
                holo: quantize_point(holo_res[j]),
                pocket: is_pocket[j],
            }
        })
        .collect();
    ComplexRecord {
        id: format!("synth-{}-{index:05}", spec.seed),
        atoms,
        residues,
        bonds,
        runtime_s: None,
    }
}

/// Generates `spec.n_complexes` records; each depends only on `(seed, index)`.
pub fn generate(spec: &SynthSpec) -> Result<Vec<ComplexRecord>> {
    spec.validate()?;
    Ok((0..spec.n_complexes)
        .into_par_iter()
        .map(|i| generate_one(spec, i))
        .collect())
}

/// First line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub schema: String,
    /// `dataset` for ground truth, `prediction` for model output.
    pub kind: String,
    pub count: usize,
}

fn quantized(rec: &ComplexRecord) -> ComplexRecord {
    let mut r = rec.clone();
    for a in &mut r.atoms {
        a.apo = quantize_point(a.apo);
        a.holo = quantize_point(a.holo);
    }
    for res in &mut r.residues {
        res.apo = quantize_point(res.apo);
        res.holo = quantize_point(res.holo);
    }
    r
}

/// Writes the header line followed by one record per line.
pub fn save_dataset(path: &Path, records: &[ComplexRecord], kind: &str) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = BufWriter::new(file);
    let header = DatasetHeader {
        schema: SCHEMA_VERSION.into(),
        kind: kind.into(),
        count: records.len(),
    };
    let io = |e| Error::io(format!("writing {}", path.display()), e);
    serde_json::to_writer(&mut w, &header).map_err(|e| Error::io(format!("writing {}", path.display()), e.into()))?;
    w.write_all(b"\n").map_err(io)?;
    for r in records {
        serde_json::to_writer(&mut w, &quantized(r))
            .map_err(|e| Error::io(format!("writing {}", path.display()), e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub header: Option<DatasetHeader>,
    pub records: Vec<ComplexRecord>,
    pub warnings: Vec<String>,
}

/// Parses and validates a dataset file. An empty file yields an empty
/// dataset with a warning.
pub fn load_dataset(path: &Path) -> Result<LoadedDataset> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut header: Option<DatasetHeader> = None;
    let mut records: Vec<ComplexRecord> = Vec::new();
    let mut warnings = Vec::new();
    let mut ids = HashSet::new();
    let mut dims: Option<(usize, usize)> = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(format!("reading {} line {lineno}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        if header.is_none() {
            let h: DatasetHeader = serde_json::from_str(&line)
                .map_err(|e| parse_err(lineno, format!("expected a schema header: {e}")))?;
            if h.schema != SCHEMA_VERSION {
                return Err(parse_err(
                    lineno,
                    format!("unsupported schema {:?}, expected {SCHEMA_VERSION:?}", h.schema),
                ));
            }
            header = Some(h);
            continue;
        }
        let rec: ComplexRecord = serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
        rec.validate().map_err(|e| parse_err(lineno, e.to_string()))?;
        let d = (rec.atoms[0].feat.len(), rec.residues[0].feat.len());
        if *dims.get_or_insert(d) != d {
            return Err(parse_err(lineno, format!("feature dimensions {d:?} differ from {:?}", dims.unwrap())));
        }
        if !ids.insert(rec.id.clone()) {
            return Err(parse_err(lineno, format!("duplicate complex id {}", rec.id)));
        }
        records.push(rec);
    }
    match &header {
        None => {
            let msg = format!("{} is empty; loaded no complexes", path.display());
            log::warn!("{msg}");
            warnings.push(msg);
        }
        Some(h) if h.count != records.len() => {
            let msg = format!("header announces {} complexes, file holds {}", h.count, records.len());
            log::warn!("{msg}");
            warnings.push(msg);
        }
        _ => {}
    }
    Ok(LoadedDataset {
        header,
        records,
        warnings,
    })
}

/// Seeded random split. Train and validation sizes are `round(f * n)`;
/// the test set takes the rest.
pub fn split(
    records: &[ComplexRecord],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<ComplexRecord>, Vec<ComplexRecord>, Vec<ComplexRecord>)> {
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "split fractions must be in [0,1] and sum to 1, got {fractions:?}"
        )));
    }
    let n = records.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((a * n as f64).round() as usize).min(n);
    let n_val = ((b * n as f64).round() as usize).min(n - n_train);
    let take = |r: &[usize]| r.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    Ok((
        take(&idx[..n_train]),
        take(&idx[n_train..n_train + n_val]),
        take(&idx[n_train + n_val..]),
    ))
}
