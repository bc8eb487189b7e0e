use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

/// Which of the three networks a parameter set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Pocket residue classifier (ligand player).
    Pocket,
    /// Ligand docking network (ligand player).
    Ligand,
    /// Pocket docking network (protein player).
    Protein,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Pocket => "pocket",
            ModelKind::Ligand => "ligand",
            ModelKind::Protein => "protein",
        }
    }
}

/// Which streams one layer updates. The last layer only computes what the
/// model's output head consumes, so every parameter has a gradient path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerPlan {
    pub atom_feats: bool,
    pub res_feats: bool,
    pub pair: bool,
    pub atom_coords: bool,
    pub res_coords: bool,
}

impl LayerPlan {
    pub fn msg_ll(&self) -> bool {
        self.atom_feats || self.atom_coords
    }

    pub fn msg_pp(&self) -> bool {
        self.res_feats || self.res_coords
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub kind: ModelKind,
    pub layers: usize,
    pub hidden: usize,
    pub d_l: usize,
    pub d_p: usize,
}

impl ModelShape {
    pub fn plan(&self, layer: usize) -> LayerPlan {
        let last = layer + 1 == self.layers;
        let (atom_coords, res_coords) = match self.kind {
            ModelKind::Pocket => (false, false),
            ModelKind::Ligand => (true, false),
            ModelKind::Protein => (false, true),
        };
        LayerPlan {
            atom_feats: !last,
            res_feats: !last || self.kind == ModelKind::Pocket,
            pair: !last,
            atom_coords,
            res_coords,
        }
    }

    /// Ordered `(name, rows, cols)` for every tensor of the model.
    pub fn param_shapes(&self) -> Vec<(String, usize, usize)> {
        let d = self.hidden;
        let mut out = vec![
            ("embed_atom.w".to_string(), self.d_l, d),
            ("embed_atom.b".to_string(), 1, d),
            ("embed_res.w".to_string(), self.d_p, d),
            ("embed_res.b".to_string(), 1, d),
        ];
        let mlp = |out: &mut Vec<(String, usize, usize)>, p: &str, input: usize, output: usize, bias: bool| {
            out.push((format!("{p}.w1"), input, d));
            out.push((format!("{p}.b1"), 1, d));
            out.push((format!("{p}.w2"), d, output));
            if bias {
                out.push((format!("{p}.b2"), 1, output));
            }
        };
        for l in 0..self.layers {
            let plan = self.plan(l);
            let pre = format!("l{l}");
            if plan.msg_ll() {
                mlp(&mut out, &format!("{pre}.msg_ll"), 2 * d + 1, d, true);
            }
            if plan.msg_pp() {
                mlp(&mut out, &format!("{pre}.msg_pp"), 2 * d + 1, d, true);
            }
            mlp(&mut out, &format!("{pre}.msg_lp"), 3 * d + 1, d, true);
            if plan.atom_feats {
                mlp(&mut out, &format!("{pre}.node_atom"), 3 * d, d, true);
            }
            if plan.res_feats {
                mlp(&mut out, &format!("{pre}.node_res"), 3 * d, d, true);
            }
            if plan.pair {
                out.push((format!("{pre}.pair.w"), d, d));
            }
            if plan.atom_coords {
                mlp(&mut out, &format!("{pre}.coord_ll"), d, 1, false);
                mlp(&mut out, &format!("{pre}.coord_la"), d, 1, false);
            }
            if plan.res_coords {
                mlp(&mut out, &format!("{pre}.coord_pp"), d, 1, false);
                mlp(&mut out, &format!("{pre}.coord_ra"), d, 1, false);
            }
        }
        if self.kind == ModelKind::Pocket {
            out.push(("head.w".to_string(), d, 1));
            out.push(("head.b".to_string(), 1, 1));
        }
        out
    }

    fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 || self.d_l == 0 || self.d_p == 0 {
            return Err(Error::Config(format!(
                "{} model needs positive layers/hidden/feature sizes, got {:?}",
                self.kind.name(),
                self
            )));
        }
        Ok(())
    }
}

/// Initial scale of the last layer of every coordinate MLP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoordInit {
    /// Exactly zero: the model starts as the identity on coordinates.
    Zero,
    /// Gaussian with this standard deviation times `1/sqrt(fan_in)`.
    Scaled(f64),
}

impl Default for CoordInit {
    fn default() -> Self {
        CoordInit::Scaled(0.1)
    }
}

/// Named parameter tensors of one model plus matching gradient buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    shape: ModelShape,
    values: BTreeMap<String, Tensor>,
    grads: BTreeMap<String, Tensor>,
}

/// Gradients keyed by parameter name, as produced by one backward pass.
pub type GradMap = BTreeMap<String, Tensor>;

impl ModelParams {
    pub fn init(shape: ModelShape, seed: u64, coord_init: CoordInit) -> Result<Self> {
        shape.validate()?;
        let kind_salt = match shape.kind {
            ModelKind::Pocket => 0x5eed_0001,
            ModelKind::Ligand => 0x5eed_0002,
            ModelKind::Protein => 0x5eed_0003,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ kind_salt);
        let mut values = BTreeMap::new();
        for (name, r, c) in shape.param_shapes() {
            let is_bias = name.ends_with(".b") || name.contains(".b1") || name.contains(".b2");
            let is_coord_out = name.contains(".coord_") && name.ends_with(".w2");
            let std = if is_bias {
                0.0
            } else if is_coord_out {
                match coord_init {
                    CoordInit::Zero => 0.0,
                    CoordInit::Scaled(s) => s / (r as f64).sqrt(),
                }
            } else {
                1.0 / (r as f64).sqrt()
            };
            let t = if std == 0.0 {
                Tensor::zeros(r, c)
            } else {
                let normal = Normal::new(0.0, std).expect("positive std");
                Tensor::from_fn(r, c, |_, _| normal.sample(&mut rng))
            };
            values.insert(name, t);
        }
        Ok(Self::from_values(shape, values))
    }

    fn from_values(shape: ModelShape, values: BTreeMap<String, Tensor>) -> Self {
        let grads = values
            .iter()
            .map(|(k, v)| (k.clone(), Tensor::zeros(v.rows(), v.cols())))
            .collect();
        Self {
            shape,
            values,
            grads,
        }
    }

    /// Rebuilds a parameter set, checking names and shapes against `shape`.
    pub fn from_tensors(shape: ModelShape, mut tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        shape.validate()?;
        let expected = shape.param_shapes();
        if tensors.len() != expected.len() {
            return Err(Error::Shape(format!(
                "{} model: expected {} tensors, found {}",
                shape.kind.name(),
                expected.len(),
                tensors.len()
            )));
        }
        let mut values = BTreeMap::new();
        for (name, r, c) in expected {
            let t = tensors
                .remove(&name)
                .ok_or_else(|| Error::Shape(format!("missing tensor {name}")))?;
            if t.shape() != (r, c) {
                return Err(Error::Shape(format!(
                    "tensor {name}: expected {r}x{c}, found {}x{}",
                    t.rows(),
                    t.cols()
                )));
            }
            if !t.is_finite() {
                return Err(Error::NonFinite(format!("tensor {name}")));
            }
            values.insert(name, t);
        }
        Ok(Self::from_values(shape, values))
    }

    /// A model with no tensors at all.
    pub fn empty(shape: ModelShape) -> Self {
        Self::from_values(shape, BTreeMap::new())
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    pub fn kind(&self) -> ModelKind {
        self.shape.kind
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.values.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.values.get_mut(name)
    }

    pub fn values(&self) -> &BTreeMap<String, Tensor> {
        &self.values
    }

    pub fn grads(&self) -> &BTreeMap<String, Tensor> {
        &self.grads
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.values.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.values.keys()
    }

    pub fn n_scalars(&self) -> usize {
        self.values.values().map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        self.grads.values_mut().for_each(|g| g.fill(0.0));
    }

    /// Adds `scale * g` into the gradient buffers.
    pub fn accumulate_grads(&mut self, g: &GradMap, scale: f64) -> Result<()> {
        for (name, t) in g {
            let buf = self
                .grads
                .get_mut(name)
                .ok_or_else(|| Error::Shape(format!("gradient for unknown tensor {name}")))?;
            if buf.shape() != t.shape() {
                return Err(Error::Shape(format!("gradient shape mismatch for {name}")));
            }
            buf.add_scaled(t, scale);
        }
        Ok(())
    }

    /// Values paired with their gradient buffers, in name order.
    pub fn values_and_grads_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor, &Tensor)> {
        self.values
            .iter_mut()
            .zip(self.grads.values())
            .map(|((k, v), g)| (k, v, g))
    }

    pub fn grads_finite(&self) -> bool {
        self.grads.values().all(Tensor::is_finite)
    }

    /// Overwrites the stored values of `name`, keeping its shape.
    pub fn set(&mut self, name: &str, t: Tensor) -> Result<()> {
        let slot = self
            .values
            .get_mut(name)
            .ok_or_else(|| Error::Shape(format!("unknown tensor {name}")))?;
        if slot.shape() != t.shape() {
            return Err(Error::Shape(format!("shape mismatch for {name}")));
        }
        *slot = t;
        Ok(())
    }

    /// Parameter bytes, for frozen-opponent purity checks.
    pub fn fingerprint(&self) -> Vec<u64> {
        self.values
            .values()
            .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
            .collect()
    }

    pub fn bind<'p>(&'p self, tape: &mut Tape<'p>, trainable: bool) -> BoundParams {
        let vars = self
            .values
            .iter()
            .map(|(k, v)| (k.clone(), tape.borrowed(v, trainable)))
            .collect();
        BoundParams {
            shape: self.shape,
            vars,
            trainable,
        }
    }
}

/// Parameters registered as leaves on one tape.
pub struct BoundParams {
    shape: ModelShape,
    vars: BTreeMap<String, Var>,
    trainable: bool,
}

impl BoundParams {
    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Shape(format!("{} model has no tensor {name}", self.shape.kind.name())))
    }

    pub fn has(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }

    /// Gradients of every bound tensor; zeros where no gradient reached it.
    pub fn collect(&self, tape: &Tape<'_>, grads: &Gradients) -> GradMap {
        self.vars
            .iter()
            .map(|(k, &v)| {
                let g = grads.get(v).cloned().unwrap_or_else(|| {
                    let t = tape.value(v);
                    Tensor::zeros(t.rows(), t.cols())
                });
                (k.clone(), g)
            })
            .collect()
    }
}
