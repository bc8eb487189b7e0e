//! Run configuration: one TOML file with a section per component.
//!
//! ```toml
//! [loop]
//! m_l = 2
//! n_l = 6
//! [weights]
//! alpha2 = 50.0
//! [model]
//! hidden_ligand = 512
//! ```
//!
//! Missing keys take their defaults; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::complex::GraphConfig;
use crate::data::SynthSpec;
use crate::engine::{EngineConfig, LoopConfig};
use crate::error::{Error, Result};
use crate::net::{CoordInit, ModelKind, ModelShape, PocketConfig};
use crate::objectives::LossWeights;

/// Depth and width of the three networks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub layers_pocket: usize,
    pub layers_ligand: usize,
    pub layers_protein: usize,
    pub hidden_pocket: usize,
    pub hidden_ligand: usize,
    pub hidden_protein: usize,
    /// Initial scale of the coordinate heads; 0 starts from the identity.
    pub coord_init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers_pocket: 1,
            layers_ligand: 5,
            layers_protein: 5,
            hidden_pocket: 128,
            hidden_ligand: 512,
            hidden_protein: 512,
            coord_init_scale: 0.0,
        }
    }
}

impl ModelConfig {
    /// Desk-scale sizes for tests and quick runs.
    pub fn tiny() -> Self {
        Self {
            layers_pocket: 1,
            layers_ligand: 2,
            layers_protein: 2,
            hidden_pocket: 16,
            hidden_ligand: 32,
            hidden_protein: 32,
            ..Self::default()
        }
    }

    pub fn coord_init(&self) -> CoordInit {
        if self.coord_init_scale == 0.0 {
            CoordInit::Zero
        } else {
            CoordInit::Scaled(self.coord_init_scale)
        }
    }

    pub fn shape(&self, kind: ModelKind, d_l: usize, d_p: usize) -> ModelShape {
        let (layers, hidden) = match kind {
            ModelKind::Pocket => (self.layers_pocket, self.hidden_pocket),
            ModelKind::Ligand => (self.layers_ligand, self.hidden_ligand),
            ModelKind::Protein => (self.layers_protein, self.hidden_protein),
        };
        ModelShape {
            kind,
            layers,
            hidden,
            d_l,
            d_p,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.layers_pocket,
            self.layers_ligand,
            self.layers_protein,
            self.hidden_pocket,
            self.hidden_ligand,
            self.hidden_protein,
        ];
        if sizes.contains(&0) {
            return Err(Error::Config(format!("model layers and widths must be >= 1: {self:?}")));
        }
        if !(self.coord_init_scale >= 0.0 && self.coord_init_scale.is_finite()) {
            return Err(Error::Config("coord_init_scale must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Every tunable of a run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed for initialisation, shuffling and dropout.
    pub seed: u64,
    /// Use the small model preset regardless of `[model]` sizes.
    pub tiny: bool,
    #[serde(rename = "loop")]
    pub loops: LoopConfig,
    pub weights: LossWeights,
    pub graph: GraphConfig,
    pub pocket: PocketConfig,
    pub model: ModelConfig,
    pub synth: SynthSpec,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.tiny {
            cfg = cfg.with_tiny_model();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    /// Replaces the model sizes with the tiny preset.
    pub fn with_tiny_model(mut self) -> Self {
        let scale = self.model.coord_init_scale;
        self.tiny = true;
        self.model = ModelConfig {
            coord_init_scale: scale,
            ..ModelConfig::tiny()
        };
        self
    }

    pub fn engine(&self) -> EngineConfig {
        EngineConfig {
            loops: self.loops.clone(),
            weights: self.weights,
            graph: self.graph,
            pocket: self.pocket,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.engine().validate()?;
        self.model.validate()?;
        self.synth.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_settings() {
        let c = RunConfig::default();
        assert_eq!((c.loops.m_l, c.loops.n_l), (2, 6));
        assert_eq!(c.loops.learning_rate, 5e-5);
        assert_eq!((c.loops.epochs, c.loops.batch_size), (200, 4));
        assert_eq!(c.loops.dropout, 0.1);
        assert_eq!(c.weights, LossWeights::default());
        assert_eq!((c.model.layers_pocket, c.model.layers_ligand), (1, 5));
        assert_eq!((c.model.hidden_pocket, c.model.hidden_protein), (128, 512));
        c.validate().unwrap();
    }

    #[test]
    fn partial_file_overrides_and_unknown_keys_fail() {
        let c = RunConfig::from_toml_str("[loop]\nm_l = 3\nrecompute_interface = \"inner\"\n[weights]\nbeta = 2.0\n").unwrap();
        assert_eq!(c.loops.m_l, 3);
        assert_eq!(c.loops.n_l, 6);
        assert_eq!(c.weights.beta, 2.0);
        assert!(RunConfig::from_toml_str("[loop]\nbogus = 1\n").is_err());
        assert!(RunConfig::from_toml_str("[nonsense]\n").is_err());
        assert!(RunConfig::from_toml_str("[loop]\nlearning_rate = -1.0\n").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let c = RunConfig::default().with_tiny_model();
        assert_eq!(RunConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
        assert_eq!(c.model.hidden_ligand, 32);
        let t = RunConfig::from_toml_str("seed = 9\ntiny = true\n[model]\nhidden_ligand = 300\n").unwrap();
        assert_eq!((t.seed, t.model.hidden_ligand), (9, 32));
    }
}
