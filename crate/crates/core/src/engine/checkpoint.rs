use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::net::{ModelKind, ModelParams, ModelShape};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "dockgame-checkpoint/v1";

/// Shape manifest plus named tensors of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDump {
    pub shape: ModelShape,
    pub tensors: BTreeMap<String, Tensor>,
}

impl ModelDump {
    pub fn of(p: &ModelParams) -> Self {
        Self {
            shape: *p.shape(),
            tensors: p.values().clone(),
        }
    }

    pub fn restore(&self, kind: ModelKind) -> Result<ModelParams> {
        if self.shape.kind != kind {
            return Err(Error::Shape(format!(
                "checkpoint slot holds a {} model, expected {}",
                self.shape.kind.name(),
                kind.name()
            )));
        }
        ModelParams::from_tensors(self.shape, self.tensors.clone())
    }
}

/// Parameters of all three models with the configuration that made them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub epoch: usize,
    pub step: usize,
    pub config: RunConfig,
    pub pocket: ModelDump,
    pub ligand: ModelDump,
    pub protein: ModelDump,
}

impl Checkpoint {
    pub fn new(
        config: &RunConfig,
        epoch: usize,
        step: usize,
        pocket: &ModelParams,
        ligand: &ModelParams,
        protein: &ModelParams,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            epoch,
            step,
            config: config.clone(),
            pocket: ModelDump::of(pocket),
            ligand: ModelDump::of(ligand),
            protein: ModelDump::of(protein),
        }
    }

    /// Writes to a sibling temporary file, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        let text = serde_json::to_string(self).expect("checkpoint serialises");
        std::fs::write(&tmp, text).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::InvalidInput(format!(
                "{}: unsupported checkpoint format {:?}",
                path.display(),
                ck.format
            )));
        }
        ck.config.validate()?;
        Ok(ck)
    }

    /// Restores the three models, validating every tensor against the
    /// shapes the stored configuration implies.
    pub fn models(&self) -> Result<(ModelParams, ModelParams, ModelParams)> {
        let (d_l, d_p) = (self.pocket.shape.d_l, self.pocket.shape.d_p);
        for (dump, kind) in [
            (&self.pocket, ModelKind::Pocket),
            (&self.ligand, ModelKind::Ligand),
            (&self.protein, ModelKind::Protein),
        ] {
            let want = self.config.model.shape(kind, d_l, d_p);
            if dump.shape != want {
                return Err(Error::Shape(format!(
                    "{} model shape {:?} does not match configuration {:?}",
                    kind.name(),
                    dump.shape,
                    want
                )));
            }
        }
        Ok((
            self.pocket.restore(ModelKind::Pocket)?,
            self.ligand.restore(ModelKind::Ligand)?,
            self.protein.restore(ModelKind::Protein)?,
        ))
    }
}
