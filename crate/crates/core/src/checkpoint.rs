//! Model checkpoints: one JSON document holding the model spec, target
//! normalization and every parameter as `{shape, data}`.
//!
//! Parameters are keyed by their stable names (see [`crate::backbone`] and
//! [`crate::variants`]) and written in sorted order, so identical models give
//! identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamStore, SerializedTensor};
use crate::variants::{Model, ModelSpec, TargetNorm};

pub const FORMAT_VERSION: u32 = 1;

/// Where a checkpoint came from in training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingState {
    /// 1-based epoch whose parameters were saved.
    pub epoch: usize,
    pub val_id_mae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub spec: ModelSpec,
    pub norm: TargetNorm,
    #[serde(default)]
    pub training: Option<TrainingState>,
    pub params: BTreeMap<String, SerializedTensor>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, training: Option<TrainingState>) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            spec: model.spec().clone(),
            norm: model.norm(),
            training,
            params: model.params().to_serialized(),
        }
    }

    pub fn into_model(self) -> Result<Model> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint format_version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let params = ParamStore::from_serialized(self.params)?;
        Model::from_parts(self.spec, params, self.norm)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    Checkpoint::from_model(model, None).save(path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    Checkpoint::load(path)?.into_model()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneConfig;
    use crate::variants::VariantKind;

    fn tiny() -> BackboneConfig {
        BackboneConfig {
            hidden_dim: 8,
            num_interactions: 1,
            rbf_count: 6,
            ..BackboneConfig::default()
        }
    }

    #[test]
    fn round_trip_is_exact() {
        for v in VariantKind::ALL {
            let mut model = Model::new(ModelSpec::new(v, tiny()), 3).unwrap();
            model.set_norm(TargetNorm { mean: -1.25, std: 0.3 });
            let ck = Checkpoint::from_model(
                &model,
                Some(TrainingState {
                    epoch: 2,
                    val_id_mae: Some(0.1),
                }),
            );
            let text = ck.to_json().unwrap();
            let back = Checkpoint::from_json(&text).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.to_json().unwrap(), text);
            let m2 = back.into_model().unwrap();
            assert_eq!(m2.params(), model.params());
            assert!(text.contains("\"format_version\":1"));
            assert!(text.contains(&format!("\"variant\":\"{}\"", v.as_str())));
        }
    }

    #[test]
    fn rejects_bad_version_and_shapes() {
        let model = Model::new(ModelSpec::new(VariantKind::Connected, tiny()), 0).unwrap();
        let mut ck = Checkpoint::from_model(&model, None);
        ck.format_version = 99;
        assert!(ck.clone().into_model().is_err());
        ck.format_version = FORMAT_VERSION;
        ck.params.get_mut("backbone.embed.atom").unwrap().shape = vec![50, 16];
        assert!(ck.into_model().is_err());
    }
}
