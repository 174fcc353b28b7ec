//! Either trained model kind, with checkpoint IO.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::diffusion::{DiffusionModel, SamplerConfig, ScheduleConfig};
use crate::error::{Error, Result};
use crate::eval::Predictor;
use crate::nn::{load_checkpoint, save_checkpoint, Params};
use crate::regression::RegressionModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Diffusion,
    Regression,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Diffusion => "diffusion",
            ModelKind::Regression => "regression",
        }
    }
}

#[derive(Debug, Clone)]
pub enum TrainedModel {
    Diffusion(DiffusionModel),
    Regression(RegressionModel),
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Diffusion(_) => ModelKind::Diffusion,
            TrainedModel::Regression(_) => ModelKind::Regression,
        }
    }

    pub fn params(&self) -> &Params {
        match self {
            TrainedModel::Diffusion(m) => &m.params,
            TrainedModel::Regression(m) => &m.params,
        }
    }

    pub fn dim(&self) -> usize {
        self.params().spec().output_dim
    }

    pub fn cond_dim(&self) -> usize {
        self.params().spec().cond_dim
    }

    /// Seeds come from `sampler` for diffusion; regression ignores it.
    pub fn predictor<'a>(&'a self, sampler: &'a SamplerConfig) -> Predictor<'a> {
        match self {
            TrainedModel::Diffusion(model) => Predictor::Diffusion { model, sampler },
            TrainedModel::Regression(m) => Predictor::Regression(m),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        match self {
            TrainedModel::Diffusion(m) => save_checkpoint(path, &m.params, "diffusion", json!({ "schedule": m.schedule })),
            TrainedModel::Regression(m) => save_checkpoint(
                path,
                &m.params,
                "regression",
                json!({ "noise_feature": m.noise_feature }),
            ),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = load_checkpoint(path)?;
        match ck.header.kind.as_str() {
            "diffusion" => {
                let schedule: ScheduleConfig = serde_json::from_value(
                    ck.header
                        .meta
                        .get("schedule")
                        .cloned()
                        .ok_or_else(|| Error::Format("diffusion checkpoint lacks a schedule".into()))?,
                )?;
                Ok(TrainedModel::Diffusion(DiffusionModel::new(ck.params, schedule)?))
            }
            "regression" => {
                let noise_feature = ck
                    .header
                    .meta
                    .get("noise_feature")
                    .and_then(|v| v.as_f64())
                    .ok_or_else(|| Error::Format("regression checkpoint lacks noise_feature".into()))?;
                Ok(TrainedModel::Regression(RegressionModel {
                    params: ck.params,
                    noise_feature: noise_feature as f32,
                }))
            }
            other => Err(Error::Format(format!("unknown checkpoint kind {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NetworkSpec;

    #[test]
    fn both_kinds_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = NetworkSpec::new(4, 3, 8, 2);
        let models = [
            TrainedModel::Diffusion(DiffusionModel::init(spec.clone(), ScheduleConfig::with_sigma_data(0.3), 1).unwrap()),
            TrainedModel::Regression(RegressionModel::init(spec, 0.3, 2).unwrap()),
        ];
        for m in models {
            let p = dir.path().join(format!("{}.ckpt", m.kind().as_str()));
            m.save(&p).unwrap();
            let back = TrainedModel::load(&p).unwrap();
            assert_eq!(back.kind(), m.kind());
            assert_eq!(back.params().as_slice(), m.params().as_slice());
            if let (TrainedModel::Diffusion(a), TrainedModel::Diffusion(b)) = (&back, &m) {
                assert_eq!(a.schedule, b.schedule);
            }
            if let (TrainedModel::Regression(a), TrainedModel::Regression(b)) = (&back, &m) {
                assert_eq!(a.noise_feature, b.noise_feature);
            }
        }
    }
}
