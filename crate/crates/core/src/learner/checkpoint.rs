//! Versioned JSON checkpoints.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::nn::{Dense, Mlp};
use super::policy::{PolicyMode, PolicyParams};
use super::TrainConfig;
use crate::control::ObservationScales;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: &str = "eco-mrtl-checkpoint v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct LayerRecord {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    /// Training iterations completed (pretraining excluded).
    pub iteration: usize,
    pub mode: PolicyMode,
    pub action_bound: f64,
    pub log_std: f64,
    pub scales: ObservationScales,
    pub train_config: TrainConfig,
    pub corpus_hash: String,
    actor: Vec<LayerRecord>,
    critic: Vec<LayerRecord>,
}

fn to_records<S: Scalar>(m: &Mlp<S>) -> Vec<LayerRecord> {
    m.layers
        .iter()
        .map(|l| LayerRecord {
            rows: l.w.nrows(),
            cols: l.w.ncols(),
            weights: l.w.iter().map(|x| x.as_f64()).collect(),
            bias: l.b.iter().map(|x| x.as_f64()).collect(),
        })
        .collect()
}

fn from_records<S: Scalar>(recs: &[LayerRecord]) -> std::result::Result<Mlp<S>, String> {
    if recs.is_empty() {
        return Err("network has no layers".into());
    }
    let mut layers = Vec::with_capacity(recs.len());
    for (k, r) in recs.iter().enumerate() {
        if k > 0 && recs[k - 1].cols != r.rows {
            return Err(format!("layer {k} input width {} does not match previous output {}", r.rows, recs[k - 1].cols));
        }
        let w = Array2::from_shape_vec((r.rows, r.cols), r.weights.iter().map(|&x| S::lit(x)).collect())
            .map_err(|e| format!("layer {k}: {e}"))?;
        if r.bias.len() != r.cols {
            return Err(format!("layer {k}: bias length {} != {}", r.bias.len(), r.cols));
        }
        let b = Array1::from_iter(r.bias.iter().map(|&x| S::lit(x)));
        layers.push(Dense { w, b });
    }
    Ok(Mlp { layers })
}

impl Checkpoint {
    pub fn from_params<S: Scalar>(
        params: &PolicyParams<S>,
        iteration: usize,
        train_config: &TrainConfig,
        corpus_hash: &str,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            iteration,
            mode: params.mode,
            action_bound: params.action_bound.as_f64(),
            log_std: params.log_std.as_f64(),
            scales: params.scales,
            train_config: train_config.clone(),
            corpus_hash: corpus_hash.into(),
            actor: to_records(&params.actor),
            critic: to_records(&params.critic),
        }
    }

    pub fn params<S: Scalar>(&self) -> std::result::Result<PolicyParams<S>, String> {
        let actor = from_records(&self.actor)?;
        let critic = from_records(&self.critic)?;
        if actor.output_dim() != 1 || critic.output_dim() != 1 {
            return Err("actor and critic must have a scalar output".into());
        }
        if actor.input_dim() != crate::control::OBS_DIM || critic.input_dim() != crate::control::OBS_DIM {
            return Err("network input width does not match the observation size".into());
        }
        Ok(PolicyParams {
            actor,
            log_std: S::lit(self.log_std),
            critic,
            action_bound: S::lit(self.action_bound),
            mode: self.mode,
            scales: self.scales,
        })
    }

    /// Writes to a sibling temporary file and renames it into place, so an
    /// interrupted save never leaves a truncated checkpoint behind.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = std::path::PathBuf::from(tmp);
        {
            let mut f = fs::File::create(&tmp)?;
            serde_json::to_writer(&mut f, self)?;
            f.write_all(b"\n")?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let err = |msg: String| Error::Checkpoint { path: path.to_path_buf(), msg };
        let text = fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(err(format!("unsupported format `{}`", ck.format)));
        }
        ck.params::<f64>().map_err(err)?;
        Ok(ck)
    }
}

/// Loads parameters at precision `S`.
pub fn load_params<S: Scalar>(path: impl AsRef<Path>) -> Result<PolicyParams<S>> {
    let path = path.as_ref();
    Checkpoint::load(path)?.params().map_err(|msg| Error::Checkpoint { path: path.to_path_buf(), msg })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::OBS_DIM;
    use crate::learner::policy::stack;

    #[test]
    fn round_trip_is_bitwise() {
        let mut p: PolicyParams<f64> = PolicyParams::new(&[8, 8], 3.0, 0.3f64.ln(), PolicyMode::Mrtl, 2);
        p.actor.layers[2].w.mapv_inplace(|_| 0.123_456_789_012_345_6);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        Checkpoint::from_params(&p, 7, &TrainConfig::desk(), "abc").save(&path).unwrap();
        let q: PolicyParams<f64> = load_params(&path).unwrap();
        assert_eq!(p, q);
        let x = stack(&[[0.3; OBS_DIM], [-0.7; OBS_DIM]]);
        assert_eq!(p.forward_actor(x.view()), q.forward_actor(x.view()));
        assert_eq!(p.value(x.view()), q.value(x.view()));
        assert_eq!(Checkpoint::load(&path).unwrap().iteration, 7);
        assert!(!dir.path().join("ck.json.tmp").exists());
    }

    #[test]
    fn f32_round_trip() {
        let p: PolicyParams<f32> = PolicyParams::new(&[8], 3.0, 0.3f64.ln(), PolicyMode::Multitask, 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        Checkpoint::from_params(&p, 0, &TrainConfig::desk(), "").save(&path).unwrap();
        assert_eq!(load_params::<f32>(&path).unwrap(), p);
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        fs::write(&path, "{\"format\": \"something else\"}").unwrap();
        assert!(Checkpoint::load(&path).is_err());
        fs::write(&path, "not json").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint { .. })));
    }
}
