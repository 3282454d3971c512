//! Model checkpoints: one JSON document holding layer dimensions, flattened
//! parameters (row-major), the recurrent clip bound, the neighborhood size,
//! and the training seed. Serialization is field-order stable, so identical
//! networks produce byte-identical files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{IndRnnError, IndRnnLayer, IndRnnNetwork, OutputHead};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct LayerCheckpoint {
    pub units: usize,
    pub input_dim: usize,
    pub w: Vec<f64>,
    pub u: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct HeadCheckpoint {
    pub v: Vec<f64>,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Checkpoint {
    pub clip_gamma: f64,
    pub neighborhood_k: usize,
    pub seed: u64,
    pub layers: Vec<LayerCheckpoint>,
    pub head: HeadCheckpoint,
}

impl Checkpoint {
    pub fn from_network(
        net: &IndRnnNetwork,
        clip_gamma: f64,
        neighborhood_k: usize,
        seed: u64,
    ) -> Self {
        Self {
            clip_gamma,
            neighborhood_k,
            seed,
            layers: net
                .layers()
                .iter()
                .map(|l| LayerCheckpoint {
                    units: l.units(),
                    input_dim: l.input_dim(),
                    w: l.w().to_vec(),
                    u: l.u().to_vec(),
                    b: l.b().to_vec(),
                })
                .collect(),
            head: HeadCheckpoint {
                v: net.head().v().to_vec(),
                c: net.head().c(),
            },
        }
    }

    /// Rebuild the network, re-validating every dimension claim in the file.
    pub fn to_network(&self) -> Result<IndRnnNetwork, IndRnnError> {
        if !(self.clip_gamma > 0.0) {
            return Err(IndRnnError::MalformedCheckpoint(format!(
                "clip gamma must be > 0, got {}",
                self.clip_gamma
            )));
        }
        if self.neighborhood_k % 2 == 0 || self.neighborhood_k == 0 {
            return Err(IndRnnError::MalformedCheckpoint(format!(
                "neighborhood size must be odd and >= 1, got {}",
                self.neighborhood_k
            )));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, lc) in self.layers.iter().enumerate() {
            if lc.u.len() != lc.units {
                return Err(IndRnnError::MalformedCheckpoint(format!(
                    "layer {i} declares {} units but stores {} recurrent weights",
                    lc.units,
                    lc.u.len()
                )));
            }
            let layer = IndRnnLayer::new(lc.input_dim, lc.w.clone(), lc.u.clone(), lc.b.clone())
                .map_err(|e| IndRnnError::MalformedCheckpoint(format!("layer {i}: {e}")))?;
            layers.push(layer);
        }
        let head = OutputHead::new(self.head.v.clone(), self.head.c)
            .map_err(|e| IndRnnError::MalformedCheckpoint(format!("head: {e}")))?;
        IndRnnNetwork::from_parts(layers, head)
            .map_err(|e| IndRnnError::MalformedCheckpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), IndRnnError> {
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IndRnnError> {
        let bytes = fs::read(path)?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn sample() -> (IndRnnNetwork, Checkpoint) {
        let net = IndRnnNetwork::init(9, &[5, 4], 2.0, 32, 99).unwrap();
        let ckpt = Checkpoint::from_network(&net, 2.0, 3, 99);
        (net, ckpt)
    }

    #[test]
    fn network_round_trips_bit_exactly() {
        let (net, ckpt) = sample();
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.json");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, ckpt);
        let rebuilt = loaded.to_network().unwrap();
        assert_eq!(rebuilt.params_flat(), net.params_flat());
        assert_eq!(loaded.neighborhood_k, 3);
        assert_eq!(loaded.seed, 99);
    }

    #[test]
    fn identical_checkpoints_serialize_to_identical_bytes() {
        let (_, ckpt) = sample();
        let dir = tempdir().unwrap();
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        ckpt.save(&a).unwrap();
        ckpt.save(&b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn kebab_case_field_names_on_disk() {
        let (_, ckpt) = sample();
        let json = serde_json::to_value(&ckpt).unwrap();
        assert!(json.get("clip-gamma").is_some());
        assert!(json.get("neighborhood-k").is_some());
        assert!(json["layers"][0].get("input-dim").is_some());
    }

    #[test]
    fn malformed_checkpoints_are_rejected() {
        let (_, good) = sample();

        let mut wrong_units = good.clone();
        wrong_units.layers[0].units += 1;
        assert!(matches!(
            wrong_units.to_network(),
            Err(IndRnnError::MalformedCheckpoint(_))
        ));

        let mut short_w = good.clone();
        short_w.layers[0].w.pop();
        assert!(short_w.to_network().is_err());

        let mut even_k = good.clone();
        even_k.neighborhood_k = 4;
        assert!(even_k.to_network().is_err());

        let mut broken_chain = good.clone();
        broken_chain.layers[1].input_dim += 1;
        let extra = broken_chain.layers[1].units;
        broken_chain.layers[1].w.extend(vec![0.0; extra]);
        assert!(broken_chain.to_network().is_err());

        let mut bad_head = good;
        bad_head.head.v.pop();
        assert!(bad_head.to_network().is_err());
    }

    #[test]
    fn unknown_fields_rejected() {
        let (_, ckpt) = sample();
        let mut json = serde_json::to_value(&ckpt).unwrap();
        json.as_object_mut()
            .unwrap()
            .insert("extra".to_string(), serde_json::json!(1));
        assert!(serde_json::from_value::<Checkpoint>(json).is_err());
    }
}
