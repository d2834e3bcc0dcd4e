use std::collections::HashMap;
use std::path::Path;

use serde_json::json;

use super::{CnslModel, ModelConfig};
use crate::error::{Error, Result};
use crate::graph::CrossNetwork;
use crate::neural::checkpoint::{self, Block};
use crate::neural::Module;

const KIND: &str = "cnsl-model";

impl CnslModel {
    fn blocks(&self) -> Vec<Block> {
        let mut out = Vec::new();
        self.visit("", &mut |name, shape, data| {
            out.push(Block {
                name: name.to_string(),
                shape: shape.to_vec(),
                data: data.to_vec(),
            })
        });
        out
    }

    /// Writes parameters plus an architecture header. `extra` is stored
    /// verbatim under `"extra"` (training statistics, configs).
    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<()> {
        let header = json!({
            "kind": KIND,
            "config": self.config,
            "n_source": self.n_source,
            "n_target": self.n_target,
            "feature_dim": self.feature_dim(),
            "num_bridges": self.bridges.len(),
            "extra": extra,
        });
        checkpoint::save(path, &header, &self.blocks())
    }

    /// Restores a model for `cross`; the header must describe the same
    /// network sizes and feature width.
    pub fn load(path: &Path, cross: &CrossNetwork) -> Result<(Self, serde_json::Value)> {
        let (header, blocks) = checkpoint::load(path)?;
        if header.get("kind").and_then(|k| k.as_str()) != Some(KIND) {
            return Err(Error::Checkpoint(format!("{} is not a model checkpoint", path.display())));
        }
        let config: ModelConfig = serde_json::from_value(header["config"].clone())?;
        let mut model = CnslModel::new(cross, config, 0)?;
        let want = [
            ("n_source", model.n_source),
            ("n_target", model.n_target),
            ("feature_dim", model.feature_dim()),
            ("num_bridges", model.bridges.len()),
        ];
        for (key, expected) in want {
            let got = header.get(key).and_then(|v| v.as_u64());
            if got != Some(expected as u64) {
                return Err(Error::Checkpoint(format!(
                    "architecture mismatch: checkpoint {key} = {}, cross-network has {expected}",
                    got.map_or("missing".to_string(), |g| g.to_string())
                )));
            }
        }
        let mut by_name: HashMap<String, Block> = blocks.into_iter().map(|b| (b.name.clone(), b)).collect();
        let mut err = None;
        model.visit_mut("", &mut |name, shape, data| {
            if err.is_some() {
                return;
            }
            match by_name.remove(name) {
                Some(b) if b.shape == shape => data.copy_from_slice(&b.data),
                Some(b) => err = Some(format!("parameter {name} has shape {:?}, expected {shape:?}", b.shape)),
                None => err = Some(format!("parameter {name} missing")),
            }
        });
        if let Some(e) = err {
            return Err(Error::Checkpoint(e));
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected parameter {extra}")));
        }
        Ok((model, header.get("extra").cloned().unwrap_or(serde_json::Value::Null)))
    }
}
