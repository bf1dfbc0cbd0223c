use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Result, Tensor, TensorError};

/// Format tag written into every checkpoint file.
pub const CHECKPOINT_FORMAT: &str = "lsgt-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

/// Named-tensor container serialized as JSON. `f64` values survive the
/// text round trip exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    #[serde(default)]
    pub step: Option<usize>,
    #[serde(default)]
    pub meta: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(tensors: Vec<NamedTensor>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            step: None,
            meta: serde_json::Value::Null,
            tensors,
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| &t.tensor)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| TensorError::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(TensorError::Checkpoint(format!(
                "unsupported format {:?}, expected {CHECKPOINT_FORMAT:?}",
                ck.format
            )));
        }
        for t in &ck.tensors {
            // serde bypasses Tensor::new, so re-check the length here
            Tensor::new(t.tensor.rows(), t.tensor.cols(), t.tensor.data().to_vec())
                .map_err(|e| TensorError::Checkpoint(format!("{}: {e}", t.name)))?;
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)
            .map_err(|e| TensorError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| TensorError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_is_exact() {
        let t = Tensor::new(1, 3, vec![0.1, -1.0 / 3.0, 1e-300]).unwrap();
        let ck = Checkpoint::new(vec![NamedTensor {
            name: "w".into(),
            tensor: t.clone(),
        }]);
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back.get("w"), Some(&t));
    }

    #[test]
    fn rejects_bad_length_and_format() {
        let bad = r#"{"format":"lsgt-checkpoint/1","tensors":[{"name":"w","tensor":{"rows":2,"cols":2,"data":[1.0]}}]}"#;
        assert!(Checkpoint::from_json(bad).is_err());
        let other = r#"{"format":"x","tensors":[]}"#;
        assert!(Checkpoint::from_json(other).is_err());
    }
}
