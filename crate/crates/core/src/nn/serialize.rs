//! Versioned JSON envelope for weights and fitted models.
//!
//! Floats are written in shortest round-trip form and parsed with the
//! round-trip parser, so values survive a save/load cycle bit-exactly.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versioned<T> {
    pub format: String,
    pub version: u32,
    pub payload: T,
}

impl<T: Serialize + DeserializeOwned> Versioned<T> {
    pub fn new(format: &str, payload: T) -> Self {
        Versioned {
            format: format.to_string(),
            version: FORMAT_VERSION,
            payload,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str, format: &str) -> Result<T> {
        let doc: Versioned<T> = serde_json::from_str(text)?;
        if doc.format != format {
            return Err(Error::invalid(format!(
                "expected a '{format}' document, found '{}'",
                doc.format
            )));
        }
        if doc.version != FORMAT_VERSION {
            return Err(Error::Unsupported(format!("document version {}", doc.version)));
        }
        Ok(doc.payload)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, format: &str) -> Result<T> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, format)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Init, Mlp, MlpSpec};

    #[test]
    fn mlp_round_trip_is_bit_exact() {
        let spec = MlpSpec {
            input_dim: 3,
            hidden: vec![7, 5],
            output_dim: 2,
            hidden_activation: Activation::Softplus { beta: 10.0 },
            dropout: 0.1,
        };
        let net = Mlp::from_spec(&spec, Init::FanIn, 42).unwrap();
        let text = Versioned::new("mlp", net.clone()).to_json().unwrap();
        let back: Mlp = Versioned::from_json(&text, "mlp").unwrap();
        let a: Vec<u64> = net.flat_params().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.flat_params().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_format_or_version_is_rejected() {
        let text = Versioned::new("a", 1.5f64).to_json().unwrap();
        assert!(Versioned::<f64>::from_json(&text, "b").is_err());
        let bumped = text.replace("\"version\": 1", "\"version\": 99");
        assert!(Versioned::<f64>::from_json(&bumped, "a").is_err());
    }
}
