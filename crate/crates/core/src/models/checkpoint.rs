use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, MlpSpec};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// `f64` arrays stored as 16-digit big-endian hex of the IEEE-754 bits so
/// that a save/load round trip is bit-exact.
pub(crate) mod hex_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn encode(v: f64) -> String {
        hex::encode(v.to_bits().to_be_bytes())
    }

    pub fn decode(s: &str) -> Result<f64, String> {
        let bytes = hex::decode(s).map_err(|e| format!("bad hex double {s:?}: {e}"))?;
        let arr: [u8; 8] = bytes
            .try_into()
            .map_err(|_| format!("hex double {s:?} is not 8 bytes"))?;
        Ok(f64::from_bits(u64::from_be_bytes(arr)))
    }

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| encode(*x)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw = Vec::<String>::deserialize(d)?;
        raw.iter()
            .map(|s| decode(s).map_err(serde::de::Error::custom))
            .collect()
    }
}

/// Optimiser state stored alongside the parameters so training can resume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Number of completed optimisation steps.
    pub step: usize,
    pub optimizer: String,
    #[serde(with = "hex_f64")]
    pub m: Vec<f64>,
    #[serde(with = "hex_f64")]
    pub v: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub spec: MlpSpec,
    pub seed: u64,
    #[serde(with = "hex_f64")]
    pub parameters: Vec<f64>,
    pub dim_x: usize,
    pub dim_y: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_state: Option<TrainState>,
}

impl Checkpoint {
    pub fn from_mlp(mlp: &Mlp) -> Self {
        use super::Network;
        Checkpoint {
            format_version: FORMAT_VERSION,
            spec: mlp.spec().clone(),
            seed: mlp.seed(),
            parameters: mlp.flat_parameters(),
            dim_x: mlp.dim_x(),
            dim_y: mlp.dim_y(),
            train_state: None,
        }
    }

    pub fn with_train_state(mut self, state: TrainState) -> Self {
        self.train_state = Some(state);
        self
    }

    pub fn to_mlp(&self) -> Result<Mlp> {
        Mlp::from_flat(
            self.spec.clone(),
            self.dim_x,
            self.dim_y,
            self.seed,
            &self.parameters,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        if ck.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                ck.format_version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Checkpoint::from_json(&text)
    }
}
