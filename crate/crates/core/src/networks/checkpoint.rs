//! Binary checkpoint container: `RVXC`, a little-endian u32 version, a u32
//! header length, a JSON header, then every tensor as little-endian f32 in
//! header order.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rawvox_nn::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use super::{NetworkConfig, NetworkError, StageNetwork};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"RVXC";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Teacher,
    StudentEncoder,
    Sdn,
    Sin,
    F0,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Teacher, Stage::StudentEncoder, Stage::Sdn, Stage::Sin, Stage::F0];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Teacher => "teacher",
            Stage::StudentEncoder => "student_encoder",
            Stage::Sdn => "sdn",
            Stage::Sin => "sin",
            Stage::F0 => "f0",
        }
    }

    /// Default checkpoint file name inside a checkpoint directory.
    pub fn file_name(self) -> String {
        format!("{}.rvxc", self.as_str())
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s.replace('-', "_"))
            .ok_or_else(|| format!("unknown stage '{s}' (expected teacher, student_encoder, sdn, sin or f0)"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    stage: Stage,
    config: NetworkConfig,
    n_singers: usize,
    tensors: Vec<TensorHeader>,
}

/// Weights and buffers of one trained network together with its config.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    header: Header,
    data: Vec<Vec<f32>>,
}

impl ModelCheckpoint {
    pub fn from_network<N: StageNetwork<f32>>(net: &N) -> Self {
        let entries = net.store().entries();
        let tensors = entries
            .iter()
            .map(|e| TensorHeader { name: e.name.clone(), shape: e.value.shape().to_vec(), trainable: e.trainable })
            .collect();
        let data = entries.iter().map(|e| e.value.data().to_vec()).collect();
        Self { header: Header { stage: N::STAGE, config: net.config().clone(), n_singers: net.n_singers(), tensors }, data }
    }

    pub fn stage(&self) -> Stage {
        self.header.stage
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.header.config
    }

    pub fn n_singers(&self) -> usize {
        self.header.n_singers
    }

    /// Rebuilds the network and copies every stored tensor into it.
    pub fn into_network<N: StageNetwork<f32>>(self) -> Result<N, NetworkError> {
        if self.header.stage != N::STAGE {
            return Err(NetworkError::WrongStage { found: self.header.stage, expected: N::STAGE });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = N::build(&self.header.config, self.header.n_singers, &mut rng)?;
        let store: &mut ParamStore<f32> = net.store_mut();
        if store.len() != self.header.tensors.len() {
            return Err(NetworkError::Checkpoint(format!(
                "expected {} tensors, found {}",
                store.len(),
                self.header.tensors.len()
            )));
        }
        for (th, values) in self.header.tensors.iter().zip(self.data) {
            let id = store.find(&th.name).ok_or_else(|| NetworkError::Checkpoint(format!("unexpected tensor '{}'", th.name)))?;
            let target = store.get_mut(id);
            if target.shape() != th.shape.as_slice() {
                return Err(NetworkError::Checkpoint(format!(
                    "tensor '{}' has shape {:?}, expected {:?}",
                    th.name,
                    th.shape,
                    target.shape()
                )));
            }
            *target = Tensor::from_vec(&th.shape, values);
        }
        Ok(net)
    }

    /// Like [`ModelCheckpoint::into_network`] but also refuses a checkpoint
    /// trained with a different config.
    pub fn into_network_checked<N: StageNetwork<f32>>(self, expected: &NetworkConfig) -> Result<N, NetworkError> {
        if &self.header.config != expected {
            return Err(NetworkError::ConfigMismatch(config_diff(&self.header.config, expected)));
        }
        self.into_network()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + header.len() + 4 * self.data.iter().map(Vec::len).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.data {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NetworkError> {
        let bad = |m: &str| NetworkError::Checkpoint(m.to_string());
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("missing RVXC magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(NetworkError::Version { found: version, expected: CHECKPOINT_VERSION });
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = &bytes[12..];
        if body.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| NetworkError::Checkpoint(e.to_string()))?;
        let mut rest = &body[hlen..];
        let mut data = Vec::with_capacity(header.tensors.len());
        for t in &header.tensors {
            let n: usize = t.shape.iter().product();
            if rest.len() < 4 * n {
                return Err(bad("truncated tensor data"));
            }
            data.push(rest[..4 * n].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect());
            rest = &rest[4 * n..];
        }
        if !rest.is_empty() {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Self { header, data })
    }

    /// Writes to a sibling temp file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<(), NetworkError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("rvxc.tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NetworkError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn config_diff(found: &NetworkConfig, expected: &NetworkConfig) -> String {
    let a = serde_json::to_value(found).expect("config serializes");
    let b = serde_json::to_value(expected).expect("config serializes");
    match (a, b) {
        (serde_json::Value::Object(a), serde_json::Value::Object(b)) => a
            .iter()
            .filter(|(k, v)| b.get(*k) != Some(v))
            .map(|(k, v)| format!("{k}: checkpoint {v}, requested {}", b.get(k).cloned().unwrap_or_default()))
            .collect::<Vec<_>>()
            .join("; "),
        _ => "configs differ".into(),
    }
}
