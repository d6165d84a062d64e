//! Role configuration files. One JSON file per role; every role carries the
//! same session block (preset + parameter hash + session id + party count +
//! server address) so misconfigured parties fail fast instead of producing
//! garbage ciphertexts.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context as _, Result};
use serde::{Deserialize, Serialize};
use vertinfer_core::protocol::session::SessionConfig;
use vertinfer_core::ring::{Context, CryptoParams};

fn default_timeout() -> u64 {
    30
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionBlock {
    pub preset: String,
    /// Hex digest of the parameter set; all parties must agree before any
    /// share leaves the machine.
    pub params_hash: String,
    /// 32 hex characters.
    pub session_id: String,
    pub parties: usize,
    pub server_addr: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

impl SessionBlock {
    /// Resolves the preset, checks the pinned hash, and builds the session
    /// config every role hands to the protocol layer.
    pub fn resolve(&self) -> Result<(Context, SessionConfig)> {
        let params = CryptoParams::preset(&self.preset)?;
        let ctx = Context::new(params.clone())?;
        let pinned = hex::decode(&self.params_hash)
            .with_context(|| format!("paramsHash {:?} is not hex", self.params_hash))?;
        if pinned != ctx.params_hash() {
            bail!(
                "paramsHash in config does not match preset {:?}: expected {}",
                self.preset,
                hex::encode(ctx.params_hash())
            );
        }
        let id_bytes = hex::decode(&self.session_id)
            .with_context(|| format!("sessionId {:?} is not hex", self.session_id))?;
        let session_id: [u8; 16] = id_bytes
            .as_slice()
            .try_into()
            .map_err(|_| anyhow::anyhow!("sessionId must be 16 bytes (32 hex chars)"))?;
        if self.parties == 0 {
            bail!("parties must be at least 1");
        }
        let mut cfg = SessionConfig::new(params, self.parties, session_id);
        cfg.timeout = Duration::from_secs(self.timeout_secs);
        Ok((ctx, cfg))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClientConfig {
    pub session: SessionBlock,
    pub party_id: u16,
    /// Weight-free model structure (shapes only).
    pub structure: PathBuf,
    pub partition: PathBuf,
    /// This party's column slice, as produced by `split`.
    pub data: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ServerConfig {
    pub session: SessionBlock,
    /// Full model with weights; never shared with the other roles.
    pub model: PathBuf,
    #[serde(default)]
    pub weight_form: WeightFormName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript_out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum WeightFormName {
    #[default]
    Plain,
    Encrypted,
}

impl From<WeightFormName> for vertinfer_core::einfer::compile::WeightForm {
    fn from(w: WeightFormName) -> Self {
        match w {
            WeightFormName::Plain => Self::Plain,
            WeightFormName::Encrypted => Self::Encrypted,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CoordinatorConfig {
    pub session: SessionBlock,
    pub structure: PathBuf,
    /// Record positions to query, in table order.
    pub records: Vec<u64>,
}

/// One-process mode: all roles in a single invocation over in-process links.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimulateConfig {
    pub session: SessionBlock,
    pub model: PathBuf,
    pub partition: PathBuf,
    /// Full (unsplit) table.
    pub data: PathBuf,
    pub records: Vec<u64>,
    #[serde(default)]
    pub weight_form: WeightFormName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript_out: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

pub fn load<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

pub fn save<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}
