use std::net::SocketAddr;
use std::path::PathBuf;

use ablab_core::traits::ProviderConfig;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    /// Persist state, events and batches here; in-memory only when `None`.
    pub data_dir: Option<PathBuf>,
    pub researcher_token: String,
    /// HMAC key for participant tokens; derived from the researcher token
    /// when empty.
    pub token_secret: Vec<u8>,
    pub default_seed: u64,
    /// Prefix of generated join links.
    pub base_url: String,
    pub traits: ProviderConfig,
    /// Batches with `runs * steps` above this run as polled jobs.
    pub sync_limit: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            data_dir: None,
            researcher_token: "researcher".into(),
            token_secret: Vec::new(),
            default_seed: 0,
            base_url: "http://127.0.0.1:8080".into(),
            traits: ProviderConfig::default(),
            sync_limit: 100_000,
        }
    }
}

impl ServiceConfig {
    pub fn secret(&self) -> Vec<u8> {
        if self.token_secret.is_empty() {
            use sha2::Digest;
            sha2::Sha256::digest(format!("participant-tokens:{}", self.researcher_token).as_bytes())
                .to_vec()
        } else {
            self.token_secret.clone()
        }
    }
}
