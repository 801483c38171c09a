//! Bearer credentials: one static researcher token, and signed participant
//! tokens carrying `(experiment, group, participant)`.

use axum::http::HeaderMap;
use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use hmac::{Hmac, KeyInit, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use crate::error::ApiError;

type HmacSha256 = Hmac<Sha256>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipantClaims {
    #[serde(rename = "e")]
    pub experiment: String,
    #[serde(rename = "g")]
    pub group: String,
    #[serde(rename = "p")]
    pub participant: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Principal {
    Researcher,
    Participant(ParticipantClaims),
}

#[derive(Clone)]
pub struct TokenSigner {
    secret: Vec<u8>,
    researcher_token: String,
}

impl TokenSigner {
    pub fn new(secret: &[u8], researcher_token: &str) -> Self {
        Self {
            secret: secret.to_vec(),
            researcher_token: researcher_token.to_string(),
        }
    }

    fn mac(&self, payload: &str) -> HmacSha256 {
        let mut mac =
            HmacSha256::new_from_slice(&self.secret).expect("hmac accepts any key length");
        mac.update(payload.as_bytes());
        mac
    }

    pub fn issue(&self, claims: &ParticipantClaims) -> String {
        let payload = URL_SAFE_NO_PAD.encode(serde_json::to_vec(claims).expect("claims serialize"));
        let sig = hex::encode(self.mac(&payload).finalize().into_bytes());
        format!("{payload}.{sig}")
    }

    pub fn verify(&self, token: &str) -> Result<Principal, ApiError> {
        if constant_eq(token.as_bytes(), self.researcher_token.as_bytes()) {
            return Ok(Principal::Researcher);
        }
        let bad = || ApiError::unauthorized("invalid token");
        let (payload, sig) = token.split_once('.').ok_or_else(bad)?;
        let sig = hex::decode(sig).map_err(|_| bad())?;
        self.mac(payload).verify_slice(&sig).map_err(|_| bad())?;
        let bytes = URL_SAFE_NO_PAD.decode(payload).map_err(|_| bad())?;
        let claims: ParticipantClaims = serde_json::from_slice(&bytes).map_err(|_| bad())?;
        Ok(Principal::Participant(claims))
    }

    pub fn from_headers(&self, headers: &HeaderMap) -> Result<Principal, ApiError> {
        let value = headers
            .get(axum::http::header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .ok_or_else(|| ApiError::unauthorized("missing bearer token"))?;
        let token = value
            .strip_prefix("Bearer ")
            .ok_or_else(|| ApiError::unauthorized("expected a bearer token"))?;
        self.verify(token.trim())
    }
}

fn constant_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}
