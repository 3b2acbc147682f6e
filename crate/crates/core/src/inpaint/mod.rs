//! Concept-conditioned masked diffusion inpainting.

pub mod backend;
pub mod latent;
#[cfg(feature = "remote")]
pub mod remote;
pub mod repaint;
pub mod schedule;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::ImageBuffer;

pub use backend::{enforce_contract, inpaint_checked, EchoBackend, InpaintBackend, InpaintRequest, OracleBackend};
pub use latent::{downsample_mask, IdentityCodec, Latent, LatentCodec, LatentMask, PoolCodec};
#[cfg(feature = "remote")]
pub use remote::{RemoteBackend, RemoteConfig};
pub use repaint::{concept_inpaint_local, repaint_step, repaint_step_to, Denoiser, OracleDenoiser, RolloutParams};
pub use schedule::{forward_noise, NoiseSchedule};

/// Opaque identifier of a learned scene concept.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConceptHandle(String);

impl ConceptHandle {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::InvalidConfig("concept id must be non-empty".into()));
        }
        Ok(ConceptHandle(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// Which inpainting backend to use, as written in config files and on the
/// command line: `mock`, `oracle`, or an `http(s)://` service URL.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BackendSpec {
    /// [`EchoBackend`]: inpainting is the identity.
    #[default]
    Mock,
    /// [`OracleBackend`] over ground-truth clean images.
    Oracle,
    Remote(String),
}

impl std::str::FromStr for BackendSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mock" => Ok(BackendSpec::Mock),
            "oracle" => Ok(BackendSpec::Oracle),
            url if url.starts_with("http://") || url.starts_with("https://") => Ok(BackendSpec::Remote(url.to_string())),
            other => Err(Error::InvalidConfig(format!("backend must be mock, oracle or an http(s) URL, got {other:?}"))),
        }
    }
}

impl TryFrom<String> for BackendSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<BackendSpec> for String {
    fn from(b: BackendSpec) -> String {
        match b {
            BackendSpec::Mock => "mock".into(),
            BackendSpec::Oracle => "oracle".into(),
            BackendSpec::Remote(url) => url,
        }
    }
}

impl BackendSpec {
    /// Builds the backend. The oracle needs one clean image per view.
    pub fn build(&self, clean: Option<Vec<ImageBuffer>>) -> Result<Box<dyn InpaintBackend>> {
        match self {
            BackendSpec::Mock => Ok(Box::new(EchoBackend)),
            BackendSpec::Oracle => {
                let clean = clean.ok_or_else(|| Error::InvalidConfig("the oracle backend needs clean reference images".into()))?;
                Ok(Box::new(OracleBackend::new(clean)))
            }
            #[cfg(feature = "remote")]
            BackendSpec::Remote(url) => Ok(Box::new(RemoteBackend::new(url))),
            #[cfg(not(feature = "remote"))]
            BackendSpec::Remote(_) => Err(Error::InvalidConfig("built without the remote backend".into())),
        }
    }
}
