//! Inpainting backends and the contract every backend response must meet.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::latent::{IdentityCodec, LatentCodec};
use super::repaint::{concept_inpaint_local, OracleDenoiser, RolloutParams};
use super::schedule::NoiseSchedule;
use super::ConceptHandle;
use crate::error::{Error, Result};
use crate::scene::{ImageBuffer, MaskMap};

/// Largest per-channel change a backend may make where the fused mask is 0.
pub const UNMASKED_TOLERANCE: f64 = 2.0 / 255.0;

#[derive(Debug, Clone, Copy)]
pub struct InpaintRequest<'a> {
    /// Index of the view in the dataset.
    pub view: usize,
    pub image: &'a ImageBuffer,
    pub mask: &'a MaskMap,
    pub concept: &'a ConceptHandle,
    pub strength: f64,
    pub steps: usize,
    pub seed: u64,
}

/// Learns a scene concept and inpaints images conditioned on it.
pub trait InpaintBackend: Send + Sync {
    fn name(&self) -> &str;
    fn learn_concept(&self, images: &[ImageBuffer], masks: &[MaskMap]) -> Result<ConceptHandle>;
    fn inpaint(&self, request: &InpaintRequest<'_>) -> Result<ImageBuffer>;
}

/// Checks a backend response and applies the local composite
/// `(1 - M′) image + M′ response`, so pixels with `M′ = 0` are returned
/// unchanged whatever the backend did.
pub fn enforce_contract(request: &InpaintRequest<'_>, response: &ImageBuffer) -> Result<ImageBuffer> {
    let image = request.image;
    if response.dims() != image.dims() {
        return Err(Error::ContractViolation(format!(
            "response is {:?}, request was {:?}",
            response.dims(),
            image.dims()
        )));
    }
    let mut worst = 0.0f64;
    for (p, &m) in request.mask.data.iter().enumerate() {
        if m == 0.0 {
            for c in 0..3 {
                worst = worst.max((response.data[p * 3 + c] - image.data[p * 3 + c]).abs());
            }
        }
    }
    if worst > UNMASKED_TOLERANCE + 1e-12 {
        return Err(Error::ContractViolation(format!(
            "unmasked pixels drifted by {:.4} (limit {:.4})",
            worst, UNMASKED_TOLERANCE
        )));
    }
    let mut out = image.clone();
    for (p, &m) in request.mask.data.iter().enumerate() {
        for c in 0..3 {
            let k = p * 3 + c;
            out.data[k] = ((1.0 - m) * image.data[k] + m * response.data[k]).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Runs the backend and enforces the response contract.
pub fn inpaint_checked(backend: &dyn InpaintBackend, request: &InpaintRequest<'_>) -> Result<ImageBuffer> {
    if request.mask.dims() != request.image.dims() {
        return Err(Error::dims("fused mask", request.image.dims(), request.mask.dims()));
    }
    let response = backend.inpaint(request)?;
    enforce_contract(request, &response)
}

fn check_learn_inputs(images: &[ImageBuffer], masks: &[MaskMap]) -> Result<()> {
    if images.is_empty() {
        return Err(Error::TooFewViews { found: 0, needed: 1 });
    }
    if images.len() != masks.len() {
        return Err(Error::CountMismatch {
            expected: images.len(),
            found: masks.len(),
        });
    }
    for (i, m) in images.iter().zip(masks) {
        if i.dims() != m.dims() {
            return Err(Error::dims("fused mask", i.dims(), m.dims()));
        }
    }
    Ok(())
}

/// Returns every input unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoBackend;

impl InpaintBackend for EchoBackend {
    fn name(&self) -> &str {
        "echo"
    }

    fn learn_concept(&self, images: &[ImageBuffer], masks: &[MaskMap]) -> Result<ConceptHandle> {
        check_learn_inputs(images, masks)?;
        ConceptHandle::new("echo")
    }

    fn inpaint(&self, request: &InpaintRequest<'_>) -> Result<ImageBuffer> {
        Ok(request.image.clone())
    }
}

/// Runs the real masked reverse schedule with a denoiser that knows each
/// view's clean image.
pub struct OracleBackend {
    clean: Vec<ImageBuffer>,
    schedule: NoiseSchedule,
    codec: Box<dyn LatentCodec>,
}

impl OracleBackend {
    pub fn new(clean: Vec<ImageBuffer>) -> Self {
        Self::with_codec(clean, NoiseSchedule::default(), Box::new(IdentityCodec))
    }

    pub fn with_codec(clean: Vec<ImageBuffer>, schedule: NoiseSchedule, codec: Box<dyn LatentCodec>) -> Self {
        OracleBackend { clean, schedule, codec }
    }
}

impl InpaintBackend for OracleBackend {
    fn name(&self) -> &str {
        "oracle"
    }

    fn learn_concept(&self, images: &[ImageBuffer], masks: &[MaskMap]) -> Result<ConceptHandle> {
        check_learn_inputs(images, masks)?;
        ConceptHandle::new("oracle")
    }

    fn inpaint(&self, request: &InpaintRequest<'_>) -> Result<ImageBuffer> {
        let clean = self.clean.get(request.view).ok_or(Error::CountMismatch {
            expected: self.clean.len(),
            found: request.view + 1,
        })?;
        if clean.dims() != request.image.dims() {
            return Err(Error::dims("clean reference", request.image.dims(), clean.dims()));
        }
        let denoiser = OracleDenoiser {
            clean: self.codec.encode(clean),
            schedule: self.schedule.clone(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(request.seed);
        concept_inpaint_local(
            request.image,
            request.mask,
            &denoiser,
            request.concept,
            self.codec.as_ref(),
            RolloutParams {
                strength: request.strength,
                steps: request.steps,
            },
            &self.schedule,
            &mut rng,
        )
    }
}
