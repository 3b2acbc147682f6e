//! Masked reverse diffusion: regenerate masked latent regions while the
//! unmasked ones are re-noised from the original.

use rand::Rng;

use super::latent::{downsample_mask, Latent, LatentCodec, LatentMask};
use super::schedule::{forward_noise, NoiseSchedule};
use super::ConceptHandle;
use crate::error::{Error, Result};
use crate::scene::{ImageBuffer, MaskMap};

/// Noise predictor `ε(z_t, t, s)`.
pub trait Denoiser: Send + Sync {
    fn predict(&self, z: &Latent, t: usize, concept: &ConceptHandle) -> Result<Latent>;
}

/// Knows the clean latent and returns the exact noise that produced `z_t`.
#[derive(Debug, Clone)]
pub struct OracleDenoiser {
    pub clean: Latent,
    pub schedule: NoiseSchedule,
}

impl Denoiser for OracleDenoiser {
    fn predict(&self, z: &Latent, t: usize, _concept: &ConceptHandle) -> Result<Latent> {
        self.clean.check_same_shape(z)?;
        if t == 0 {
            return Ok(z.map(|_| 0.0));
        }
        let ab = self.schedule.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(z.zip_map(&self.clean, |zt, z0| (zt - a * z0) / b))
    }
}

fn blend(known: &Latent, generated: &Latent, mask: &LatentMask) -> Latent {
    let mut out = known.clone();
    let plane = known.height * known.width;
    for (k, v) in out.data.iter_mut().enumerate() {
        let m = mask.data[k % plane];
        *v = (1.0 - m) * known.data[k] + m * generated.data[k];
    }
    out
}

fn check_mask(z: &Latent, mask: &LatentMask) -> Result<()> {
    if (mask.height, mask.width) != (z.height, z.width) {
        return Err(Error::LatentShape {
            expected: z.shape(),
            found: (z.channels, mask.height, mask.width),
        });
    }
    Ok(())
}

/// One reverse step `t -> t-1`.
#[allow(clippy::too_many_arguments)]
pub fn repaint_step(
    z_t: &Latent,
    z0: &Latent,
    mask: &LatentMask,
    t: usize,
    denoiser: &dyn Denoiser,
    concept: &ConceptHandle,
    schedule: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<Latent> {
    if t == 0 {
        return Err(Error::TimestepOutOfRange {
            t,
            max: schedule.timesteps(),
        });
    }
    repaint_step_to(z_t, z0, mask, t, t - 1, denoiser, concept, schedule, rng)
}

/// Reverse step from `t` to any earlier `t_prev`, treating the pair as one
/// step with `α = ᾱ_t / ᾱ_prev`. With `t_prev = t - 1` this is the plain
/// single step.
#[allow(clippy::too_many_arguments)]
pub fn repaint_step_to(
    z_t: &Latent,
    z0: &Latent,
    mask: &LatentMask,
    t: usize,
    t_prev: usize,
    denoiser: &dyn Denoiser,
    concept: &ConceptHandle,
    schedule: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<Latent> {
    schedule.check(t)?;
    if t == 0 || t_prev >= t {
        return Err(Error::TimestepOutOfRange {
            t,
            max: schedule.timesteps(),
        });
    }
    z_t.check_same_shape(z0)?;
    check_mask(z_t, mask)?;

    let ab_t = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t_prev);
    let alpha = ab_t / ab_prev;
    let beta = 1.0 - alpha;
    let eps_hat = denoiser.predict(z_t, t, concept)?;
    z_t.check_same_shape(&eps_hat)?;
    let k = beta / (1.0 - ab_t).sqrt();
    let inv = 1.0 / alpha.sqrt();
    let mut generated = z_t.zip_map(&eps_hat, |z, e| inv * (z - k * e));

    let (c, h, w) = z_t.shape();
    if t_prev == 0 {
        return Ok(blend(z0, &generated, mask));
    }
    let sigma = if schedule.stochastic { beta.sqrt() } else { 0.0 };
    if sigma > 0.0 {
        let xi = Latent::gaussian(c, h, w, rng);
        generated = generated.zip_map(&xi, |g, x| g + sigma * x);
    }
    let eps = Latent::gaussian(c, h, w, rng);
    let known = forward_noise(z0, t_prev, schedule, &eps)?;
    Ok(blend(&known, &generated, mask))
}

/// `steps` timesteps evenly spaced from `start` down to 1.
pub fn timestep_plan(start: usize, steps: usize) -> Vec<usize> {
    let steps = steps.clamp(1, start.max(1));
    if steps == 1 {
        return vec![start];
    }
    let mut plan: Vec<usize> = (0..steps)
        .map(|i| {
            let f = start as f64 - i as f64 * (start - 1) as f64 / (steps - 1) as f64;
            f.round() as usize
        })
        .collect();
    plan.dedup();
    plan
}

/// Parameters of one local inpainting rollout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutParams {
    pub strength: f64,
    pub steps: usize,
}

/// Encodes `image`, noises it to `round(strength·T)`, runs the masked
/// reverse schedule over `steps` timesteps, decodes, and composites with
/// `(1 - M′) image + M′ decoded` so unmasked pixels are kept exactly.
#[allow(clippy::too_many_arguments)]
pub fn concept_inpaint_local(
    image: &ImageBuffer,
    mask: &MaskMap,
    denoiser: &dyn Denoiser,
    concept: &ConceptHandle,
    codec: &dyn LatentCodec,
    params: RolloutParams,
    schedule: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<ImageBuffer> {
    if !(params.strength > 0.0 && params.strength <= 1.0) {
        return Err(Error::InvalidConfig(format!("strength must be in (0, 1], got {}", params.strength)));
    }
    if params.steps == 0 {
        return Err(Error::InvalidConfig("steps must be at least 1".into()));
    }
    if mask.dims() != image.dims() {
        return Err(Error::dims("fused mask", image.dims(), mask.dims()));
    }
    if mask.is_all_zero() {
        return Ok(image.clone());
    }
    let (w, h) = image.dims();
    let z0 = codec.encode(image);
    let expected = codec.latent_shape(w, h);
    if z0.shape() != expected {
        return Err(Error::LatentShape {
            expected,
            found: z0.shape(),
        });
    }
    let m = downsample_mask(mask, z0.height, z0.width);
    let t_start = ((params.strength * schedule.timesteps() as f64).round() as usize).clamp(1, schedule.timesteps());
    let plan = timestep_plan(t_start, params.steps);

    let eps = Latent::gaussian(z0.channels, z0.height, z0.width, rng);
    let mut z = forward_noise(&z0, t_start, schedule, &eps)?;
    for (i, &t) in plan.iter().enumerate() {
        let t_prev = plan.get(i + 1).copied().unwrap_or(0);
        z = repaint_step_to(&z, &z0, &m, t, t_prev, denoiser, concept, schedule, rng)?;
    }
    let decoded = codec.decode(&z, w, h)?;
    let mut out = image.clone();
    for p in 0..w * h {
        let mv = mask.data[p];
        for c in 0..3 {
            let k = p * 3 + c;
            out.data[k] = ((1.0 - mv) * image.data[k] + mv * decoded.data[k]).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}
