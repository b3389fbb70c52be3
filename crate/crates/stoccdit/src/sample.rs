//! Euler sampling with classifier-free guidance and autoregressive rollout.

use nn_core::Tensor;
use occ_core::{BevLayout, GridSpec, SemanticOccupancyGrid};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dit::{DitInput, StOccDit, StreamInput};
use crate::error::{Result, StError};
use crate::vae::OccVae;

/// `v_uncond + w·(v_cond − v_uncond)`.
pub fn cfg_combine(cond: &Tensor, uncond: &Tensor, w: f64) -> Tensor {
    let mut out = uncond.clone();
    for (o, (&c, &u)) in out.data_mut().iter_mut().zip(cond.data().iter().zip(uncond.data())) {
        *o = u + w * (c - u);
    }
    out
}

/// Integrates from `τ = 1` (`z = eps`) to `τ = 0` in `steps` uniform Euler
/// steps, `z ← z − Δτ·v(z, τ)`.
pub fn euler_integrate(
    eps: Tensor,
    steps: usize,
    mut velocity: impl FnMut(&Tensor, f64) -> Result<Tensor>,
) -> Result<Tensor> {
    if steps == 0 {
        return Err(StError::Config("at least one Euler step".into()));
    }
    let dt = 1.0 / steps as f64;
    let mut z = eps;
    for k in 0..steps {
        let tau = 1.0 - k as f64 * dt;
        let v = velocity(&z, tau)?;
        z.add_scaled(&v, -dt);
    }
    Ok(z)
}

/// Inputs and guided velocity of the last Euler step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub z: Tensor,
    pub tau: f64,
    pub velocity: Tensor,
}

/// Guided velocity for the frame after `history`. `layouts` holds one layout
/// per history frame plus the target frame.
pub fn guided_velocity(
    model: &StOccDit,
    layouts: &[&BevLayout],
    history: &[Tensor],
    z: &Tensor,
    tau: f64,
    cfg_w: f64,
) -> Result<Tensor> {
    let h = history.len();
    if layouts.len() != h + 1 {
        return Err(StError::Shape(format!("{} layouts for {h} history frames", layouts.len())));
    }
    let run = |conditional: bool| -> Result<Tensor> {
        let mut streams: Vec<StreamInput> = history.iter().enumerate().map(|(f, l)| StreamInput::clean(f, l.clone())).collect();
        streams.push(StreamInput::noisy(h, z.clone(), tau));
        let layouts = layouts.iter().map(|&l| conditional.then_some(l)).collect();
        let (mut out, _) = model.forward(&DitInput { streams, layouts, temporal: true })?;
        Ok(out.pop().expect("one noisy stream"))
    };
    if cfg_w == 1.0 {
        run(true)
    } else if cfg_w == 0.0 {
        run(false)
    } else {
        Ok(cfg_combine(&run(true)?, &run(false)?, cfg_w))
    }
}

/// Samples the clean latent of the frame following `history`.
pub fn euler_sample(
    model: &StOccDit,
    layouts: &[&BevLayout],
    history: &[Tensor],
    steps: usize,
    cfg_w: f64,
    rng: &mut impl Rng,
) -> Result<(Tensor, StepTrace)> {
    if history.len() >= model.config.frames_per_clip {
        return Err(StError::Shape(format!(
            "{} history frames for a {}-frame model",
            history.len(),
            model.config.frames_per_clip
        )));
    }
    let shape = [model.config.tokens(), model.config.latent_channels];
    let n = shape[0] * shape[1];
    let eps = Tensor::from_vec(&shape, (0..n).map(|_| rng.sample(StandardNormal)).collect())?;
    let mut trace = None;
    let z = euler_integrate(eps, steps, |z, tau| {
        let v = guided_velocity(model, layouts, history, z, tau, cfg_w)?;
        trace = Some(StepTrace { z: z.clone(), tau, velocity: v.clone() });
        Ok(v)
    })?;
    Ok((z, trace.expect("steps ≥ 1")))
}

#[derive(Debug, Clone)]
pub struct Rollout {
    /// Generated latents in model (scaled) units.
    pub latents: Vec<Tensor>,
    pub grids: Vec<SemanticOccupancyGrid>,
    pub traces: Vec<StepTrace>,
}

/// Generates one frame per layout. Frame `t` is sampled with the previous
/// `min(t, T − 1)` generated latents as history; each latent is divided by
/// `latent_scale` and decoded with an argmax. Frame `t` draws its noise from
/// stream `rollout/t` of `seed`.
pub fn rollout(
    vae: &OccVae,
    latent_scale: f64,
    dit: &StOccDit,
    layouts: &[BevLayout],
    spec: GridSpec,
    steps: usize,
    cfg_w: f64,
    seed: u64,
) -> Result<Rollout> {
    let window = dit.config.frames_per_clip - 1;
    let mut latents: Vec<Tensor> = Vec::with_capacity(layouts.len());
    let mut grids = Vec::with_capacity(layouts.len());
    let mut traces = Vec::with_capacity(layouts.len());
    for t in 0..layouts.len() {
        let h = t.min(window);
        let history = &latents[t - h..t];
        let frame_layouts: Vec<&BevLayout> = layouts[t - h..=t].iter().collect();
        let mut rng = nn_core::rng::indexed(seed, "rollout", t as u64);
        let (z, trace) = euler_sample(dit, &frame_layouts, history, steps, cfg_w, &mut rng)?;
        grids.push(vae.decode_grid(&z.scale(1.0 / latent_scale), spec)?);
        latents.push(z);
        traces.push(trace);
    }
    Ok(Rollout { latents, grids, traces })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_velocity_recovers_target() {
        let mut rng = nn_core::rng::stream(0, "euler");
        let target = Tensor::randn(&[4, 3], 1.0, &mut rng);
        let eps = Tensor::randn(&[4, 3], 1.0, &mut rng);
        let v = eps.sub(&target);
        for steps in [1, 5, 30] {
            let z = euler_integrate(eps.clone(), steps, |_, _| Ok(v.clone())).unwrap();
            assert!(z.max_abs_diff(&target) <= 1e-9);
        }
        assert!(euler_integrate(eps, 0, |_, _| Ok(v.clone())).is_err());
    }

    #[test]
    fn cfg_identities() {
        let mut rng = nn_core::rng::stream(1, "cfg");
        let c = Tensor::randn(&[3, 2], 1.0, &mut rng);
        let u = Tensor::randn(&[3, 2], 1.0, &mut rng);
        assert!(cfg_combine(&c, &u, 1.0).max_abs_diff(&c) <= 1e-12);
        assert_eq!(cfg_combine(&c, &u, 0.0), u);
        for w in [-1.0, 0.5, 2.0, 7.5] {
            assert_eq!(cfg_combine(&c, &c, w), c);
        }
    }
}
