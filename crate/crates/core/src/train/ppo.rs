//! Clipped-surrogate PPO update with an entropy bonus. Gradients of the
//! surrogate and entropy with respect to the logits are hand-derived and
//! pushed through the network's backward pass; all agents share one
//! actor and one critic, so every sample contributes to the same pooled
//! gradient.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{entropy, masked_softmax, Adam, Gradients, Mlp, PopArt};
use crate::train::{Algorithm, TrainConfig, TrajectoryBuffer};

/// Mean losses over all minibatch updates of one `ppo_update` call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    /// Advantage statistics before normalization.
    pub adv_mean: f64,
    pub adv_std: f64,
}

/// Gradient of the per-sample actor loss with respect to the logits.
///
/// The loss is `(-min(ratio·A, clip(ratio)·A) - ent_coef·H) * inv_m`.
/// With p the masked softmax and `a` the taken action,
/// d ratio / d z_j = ratio·(1[j = a] - p_j); the clipped branch is
/// constant, so the surrogate only contributes when the unclipped branch
/// is the active minimum. dH/dz_j = -p_j (ln p_j + H).
pub fn surrogate_logit_gradient(
    probs: &[f64],
    action: usize,
    ratio: f64,
    advantage: f64,
    clip_eps: f64,
    ent_coef: f64,
    inv_m: f64,
) -> Vec<f64> {
    let active = (advantage >= 0.0 && ratio <= 1.0 + clip_eps)
        || (advantage < 0.0 && ratio >= 1.0 - clip_eps);
    let h = entropy(probs);
    probs
        .iter()
        .enumerate()
        .map(|(j, &pj)| {
            let onehot = if j == action { 1.0 } else { 0.0 };
            let surr = if active { -advantage * ratio * (onehot - pj) } else { 0.0 };
            let ent = if pj > 0.0 { ent_coef * pj * (pj.ln() + h) } else { 0.0 };
            (surr + ent) * inv_m
        })
        .collect()
}

/// One full PPO update on a collected batch: GAE, value-target
/// normalization, advantage standardization, then `ppo_epochs` passes of
/// minibatch gradient steps on the shared actor and critic.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update(
    actor: &mut Mlp,
    critic: &mut Mlp,
    actor_opt: &mut Adam,
    critic_opt: &mut Adam,
    popart: &mut PopArt,
    buf: &mut TrajectoryBuffer,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LossReport> {
    buf.compute_gae(cfg.gamma, cfg.gae_lambda)?;
    popart.update(critic, &buf.returns)?;
    let targets: Vec<f64> = buf.returns.iter().map(|r| popart.normalize(*r)).collect();
    let (adv_mean, adv_std) = buf.normalize_advantages();

    let m_total = buf.samples();
    if m_total == 0 {
        return Err(Error::config("empty batch"));
    }
    let chunk = m_total.div_ceil(cfg.minibatches.max(1));
    let mut indices: Vec<usize> = (0..m_total).collect();

    let mut actor_loss_sum = 0.0;
    let mut critic_loss_sum = 0.0;
    let mut entropy_sum = 0.0;
    let mut updates = 0u32;

    for _ in 0..cfg.ppo_epochs {
        indices.shuffle(rng);
        for mb in indices.chunks(chunk) {
            let inv_m = 1.0 / mb.len() as f64;
            let mut agrads = Gradients::zeros_like(actor);
            let mut cgrads = Gradients::zeros_like(critic);
            let mut al = 0.0;
            let mut cl = 0.0;
            let mut ent_acc = 0.0;

            for &s in mb {
                let t = s / buf.n_agents;
                let obs = buf.obs_at(s);
                let cache = actor.forward_cached(obs)?;
                let probs = masked_softmax(cache.output(), buf.mask_at(s))?;
                let a = buf.actions[s];
                if probs[a] <= 0.0 {
                    return Err(Error::sim("taken action has zero probability under the mask"));
                }
                let ratio = (probs[a].ln() - buf.log_probs[s]).exp();
                let adv = buf.advantages[s];
                let clipped = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
                let objective = (ratio * adv).min(clipped * adv);
                let h = entropy(&probs);
                al += (-objective - cfg.entropy_coef * h) * inv_m;
                ent_acc += h * inv_m;

                let dz = surrogate_logit_gradient(
                    &probs,
                    a,
                    ratio,
                    adv,
                    cfg.clip_eps,
                    cfg.entropy_coef,
                    inv_m,
                );
                actor.backward(&cache, &dz, &mut agrads)?;

                let cin = match cfg.algorithm {
                    Algorithm::Mappo => buf.global_at(t),
                    Algorithm::Ippo => obs,
                };
                let vcache = critic.forward_cached(cin)?;
                let err = vcache.output()[0] - targets[s];
                cl += cfg.value_coef * err * err * inv_m;
                critic.backward(&vcache, &[2.0 * cfg.value_coef * err * inv_m], &mut cgrads)?;
            }

            agrads.clip_global_norm(cfg.max_grad_norm);
            cgrads.clip_global_norm(cfg.max_grad_norm);
            actor_opt.update(actor, &agrads)?;
            critic_opt.update(critic, &cgrads)?;

            actor_loss_sum += al;
            critic_loss_sum += cl;
            entropy_sum += ent_acc;
            updates += 1;
        }
    }

    let u = f64::from(updates);
    Ok(LossReport {
        actor_loss: actor_loss_sum / u,
        critic_loss: critic_loss_sum / u,
        entropy: entropy_sum / u,
        adv_mean,
        adv_std,
    })
}
