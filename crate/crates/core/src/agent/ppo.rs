//! Clipped-surrogate PPO on top of [`PolicyModel`].

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::model::{clip_grad_norm, log_softmax, Adam, PolicyModel};
use crate::error::{Error, Result};

/// PPO hyperparameters. Learning rate, entropy coefficient, clip range,
/// batch size and rollout length follow the reference experiments; γ, λ,
/// epoch count and the remaining coefficients are common PPO defaults.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoConfig {
    pub learning_rate: f64,
    pub n_steps: usize,
    pub batch_size: usize,
    pub n_epochs: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_range: f64,
    pub ent_coef: f64,
    pub vf_coef: f64,
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2.5e-4,
            n_steps: 128,
            batch_size: 128,
            n_epochs: 10,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_range: 0.1,
            ent_coef: 0.01,
            vf_coef: 0.5,
            max_grad_norm: 0.5,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("gamma", self.gamma),
            ("gae_lambda", self.gae_lambda),
            ("clip_range", self.clip_range),
            ("max_grad_norm", self.max_grad_norm),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.clip_range >= 1.0 {
            return Err(Error::Config("clip_range must be below 1".into()));
        }
        if self.gamma > 1.0 || self.gae_lambda > 1.0 {
            return Err(Error::Config(
                "gamma and gae_lambda must be at most 1".into(),
            ));
        }
        if !(self.ent_coef >= 0.0 && self.vf_coef >= 0.0) {
            return Err(Error::Config(
                "loss coefficients must be non-negative".into(),
            ));
        }
        if self.n_steps == 0 || self.batch_size == 0 || self.n_epochs == 0 {
            return Err(Error::Config(
                "n_steps, batch_size and n_epochs must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One rollout of `n_steps` transitions.
#[derive(Debug, Clone)]
pub struct RolloutBuffer {
    pub observations: Array2<f64>,
    pub actions: Vec<usize>,
    pub log_probs: Array1<f64>,
    pub rewards: Array1<f64>,
    pub values: Array1<f64>,
    /// `true` when the transition ended an episode.
    pub dones: Vec<bool>,
    len: usize,
}

impl RolloutBuffer {
    pub fn new(capacity: usize, obs_dim: usize) -> Self {
        Self {
            observations: Array2::zeros((capacity, obs_dim)),
            actions: vec![0; capacity],
            log_probs: Array1::zeros(capacity),
            rewards: Array1::zeros(capacity),
            values: Array1::zeros(capacity),
            dones: vec![false; capacity],
            len: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.actions.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_full(&self) -> bool {
        self.len == self.capacity()
    }

    pub fn clear(&mut self) {
        self.len = 0;
    }

    pub fn push(
        &mut self,
        obs: ArrayView1<'_, f64>,
        action: usize,
        log_prob: f64,
        reward: f64,
        value: f64,
        done: bool,
    ) {
        let i = self.len;
        assert!(i < self.capacity(), "rollout buffer is full");
        self.observations.row_mut(i).assign(&obs);
        self.actions[i] = action;
        self.log_probs[i] = log_prob;
        self.rewards[i] = reward;
        self.values[i] = value;
        self.dones[i] = done;
        self.len += 1;
    }

    /// Generalized advantage estimates and returns. `last_value` bootstraps
    /// the final transition when it did not end an episode.
    pub fn advantages(
        &self,
        last_value: f64,
        gamma: f64,
        lambda: f64,
    ) -> (Array1<f64>, Array1<f64>) {
        let n = self.len;
        let mut adv = Array1::zeros(n);
        let mut gae = 0.0;
        for t in (0..n).rev() {
            let next_value = if t + 1 < n {
                self.values[t + 1]
            } else {
                last_value
            };
            let live = if self.dones[t] { 0.0 } else { 1.0 };
            let delta = self.rewards[t] + gamma * next_value * live - self.values[t];
            gae = delta + gamma * lambda * live * gae;
            adv[t] = gae;
        }
        let returns = &adv + &self.values.slice(ndarray::s![..n]);
        (adv, returns)
    }
}

/// Rescales to zero mean and unit standard deviation.
pub fn normalize_advantages(adv: &Array1<f64>) -> Array1<f64> {
    let mean = adv.mean().unwrap_or(0.0);
    let std = adv.std(0.0);
    adv.mapv(|a| (a - mean) / (std + 1e-8))
}

/// A minibatch in the form the loss needs.
#[derive(Debug, Clone, Copy)]
pub struct Minibatch<'a> {
    pub observations: ArrayView2<'a, f64>,
    pub actions: &'a [usize],
    pub old_log_probs: ArrayView1<'a, f64>,
    pub advantages: ArrayView1<'a, f64>,
    pub returns: ArrayView1<'a, f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

impl LossStats {
    pub fn total(&self, cfg: &PpoConfig) -> f64 {
        self.policy_loss + cfg.vf_coef * self.value_loss - cfg.ent_coef * self.entropy
    }
}

/// PPO loss `−mean min(ρA, clip(ρ)A) + c_v·mean (V−R)² − c_e·mean H` and its
/// gradient with respect to every model parameter.
pub fn loss_and_grad(
    model: &PolicyModel,
    batch: &Minibatch<'_>,
    cfg: &PpoConfig,
) -> Result<(LossStats, Vec<f64>)> {
    let (stats, grad) = evaluate_loss(model, batch, cfg, true)?;
    Ok((stats, grad.expect("gradient requested")))
}

/// The loss terms alone, without the backward pass.
pub fn ppo_loss(model: &PolicyModel, batch: &Minibatch<'_>, cfg: &PpoConfig) -> Result<LossStats> {
    Ok(evaluate_loss(model, batch, cfg, false)?.0)
}

fn evaluate_loss(
    model: &PolicyModel,
    batch: &Minibatch<'_>,
    cfg: &PpoConfig,
    want_grad: bool,
) -> Result<(LossStats, Option<Vec<f64>>)> {
    let b = batch.actions.len();
    let cache = model.forward_batch(batch.observations)?;
    let n_act = cache.logits.ncols();
    let scale = 1.0 / b as f64;
    let (lo, hi) = (1.0 - cfg.clip_range, 1.0 + cfg.clip_range);

    let mut d_logits = Array2::zeros((b, n_act));
    let mut d_values = Array1::zeros(b);
    let mut stats = LossStats::default();
    for i in 0..b {
        let logp = log_softmax(cache.logits.row(i));
        let probs = logp.mapv(f64::exp);
        let a = batch.actions[i];
        let adv = batch.advantages[i];
        let log_ratio = logp[a] - batch.old_log_probs[i];
        let ratio = log_ratio.exp();
        let clipped = ratio.clamp(lo, hi);
        let surr1 = ratio * adv;
        let surr2 = clipped * adv;
        stats.policy_loss -= surr1.min(surr2) * scale;
        if (ratio - 1.0).abs() > cfg.clip_range {
            stats.clip_fraction += scale;
        }
        stats.approx_kl += ((ratio - 1.0) - log_ratio) * scale;
        // The unclipped term is active unless the clipped one is strictly
        // smaller; only then does the sample carry a gradient.
        let coef = if surr1 <= surr2 {
            -adv * ratio * scale
        } else {
            0.0
        };

        let entropy = -probs.iter().zip(&logp).map(|(p, l)| p * l).sum::<f64>();
        stats.entropy += entropy * scale;

        let mut row = d_logits.row_mut(i);
        for j in 0..n_act {
            let onehot = if j == a { 1.0 } else { 0.0 };
            // d logp_a / d logit_j = 1[j=a] − p_j
            let pg = coef * (onehot - probs[j]);
            // d H / d logit_j = −p_j (log p_j + H)
            let ent = cfg.ent_coef * scale * probs[j] * (logp[j] + entropy);
            row[j] = pg + ent;
        }

        let err = cache.values[i] - batch.returns[i];
        stats.value_loss += err * err * scale;
        d_values[i] = cfg.vf_coef * 2.0 * err * scale;
    }
    let grad = want_grad.then(|| model.backward(&cache, d_logits.view(), d_values.view()));
    Ok((stats, grad))
}

/// Runs `n_epochs` of shuffled minibatch updates on a full buffer. Returns
/// the mean statistics over all minibatches.
pub fn ppo_update(
    model: &mut PolicyModel,
    optimizer: &mut Adam,
    buffer: &RolloutBuffer,
    last_value: f64,
    cfg: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LossStats> {
    let n = buffer.len();
    if n == 0 {
        return Ok(LossStats::default());
    }
    let (adv, returns) = buffer.advantages(last_value, cfg.gamma, cfg.gae_lambda);
    let adv = if n > 1 {
        normalize_advantages(&adv)
    } else {
        adv
    };
    if adv.iter().chain(returns.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NumericalGuard(
            "non-finite advantages or returns".into(),
        ));
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut total = LossStats::default();
    let mut batches = 0usize;
    for _ in 0..cfg.n_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let obs = buffer.observations.select(Axis(0), chunk);
            let actions: Vec<usize> = chunk.iter().map(|&i| buffer.actions[i]).collect();
            let old = Array1::from_iter(chunk.iter().map(|&i| buffer.log_probs[i]));
            let a = Array1::from_iter(chunk.iter().map(|&i| adv[i]));
            let r = Array1::from_iter(chunk.iter().map(|&i| returns[i]));
            let batch = Minibatch {
                observations: obs.view(),
                actions: &actions,
                old_log_probs: old.view(),
                advantages: a.view(),
                returns: r.view(),
            };
            let (stats, mut grad) = loss_and_grad(model, &batch, cfg)?;
            if !stats.total(cfg).is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NumericalGuard(format!(
                    "non-finite loss or gradient (policy {}, value {}, entropy {})",
                    stats.policy_loss, stats.value_loss, stats.entropy
                )));
            }
            clip_grad_norm(&mut grad, cfg.max_grad_norm);
            optimizer.step(model.params_mut(), &grad);
            total.policy_loss += stats.policy_loss;
            total.value_loss += stats.value_loss;
            total.entropy += stats.entropy;
            total.clip_fraction += stats.clip_fraction;
            total.approx_kl += stats.approx_kl;
            batches += 1;
        }
    }
    if model.params().iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalGuard("parameters became non-finite".into()));
    }
    let k = 1.0 / batches as f64;
    Ok(LossStats {
        policy_loss: total.policy_loss * k,
        value_loss: total.value_loss * k,
        entropy: total.entropy * k,
        clip_fraction: total.clip_fraction * k,
        approx_kl: total.approx_kl * k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::model::ModelShape;
    use rand::{Rng, SeedableRng};

    fn random_batch(
        seed: u64,
        b: usize,
        dim: usize,
    ) -> (
        Array2<f64>,
        Vec<usize>,
        Array1<f64>,
        Array1<f64>,
        Array1<f64>,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs = Array2::from_shape_simple_fn((b, dim), || rng.gen_range(-1.5..1.5));
        let actions = (0..b).map(|_| rng.gen_range(0..3)).collect();
        let old = Array1::from_shape_simple_fn(b, || rng.gen_range(-1.6..-0.6));
        let adv = Array1::from_shape_simple_fn(b, || rng.gen_range(-2.0..2.0));
        let ret = Array1::from_shape_simple_fn(b, || rng.gen_range(-1.0..1.0));
        (obs, actions, old, adv, ret)
    }

    #[test]
    fn gae_matches_hand_computation() {
        let mut buf = RolloutBuffer::new(3, 1);
        let o = Array1::zeros(1);
        buf.push(o.view(), 0, 0.0, 1.0, 0.5, false);
        buf.push(o.view(), 0, 0.0, 0.0, 0.2, true);
        buf.push(o.view(), 0, 0.0, 2.0, 0.1, false);
        let (g, l) = (0.9, 0.8);
        let (adv, ret) = buf.advantages(0.4, g, l);
        let d2 = 2.0 + g * 0.4 - 0.1;
        let d1 = 0.0 - 0.2;
        let d0 = 1.0 + g * 0.2 - 0.5;
        assert!((adv[2] - d2).abs() < 1e-15);
        assert!((adv[1] - d1).abs() < 1e-15);
        assert!((adv[0] - (d0 + g * l * d1)).abs() < 1e-15);
        assert!((ret[0] - (adv[0] + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn normalized_advantages_have_unit_scale() {
        let adv = Array1::from_iter((0..128).map(|i| (i as f64 * 0.37).sin() * 5.0 + 2.0));
        let n = normalize_advantages(&adv);
        assert!(n.mean().unwrap().abs() <= 1e-8);
        assert!((n.std(0.0) - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn first_epoch_surrogates_coincide_and_zero_advantage_has_no_policy_loss() {
        let model = PolicyModel::new(ModelShape::new(4, 3), 1);
        let (obs, actions, _, adv, ret) = random_batch(2, 16, 4);
        let cache = model.forward_batch(obs.view()).unwrap();
        let old = Array1::from_iter((0..16).map(|i| log_softmax(cache.logits.row(i))[actions[i]]));
        let cfg = PpoConfig::default();
        let batch = Minibatch {
            observations: obs.view(),
            actions: &actions,
            old_log_probs: old.view(),
            advantages: adv.view(),
            returns: ret.view(),
        };
        let (stats, _) = loss_and_grad(&model, &batch, &cfg).unwrap();
        assert!((stats.policy_loss + adv.mean().unwrap()).abs() < 1e-12);
        assert_eq!(stats.clip_fraction, 0.0);

        let zero = Array1::zeros(16);
        let batch = Minibatch {
            advantages: zero.view(),
            ..batch
        };
        let (stats, _) = loss_and_grad(&model, &batch, &cfg).unwrap();
        assert_eq!(stats.policy_loss, 0.0);
    }

    #[test]
    fn entropy_gradient_vanishes_at_uniform_policy() {
        let mut model = PolicyModel::new(ModelShape::new(4, 3), 1);
        model.zero_heads();
        let (obs, actions, old, _, _) = random_batch(3, 8, 4);
        let zero = Array1::zeros(8);
        let cfg = PpoConfig {
            vf_coef: 0.0,
            ..PpoConfig::default()
        };
        let batch = Minibatch {
            observations: obs.view(),
            actions: &actions,
            old_log_probs: old.view(),
            advantages: zero.view(),
            returns: zero.view(),
        };
        let (_, grad) = loss_and_grad(&model, &batch, &cfg).unwrap();
        assert!(grad.iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn clipped_samples_carry_no_policy_gradient() {
        let model = PolicyModel::new(ModelShape::new(4, 3), 5);
        let (obs, actions, _, _, _) = random_batch(4, 1, 4);
        let cache = model.forward_batch(obs.view()).unwrap();
        let logp = log_softmax(cache.logits.row(0))[actions[0]];
        let cfg = PpoConfig {
            vf_coef: 0.0,
            ent_coef: 0.0,
            ..PpoConfig::default()
        };
        let zero = Array1::zeros(1);
        // ρ = e^0.3 > 1.1 with positive advantage: clipping binds.
        // ρ = e^-0.3 < 0.9 with negative advantage: clipping binds.
        for (shift, adv) in [(-0.3, 1.0), (0.3, -1.0)] {
            let old = Array1::from_elem(1, logp + shift);
            let a = Array1::from_elem(1, adv);
            let batch = Minibatch {
                observations: obs.view(),
                actions: &actions,
                old_log_probs: old.view(),
                advantages: a.view(),
                returns: zero.view(),
            };
            let (stats, grad) = loss_and_grad(&model, &batch, &cfg).unwrap();
            assert_eq!(stats.clip_fraction, 1.0);
            assert!(grad.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn zero_loss_gives_zero_gradient() {
        let model = PolicyModel::new(ModelShape::new(3, 3), 8);
        let (obs, actions, old, _, _) = random_batch(5, 6, 3);
        let cache = model.forward_batch(obs.view()).unwrap();
        let zero = Array1::zeros(6);
        let cfg = PpoConfig {
            ent_coef: 0.0,
            ..PpoConfig::default()
        };
        let batch = Minibatch {
            observations: obs.view(),
            actions: &actions,
            old_log_probs: old.view(),
            advantages: zero.view(),
            returns: cache.values.view(),
        };
        let (stats, grad) = loss_and_grad(&model, &batch, &cfg).unwrap();
        assert_eq!(stats.total(&cfg), 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn config_validation() {
        assert!(PpoConfig::default().validate().is_ok());
        let bad = PpoConfig {
            clip_range: 1.0,
            ..PpoConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = PpoConfig {
            learning_rate: 0.0,
            ..PpoConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
