//! PPO actor-critic over extracted features, with evaluation harness.

mod model;
mod ppo;

use std::io::{self, Write};
use std::sync::Arc;

use ndarray::{Array1, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::PcaExtractor;
use crate::error::{Error, Result};
use crate::hsfa::HsfaNetwork;
use crate::worldsim::{Action, Frame, Layout, NavEnv, FRAME_CHANNELS, FRAME_HEIGHT, FRAME_WIDTH};

pub use model::{
    clip_grad_norm, log_softmax, Adam, ForwardCache, ModelShape, PolicyModel, CHECKPOINT_VERSION,
    HIDDEN,
};
pub use ppo::{
    loss_and_grad, normalize_advantages, ppo_loss, ppo_update, LossStats, Minibatch, PpoConfig,
    RolloutBuffer,
};

/// Maps an observation to a feature vector for the policy.
pub trait Extractor {
    fn dim(&self) -> usize;
    fn extract(&self, frame: &Frame) -> Result<Array1<f64>>;
}

impl Extractor for HsfaNetwork {
    fn dim(&self) -> usize {
        self.feature_dim()
    }

    fn extract(&self, frame: &Frame) -> Result<Array1<f64>> {
        self.transform(frame.as_bytes())
    }
}

impl Extractor for PcaExtractor {
    fn dim(&self) -> usize {
        self.n_components()
    }

    fn extract(&self, frame: &Frame) -> Result<Array1<f64>> {
        self.transform(frame.as_bytes())
    }
}

impl<E: Extractor + ?Sized> Extractor for Arc<E> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn extract(&self, frame: &Frame) -> Result<Array1<f64>> {
        (**self).extract(frame)
    }
}

/// Gray-level block means on a 4×8 grid, scaled to `[0, 1]`. Meant for
/// debugging the agent without a trained extractor.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityExtractor;

impl IdentityExtractor {
    pub const ROWS: usize = 4;
    pub const COLS: usize = 8;
}

impl Extractor for IdentityExtractor {
    fn dim(&self) -> usize {
        Self::ROWS * Self::COLS
    }

    fn extract(&self, frame: &Frame) -> Result<Array1<f64>> {
        let (bh, bw) = (FRAME_HEIGHT / Self::ROWS, FRAME_WIDTH / Self::COLS);
        let px = frame.as_bytes();
        let mut out = Array1::zeros(self.dim());
        for (k, o) in out.iter_mut().enumerate() {
            let (br, bc) = (k / Self::COLS, k % Self::COLS);
            let mut sum = 0u32;
            for r in br * bh..(br + 1) * bh {
                let row = &px[(r * FRAME_WIDTH + bc * bw) * FRAME_CHANNELS
                    ..(r * FRAME_WIDTH + (bc + 1) * bw) * FRAME_CHANNELS];
                sum += row.iter().map(|&v| v as u32).sum::<u32>();
            }
            *o = sum as f64 / (255.0 * (bh * bw * FRAME_CHANNELS) as f64);
        }
        Ok(out)
    }
}

/// Result of one environment step, seen through an extractor.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub features: Array1<f64>,
    pub reward: f64,
    pub done: bool,
}

/// An episodic task with feature observations and discrete actions.
pub trait Task {
    fn obs_dim(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn reset(&mut self) -> Result<Array1<f64>>;
    fn step(&mut self, action: usize) -> Result<StepOutcome>;
}

/// A navigation environment observed through a feature extractor.
pub struct NavTask<E> {
    pub env: NavEnv,
    pub extractor: E,
}

impl<E: Extractor> NavTask<E> {
    pub fn new(layout: Arc<Layout>, extractor: E, seed: u64) -> Self {
        Self {
            env: NavEnv::new(layout, seed),
            extractor,
        }
    }
}

impl<E: Extractor> Task for NavTask<E> {
    fn obs_dim(&self) -> usize {
        self.extractor.dim()
    }

    fn n_actions(&self) -> usize {
        Action::COUNT
    }

    fn reset(&mut self) -> Result<Array1<f64>> {
        let frame = self.env.reset();
        self.extractor.extract(&frame)
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        let t = self.env.step(Action::from_id(action as u8)?)?;
        Ok(StepOutcome {
            features: self.extractor.extract(&t.observation)?,
            reward: t.reward,
            done: t.done,
        })
    }
}

/// One finished training episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeRecord {
    /// Total environment steps when the episode ended.
    pub step: usize,
    pub episode: usize,
    pub length: usize,
    pub reward: f64,
}

pub fn write_episode_csv<W: Write>(mut w: W, episodes: &[EpisodeRecord]) -> io::Result<()> {
    writeln!(w, "step,episode,length,reward")?;
    for e in episodes {
        writeln!(w, "{},{},{},{}", e.step, e.episode, e.length, e.reward)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PolicyModel,
    pub episodes: Vec<EpisodeRecord>,
    pub updates: Vec<LossStats>,
}

impl TrainOutcome {
    /// Mean length of the last `n` finished episodes.
    pub fn final_mean_length(&self, n: usize) -> Option<f64> {
        let tail = &self.episodes[self.episodes.len().saturating_sub(n)..];
        if tail.is_empty() {
            return None;
        }
        Some(tail.iter().map(|e| e.length as f64).sum::<f64>() / tail.len() as f64)
    }
}

/// Samples an action index from a probability vector.
fn sample(probs: ArrayView1<'_, f64>, rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Trains a fresh policy for `total_steps` environment steps. The run is
/// fully determined by `seed`, the task state and the configuration.
pub fn train<T: Task + ?Sized>(
    task: &mut T,
    cfg: &PpoConfig,
    total_steps: usize,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let shape = ModelShape::new(task.obs_dim(), task.n_actions());
    let mut model = PolicyModel::new(shape, seed);
    let mut opt = Adam::new(shape.param_count(), cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_a9e7);
    let mut buffer = RolloutBuffer::new(cfg.n_steps, shape.input);
    let mut episodes = Vec::new();
    let mut updates = Vec::new();
    if total_steps == 0 {
        return Ok(TrainOutcome {
            model,
            episodes,
            updates,
        });
    }

    let mut obs = task.reset()?;
    let (mut ep_len, mut ep_reward) = (0usize, 0.0);
    for step in 1..=total_steps {
        let (probs, value) = model.forward(obs.view())?;
        let action = sample(probs.view(), &mut rng);
        let log_prob = probs[action].ln();
        let out = task.step(action)?;
        ep_len += 1;
        ep_reward += out.reward;
        buffer.push(obs.view(), action, log_prob, out.reward, value, out.done);
        if out.done {
            episodes.push(EpisodeRecord {
                step,
                episode: episodes.len(),
                length: ep_len,
                reward: ep_reward,
            });
            ep_len = 0;
            ep_reward = 0.0;
            obs = task.reset()?;
        } else {
            obs = out.features;
        }
        if buffer.is_full() || step == total_steps {
            let (_, last_value) = model.forward(obs.view())?;
            let stats = ppo_update(&mut model, &mut opt, &buffer, last_value, cfg, &mut rng)?;
            updates.push(stats);
            buffer.clear();
        }
    }
    Ok(TrainOutcome {
        model,
        episodes,
        updates,
    })
}

/// What a policy sees: the extracted features and, for scripted baselines,
/// the environment itself.
pub struct PolicyInput<'a> {
    pub features: Option<ArrayView1<'a, f64>>,
    pub env: &'a NavEnv,
}

pub trait Policy {
    /// Whether `act` reads the features; if not, frames are not rendered.
    fn needs_features(&self) -> bool {
        true
    }

    fn act(&mut self, input: &PolicyInput<'_>, rng: &mut ChaCha8Rng) -> Result<Action>;
}

/// Uniformly random actions.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn needs_features(&self) -> bool {
        false
    }

    fn act(&mut self, _: &PolicyInput<'_>, rng: &mut ChaCha8Rng) -> Result<Action> {
        Ok(Action::ALL[rng.gen_range(0..Action::COUNT)])
    }
}

/// Samples from a trained model, or takes its most probable action when
/// `greedy` is set.
#[derive(Debug, Clone)]
pub struct ModelPolicy {
    pub model: PolicyModel,
    pub greedy: bool,
}

impl Policy for ModelPolicy {
    fn act(&mut self, input: &PolicyInput<'_>, rng: &mut ChaCha8Rng) -> Result<Action> {
        let features = input
            .features
            .ok_or_else(|| Error::Config("model policy needs features".into()))?;
        let (probs, _) = self.model.forward(features)?;
        let id = if self.greedy {
            probs
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &p)| {
                    if p > best.1 {
                        (i, p)
                    } else {
                        best
                    }
                })
                .0
        } else {
            sample(probs.view(), rng)
        };
        Action::from_id(id as u8)
    }
}

impl<F: FnMut(&NavEnv) -> Action> Policy for F {
    fn needs_features(&self) -> bool {
        false
    }

    fn act(&mut self, input: &PolicyInput<'_>, _: &mut ChaCha8Rng) -> Result<Action> {
        Ok(self(input.env))
    }
}

/// Episode-length summary in the form `mean (min, max)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalStats {
    pub lengths: Vec<usize>,
    pub successes: usize,
    pub mean: f64,
    pub min: usize,
    pub max: usize,
}

impl EvalStats {
    pub fn from_lengths(lengths: Vec<usize>, successes: usize) -> Result<Self> {
        if lengths.is_empty() {
            return Err(Error::TooFewSamples {
                needed: 1,
                found: 0,
            });
        }
        let mean = lengths.iter().sum::<usize>() as f64 / lengths.len() as f64;
        let min = *lengths.iter().min().expect("non-empty");
        let max = *lengths.iter().max().expect("non-empty");
        Ok(Self {
            lengths,
            successes,
            mean,
            min,
            max,
        })
    }
}

impl std::fmt::Display for EvalStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.1} ({}, {})", self.mean, self.min, self.max)
    }
}

/// Runs `n_episodes` episodes with `policy`. `seed` fixes both the episode
/// starts and the policy's sampling.
pub fn evaluate<P: Policy + ?Sized, E: Extractor + ?Sized>(
    policy: &mut P,
    extractor: &E,
    layout: &Arc<Layout>,
    n_episodes: usize,
    seed: u64,
) -> Result<EvalStats> {
    if n_episodes == 0 {
        return Err(Error::TooFewSamples {
            needed: 1,
            found: 0,
        });
    }
    let mut env = NavEnv::new(Arc::clone(layout), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe7a1);
    let needs = policy.needs_features();
    let mut lengths = Vec::with_capacity(n_episodes);
    let mut successes = 0;
    for _ in 0..n_episodes {
        env.reset_state();
        let mut features = if needs {
            Some(extractor.extract(&env.observe())?)
        } else {
            None
        };
        loop {
            let action = policy.act(
                &PolicyInput {
                    features: features.as_ref().map(|f| f.view()),
                    env: &env,
                },
                &mut rng,
            )?;
            let (_, done, reached) = env.advance(action)?;
            if done {
                lengths.push(env.steps());
                successes += reached as usize;
                break;
            }
            if needs {
                features = Some(extractor.extract(&env.observe())?);
            }
        }
    }
    EvalStats::from_lengths(lengths, successes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldsim::{render, LayoutConfig, LayoutKind, Pose};

    #[test]
    fn identity_extractor_block_means() {
        let layout = Layout::new(LayoutKind::FourColoredRooms);
        let frame = render(&layout, Pose::new(0.75, 0.75, 0.3), None).unwrap();
        let f = IdentityExtractor.extract(&frame).unwrap();
        assert_eq!(f.len(), 32);
        // Top-left block by direct summation.
        let mut sum = 0.0;
        for r in 0..15 {
            for c in 0..10 {
                let p = frame.pixel(r, c);
                sum += p.iter().map(|&v| v as f64).sum::<f64>();
            }
        }
        assert!((f[0] - sum / (255.0 * 450.0)).abs() < 1e-12);
        assert!(f.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn sampling_follows_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = Array1::from(vec![0.2, 0.5, 0.3]);
        let mut counts = [0usize; 3];
        for _ in 0..30000 {
            counts[sample(p.view(), &mut rng)] += 1;
        }
        for (c, q) in counts.iter().zip(&p) {
            assert!((*c as f64 / 30000.0 - q).abs() < 0.01);
        }
    }

    #[test]
    fn always_left_never_arrives() {
        let layout = Arc::new(
            LayoutConfig::new(LayoutKind::StarMazeArm)
                .with_max_steps(120)
                .build()
                .unwrap(),
        );
        let mut left = |_: &NavEnv| Action::Left;
        let stats = evaluate(&mut left, &IdentityExtractor, &layout, 5, 3).unwrap();
        assert_eq!(stats.mean, 120.0);
        assert_eq!(stats.successes, 0);
    }
}
