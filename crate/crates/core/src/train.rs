//! Speaker → channel → listener training with REINFORCE and a learned
//! baseline.
//!
//! Each timestep the speaker maps the goal to a signal `z`, the channel
//! turns it into an integer message and a reconstruction `ẑ`, and the
//! listener acts on its own position plus `ẑ`. The objective minimized per
//! batch of episodes is
//!
//! ```text
//! policy_loss + λ · Σ_t Σ_k log2(2|z_t[k]|/δ + 1)
//! ```
//!
//! where the policy loss is the usual score-function loss with advantages
//! `G_t − V(s_t)`, standardized across the batch by default. The
//! listener's gradient with respect to `ẑ` reaches the speaker through the
//! channel's identity backward rule.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{self, Signal};
use crate::env::{self, Action, Cell, EnvState, GoalDistribution, GoalEnv, MAX_STEPS};
use crate::error::{DdclError, Result};
use crate::loss;
use crate::nn::{self, AdamConfig, AdamState, DenseNet, GradTape};
use crate::rng::{mix64, NoiseKey};

/// Which bit count the reported metrics use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BitsMode {
    #[default]
    Ideal,
    Encoded,
}

/// How often the speaker transmits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageMode {
    #[default]
    PerStep,
    PerEpisode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    pub delta: f64,
    pub episodes: usize,
    pub lr: f64,
    pub seed: u64,
    pub gamma: f64,
    pub message_dims: usize,
    pub bits: BitsMode,
    pub message_mode: MessageMode,
    pub hidden: Vec<usize>,
    /// Episodes per gradient update.
    pub batch_episodes: usize,
    pub entropy_coef: f64,
    /// Standardize advantages across each batch.
    pub normalize_advantages: bool,
    pub max_grad_norm: f64,
    /// Initial scale of the speaker's output layer.
    pub speaker_gain: f64,
    pub eval_episodes: usize,
    pub distribution: Option<GoalDistribution>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 4e-3,
            delta: 1.0,
            episodes: 200_000,
            lr: 1e-3,
            seed: 1,
            gamma: 0.99,
            message_dims: 2,
            bits: BitsMode::Ideal,
            message_mode: MessageMode::PerStep,
            hidden: vec![64, 64],
            batch_episodes: 32,
            entropy_coef: 0.01,
            normalize_advantages: true,
            max_grad_norm: 5.0,
            speaker_gain: 3.0,
            eval_episodes: 2000,
            distribution: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(DdclError::InvalidConfig(what.to_string()));
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad("lambda must be finite and nonnegative");
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return bad("delta must be finite and positive");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if self.message_dims == 0 || self.message_dims > usize::from(u16::MAX) {
            return bad("message_dims must be in 1..=65535");
        }
        if self.batch_episodes == 0 {
            return bad("batch_episodes must be positive");
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        if !(self.entropy_coef.is_finite() && self.entropy_coef >= 0.0) {
            return bad("entropy_coef must be nonnegative");
        }
        if !(self.max_grad_norm > 0.0) {
            return bad("max_grad_norm must be positive");
        }
        Ok(())
    }

    pub fn goal_distribution(&self) -> GoalDistribution {
        self.distribution.clone().unwrap_or_default()
    }
}

/// The three learned functions.
#[derive(Clone, Debug, PartialEq)]
pub struct Policies {
    /// goal (2) → z (d)
    pub speaker: DenseNet,
    /// own position (2) + ẑ (d) → action logits (5)
    pub listener: DenseNet,
    /// goal (2) + own position (2) + t/T (1) → value
    pub critic: DenseNet,
}

impl Policies {
    pub fn new(config: &TrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(config.seed ^ 0x5EED_0001));
        let d = config.message_dims;
        Self {
            speaker: DenseNet::mlp(2, &config.hidden, d, config.speaker_gain, &mut rng),
            listener: DenseNet::mlp(2 + d, &config.hidden, Action::ALL.len(), 0.01, &mut rng),
            critic: DenseNet::mlp(5, &config.hidden, 1, 0.1, &mut rng),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.speaker.is_finite() && self.listener.is_finite() && self.critic.is_finite()
    }

    /// Speaker signal for a goal cell.
    pub fn signal(&self, goal: Cell) -> Result<Vec<f64>> {
        self.speaker.predict(&env::normalize(goal))
    }
}

/// How the listener picks actions during a rollout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RolloutMode {
    Sample,
    Greedy,
    /// Bypasses the listener network with the Manhattan walk to the true
    /// goal. Messages are still sent and accounted.
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MessageLog {
    pub t: u32,
    pub z: Vec<f64>,
    pub m: Vec<i64>,
    pub ideal_bits: f64,
    pub encoded_bits: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub goal: Cell,
    pub steps: u32,
    pub success: bool,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub ideal_bits_total: f64,
    pub encoded_bits_total: u64,
    pub messages: Vec<MessageLog>,
}

impl EpisodeRecord {
    pub fn bits(&self, mode: BitsMode) -> f64 {
        match mode {
            BitsMode::Ideal => self.ideal_bits_total,
            BitsMode::Encoded => self.encoded_bits_total as f64,
        }
    }

    pub fn message_count(&self) -> usize {
        self.messages.len()
    }
}

/// Per-step data kept for the backward pass.
struct StepTrace {
    listener_tape: GradTape,
    probs: Vec<f64>,
    action: usize,
    critic_tape: GradTape,
    value: f64,
    reward: f64,
    /// Whether a fresh message was sent at this step.
    sent: bool,
}

struct Rollout {
    record: EpisodeRecord,
    z: Vec<f64>,
    speaker_tape: GradTape,
    steps: Vec<StepTrace>,
}

fn noise_seed(config_seed: u64, episode_seed: u64) -> u64 {
    mix64(config_seed ^ mix64(episode_seed ^ 0xC4A7_7E11))
}

fn critic_input(state: &EnvState) -> [f64; 5] {
    let g = state.speaker_obs();
    let p = state.listener_obs();
    [g[0], g[1], p[0], p[1], f64::from(state.t) / f64::from(MAX_STEPS)]
}

fn rollout(
    policies: &Policies,
    config: &TrainConfig,
    env: &GoalEnv,
    episode_seed: u64,
    mode: RolloutMode,
) -> Result<Rollout> {
    let mut state = env.reset(episode_seed);
    let mut action_rng = ChaCha8Rng::seed_from_u64(mix64(episode_seed ^ 0xAC71_0A11));
    let key_base = NoiseKey::new(noise_seed(config.seed, episode_seed), 0, 0, 0);

    let (z, speaker_tape) = policies.speaker.forward(&state.speaker_obs())?;
    let signal = Signal::new(z.clone()).map_err(|e| DdclError::Diverged {
        episode: episode_seed as usize,
        detail: e.to_string(),
    })?;

    let mut record = EpisodeRecord {
        goal: state.goal,
        steps: 0,
        success: false,
        episode_return: 0.0,
        ideal_bits_total: 0.0,
        encoded_bits_total: 0,
        messages: Vec::new(),
    };
    let mut steps = Vec::new();
    let mut z_hat = Vec::new();

    while !state.done {
        let t = state.t;
        let sent = t == 0 || config.message_mode == MessageMode::PerStep;
        if sent {
            let (m, r) = channel::channel_forward(&signal, key_base.with_timestep(t), config.delta)?;
            record.ideal_bits_total += m.ideal_bits;
            record.encoded_bits_total += m.encoded_bits;
            record.messages.push(MessageLog {
                t,
                z: z.clone(),
                m: m.ints,
                ideal_bits: m.ideal_bits,
                encoded_bits: m.encoded_bits,
            });
            z_hat = r.values;
        }

        let mut input = state.listener_obs().to_vec();
        input.extend_from_slice(&z_hat);
        let (logits, listener_tape) = policies.listener.forward(&input)?;
        let probs = nn::softmax(&logits);
        let action = match mode {
            RolloutMode::Sample => nn::sample_categorical(&probs, &mut action_rng),
            RolloutMode::Greedy => nn::argmax(&probs),
            RolloutMode::Oracle => env::oracle_action(state.listener_pos, state.goal).index(),
        };
        let (value, critic_tape) = policies.critic.forward(&critic_input(&state))?;

        let outcome = env.step(&mut state, Action::from_index(action).expect("5 logits"))?;
        record.episode_return += outcome.reward;
        steps.push(StepTrace {
            listener_tape,
            probs,
            action,
            critic_tape,
            value: value[0],
            reward: outcome.reward,
            sent,
        });
    }
    record.steps = state.t;
    record.success = state.success;
    Ok(Rollout {
        record,
        z,
        speaker_tape,
        steps,
    })
}

/// Plays one episode with the given action-selection mode.
pub fn run_episode(
    policies: &Policies,
    config: &TrainConfig,
    episode_seed: u64,
    mode: RolloutMode,
) -> Result<EpisodeRecord> {
    config.validate()?;
    let env = GoalEnv::new(config.goal_distribution());
    Ok(rollout(policies, config, &env, episode_seed, mode)?.record)
}

/// Loss terms of one update, averaged over the batch's episodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateMetrics {
    pub update: usize,
    /// Score-function loss including the entropy bonus.
    pub policy_loss: f64,
    /// Summed surrogate cost per episode, before multiplying by λ.
    pub comms_cost: f64,
    /// `policy_loss + λ · comms_cost`.
    pub total_loss: f64,
    pub value_loss: f64,
    /// Mean absolute comms gradient reaching `z`, after the λ factor.
    pub comms_grad_abs: f64,
}

/// One row of `metrics.csv`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub success: bool,
    pub ideal_bits: f64,
    pub encoded_bits: u64,
}

struct Learner {
    speaker: AdamState,
    listener: AdamState,
    critic: AdamState,
    adam: AdamConfig,
}

struct BatchGrads {
    speaker: Vec<f64>,
    listener: Vec<f64>,
    critic: Vec<f64>,
}

impl BatchGrads {
    fn zeros(p: &Policies) -> Self {
        Self {
            speaker: vec![0.0; p.speaker.param_count()],
            listener: vec![0.0; p.listener.param_count()],
            critic: vec![0.0; p.critic.param_count()],
        }
    }
}

fn discounted_returns(ro: &Rollout, gamma: f64) -> Vec<f64> {
    let mut returns = vec![0.0; ro.steps.len()];
    let mut g = 0.0;
    for i in (0..ro.steps.len()).rev() {
        g = ro.steps[i].reward + gamma * g;
        returns[i] = g;
    }
    returns
}

/// Mean and standard deviation used to standardize the batch's advantages;
/// `(0, 1)` leaves them untouched.
fn advantage_moments(batch: &[(Rollout, Vec<f64>)], normalize: bool) -> (f64, f64) {
    if !normalize {
        return (0.0, 1.0);
    }
    let advs = || {
        batch
            .iter()
            .flat_map(|(ro, ret)| ro.steps.iter().zip(ret).map(|(s, r)| r - s.value))
    };
    let n = advs().count().max(1) as f64;
    let mean = advs().sum::<f64>() / n;
    let var = advs().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt() + 1e-8)
}

/// Accumulates the gradient of one episode's contribution into `grads`,
/// scaled by `scale` (1 / batch size). Returns (policy loss, comms cost,
/// value loss, Σ|comms grad|).
fn accumulate_episode(
    policies: &Policies,
    config: &TrainConfig,
    ro: Rollout,
    returns: &[f64],
    (adv_mean, adv_std): (f64, f64),
    scale: f64,
    grads: &mut BatchGrads,
) -> Result<(f64, f64, f64, f64)> {
    let d = config.message_dims;

    let cost_grad = loss::comms_cost_grad(&ro.z, config.delta)?;
    let cost = loss::comms_cost(&ro.z, config.delta)?.total;
    let mut dz = vec![0.0; d];
    let mut policy_loss = 0.0;
    let mut comms = 0.0;
    let mut value_loss = 0.0;
    let mut comms_abs = 0.0;

    // In per-episode mode one ẑ feeds every step, so gradients from all
    // steps flow back to the single message.
    for (step, &ret) in ro.steps.into_iter().zip(returns) {
        let advantage = (ret - step.value - adv_mean) / adv_std;
        let entropy: f64 = -step.probs.iter().map(|p| p * p.ln()).sum::<f64>();
        policy_loss += -step.probs[step.action].ln() * advantage - config.entropy_coef * entropy;

        let logit_grad: Vec<f64> = step
            .probs
            .iter()
            .enumerate()
            .map(|(j, &p)| {
                let onehot = if j == step.action { 1.0 } else { 0.0 };
                let pg = (p - onehot) * advantage;
                let eg = config.entropy_coef * p * (p.ln() + entropy);
                scale * (pg + eg)
            })
            .collect();
        let input_grad =
            policies
                .listener
                .backward_into(step.listener_tape, &logit_grad, &mut grads.listener)?;
        for (acc, gz) in dz.iter_mut().zip(channel::grad_passthrough(&input_grad[2..])) {
            *acc += gz;
        }

        if step.sent {
            comms += cost;
            for (acc, cg) in dz.iter_mut().zip(&cost_grad) {
                let c = scale * config.lambda * cg;
                *acc += c;
                comms_abs += c.abs();
            }
        }

        value_loss += 0.5 * (step.value - ret).powi(2);
        policies.critic.backward_into(
            step.critic_tape,
            &[scale * (step.value - ret)],
            &mut grads.critic,
        )?;
    }
    policies
        .speaker
        .backward_into(ro.speaker_tape, &dz, &mut grads.speaker)?;
    Ok((policy_loss, comms, value_loss, comms_abs))
}

/// Outcome of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub policies: Policies,
    pub episodes: Vec<EpisodeMetrics>,
    pub updates: Vec<UpdateMetrics>,
}

/// Seed of training episode `i`.
pub fn train_episode_seed(config_seed: u64, i: usize) -> u64 {
    mix64(config_seed.wrapping_mul(0x1000_0000_01B3) ^ (i as u64).wrapping_add(0x7261_696E))
}

/// Seed of evaluation episode `i`, disjoint in practice from training seeds.
pub fn eval_episode_seed(config_seed: u64, i: usize) -> u64 {
    mix64(config_seed.wrapping_mul(0x1000_0000_01B3) ^ (i as u64).wrapping_add(0x6576_616C_0000_0000))
}

pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(config, |_, _| {})
}

/// [`train`] with a callback invoked after every update with the number of
/// episodes done and the latest update metrics.
pub fn train_with_progress<F: FnMut(usize, &UpdateMetrics)>(
    config: &TrainConfig,
    mut progress: F,
) -> Result<TrainOutcome> {
    config.validate()?;
    let env = GoalEnv::new(config.goal_distribution());
    let mut policies = Policies::new(config);
    let adam = AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    };
    let mut learner = Learner {
        speaker: AdamState::new(policies.speaker.param_count()),
        listener: AdamState::new(policies.listener.param_count()),
        critic: AdamState::new(policies.critic.param_count()),
        adam,
    };
    let mut episodes = Vec::with_capacity(config.episodes);
    let mut updates = Vec::new();

    let mut start = 0;
    while start < config.episodes {
        let end = (start + config.batch_episodes).min(config.episodes);
        let scale = 1.0 / (end - start) as f64;
        let mut grads = BatchGrads::zeros(&policies);
        let (mut pl, mut cc, mut vl, mut ca) = (0.0, 0.0, 0.0, 0.0);
        let mut batch = Vec::with_capacity(end - start);
        for i in start..end {
            let ro = rollout(
                &policies,
                config,
                &env,
                train_episode_seed(config.seed, i),
                RolloutMode::Sample,
            )?;
            episodes.push(EpisodeMetrics {
                episode: i,
                episode_return: ro.record.episode_return,
                success: ro.record.success,
                ideal_bits: ro.record.ideal_bits_total,
                encoded_bits: ro.record.encoded_bits_total,
            });
            let returns = discounted_returns(&ro, config.gamma);
            batch.push((ro, returns));
        }
        let moments = advantage_moments(&batch, config.normalize_advantages);
        for (ro, returns) in batch {
            let (p, c, v, a) =
                accumulate_episode(&policies, config, ro, &returns, moments, scale, &mut grads)?;
            pl += p;
            cc += c;
            vl += v;
            ca += a;
        }
        let policy_loss = pl * scale;
        let comms_cost = cc * scale;
        let metrics = UpdateMetrics {
            update: updates.len(),
            policy_loss,
            comms_cost,
            total_loss: policy_loss + config.lambda * comms_cost,
            value_loss: vl * scale,
            comms_grad_abs: ca,
        };

        for g in [&mut grads.speaker, &mut grads.listener, &mut grads.critic] {
            nn::clip_grad_norm(g, config.max_grad_norm);
        }
        nn::adam_step(
            policies.speaker.params_mut(),
            &grads.speaker,
            &mut learner.speaker,
            &learner.adam,
        )?;
        nn::adam_step(
            policies.listener.params_mut(),
            &grads.listener,
            &mut learner.listener,
            &learner.adam,
        )?;
        nn::adam_step(
            policies.critic.params_mut(),
            &grads.critic,
            &mut learner.critic,
            &learner.adam,
        )?;
        if !policies.is_finite() || !metrics.total_loss.is_finite() {
            return Err(DdclError::Diverged {
                episode: end,
                detail: format!("non-finite parameters or loss after update {}", metrics.update),
            });
        }
        progress(end, &metrics);
        updates.push(metrics);
        start = end;
    }
    Ok(TrainOutcome {
        policies,
        episodes,
        updates,
    })
}

/// Greedy evaluation episodes.
pub fn evaluate(policies: &Policies, config: &TrainConfig, n: usize) -> Result<Vec<EpisodeRecord>> {
    config.validate()?;
    let env = GoalEnv::new(config.goal_distribution());
    (0..n)
        .map(|i| {
            rollout(
                policies,
                config,
                &env,
                eval_episode_seed(config.seed, i),
                RolloutMode::Greedy,
            )
            .map(|ro| ro.record)
        })
        .collect()
}

/// Summary of an evaluation set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_bits_per_episode: f64,
    pub mean_return: f64,
}

pub fn summarize(records: &[EpisodeRecord], mode: BitsMode) -> EvalSummary {
    let n = records.len().max(1) as f64;
    EvalSummary {
        episodes: records.len(),
        success_rate: records.iter().filter(|r| r.success).count() as f64 / n,
        mean_bits_per_episode: records.iter().map(|r| r.bits(mode)).sum::<f64>() / n,
        mean_return: records.iter().map(|r| r.episode_return).sum::<f64>() / n,
    }
}

/// One point of the rate-distortion frontier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateDistortionPoint {
    pub lambda: f64,
    pub mean_bits_per_episode: f64,
    pub success_rate: f64,
    /// `mean_bits_per_episode − H(goal)`.
    pub shannon_gap: f64,
}

impl RateDistortionPoint {
    pub fn new(lambda: f64, summary: &EvalSummary, entropy_bits: f64) -> Self {
        Self {
            lambda,
            mean_bits_per_episode: summary.mean_bits_per_episode,
            success_rate: summary.success_rate,
            shannon_gap: summary.mean_bits_per_episode - entropy_bits,
        }
    }
}

/// Outcome of one λ in a sweep; failures are kept rather than aborting.
#[derive(Debug)]
pub struct SweepEntry {
    pub lambda: f64,
    pub result: Result<(RateDistortionPoint, Policies)>,
}

/// Trains one independent run per λ, all with the base config's seed, and
/// evaluates each greedily.
pub fn sweep_lambda(lambdas: &[f64], base: &TrainConfig) -> Result<Vec<SweepEntry>> {
    if lambdas.len() < 2 {
        return Err(DdclError::Precondition(
            "a sweep needs at least two lambda values".into(),
        ));
    }
    let entropy = base.goal_distribution().entropy_bits();
    Ok(lambdas
        .iter()
        .map(|&lambda| {
            let config = TrainConfig {
                lambda,
                ..base.clone()
            };
            let result = train(&config).and_then(|out| {
                let records = evaluate(&out.policies, &config, config.eval_episodes)?;
                let summary = summarize(&records, config.bits);
                Ok((RateDistortionPoint::new(lambda, &summary, entropy), out.policies))
            });
            SweepEntry { lambda, result }
        })
        .collect())
}

/// Gradient of `λ · cost(speaker(obs))` over `messages` transmissions with
/// respect to the speaker's parameters.
pub fn comms_param_grad(
    speaker: &DenseNet,
    obs: &[f64],
    lambda: f64,
    delta: f64,
    messages: usize,
) -> Result<Vec<f64>> {
    let (z, tape) = speaker.forward(obs)?;
    let dz: Vec<f64> = loss::comms_cost_grad(&z, delta)?
        .into_iter()
        .map(|g| lambda * messages as f64 * g)
        .collect();
    Ok(speaker.backward(tape, &dz)?.params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> TrainConfig {
        TrainConfig {
            hidden: vec![8],
            episodes: 64,
            batch_episodes: 16,
            eval_episodes: 50,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { lambda: -1.0, ..tiny() },
            TrainConfig { delta: 0.0, ..tiny() },
            TrainConfig { message_dims: 0, ..tiny() },
            TrainConfig { batch_episodes: 0, ..tiny() },
            TrainConfig { gamma: 1.5, ..tiny() },
        ] {
            assert!(matches!(bad.validate(), Err(DdclError::InvalidConfig(_))));
        }
        let json = serde_json::to_string(&tiny()).unwrap();
        let back: TrainConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, tiny());
        assert!(serde_json::from_str::<TrainConfig>(r#"{"lamda": 1}"#).is_err());
    }

    #[test]
    fn zero_speaker_sends_small_messages() {
        let config = tiny();
        let mut policies = Policies::new(&config);
        let n = policies.speaker.param_count();
        policies.speaker.set_params(vec![0.0; n]).unwrap();
        for seed in 0..50 {
            let rec = run_episode(&policies, &config, seed, RolloutMode::Sample).unwrap();
            for msg in &rec.messages {
                assert!(msg.z.iter().all(|&z| z == 0.0));
                assert!(msg.m.iter().all(|&m| m == 0 || m == -1));
            }
            assert!(rec.ideal_bits_total <= rec.messages.len() as f64 * 2.0 * 3f64.log2() + 1e-9);
        }
    }

    #[test]
    fn oracle_rollout_succeeds_and_accounts_bits() {
        let config = tiny();
        let policies = Policies::new(&config);
        for seed in 0..200 {
            let rec = run_episode(&policies, &config, seed, RolloutMode::Oracle).unwrap();
            assert!(rec.success);
            assert_eq!(rec.messages.len(), rec.steps as usize);
            let ideal: f64 = rec
                .messages
                .iter()
                .flat_map(|m| m.m.iter())
                .map(|&m| crate::codec::ideal_bit_length(m))
                .sum();
            assert!((rec.ideal_bits_total - ideal).abs() < 1e-9);
            let encoded: u64 = rec.messages.iter().map(|m| m.encoded_bits).sum();
            assert_eq!(rec.encoded_bits_total, encoded);
        }
    }

    #[test]
    fn per_episode_mode_sends_once() {
        let config = TrainConfig {
            message_mode: MessageMode::PerEpisode,
            ..tiny()
        };
        let policies = Policies::new(&config);
        let rec = run_episode(&policies, &config, 3, RolloutMode::Oracle).unwrap();
        assert_eq!(rec.messages.len(), 1);
    }

    #[test]
    fn objective_accounting_and_determinism() {
        let config = TrainConfig {
            lambda: 0.05,
            ..tiny()
        };
        let a = train(&config).unwrap();
        for u in &a.updates {
            assert!((u.total_loss - (u.policy_loss + config.lambda * u.comms_cost)).abs() < 1e-9);
        }
        let b = train(&config).unwrap();
        assert_eq!(a.episodes, b.episodes);
        assert_eq!(a.policies, b.policies);
    }

    #[test]
    fn lambda_zero_has_no_comms_gradient() {
        let config = TrainConfig {
            lambda: 0.0,
            ..tiny()
        };
        let out = train(&config).unwrap();
        assert!(out.updates.iter().all(|u| u.comms_grad_abs == 0.0));
        assert!(out.updates.iter().all(|u| u.comms_cost > 0.0));
    }

    #[test]
    fn comms_gradient_matches_perturbation() {
        let config = tiny();
        let policies = Policies::new(&config);
        let obs = [3.0 / 7.0, 4.0 / 7.0];
        let (lambda, delta, msgs) = (0.1, 1.0, 5);
        let z = policies.speaker.predict(&obs).unwrap();
        assert!(z.iter().all(|&v| v != 0.0));
        let grad = comms_param_grad(&policies.speaker, &obs, lambda, delta, msgs).unwrap();
        let objective = |net: &DenseNet| {
            let z = net.predict(&obs).unwrap();
            lambda * msgs as f64 * loss::comms_cost(&z, delta).unwrap().total
        };
        let h = 1e-6;
        let mut nonzero = 0;
        for i in 0..policies.speaker.param_count() {
            let mut p = policies.speaker.clone();
            p.params_mut()[i] += h;
            let mut m = policies.speaker.clone();
            m.params_mut()[i] -= h;
            let fd = (objective(&p) - objective(&m)) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-6 + 1e-4 * fd.abs());
            if fd.abs() > 1e-8 {
                assert!(grad[i] != 0.0);
                nonzero += 1;
            }
        }
        assert!(nonzero > 0);
    }

    #[test]
    fn sweep_needs_two_points() {
        assert!(sweep_lambda(&[1e-3], &tiny()).is_err());
    }
}
