//! Training objectives over a toy categorical sequence policy: SFT
//! cross-entropy, DPO preference loss, GRPO clipped-ratio objective
//! with group-normalized advantages and a per-token KL penalty, rule
//! and label rewards, and the joint path/rationale loss. Every loss
//! returns an analytic gradient over the policy logits, checkable by
//! central finite differences.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::exact_match;
use crate::float;
use crate::merge::{MergeError, Tensor, TensorBundle};
use crate::rng::DetRng;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ObjectiveError {
    #[error("logits length {got} does not match contexts*vocab = {expected}")]
    BadLogitsLength { expected: usize, got: usize },
    #[error("non-finite logit at index {0}")]
    NonFiniteLogit(usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("trajectory index out of range (context {context}, token {token})")]
    IndexOutOfRange { context: usize, token: usize },
    #[error("trajectory lengths differ between context and token ids")]
    LengthMismatch,
    #[error("chosen and rejected trajectories are identical")]
    IdenticalPair,
    #[error("policies have mismatched shapes")]
    ShapeMismatch,
    #[error("a group needs at least 2 trajectories, got {0}")]
    GroupTooSmall(usize),
    #[error("group has {trajectories} trajectories but {advantages} advantages")]
    AdvantageMismatch {
        trajectories: usize,
        advantages: usize,
    },
    #[error("no groups given")]
    NoGroups,
    #[error("beta must be nonnegative, got {0}")]
    NegativeBeta(String),
    #[error("epsilon must be in (0, 1)")]
    BadEpsilon,
    #[error("mixture weights must be in [0, 1] and sum to 1")]
    BadMixture,
}

/// A small parameterized categorical sequence distribution: one softmax
/// row of logits per context, and a sequence probability equal to the
/// product of per-step softmax probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    contexts: usize,
    vocab_size: usize,
    logits: Vec<f64>,
}

impl ToyPolicy {
    pub fn new(contexts: usize, vocab_size: usize, logits: Vec<f64>) -> Result<Self, ObjectiveError> {
        let expected = contexts * vocab_size;
        if logits.len() != expected {
            return Err(ObjectiveError::BadLogitsLength {
                expected,
                got: logits.len(),
            });
        }
        if let Some(idx) = logits.iter().position(|v| !v.is_finite()) {
            return Err(ObjectiveError::NonFiniteLogit(idx));
        }
        Ok(ToyPolicy {
            contexts,
            vocab_size,
            logits,
        })
    }

    pub fn uniform(contexts: usize, vocab_size: usize) -> Self {
        ToyPolicy {
            contexts,
            vocab_size,
            logits: alloc::vec![0.0; contexts * vocab_size],
        }
    }

    /// Logits drawn uniformly from [-2, 2].
    pub fn random(contexts: usize, vocab_size: usize, rng: &mut DetRng) -> Self {
        let logits = (0..contexts * vocab_size)
            .map(|_| rng.next_f64() * 4.0 - 2.0)
            .collect();
        ToyPolicy {
            contexts,
            vocab_size,
            logits,
        }
    }

    pub fn contexts(&self) -> usize {
        self.contexts
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn n_params(&self) -> usize {
        self.logits.len()
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn perturbed(&self, index: usize, delta: f64) -> Self {
        let mut p = self.clone();
        p.logits[index] += delta;
        p
    }

    fn same_shape(&self, other: &ToyPolicy) -> bool {
        self.contexts == other.contexts && self.vocab_size == other.vocab_size
    }

    /// Log-softmax of one context row.
    pub fn log_prob_row(&self, context: usize) -> Vec<f64> {
        let row = &self.logits[context * self.vocab_size..(context + 1) * self.vocab_size];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|x| float::exp(x - max)).sum();
        let lse = max + float::ln(sum);
        row.iter().map(|x| x - lse).collect()
    }

    pub fn prob_row(&self, context: usize) -> Vec<f64> {
        self.log_prob_row(context)
            .into_iter()
            .map(float::exp)
            .collect()
    }

    fn all_log_rows(&self) -> Vec<Vec<f64>> {
        (0..self.contexts).map(|c| self.log_prob_row(c)).collect()
    }

    fn all_prob_rows(&self) -> Vec<Vec<f64>> {
        (0..self.contexts).map(|c| self.prob_row(c)).collect()
    }

    /// Policy logits as a single-tensor bundle (shape
    /// [contexts, vocab_size], cast to f32) in the tensor container
    /// schema used by the merge tooling.
    pub fn to_bundle(&self) -> TensorBundle {
        let mut bundle = TensorBundle::new();
        let tensor = Tensor::new(
            alloc::vec![self.contexts, self.vocab_size],
            self.logits.iter().map(|&v| v as f32).collect(),
        )
        .expect("logits length matches shape");
        bundle.insert("logits", tensor).expect("fresh bundle");
        bundle
    }

    /// Rebuilds a policy from a bundle written by `to_bundle`.
    pub fn from_bundle(bundle: &TensorBundle) -> Result<Self, MergeError> {
        let tensor = bundle.get("logits").ok_or(MergeError::NameSetMismatch {
            only_in_a: alloc::vec![String::from("logits")],
            only_in_b: bundle.names().map(String::from).collect(),
        })?;
        if tensor.shape.len() != 2 {
            return Err(MergeError::ShapeMismatch {
                name: String::from("logits"),
                a: alloc::vec![0, 0],
                b: tensor.shape.clone(),
            });
        }
        Ok(ToyPolicy {
            contexts: tensor.shape[0],
            vocab_size: tensor.shape[1],
            logits: tensor.data.iter().map(|&v| v as f64).collect(),
        })
    }

    /// Sum of per-step log-probabilities of the trajectory's tokens.
    pub fn trajectory_log_prob(&self, trajectory: &Trajectory) -> Result<f64, ObjectiveError> {
        trajectory.validate(self)?;
        let rows = self.all_log_rows();
        Ok(trajectory
            .context_ids
            .iter()
            .zip(&trajectory.token_ids)
            .map(|(&c, &t)| rows[c][t])
            .sum())
    }
}

/// One sampled sequence: a context index and a token index per step,
/// plus an optional scalar reward once scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub context_ids: Vec<usize>,
    pub token_ids: Vec<usize>,
    pub reward: Option<f64>,
}

impl Trajectory {
    pub fn new(context_ids: Vec<usize>, token_ids: Vec<usize>) -> Self {
        Trajectory {
            context_ids,
            token_ids,
            reward: None,
        }
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    fn validate(&self, policy: &ToyPolicy) -> Result<(), ObjectiveError> {
        if self.context_ids.len() != self.token_ids.len() {
            return Err(ObjectiveError::LengthMismatch);
        }
        if self.is_empty() {
            return Err(ObjectiveError::EmptyTrajectory);
        }
        for (&c, &t) in self.context_ids.iter().zip(&self.token_ids) {
            if c >= policy.contexts() || t >= policy.vocab_size() {
                return Err(ObjectiveError::IndexOutOfRange { context: c, token: t });
            }
        }
        Ok(())
    }
}

/// A group of candidate trajectories with group-normalized advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub trajectories: Vec<Trajectory>,
    pub advantages: Vec<f64>,
}

impl Group {
    /// Builds a group from rewarded trajectories, computing advantages
    /// by group mean/std normalization.
    pub fn from_rewards(
        trajectories: Vec<Trajectory>,
        rewards: &[f64],
    ) -> Result<Group, ObjectiveError> {
        if trajectories.len() != rewards.len() {
            return Err(ObjectiveError::AdvantageMismatch {
                trajectories: trajectories.len(),
                advantages: rewards.len(),
            });
        }
        let advantages = group_advantages(rewards)?;
        Ok(Group {
            trajectories,
            advantages,
        })
    }
}

/// A loss with its analytic gradient over the policy logits
/// (row-major, context-major order).
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// Objective hyperparameters: KL/preference strength, clip range, and
/// the path/rationale mixture weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub beta: f64,
    pub epsilon: f64,
    pub alpha_path: f64,
    pub alpha_rationale: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            beta: 0.1,
            epsilon: 0.2,
            alpha_path: 0.5,
            alpha_rationale: 0.5,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if self.beta.is_nan() || self.beta < 0.0 {
            let mut s = String::new();
            s.push_str(if self.beta.is_nan() { "NaN" } else { "negative" });
            return Err(ObjectiveError::NegativeBeta(s));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(ObjectiveError::BadEpsilon);
        }
        let in_unit = |x: f64| (0.0..=1.0).contains(&x);
        if !in_unit(self.alpha_path)
            || !in_unit(self.alpha_rationale)
            || float::abs(self.alpha_path + self.alpha_rationale - 1.0) > 1e-12
        {
            return Err(ObjectiveError::BadMixture);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    /// Plain sum over trajectories (the printed form of the loss).
    Sum,
    /// Sum divided by the number of trajectories.
    MeanPerTrajectory,
}

/// Negative log-likelihood of the batch's labeled tokens.
pub fn sft_loss(policy: &ToyPolicy, batch: &[Trajectory]) -> Result<LossValue, ObjectiveError> {
    sft_loss_with(policy, batch, Reduction::Sum)
}

pub fn sft_loss_with(
    policy: &ToyPolicy,
    batch: &[Trajectory],
    reduction: Reduction,
) -> Result<LossValue, ObjectiveError> {
    if batch.is_empty() {
        return Err(ObjectiveError::EmptyBatch);
    }
    for t in batch {
        t.validate(policy)?;
    }
    let scale = match reduction {
        Reduction::Sum => 1.0,
        Reduction::MeanPerTrajectory => 1.0 / batch.len() as f64,
    };
    let log_rows = policy.all_log_rows();
    let prob_rows = policy.all_prob_rows();
    let vocab = policy.vocab_size();
    let mut value = 0.0;
    let mut gradient = alloc::vec![0.0; policy.n_params()];
    for traj in batch {
        for (&c, &t) in traj.context_ids.iter().zip(&traj.token_ids) {
            value -= log_rows[c][t];
            for v in 0..vocab {
                let indicator = if v == t { 1.0 } else { 0.0 };
                gradient[c * vocab + v] += scale * (prob_rows[c][v] - indicator);
            }
        }
    }
    Ok(LossValue {
        value: value * scale,
        gradient,
    })
}

/// Gradient of a trajectory's log-probability with respect to the
/// policy logits, accumulated into `out` with weight `w`.
fn accumulate_log_prob_grad(
    policy_probs: &[Vec<f64>],
    vocab: usize,
    traj: &Trajectory,
    w: f64,
    out: &mut [f64],
) {
    for (&c, &t) in traj.context_ids.iter().zip(&traj.token_ids) {
        for v in 0..vocab {
            let indicator = if v == t { 1.0 } else { 0.0 };
            out[c * vocab + v] += w * (indicator - policy_probs[c][v]);
        }
    }
}

/// Preference loss: -log sigmoid(beta * margin), with the margin being
/// the policy/reference log-ratio difference between the chosen and
/// rejected trajectories. The reference policy is frozen: the gradient
/// is over the policy logits only.
pub fn dpo_loss(
    policy: &ToyPolicy,
    ref_policy: &ToyPolicy,
    chosen: &Trajectory,
    rejected: &Trajectory,
    beta: f64,
) -> Result<LossValue, ObjectiveError> {
    if !policy.same_shape(ref_policy) {
        return Err(ObjectiveError::ShapeMismatch);
    }
    if beta.is_nan() || beta < 0.0 {
        return Err(ObjectiveError::NegativeBeta("NaN or negative".to_string()));
    }
    if chosen.context_ids == rejected.context_ids && chosen.token_ids == rejected.token_ids {
        return Err(ObjectiveError::IdenticalPair);
    }
    let lp_w = policy.trajectory_log_prob(chosen)?;
    let lp_l = policy.trajectory_log_prob(rejected)?;
    let lp_w_ref = ref_policy.trajectory_log_prob(chosen)?;
    let lp_l_ref = ref_policy.trajectory_log_prob(rejected)?;
    let margin = (lp_w - lp_w_ref) - (lp_l - lp_l_ref);
    let value = float::softplus(-beta * margin);
    // dL/dmargin = -beta * sigmoid(-beta * margin)
    let dmargin = -beta * float::sigmoid(-beta * margin);
    let probs = policy.all_prob_rows();
    let vocab = policy.vocab_size();
    let mut gradient = alloc::vec![0.0; policy.n_params()];
    if beta > 0.0 {
        accumulate_log_prob_grad(&probs, vocab, chosen, dmargin, &mut gradient);
        accumulate_log_prob_grad(&probs, vocab, rejected, -dmargin, &mut gradient);
    }
    Ok(LossValue { value, gradient })
}

const ADVANTAGE_EPS: f64 = 1e-8;

/// Group mean/std normalization of rewards (population std, floored at
/// 1e-8), constant per token within a trajectory.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>, ObjectiveError> {
    let g = rewards.len();
    if g < 2 {
        return Err(ObjectiveError::GroupTooSmall(g));
    }
    if rewards.iter().all(|r| *r == rewards[0]) {
        return Ok(alloc::vec![0.0; g]);
    }
    let mean = rewards.iter().sum::<f64>() / g as f64;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / g as f64;
    let std = float::sqrt(var).max(ADVANTAGE_EPS);
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// Clipped-ratio group objective, negated for minimization. Per token:
/// min(ratio * A, clip(ratio, 1-eps, 1+eps) * A) minus beta times the
/// nonnegative KL estimate k3 = rho - ln(rho) - 1 with
/// rho = pi_ref / pi_theta; terms are averaged 1/G per group and
/// 1/|o_i| per trajectory, then averaged over groups.
pub fn grpo_objective(
    policy: &ToyPolicy,
    old_policy: &ToyPolicy,
    ref_policy: &ToyPolicy,
    groups: &[Group],
    hp: &HyperParams,
) -> Result<LossValue, ObjectiveError> {
    hp.validate()?;
    if groups.is_empty() {
        return Err(ObjectiveError::NoGroups);
    }
    if !policy.same_shape(old_policy) || !policy.same_shape(ref_policy) {
        return Err(ObjectiveError::ShapeMismatch);
    }
    for group in groups {
        if group.trajectories.len() < 2 {
            return Err(ObjectiveError::GroupTooSmall(group.trajectories.len()));
        }
        if group.trajectories.len() != group.advantages.len() {
            return Err(ObjectiveError::AdvantageMismatch {
                trajectories: group.trajectories.len(),
                advantages: group.advantages.len(),
            });
        }
        for t in &group.trajectories {
            t.validate(policy)?;
        }
    }

    let log_rows = policy.all_log_rows();
    let prob_rows = policy.all_prob_rows();
    let old_log_rows = old_policy.all_log_rows();
    let ref_log_rows = ref_policy.all_log_rows();
    let vocab = policy.vocab_size();

    let mut objective = 0.0;
    let mut obj_grad = alloc::vec![0.0; policy.n_params()];
    let group_weight = 1.0 / groups.len() as f64;
    for group in groups {
        let traj_weight = group_weight / group.trajectories.len() as f64;
        for (traj, &advantage) in group.trajectories.iter().zip(&group.advantages) {
            let token_weight = traj_weight / traj.len() as f64;
            for (&c, &t) in traj.context_ids.iter().zip(&traj.token_ids) {
                let lp = log_rows[c][t];
                let ratio = float::exp(lp - old_log_rows[c][t]);
                let clipped = ratio.clamp(1.0 - hp.epsilon, 1.0 + hp.epsilon);
                let unclipped_term = ratio * advantage;
                let clipped_term = clipped * advantage;
                let (term, ratio_grad_coeff) = if unclipped_term <= clipped_term {
                    // d(ratio)/dlogit flows; d term = A * ratio * dlogp
                    (unclipped_term, advantage * ratio)
                } else if (1.0 - hp.epsilon..=1.0 + hp.epsilon).contains(&ratio) {
                    (clipped_term, advantage * ratio)
                } else {
                    (clipped_term, 0.0)
                };

                let rho = float::exp(ref_log_rows[c][t] - lp);
                let k3 = rho - (ref_log_rows[c][t] - lp) - 1.0;
                // d k3 / d logp = 1 - rho
                let k3_grad_coeff = 1.0 - rho;

                objective += token_weight * (term - hp.beta * k3);
                let coeff = token_weight * (ratio_grad_coeff - hp.beta * k3_grad_coeff);
                if coeff != 0.0 {
                    for v in 0..vocab {
                        let indicator = if v == t { 1.0 } else { 0.0 };
                        obj_grad[c * vocab + v] += coeff * (indicator - prob_rows[c][v]);
                    }
                }
            }
        }
    }

    Ok(LossValue {
        value: -objective,
        gradient: obj_grad.into_iter().map(|g| -g).collect(),
    })
}

/// Exact categorical KL(policy || ref) for one context row, for
/// cross-checking the k3 estimator on toy policies.
pub fn exact_kl(policy: &ToyPolicy, ref_policy: &ToyPolicy, context: usize) -> f64 {
    let p = policy.prob_row(context);
    let lp = policy.log_prob_row(context);
    let lq = ref_policy.log_prob_row(context);
    p.iter()
        .zip(lp.iter().zip(&lq))
        .map(|(pi, (lpi, lqi))| pi * (lpi - lqi))
        .sum()
}

/// Per-token k3 KL estimate for one (context, token) pair.
pub fn k3_estimate(policy: &ToyPolicy, ref_policy: &ToyPolicy, context: usize, token: usize) -> f64 {
    let lp = policy.log_prob_row(context)[token];
    let lq = ref_policy.log_prob_row(context)[token];
    let rho = float::exp(lq - lp);
    rho - (lq - lp) - 1.0
}

/// 1 when the normalized prediction equals the gold label, else 0.
pub fn rule_reward(prediction: &str, gold: &str) -> f64 {
    if exact_match(prediction, gold) {
        1.0
    } else {
        0.0
    }
}

/// 1 when the normalized labels match, else -1.
pub fn rm_r1_reward(predicted_label: &str, gold_label: &str) -> f64 {
    if exact_match(predicted_label, gold_label) {
        1.0
    } else {
        -1.0
    }
}

/// Convex combination of the path and rationale SFT losses.
pub fn dss_loss(
    policy: &ToyPolicy,
    path_batch: &[Trajectory],
    rationale_batch: &[Trajectory],
    hp: &HyperParams,
) -> Result<LossValue, ObjectiveError> {
    hp.validate()?;
    let path = sft_loss(policy, path_batch)?;
    let rationale = sft_loss(policy, rationale_batch)?;
    let value = hp.alpha_path * path.value + hp.alpha_rationale * rationale.value;
    let gradient = path
        .gradient
        .iter()
        .zip(&rationale.gradient)
        .map(|(p, r)| hp.alpha_path * p + hp.alpha_rationale * r)
        .collect();
    Ok(LossValue { value, gradient })
}

/// Result of one finite-difference comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub op: String,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub pass: bool,
}

pub const GRADCHECK_DEFAULT_STEP: f64 = 1e-5;
pub const GRADCHECK_DEFAULT_TOL: f64 = 1e-4;

/// Central finite differences over every logit, compared against the
/// analytic gradient. Relative error falls back to absolute below 1e-8
/// magnitude. A non-finite loss fails immediately, naming the
/// perturbed parameter.
pub fn finite_diff_gradcheck<F>(
    op: &str,
    loss_fn: F,
    policy: &ToyPolicy,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport, ObjectiveError>
where
    F: Fn(&ToyPolicy) -> Result<LossValue, ObjectiveError>,
{
    let base = loss_fn(policy)?;
    if !base.value.is_finite() {
        return Ok(fail_report(op, policy.n_params()));
    }
    let mut max_err = 0.0f64;
    let mut worst = 0usize;
    for i in 0..policy.n_params() {
        let plus = loss_fn(&policy.perturbed(i, h))?;
        let minus = loss_fn(&policy.perturbed(i, -h))?;
        if !plus.value.is_finite() || !minus.value.is_finite() {
            return Ok(GradCheckReport {
                op: op.to_string(),
                max_rel_err: f64::INFINITY,
                worst_index: i,
                pass: false,
            });
        }
        let numeric = (plus.value - minus.value) / (2.0 * h);
        let analytic = base.gradient[i];
        let scale = float::abs(numeric).max(float::abs(analytic));
        let err = if scale < 1e-8 {
            float::abs(numeric - analytic)
        } else {
            float::abs(numeric - analytic) / scale
        };
        if err > max_err {
            max_err = err;
            worst = i;
        }
    }
    Ok(GradCheckReport {
        op: op.to_string(),
        max_rel_err: max_err,
        worst_index: worst,
        pass: max_err <= tol,
    })
}

fn fail_report(op: &str, n_params: usize) -> GradCheckReport {
    GradCheckReport {
        op: op.to_string(),
        max_rel_err: f64::INFINITY,
        worst_index: n_params,
        pass: false,
    }
}

/// Which loss a gradcheck run exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradCheckOp {
    Sft,
    Dpo,
    Grpo,
    Dss,
}

impl GradCheckOp {
    pub const ALL: [GradCheckOp; 4] = [
        GradCheckOp::Sft,
        GradCheckOp::Dpo,
        GradCheckOp::Grpo,
        GradCheckOp::Dss,
    ];

    pub fn token(&self) -> &'static str {
        match self {
            GradCheckOp::Sft => "sft",
            GradCheckOp::Dpo => "dpo",
            GradCheckOp::Grpo => "grpo",
            GradCheckOp::Dss => "dss",
        }
    }

    pub fn from_token(s: &str) -> Option<GradCheckOp> {
        match s {
            "sft" => Some(GradCheckOp::Sft),
            "dpo" => Some(GradCheckOp::Dpo),
            "grpo" => Some(GradCheckOp::Grpo),
            "dss" => Some(GradCheckOp::Dss),
            _ => None,
        }
    }
}

fn random_trajectory(policy: &ToyPolicy, rng: &mut DetRng) -> Trajectory {
    let len = rng.range_inclusive(1, 3);
    let mut contexts = Vec::with_capacity(len);
    let mut tokens = Vec::with_capacity(len);
    for _ in 0..len {
        contexts.push(rng.below(policy.contexts()));
        tokens.push(rng.below(policy.vocab_size()));
    }
    Trajectory::new(contexts, tokens)
}

/// Runs a finite-difference check of one op on randomized fixtures of
/// the given shape. `beta` overrides the DPO/GRPO beta when set.
pub fn run_gradcheck(
    op: GradCheckOp,
    vocab: usize,
    contexts: usize,
    seed: u64,
    beta: Option<f64>,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport, ObjectiveError> {
    let mut rng = DetRng::substream(seed, op.token());
    let policy = ToyPolicy::random(contexts, vocab, &mut rng);
    match op {
        GradCheckOp::Sft => {
            let batch: Vec<Trajectory> =
                (0..3).map(|_| random_trajectory(&policy, &mut rng)).collect();
            finite_diff_gradcheck(op.token(), |p| sft_loss(p, &batch), &policy, h, tol)
        }
        GradCheckOp::Dpo => {
            let ref_policy = ToyPolicy::random(contexts, vocab, &mut rng);
            let chosen = random_trajectory(&policy, &mut rng);
            let rejected = loop {
                let candidate = random_trajectory(&policy, &mut rng);
                if candidate.context_ids != chosen.context_ids
                    || candidate.token_ids != chosen.token_ids
                {
                    break candidate;
                }
            };
            let beta = beta.unwrap_or(1.0);
            finite_diff_gradcheck(
                op.token(),
                |p| dpo_loss(p, &ref_policy, &chosen, &rejected, beta),
                &policy,
                h,
                tol,
            )
        }
        GradCheckOp::Grpo => {
            let old_policy = ToyPolicy::random(contexts, vocab, &mut rng);
            let ref_policy = ToyPolicy::random(contexts, vocab, &mut rng);
            let hp = HyperParams {
                beta: beta.unwrap_or(0.1),
                ..HyperParams::default()
            };
            let mut groups = Vec::new();
            for _ in 0..2 {
                let trajectories: Vec<Trajectory> =
                    (0..3).map(|_| random_trajectory(&policy, &mut rng)).collect();
                let rewards: Vec<f64> = (0..3).map(|_| rng.below(2) as f64).collect();
                groups.push(Group::from_rewards(trajectories, &rewards)?);
            }
            finite_diff_gradcheck(
                op.token(),
                |p| grpo_objective(p, &old_policy, &ref_policy, &groups, &hp),
                &policy,
                h,
                tol,
            )
        }
        GradCheckOp::Dss => {
            let path_batch: Vec<Trajectory> =
                (0..2).map(|_| random_trajectory(&policy, &mut rng)).collect();
            let rationale_batch: Vec<Trajectory> =
                (0..2).map(|_| random_trajectory(&policy, &mut rng)).collect();
            let hp = HyperParams::default();
            finite_diff_gradcheck(
                op.token(),
                |p| dss_loss(p, &path_batch, &rationale_batch, &hp),
                &policy,
                h,
                tol,
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    const LN_2: f64 = core::f64::consts::LN_2;

    fn one_token(context: usize, token: usize) -> Trajectory {
        Trajectory::new(vec![context], vec![token])
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = DetRng::new(0);
        for _ in 0..20 {
            let p = ToyPolicy::random(3, 8, &mut rng);
            for c in 0..3 {
                let sum: f64 = p.prob_row(c).iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sft_uniform_vocab_four_is_ln_four() {
        let policy = ToyPolicy::uniform(1, 4);
        let loss = sft_loss(&policy, &[one_token(0, 2)]).unwrap();
        assert!((loss.value - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn sft_near_deterministic_is_near_zero() {
        let policy = ToyPolicy::new(1, 2, vec![30.0, 0.0]).unwrap();
        let loss = sft_loss(&policy, &[one_token(0, 0)]).unwrap();
        assert!(loss.value < 1e-9);
    }

    #[test]
    fn sft_factorizes_over_tokens() {
        let policy = ToyPolicy::uniform(1, 2);
        let traj = Trajectory::new(vec![0, 0], vec![0, 1]);
        let loss = sft_loss(&policy, &[traj]).unwrap();
        assert!((loss.value - 2.0 * LN_2).abs() < 1e-12);
    }

    #[test]
    fn sft_mean_reduction_divides_by_batch() {
        let policy = ToyPolicy::uniform(1, 2);
        let batch = vec![one_token(0, 0), one_token(0, 1)];
        let sum = sft_loss_with(&policy, &batch, Reduction::Sum).unwrap();
        let mean = sft_loss_with(&policy, &batch, Reduction::MeanPerTrajectory).unwrap();
        assert!((sum.value - 2.0 * LN_2).abs() < 1e-12);
        assert!((mean.value - LN_2).abs() < 1e-12);
    }

    #[test]
    fn dpo_at_reference_is_ln_two_for_any_beta() {
        let mut rng = DetRng::new(5);
        let policy = ToyPolicy::random(2, 4, &mut rng);
        let chosen = one_token(0, 1);
        let rejected = one_token(1, 2);
        for beta in [0.0, 0.1, 1.0, 5.0] {
            let loss = dpo_loss(&policy, &policy.clone(), &chosen, &rejected, beta).unwrap();
            assert!(
                (loss.value - LN_2).abs() < 1e-12,
                "beta={beta}: {}",
                loss.value
            );
        }
    }

    #[test]
    fn dpo_margin_ln_three_gives_ln_four_thirds() {
        let policy = ToyPolicy::new(1, 2, vec![3.0f64.ln(), 0.0]).unwrap();
        let reference = ToyPolicy::uniform(1, 2);
        let loss = dpo_loss(&policy, &reference, &one_token(0, 0), &one_token(0, 1), 1.0).unwrap();
        assert!((loss.value - (4.0f64 / 3.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn dpo_beta_zero_is_constant_with_zero_gradient() {
        let mut rng = DetRng::new(7);
        let policy = ToyPolicy::random(1, 4, &mut rng);
        let reference = ToyPolicy::random(1, 4, &mut rng);
        let loss = dpo_loss(&policy, &reference, &one_token(0, 0), &one_token(0, 1), 0.0).unwrap();
        assert!((loss.value - LN_2).abs() < 1e-12);
        assert!(loss.gradient.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn dpo_rejects_identical_pair() {
        let policy = ToyPolicy::uniform(1, 2);
        let t = one_token(0, 0);
        assert!(matches!(
            dpo_loss(&policy, &policy.clone(), &t, &t.clone(), 1.0),
            Err(ObjectiveError::IdenticalPair)
        ));
    }

    #[test]
    fn advantages_hand_computed() {
        assert_eq!(group_advantages(&[1.0, 0.0]).unwrap(), vec![1.0, -1.0]);
        assert_eq!(
            group_advantages(&[1.0, 0.0, 1.0, 0.0]).unwrap(),
            vec![1.0, -1.0, 1.0, -1.0]
        );
        let zeros = group_advantages(&[0.7, 0.7, 0.7]).unwrap();
        assert!(zeros.iter().all(|&a| a == 0.0));
        assert!(matches!(
            group_advantages(&[1.0]),
            Err(ObjectiveError::GroupTooSmall(1))
        ));
    }

    #[test]
    fn advantages_are_location_scale_normalized() {
        let mut rng = DetRng::new(11);
        let rewards: Vec<f64> = (0..16).map(|_| rng.next_f64() * 3.0).collect();
        let adv = group_advantages(&rewards).unwrap();
        let mean = adv.iter().sum::<f64>() / adv.len() as f64;
        let var = adv.iter().map(|a| a * a).sum::<f64>() / adv.len() as f64;
        assert!(mean.abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-9);
    }

    fn null_groups() -> Vec<Group> {
        let trajectories = vec![one_token(0, 0), one_token(0, 1)];
        vec![Group {
            trajectories,
            advantages: vec![0.0, 0.0],
        }]
    }

    #[test]
    fn grpo_null_point_is_exactly_zero() {
        let policy = ToyPolicy::uniform(1, 2);
        let groups = null_groups();
        let hp = HyperParams::default();
        let loss =
            grpo_objective(&policy, &policy.clone(), &policy.clone(), &groups, &hp).unwrap();
        assert_eq!(loss.value, 0.0);
        assert!(loss.gradient.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn grpo_kl_vanishes_at_reference() {
        // policy == ref but policy != old, nonzero advantages: the KL
        // term contributes exactly zero.
        let policy = ToyPolicy::new(1, 2, vec![3.0f64.ln(), 0.0]).unwrap();
        let old = ToyPolicy::uniform(1, 2);
        let groups = vec![Group {
            trajectories: vec![one_token(0, 0), one_token(0, 1)],
            advantages: vec![1.0, -1.0],
        }];
        let with_kl = HyperParams {
            beta: 5.0,
            ..HyperParams::default()
        };
        let without_kl = HyperParams {
            beta: 0.0,
            ..HyperParams::default()
        };
        let a = grpo_objective(&policy, &old, &policy.clone(), &groups, &with_kl).unwrap();
        let b = grpo_objective(&policy, &old, &policy.clone(), &groups, &without_kl).unwrap();
        assert!((a.value - b.value).abs() < 1e-15);
    }

    #[test]
    fn grpo_clip_branch_hand_derived() {
        // ratio(token 0) = 0.75 / 0.5 = 1.5 with eps = 0.2 clips to 1.2;
        // ratio(token 1) = 0.25 / 0.5 = 0.5 with advantage -1 clips to
        // min(-0.5, -0.8) = -0.8. Objective = (1.2 - 0.8) / 2 = 0.2.
        let policy = ToyPolicy::new(1, 2, vec![3.0f64.ln(), 0.0]).unwrap();
        let old = ToyPolicy::uniform(1, 2);
        let groups = vec![Group {
            trajectories: vec![one_token(0, 0), one_token(0, 1)],
            advantages: vec![1.0, -1.0],
        }];
        let hp = HyperParams {
            beta: 0.0,
            epsilon: 0.2,
            ..HyperParams::default()
        };
        let loss = grpo_objective(&policy, &old, &old.clone(), &groups, &hp).unwrap();
        assert!((loss.value - (-0.2)).abs() < 1e-12);
    }

    #[test]
    fn k3_is_nonnegative_and_zero_at_equality() {
        let mut rng = DetRng::new(13);
        for _ in 0..50 {
            let p = ToyPolicy::random(2, 4, &mut rng);
            let q = ToyPolicy::random(2, 4, &mut rng);
            for c in 0..2 {
                for t in 0..4 {
                    assert!(k3_estimate(&p, &q, c, t) >= 0.0);
                    assert!(k3_estimate(&p, &p, c, t) == 0.0);
                }
            }
        }
    }

    #[test]
    fn rewards_follow_normalized_equality() {
        assert_eq!(rule_reward("p3", "p3"), 1.0);
        assert_eq!(rule_reward("p3", "p7"), 0.0);
        assert_eq!(rule_reward(" P3 ", "p3"), 1.0);
        assert_eq!(rm_r1_reward("a", "a"), 1.0);
        assert_eq!(rm_r1_reward("a", "b"), -1.0);
        assert_eq!(rm_r1_reward(" A ", "a"), 1.0);
    }

    #[test]
    fn dss_identities() {
        let policy = ToyPolicy::uniform(1, 2);
        let batch = vec![one_token(0, 0)];
        let hp = HyperParams::default();
        let dss = dss_loss(&policy, &batch, &batch, &hp).unwrap();
        let sft = sft_loss(&policy, &batch).unwrap();
        assert!((dss.value - sft.value).abs() < 1e-15);
        assert!((dss.value - LN_2).abs() < 1e-12);

        let path_only = HyperParams {
            alpha_path: 1.0,
            alpha_rationale: 0.0,
            ..HyperParams::default()
        };
        let other = vec![one_token(0, 1)];
        let degenerate = dss_loss(&policy, &batch, &other, &path_only).unwrap();
        assert_eq!(degenerate.value, sft.value);
    }

    #[test]
    fn dss_is_linear_in_the_mixture() {
        let mut rng = DetRng::new(17);
        let policy = ToyPolicy::random(2, 4, &mut rng);
        let a = vec![random_trajectory(&policy, &mut rng)];
        let b = vec![random_trajectory(&policy, &mut rng)];
        for alpha in [0.0, 0.25, 0.5, 0.9, 1.0] {
            let hp = HyperParams {
                alpha_path: alpha,
                alpha_rationale: 1.0 - alpha,
                ..HyperParams::default()
            };
            let dss = dss_loss(&policy, &a, &b, &hp).unwrap();
            let la = sft_loss(&policy, &a).unwrap();
            let lb = sft_loss(&policy, &b).unwrap();
            let expected = alpha * la.value + (1.0 - alpha) * lb.value;
            assert!((dss.value - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn gradcheck_passes_on_sft() {
        for seed in 0..20 {
            let report = run_gradcheck(
                GradCheckOp::Sft,
                4,
                3,
                seed,
                None,
                GRADCHECK_DEFAULT_STEP,
                GRADCHECK_DEFAULT_TOL,
            )
            .unwrap();
            assert!(report.pass, "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn gradcheck_detects_corrupted_gradient() {
        let policy = ToyPolicy::uniform(1, 4);
        let batch = vec![one_token(0, 2)];
        let report = finite_diff_gradcheck(
            "sft-corrupted",
            |p| {
                let mut loss = sft_loss(p, &batch)?;
                loss.gradient[1] += 0.1;
                Ok(loss)
            },
            &policy,
            GRADCHECK_DEFAULT_STEP,
            GRADCHECK_DEFAULT_TOL,
        )
        .unwrap();
        assert!(!report.pass);
        assert_eq!(report.worst_index, 1);
    }

    #[test]
    fn gradcheck_constant_function_passes() {
        let report = run_gradcheck(
            GradCheckOp::Dpo,
            4,
            1,
            3,
            Some(0.0),
            GRADCHECK_DEFAULT_STEP,
            GRADCHECK_DEFAULT_TOL,
        )
        .unwrap();
        assert!(report.pass);
        assert_eq!(report.max_rel_err, 0.0);
    }

    #[test]
    fn gradcheck_fails_fast_on_non_finite_loss() {
        let policy = ToyPolicy::uniform(1, 2);
        let report = finite_diff_gradcheck(
            "broken",
            |_| {
                Ok(LossValue {
                    value: f64::NAN,
                    gradient: vec![0.0, 0.0],
                })
            },
            &policy,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(!report.pass);
    }

    #[test]
    fn policy_bundle_roundtrip() {
        let mut rng = DetRng::new(21);
        let policy = ToyPolicy::random(3, 4, &mut rng);
        let bundle = policy.to_bundle();
        assert_eq!(bundle.get("logits").unwrap().shape, vec![3, 4]);
        let back = ToyPolicy::from_bundle(&bundle).unwrap();
        assert_eq!(back.contexts(), 3);
        assert_eq!(back.vocab_size(), 4);
        for (a, b) in policy.logits().iter().zip(back.logits()) {
            assert!((a - b).abs() < 1e-6); // f32 cast on the way out
        }
        let empty = TensorBundle::new();
        assert!(ToyPolicy::from_bundle(&empty).is_err());
    }

    #[test]
    fn exact_kl_matches_expected_k3_direction() {
        let p = ToyPolicy::new(1, 2, vec![1.0, 0.0]).unwrap();
        let q = ToyPolicy::uniform(1, 2);
        assert!(exact_kl(&p, &q, 0) > 0.0);
        assert!(exact_kl(&p, &p, 0).abs() < 1e-15);
    }
}
