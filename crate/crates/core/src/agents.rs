//! Redundant query pool and the three-stage agent selection schedule.
//!
//! * Warm-up epochs pick the top-`k` queries by score.
//! * Reward-guided epochs sample every query independently from
//!   `Bernoulli(sigmoid(score))`, soft-mask the unselected ones, and push the
//!   scores with a score-function (REINFORCE) estimator plus an entropy bonus.
//! * After training the top-`k` by score become the deployed agents.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sigmoid, Rng, Tensor};

/// Probabilities are clamped this far from 0 and 1 before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    WarmUp,
    RewardsGuided,
    Final,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::WarmUp => "warmup",
            Stage::RewardsGuided => "rewards_guided",
            Stage::Final => "final",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "warmup" => Ok(Stage::WarmUp),
            "rewards_guided" => Ok(Stage::RewardsGuided),
            "final" => Ok(Stage::Final),
            other => Err(Error::Format(format!("unknown stage '{other}'"))),
        }
    }
}

/// Schedule and reward hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    /// Initial time constant of the fusion coefficient.
    pub tau: f64,
    /// Multiplicative decay applied every `tau_decay_every` epochs.
    pub tau_decay: f64,
    pub tau_decay_every: usize,
    pub tau_min: f64,
    pub beta_mask: f64,
    pub mu_entropy: f64,
    pub stage1_epochs: usize,
    pub stage2_period: usize,
    /// Lower clamp on the task loss before inverting it into a global reward.
    pub eps_loss: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            tau: 20.0,
            tau_decay: 0.9,
            tau_decay_every: 10,
            tau_min: 5.0,
            beta_mask: 0.3,
            mu_entropy: 0.01,
            stage1_epochs: 15,
            stage2_period: 5,
            eps_loss: 1e-6,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.tau_min > 0.0) || !(self.tau >= self.tau_min) {
            return bad("need tau >= tau_min > 0");
        }
        if !(0.0..1.0).contains(&self.beta_mask) {
            return bad("beta_mask must lie in [0, 1)");
        }
        if !(self.mu_entropy >= 0.0) {
            return bad("mu_entropy must be non-negative");
        }
        if !(self.tau_decay > 0.0 && self.tau_decay <= 1.0) {
            return bad("tau_decay must lie in (0, 1]");
        }
        if self.tau_decay_every == 0 || self.stage2_period == 0 {
            return bad("tau_decay_every and stage2_period must be positive");
        }
        if !(self.eps_loss > 0.0) {
            return bad("eps_loss must be positive");
        }
        Ok(())
    }
}

/// Learnable queries, their scores, and the current stage.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryPool {
    /// `M×C` learnable queries.
    pub queries: Tensor,
    /// One score per query; `sigmoid(score)` is its sampling probability.
    pub scores: Vec<f64>,
    pub k: usize,
    pub stage: Stage,
}

impl QueryPool {
    /// Pool with all scores at zero (probability one half).
    pub fn new(queries: Tensor, k: usize) -> Result<Self> {
        let (m, _) = queries.shape2()?;
        let pool = QueryPool {
            queries,
            scores: vec![0.0; m],
            k,
            stage: Stage::WarmUp,
        };
        pool.validate()?;
        Ok(pool)
    }

    pub fn size(&self) -> usize {
        self.scores.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.size();
        if self.queries.rows() != m {
            return Err(Error::Dimension(format!(
                "{} queries but {m} scores",
                self.queries.rows()
            )));
        }
        if self.k == 0 || self.k > m {
            return Err(Error::Config(format!(
                "agent count k={} must satisfy 1 <= k <= M={m}",
                self.k
            )));
        }
        if self.scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Numerical("non-finite query score".into()));
        }
        Ok(())
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.scores.iter().map(|&s| sigmoid(s)).collect()
    }
}

/// Indices of the `k` largest scores, ties broken toward the lower index,
/// returned in ascending index order.
pub fn top_k_indices(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > scores.len() {
        return Err(Error::Config(format!(
            "cannot select k={k} of {} queries",
            scores.len()
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut picked = order[..k].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Warm-up selection: the top-`k` queries by score.
///
/// `aggregated` holds the attention-aggregated queries and only has to agree
/// with the pool size.
pub fn warmup_topk(pool: &QueryPool, aggregated: &Tensor) -> Result<Vec<usize>> {
    if pool.stage != Stage::WarmUp {
        return Err(Error::Contract(format!(
            "warm-up selection in stage {}",
            pool.stage.as_str()
        )));
    }
    if aggregated.rows() != pool.size() {
        return Err(Error::Dimension(format!(
            "{} aggregated queries for a pool of {}",
            aggregated.rows(),
            pool.size()
        )));
    }
    top_k_indices(&pool.scores, pool.k)
}

/// Deployed agents after training: top-`k` by score.
pub fn final_select(pool: &QueryPool) -> Result<Vec<usize>> {
    top_k_indices(&pool.scores, pool.k)
}

fn cosine_or_zero(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (d / (na * nb)).clamp(-1.0, 1.0)
}

/// Mean of the query's cosine with the pooled image and pooled point features.
///
/// A zero-norm operand contributes a cosine of zero.
pub fn local_reward(query: &[f64], image_pooled: &[f64], points_pooled: &[f64]) -> f64 {
    0.5 * (cosine_or_zero(query, image_pooled) + cosine_or_zero(query, points_pooled))
}

/// Inverse of the task loss, with the loss clamped below at `eps_loss`.
pub fn global_reward(task_loss: f64, eps_loss: f64) -> Result<f64> {
    if !(task_loss >= 0.0) {
        return Err(Error::Contract(format!(
            "task loss must be non-negative, got {task_loss}"
        )));
    }
    Ok(1.0 / task_loss.max(eps_loss))
}

/// `1 − exp(−epoch/τ)`.
pub fn fusion_alpha(epoch: usize, tau: f64) -> f64 {
    1.0 - (-(epoch as f64) / tau).exp()
}

pub fn fused_reward(local: f64, global: f64, alpha: f64) -> f64 {
    alpha * local + (1.0 - alpha) * global
}

/// Time constant for `epoch`: `max(τ_min, τ₀·decay^⌊epoch/every⌋)`.
pub fn decay_tau(cfg: &RewardConfig, epoch: usize) -> f64 {
    let steps = (epoch / cfg.tau_decay_every) as i32;
    (cfg.tau * cfg.tau_decay.powi(steps)).max(cfg.tau_min)
}

/// Stage for a 1-based training epoch.
///
/// The first `stage1_epochs` are warm-up; afterwards every multiple of
/// `stage2_period` is reward-guided and the rest stay warm-up. Epochs past
/// `total_epochs` are final.
pub fn stage_of_epoch(epoch: usize, cfg: &RewardConfig, total_epochs: usize) -> Stage {
    if epoch > total_epochs {
        Stage::Final
    } else if epoch > cfg.stage1_epochs && epoch % cfg.stage2_period == 0 {
        Stage::RewardsGuided
    } else {
        Stage::WarmUp
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// `a·ln p + (1−a)·ln(1−p)`.
pub fn log_prob(action: bool, p: f64) -> f64 {
    let p = clamp_prob(p);
    if action {
        p.ln()
    } else {
        (1.0 - p).ln()
    }
}

/// `β + (1 − β)·a`.
pub fn soft_mask(action: bool, beta: f64) -> f64 {
    if action {
        1.0
    } else {
        beta
    }
}

/// One Bernoulli draw over the whole pool.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOutcome {
    pub actions: Vec<bool>,
    pub probs: Vec<f64>,
    pub soft_masks: Vec<f64>,
    pub log_probs: Vec<f64>,
    /// Per-query rewards; zero until [`SelectionOutcome::set_rewards`] runs.
    pub rewards: Vec<f64>,
    /// Mean reward over the pool.
    pub baseline: f64,
    /// Query switched on by the minimum-one rule, if any.
    pub forced: Option<usize>,
}

impl SelectionOutcome {
    pub fn selected(&self) -> Vec<usize> {
        self.actions
            .iter()
            .enumerate()
            .filter_map(|(i, &a)| a.then_some(i))
            .collect()
    }

    /// Stores per-query rewards and recomputes the baseline.
    pub fn set_rewards(&mut self, rewards: Vec<f64>) -> Result<()> {
        if rewards.len() != self.actions.len() {
            return Err(Error::Dimension(format!(
                "{} rewards for {} queries",
                rewards.len(),
                self.actions.len()
            )));
        }
        self.baseline = rewards.iter().sum::<f64>() / rewards.len() as f64;
        self.rewards = rewards;
        Ok(())
    }
}

/// Builds an outcome from given actions; used by sampling and by tests that
/// fix the actions.
pub fn outcome_from_actions(actions: Vec<bool>, probs: Vec<f64>, beta: f64) -> SelectionOutcome {
    let m = actions.len();
    SelectionOutcome {
        soft_masks: actions.iter().map(|&a| soft_mask(a, beta)).collect(),
        log_probs: actions
            .iter()
            .zip(&probs)
            .map(|(&a, &p)| log_prob(a, p))
            .collect(),
        actions,
        probs,
        rewards: vec![0.0; m],
        baseline: 0.0,
        forced: None,
    }
}

/// Independent `Bernoulli(sigmoid(score))` draw for every query.
///
/// If nothing is drawn, the most probable query (lowest index on ties) is
/// switched on.
pub fn sample_actions(pool: &QueryPool, rng: &mut Rng, beta: f64) -> Result<SelectionOutcome> {
    if pool.stage != Stage::RewardsGuided {
        return Err(Error::Contract(format!(
            "Bernoulli selection in stage {}",
            pool.stage.as_str()
        )));
    }
    let probs = pool.probabilities();
    let mut actions: Vec<bool> = probs.iter().map(|&p| rng.bernoulli(p)).collect();
    let mut forced = None;
    if !actions.iter().any(|&a| a) {
        let best = (0..probs.len())
            .max_by(|&a, &b| probs[a].total_cmp(&probs[b]).then(b.cmp(&a)))
            .expect("non-empty pool");
        actions[best] = true;
        forced = Some(best);
    }
    let mut out = outcome_from_actions(actions, probs, beta);
    out.forced = forced;
    Ok(out)
}

/// Policy-gradient loss and its gradient with respect to the scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ReinforceLoss {
    pub loss: f64,
    pub grad_scores: Vec<f64>,
    /// Set when the pool is too small for the baseline to mean anything.
    pub degenerate_baseline: bool,
}

/// `L_g = −Σ (reward_i − baseline)·log P(a_i)`, rewards held constant.
pub fn reinforce_loss(outcome: &SelectionOutcome) -> ReinforceLoss {
    let m = outcome.actions.len();
    if m < 2 {
        return ReinforceLoss {
            loss: 0.0,
            grad_scores: vec![0.0; m],
            degenerate_baseline: true,
        };
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(m);
    for i in 0..m {
        let adv = outcome.rewards[i] - outcome.baseline;
        loss -= adv * outcome.log_probs[i];
        let a = if outcome.actions[i] { 1.0 } else { 0.0 };
        grad.push(-adv * (a - outcome.probs[i]));
    }
    ReinforceLoss {
        loss,
        grad_scores: grad,
        degenerate_baseline: false,
    }
}

/// Bernoulli entropy `−[p ln p + (1−p) ln(1−p)]` with `p` clamped.
pub fn bernoulli_entropy(p: f64) -> f64 {
    let p = clamp_prob(p);
    -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
}

/// Per-query entropies, their sum, and the gradient of the sum w.r.t. the scores.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyTerm {
    pub per_query: Vec<f64>,
    pub total: f64,
    pub grad_scores: Vec<f64>,
}

pub fn entropy_bonus(pool: &QueryPool) -> EntropyTerm {
    let probs = pool.probabilities();
    let per_query: Vec<f64> = probs.iter().map(|&p| bernoulli_entropy(p)).collect();
    let grad_scores = probs
        .iter()
        .map(|&p| {
            let pc = clamp_prob(p);
            ((1.0 - pc) / pc).ln() * p * (1.0 - p)
        })
        .collect();
    EntropyTerm {
        total: per_query.iter().sum(),
        per_query,
        grad_scores,
    }
}

/// `L_g − μ·Σ entropy`.
pub fn regularized_loss(l_g: f64, entropy_total: f64, mu: f64) -> f64 {
    l_g - mu * entropy_total
}

/// Reward-guided loss with entropy regularization and its score gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct StageTwoLoss {
    pub reinforce: f64,
    pub entropy: f64,
    pub loss: f64,
    pub grad_scores: Vec<f64>,
    pub degenerate_baseline: bool,
}

pub fn stage_two_loss(outcome: &SelectionOutcome, pool: &QueryPool, mu: f64) -> StageTwoLoss {
    let rl = reinforce_loss(outcome);
    let ent = entropy_bonus(pool);
    let grad_scores = rl
        .grad_scores
        .iter()
        .zip(&ent.grad_scores)
        .map(|(g, e)| g - mu * e)
        .collect();
    StageTwoLoss {
        reinforce: rl.loss,
        entropy: ent.total,
        loss: regularized_loss(rl.loss, ent.total, mu),
        grad_scores,
        degenerate_baseline: rl.degenerate_baseline,
    }
}

/// Rewards credited to the queries that took part in the interaction.
///
/// A query earns its fused reward only when it was sampled; unsampled queries
/// earn zero. Without this the reward would not depend on the action and the
/// estimator would have zero drift.
pub fn credit_rewards(outcome: &SelectionOutcome, fused: &[f64]) -> Vec<f64> {
    outcome
        .actions
        .iter()
        .zip(fused)
        .map(|(&a, &r)| if a { r } else { 0.0 })
        .collect()
}

crate::kv::kv_fields!(RewardConfig {
    "tau" => tau,
    "tau_decay" => tau_decay,
    "tau_decay_every" => tau_decay_every,
    "tau_min" => tau_min,
    "beta_mask" => beta_mask,
    "mu_entropy" => mu_entropy,
    "stage1_epochs" => stage1_epochs,
    "stage2_period" => stage2_period,
    "eps_loss" => eps_loss,
});
