//! Agent selection on the planted task, with the network replaced by its
//! rewards: queries are fixed and only their scores learn.
//!
//! Warm-up steps descend `1 − (1/k)·Σ_{top-k} sigmoid(score)·r` where `r` is
//! the local reward, i.e. the gated contribution of the selected agents.
//! Reward-guided steps sample the pool and follow the policy gradient with
//! the task loss `1 − mean local reward of the sampled queries`.

use rayon::prelude::*;
use serde::Serialize;

use crate::agents::{
    credit_rewards, decay_tau, final_select, fused_reward, fusion_alpha, global_reward,
    local_reward, sample_actions, stage_of_epoch, stage_two_loss, top_k_indices, QueryPool,
    RewardConfig, Stage,
};
use crate::error::Result;
use crate::numerics::{derive_seed, sigmoid, Rng};
use crate::synth::generate_planted_query_task;

use super::config::PlantedConfig;

pub const TASK_STREAM: u64 = 0x7a5c;
pub const SAMPLE_STREAM: u64 = 0x5a3e;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlantedRun {
    pub seed: u64,
    pub planted: Vec<usize>,
    pub selected: Vec<usize>,
    pub recovered: usize,
}

/// One run; `tri` switches between the three-stage schedule and top-k
/// selection in every epoch.
pub fn run_planted(cfg: &PlantedConfig, reward: &RewardConfig, tri: bool, seed: u64) -> Result<PlantedRun> {
    let task = generate_planted_query_task(
        cfg.m,
        cfg.k,
        cfg.channels,
        &mut Rng::new(derive_seed(seed, TASK_STREAM)),
    )?;
    let local: Vec<f64> = (0..cfg.m)
        .map(|i| local_reward(task.queries.row(i), &task.image_pooled, &task.point_pooled))
        .collect();
    let mut pool = QueryPool::new(task.queries.clone(), cfg.k)?;
    let mut rng = Rng::new(derive_seed(seed, SAMPLE_STREAM));
    for epoch in 1..=cfg.epochs {
        let stage = if tri {
            stage_of_epoch(epoch, reward, cfg.epochs)
        } else {
            Stage::WarmUp
        };
        pool.stage = stage;
        let alpha = fusion_alpha(epoch, decay_tau(reward, epoch));
        for _ in 0..cfg.steps_per_epoch {
            match stage {
                Stage::RewardsGuided => {
                    let mut outcome = sample_actions(&pool, &mut rng, reward.beta_mask)?;
                    let sel = outcome.selected();
                    let mean = sel.iter().map(|&i| local[i]).sum::<f64>() / sel.len() as f64;
                    let global = global_reward((1.0 - mean).max(0.0), reward.eps_loss)?;
                    let fused: Vec<f64> = local.iter().map(|&r| fused_reward(r, global, alpha)).collect();
                    outcome.set_rewards(credit_rewards(&outcome, &fused))?;
                    let s2 = stage_two_loss(&outcome, &pool, reward.mu_entropy);
                    for (s, g) in pool.scores.iter_mut().zip(&s2.grad_scores) {
                        *s -= cfg.lr_reward * g;
                    }
                }
                _ => {
                    for i in top_k_indices(&pool.scores, cfg.k)? {
                        let p = sigmoid(pool.scores[i]);
                        pool.scores[i] += cfg.lr_warmup * p * (1.0 - p) * local[i] / cfg.k as f64;
                    }
                }
            }
        }
    }
    pool.stage = Stage::Final;
    let selected = final_select(&pool)?;
    let recovered = selected
        .iter()
        .filter(|i| task.planted.binary_search(i).is_ok())
        .count();
    Ok(PlantedRun {
        seed,
        planted: task.planted,
        selected,
        recovered,
    })
}

/// `cfg.runs` seeded runs, in seed order.
pub fn planted_suite(cfg: &PlantedConfig, reward: &RewardConfig, tri: bool, seed: u64) -> Result<Vec<PlantedRun>> {
    (0..cfg.runs)
        .into_par_iter()
        .map(|i| run_planted(cfg, reward, tri, derive_seed(seed, i as u64)))
        .collect()
}
