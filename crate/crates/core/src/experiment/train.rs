use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::agents::{
    credit_rewards, decay_tau, fused_reward, fusion_alpha, global_reward, local_reward,
    stage_of_epoch, stage_two_loss, top_k_indices, Stage,
};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::losses::total_loss;
use crate::model::{backward, coarse_loss, forward, policy_for, Model, Prepared};
use crate::numerics::io::write_tensor;
use crate::numerics::{derive_seed, Rng};
use crate::synth::SyntheticPair;

use super::config::ExperimentConfig;

pub const INIT_STREAM: u64 = 0x1a17;
pub const TRAIN_STREAM: u64 = 0x7a19;

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub stage: Stage,
    /// Mean task loss (coarse plus fine) over the epoch's pairs.
    pub l_t: f64,
    /// Mean reward-guided loss, in reward-guided epochs only.
    pub l_full: Option<f64>,
    pub alpha: f64,
    pub tau: f64,
    /// Top-`k` queries by score at the end of the epoch.
    pub selected: Vec<usize>,
}

pub fn log_csv(rows: &[EpochLog]) -> String {
    let mut s = String::from("epoch,stage,l_t,l_full,alpha,tau,selected\n");
    for r in rows {
        let sel: Vec<String> = r.selected.iter().map(|i| i.to_string()).collect();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.epoch,
            r.stage.as_str(),
            r.l_t,
            r.l_full.map(|v| v.to_string()).unwrap_or_default(),
            r.alpha,
            r.tau,
            sel.join(" ")
        );
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// Stage used at `epoch`; variants without the schedule stay in warm-up.
pub fn stage_for(cfg: &ExperimentConfig, epoch: usize) -> Stage {
    if cfg.variant().tri {
        stage_of_epoch(epoch, &cfg.reward, cfg.epochs)
    } else if epoch > cfg.epochs {
        Stage::Final
    } else {
        Stage::WarmUp
    }
}

pub fn prepare(cfg: &ExperimentConfig, pairs: &[SyntheticPair]) -> Result<Vec<Prepared>> {
    pairs
        .par_iter()
        .map(|p| Prepared::new(p, &cfg.loss, cfg.coarse_pos_overlap))
        .collect()
}

fn dump(dir: &Path, info: &str, fwd: Option<(&crate::numerics::Tensor, &crate::numerics::Tensor)>) -> Result<()> {
    let d = dir.join("nan_dump");
    std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    let p = d.join("info.txt");
    std::fs::write(&p, info).map_err(|e| Error::io(&p, e))?;
    if let Some((fi, fp)) = fwd {
        write_tensor(&d.join("image_descriptors.a2si"), fi)?;
        write_tensor(&d.join("point_descriptors.a2si"), fp)?;
    }
    Ok(())
}

/// Gradient descent over the training pairs. `dump_dir` receives a
/// diagnostic dump if a loss or gradient stops being finite.
pub fn train(cfg: &ExperimentConfig, pairs: &[SyntheticPair], seed: u64, dump_dir: Option<&Path>) -> Result<TrainOutput> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let variant = cfg.variant();
    let preps = prepare(cfg, pairs)?;
    let mut model = Model::init(&cfg.dims(), variant, &mut Rng::new(derive_seed(seed, INIT_STREAM)))?;
    let mut rng = Rng::new(derive_seed(seed, TRAIN_STREAM));
    let lp = &cfg.loss;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..preps.len()).collect();
    for epoch in 1..=cfg.epochs {
        let stage = stage_for(cfg, epoch);
        model.pool.stage = stage;
        let tau = decay_tau(&cfg.reward, epoch);
        let alpha = fusion_alpha(epoch, tau);
        let policy = policy_for(variant, stage, cfg.reward.beta_mask);
        rng.shuffle(&mut order);
        let mut sum_t = 0.0;
        let mut sum_full = 0.0;
        for &i in &order {
            let prep = &preps[i];
            let fwd = forward(&model, prep, policy.as_ref(), &mut rng)?;
            let coarse = coarse_loss(&fwd, prep, lp)?;
            let l_t = coarse.value + prep.fine_loss;
            let mut g = backward(
                &model,
                prep,
                &fwd,
                &coarse.d_a.scale(lp.lambda1),
                &coarse.d_b.scale(lp.lambda1),
            )?;
            let mut l_full = 0.0;
            let sel = fwd.selection.as_ref();
            if let Some(mut outcome) = sel.and_then(|s| s.outcome.clone()) {
                let agg = fwd.aggregated.as_ref().expect("sampled forward aggregates");
                let img = fwd.fi0.mean_rows()?;
                let pts = fwd.fp0.mean_rows()?;
                let global = global_reward(coarse.value, cfg.reward.eps_loss)?;
                let fused: Vec<f64> = (0..agg.rows())
                    .map(|q| fused_reward(local_reward(agg.row(q), &img, &pts), global, alpha))
                    .collect();
                outcome.set_rewards(credit_rewards(&outcome, &fused))?;
                let s2 = stage_two_loss(&outcome, &model.pool, cfg.reward.mu_entropy);
                l_full = s2.loss;
                for (d, s) in g.scores.iter_mut().zip(&s2.grad_scores) {
                    *d += lp.lambda2 * s;
                }
            }
            let objective = total_loss(l_t, l_full, lp, stage);
            if !objective.is_finite() || !g.all_finite() {
                let msg = format!(
                    "epoch = {epoch}\nstage = {}\npair = {}\nl_t = {l_t}\nl_full = {l_full}\nobjective = {objective}\ngradients_finite = {}\n",
                    stage.as_str(),
                    prep.id,
                    g.all_finite()
                );
                if let Some(dir) = dump_dir {
                    dump(dir, &msg, Some((&fwd.fi, &fwd.fp)))?;
                }
                return Err(Error::Numerical(format!(
                    "non-finite training loss at epoch {epoch}, pair {}",
                    prep.id
                )));
            }
            model.apply(&g, cfg.lr)?;
            sum_t += l_t;
            sum_full += l_full;
        }
        let n = preps.len() as f64;
        log.push(EpochLog {
            epoch,
            stage,
            l_t: sum_t / n,
            l_full: (stage == Stage::RewardsGuided).then_some(sum_full / n),
            alpha,
            tau,
            selected: top_k_indices(&model.pool.scores, model.pool.k)?,
        });
    }
    model.pool.stage = Stage::Final;
    Ok(TrainOutput {
        checkpoint: Checkpoint {
            model,
            epoch: cfg.epochs,
            seed,
        },
        log,
    })
}
