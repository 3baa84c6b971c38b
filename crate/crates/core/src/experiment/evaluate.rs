use std::path::Path;

use rayon::prelude::*;

use crate::agents::Stage;
use crate::error::{Error, Result};
use crate::eval::{inlier_ratio, patch_inlier_ratio, registration_rmse, MetricReport, PairMetrics};
use crate::matching::{coarse_match, fine_match, save_correspondence_csv, CorrespondenceSet};
use crate::model::{forward, policy_for, Model, Prepared};
use crate::numerics::{derive_seed, Rng};
use crate::pose::{pose_errors, ransac_pnp, write_trajectory, Correspondence2d3d, RigidTransform};
use crate::synth::SyntheticPair;

use super::config::ExperimentConfig;

pub const EVAL_STREAM: u64 = 0xe7a1;

/// Everything produced for one evaluated pair.
#[derive(Debug, Clone)]
pub struct PairResult {
    pub metrics: PairMetrics,
    pub correspondences: CorrespondenceSet,
    pub estimate: Option<RigidTransform>,
}

/// Runs the deployed model on one pair. Failures of pose estimation are
/// recorded in the metrics; other errors propagate.
pub fn evaluate_pair(
    model: &Model,
    cfg: &ExperimentConfig,
    pair: &SyntheticPair,
    rng: &mut Rng,
    oracle_pose: bool,
) -> Result<PairResult> {
    let prep = Prepared::new(pair, &cfg.loss, cfg.coarse_pos_overlap)?;
    let mut deployed = model.clone();
    deployed.pool.stage = Stage::Final;
    let policy = policy_for(model.variant, Stage::Final, cfg.reward.beta_mask);
    let fwd = forward(&deployed, &prep, policy.as_ref(), rng)?;
    if !fwd.fi.all_finite() || !fwd.fp.all_finite() {
        return Err(Error::Numerical(format!("non-finite descriptors on pair {}", pair.id)));
    }
    let coarse = coarse_match(&fwd.fi, &fwd.fp, &cfg.matching)?;
    let fine = fine_match(
        &coarse,
        &pair.fine_image(),
        &pair.fine_points(),
        &pair.superpoint_members,
        cfg.matching.s_fine,
    )?;
    let th = &cfg.eval;
    let lifted: Vec<([f64; 3], [f64; 3])> = fine.iter().map(|f| (pair.pixel_xyz[f.pixel], f.xyz)).collect();
    let ir = inlier_ratio(&lifted, &pair.t_gt, th.ir_dist).value;
    let pir = patch_inlier_ratio(
        &coarse,
        &pair.spec.patch_extents(),
        &pair.superpoint_members,
        &pair.cloud,
        &pair.t_gt,
        &pair.spec.intrinsics,
        th.pir_overlap,
    )?
    .value;
    let corrs: Vec<Correspondence2d3d> = fine
        .iter()
        .map(|f| Correspondence2d3d { uv: f.uv, xyz: f.xyz })
        .collect();
    let (estimate, inliers, status) = if oracle_pose {
        (Some(pair.t_gt.clone()), 0, "ok (oracle pose)".to_string())
    } else {
        match ransac_pnp(&corrs, &pair.spec.intrinsics, &cfg.ransac, rng) {
            Ok(r) => {
                let n = r.inlier_count();
                (Some(r.pose), n, "ok".to_string())
            }
            Err(Error::InsufficientData { needed, got }) => (
                None,
                0,
                format!("insufficient correspondences ({got} < {needed})"),
            ),
            Err(
                e @ (Error::EstimationFailure(_)
                | Error::DegenerateConfiguration(_)
                | Error::Numerical(_)),
            ) => (None, 0, e.to_string()),
            Err(e) => return Err(e),
        }
    };
    let (rmse, rot, trans) = match &estimate {
        Some(t) => {
            let (r, tr) = pose_errors(t, &pair.t_gt);
            (Some(registration_rmse(t, &pair.t_gt, &pair.cloud)?), Some(r), Some(tr))
        }
        None => (None, None, None),
    };
    let metrics = PairMetrics {
        pair: pair.id.clone(),
        scene: pair.scene.clone(),
        ir,
        pir,
        n_coarse: coarse.len(),
        n_fine: fine.len(),
        ransac_inliers: inliers,
        rmse,
        rot_err_deg: rot,
        trans_err_m: trans,
        registered: rmse.is_some_and(|r| r < th.rr_rmse),
        status,
    };
    Ok(PairResult {
        metrics,
        correspondences: CorrespondenceSet { coarse, fine },
        estimate,
    })
}

/// Evaluates every pair; pair `i` draws from its own stream so results do
/// not depend on the worker count.
pub fn evaluate(
    model: &Model,
    cfg: &ExperimentConfig,
    pairs: &[SyntheticPair],
    seed: u64,
    oracle_pose: bool,
) -> Result<Vec<PairResult>> {
    cfg.validate()?;
    model.validate()?;
    if model.channels() != cfg.scene.feature_dim {
        return Err(Error::Config(format!(
            "checkpoint has {} channels but the scene has {}",
            model.channels(),
            cfg.scene.feature_dim
        )));
    }
    let base = derive_seed(seed, EVAL_STREAM);
    pairs
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut rng = Rng::new(derive_seed(base, i as u64));
            evaluate_pair(model, cfg, p, &mut rng, oracle_pose)
        })
        .collect()
}

pub fn report(cfg: &ExperimentConfig, results: &[PairResult]) -> MetricReport {
    MetricReport::from_pairs(results.iter().map(|r| r.metrics.clone()).collect(), &cfg.eval)
}

/// Writes `report.csv`, `report.json`, `poses.txt` and one correspondence
/// CSV per pair under `dir`. Pairs without an estimate get an identity line
/// in `poses.txt`; their report row carries the failure.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, pairs: &[SyntheticPair], results: &[PairResult]) -> Result<MetricReport> {
    let rep = report(cfg, results);
    rep.write(dir, "report")?;
    let poses: Vec<RigidTransform> = results
        .iter()
        .map(|r| r.estimate.clone().unwrap_or_else(RigidTransform::identity))
        .collect();
    write_trajectory(&dir.join("poses.txt"), &poses)?;
    let cdir = dir.join("correspondences");
    std::fs::create_dir_all(&cdir).map_err(|e| Error::io(&cdir, e))?;
    for (p, r) in pairs.iter().zip(results) {
        save_correspondence_csv(
            &cdir.join(format!("{}.csv", p.id)),
            &r.correspondences,
            &p.feature_grid(),
            &p.point_features(),
        )?;
    }
    Ok(rep)
}
