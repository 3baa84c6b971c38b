//! Inlier ratio, feature matching recall, registration recall and patch
//! inlier ratio, plus the per-pair report files.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matching::CoarseMatch;
use crate::pose::{CameraIntrinsics, RigidTransform};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct EvalThresholds {
    /// Metres, for the inlier ratio.
    pub ir_dist: f64,
    /// Inlier-ratio level a pair must exceed to count towards FMR.
    pub fmr_tau: f64,
    /// Metres, registration RMSE must be below this.
    pub rr_rmse: f64,
    pub pir_overlap: f64,
}

impl Default for EvalThresholds {
    fn default() -> Self {
        EvalThresholds {
            ir_dist: 0.05,
            fmr_tau: 0.10,
            rr_rmse: 0.10,
            pir_overlap: 0.3,
        }
    }
}

impl EvalThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.ir_dist > 0.0 && self.rr_rmse > 0.0) {
            return Err(Error::Config("distance thresholds must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.fmr_tau) || !(0.0..=1.0).contains(&self.pir_overlap) {
            return Err(Error::Config("fraction thresholds must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// A fraction and whether it was computed over an empty set (then it is 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fraction {
    pub value: f64,
    pub empty: bool,
}

impl Fraction {
    fn of(hits: usize, total: usize) -> Self {
        if total == 0 {
            Fraction {
                value: 0.0,
                empty: true,
            }
        } else {
            Fraction {
                value: hits as f64 / total as f64,
                empty: false,
            }
        }
    }
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Fraction of `(camera-frame point of the pixel, cloud point)` pairs whose
/// cloud point, moved by `t_gt`, lies within `threshold_m` of the first.
pub fn inlier_ratio(pairs: &[([f64; 3], [f64; 3])], t_gt: &RigidTransform, threshold_m: f64) -> Fraction {
    let hits = pairs
        .iter()
        .filter(|(cam, xyz)| dist(&t_gt.apply(xyz), cam) < threshold_m)
        .count();
    Fraction::of(hits, pairs.len())
}

/// Fraction of pairs whose inlier ratio is strictly above `tau`.
pub fn feature_matching_recall(per_pair_ir: &[f64], tau: f64) -> Fraction {
    Fraction::of(per_pair_ir.iter().filter(|&&r| r > tau).count(), per_pair_ir.len())
}

/// `sqrt(mean ‖T_est(x) − T_gt(x)‖²)` over the cloud.
pub fn registration_rmse(t_est: &RigidTransform, t_gt: &RigidTransform, cloud: &[[f64; 3]]) -> Result<f64> {
    if cloud.is_empty() {
        return Err(Error::DegenerateInput("empty cloud for RMSE".into()));
    }
    let s: f64 = cloud
        .iter()
        .map(|x| dist(&t_est.apply(x), &t_gt.apply(x)).powi(2))
        .sum();
    Ok((s / cloud.len() as f64).sqrt())
}

/// Fraction of pairs with RMSE strictly below `rmse_thresh`; a missing
/// estimate counts as not recalled.
pub fn registration_recall(
    estimates: &[Option<RigidTransform>],
    gts: &[RigidTransform],
    clouds: &[&[[f64; 3]]],
    rmse_thresh: f64,
) -> Result<Fraction> {
    if estimates.len() != gts.len() || gts.len() != clouds.len() {
        return Err(Error::Dimension(format!(
            "{} estimates, {} ground truths, {} clouds",
            estimates.len(),
            gts.len(),
            clouds.len()
        )));
    }
    let mut hits = 0;
    for ((e, g), c) in estimates.iter().zip(gts).zip(clouds) {
        if let Some(e) = e {
            if registration_rmse(e, g, c)? < rmse_thresh {
                hits += 1;
            }
        }
    }
    Ok(Fraction::of(hits, gts.len()))
}

/// Pixel rectangle `[u0, v0, u1, v1)` of a patch.
pub type PatchExtent = [f64; 4];

/// Fraction of a superpoint's members that project into the patch under `t_gt`.
pub fn patch_overlap(
    extent: &PatchExtent,
    members: &[usize],
    cloud: &[[f64; 3]],
    t_gt: &RigidTransform,
    k: &CameraIntrinsics,
) -> f64 {
    if members.is_empty() {
        return 0.0;
    }
    let inside = members
        .iter()
        .filter(|&&m| match k.pixel(&t_gt.apply(&cloud[m])) {
            Some([u, v]) => u >= extent[0] && u < extent[2] && v >= extent[1] && v < extent[3],
            None => false,
        })
        .count();
    inside as f64 / members.len() as f64
}

/// Fraction of coarse pairs whose superpoint overlaps its patch by at least
/// `overlap_thresh`.
pub fn patch_inlier_ratio(
    coarse: &[CoarseMatch],
    extents: &[PatchExtent],
    members: &[Vec<usize>],
    cloud: &[[f64; 3]],
    t_gt: &RigidTransform,
    k: &CameraIntrinsics,
    overlap_thresh: f64,
) -> Result<Fraction> {
    let mut hits = 0;
    for c in coarse {
        let (Some(e), Some(m)) = (extents.get(c.patch), members.get(c.superpoint)) else {
            return Err(Error::Dimension(format!(
                "coarse pair ({}, {}) out of range",
                c.patch, c.superpoint
            )));
        };
        if patch_overlap(e, m, cloud, t_gt, k) >= overlap_thresh {
            hits += 1;
        }
    }
    Ok(Fraction::of(hits, coarse.len()))
}

/// Diagnostics of one evaluated pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairMetrics {
    pub pair: String,
    pub scene: String,
    pub ir: f64,
    pub pir: f64,
    pub n_coarse: usize,
    pub n_fine: usize,
    pub ransac_inliers: usize,
    pub rmse: Option<f64>,
    pub rot_err_deg: Option<f64>,
    pub trans_err_m: Option<f64>,
    pub registered: bool,
    /// `ok`, or the reason pose estimation failed.
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneSummary {
    pub scene: String,
    pub pairs: usize,
    pub ir: f64,
    pub fmr: f64,
    pub rr: f64,
    pub pir: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub pairs: Vec<PairMetrics>,
    pub scenes: Vec<SceneSummary>,
    pub ir: f64,
    pub fmr: f64,
    pub rr: f64,
    pub pir: f64,
    /// Set when there were no pairs; all fractions are then 0.
    pub empty: bool,
}

fn summarize(pairs: &[&PairMetrics], th: &EvalThresholds) -> (f64, f64, f64, f64) {
    if pairs.is_empty() {
        return (0.0, 0.0, 0.0, 0.0);
    }
    let n = pairs.len() as f64;
    let irs: Vec<f64> = pairs.iter().map(|p| p.ir).collect();
    let ir = irs.iter().sum::<f64>() / n;
    let fmr = feature_matching_recall(&irs, th.fmr_tau).value;
    let rr = pairs.iter().filter(|p| p.registered).count() as f64 / n;
    let pir = pairs.iter().map(|p| p.pir).sum::<f64>() / n;
    (ir, fmr, rr, pir)
}

impl MetricReport {
    /// Aggregates per-pair rows; scenes appear in order of first occurrence.
    pub fn from_pairs(pairs: Vec<PairMetrics>, th: &EvalThresholds) -> Self {
        let mut names: Vec<String> = Vec::new();
        for p in &pairs {
            if !names.contains(&p.scene) {
                names.push(p.scene.clone());
            }
        }
        let scenes = names
            .into_iter()
            .map(|s| {
                let sel: Vec<&PairMetrics> = pairs.iter().filter(|p| p.scene == s).collect();
                let (ir, fmr, rr, pir) = summarize(&sel, th);
                SceneSummary {
                    scene: s,
                    pairs: sel.len(),
                    ir,
                    fmr,
                    rr,
                    pir,
                }
            })
            .collect();
        let all: Vec<&PairMetrics> = pairs.iter().collect();
        let (ir, fmr, rr, pir) = summarize(&all, th);
        MetricReport {
            empty: pairs.is_empty(),
            pairs,
            scenes,
            ir,
            fmr,
            rr,
            pir,
        }
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut s = String::from(
            "pair,scene,ir,pir,n_coarse,n_fine,ransac_inliers,rmse,rot_err_deg,trans_err_m,registered,status\n",
        );
        for p in &self.pairs {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                p.pair,
                p.scene,
                p.ir,
                p.pir,
                p.n_coarse,
                p.n_fine,
                p.ransac_inliers,
                opt(p.rmse),
                opt(p.rot_err_deg),
                opt(p.trans_err_m),
                p.registered,
                p.status.replace(',', ";")
            );
        }
        let _ = writeln!(
            s,
            "summary,all,{},{},,,,,,,{},{}",
            self.ir,
            self.pir,
            self.rr,
            if self.empty { "empty" } else { "ok" }
        );
        s
    }

    /// Table-style summary: per-scene IR/FMR/RR/PIR and the mean row.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Row<'a> {
            ir: f64,
            fmr: f64,
            rr: f64,
            pir: f64,
            pairs: usize,
            #[serde(skip_serializing_if = "Option::is_none")]
            scene: Option<&'a str>,
        }
        #[derive(Serialize)]
        struct Summary<'a> {
            scenes: Vec<Row<'a>>,
            mean: Row<'a>,
            empty: bool,
        }
        let sum = Summary {
            scenes: self
                .scenes
                .iter()
                .map(|s| Row {
                    scene: Some(&s.scene),
                    pairs: s.pairs,
                    ir: s.ir,
                    fmr: s.fmr,
                    rr: s.rr,
                    pir: s.pir,
                })
                .collect(),
            mean: Row {
                scene: None,
                pairs: self.pairs.len(),
                ir: self.ir,
                fmr: self.fmr,
                rr: self.rr,
                pir: self.pir,
            },
            empty: self.empty,
        };
        let mut out = serde_json::to_string_pretty(&sum).expect("plain data serializes");
        out.push('\n');
        out
    }

    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&json, self.to_json()).map_err(|e| Error::io(&json, e))
    }
}

crate::kv::kv_fields!(EvalThresholds {
    "ir_dist" => ir_dist,
    "fmr_tau" => fmr_tau,
    "rr_rmse" => rr_rmse,
    "pir_overlap" => pir_overlap,
});
