//! Pinhole projection, DLT-based PnP with Gauss-Newton refinement, and RANSAC.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, Matrix3, Matrix6, Rotation3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Points with camera depth at or below this are behind the camera.
pub const Z_MIN: f64 = 1e-6;

const SO3_TOL: f64 = 1e-9;

/// Rotation plus translation mapping cloud coordinates into the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
}

fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            r: Matrix3::identity(),
            t: Vector3::zeros(),
        }
    }

    /// Checked constructor; `r` must be a rotation within 1e-9.
    pub fn new(r: Matrix3<f64>, t: Vector3<f64>) -> Result<Self> {
        let tr = RigidTransform { r, t };
        tr.check()?;
        Ok(tr)
    }

    /// Rotation `angle` radians about `axis`, then translation `t`.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, t: Vector3<f64>) -> Self {
        let n = axis.norm();
        let r = if n == 0.0 {
            Matrix3::identity()
        } else {
            *Rotation3::new(axis / n * angle).matrix()
        };
        RigidTransform { r, t }
    }

    pub fn check(&self) -> Result<()> {
        if !self.r.iter().chain(self.t.iter()).all(|v| v.is_finite()) {
            return Err(Error::Numerical("non-finite transform".into()));
        }
        let orth = (self.r.transpose() * self.r - Matrix3::identity()).amax();
        let det = self.r.determinant();
        if orth > SO3_TOL || (det - 1.0).abs() > SO3_TOL {
            return Err(Error::Contract(format!(
                "not a rotation: orthogonality error {orth:e}, det {det}"
            )));
        }
        Ok(())
    }

    pub fn apply(&self, p: &[f64; 3]) -> [f64; 3] {
        let v = self.r * Vector3::from(*p) + self.t;
        [v.x, v.y, v.z]
    }

    pub fn inverse(&self) -> Self {
        let rt = self.r.transpose();
        RigidTransform {
            r: rt,
            t: -(rt * self.t),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        RigidTransform {
            r: self.r * other.r,
            t: self.r * other.t + self.t,
        }
    }

    /// Twelve numbers, row-major rotation then translation.
    pub fn to_values(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for i in 0..3 {
            for j in 0..3 {
                out[3 * i + j] = self.r[(i, j)];
            }
            out[9 + i] = self.t[i];
        }
        out
    }

    /// Inverse of [`RigidTransform::to_values`]; the rotation is accepted
    /// within 1e-6 of SO(3); one off by more than 1e-9 is projected onto it.
    pub fn from_values(v: &[f64]) -> Result<Self> {
        if v.len() != 12 {
            return Err(Error::Format(format!(
                "transform needs 12 numbers, got {}",
                v.len()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Format("non-finite transform value".into()));
        }
        let r = Matrix3::from_row_slice(&v[..9]);
        let orth = (r.transpose() * r - Matrix3::identity()).amax();
        if orth > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::Format("rotation block is not in SO(3)".into()));
        }
        // already-valid rotations are kept bit-exact
        let r = if orth > SO3_TOL || (r.determinant() - 1.0).abs() > SO3_TOL {
            nearest_rotation(&r)
        } else {
            r
        };
        Ok(RigidTransform {
            r,
            t: Vector3::new(v[9], v[10], v[11]),
        })
    }
}

pub fn transform_points(points: &[[f64; 3]], t: &RigidTransform) -> Vec<[f64; 3]> {
    points.iter().map(|p| t.apply(p)).collect()
}

/// `(rotation error in degrees, translation error in metres)`.
pub fn pose_errors(est: &RigidTransform, gt: &RigidTransform) -> (f64, f64) {
    let c = ((gt.r.transpose() * est.r).trace() - 1.0) / 2.0;
    (c.clamp(-1.0, 1.0).acos().to_degrees(), (est.t - gt.t).norm())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::Config("focal lengths must be positive".into()));
        }
        Ok(())
    }

    /// Pixel of a camera-frame point, `None` behind the camera.
    pub fn pixel(&self, p: &[f64; 3]) -> Option<[f64; 2]> {
        (p[2] > Z_MIN).then(|| {
            [
                self.fx * p[0] / p[2] + self.cx,
                self.fy * p[1] / p[2] + self.cy,
            ]
        })
    }

    /// Camera-frame point at `depth` along the ray through pixel `uv`.
    pub fn back_project(&self, uv: [f64; 2], depth: f64) -> [f64; 3] {
        [
            (uv[0] - self.cx) / self.fx * depth,
            (uv[1] - self.cy) / self.fy * depth,
            depth,
        ]
    }
}

/// Pixels and validity flags of `points` seen through `t`.
pub fn project(
    points: &[[f64; 3]],
    t: &RigidTransform,
    k: &CameraIntrinsics,
) -> (Vec<[f64; 2]>, Vec<bool>) {
    points
        .iter()
        .map(|p| match k.pixel(&t.apply(p)) {
            Some(uv) => (uv, true),
            None => ([f64::NAN, f64::NAN], false),
        })
        .unzip()
}

/// A pixel and the cloud point claimed to project onto it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence2d3d {
    pub uv: [f64; 2],
    pub xyz: [f64; 3],
}

pub const MIN_PNP_PAIRS: usize = 6;

fn reprojection_error(c: &Correspondence2d3d, t: &RigidTransform, k: &CameraIntrinsics) -> f64 {
    match k.pixel(&t.apply(&c.xyz)) {
        Some(uv) => ((uv[0] - c.uv[0]).powi(2) + (uv[1] - c.uv[1]).powi(2)).sqrt(),
        None => f64::INFINITY,
    }
}

/// Pose from at least six correspondences.
///
/// Normalized DLT, nearest rotation, then Gauss-Newton on reprojection error.
pub fn solve_pnp(corrs: &[Correspondence2d3d], k: &CameraIntrinsics) -> Result<RigidTransform> {
    k.validate()?;
    if corrs.len() < MIN_PNP_PAIRS {
        return Err(Error::InsufficientData {
            needed: MIN_PNP_PAIRS,
            got: corrs.len(),
        });
    }
    if corrs
        .iter()
        .any(|c| !c.uv.iter().chain(&c.xyz).all(|v| v.is_finite()))
    {
        return Err(Error::DegenerateInput("non-finite correspondence".into()));
    }
    let init = dlt(corrs, k)?;
    Ok(refine(corrs, k, init))
}

fn dlt(corrs: &[Correspondence2d3d], k: &CameraIntrinsics) -> Result<RigidTransform> {
    let n = corrs.len() as f64;
    // 3-D normalization: centre and scale to mean distance √3
    let mut centroid = Vector3::zeros();
    for c in corrs {
        centroid += Vector3::from(c.xyz);
    }
    centroid /= n;
    let mut cov = Matrix3::zeros();
    let mut mean_dist = 0.0;
    for c in corrs {
        let d = Vector3::from(c.xyz) - centroid;
        cov += d * d.transpose();
        mean_dist += d.norm();
    }
    mean_dist /= n;
    let sv = cov.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if mean_dist == 0.0 || smin <= 1e-12 * smax {
        return Err(Error::DegenerateConfiguration(
            "cloud points are coplanar or collinear".into(),
        ));
    }
    let s3 = 3f64.sqrt() / mean_dist;

    // 2-D normalization of the calibrated rays
    let rays: Vec<[f64; 2]> = corrs
        .iter()
        .map(|c| [(c.uv[0] - k.cx) / k.fx, (c.uv[1] - k.cy) / k.fy])
        .collect();
    let (mut mx, mut my) = (0.0, 0.0);
    for r in &rays {
        mx += r[0];
        my += r[1];
    }
    mx /= n;
    my /= n;
    let md = rays
        .iter()
        .map(|r| ((r[0] - mx).powi(2) + (r[1] - my).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    let s2 = if md > 0.0 { 2f64.sqrt() / md } else { 1.0 };

    let mut a = DMatrix::<f64>::zeros(2 * corrs.len(), 12);
    for (i, (c, r)) in corrs.iter().zip(&rays).enumerate() {
        let p = (Vector3::from(c.xyz) - centroid) * s3;
        let x = [p.x, p.y, p.z, 1.0];
        let u = (r[0] - mx) * s2;
        let v = (r[1] - my) * s2;
        for j in 0..4 {
            a[(2 * i, j)] = x[j];
            a[(2 * i, 8 + j)] = -u * x[j];
            a[(2 * i + 1, 4 + j)] = x[j];
            a[(2 * i + 1, 8 + j)] = -v * x[j];
        }
    }
    let ata = a.transpose() * &a;
    let eig = ata.symmetric_eigen();
    let mut order: Vec<usize> = (0..12).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    // a second near-null direction means the solution is not unique
    let (e1, emax) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[11]]);
    if !(emax > 0.0) || e1 <= 1e-14 * emax {
        return Err(Error::DegenerateConfiguration(
            "projection system is rank deficient".into(),
        ));
    }
    let h = eig.eigenvectors.column(order[0]);
    let mut pn = nalgebra::Matrix3x4::<f64>::zeros();
    for i in 0..3 {
        for j in 0..4 {
            pn[(i, j)] = h[4 * i + j];
        }
    }
    // undo normalizations: P = T2⁻¹ · Pn · T3
    let t2_inv = Matrix3::new(1.0 / s2, 0.0, mx, 0.0, 1.0 / s2, my, 0.0, 0.0, 1.0);
    let mut t3 = nalgebra::Matrix4::<f64>::identity() * s3;
    t3[(3, 3)] = 1.0;
    for i in 0..3 {
        t3[(i, 3)] = -s3 * centroid[i];
    }
    let mut p = t2_inv * pn * t3;
    let mut m: Matrix3<f64> = p.fixed_view::<3, 3>(0, 0).into();
    if m.determinant() < 0.0 {
        p = -p;
        m = -m;
    }
    let svd = m.svd(true, true);
    let scale = svd.singular_values.mean();
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::DegenerateConfiguration(
            "degenerate projection matrix".into(),
        ));
    }
    let r = nearest_rotation(&m);
    let t = Vector3::new(p[(0, 3)], p[(1, 3)], p[(2, 3)]) / scale;
    Ok(RigidTransform { r, t })
}

fn cost(corrs: &[Correspondence2d3d], k: &CameraIntrinsics, t: &RigidTransform) -> f64 {
    corrs
        .iter()
        .map(|c| match k.pixel(&t.apply(&c.xyz)) {
            Some(uv) => (uv[0] - c.uv[0]).powi(2) + (uv[1] - c.uv[1]).powi(2),
            None => 0.0,
        })
        .sum()
}

fn refine(corrs: &[Correspondence2d3d], k: &CameraIntrinsics, mut cur: RigidTransform) -> RigidTransform {
    let mut cur_cost = cost(corrs, k, &cur);
    for _ in 0..20 {
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for c in corrs {
            let p = cur.r * Vector3::from(c.xyz) + cur.t;
            if p.z <= Z_MIN {
                continue;
            }
            let iz = 1.0 / p.z;
            let r = [
                k.fx * p.x * iz + k.cx - c.uv[0],
                k.fy * p.y * iz + k.cy - c.uv[1],
            ];
            let dpi = [
                [k.fx * iz, 0.0, -k.fx * p.x * iz * iz],
                [0.0, k.fy * iz, -k.fy * p.y * iz * iz],
            ];
            // d p / d(ω, δt) = [−[p]× | I]
            let skew = [[0.0, p.z, -p.y], [-p.z, 0.0, p.x], [p.y, -p.x, 0.0]];
            for row in 0..2 {
                let mut j = [0.0; 6];
                for col in 0..3 {
                    j[col] = (0..3).map(|m| dpi[row][m] * skew[m][col]).sum();
                    j[3 + col] = dpi[row][col];
                }
                let jv = Vector6::from(j);
                jtj += jv * jv.transpose();
                jtr += jv * r[row];
            }
        }
        let Some(step) = jtj.cholesky().map(|ch| ch.solve(&(-jtr))) else {
            break;
        };
        let omega = Vector3::new(step[0], step[1], step[2]);
        let dt = Vector3::new(step[3], step[4], step[5]);
        let dr = *Rotation3::new(omega).matrix();
        let cand = RigidTransform {
            r: nearest_rotation(&(dr * cur.r)),
            t: dr * cur.t + dt,
        };
        let cand_cost = cost(corrs, k, &cand);
        if !(cand_cost < cur_cost) {
            break;
        }
        cur = cand;
        cur_cost = cand_cost;
        if step.norm() < 1e-10 {
            break;
        }
    }
    cur
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    pub threshold_px: f64,
    pub max_iters: usize,
    pub confidence: f64,
    pub min_sample: usize,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            threshold_px: 8.0,
            max_iters: 5000,
            confidence: 0.999,
            min_sample: 6,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold_px > 0.0) {
            return Err(Error::Config("threshold_px must be positive".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::Config("confidence must lie in (0, 1)".into()));
        }
        if self.min_sample < MIN_PNP_PAIRS || self.max_iters == 0 {
            return Err(Error::Config(format!(
                "min_sample must be >= {MIN_PNP_PAIRS} and max_iters positive"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    pub pose: RigidTransform,
    pub inliers: Vec<bool>,
    pub iterations: usize,
    /// Largest inlier count of any sampled hypothesis.
    pub best_hypothesis_inliers: usize,
}

impl RansacResult {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

fn inlier_mask(
    corrs: &[Correspondence2d3d],
    t: &RigidTransform,
    k: &CameraIntrinsics,
    thr: f64,
) -> Vec<bool> {
    corrs
        .iter()
        .map(|c| reprojection_error(c, t, k) < thr)
        .collect()
}

fn required_iterations(inlier_frac: f64, sample: usize, confidence: f64, cap: usize) -> usize {
    let w = inlier_frac.powi(sample as i32);
    if w >= 1.0 {
        return 1;
    }
    if w <= 0.0 {
        return cap;
    }
    let n = (1.0 - confidence).ln() / (1.0 - w).ln();
    if n.is_finite() {
        (n.ceil() as usize).clamp(1, cap)
    } else {
        cap
    }
}

/// Hypothesize-and-verify PnP with an adaptive iteration budget and a final
/// refit on the best inlier set.
pub fn ransac_pnp(
    corrs: &[Correspondence2d3d],
    k: &CameraIntrinsics,
    cfg: &RansacConfig,
    rng: &mut Rng,
) -> Result<RansacResult> {
    cfg.validate()?;
    k.validate()?;
    if corrs.len() < cfg.min_sample {
        return Err(Error::InsufficientData {
            needed: cfg.min_sample,
            got: corrs.len(),
        });
    }
    let n = corrs.len();
    let mut best: Option<(RigidTransform, Vec<bool>, usize)> = None;
    let mut budget = cfg.max_iters;
    let mut it = 0;
    let mut sample = Vec::with_capacity(cfg.min_sample);
    while it < budget {
        it += 1;
        sample.clear();
        sample.extend(rng.sample_distinct(n, cfg.min_sample).into_iter().map(|i| corrs[i]));
        let Ok(hyp) = solve_pnp(&sample, k) else {
            continue;
        };
        let mask = inlier_mask(corrs, &hyp, k, cfg.threshold_px);
        let count = mask.iter().filter(|&&b| b).count();
        if best.as_ref().map_or(true, |b| count > b.2) {
            budget = budget.min(required_iterations(
                count as f64 / n as f64,
                cfg.min_sample,
                cfg.confidence,
                cfg.max_iters,
            ));
            best = Some((hyp, mask, count));
        }
    }
    let (mut pose, mut mask, best_count) = match best {
        Some(b) if b.2 >= cfg.min_sample => b,
        _ => {
            return Err(Error::EstimationFailure(format!(
                "no hypothesis reached {} inliers in {it} iterations",
                cfg.min_sample
            )))
        }
    };
    let inlier_corrs: Vec<Correspondence2d3d> = corrs
        .iter()
        .zip(&mask)
        .filter_map(|(c, &m)| m.then_some(*c))
        .collect();
    if let Ok(refit) = solve_pnp(&inlier_corrs, k) {
        let refit_mask = inlier_mask(corrs, &refit, k, cfg.threshold_px);
        if refit_mask.iter().filter(|&&b| b).count() >= best_count {
            pose = refit;
            mask = refit_mask;
        }
    }
    Ok(RansacResult {
        pose,
        inliers: mask,
        iterations: it,
        best_hypothesis_inliers: best_count,
    })
}

/// One transform per line, twelve numbers each.
pub fn format_trajectory(poses: &[RigidTransform]) -> String {
    let mut s = String::new();
    for p in poses {
        let vals: Vec<String> = p.to_values().iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(s, "{}", vals.join(" "));
    }
    s
}

/// Parses a trajectory file; blank lines and `#` comments are skipped.
pub fn parse_trajectory(text: &str) -> Result<Vec<RigidTransform>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>().map_err(|_| {
                    Error::Format(format!("line {}: bad number '{t}'", no + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push(
            RigidTransform::from_values(&vals)
                .map_err(|e| Error::Format(format!("line {}: {e}", no + 1)))?,
        );
    }
    Ok(out)
}

pub fn write_trajectory(path: &Path, poses: &[RigidTransform]) -> Result<()> {
    std::fs::write(path, format_trajectory(poses)).map_err(|e| Error::io(path, e))
}

pub fn read_trajectory(path: &Path) -> Result<Vec<RigidTransform>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trajectory(&text)
}

crate::kv::kv_fields!(RansacConfig {
    "threshold_px" => threshold_px,
    "max_iters" => max_iters,
    "confidence" => confidence,
    "min_sample" => min_sample,
});

#[cfg(test)]
mod tests {
    use super::*;

    fn k100() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 50.0,
            cy: 50.0,
        }
    }

    fn kinect() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 525.0,
            fy: 525.0,
            cx: 320.0,
            cy: 240.0,
        }
    }

    fn random_pose(rng: &mut Rng) -> RigidTransform {
        let axis = Vector3::new(rng.normal(), rng.normal(), rng.normal());
        let angle = rng.uniform_in(0.0, 45f64.to_radians());
        let t = Vector3::new(
            rng.uniform_in(-0.5, 0.5),
            rng.uniform_in(-0.5, 0.5),
            rng.uniform_in(-0.5, 0.5),
        );
        RigidTransform::from_axis_angle(axis, angle, t)
    }

    /// Points visible in the camera, expressed in the cloud frame of `gt`.
    fn scene(rng: &mut Rng, n: usize, gt: &RigidTransform, k: &CameraIntrinsics) -> Vec<Correspondence2d3d> {
        let inv = gt.inverse();
        (0..n)
            .map(|_| {
                let uv = [rng.uniform_in(0.0, 640.0), rng.uniform_in(0.0, 480.0)];
                let cam = k.back_project(uv, rng.uniform_in(1.5, 4.0));
                Correspondence2d3d {
                    uv,
                    xyz: inv.apply(&cam),
                }
            })
            .collect()
    }

    #[test]
    fn projection_examples() {
        let id = RigidTransform::identity();
        let (uv, ok) = project(&[[0.0, 0.0, 1.0], [0.1, 0.0, 1.0], [0.0, 0.0, -1.0]], &id, &k100());
        assert_eq!(uv[0], [50.0, 50.0]);
        assert!((uv[1][0] - 60.0).abs() < 1e-12 && uv[1][1] == 50.0);
        assert_eq!(ok, vec![true, true, false]);
    }

    #[test]
    fn pose_error_examples() {
        let id = RigidTransform::identity();
        assert_eq!(pose_errors(&id, &id), (0.0, 0.0));
        let flip = RigidTransform::from_axis_angle(Vector3::z(), std::f64::consts::PI, Vector3::zeros());
        assert!((pose_errors(&flip, &id).0 - 180.0).abs() < 1e-9);
        let mut rng = Rng::new(1);
        let t = random_pose(&mut rng);
        let pts: Vec<[f64; 3]> = (0..10).map(|_| [rng.normal(), rng.normal(), rng.normal()]).collect();
        let back = transform_points(&transform_points(&pts, &t), &t.inverse());
        for (a, b) in pts.iter().zip(&back) {
            for i in 0..3 {
                assert!((a[i] - b[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn noiseless_pnp_is_exact() {
        let mut rng = Rng::new(2);
        let k = kinect();
        for _ in 0..10 {
            let gt = random_pose(&mut rng);
            let c = scene(&mut rng, 10, &gt, &k);
            let est = solve_pnp(&c, &k).unwrap();
            est.check().unwrap();
            let (re, te) = pose_errors(&est, &gt);
            assert!(re.to_radians() < 1e-6 && te < 1e-6, "{re} {te}");
        }
    }

    #[test]
    fn noisy_pnp_is_close() {
        let mut rng = Rng::new(3);
        let k = kinect();
        for _ in 0..10 {
            let gt = random_pose(&mut rng);
            let mut c = scene(&mut rng, 100, &gt, &k);
            for x in &mut c {
                x.uv[0] += 0.5 * rng.normal();
                x.uv[1] += 0.5 * rng.normal();
            }
            let (re, te) = pose_errors(&solve_pnp(&c, &k).unwrap(), &gt);
            assert!(re < 0.5 && te < 0.02, "{re} {te}");
        }
    }

    #[test]
    fn degenerate_and_insufficient() {
        let k = kinect();
        let line: Vec<Correspondence2d3d> = (0..8)
            .map(|i| Correspondence2d3d {
                uv: [320.0 + i as f64, 240.0],
                xyz: [0.1 * i as f64, 0.0, 2.0],
            })
            .collect();
        assert!(matches!(
            solve_pnp(&line, &k),
            Err(Error::DegenerateConfiguration(_))
        ));
        assert!(matches!(
            solve_pnp(&line[..5], &k),
            Err(Error::InsufficientData { needed: 6, got: 5 })
        ));
        let mut rng = Rng::new(0);
        assert!(matches!(
            ransac_pnp(&line[..5], &k, &RansacConfig::default(), &mut rng),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn ransac_clean_and_outliers() {
        let k = kinect();
        let cfg = RansacConfig::default();
        let mut rng = Rng::new(4);
        let gt = random_pose(&mut rng);
        let c = scene(&mut rng, 100, &gt, &k);
        let res = ransac_pnp(&c, &k, &cfg, &mut rng).unwrap();
        assert_eq!(res.inlier_count(), 100);
        let (re, te) = pose_errors(&res.pose, &gt);
        assert!(re < 1e-6 && te < 1e-6);

        let mut c = scene(&mut rng, 100, &gt, &k);
        for x in &mut c[..30] {
            x.uv = [rng.uniform_in(0.0, 640.0), rng.uniform_in(0.0, 480.0)];
        }
        for x in &mut c[30..] {
            x.uv[0] += rng.normal();
            x.uv[1] += rng.normal();
        }
        let res = ransac_pnp(&c, &k, &cfg, &mut rng).unwrap();
        let (re, te) = pose_errors(&res.pose, &gt);
        assert!(re < 1.0 && te < 0.01, "{re} {te}");
        assert!(res.inlier_count() >= res.best_hypothesis_inliers);
        let recovered = res.inliers[30..].iter().filter(|&&b| b).count();
        assert!(recovered as f64 >= 0.95 * 70.0);
    }

    #[test]
    fn ransac_is_deterministic() {
        let k = kinect();
        let mut rng = Rng::new(5);
        let gt = random_pose(&mut rng);
        let mut c = scene(&mut rng, 60, &gt, &k);
        for x in &mut c[..20] {
            x.uv = [rng.uniform_in(0.0, 640.0), rng.uniform_in(0.0, 480.0)];
        }
        let a = ransac_pnp(&c, &k, &RansacConfig::default(), &mut Rng::new(77)).unwrap();
        let b = ransac_pnp(&c, &k, &RansacConfig::default(), &mut Rng::new(77)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn trajectory_round_trip() {
        let mut rng = Rng::new(6);
        let poses: Vec<RigidTransform> = (0..3).map(|_| random_pose(&mut rng)).collect();
        let text = format_trajectory(&poses);
        let back = parse_trajectory(&text).unwrap();
        for (a, b) in poses.iter().zip(&back) {
            assert!((a.r - b.r).amax() < 1e-15 && (a.t - b.t).amax() == 0.0);
        }
        assert!(parse_trajectory("1 2 3").is_err());
        assert!(parse_trajectory("2 0 0 0 1 0 0 0 1 0 0 0").is_err());
        assert!(parse_trajectory("# c\n\n").unwrap().is_empty());
    }
}
