//! Synthetic image/point-cloud pairs with exact ground truth, corrupted
//! correspondence sets, and the planted informative-query task.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::PatchExtent;
use crate::matching::{FeatureGrid, FineImage, FinePoints, PointFeatures};
use crate::numerics::{Rng, Tensor};
use crate::pose::{CameraIntrinsics, Correspondence2d3d, RigidTransform};

const MAX_SURFACE_TRIES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Patch side in pixels.
    pub patch_size: f64,
    /// Fine samples per patch side.
    pub fine_per_side: usize,
    pub intrinsics: CameraIntrinsics,
    pub depth_min: f64,
    pub depth_max: f64,
    pub max_rotation_deg: f64,
    pub max_translation: f64,
    pub feature_dim: usize,
    pub fine_dim: usize,
    /// Noise norm relative to the unit-norm latent, coarse descriptors.
    pub sigma_feat: f64,
    pub sigma_fine: f64,
    pub image_noise: f64,
    /// Fraction of patches whose latent is cloned from another patch.
    pub repetition: f64,
    /// Fraction of patches with no counterpart in the cloud.
    pub masked_fraction: f64,
    pub outlier_fraction: f64,
    /// Cloud size; 0 keeps one point per visible fine sample.
    pub n_points: usize,
    pub voxel_size: f64,
    /// Strength of the modality-specific distortion of the descriptors.
    pub modality_gap: f64,
    /// Seed of the shared sensor model (modality maps, colour map).
    pub sensor_seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            grid_rows: 6,
            grid_cols: 8,
            patch_size: 80.0,
            fine_per_side: 4,
            intrinsics: CameraIntrinsics {
                fx: 525.0,
                fy: 525.0,
                cx: 320.0,
                cy: 240.0,
            },
            depth_min: 1.5,
            depth_max: 4.0,
            max_rotation_deg: 45.0,
            max_translation: 1.0,
            feature_dim: 32,
            fine_dim: 16,
            sigma_feat: 0.5,
            sigma_fine: 1.3,
            image_noise: 0.02,
            repetition: 0.25,
            masked_fraction: 0.0,
            outlier_fraction: 0.3,
            n_points: 0,
            voxel_size: 0.5,
            modality_gap: 1.0,
            sensor_seed: 0x5e45,
        }
    }
}

fn unit_interval(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")))
    }
}

impl SceneSpec {
    pub fn patches(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn fine_samples(&self) -> usize {
        self.patches() * self.fine_per_side * self.fine_per_side
    }

    pub fn image_width(&self) -> f64 {
        self.grid_cols as f64 * self.patch_size
    }

    pub fn image_height(&self) -> f64 {
        self.grid_rows as f64 * self.patch_size
    }

    /// Rows and columns of the fine sample lattice (the image tensor size).
    pub fn fine_dims(&self) -> (usize, usize) {
        (
            self.grid_rows * self.fine_per_side,
            self.grid_cols * self.fine_per_side,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_rows == 0 || self.grid_cols == 0 || self.fine_per_side == 0 {
            return Err(Error::Config("grid dimensions must be positive".into()));
        }
        let (fh, fw) = self.fine_dims();
        if fh < 2 || fw < 2 {
            return Err(Error::Config("fine lattice must be at least 2×2".into()));
        }
        if !(self.patch_size > 0.0) {
            return Err(Error::Config("patch_size must be positive".into()));
        }
        self.intrinsics.validate()?;
        if !(0.0 < self.depth_min && self.depth_min < self.depth_max) {
            return Err(Error::Config("need 0 < depth_min < depth_max".into()));
        }
        if !(0.0..=180.0).contains(&self.max_rotation_deg) || !(self.max_translation >= 0.0) {
            return Err(Error::Config("pose ranges out of bounds".into()));
        }
        if self.feature_dim < 2 || self.fine_dim < 1 {
            return Err(Error::Config("feature_dim >= 2 and fine_dim >= 1 required".into()));
        }
        for (n, v) in [
            ("sigma_feat", self.sigma_feat),
            ("sigma_fine", self.sigma_fine),
            ("image_noise", self.image_noise),
            ("modality_gap", self.modality_gap),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{n} must be non-negative")));
            }
        }
        unit_interval("repetition", self.repetition)?;
        unit_interval("masked_fraction", self.masked_fraction)?;
        unit_interval("outlier_fraction", self.outlier_fraction)?;
        if self.n_points != 0 && self.n_points < self.patches() {
            return Err(Error::Config(format!(
                "n_points {} below patch count {}",
                self.n_points,
                self.patches()
            )));
        }
        if !(self.voxel_size > 0.0) {
            return Err(Error::Config("voxel_size must be positive".into()));
        }
        Ok(())
    }

    /// Pixel position of fine sample `idx` (patch-major ordering).
    pub fn fine_pixel(&self, idx: usize) -> [f64; 2] {
        let s = self.fine_per_side;
        let patch = idx / (s * s);
        let (a, b) = ((idx % (s * s)) / s, idx % s);
        let (r, c) = (patch / self.grid_cols, patch % self.grid_cols);
        let step = self.patch_size / s as f64;
        [
            c as f64 * self.patch_size + (b as f64 + 0.5) * step,
            r as f64 * self.patch_size + (a as f64 + 0.5) * step,
        ]
    }

    /// Position of fine sample `idx` in the image tensor, `(row, col)`.
    pub fn fine_cell(&self, idx: usize) -> (usize, usize) {
        let s = self.fine_per_side;
        let patch = idx / (s * s);
        let (a, b) = ((idx % (s * s)) / s, idx % s);
        let (r, c) = (patch / self.grid_cols, patch % self.grid_cols);
        (r * s + a, c * s + b)
    }

    pub fn patch_of_pixel(&self, uv: [f64; 2]) -> Option<usize> {
        let c = (uv[0] / self.patch_size).floor();
        let r = (uv[1] / self.patch_size).floor();
        if c < 0.0 || r < 0.0 || c >= self.grid_cols as f64 || r >= self.grid_rows as f64 {
            None
        } else {
            Some(r as usize * self.grid_cols + c as usize)
        }
    }

    pub fn patch_centers(&self) -> Vec<[f64; 2]> {
        (0..self.patches())
            .map(|p| {
                let (r, c) = (p / self.grid_cols, p % self.grid_cols);
                [
                    (c as f64 + 0.5) * self.patch_size,
                    (r as f64 + 0.5) * self.patch_size,
                ]
            })
            .collect()
    }

    pub fn patch_extents(&self) -> Vec<PatchExtent> {
        (0..self.patches())
            .map(|p| {
                let (r, c) = (p / self.grid_cols, p % self.grid_cols);
                let (u0, v0) = (c as f64 * self.patch_size, r as f64 * self.patch_size);
                [u0, v0, u0 + self.patch_size, v0 + self.patch_size]
            })
            .collect()
    }

    pub fn patch_pixels(&self) -> Vec<Vec<usize>> {
        let n = self.fine_per_side * self.fine_per_side;
        (0..self.patches())
            .map(|p| (p * n..(p + 1) * n).collect())
            .collect()
    }
}

/// Dataset-wide modality maps and the colour map used to render images.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorModel {
    pub image_map: Tensor,
    pub point_map: Tensor,
    pub color_map: Tensor,
}

impl SensorModel {
    pub fn new(spec: &SceneSpec) -> Self {
        let c = spec.feature_dim;
        let mut rng = Rng::new(spec.sensor_seed);
        let gap_map = |rng: &mut Rng| {
            let s = spec.modality_gap / (c as f64).sqrt();
            let mut m = Tensor::new(vec![c, c], (0..c * c).map(|_| s * rng.normal()).collect())
                .expect("square");
            for i in 0..c {
                *m.at2_mut(i, i) += 1.0;
            }
            m
        };
        let image_map = gap_map(&mut rng);
        let point_map = gap_map(&mut rng);
        let color_map = Tensor::new(
            vec![3, c],
            (0..3 * c).map(|_| rng.normal()).collect(),
        )
        .expect("3×C");
        SensorModel {
            image_map,
            point_map,
            color_map,
        }
    }
}

/// One generated pair with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPair {
    pub id: String,
    pub scene: String,
    pub spec: SceneSpec,
    /// `H_f×W_f×3` rendered image.
    pub image: Tensor,
    /// `P×C` patch descriptors.
    pub patch_features: Tensor,
    /// Camera-frame 3-D location of every fine sample (known depth).
    pub pixel_xyz: Vec<[f64; 3]>,
    pub fine_image_features: Tensor,
    /// Cloud in its own frame.
    pub cloud: Vec<[f64; 3]>,
    pub fine_point_features: Tensor,
    pub superpoint_positions: Vec<[f64; 3]>,
    pub superpoint_members: Vec<Vec<usize>>,
    pub superpoint_features: Tensor,
    /// Cloud to camera.
    pub t_gt: RigidTransform,
    /// `(fine sample, cloud point)` pairs that are exact under `t_gt`.
    pub gt_fine: Vec<(usize, usize)>,
}

/// Labelled patch/superpoint overlap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseTruth {
    pub patch: usize,
    pub superpoint: usize,
    pub overlap: f64,
}

impl SyntheticPair {
    pub fn feature_grid(&self) -> FeatureGrid {
        FeatureGrid {
            features: self.patch_features.clone(),
            centers: self.spec.patch_centers(),
            patch_size: self.spec.patch_size,
        }
    }

    pub fn point_features(&self) -> PointFeatures {
        PointFeatures {
            features: self.superpoint_features.clone(),
            positions: self.superpoint_positions.clone(),
            members: self.superpoint_members.clone(),
        }
    }

    pub fn fine_image(&self) -> FineImage {
        FineImage {
            features: self.fine_image_features.clone(),
            pixels: (0..self.spec.fine_samples())
                .map(|i| self.spec.fine_pixel(i))
                .collect(),
            patch_pixels: self.spec.patch_pixels(),
        }
    }

    pub fn fine_points(&self) -> FinePoints {
        FinePoints {
            features: self.fine_point_features.clone(),
            xyz: self.cloud.clone(),
        }
    }

    /// `P×S` overlap: share of each superpoint's members projecting into
    /// each patch under the ground-truth pose.
    pub fn overlap_matrix(&self) -> Vec<Vec<f64>> {
        let p = self.spec.patches();
        let s = self.superpoint_members.len();
        let mut out = vec![vec![0.0; s]; p];
        let patch_of: Vec<Option<usize>> = self
            .cloud
            .iter()
            .map(|x| {
                self.spec
                    .intrinsics
                    .pixel(&self.t_gt.apply(x))
                    .and_then(|uv| self.spec.patch_of_pixel(uv))
            })
            .collect();
        for (j, mem) in self.superpoint_members.iter().enumerate() {
            if mem.is_empty() {
                continue;
            }
            let w = 1.0 / mem.len() as f64;
            for &m in mem {
                if let Some(pi) = patch_of[m] {
                    out[pi][j] += w;
                }
            }
        }
        out
    }

    /// Pairs with overlap at least `min_overlap`.
    pub fn coarse_truth(&self, min_overlap: f64) -> Vec<CoarseTruth> {
        let ov = self.overlap_matrix();
        let mut out = Vec::new();
        for (p, row) in ov.iter().enumerate() {
            for (s, &o) in row.iter().enumerate() {
                if o >= min_overlap && o > 0.0 {
                    out.push(CoarseTruth {
                        patch: p,
                        superpoint: s,
                        overlap: o,
                    });
                }
            }
        }
        out
    }

    /// Ground-truth fine correspondences as pixel/point pairs.
    pub fn gt_correspondences(&self) -> Vec<Correspondence2d3d> {
        self.gt_fine
            .iter()
            .map(|&(px, pt)| Correspondence2d3d {
                uv: self.spec.fine_pixel(px),
                xyz: self.cloud[pt],
            })
            .collect()
    }
}

fn unit_gaussian(rng: &mut Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn add_noise(v: &mut [f64], sigma: f64, rng: &mut Rng) {
    let s = sigma / (v.len() as f64).sqrt();
    for x in v {
        *x += s * rng.normal();
    }
}

fn mat_vec(m: &Tensor, v: &[f64]) -> Vec<f64> {
    (0..m.rows())
        .map(|r| m.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// Smooth depth field over the image, in metres.
struct Surface {
    base: f64,
    terms: Vec<[f64; 5]>,
    width: f64,
    height: f64,
}

impl Surface {
    fn depth(&self, uv: [f64; 2]) -> f64 {
        let (x, y) = (uv[0] / self.width, uv[1] / self.height);
        self.base
            + self
                .terms
                .iter()
                .map(|t| t[0] * (t[1] * x + t[2]).sin() * (t[3] * y + t[4]).cos())
                .sum::<f64>()
    }

    fn sample(spec: &SceneSpec, rng: &mut Rng) -> Result<Self> {
        let (lo, hi) = (spec.depth_min, spec.depth_max);
        for _ in 0..MAX_SURFACE_TRIES {
            let base = rng.uniform_in(lo + 0.3 * (hi - lo), lo + 0.7 * (hi - lo));
            let terms = (0..3)
                .map(|_| {
                    [
                        rng.uniform_in(0.05, 0.2) * (hi - lo),
                        rng.uniform_in(1.0, 6.0),
                        rng.uniform_in(0.0, std::f64::consts::TAU),
                        rng.uniform_in(1.0, 6.0),
                        rng.uniform_in(0.0, std::f64::consts::TAU),
                    ]
                })
                .collect();
            let s = Surface {
                base,
                terms,
                width: spec.image_width(),
                height: spec.image_height(),
            };
            let ok = (0..spec.fine_samples()).all(|i| {
                let d = s.depth(spec.fine_pixel(i));
                d > lo && d < hi
            });
            if ok {
                return Ok(s);
            }
        }
        Err(Error::Generation(format!(
            "no depth surface inside [{lo}, {hi}] after {MAX_SURFACE_TRIES} tries"
        )))
    }
}

/// Random rigid transform within the spec's rotation and translation bounds.
pub fn sample_pose(spec: &SceneSpec, rng: &mut Rng) -> RigidTransform {
    let axis = Vector3::from_vec(unit_gaussian(rng, 3));
    let angle = rng.uniform_in(0.0, spec.max_rotation_deg.to_radians());
    let dir = Vector3::from_vec(unit_gaussian(rng, 3));
    let t = dir * rng.uniform_in(0.0, spec.max_translation);
    RigidTransform::from_axis_angle(axis, angle, t)
}

/// Voxel-grid superpoints: voxel centroids, then every point joins its
/// nearest centroid. Empty superpoints are dropped.
pub fn voxel_superpoints(cloud: &[[f64; 3]], voxel: f64) -> (Vec<[f64; 3]>, Vec<Vec<usize>>) {
    let mut cells: BTreeMap<[i64; 3], ([f64; 3], usize)> = BTreeMap::new();
    for p in cloud {
        let key = [0, 1, 2].map(|i| (p[i] / voxel).floor() as i64);
        let e = cells.entry(key).or_insert(([0.0; 3], 0));
        for i in 0..3 {
            e.0[i] += p[i];
        }
        e.1 += 1;
    }
    let centroids: Vec<[f64; 3]> = cells
        .values()
        .map(|(s, n)| [s[0] / *n as f64, s[1] / *n as f64, s[2] / *n as f64])
        .collect();
    let mut members = vec![Vec::new(); centroids.len()];
    for (i, p) in cloud.iter().enumerate() {
        let mut best = 0;
        let mut bd = f64::INFINITY;
        for (j, c) in centroids.iter().enumerate() {
            let d = (0..3).map(|k| (p[k] - c[k]).powi(2)).sum::<f64>();
            if d < bd {
                bd = d;
                best = j;
            }
        }
        members[best].push(i);
    }
    let keep: Vec<usize> = (0..centroids.len()).filter(|&j| !members[j].is_empty()).collect();
    (
        keep.iter().map(|&j| centroids[j]).collect(),
        keep.iter().map(|&j| std::mem::take(&mut members[j])).collect(),
    )
}

/// Generates one pair. Identical spec and RNG state give an identical pair.
pub fn generate_pair(spec: &SceneSpec, rng: &mut Rng) -> Result<SyntheticPair> {
    spec.validate()?;
    let sensor = SensorModel::new(spec);
    let k = spec.intrinsics;
    let np = spec.patches();
    let nf = spec.fine_samples();
    let c = spec.feature_dim;
    let per_patch = spec.fine_per_side * spec.fine_per_side;

    let surface = Surface::sample(spec, rng)?;
    let pixels: Vec<[f64; 2]> = (0..nf).map(|i| spec.fine_pixel(i)).collect();
    let pixel_xyz: Vec<[f64; 3]> = pixels
        .iter()
        .map(|&uv| k.back_project(uv, surface.depth(uv)))
        .collect();

    // patch latents with cloned repeats; orthonormal when the width allows
    let mut latents: Vec<Vec<f64>> = if c >= np {
        orthonormal_basis(rng, c, np)
    } else {
        (0..np).map(|_| unit_gaussian(rng, c)).collect()
    };
    let n_clone = ((spec.repetition * np as f64).round() as usize).min(np.saturating_sub(1));
    if n_clone > 0 {
        let order = rng.sample_distinct(np, np);
        let (targets, sources) = order.split_at(n_clone);
        for (i, &t) in targets.iter().enumerate() {
            latents[t] = latents[sources[i % sources.len()]].clone();
        }
    }

    let mut patch_features = Tensor::zeros(&[np, c]);
    for p in 0..np {
        let mut f = mat_vec(&sensor.image_map, &latents[p]);
        add_noise(&mut f, spec.sigma_feat, rng);
        patch_features.row_mut(p).copy_from_slice(&f);
    }

    // rendered image: colour from the patch latent plus depth shading
    let (fh, fw) = spec.fine_dims();
    let mut image = Tensor::zeros(&[fh, fw, 3]);
    let span = spec.depth_max - spec.depth_min;
    for i in 0..nf {
        let p = i / per_patch;
        let color = mat_vec(&sensor.color_map, &latents[p]);
        let shade = (pixel_xyz[i][2] - spec.depth_min) / span;
        let (r, col) = spec.fine_cell(i);
        for ch in 0..3 {
            let v = 0.5 + 0.25 * color[ch].tanh() + 0.15 * (shade - 0.5) + spec.image_noise * rng.normal();
            image.data_mut()[(r * fw + col) * 3 + ch] = v;
        }
    }

    // fine latents
    let fine_latents: Vec<Vec<f64>> = (0..nf).map(|_| unit_gaussian(rng, spec.fine_dim)).collect();
    let mut fine_image_features = Tensor::zeros(&[nf, spec.fine_dim]);
    for i in 0..nf {
        let mut f = fine_latents[i].clone();
        add_noise(&mut f, spec.sigma_fine, rng);
        fine_image_features.row_mut(i).copy_from_slice(&f);
    }

    // visible samples, then subsample or pad
    let n_mask = (spec.masked_fraction * np as f64).round() as usize;
    let masked: Vec<bool> = {
        let mut m = vec![false; np];
        for p in rng.sample_distinct(np, n_mask.min(np)) {
            m[p] = true;
        }
        m
    };
    let mut sources: Vec<Source> = (0..nf)
        .filter(|&i| !masked[i / per_patch])
        .map(Source::Sample)
        .collect();
    if sources.is_empty() {
        return Err(Error::Generation("every patch is masked".into()));
    }
    if spec.n_points != 0 && spec.n_points < sources.len() {
        let mut keep = rng.sample_distinct(sources.len(), spec.n_points);
        keep.sort_unstable();
        sources = keep.into_iter().map(|i| sources[i]).collect();
    }
    while spec.n_points > sources.len() {
        let uv = [
            rng.uniform_in(0.0, spec.image_width()),
            rng.uniform_in(0.0, spec.image_height()),
        ];
        if spec.patch_of_pixel(uv).is_some_and(|p| !masked[p]) {
            sources.push(Source::Extra(uv));
        }
    }
    let mut order: Vec<usize> = (0..sources.len()).collect();
    rng.shuffle(&mut order);
    let sources: Vec<Source> = order.into_iter().map(|i| sources[i]).collect();

    let t_gt = sample_pose(spec, rng);
    let inv = t_gt.inverse();
    let mut cloud = Vec::with_capacity(sources.len());
    let mut point_patch = Vec::with_capacity(sources.len());
    let mut fine_point_features = Tensor::zeros(&[sources.len(), spec.fine_dim]);
    let mut gt_fine = Vec::new();
    for (j, s) in sources.iter().enumerate() {
        let (cam, patch, mut f) = match *s {
            Source::Sample(i) => {
                gt_fine.push((i, j));
                (pixel_xyz[i], i / per_patch, fine_latents[i].clone())
            }
            Source::Extra(uv) => (
                k.back_project(uv, surface.depth(uv)),
                spec.patch_of_pixel(uv).expect("inside image"),
                unit_gaussian(rng, spec.fine_dim),
            ),
        };
        cloud.push(inv.apply(&cam));
        point_patch.push(patch);
        add_noise(&mut f, spec.sigma_fine, rng);
        fine_point_features.row_mut(j).copy_from_slice(&f);
    }
    gt_fine.sort_unstable();

    let (superpoint_positions, superpoint_members) = voxel_superpoints(&cloud, spec.voxel_size);
    let mut superpoint_features = Tensor::zeros(&[superpoint_members.len(), c]);
    for (s, mem) in superpoint_members.iter().enumerate() {
        let mut z = vec![0.0; c];
        for &m in mem {
            for (a, b) in z.iter_mut().zip(&latents[point_patch[m]]) {
                *a += b;
            }
        }
        let n = z.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            z.iter_mut().for_each(|x| *x /= n);
        }
        let mut f = mat_vec(&sensor.point_map, &z);
        add_noise(&mut f, spec.sigma_feat, rng);
        superpoint_features.row_mut(s).copy_from_slice(&f);
    }

    Ok(SyntheticPair {
        id: String::new(),
        scene: String::new(),
        spec: *spec,
        image,
        patch_features,
        pixel_xyz,
        fine_image_features,
        cloud,
        fine_point_features,
        superpoint_positions,
        superpoint_members,
        superpoint_features,
        t_gt,
        gt_fine,
    })
}

#[derive(Debug, Clone, Copy)]
enum Source {
    Sample(usize),
    Extra([f64; 2]),
}

/// Replaces exactly `round(fraction·n)` pixels with uniform random ones.
/// Returns the corrupted set and the outlier mask.
pub fn corrupt_correspondences(
    corrs: &[Correspondence2d3d],
    fraction: f64,
    width: f64,
    height: f64,
    rng: &mut Rng,
) -> Result<(Vec<Correspondence2d3d>, Vec<bool>)> {
    unit_interval("outlier fraction", fraction)?;
    let n_out = (fraction * corrs.len() as f64).round() as usize;
    let mut out = corrs.to_vec();
    let mut mask = vec![false; corrs.len()];
    for i in rng.sample_distinct(corrs.len(), n_out) {
        out[i].uv = [rng.uniform_in(0.0, width), rng.uniform_in(0.0, height)];
        mask[i] = true;
    }
    Ok((out, mask))
}

/// Oracle task for the agent selection schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedTask {
    /// `M×C` candidate queries.
    pub queries: Tensor,
    /// `P×C` image-side features sharing a `k`-dimensional subspace.
    pub image_features: Tensor,
    pub point_features: Tensor,
    pub image_pooled: Vec<f64>,
    pub point_pooled: Vec<f64>,
    /// Indices of the informative queries, ascending.
    pub planted: Vec<usize>,
}

fn orthonormal_basis(rng: &mut Rng, dim: usize, count: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

/// Queries of which `k` lie close to the shared image/point direction and
/// `M−k` are isotropic noise.
///
/// Image and point features are `U·(a + noise)` and `U·(a + noise)` for an
/// orthonormal `C×k` basis `U`, so both pooled vectors point along `U·a`.
/// Planted queries tilt `U·a` by 25° inside the subspace (cosine ≈ 0.9).
pub fn generate_planted_query_task(m: usize, k: usize, c: usize, rng: &mut Rng) -> Result<PlantedTask> {
    if k == 0 || k > m {
        return Err(Error::Config(format!("planted task needs 1 <= k={k} <= M={m}")));
    }
    if c < k + 1 {
        return Err(Error::Config(format!("planted task needs C > k, got C={c}")));
    }
    let basis = orthonormal_basis(rng, c, k);
    let lift = |coef: &[f64]| -> Vec<f64> {
        let mut v = vec![0.0; c];
        for (b, &a) in basis.iter().zip(coef) {
            v.iter_mut().zip(b).for_each(|(x, y)| *x += a * y);
        }
        v
    };
    let a = unit_gaussian(rng, k);
    let rows = 16;
    let side = |rng: &mut Rng| {
        let mut t = Tensor::zeros(&[rows, c]);
        for r in 0..rows {
            let coef: Vec<f64> = a.iter().map(|x| x + 0.3 * rng.normal() / (k as f64).sqrt()).collect();
            t.row_mut(r).copy_from_slice(&lift(&coef));
        }
        t
    };
    let image_features = side(rng);
    let point_features = side(rng);
    let image_pooled = image_features.mean_rows()?;
    let point_pooled = point_features.mean_rows()?;

    let mut planted = rng.sample_distinct(m, k);
    planted.sort_unstable();
    let tilt = 25f64.to_radians();
    let mut queries = Tensor::zeros(&[m, c]);
    for i in 0..m {
        let q = if planted.binary_search(&i).is_ok() {
            // direction in the subspace orthogonal to a
            let mut e = unit_gaussian(rng, k);
            let d: f64 = e.iter().zip(&a).map(|(x, y)| x * y).sum();
            e.iter_mut().zip(&a).for_each(|(x, y)| *x -= d * y);
            let n = e.iter().map(|x| x * x).sum::<f64>().sqrt();
            let coef: Vec<f64> = if n > 1e-12 {
                a.iter()
                    .zip(&e)
                    .map(|(x, y)| tilt.cos() * x + tilt.sin() * y / n)
                    .collect()
            } else {
                a.clone()
            };
            lift(&coef)
        } else {
            unit_gaussian(rng, c)
        };
        queries.row_mut(i).copy_from_slice(&q);
    }
    Ok(PlantedTask {
        queries,
        image_features,
        point_features,
        image_pooled,
        point_pooled,
        planted,
    })
}

crate::kv::kv_fields!(SceneSpec {
    "grid_rows" => grid_rows,
    "grid_cols" => grid_cols,
    "patch_size" => patch_size,
    "fine_per_side" => fine_per_side,
    "fx" => intrinsics.fx,
    "fy" => intrinsics.fy,
    "cx" => intrinsics.cx,
    "cy" => intrinsics.cy,
    "depth_min" => depth_min,
    "depth_max" => depth_max,
    "max_rotation_deg" => max_rotation_deg,
    "max_translation" => max_translation,
    "feature_dim" => feature_dim,
    "fine_dim" => fine_dim,
    "sigma_feat" => sigma_feat,
    "sigma_fine" => sigma_fine,
    "image_noise" => image_noise,
    "repetition" => repetition,
    "masked_fraction" => masked_fraction,
    "outlier_fraction" => outlier_fraction,
    "n_points" => n_points,
    "voxel_size" => voxel_size,
    "modality_gap" => modality_gap,
    "sensor_seed" => sensor_seed,
});

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::local_reward;
    use crate::matching::{coarse_match, MatchConfig};

    fn small_spec() -> SceneSpec {
        SceneSpec::default()
    }

    #[test]
    fn gt_fine_reprojects_exactly() {
        let spec = small_spec();
        let pair = generate_pair(&spec, &mut Rng::new(1)).unwrap();
        assert_eq!(pair.cloud.len(), spec.fine_samples());
        for c in pair.gt_correspondences() {
            let uv = spec.intrinsics.pixel(&pair.t_gt.apply(&c.xyz)).unwrap();
            assert!((uv[0] - c.uv[0]).abs() < 1e-9 && (uv[1] - c.uv[1]).abs() < 1e-9);
        }
        pair.t_gt.check().unwrap();
        let (re, _) = crate::pose::pose_errors(&pair.t_gt, &RigidTransform::identity());
        assert!(re <= 45.0 + 1e-9 && pair.t_gt.t.norm() <= 1.0);
    }

    #[test]
    fn deterministic_by_seed() {
        let spec = small_spec();
        let a = generate_pair(&spec, &mut Rng::new(7)).unwrap();
        let b = generate_pair(&spec, &mut Rng::new(7)).unwrap();
        assert_eq!(a, b);
        let c = generate_pair(&spec, &mut Rng::new(8)).unwrap();
        assert_ne!(a.cloud, c.cloud);
    }

    #[test]
    fn superpoint_members_partition_cloud() {
        let pair = generate_pair(&small_spec(), &mut Rng::new(2)).unwrap();
        let mut seen = vec![false; pair.cloud.len()];
        for m in &pair.superpoint_members {
            assert!(!m.is_empty());
            for &i in m {
                assert!(!seen[i]);
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    /// `(clearly in, clearly out)` of the top `c` among `values` at `i`.
    fn rank_class(values: &[f64], i: usize, c: usize) -> (bool, bool) {
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let v = values[i];
        let cth = sorted[c - 1];
        let next = sorted.get(c).copied().unwrap_or(f64::NEG_INFINITY);
        (v > next + 1e-9, v < cth - 1e-9)
    }

    #[test]
    fn noiseless_unique_features_match_truth() {
        let spec = SceneSpec {
            sigma_feat: 0.0,
            repetition: 0.0,
            modality_gap: 0.0,
            feature_dim: 64,
            ..small_spec()
        };
        let cfg = MatchConfig::default();
        for seed in 0..5 {
            let pair = generate_pair(&spec, &mut Rng::new(seed)).unwrap();
            let m = coarse_match(&pair.patch_features, &pair.superpoint_features, &cfg).unwrap();
            let matched: std::collections::HashSet<(usize, usize)> =
                m.iter().map(|c| (c.patch, c.superpoint)).collect();
            // with orthonormal latents the cosine is the column-normalized overlap
            let ov = pair.overlap_matrix();
            let (np, ns) = (ov.len(), ov[0].len());
            let mut q = vec![vec![0.0; ns]; np];
            for s in 0..ns {
                let n = (0..np).map(|p| ov[p][s] * ov[p][s]).sum::<f64>().sqrt();
                for p in 0..np {
                    q[p][s] = ov[p][s] / n;
                }
            }
            let mut checked = 0;
            for p in 0..np {
                for s in 0..ns {
                    let col: Vec<f64> = (0..np).map(|i| q[i][s]).collect();
                    let (row_in, row_out) = rank_class(&q[p], s, cfg.top_c);
                    let (col_in, col_out) = rank_class(&col, p, cfg.top_c);
                    if row_in && col_in {
                        assert!(matched.contains(&(p, s)), "seed {seed} missed ({p},{s})");
                        checked += 1;
                    }
                    if row_out || col_out {
                        assert!(!matched.contains(&(p, s)), "seed {seed} spurious ({p},{s})");
                    }
                }
            }
            assert!(checked > 0);
            assert!(m
                .iter()
                .filter(|c| c.similarity > 1e-9)
                .all(|c| ov[c.patch][c.superpoint] > 0.0));
        }
    }

    #[test]
    fn corruption_count_is_exact() {
        let pair = generate_pair(&small_spec(), &mut Rng::new(3)).unwrap();
        let gt = pair.gt_correspondences();
        let (c, mask) = corrupt_correspondences(&gt, 0.3, 640.0, 480.0, &mut Rng::new(1)).unwrap();
        assert_eq!(mask.iter().filter(|&&b| b).count(), (0.3 * gt.len() as f64).round() as usize);
        for ((a, b), &o) in gt.iter().zip(&c).zip(&mask) {
            assert_eq!(a.xyz, b.xyz);
            if !o {
                assert_eq!(a.uv, b.uv);
            }
        }
    }

    #[test]
    fn planted_rewards() {
        let mut rng = Rng::new(5);
        let t = generate_planted_query_task(32, 12, 64, &mut rng).unwrap();
        assert_eq!(t.planted.len(), 12);
        let mut noise_sum = 0.0;
        for i in 0..32 {
            let r = local_reward(t.queries.row(i), &t.image_pooled, &t.point_pooled);
            if t.planted.contains(&i) {
                assert!(r >= 0.8, "planted reward {r}");
            } else {
                noise_sum += r.abs();
            }
        }
        assert!(noise_sum / 20.0 <= 0.2);
        let all = generate_planted_query_task(5, 5, 8, &mut rng).unwrap();
        assert_eq!(all.planted, vec![0, 1, 2, 3, 4]);
        let a = generate_planted_query_task(32, 12, 64, &mut Rng::new(9)).unwrap();
        let b = generate_planted_query_task(32, 12, 64, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn masked_patches_leave_cloud() {
        let spec = SceneSpec {
            masked_fraction: 0.25,
            ..small_spec()
        };
        let pair = generate_pair(&spec, &mut Rng::new(4)).unwrap();
        assert_eq!(pair.cloud.len(), spec.fine_samples() * 3 / 4);
        let spec = SceneSpec {
            n_points: 1000,
            ..small_spec()
        };
        let pair = generate_pair(&spec, &mut Rng::new(4)).unwrap();
        assert_eq!(pair.cloud.len(), 1000);
        assert_eq!(pair.gt_fine.len(), spec.fine_samples());
    }
}
