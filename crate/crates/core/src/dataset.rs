//! On-disk dataset: a manifest plus one directory per pair.
//!
//! ```text
//! <root>/manifest.txt              key = value; pair.<id> = <split> <scene>
//! <root>/<id>/pair.txt             id, scene and scene spec
//! <root>/<id>/*.a2si               tensors
//! <root>/<id>/cloud.xyz            one "x y z" line per point
//! <root>/<id>/gt_pose.txt          cloud-to-camera pose, trajectory line
//! <root>/<id>/image.ppm            preview of image.a2si
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kv::{self, KvFields};
use crate::numerics::io::{read_tensor, write_tensor};
use crate::numerics::{derive_seed, Rng, Tensor};
use crate::pose::{read_trajectory, write_trajectory};
use crate::synth::{generate_pair, SceneSpec, SyntheticPair};

pub const MANIFEST: &str = "manifest.txt";
const FORMAT_NAME: &str = "agentreg-dataset";
const VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Format(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub scene: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

fn valid_name(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= 128
        && s
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl Manifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn render(&self) -> String {
        let mut e = vec![
            ("format".to_string(), FORMAT_NAME.to_string()),
            ("version".to_string(), VERSION.to_string()),
            ("pairs".to_string(), self.entries.len().to_string()),
        ];
        for m in &self.entries {
            e.push((
                format!("pair.{}", m.id),
                format!("{} {}", m.split.as_str(), m.scene),
            ));
        }
        kv::render(&e)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut declared = None;
        let mut format_seen = false;
        for (k, v) in kv::parse(text)? {
            match k.as_str() {
                "format" if v == FORMAT_NAME => format_seen = true,
                "version" if v == VERSION => {}
                "pairs" => {
                    declared = Some(
                        v.parse::<usize>()
                            .map_err(|_| Error::Format(format!("bad pair count {v:?}")))?,
                    )
                }
                _ => {
                    let id = k
                        .strip_prefix("pair.")
                        .ok_or_else(|| Error::Format(format!("unexpected manifest key {k}")))?;
                    let (split, scene) = v
                        .split_once(' ')
                        .ok_or_else(|| Error::Format(format!("entry {id}: need split and scene")))?;
                    let scene = scene.trim();
                    if !valid_name(id) || !valid_name(scene) {
                        return Err(Error::Format(format!("bad pair or scene name in {k}")));
                    }
                    entries.push(ManifestEntry {
                        id: id.to_string(),
                        split: Split::parse(split)?,
                        scene: scene.to_string(),
                    });
                }
            }
        }
        if !format_seen {
            return Err(Error::Format("not a dataset manifest".into()));
        }
        if declared != Some(entries.len()) {
            return Err(Error::Format(format!(
                "manifest declares {declared:?} pairs, lists {}",
                entries.len()
            )));
        }
        Ok(Manifest { entries })
    }

    pub fn read(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Manifest::parse(&text)
    }
}

/// One `x y z` line per point.
pub fn format_xyz(points: &[[f64; 3]]) -> String {
    let mut s = String::with_capacity(points.len() * 64);
    for p in points {
        let _ = writeln!(s, "{:?} {:?} {:?}", p[0], p[1], p[2]);
    }
    s
}

/// Parses ASCII xyz; blank lines and `#` comments are skipped.
pub fn parse_xyz(text: &str) -> Result<Vec<[f64; 3]>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Format(format!("xyz line {}: not a number", n + 1)))?;
        if v.len() != 3 || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Format(format!(
                "xyz line {}: need three finite numbers",
                n + 1
            )));
        }
        out.push([v[0], v[1], v[2]]);
    }
    Ok(out)
}

fn points_tensor(p: &[[f64; 3]]) -> Result<Tensor> {
    Tensor::new(vec![p.len(), 3], p.iter().flatten().copied().collect())
}

fn tensor_points(t: &Tensor, what: &str) -> Result<Vec<[f64; 3]>> {
    let (_, c) = t.shape2()?;
    if c != 3 {
        return Err(Error::Format(format!("{what}: expected 3 columns")));
    }
    Ok(t.data().chunks_exact(3).map(|r| [r[0], r[1], r[2]]).collect())
}

fn index_of(v: f64, bound: usize, what: &str) -> Result<usize> {
    if v.fract() == 0.0 && v >= 0.0 && v < bound as f64 {
        Ok(v as usize)
    } else {
        Err(Error::Format(format!("{what}: bad index {v}")))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn pair_dir(root: &Path, id: &str) -> PathBuf {
    root.join(id)
}

pub fn write_pair(dir: &Path, pair: &SyntheticPair) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut meta = vec![
        ("id".to_string(), pair.id.clone()),
        ("scene".to_string(), pair.scene.clone()),
    ];
    meta.extend(kv::prefixed("spec.", &pair.spec));
    write_text(&dir.join("pair.txt"), &kv::render(&meta))?;
    write_tensor(&dir.join("image.a2si"), &pair.image)?;
    crate::pnm::write(&dir.join("image.ppm"), &pair.image)?;
    write_tensor(&dir.join("patch_features.a2si"), &pair.patch_features)?;
    write_tensor(&dir.join("pixel_xyz.a2si"), &points_tensor(&pair.pixel_xyz)?)?;
    write_tensor(&dir.join("fine_image_features.a2si"), &pair.fine_image_features)?;
    write_tensor(&dir.join("fine_point_features.a2si"), &pair.fine_point_features)?;
    write_tensor(
        &dir.join("superpoint_positions.a2si"),
        &points_tensor(&pair.superpoint_positions)?,
    )?;
    write_tensor(&dir.join("superpoint_features.a2si"), &pair.superpoint_features)?;
    let mut owner = vec![0.0; pair.cloud.len()];
    for (s, m) in pair.superpoint_members.iter().enumerate() {
        for &i in m {
            owner[i] = s as f64;
        }
    }
    write_tensor(
        &dir.join("superpoint_of_point.a2si"),
        &Tensor::vector(owner)?,
    )?;
    if !pair.gt_fine.is_empty() {
        let flat = pair
            .gt_fine
            .iter()
            .flat_map(|&(a, b)| [a as f64, b as f64])
            .collect();
        write_tensor(
            &dir.join("gt_fine.a2si"),
            &Tensor::new(vec![pair.gt_fine.len(), 2], flat)?,
        )?;
    }
    write_text(&dir.join("cloud.xyz"), &format_xyz(&pair.cloud))?;
    write_trajectory(&dir.join("gt_pose.txt"), &[pair.t_gt])
}

fn expect_shape(t: &Tensor, dims: &[usize], what: &str) -> Result<()> {
    if t.dims() != dims {
        return Err(Error::Format(format!(
            "{what}: shape {:?}, expected {dims:?}",
            t.dims()
        )));
    }
    Ok(())
}

pub fn read_pair(dir: &Path) -> Result<SyntheticPair> {
    let mut spec = SceneSpec::default();
    let mut id = None;
    let mut scene = None;
    for (k, v) in kv::parse(&read_text(&dir.join("pair.txt"))?)? {
        match k.as_str() {
            "id" => id = Some(v),
            "scene" => scene = Some(v),
            _ => {
                let known = match k.strip_prefix("spec.") {
                    Some(f) => spec
                        .kv_set(f, &v)
                        .map_err(|e| Error::Format(e.to_string()))?,
                    None => false,
                };
                if !known {
                    return Err(Error::Format(format!("unknown pair key {k}")));
                }
            }
        }
    }
    spec.validate().map_err(|e| Error::Format(e.to_string()))?;
    let (np, nf, c, cf) = (
        spec.patches(),
        spec.fine_samples(),
        spec.feature_dim,
        spec.fine_dim,
    );
    let (fh, fw) = spec.fine_dims();
    let image = read_tensor(&dir.join("image.a2si"))?;
    expect_shape(&image, &[fh, fw, 3], "image")?;
    let patch_features = read_tensor(&dir.join("patch_features.a2si"))?;
    expect_shape(&patch_features, &[np, c], "patch_features")?;
    let pixel_xyz = read_tensor(&dir.join("pixel_xyz.a2si"))?;
    expect_shape(&pixel_xyz, &[nf, 3], "pixel_xyz")?;
    let fine_image_features = read_tensor(&dir.join("fine_image_features.a2si"))?;
    expect_shape(&fine_image_features, &[nf, cf], "fine_image_features")?;
    let cloud = parse_xyz(&read_text(&dir.join("cloud.xyz"))?)?;
    let n = cloud.len();
    if n == 0 {
        return Err(Error::Format("empty cloud".into()));
    }
    let fine_point_features = read_tensor(&dir.join("fine_point_features.a2si"))?;
    expect_shape(&fine_point_features, &[n, cf], "fine_point_features")?;
    let sp_pos = read_tensor(&dir.join("superpoint_positions.a2si"))?;
    let superpoint_positions = tensor_points(&sp_pos, "superpoint_positions")?;
    let ns = superpoint_positions.len();
    let superpoint_features = read_tensor(&dir.join("superpoint_features.a2si"))?;
    expect_shape(&superpoint_features, &[ns, c], "superpoint_features")?;
    let owner = read_tensor(&dir.join("superpoint_of_point.a2si"))?;
    expect_shape(&owner, &[n], "superpoint_of_point")?;
    let mut superpoint_members = vec![Vec::new(); ns];
    for (i, &s) in owner.data().iter().enumerate() {
        superpoint_members[index_of(s, ns, "superpoint_of_point")?].push(i);
    }
    let gt_path = dir.join("gt_fine.a2si");
    let gt_fine = if gt_path.exists() {
        let g = read_tensor(&gt_path)?;
        let (rows, cols) = g.shape2()?;
        if cols != 2 {
            return Err(Error::Format("gt_fine: expected 2 columns".into()));
        }
        (0..rows)
            .map(|r| {
                Ok((
                    index_of(g.at2(r, 0), nf, "gt_fine")?,
                    index_of(g.at2(r, 1), n, "gt_fine")?,
                ))
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let poses = read_trajectory(&dir.join("gt_pose.txt"))?;
    if poses.len() != 1 {
        return Err(Error::Format(format!(
            "gt_pose.txt: expected one pose, found {}",
            poses.len()
        )));
    }
    Ok(SyntheticPair {
        id: id.ok_or_else(|| Error::Format("pair.txt lacks id".into()))?,
        scene: scene.ok_or_else(|| Error::Format("pair.txt lacks scene".into()))?,
        spec,
        image,
        patch_features,
        pixel_xyz: tensor_points(&pixel_xyz, "pixel_xyz")?,
        fine_image_features,
        cloud,
        fine_point_features,
        superpoint_positions,
        superpoint_members,
        superpoint_features,
        t_gt: poses[0],
        gt_fine,
    })
}

/// How many pairs of each split to generate and how many scenes they cycle through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetSize {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub scenes: usize,
}

impl Default for DatasetSize {
    fn default() -> Self {
        DatasetSize {
            train: 16,
            val: 4,
            test: 16,
            scenes: 4,
        }
    }
}

crate::kv::kv_fields!(DatasetSize {
    "train" => train,
    "val" => val,
    "test" => test,
    "scenes" => scenes,
});

/// Pairs of every split in manifest order; pair `i` uses a seed derived
/// from `(seed, i)` so generation order does not matter.
pub fn generate_dataset(
    spec: &SceneSpec,
    size: &DatasetSize,
    seed: u64,
) -> Result<(Manifest, Vec<SyntheticPair>)> {
    spec.validate()?;
    if size.scenes == 0 {
        return Err(Error::Config("scenes must be positive".into()));
    }
    let plan: Vec<(Split, usize)> = [
        (Split::Train, size.train),
        (Split::Val, size.val),
        (Split::Test, size.test),
    ]
    .into_iter()
    .flat_map(|(s, n)| std::iter::repeat_n(s, n))
    .enumerate()
    .map(|(i, s)| (s, i))
    .collect();
    let pairs: Vec<SyntheticPair> = plan
        .par_iter()
        .map(|&(split, i)| {
            let mut rng = Rng::new(derive_seed(seed, i as u64));
            let mut pair = generate_pair(spec, &mut rng)?;
            pair.id = format!("{}-{i:04}", split.as_str());
            pair.scene = format!("scene-{}", i % size.scenes);
            Ok(pair)
        })
        .collect::<Result<_>>()?;
    let manifest = Manifest {
        entries: plan
            .iter()
            .zip(&pairs)
            .map(|(&(split, _), p)| ManifestEntry {
                id: p.id.clone(),
                split,
                scene: p.scene.clone(),
            })
            .collect(),
    };
    Ok((manifest, pairs))
}

pub fn write_dataset(root: &Path, manifest: &Manifest, pairs: &[SyntheticPair]) -> Result<()> {
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    for p in pairs {
        write_pair(&pair_dir(root, &p.id), p)?;
    }
    write_text(&root.join(MANIFEST), &manifest.render())
}

/// Reads every pair of `split` listed in the manifest, in manifest order.
pub fn read_split(root: &Path, manifest: &Manifest, split: Split) -> Result<Vec<SyntheticPair>> {
    manifest
        .split(split)
        .map(|e| {
            let p = read_pair(&pair_dir(root, &e.id))?;
            if p.id != e.id {
                return Err(Error::Format(format!("pair {} stores id {}", e.id, p.id)));
            }
            Ok(p)
        })
        .collect()
}
