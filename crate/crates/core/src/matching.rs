//! Mutual top-k patch matching and fine pixel-to-point refinement.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub top_c: usize,
    pub s_min: f64,
    pub s_fine: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            top_c: 3,
            s_min: 0.0,
            s_fine: 0.0,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_c == 0 {
            return Err(Error::Config("top_c must be at least 1".into()));
        }
        if !self.s_min.is_finite() || !self.s_fine.is_finite() {
            return Err(Error::Config("similarity thresholds must be finite".into()));
        }
        Ok(())
    }
}

/// Image-side patch descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub features: Tensor,
    /// Pixel centre `(u, v)` of every patch.
    pub centers: Vec<[f64; 2]>,
    pub patch_size: f64,
}

/// Point-side superpoint descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct PointFeatures {
    pub features: Tensor,
    pub positions: Vec<[f64; 3]>,
    /// Indices of the fine points owned by each superpoint.
    pub members: Vec<Vec<usize>>,
}

/// Fine image samples and the patch each belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct FineImage {
    pub features: Tensor,
    pub pixels: Vec<[f64; 2]>,
    pub patch_pixels: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinePoints {
    pub features: Tensor,
    pub xyz: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseMatch {
    pub patch: usize,
    pub superpoint: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FineMatch {
    pub pixel: usize,
    pub point: usize,
    pub uv: [f64; 2],
    pub xyz: [f64; 3],
    pub similarity: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrespondenceSet {
    pub coarse: Vec<CoarseMatch>,
    pub fine: Vec<FineMatch>,
}

fn unit_rows(x: &Tensor) -> Vec<Vec<f64>> {
    (0..x.rows())
        .map(|r| {
            let row = x.row(r);
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                row.iter().map(|v| v / n).collect()
            } else {
                vec![0.0; row.len()]
            }
        })
        .collect()
}

/// Cosine similarities `P_a×P_b`, rows computed in parallel. Zero-norm rows
/// have similarity zero with everything.
pub fn cosine_matrix(a: &Tensor, b: &Tensor) -> Result<Vec<Vec<f64>>> {
    let (_, ca) = a.shape2()?;
    let (_, cb) = b.shape2()?;
    if ca != cb {
        return Err(Error::Dimension(format!("feature widths {ca} and {cb}")));
    }
    let ua = unit_rows(a);
    let ub = unit_rows(b);
    Ok(ua
        .par_iter()
        .map(|x| {
            ub.iter()
                .map(|y| {
                    x.iter()
                        .zip(y)
                        .map(|(p, q)| p * q)
                        .sum::<f64>()
                        .clamp(-1.0, 1.0)
                })
                .collect()
        })
        .collect())
}

/// Indices of the `c` largest values, ties toward the lower index.
fn top_set(values: impl Iterator<Item = f64>, c: usize) -> Vec<usize> {
    let mut idx: Vec<(usize, f64)> = values.enumerate().collect();
    idx.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    idx.truncate(c);
    idx.into_iter().map(|(i, _)| i).collect()
}

fn by_similarity(a: &CoarseMatch, b: &CoarseMatch) -> std::cmp::Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then(a.patch.cmp(&b.patch))
        .then(a.superpoint.cmp(&b.superpoint))
}

/// Pairs that are in each other's top-`top_c` with similarity at least
/// `s_min`, most similar first.
pub fn coarse_match(image: &Tensor, points: &Tensor, cfg: &MatchConfig) -> Result<Vec<CoarseMatch>> {
    cfg.validate()?;
    let sim = cosine_matrix(image, points)?;
    let (pi, pp) = (image.rows(), points.rows());
    let row_top: Vec<Vec<usize>> = sim
        .iter()
        .map(|r| top_set(r.iter().copied(), cfg.top_c))
        .collect();
    let mut col_member = vec![vec![false; pi]; pp];
    for (j, col) in col_member.iter_mut().enumerate() {
        for i in top_set((0..pi).map(|i| sim[i][j]), cfg.top_c) {
            col[i] = true;
        }
    }
    let mut out = Vec::new();
    for (i, tops) in row_top.iter().enumerate() {
        for &j in tops {
            if col_member[j][i] && sim[i][j] >= cfg.s_min {
                out.push(CoarseMatch {
                    patch: i,
                    superpoint: j,
                    similarity: sim[i][j],
                });
            }
        }
    }
    out.sort_by(by_similarity);
    Ok(out)
}

/// Mutual nearest neighbours inside every matched patch/superpoint pair.
///
/// A pixel or point claimed by several coarse pairs keeps only its most
/// similar match (lower indices win ties). Output is sorted by pixel index.
pub fn fine_match(
    coarse: &[CoarseMatch],
    image: &FineImage,
    points: &FinePoints,
    members: &[Vec<usize>],
    s_fine: f64,
) -> Result<Vec<FineMatch>> {
    if image.features.cols() != points.features.cols() {
        return Err(Error::Dimension(format!(
            "fine feature widths {} and {}",
            image.features.cols(),
            points.features.cols()
        )));
    }
    let ui = unit_rows(&image.features);
    let up = unit_rows(&points.features);
    let mut candidates: Vec<FineMatch> = Vec::new();
    for m in coarse {
        let pix = image
            .patch_pixels
            .get(m.patch)
            .ok_or_else(|| Error::Dimension(format!("patch {} out of range", m.patch)))?;
        let pts = members
            .get(m.superpoint)
            .ok_or_else(|| Error::Dimension(format!("superpoint {} out of range", m.superpoint)))?;
        if pix.is_empty() || pts.is_empty() {
            continue;
        }
        let sim: Vec<Vec<f64>> = pix
            .iter()
            .map(|&a| {
                pts.iter()
                    .map(|&b| {
                        ui[a].iter().zip(&up[b]).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0)
                    })
                    .collect()
            })
            .collect();
        let best_col: Vec<usize> = (0..pts.len())
            .map(|b| top_set((0..pix.len()).map(|a| sim[a][b]), 1)[0])
            .collect();
        for (a, row) in sim.iter().enumerate() {
            let b = top_set(row.iter().copied(), 1)[0];
            if best_col[b] == a && row[b] >= s_fine {
                candidates.push(FineMatch {
                    pixel: pix[a],
                    point: pts[b],
                    uv: image.pixels[pix[a]],
                    xyz: points.xyz[pts[b]],
                    similarity: row[b],
                });
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.similarity
            .total_cmp(&a.similarity)
            .then(a.pixel.cmp(&b.pixel))
            .then(a.point.cmp(&b.point))
    });
    let mut used_pix = std::collections::HashSet::new();
    let mut used_pt = std::collections::HashSet::new();
    let mut out: Vec<FineMatch> = candidates
        .into_iter()
        .filter(|c| {
            if used_pix.contains(&c.pixel) || used_pt.contains(&c.point) {
                return false;
            }
            used_pix.insert(c.pixel);
            used_pt.insert(c.point);
            true
        })
        .collect();
    out.sort_by_key(|c| (c.pixel, c.point));
    Ok(out)
}

/// CSV with header `u,v,x,y,z,similarity,level`; coarse rows use the patch
/// centre and superpoint position.
pub fn write_correspondence_csv<W: Write>(
    mut w: W,
    set: &CorrespondenceSet,
    grid: &FeatureGrid,
    points: &PointFeatures,
) -> std::io::Result<()> {
    writeln!(w, "u,v,x,y,z,similarity,level")?;
    for c in &set.coarse {
        let uv = grid.centers[c.patch];
        let p = points.positions[c.superpoint];
        writeln!(
            w,
            "{},{},{},{},{},{},coarse",
            uv[0], uv[1], p[0], p[1], p[2], c.similarity
        )?;
    }
    for f in &set.fine {
        writeln!(
            w,
            "{},{},{},{},{},{},fine",
            f.uv[0], f.uv[1], f.xyz[0], f.xyz[1], f.xyz[2], f.similarity
        )?;
    }
    Ok(())
}

pub fn save_correspondence_csv(
    path: &Path,
    set: &CorrespondenceSet,
    grid: &FeatureGrid,
    points: &PointFeatures,
) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut bw = std::io::BufWriter::new(f);
    write_correspondence_csv(&mut bw, set, grid, points).map_err(|e| Error::io(path, e))?;
    bw.flush().map_err(|e| Error::io(path, e))
}

crate::kv::kv_fields!(MatchConfig {
    "top_c" => top_c,
    "s_min" => s_min,
    "s_fine" => s_fine,
});

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn randn(rng: &mut Rng, r: usize, c: usize) -> Tensor {
        Tensor::new(vec![r, c], (0..r * c).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn permuted_twins_match() {
        let mut rng = Rng::new(1);
        let a = randn(&mut rng, 8, 16);
        let perm = [5, 2, 7, 0, 1, 6, 3, 4];
        let b = a.select_rows(&perm).unwrap();
        let cfg = MatchConfig {
            top_c: 1,
            ..Default::default()
        };
        let m = coarse_match(&a, &b, &cfg).unwrap();
        assert_eq!(m.len(), 8);
        for c in m {
            assert_eq!(perm[c.superpoint], c.patch);
            assert!((c.similarity - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn orthogonal_features_give_nothing() {
        let a = Tensor::from_rows(&[vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![0.0, 0.0, 1.0, 0.0], vec![0.0, 0.0, 0.0, 1.0]]).unwrap();
        let cfg = MatchConfig {
            s_min: 0.1,
            ..Default::default()
        };
        assert!(coarse_match(&a, &b, &cfg).unwrap().is_empty());
    }

    #[test]
    fn top1_equals_mutual_argmax_scan() {
        let mut rng = Rng::new(2);
        for _ in 0..20 {
            let a = randn(&mut rng, 6, 5);
            let b = randn(&mut rng, 8, 5);
            let cfg = MatchConfig {
                top_c: 1,
                s_min: -1.0,
                s_fine: 0.0,
            };
            let mut got: Vec<(usize, usize)> = coarse_match(&a, &b, &cfg)
                .unwrap()
                .iter()
                .map(|c| (c.patch, c.superpoint))
                .collect();
            got.sort();
            let cos = |i: usize, j: usize| {
                let (x, y) = (a.row(i), b.row(j));
                let d: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
                let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                d / (nx * ny)
            };
            let mut want = Vec::new();
            for i in 0..6 {
                let mut bj = 0;
                for j in 1..8 {
                    if cos(i, j) > cos(i, bj) {
                        bj = j;
                    }
                }
                let mut bi = 0;
                for k in 1..6 {
                    if cos(k, bj) > cos(bi, bj) {
                        bi = k;
                    }
                }
                if bi == i {
                    want.push((i, bj));
                }
            }
            assert_eq!(got, want);
        }
    }

    #[test]
    fn scale_invariance_and_mutuality() {
        let mut rng = Rng::new(3);
        let a = randn(&mut rng, 7, 4);
        let b = randn(&mut rng, 9, 4);
        let cfg = MatchConfig::default();
        let m1 = coarse_match(&a, &b, &cfg).unwrap();
        let m2 = coarse_match(&a.scale(3.7), &b.scale(0.2), &cfg).unwrap();
        let key = |m: &[CoarseMatch]| m.iter().map(|c| (c.patch, c.superpoint)).collect::<Vec<_>>();
        assert_eq!(key(&m1), key(&m2));
        let sim = cosine_matrix(&a, &b).unwrap();
        for c in &m1 {
            let row_rank = (0..9).filter(|&j| sim[c.patch][j] > sim[c.patch][c.superpoint]).count();
            let col_rank = (0..7).filter(|&i| sim[i][c.superpoint] > sim[c.patch][c.superpoint]).count();
            assert!(row_rank < 3 && col_rank < 3);
        }
    }

    fn fine_fixture(img: Tensor, pts: Tensor) -> (FineImage, FinePoints, Vec<Vec<usize>>) {
        let ni = img.rows();
        let np = pts.rows();
        (
            FineImage {
                features: img,
                pixels: (0..ni).map(|i| [i as f64, 0.0]).collect(),
                patch_pixels: vec![(0..ni).collect()],
            },
            FinePoints {
                features: pts,
                xyz: (0..np).map(|i| [i as f64, 0.0, 1.0]).collect(),
            },
            vec![(0..np).collect()],
        )
    }

    #[test]
    fn fine_singleton_and_threshold() {
        let f = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let (img, pts, mem) = fine_fixture(f.clone(), f);
        let coarse = [CoarseMatch {
            patch: 0,
            superpoint: 0,
            similarity: 1.0,
        }];
        assert_eq!(fine_match(&coarse, &img, &pts, &mem, 0.0).unwrap().len(), 1);
        assert!(fine_match(&coarse, &img, &pts, &mem, 1.0 + 1e-9).unwrap().is_empty());
    }

    #[test]
    fn fine_block_equals_mutual_nn_scan() {
        let mut rng = Rng::new(4);
        for _ in 0..20 {
            let a = randn(&mut rng, 9, 3);
            let b = randn(&mut rng, 9, 3);
            let (img, pts, mem) = fine_fixture(a.clone(), b.clone());
            let coarse = [CoarseMatch {
                patch: 0,
                superpoint: 0,
                similarity: 0.5,
            }];
            let got: Vec<(usize, usize)> = fine_match(&coarse, &img, &pts, &mem, 0.0)
                .unwrap()
                .iter()
                .map(|m| (m.pixel, m.point))
                .collect();
            let sim = cosine_matrix(&a, &b).unwrap();
            let mut want = Vec::new();
            for i in 0..9 {
                let j = (0..9).fold(0, |bj, j| if sim[i][j] > sim[i][bj] { j } else { bj });
                let back = (0..9).fold(0, |bi, k| if sim[k][j] > sim[bi][j] { k } else { bi });
                if back == i && sim[i][j] >= 0.0 {
                    want.push((i, j));
                }
            }
            assert_eq!(got, want);
        }
    }

    #[test]
    fn csv_layout() {
        let grid = FeatureGrid {
            features: Tensor::zeros(&[1, 2]),
            centers: vec![[40.0, 40.0]],
            patch_size: 80.0,
        };
        let pts = PointFeatures {
            features: Tensor::zeros(&[1, 2]),
            positions: vec![[0.5, 0.25, 2.0]],
            members: vec![vec![0]],
        };
        let set = CorrespondenceSet {
            coarse: vec![CoarseMatch {
                patch: 0,
                superpoint: 0,
                similarity: 0.75,
            }],
            fine: vec![FineMatch {
                pixel: 0,
                point: 0,
                uv: [1.5, 2.5],
                xyz: [0.0, 1.0, 2.0],
                similarity: -0.5,
            }],
        };
        let mut buf = Vec::new();
        write_correspondence_csv(&mut buf, &set, &grid, &pts).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "u,v,x,y,z,similarity,level\n40,40,0.5,0.25,2,0.75,coarse\n1.5,2.5,0,1,2,-0.5,fine\n"
        );
    }
}
