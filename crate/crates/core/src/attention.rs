//! Query aggregation layers, the agent-bridged interaction, and a plain
//! two-way cross-attention baseline, each with a hand-written backward pass.

use crate::error::{Error, Result};
use crate::numerics::{leaky_relu, softmax_rows, Rng, Tensor, LEAKY_SLOPE};

/// Projections of one aggregation layer, all `C×C`.
#[derive(Debug, Clone, PartialEq)]
pub struct IasLayer {
    pub wq: Tensor,
    pub wi: Tensor,
    pub wp: Tensor,
    /// Residual feed-forward.
    pub wf: Tensor,
}

/// Projections of the agent interaction (also reused by the baseline).
#[derive(Debug, Clone, PartialEq)]
pub struct RaiWeights {
    pub wq: Tensor,
    pub wi: Tensor,
    pub wp: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub layers: Vec<IasLayer>,
    pub rai: RaiWeights,
}

fn random_square(c: usize, gain: f64, rng: &mut Rng) -> Tensor {
    let s = gain / (c as f64).sqrt();
    Tensor::new(vec![c, c], (0..c * c).map(|_| s * rng.normal()).collect())
        .expect("square dims")
}

fn identity(c: usize) -> Tensor {
    let mut t = Tensor::zeros(&[c, c]);
    for i in 0..c {
        *t.at2_mut(i, i) = 1.0;
    }
    t
}

impl AttentionWeights {
    pub fn zeros(channels: usize, n_layers: usize) -> Self {
        let z = || Tensor::zeros(&[channels, channels]);
        AttentionWeights {
            layers: (0..n_layers)
                .map(|_| IasLayer {
                    wq: z(),
                    wi: z(),
                    wp: z(),
                    wf: z(),
                })
                .collect(),
            rai: RaiWeights {
                wq: z(),
                wi: z(),
                wp: z(),
            },
        }
    }

    /// Gaussian projections with standard deviation `gain/√C`; the agent
    /// interaction starts from identity plus noise so the initial matching
    /// signal survives the projection.
    pub fn random(channels: usize, n_layers: usize, gain: f64, rng: &mut Rng) -> Self {
        let mut w = Self::zeros(channels, n_layers);
        for l in &mut w.layers {
            l.wq = random_square(channels, gain, rng);
            l.wi = random_square(channels, gain, rng);
            l.wp = random_square(channels, gain, rng);
            l.wf = random_square(channels, gain, rng);
        }
        let eye = identity(channels);
        for m in [&mut w.rai.wq, &mut w.rai.wi, &mut w.rai.wp] {
            *m = eye
                .add(&random_square(channels, gain, rng))
                .expect("same dims");
        }
        w
    }

    pub fn channels(&self) -> usize {
        self.rai.wq.rows()
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    fn mats(&self) -> Vec<&Tensor> {
        let mut v = Vec::with_capacity(4 * self.layers.len() + 3);
        for l in &self.layers {
            v.extend([&l.wq, &l.wi, &l.wp, &l.wf]);
        }
        v.extend([&self.rai.wq, &self.rai.wi, &self.rai.wp]);
        v
    }

    fn mats_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::with_capacity(4 * self.layers.len() + 3);
        for l in &mut self.layers {
            v.extend([&mut l.wq, &mut l.wi, &mut l.wp, &mut l.wf]);
        }
        v.extend([&mut self.rai.wq, &mut self.rai.wi, &mut self.rai.wp]);
        v
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("need at least one attention layer".into()));
        }
        let c = self.channels();
        for m in self.mats() {
            if m.dims() != [c, c] {
                return Err(Error::Dimension(format!(
                    "attention matrix {:?}, expected {c}×{c}",
                    m.dims()
                )));
            }
            if !m.all_finite() {
                return Err(Error::Numerical("non-finite attention weight".into()));
            }
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.channels(), self.n_layers())
    }

    pub fn add_scaled(&mut self, other: &AttentionWeights, s: f64) -> Result<()> {
        for (a, b) in self.mats_mut().into_iter().zip(other.mats()) {
            a.axpy(s, b)?;
        }
        Ok(())
    }

    pub fn sq_norm(&self) -> f64 {
        self.mats().iter().map(|m| m.norm().powi(2)).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.mats()
            .iter()
            .flat_map(|m| m.data().iter().copied())
            .collect()
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.mats().iter().map(|m| m.len()).sum();
        if flat.len() != total {
            return Err(Error::Format(format!(
                "attention weights need {total} values, got {}",
                flat.len()
            )));
        }
        let mut at = 0;
        for m in self.mats_mut() {
            let n = m.len();
            m.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }
}

/// `softmax(x·kᵀ/√C)·v` and the attention map.
pub fn attend(x: &Tensor, k: &Tensor, v: &Tensor) -> Result<(Tensor, Tensor)> {
    let c = x.cols();
    if k.cols() != c || k.rows() != v.rows() {
        return Err(Error::Dimension(format!(
            "attend: query {:?}, keys {:?}, values {:?}",
            x.dims(),
            k.dims(),
            v.dims()
        )));
    }
    let logits = x.matmul_t(k)?.scale(1.0 / (c as f64).sqrt());
    let p = softmax_rows(&logits)?;
    let y = p.matmul(v)?;
    Ok((y, p))
}

/// Gradients `(dx, dk, dv)` of [`attend`] given its attention map `p`.
pub fn attend_backward(
    x: &Tensor,
    k: &Tensor,
    v: &Tensor,
    p: &Tensor,
    dy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let s = 1.0 / (x.cols() as f64).sqrt();
    let dv = p.t_matmul(dy)?;
    let dp = dy.matmul_t(v)?;
    let mut dl = p.clone();
    for i in 0..p.rows() {
        let pr = p.row(i);
        let dr = dp.row(i);
        let inner: f64 = pr.iter().zip(dr).map(|(a, b)| a * b).sum();
        for (j, g) in dl.row_mut(i).iter_mut().enumerate() {
            *g = pr[j] * (dr[j] - inner);
        }
    }
    let dx = dl.matmul(k)?.scale(s);
    let dk = dl.t_matmul(x)?.scale(s);
    Ok((dx, dk, dv))
}

fn check_features(queries_c: usize, fi: &Tensor, fp: &Tensor, w_c: usize) -> Result<()> {
    fi.shape2()?;
    fp.shape2()?;
    if fi.cols() != w_c || fp.cols() != w_c || queries_c != w_c {
        return Err(Error::Dimension(format!(
            "channel mismatch: queries {queries_c}, image {}, points {}, weights {w_c}",
            fi.cols(),
            fp.cols()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct IasLayerCache {
    input: Tensor,
    q: Tensor,
    kv: Tensor,
    p: Tensor,
    h: Tensor,
    z: Tensor,
}

#[derive(Debug, Clone)]
pub struct IasCache {
    layers: Vec<IasLayerCache>,
    n_image: usize,
}

/// Runs the queries through the aggregation layers.
pub fn ias_aggregate(
    queries: &Tensor,
    fi: &Tensor,
    fp: &Tensor,
    w: &AttentionWeights,
) -> Result<Tensor> {
    Ok(ias_forward(queries, fi, fp, w)?.0)
}

pub fn ias_forward(
    queries: &Tensor,
    fi: &Tensor,
    fp: &Tensor,
    w: &AttentionWeights,
) -> Result<(Tensor, IasCache)> {
    queries.shape2()?;
    w.validate()?;
    check_features(queries.cols(), fi, fp, w.channels())?;
    let mut cur = queries.clone();
    let mut layers = Vec::with_capacity(w.n_layers());
    for l in &w.layers {
        let q = cur.matmul(&l.wq)?;
        let kv = Tensor::vstack(&[&fi.matmul(&l.wi)?, &fp.matmul(&l.wp)?])?;
        let (a, p) = attend(&q, &kv, &kv)?;
        let h = cur.add(&a)?;
        let z = h.matmul(&l.wf)?;
        let next = h.add(&z.map(leaky_relu))?;
        layers.push(IasLayerCache {
            input: cur,
            q,
            kv,
            p,
            h,
            z,
        });
        cur = next;
    }
    Ok((
        cur,
        IasCache {
            layers,
            n_image: fi.rows(),
        },
    ))
}

/// Gradients of the aggregation stage.
#[derive(Debug, Clone)]
pub struct IasGrads {
    pub layers: Vec<IasLayer>,
    pub queries: Tensor,
    pub fi: Tensor,
    pub fp: Tensor,
}

pub fn ias_backward(
    w: &AttentionWeights,
    fi: &Tensor,
    fp: &Tensor,
    cache: &IasCache,
    d_out: &Tensor,
) -> Result<IasGrads> {
    let mut d = d_out.clone();
    let mut dfi = Tensor::zeros(fi.dims());
    let mut dfp = Tensor::zeros(fp.dims());
    let mut grads: Vec<IasLayer> = Vec::with_capacity(w.n_layers());
    for (l, c) in w.layers.iter().zip(&cache.layers).rev() {
        // next = h + leaky(h·wf)
        let mut dz = d.clone();
        for (g, z) in dz.data_mut().iter_mut().zip(c.z.data()) {
            if *z <= 0.0 {
                *g *= LEAKY_SLOPE;
            }
        }
        let dwf = c.h.t_matmul(&dz)?;
        let mut dh = d;
        dh.add_assign(&dz.matmul_t(&l.wf)?)?;
        // h = input + attend(q, kv, kv)
        let (dq, dk, dv) = attend_backward(&c.q, &c.kv, &c.kv, &c.p, &dh)?;
        let mut dkv = dk;
        dkv.add_assign(&dv)?;
        let dki = dkv.row_slice(0, cache.n_image)?;
        let dkp = dkv.row_slice(cache.n_image, dkv.rows())?;
        let dwi = fi.t_matmul(&dki)?;
        let dwp = fp.t_matmul(&dkp)?;
        dfi.add_assign(&dki.matmul_t(&l.wi)?)?;
        dfp.add_assign(&dkp.matmul_t(&l.wp)?)?;
        let dwq = c.input.t_matmul(&dq)?;
        let mut din = dh;
        din.add_assign(&dq.matmul_t(&l.wq)?)?;
        d = din;
        grads.push(IasLayer {
            wq: dwq,
            wi: dwi,
            wp: dwp,
            wf: dwf,
        });
    }
    grads.reverse();
    Ok(IasGrads {
        layers: grads,
        queries: d,
        fi: dfi,
        fp: dfp,
    })
}

/// Forward result of the agent interaction.
#[derive(Debug, Clone)]
pub struct RaiOutput {
    pub fi: Tensor,
    pub fp: Tensor,
    /// Agent-to-point attention, `k×P_p`.
    pub iaa: Tensor,
    /// Agent-to-image attention, `k×P_i`.
    pub paa: Tensor,
    pub cache: RaiCache,
}

#[derive(Debug, Clone)]
pub struct RaiCache {
    masked: Tensor,
    q: Tensor,
    ki: Tensor,
    kp: Tensor,
    sp: Tensor,
    si: Tensor,
    back_i: Tensor,
    back_p: Tensor,
}

/// Agent-bridged interaction.
///
/// Agents are scaled by their soft masks and projected; each agent gathers a
/// point summary and an image summary, and every image (point) feature then
/// attends over the agents' point (image) summaries, added residually.
pub fn rai_attention(
    agents: &Tensor,
    fi: &Tensor,
    fp: &Tensor,
    masks: &[f64],
    w: &RaiWeights,
) -> Result<RaiOutput> {
    let (k, c) = agents.shape2()?;
    if k == 0 {
        return Err(Error::Config("agent interaction needs k >= 1".into()));
    }
    if masks.len() != k {
        return Err(Error::Dimension(format!("{} masks for {k} agents", masks.len())));
    }
    check_features(c, fi, fp, w.wq.rows())?;
    let mut masked = agents.clone();
    for (i, &m) in masks.iter().enumerate() {
        masked.row_mut(i).iter_mut().for_each(|x| *x *= m);
    }
    let q = masked.matmul(&w.wq)?;
    let ki = fi.matmul(&w.wi)?;
    let kp = fp.matmul(&w.wp)?;
    let (sp, iaa) = attend(&q, &kp, &kp)?;
    let (si, paa) = attend(&q, &ki, &ki)?;
    let (ri, back_i) = attend(&ki, &q, &sp)?;
    let (rp, back_p) = attend(&kp, &q, &si)?;
    Ok(RaiOutput {
        fi: fi.add(&ri)?,
        fp: fp.add(&rp)?,
        iaa,
        paa,
        cache: RaiCache {
            masked,
            q,
            ki,
            kp,
            sp,
            si,
            back_i,
            back_p,
        },
    })
}

#[derive(Debug, Clone)]
pub struct RaiGrads {
    pub weights: RaiWeights,
    pub agents: Tensor,
    pub masks: Vec<f64>,
    pub fi: Tensor,
    pub fp: Tensor,
}

pub fn rai_backward(
    agents: &Tensor,
    fi: &Tensor,
    fp: &Tensor,
    masks: &[f64],
    w: &RaiWeights,
    out: &RaiOutput,
    d_fi: &Tensor,
    d_fp: &Tensor,
) -> Result<RaiGrads> {
    let c = &out.cache;
    let (dki_a, dq_a, dsp) = attend_backward(&c.ki, &c.q, &c.sp, &c.back_i, d_fi)?;
    let (dkp_a, dq_b, dsi) = attend_backward(&c.kp, &c.q, &c.si, &c.back_p, d_fp)?;
    let (dq_c, dki_b, dki_c) = attend_backward(&c.q, &c.ki, &c.ki, &out.paa, &dsi)?;
    let (dq_d, dkp_b, dkp_c) = attend_backward(&c.q, &c.kp, &c.kp, &out.iaa, &dsp)?;
    let mut dq = dq_a;
    for t in [&dq_b, &dq_c, &dq_d] {
        dq.add_assign(t)?;
    }
    let mut dki = dki_a;
    dki.add_assign(&dki_b)?;
    dki.add_assign(&dki_c)?;
    let mut dkp = dkp_a;
    dkp.add_assign(&dkp_b)?;
    dkp.add_assign(&dkp_c)?;

    let mut dfi = d_fi.clone();
    dfi.add_assign(&dki.matmul_t(&w.wi)?)?;
    let mut dfp = d_fp.clone();
    dfp.add_assign(&dkp.matmul_t(&w.wp)?)?;
    let dmasked = dq.matmul_t(&w.wq)?;
    let mut dagents = dmasked.clone();
    let mut dmasks = vec![0.0; masks.len()];
    for (i, &m) in masks.iter().enumerate() {
        dmasks[i] = dmasked
            .row(i)
            .iter()
            .zip(agents.row(i))
            .map(|(a, b)| a * b)
            .sum();
        dagents.row_mut(i).iter_mut().for_each(|x| *x *= m);
    }
    Ok(RaiGrads {
        weights: RaiWeights {
            wq: c.masked.t_matmul(&dq)?,
            wi: fi.t_matmul(&dki)?,
            wp: fp.t_matmul(&dkp)?,
        },
        agents: dagents,
        masks: dmasks,
        fi: dfi,
        fp: dfp,
    })
}

/// Baseline without agents: each modality attends directly to the other.
#[derive(Debug, Clone)]
pub struct CrossOutput {
    pub fi: Tensor,
    pub fp: Tensor,
    cache: CrossCache,
}

#[derive(Debug, Clone)]
struct CrossCache {
    qi: Tensor,
    qp: Tensor,
    ki: Tensor,
    kp: Tensor,
    pi: Tensor,
    pp: Tensor,
}

pub fn cross_attention(fi: &Tensor, fp: &Tensor, w: &RaiWeights) -> Result<CrossOutput> {
    check_features(fi.cols(), fi, fp, w.wq.rows())?;
    let qi = fi.matmul(&w.wq)?;
    let qp = fp.matmul(&w.wq)?;
    let ki = fi.matmul(&w.wi)?;
    let kp = fp.matmul(&w.wp)?;
    let (ri, pi) = attend(&qi, &kp, &kp)?;
    let (rp, pp) = attend(&qp, &ki, &ki)?;
    Ok(CrossOutput {
        fi: fi.add(&ri)?,
        fp: fp.add(&rp)?,
        cache: CrossCache {
            qi,
            qp,
            ki,
            kp,
            pi,
            pp,
        },
    })
}

/// Returns `(weight gradients, d_fi, d_fp)`.
pub fn cross_backward(
    fi: &Tensor,
    fp: &Tensor,
    w: &RaiWeights,
    out: &CrossOutput,
    d_fi: &Tensor,
    d_fp: &Tensor,
) -> Result<(RaiWeights, Tensor, Tensor)> {
    let c = &out.cache;
    let (dqi, dkp_a, dkp_b) = attend_backward(&c.qi, &c.kp, &c.kp, &c.pi, d_fi)?;
    let (dqp, dki_a, dki_b) = attend_backward(&c.qp, &c.ki, &c.ki, &c.pp, d_fp)?;
    let mut dkp = dkp_a;
    dkp.add_assign(&dkp_b)?;
    let mut dki = dki_a;
    dki.add_assign(&dki_b)?;
    let mut dwq = fi.t_matmul(&dqi)?;
    dwq.add_assign(&fp.t_matmul(&dqp)?)?;
    let mut dfi = d_fi.clone();
    dfi.add_assign(&dqi.matmul_t(&w.wq)?)?;
    dfi.add_assign(&dki.matmul_t(&w.wi)?)?;
    let mut dfp = d_fp.clone();
    dfp.add_assign(&dqp.matmul_t(&w.wq)?)?;
    dfp.add_assign(&dkp.matmul_t(&w.wp)?)?;
    Ok((
        RaiWeights {
            wq: dwq,
            wi: fi.t_matmul(&dki)?,
            wp: fp.t_matmul(&dkp)?,
        },
        dfi,
        dfp,
    ))
}

/// 2-D sinusoidal encoding of pixel positions, `P×C`, scaled by `amplitude`.
///
/// The first half of the channels encodes `u`, the second half `v`; within
/// each half channels alternate sine and cosine over geometric frequencies.
/// Coordinates are divided by `unit` before encoding.
pub fn sinusoidal_2d(centers: &[(f64, f64)], channels: usize, unit: f64, amplitude: f64) -> Tensor {
    let half = channels / 2;
    let mut out = Tensor::zeros(&[centers.len(), channels]);
    for (r, &(u, v)) in centers.iter().enumerate() {
        let row = out.row_mut(r);
        for (block, coord) in [(0, u / unit), (half, v / unit)] {
            for j in 0..half {
                let pair = (j / 2) as f64;
                let freq = 1.0 / 100f64.powf(2.0 * pair / half.max(1) as f64);
                let a = coord * freq;
                row[block + j] = amplitude * if j % 2 == 0 { a.sin() } else { a.cos() };
            }
        }
    }
    out
}
