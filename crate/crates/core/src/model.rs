//! The registration network: phase fusion, query aggregation, agent
//! selection, agent interaction (or plain cross-attention), and the matching
//! losses, with a hand-written backward pass through all of it.

use crate::agents::{
    final_select, sample_actions, warmup_topk, QueryPool, SelectionOutcome, Stage,
};
use crate::attention::{
    cross_attention, cross_backward, ias_backward, ias_forward, rai_attention, rai_backward,
    sinusoidal_2d, AttentionWeights, CrossOutput, IasCache, RaiOutput,
};
use crate::error::{Error, Result};
use crate::losses::{descriptor_circle_loss, DescriptorLoss, LossParams, PairLabel};
use crate::numerics::{sigmoid, Activation, ConvStackCache, ConvStackWeights, Rng, Tensor};
use crate::phase::{adaptor_input, extract_phase_map, fuse_backward, fuse_with_input};
use crate::synth::SyntheticPair;

/// Which parts of the pipeline are switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub phase: bool,
    pub rai: bool,
    pub tri: bool,
    pub topk: bool,
}

impl Variant {
    /// No phase map, plain cross-attention.
    pub const M1: Variant = Variant {
        phase: false,
        rai: false,
        tri: false,
        topk: false,
    };
    /// Phase map and agent interaction over `k` fixed queries.
    pub const M6: Variant = Variant {
        phase: true,
        rai: true,
        tri: false,
        topk: false,
    };
    /// Top-k selection from the redundant pool throughout.
    pub const M7: Variant = Variant {
        phase: true,
        rai: true,
        tri: false,
        topk: true,
    };
    /// Full three-stage schedule.
    pub const M8: Variant = Variant {
        phase: true,
        rai: true,
        tri: true,
        topk: false,
    };

    pub const GRID: [(&'static str, Variant); 4] = [
        ("M1", Variant::M1),
        ("M6", Variant::M6),
        ("M7", Variant::M7),
        ("M8", Variant::M8),
    ];

    pub fn named(name: &str) -> Result<Variant> {
        match name {
            "M1" | "m1" | "baseline" => Ok(Variant::M1),
            "M6" | "m6" | "fixed" => Ok(Variant::M6),
            "M7" | "m7" | "topk" => Ok(Variant::M7),
            "M8" | "m8" | "full" => Ok(Variant::M8),
            _ => Err(Error::Config(format!(
                "unknown variant {name:?} (expected M1, M6, M7 or M8)"
            ))),
        }
    }

    /// Queries the model keeps: the redundant pool, or just `k` when nothing
    /// selects among them.
    pub fn pool_size(&self, m: usize, k: usize) -> usize {
        if self.rai && !self.tri && !self.topk {
            k
        } else {
            m
        }
    }

    pub fn selects(&self) -> bool {
        self.rai && (self.tri || self.topk)
    }
}

/// Shapes and initialisation of a model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelDims {
    pub channels: usize,
    pub m: usize,
    pub k: usize,
    pub n_layers: usize,
    pub adaptor_hidden: usize,
    /// Standard deviation scale of random attention weights.
    pub init_gain: f64,
    /// Standard deviation scale of the adaptor weights.
    pub adaptor_gain: f64,
    /// Add position encodings to the attention inputs.
    pub pos_encoding: bool,
}

/// Learnable state.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub variant: Variant,
    pub pool: QueryPool,
    pub attention: AttentionWeights,
    pub adaptor: ConvStackWeights,
    /// `3×C` linear lift of superpoint positions.
    pub point_lift: Tensor,
    pub pos_encoding: bool,
}

impl Model {
    /// Random initialisation. Every variant draws the same stream, so two
    /// variants built from one seed share their common parameters.
    pub fn init(dims: &ModelDims, variant: Variant, rng: &mut Rng) -> Result<Model> {
        let c = dims.channels;
        if dims.k == 0 || dims.k > dims.m {
            return Err(Error::Config(format!(
                "need 1 <= k={} <= M={}",
                dims.k, dims.m
            )));
        }
        if dims.n_layers == 0 || c < 2 || dims.adaptor_hidden == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        let s = 1.0 / (c as f64).sqrt();
        let all = Tensor::new(
            vec![dims.m, c],
            (0..dims.m * c).map(|_| s * rng.normal()).collect(),
        )?;
        let attention = AttentionWeights::random(c, dims.n_layers, dims.init_gain, rng);
        let mut adaptor = ConvStackWeights::random(
            3,
            dims.adaptor_hidden,
            c,
            dims.adaptor_gain,
            Activation::LeakyRelu,
            rng,
        );
        // the fused branch starts silent so phase fusion begins as identity
        if let Some(last) = adaptor.layers.last_mut() {
            last.weight.iter_mut().for_each(|v| *v = 0.0);
        }
        let keep = variant.pool_size(dims.m, dims.k);
        let queries = all.row_slice(0, keep)?;
        Ok(Model {
            variant,
            pool: QueryPool::new(queries, dims.k)?,
            attention,
            adaptor,
            point_lift: Tensor::zeros(&[3, c]),
            pos_encoding: dims.pos_encoding,
        })
    }

    pub fn channels(&self) -> usize {
        self.attention.channels()
    }

    pub fn validate(&self) -> Result<()> {
        self.pool.validate()?;
        self.attention.validate()?;
        self.adaptor.validate()?;
        let c = self.channels();
        if self.pool.queries.cols() != c || self.adaptor.out_channels() != c {
            return Err(Error::Dimension("model channel widths disagree".into()));
        }
        if self.point_lift.dims() != [3, c] {
            return Err(Error::Dimension("point lift must be 3×C".into()));
        }
        Ok(())
    }

    pub fn apply(&mut self, g: &Gradients, lr: f64) -> Result<()> {
        self.attention.add_scaled(&g.attention, -lr)?;
        self.adaptor.add_scaled(&g.adaptor, -lr);
        self.pool.queries.axpy(-lr, &g.queries)?;
        self.point_lift.axpy(-lr, &g.point_lift)?;
        for (s, d) in self.pool.scores.iter_mut().zip(&g.scores) {
            *s -= lr * d;
        }
        Ok(())
    }
}

/// Gradient of a scalar loss with respect to every parameter of a [`Model`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub attention: AttentionWeights,
    pub adaptor: ConvStackWeights,
    pub queries: Tensor,
    pub scores: Vec<f64>,
    pub point_lift: Tensor,
}

impl Gradients {
    pub fn zeros(model: &Model) -> Self {
        Gradients {
            attention: model.attention.zeros_like(),
            adaptor: model.adaptor.zeros_like(),
            queries: Tensor::zeros(model.pool.queries.dims()),
            scores: vec![0.0; model.pool.size()],
            point_lift: Tensor::zeros(model.point_lift.dims()),
        }
    }

    pub fn scale(&mut self, s: f64) -> Result<()> {
        let z = self.attention.zeros_like();
        let mut a = z.clone();
        a.add_scaled(&self.attention, s)?;
        self.attention = a;
        let mut ad = self.adaptor.zeros_like();
        ad.add_scaled(&self.adaptor, s);
        self.adaptor = ad;
        self.queries = self.queries.scale(s);
        self.point_lift = self.point_lift.scale(s);
        self.scores.iter_mut().for_each(|v| *v *= s);
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.attention.flatten().iter().all(|v| v.is_finite())
            && self.adaptor.flatten().iter().all(|v| v.is_finite())
            && self.queries.all_finite()
            && self.point_lift.all_finite()
            && self.scores.iter().all(|v| v.is_finite())
    }
}

/// Per-pair inputs that do not depend on the parameters.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub id: String,
    pub scene: String,
    /// `rows×cols×C` patch descriptors.
    pub base: Tensor,
    /// Adaptor input on the patch grid.
    pub phase_input: Tensor,
    pub points: Tensor,
    pub image_pos: Tensor,
    pub point_pos: Tensor,
    /// Row-major `P×S` coarse labels.
    pub labels: Vec<PairLabel>,
    /// Fine-level circle loss; the fine descriptors are fixed inputs.
    pub fine_loss: f64,
}

/// Superpoints overlapping a patch by at least `pos_overlap` are positives,
/// those with no overlap negatives.
pub fn coarse_labels(overlap: &[Vec<f64>], pos_overlap: f64) -> Vec<PairLabel> {
    overlap
        .iter()
        .flat_map(|row| {
            row.iter().map(|&o| {
                if o >= pos_overlap && o > 0.0 {
                    PairLabel::Positive
                } else if o == 0.0 {
                    PairLabel::Negative
                } else {
                    PairLabel::Ignored
                }
            })
        })
        .collect()
}

/// Mean fine circle loss over the positive coarse pairs; pixel/point pairs
/// closer than `pos_radius` in 3-D are positives, beyond `safe_radius`
/// negatives.
pub fn fine_loss(pair: &SyntheticPair, labels: &[PairLabel], p: &LossParams) -> Result<f64> {
    let ns = pair.superpoint_members.len();
    let patch_pixels = pair.spec.patch_pixels();
    let cam: Vec<[f64; 3]> = pair.cloud.iter().map(|x| pair.t_gt.apply(x)).collect();
    let mut total = 0.0;
    let mut count = 0usize;
    for (idx, l) in labels.iter().enumerate() {
        if *l != PairLabel::Positive {
            continue;
        }
        let (patch, sp) = (idx / ns, idx % ns);
        let pix = &patch_pixels[patch];
        let pts = &pair.superpoint_members[sp];
        let a = pair.fine_image_features.select_rows(pix)?;
        let b = pair.fine_point_features.select_rows(pts)?;
        let label = |i: usize, j: usize| {
            let x = pair.pixel_xyz[pix[i]];
            let y = cam[pts[j]];
            let d = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2)).sqrt();
            if d < p.pos_radius {
                PairLabel::Positive
            } else if d > p.safe_radius {
                PairLabel::Negative
            } else {
                PairLabel::Ignored
            }
        };
        let l = descriptor_circle_loss(&a, &b, label, p)?;
        if l.anchors > 0 {
            total += l.value;
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

impl Prepared {
    pub fn new(pair: &SyntheticPair, p: &LossParams, pos_overlap: f64) -> Result<Self> {
        let spec = &pair.spec;
        let c = spec.feature_dim;
        let base = pair
            .patch_features
            .clone()
            .reshape(vec![spec.grid_rows, spec.grid_cols, c])?;
        let pm = extract_phase_map(&pair.image)?;
        let phase_input = adaptor_input(&pm, spec.grid_rows, spec.grid_cols)?;
        let centers: Vec<(f64, f64)> = spec
            .patch_centers()
            .iter()
            .map(|c| (c[0], c[1]))
            .collect();
        let image_pos = sinusoidal_2d(&centers, c, spec.patch_size, 1.0 / (c as f64).sqrt());
        let ns = pair.superpoint_positions.len();
        let point_pos = Tensor::new(
            vec![ns, 3],
            pair.superpoint_positions.iter().flatten().copied().collect(),
        )?;
        let labels = coarse_labels(&pair.overlap_matrix(), pos_overlap);
        let fine = fine_loss(pair, &labels, p)?;
        Ok(Prepared {
            id: pair.id.clone(),
            scene: pair.scene.clone(),
            base,
            phase_input,
            points: pair.superpoint_features.clone(),
            image_pos,
            point_pos,
            labels,
            fine_loss: fine,
        })
    }

    pub fn patches(&self) -> usize {
        self.base.dims()[0] * self.base.dims()[1]
    }
}

/// How agents are chosen for one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    /// Top-k by score, each agent gated by `sigmoid(score)`.
    TopK,
    /// Bernoulli draw over the whole pool with soft masks.
    Sample { beta: f64 },
    /// Every query, unit masks.
    All,
}

/// Agents taking part in the interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Pool rows used as agents, ascending.
    pub rows: Vec<usize>,
    pub masks: Vec<f64>,
    /// Masks are `sigmoid(score)` and carry gradient to the scores.
    pub gated: bool,
    pub outcome: Option<SelectionOutcome>,
}

/// Policy implied by a variant and the stage of training.
pub fn policy_for(variant: Variant, stage: Stage, beta: f64) -> Option<Policy> {
    if !variant.rai {
        return None;
    }
    Some(if variant.tri {
        match stage {
            Stage::RewardsGuided => Policy::Sample { beta },
            _ => Policy::TopK,
        }
    } else if variant.topk {
        Policy::TopK
    } else {
        Policy::All
    })
}

#[derive(Debug, Clone)]
enum Interaction {
    Agents {
        agents: Tensor,
        out: RaiOutput,
        ias: IasCache,
    },
    Cross(CrossOutput),
}

/// Activations of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Fused image descriptors `P×C`.
    pub fi: Tensor,
    /// Fused point descriptors `S×C`.
    pub fp: Tensor,
    /// Input image descriptors after phase fusion `P×C`.
    pub fi0: Tensor,
    /// Input point descriptors `S×C`.
    pub fp0: Tensor,
    /// Aggregated queries `M×C`, when agents are used.
    pub aggregated: Option<Tensor>,
    pub selection: Option<Selection>,
    fi_in: Tensor,
    fp_in: Tensor,
    phase: Option<ConvStackCache>,
    interaction: Interaction,
}

/// Runs the network on one pair. `rng` is only drawn from by [`Policy::Sample`].
pub fn forward(model: &Model, prep: &Prepared, policy: Option<&Policy>, rng: &mut Rng) -> Result<Forward> {
    let c = model.channels();
    let p = prep.patches();
    let (fi0, phase) = if model.variant.phase {
        let (fused, cache) = fuse_with_input(&prep.base, &prep.phase_input, &model.adaptor)?;
        (fused.reshape(vec![p, c])?, Some(cache))
    } else {
        (prep.base.clone().reshape(vec![p, c])?, None)
    };
    let fp0 = prep.points.clone();
    let (fi_in, fp_in) = if model.pos_encoding {
        (
            fi0.add(&prep.image_pos)?,
            fp0.add(&prep.point_pos.matmul(&model.point_lift)?)?,
        )
    } else {
        (fi0.clone(), fp0.clone())
    };
    if !model.variant.rai {
        let out = cross_attention(&fi_in, &fp_in, &model.attention.rai)?;
        return Ok(Forward {
            fi: out.fi.clone(),
            fp: out.fp.clone(),
            fi0,
            fp0,
            aggregated: None,
            selection: None,
            fi_in,
            fp_in,
            phase,
            interaction: Interaction::Cross(out),
        });
    }
    let policy = policy.ok_or_else(|| Error::Contract("agent variant needs a policy".into()))?;
    let (agg, ias) = ias_forward(&model.pool.queries, &fi_in, &fp_in, &model.attention)?;
    let pool = &model.pool;
    let selection = match policy {
        Policy::TopK => {
            let rows = if pool.stage == Stage::Final {
                final_select(pool)?
            } else {
                let mut warm = pool.clone();
                warm.stage = Stage::WarmUp;
                warmup_topk(&warm, &agg)?
            };
            let masks = rows.iter().map(|&r| sigmoid(pool.scores[r])).collect();
            Selection {
                rows,
                masks,
                gated: true,
                outcome: None,
            }
        }
        Policy::Sample { beta } => {
            let mut sampling = pool.clone();
            sampling.stage = Stage::RewardsGuided;
            let outcome = sample_actions(&sampling, rng, *beta)?;
            Selection {
                rows: (0..pool.size()).collect(),
                masks: outcome.soft_masks.clone(),
                gated: false,
                outcome: Some(outcome),
            }
        }
        Policy::All => Selection {
            rows: (0..pool.size()).collect(),
            masks: vec![1.0; pool.size()],
            gated: false,
            outcome: None,
        },
    };
    let agents = agg.select_rows(&selection.rows)?;
    let out = rai_attention(&agents, &fi_in, &fp_in, &selection.masks, &model.attention.rai)?;
    Ok(Forward {
        fi: out.fi.clone(),
        fp: out.fp.clone(),
        fi0,
        fp0,
        aggregated: Some(agg),
        selection: Some(selection),
        fi_in,
        fp_in,
        phase,
        interaction: Interaction::Agents { agents, out, ias },
    })
}

/// Coarse circle loss of the fused descriptors.
pub fn coarse_loss(fwd: &Forward, prep: &Prepared, p: &LossParams) -> Result<DescriptorLoss> {
    let ns = fwd.fp.rows();
    descriptor_circle_loss(&fwd.fi, &fwd.fp, |i, j| prep.labels[i * ns + j], p)
}

/// Gradients of a loss given its derivative with respect to the fused
/// descriptors.
pub fn backward(model: &Model, prep: &Prepared, fwd: &Forward, d_fi: &Tensor, d_fp: &Tensor) -> Result<Gradients> {
    let mut g = Gradients::zeros(model);
    let (d_fi_in, d_fp_in) = match &fwd.interaction {
        Interaction::Cross(out) => {
            let (w, dfi, dfp) = cross_backward(&fwd.fi_in, &fwd.fp_in, &model.attention.rai, out, d_fi, d_fp)?;
            g.attention.rai = w;
            (dfi, dfp)
        }
        Interaction::Agents { agents, out, ias } => {
            let sel = fwd.selection.as_ref().expect("agent forward has a selection");
            let rg = rai_backward(
                agents,
                &fwd.fi_in,
                &fwd.fp_in,
                &sel.masks,
                &model.attention.rai,
                out,
                d_fi,
                d_fp,
            )?;
            g.attention.rai = rg.weights;
            if sel.gated {
                for (j, &r) in sel.rows.iter().enumerate() {
                    let s = sigmoid(model.pool.scores[r]);
                    g.scores[r] += rg.masks[j] * s * (1.0 - s);
                }
            }
            let agg = fwd.aggregated.as_ref().expect("agent forward aggregates");
            let mut d_agg = Tensor::zeros(agg.dims());
            for (j, &r) in sel.rows.iter().enumerate() {
                for (a, b) in d_agg.row_mut(r).iter_mut().zip(rg.agents.row(j)) {
                    *a += b;
                }
            }
            let ig = ias_backward(&model.attention, &fwd.fi_in, &fwd.fp_in, ias, &d_agg)?;
            g.attention.layers = ig.layers;
            g.queries = ig.queries;
            let mut dfi = rg.fi;
            dfi.add_assign(&ig.fi)?;
            let mut dfp = rg.fp;
            dfp.add_assign(&ig.fp)?;
            (dfi, dfp)
        }
    };
    if model.pos_encoding {
        g.point_lift = prep.point_pos.t_matmul(&d_fp_in)?;
    }
    if let Some(cache) = &fwd.phase {
        let d = d_fi_in.reshape(prep.base.dims().to_vec())?;
        g.adaptor = fuse_backward(&model.adaptor, cache, &d)?;
    }
    Ok(g)
}
