//! Acceptance criteria 1 to 8. Prints one pass/fail line per criterion and
//! exits non-zero when any of them fails.

use std::path::Path;
use std::time::{Duration, Instant};

use agentreg::agents::{
    bernoulli_entropy, fusion_alpha, outcome_from_actions, regularized_loss, soft_mask,
    stage_two_loss, QueryPool, RewardConfig, Stage,
};
use agentreg::attention::{rai_attention, rai_backward, AttentionWeights};
use agentreg::eval::{
    feature_matching_recall, inlier_ratio, patch_inlier_ratio, registration_recall,
    registration_rmse, PatchExtent,
};
use agentreg::experiment::{cmd_ablate, cmd_synth, planted_suite, ExperimentConfig};
use agentreg::losses::{circle_loss, total_loss, LossParams};
use agentreg::matching::CoarseMatch;
use agentreg::numerics::{
    conv_stack_backward, conv_stack_forward, dft2, finite_diff_gradient, gradient_relative_error,
    idft2, sigmoid, softmax_rows, Activation, ConvStackWeights, Rng, Tensor,
};
use agentreg::phase::fuse_with_input;
use agentreg::pose::{
    pose_errors, ransac_pnp, solve_pnp, CameraIntrinsics, Correspondence2d3d, RansacConfig,
    RigidTransform,
};
use agentreg::synth::{corrupt_correspondences, SceneSpec};
use nalgebra::Vector3;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit: Duration, start: Instant) -> (bool, String) {
    let took = start.elapsed();
    (took < limit, format!("{:.1}s of {}s", took.as_secs_f64(), limit.as_secs()))
}

fn random_tensor(dims: &[usize], rng: &mut Rng) -> Tensor {
    let n = dims.iter().product();
    Tensor::new(dims.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
}

// ---------------------------------------------------------------- 1

fn numerics() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::new(1);
    let (mut round, mut parseval, mut sym) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let x = random_tensor(&[16, 16], &mut rng);
        let f = dft2(&x).unwrap();
        let back = idft2(&f).unwrap();
        let err: f64 = x
            .data()
            .iter()
            .zip(back.re())
            .zip(back.im())
            .map(|((a, b), i)| (a - b).powi(2) + i * i)
            .sum::<f64>()
            .sqrt();
        round = round.max(err / x.norm());

        let energy: f64 = x.data().iter().map(|v| v * v).sum();
        let spec: f64 = f.re().iter().zip(f.im()).map(|(r, i)| r * r + i * i).sum::<f64>() / 256.0;
        parseval = parseval.max((energy - spec).abs() / energy);

        for u in 0..16 {
            for v in 0..16 {
                let a = u * 16 + v;
                let b = ((16 - u) % 16) * 16 + (16 - v) % 16;
                sym = sym.max((f.re()[a] - f.re()[b]).abs() + (f.im()[a] + f.im()[b]).abs());
            }
        }
    }
    let mut rows = 0.0f64;
    for _ in 0..20 {
        let m = random_tensor(&[12, 9], &mut rng).scale(5.0);
        let s = softmax_rows(&m).unwrap();
        for i in 0..12 {
            rows = rows.max((s.row(i).iter().sum::<f64>() - 1.0).abs());
        }
    }
    let (fast, time) = within(Duration::from_secs(10), start);
    check(
        round <= 1e-9 && parseval <= 1e-9 && sym <= 1e-9 && rows <= 1e-12 && fast,
        format!(
            "round trip {round:.1e}, parseval {parseval:.1e}, conjugate symmetry {sym:.1e}, softmax rows {rows:.1e}, {time}"
        ),
    )
}

// ---------------------------------------------------------------- 2

const TOYS: usize = 24;
const STEP: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-4;

fn circle_toy(rng: &mut Rng) -> f64 {
    let p = LossParams::default();
    let np = 1 + rng.below(5);
    let nn = 1 + rng.below(8);
    let pos = Tensor::vector((0..np).map(|_| rng.uniform_in(0.0, 1.5)).collect()).unwrap();
    let neg = Tensor::vector((0..nn).map(|_| rng.uniform_in(0.3, 2.0)).collect()).unwrap();
    let l = circle_loss(pos.data(), neg.data(), &p).unwrap();
    let gp = finite_diff_gradient(|x| Ok(circle_loss(x.data(), neg.data(), &p)?.value), &pos, STEP).unwrap();
    let gn = finite_diff_gradient(|x| Ok(circle_loss(pos.data(), x.data(), &p)?.value), &neg, STEP).unwrap();
    let analytic: Vec<f64> = l.d_pos.iter().chain(&l.d_neg).copied().collect();
    let numeric: Vec<f64> = gp.data().iter().chain(gn.data()).copied().collect();
    gradient_relative_error(&analytic, &numeric)
}

fn rai_toy(rng: &mut Rng) -> f64 {
    let c = 3 + rng.below(4);
    let k = 2 + rng.below(4);
    let (pi, pp) = (3 + rng.below(6), 3 + rng.below(6));
    let w = AttentionWeights::random(c, 1, 1.0, rng).rai;
    let agents = random_tensor(&[k, c], rng);
    let fi = random_tensor(&[pi, c], rng);
    let fp = random_tensor(&[pp, c], rng);
    let masks: Vec<f64> = (0..k).map(|_| rng.uniform_in(0.2, 1.0)).collect();
    let gi = random_tensor(&[pi, c], rng);
    let gp = random_tensor(&[pp, c], rng);
    let objective = |a: &Tensor, fi: &Tensor, fp: &Tensor, m: &[f64], w: &agentreg::attention::RaiWeights| {
        let o = rai_attention(a, fi, fp, m, w)?;
        Ok(o.fi.dot(&gi)? + o.fp.dot(&gp)?)
    };
    let out = rai_attention(&agents, &fi, &fp, &masks, &w).unwrap();
    let g = rai_backward(&agents, &fi, &fp, &masks, &w, &out, &gi, &gp).unwrap();
    let mask_t = Tensor::vector(masks.clone()).unwrap();
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut add = |a: &[f64], n: Tensor| {
        analytic.extend_from_slice(a);
        numeric.extend_from_slice(n.data());
    };
    add(g.agents.data(), finite_diff_gradient(|x| objective(x, &fi, &fp, &masks, &w), &agents, STEP).unwrap());
    add(g.fi.data(), finite_diff_gradient(|x| objective(&agents, x, &fp, &masks, &w), &fi, STEP).unwrap());
    add(g.fp.data(), finite_diff_gradient(|x| objective(&agents, &fi, x, &masks, &w), &fp, STEP).unwrap());
    add(&g.masks, finite_diff_gradient(|x| objective(&agents, &fi, &fp, x.data(), &w), &mask_t, STEP).unwrap());
    let mut w2 = w.clone();
    add(
        g.weights.wq.data(),
        finite_diff_gradient(|x| { w2.wq = x.clone(); objective(&agents, &fi, &fp, &masks, &w2) }, &w.wq, STEP).unwrap(),
    );
    let mut w2 = w.clone();
    add(
        g.weights.wi.data(),
        finite_diff_gradient(|x| { w2.wi = x.clone(); objective(&agents, &fi, &fp, &masks, &w2) }, &w.wi, STEP).unwrap(),
    );
    let mut w2 = w.clone();
    add(
        g.weights.wp.data(),
        finite_diff_gradient(|x| { w2.wp = x.clone(); objective(&agents, &fi, &fp, &masks, &w2) }, &w.wp, STEP).unwrap(),
    );
    gradient_relative_error(&analytic, &numeric)
}

fn adaptor_toy(rng: &mut Rng) -> f64 {
    let (h, w) = (2 + rng.below(4), 2 + rng.below(4));
    let cin = 1 + rng.below(3);
    let c = 2 + rng.below(3);
    let hidden = 2 + rng.below(4);
    let mut adaptor = ConvStackWeights::random(cin, hidden, c, 1.0, Activation::LeakyRelu, rng);
    let flat0: Vec<f64> = adaptor.flatten().iter().map(|_| 0.5 * rng.normal()).collect();
    adaptor.unflatten(&flat0);
    let input = random_tensor(&[h, w, cin], rng);
    let base = random_tensor(&[h, w, c], rng);
    let g = random_tensor(&[h, w, c], rng);
    let (_, cache) = fuse_with_input(&base, &input, &adaptor).unwrap();
    let analytic = agentreg::phase::fuse_backward(&adaptor, &cache, &g).unwrap().flatten();
    let flat = Tensor::vector(flat0).unwrap();
    let mut probe = adaptor.clone();
    let numeric = finite_diff_gradient(
        |x| {
            probe.unflatten(x.data());
            fuse_with_input(&base, &input, &probe)?.0.dot(&g)
        },
        &flat,
        STEP,
    )
    .unwrap();
    // input gradient through the plain stack as well
    let d_input = conv_stack_backward(&adaptor, &cache, &g).unwrap().1;
    let num_input = finite_diff_gradient(|x| conv_stack_forward(x, &adaptor)?.dot(&g), &input, STEP).unwrap();
    let a: Vec<f64> = analytic.iter().chain(d_input.data()).copied().collect();
    let n: Vec<f64> = numeric.data().iter().chain(num_input.data()).copied().collect();
    gradient_relative_error(&a, &n)
}

fn surrogate_toy(rng: &mut Rng) -> f64 {
    let m = 3 + rng.below(10);
    let beta = 0.3;
    let mu = rng.uniform_in(0.0, 0.1);
    let mut pool = QueryPool::new(random_tensor(&[m, 4], rng), 1 + rng.below(m - 1)).unwrap();
    pool.stage = Stage::RewardsGuided;
    let scores = Tensor::vector((0..m).map(|_| rng.uniform_in(-3.0, 3.0)).collect()).unwrap();
    let actions: Vec<bool> = (0..m).map(|_| rng.bernoulli(0.5)).collect();
    let rewards: Vec<f64> = (0..m).map(|_| rng.uniform_in(0.0, 2.0)).collect();
    let loss_at = |s: &Tensor, pool: &mut QueryPool| {
        pool.scores = s.data().to_vec();
        let mut o = outcome_from_actions(actions.clone(), pool.probabilities(), beta);
        o.set_rewards(rewards.clone())?;
        Ok(stage_two_loss(&o, pool, mu))
    };
    let analytic = loss_at(&scores, &mut pool).unwrap().grad_scores;
    let numeric = finite_diff_gradient(|s| Ok(loss_at(s, &mut pool)?.loss), &scores, STEP).unwrap();
    gradient_relative_error(&analytic, numeric.data())
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::new(2);
    let suites: [(&str, fn(&mut Rng) -> f64); 4] = [
        ("circle loss", circle_toy),
        ("agent interaction", rai_toy),
        ("phase adaptor", adaptor_toy),
        ("reward-guided surrogate", surrogate_toy),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, toy) in suites {
        let worst = (0..TOYS).map(|_| toy(&mut rng)).fold(0.0f64, f64::max);
        ok &= worst <= GRAD_TOL;
        parts.push(format!("{name} {worst:.1e}"));
    }
    let (fast, time) = within(Duration::from_secs(120), start);
    check(ok && fast, format!("worst relative error over {TOYS} toys: {}, {time}", parts.join(", ")))
}

// ---------------------------------------------------------------- 3

fn formula_points() -> Outcome {
    let alpha = fusion_alpha(20, 20.0);
    let a_ok = (alpha - (1.0 - (-1.0f64).exp())).abs() <= 1e-12;
    let m_ok = soft_mask(false, 0.3) == 0.3;
    let h_ok = (bernoulli_entropy(0.5) - std::f64::consts::LN_2).abs() <= 1e-12;

    let p = LossParams::default();
    let at_margin = circle_loss(&[p.delta_p], &[p.delta_n], &p).unwrap().value;
    let c_ok = (at_margin - std::f64::consts::LN_2 / p.gamma).abs() <= 1e-12;

    // L_full with μ = 0.01 against a direct evaluation in the same order
    let mu = 0.01;
    let mut rng = Rng::new(3);
    let mut pool = QueryPool::new(random_tensor(&[6, 4], &mut rng), 2).unwrap();
    pool.stage = Stage::RewardsGuided;
    pool.scores = vec![0.4, -1.2, 2.0, 0.0, -0.3, 1.1];
    let actions = vec![true, false, true, false, false, true];
    let rewards = vec![0.9, 0.0, 1.7, 0.0, 0.0, 0.4];
    let mut o = outcome_from_actions(actions.clone(), pool.probabilities(), 0.3);
    o.set_rewards(rewards.clone()).unwrap();
    let s2 = stage_two_loss(&o, &pool, mu);
    let baseline = rewards.iter().sum::<f64>() / 6.0;
    let mut l_g = 0.0;
    let mut entropy = Vec::new();
    for i in 0..6 {
        let pr = sigmoid(pool.scores[i]);
        let lp = if actions[i] { pr.ln() } else { (1.0 - pr).ln() };
        l_g -= (rewards[i] - baseline) * lp;
        entropy.push(-(pr * pr.ln() + (1.0 - pr) * (1.0 - pr).ln()));
    }
    let entropy: f64 = entropy.iter().sum();
    let l_full = l_g - mu * entropy;
    let lt = 0.8125;
    let lp = LossParams::default();
    let f_ok = s2.loss == l_full
        && regularized_loss(l_g, entropy, mu) == l_full
        && total_loss(lt, l_full, &lp, Stage::RewardsGuided) == lp.lambda1 * lt + lp.lambda2 * l_full
        && total_loss(lt, l_full, &lp, Stage::WarmUp) == lp.lambda1 * lt;

    check(
        a_ok && m_ok && h_ok && c_ok && f_ok,
        format!(
            "alpha {alpha:.15}, soft mask {}, entropy {:.15}, circle at margin {at_margin:.15}, full loss exact {f_ok}",
            soft_mask(false, 0.3),
            bernoulli_entropy(0.5)
        ),
    )
}

// ---------------------------------------------------------------- 4

fn planted() -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    let pc = &cfg.planted;
    assert_eq!((pc.m, pc.k, pc.epochs), (32, 12, 50));
    let reward = RewardConfig::default();
    let tri = planted_suite(pc, &reward, true, cfg.seed).unwrap();
    let topk = planted_suite(pc, &reward, false, cfg.seed).unwrap();
    let good = tri.iter().filter(|r| r.recovered >= pc.min_recovered).count();
    let mean = |v: &[agentreg::experiment::PlantedRun]| {
        v.iter().map(|r| r.recovered as f64).sum::<f64>() / v.len() as f64
    };
    let (mt, mk) = (mean(&tri), mean(&topk));
    let (fast, time) = within(Duration::from_secs(600), start);
    check(
        tri.len() == 20 && good >= 18 && mk <= mt && fast,
        format!(
            "{good}/20 seeds recover >= {} of 12, mean recovered {mt:.2} three-stage vs {mk:.2} top-k only, {time}",
            pc.min_recovered
        ),
    )
}

// ---------------------------------------------------------------- 5

fn camera() -> (CameraIntrinsics, f64, f64) {
    let spec = SceneSpec::default();
    (spec.intrinsics, spec.image_width(), spec.image_height())
}

fn random_pose(rng: &mut Rng) -> RigidTransform {
    let axis = Vector3::new(rng.normal(), rng.normal(), rng.normal()).normalize();
    let t = Vector3::new(rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0));
    RigidTransform::from_axis_angle(axis, rng.uniform_in(0.0, std::f64::consts::PI), t)
}

fn scene_correspondences(n: usize, noise_px: f64, rng: &mut Rng) -> (Vec<Correspondence2d3d>, RigidTransform) {
    let (k, w, h) = camera();
    let gt = random_pose(rng);
    let inv = gt.inverse();
    let corrs = (0..n)
        .map(|_| {
            let uv = [rng.uniform_in(0.0, w), rng.uniform_in(0.0, h)];
            let cam = k.back_project(uv, rng.uniform_in(2.0, 8.0));
            Correspondence2d3d {
                uv: [uv[0] + noise_px * rng.normal(), uv[1] + noise_px * rng.normal()],
                xyz: inv.apply(&cam),
            }
        })
        .collect();
    (corrs, gt)
}

fn max_abs_diff(a: &RigidTransform, b: &RigidTransform) -> f64 {
    a.to_values()
        .iter()
        .zip(b.to_values())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn pnp_ransac() -> Outcome {
    let start = Instant::now();
    let (k, w, h) = camera();
    let cfg = RansacConfig::default();
    let mut rng = Rng::new(5);
    let mut exact = 0.0f64;
    for _ in 0..10 {
        let (corrs, gt) = scene_correspondences(50, 0.0, &mut rng);
        exact = exact.max(max_abs_diff(&solve_pnp(&corrs, &k).unwrap(), &gt));
        let r = ransac_pnp(&corrs, &k, &cfg, &mut rng).unwrap();
        exact = exact.max(max_abs_diff(&r.pose, &gt));
    }
    let mut good = 0;
    let (mut worst_r, mut worst_t) = (0.0f64, 0.0f64);
    for seed in 0..20 {
        let mut rng = Rng::new(500 + seed);
        let (clean, gt) = scene_correspondences(100, 1.0, &mut rng);
        let (corrs, _) = corrupt_correspondences(&clean, 0.3, w, h, &mut rng).unwrap();
        let (re, te) = match ransac_pnp(&corrs, &k, &cfg, &mut rng) {
            Ok(r) => pose_errors(&r.pose, &gt),
            Err(_) => (f64::INFINITY, f64::INFINITY),
        };
        worst_r = worst_r.max(re);
        worst_t = worst_t.max(te);
        if re < 1.0 && te < 0.01 {
            good += 1;
        }
    }
    let (fast, time) = within(Duration::from_secs(60), start);
    check(
        exact <= 1e-6 && good >= 19 && fast,
        format!(
            "noiseless max error {exact:.1e}, {good}/20 seeds within 1 deg and 1 cm (worst {worst_r:.3} deg, {:.2} cm), {time}",
            100.0 * worst_t
        ),
    )
}

// ---------------------------------------------------------------- 6

fn oracle_apply(t: &RigidTransform, x: &[f64; 3]) -> [f64; 3] {
    let v = t.to_values();
    let mut out = [0.0; 3];
    for (i, o) in out.iter_mut().enumerate() {
        *o = v[3 * i] * x[0] + v[3 * i + 1] * x[1] + v[3 * i + 2] * x[2] + v[9 + i];
    }
    out
}

fn oracle_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s.sqrt()
}

fn random_point(rng: &mut Rng, lo: f64, hi: f64) -> [f64; 3] {
    [rng.uniform_in(lo, hi), rng.uniform_in(lo, hi), rng.uniform_in(lo, hi)]
}

fn metric_oracles() -> Outcome {
    let mut rng = Rng::new(6);
    let (k, w, h) = camera();
    let (mut ir_err, mut rr_err, mut pir_err) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..50 {
        let gt = random_pose(&mut rng);
        let thr = rng.uniform_in(0.02, 0.2);

        let n = rng.below(40);
        let pairs: Vec<([f64; 3], [f64; 3])> = (0..n)
            .map(|_| {
                let xyz = random_point(&mut rng, -2.0, 2.0);
                let mut cam = oracle_apply(&gt, &xyz);
                let off = random_point(&mut rng, -0.15, 0.15);
                for i in 0..3 {
                    cam[i] += off[i];
                }
                (cam, xyz)
            })
            .collect();
        let hits = pairs
            .iter()
            .filter(|(cam, xyz)| oracle_dist(&oracle_apply(&gt, xyz), cam) < thr)
            .count();
        let want = if n == 0 { 0.0 } else { hits as f64 / n as f64 };
        ir_err = ir_err.max((inlier_ratio(&pairs, &gt, thr).value - want).abs());

        let npairs = 1 + rng.below(6);
        let gts: Vec<RigidTransform> = (0..npairs).map(|_| random_pose(&mut rng)).collect();
        let clouds: Vec<Vec<[f64; 3]>> = (0..npairs)
            .map(|_| (0..1 + rng.below(30)).map(|_| random_point(&mut rng, -3.0, 3.0)).collect())
            .collect();
        let ests: Vec<Option<RigidTransform>> = gts
            .iter()
            .map(|g| {
                if rng.bernoulli(0.2) {
                    return None;
                }
                let d = RigidTransform::from_axis_angle(
                    Vector3::new(0.0, 0.0, 1.0),
                    rng.uniform_in(-0.05, 0.05),
                    Vector3::new(rng.uniform_in(-0.1, 0.1), 0.0, rng.uniform_in(-0.1, 0.1)),
                );
                Some(d.compose(g))
            })
            .collect();
        let mut recalled = 0;
        for ((e, g), c) in ests.iter().zip(&gts).zip(&clouds) {
            if let Some(e) = e {
                let s: f64 = c.iter().map(|x| oracle_dist(&oracle_apply(e, x), &oracle_apply(g, x)).powi(2)).sum();
                if (s / c.len() as f64).sqrt() < thr {
                    recalled += 1;
                }
            }
        }
        let refs: Vec<&[[f64; 3]]> = clouds.iter().map(|c| c.as_slice()).collect();
        let rr = registration_recall(&ests, &gts, &refs, thr).unwrap().value;
        rr_err = rr_err.max((rr - recalled as f64 / npairs as f64).abs());

        // patches on a 4×3 grid, superpoints of random members in front of the camera
        let extents: Vec<PatchExtent> = (0..12)
            .map(|p| {
                let (col, row) = ((p % 4) as f64, (p / 4) as f64);
                [col * w / 4.0, row * h / 3.0, (col + 1.0) * w / 4.0, (row + 1.0) * h / 3.0]
            })
            .collect();
        let inv = gt.inverse();
        let cloud: Vec<[f64; 3]> = (0..60)
            .map(|_| {
                let cam = k.back_project([rng.uniform_in(-50.0, w + 50.0), rng.uniform_in(-50.0, h + 50.0)], rng.uniform_in(1.0, 5.0));
                inv.apply(&cam)
            })
            .collect();
        let members: Vec<Vec<usize>> = (0..8)
            .map(|_| {
                let n = 1 + rng.below(10);
                rng.sample_distinct(60, n)
            })
            .collect();
        let coarse: Vec<CoarseMatch> = (0..rng.below(20))
            .map(|_| CoarseMatch { patch: rng.below(12), superpoint: rng.below(8), similarity: 0.0 })
            .collect();
        let pthr = rng.uniform_in(0.1, 0.9);
        let good = coarse
            .iter()
            .filter(|c| {
                let e = extents[c.patch];
                let m = &members[c.superpoint];
                let inside = m
                    .iter()
                    .filter(|&&i| {
                        let p = oracle_apply(&gt, &cloud[i]);
                        if p[2] <= 1e-9 {
                            return false;
                        }
                        let u = k.fx * p[0] / p[2] + k.cx;
                        let v = k.fy * p[1] / p[2] + k.cy;
                        u >= e[0] && u < e[2] && v >= e[1] && v < e[3]
                    })
                    .count();
                inside as f64 / m.len() as f64 >= pthr
            })
            .count();
        let want = if coarse.is_empty() { 0.0 } else { good as f64 / coarse.len() as f64 };
        let pir = patch_inlier_ratio(&coarse, &extents, &members, &cloud, &gt, &k, pthr).unwrap().value;
        pir_err = pir_err.max((pir - want).abs());
    }

    // boundaries: equality is a miss for IR, FMR and RR
    let id = RigidTransform::identity();
    let ir_edge = inlier_ratio(&[([0.05, 0.0, 0.0], [0.0, 0.0, 0.0])], &id, 0.05).value == 0.0
        && inlier_ratio(&[([0.05f64.next_down(), 0.0, 0.0], [0.0, 0.0, 0.0])], &id, 0.05).value == 1.0;
    let fmr_edge = feature_matching_recall(&[0.10], 0.10).value == 0.0
        && feature_matching_recall(&[0.10f64.next_up()], 0.10).value == 1.0;
    let shifted = |x: f64| RigidTransform::from_axis_angle(Vector3::new(0.0, 0.0, 1.0), 0.0, Vector3::new(x, 0.0, 0.0));
    let origin: &[[f64; 3]] = &[[0.0, 0.0, 0.0]];
    let at = shifted(0.10);
    let below = shifted(0.10f64.next_down());
    let rr_edge = registration_rmse(&at, &id, origin).unwrap() == 0.10
        && registration_recall(&[Some(at)], &[id], &[origin], 0.10).unwrap().value == 0.0
        && registration_recall(&[Some(below)], &[id], &[origin], 0.10).unwrap().value == 1.0;

    check(
        ir_err <= 1e-12 && rr_err <= 1e-12 && pir_err <= 1e-12 && ir_edge && fmr_edge && rr_edge,
        format!(
            "max deviation IR {ir_err:.1e}, RR {rr_err:.1e}, PIR {pir_err:.1e}; strict at threshold IR {ir_edge}, FMR {fmr_edge}, RR {rr_edge}"
        ),
    )
}

// ---------------------------------------------------------------- 7

fn benchmark_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    cmd_synth(&ExperimentConfig::default(), dir.path()).unwrap();
    dir
}

fn ablation(data: &Path) -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    assert_eq!(cfg.ablate_seeds, 3);
    let out = tempfile::tempdir().unwrap();
    let table = cmd_ablate(&cfg, data, out.path()).unwrap();
    let mut parts = Vec::new();
    for row in &table.rows {
        let rr = row.mean.as_ref().map_or("failed".into(), |m| format!("{:.3}", m.rr));
        let seeds: Vec<String> = row
            .rr_per_seed
            .iter()
            .map(|r| r.map_or("failed".into(), |v| format!("{v:.3}")))
            .collect();
        parts.push(format!("{} rr {rr} [{}]", row.variant, seeds.join(" ")));
    }
    let failed: Vec<&str> = table.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    let (fast, time) = within(Duration::from_secs(1800), start);
    check(
        failed.is_empty() && fast,
        format!(
            "{}; failed checks: {}; {time}",
            parts.join(", "),
            if failed.is_empty() { "none".to_string() } else { failed.join(", ") }
        ),
    )
}

// ---------------------------------------------------------------- 8

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn determinism(data: &Path) -> Outcome {
    let cfg = ExperimentConfig::default();
    let run = |threads: usize| {
        let out = tempfile::tempdir().unwrap();
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| cmd_ablate(&cfg, data, out.path()))
            .unwrap();
        dir_bytes(out.path())
    };
    let a = run(1);
    let b = run(4);
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    check(
        !a.is_empty() && a == b,
        format!("{} files compared across 1 and 4 worker threads: {}", a.len(), names.join(", ")),
    )
}

fn main() {
    let data = benchmark_dir();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("numerics", Box::new(numerics)),
        ("gradients", Box::new(gradients)),
        ("formula points", Box::new(formula_points)),
        ("planted agent recovery", Box::new(planted)),
        ("pnp-ransac", Box::new(pnp_ransac)),
        ("metric oracles", Box::new(metric_oracles)),
        ("directional ablation", Box::new(|| ablation(data.path()))),
        ("determinism", Box::new(|| determinism(data.path()))),
    ];
    let mut failures = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let line = match std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)) {
            Ok(Ok(d)) => format!("pass  {d}"),
            Ok(Err(d)) => {
                failures += 1;
                format!("FAIL  {d}")
            }
            Err(_) => {
                failures += 1;
                "FAIL  panicked".into()
            }
        };
        println!("criterion {} ({name}): {line}", i + 1);
    }
    if failures > 0 {
        println!("{failures} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
}
