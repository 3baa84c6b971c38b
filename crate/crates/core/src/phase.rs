//! Fourier phase texture maps and their fusion into coarse image features.
//!
//! For each channel the amplitude spectrum is replaced by its mean `c` while
//! the phase is kept, and the result is transformed back:
//! `texture = Re(IDFT(c · exp(J·Φ)))`. Frequencies whose magnitude is
//! numerically zero carry no phase and are left at zero.

use crate::error::{Error, Result};
use crate::numerics::{
    conv_stack_backward, conv_stack_forward_cached, dft2, idft2, ComplexTensor, ConvStackCache,
    ConvStackWeights, Tensor,
};

/// Frequencies below this fraction of the peak magnitude are treated as empty.
const EMPTY_FREQUENCY_REL: f64 = 1e-12;
/// Largest imaginary residue tolerated in a reconstruction, relative to `max(1, c)`.
const IMAG_RESIDUE_TOL: f64 = 1e-9;

/// Phase texture of an image, channels last (`H×W×C`).
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMap {
    pub texture: Tensor,
    /// Mean amplitude `c` of each channel's spectrum.
    pub amplitude_constants: Vec<f64>,
}

impl PhaseMap {
    pub fn height(&self) -> usize {
        self.texture.dims()[0]
    }

    pub fn width(&self) -> usize {
        self.texture.dims()[1]
    }

    pub fn channels(&self) -> usize {
        self.texture.dims()[2]
    }

    /// One channel as an `H×W` tensor.
    pub fn channel(&self, c: usize) -> Tensor {
        extract_channel(&self.texture, c)
    }

    /// Texture divided by each channel's amplitude constant.
    ///
    /// This removes the last trace of global intensity from the map and is what
    /// the adaptor consumes.
    pub fn normalized_texture(&self) -> Tensor {
        let ch = self.channels();
        let mut t = self.texture.clone();
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v /= self.amplitude_constants[i % ch];
        }
        t
    }
}

fn extract_channel(img: &Tensor, c: usize) -> Tensor {
    let (h, w, ch) = (img.dims()[0], img.dims()[1], img.dims()[2]);
    let data = (0..h * w).map(|p| img.data()[p * ch + c]).collect();
    Tensor::new(vec![h, w], data).expect("channel slice")
}

/// Amplitude `|F|` and phase `arg F` (quadrant-correct) of one `H×W` channel.
pub fn amplitude_and_phase(channel: &Tensor) -> Result<(Tensor, Tensor)> {
    let f = dft2(channel)?;
    Ok((f.abs(), f.arg()))
}

/// Phase-only reconstruction of one channel. Returns `(texture, c)`.
pub fn phase_texture(channel: &Tensor) -> Result<(Tensor, f64)> {
    let f = dft2(channel)?;
    let amp = f.abs();
    let phase = f.arg();
    let peak = amp.data().iter().copied().fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(Error::DegenerateInput(
            "all-zero channel has no defined phase".into(),
        ));
    }
    let c = amp.data().iter().sum::<f64>() / amp.len() as f64;
    let floor = EMPTY_FREQUENCY_REL * peak;
    let n = amp.len();
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    for k in 0..n {
        if amp.data()[k] > floor {
            re[k] = c * phase.data()[k].cos();
            im[k] = c * phase.data()[k].sin();
        }
    }
    let spec = ComplexTensor::new(channel.dims().to_vec(), re, im)?;
    let rec = idft2(&spec)?;
    let residue = rec.im().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if residue > IMAG_RESIDUE_TOL * c.max(1.0) {
        return Err(Error::Numerical(format!(
            "phase reconstruction left an imaginary residue of {residue:e}"
        )));
    }
    Ok((rec.real_part(), c))
}

/// Phase texture map of an `H×W×C` image (`H, W ≥ 2`).
pub fn extract_phase_map(image: &Tensor) -> Result<PhaseMap> {
    let (h, w, ch) = match image.dims() {
        [h, w, c] => (*h, *w, *c),
        d => return Err(Error::Dimension(format!("image must be H×W×C, got {d:?}"))),
    };
    if h < 2 || w < 2 {
        return Err(Error::Dimension(format!("image {h}×{w} is smaller than 2×2")));
    }
    if !image.all_finite() {
        return Err(Error::Numerical("image contains non-finite values".into()));
    }
    let mut texture = Tensor::zeros(&[h, w, ch]);
    let mut constants = Vec::with_capacity(ch);
    for c in 0..ch {
        let (tex, amp) = phase_texture(&extract_channel(image, c)).map_err(|e| match e {
            Error::DegenerateInput(m) => Error::DegenerateInput(format!("channel {c}: {m}")),
            other => other,
        })?;
        for (p, v) in tex.data().iter().enumerate() {
            texture.data_mut()[p * ch + c] = *v;
        }
        constants.push(amp);
    }
    Ok(PhaseMap {
        texture,
        amplitude_constants: constants,
    })
}

/// Overlap weights for averaging `n` cells into `m` equal bins.
fn area_weights(n: usize, m: usize) -> Vec<Vec<(usize, f64)>> {
    let bin = n as f64 / m as f64;
    (0..m)
        .map(|o| {
            let (lo, hi) = (o as f64 * bin, (o + 1) as f64 * bin);
            (lo.floor() as usize..(hi.ceil() as usize).min(n))
                .filter_map(|i| {
                    let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                    (overlap > 0.0).then_some((i, overlap / bin))
                })
                .collect()
        })
        .collect()
}

/// Area-averaging resample of an `H×W×C` tensor to `out_h×out_w×C`.
pub fn downsample_area(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w, ch) = match x.dims() {
        [h, w, c] => (*h, *w, *c),
        d => return Err(Error::Dimension(format!("expected H×W×C, got {d:?}"))),
    };
    if out_h == 0 || out_w == 0 || out_h > h || out_w > w {
        return Err(Error::Dimension(format!(
            "cannot area-downsample {h}×{w} to {out_h}×{out_w}"
        )));
    }
    let wy = area_weights(h, out_h);
    let wx = area_weights(w, out_w);
    let mut out = Tensor::zeros(&[out_h, out_w, ch]);
    for (oy, ys) in wy.iter().enumerate() {
        for (ox, xs) in wx.iter().enumerate() {
            for &(iy, ay) in ys {
                for &(ix, ax) in xs {
                    let a = ay * ax;
                    for c in 0..ch {
                        out.data_mut()[(oy * out_w + ox) * ch + c] +=
                            a * x.data()[(iy * w + ix) * ch + c];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Adaptor input for a feature grid: the normalized phase map area-averaged to `grid_h×grid_w`.
pub fn adaptor_input(phase_map: &PhaseMap, grid_h: usize, grid_w: usize) -> Result<Tensor> {
    downsample_area(&phase_map.normalized_texture(), grid_h, grid_w)
}

/// `base_features + adaptor(phase)` on the coarse grid.
pub fn fuse_phase_features(
    base_features: &Tensor,
    phase_map: &PhaseMap,
    adaptor: &ConvStackWeights,
) -> Result<Tensor> {
    let (gh, gw, _) = grid_dims(base_features)?;
    let input = adaptor_input(phase_map, gh, gw)?;
    Ok(fuse_with_input(base_features, &input, adaptor)?.0)
}

fn grid_dims(base: &Tensor) -> Result<(usize, usize, usize)> {
    match base.dims() {
        [h, w, c] => Ok((*h, *w, *c)),
        d => Err(Error::Dimension(format!(
            "base features must be H'×W'×C, got {d:?}"
        ))),
    }
}

/// Fusion from a precomputed adaptor input; also returns the adaptor cache.
pub fn fuse_with_input(
    base_features: &Tensor,
    adaptor_input: &Tensor,
    adaptor: &ConvStackWeights,
) -> Result<(Tensor, ConvStackCache)> {
    let (_, _, c) = grid_dims(base_features)?;
    if adaptor.out_channels() != c {
        return Err(Error::Dimension(format!(
            "adaptor emits {} channels, features have {c}",
            adaptor.out_channels()
        )));
    }
    if adaptor.in_channels() != adaptor_input.dims()[2] {
        return Err(Error::Dimension(format!(
            "adaptor expects {} input channels, phase map has {}",
            adaptor.in_channels(),
            adaptor_input.dims()[2]
        )));
    }
    let (adapted, cache) = conv_stack_forward_cached(adaptor_input, adaptor)?;
    if adapted.dims() != base_features.dims() {
        return Err(Error::Dimension(format!(
            "adaptor output {:?} vs base features {:?}",
            adapted.dims(),
            base_features.dims()
        )));
    }
    Ok((base_features.add(&adapted)?, cache))
}

/// Adaptor weight gradients given the gradient of the fused features.
pub fn fuse_backward(
    adaptor: &ConvStackWeights,
    cache: &ConvStackCache,
    d_fused: &Tensor,
) -> Result<ConvStackWeights> {
    Ok(conv_stack_backward(adaptor, cache, d_fused)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{
        finite_diff_gradient, gradient_relative_error, Activation, Rng,
    };
    use std::f64::consts::PI;

    fn random_image(rng: &mut Rng, h: usize, w: usize, c: usize) -> Tensor {
        Tensor::new(
            vec![h, w, c],
            (0..h * w * c).map(|_| rng.uniform()).collect(),
        )
        .unwrap()
    }

    /// Builds `c·e^{JΦ}` element by element and inverts it with an explicit
    /// double loop over the inverse sum.
    fn oracle_texture(ch: &Tensor) -> Vec<f64> {
        let (h, w) = (ch.dims()[0], ch.dims()[1]);
        let mut fr = vec![0.0; h * w];
        let mut fi = vec![0.0; h * w];
        for u in 0..h {
            for v in 0..w {
                for i in 0..h {
                    for j in 0..w {
                        let a = -2.0 * PI * ((u * i) as f64 / h as f64 + (v * j) as f64 / w as f64);
                        fr[u * w + v] += ch.data()[i * w + j] * a.cos();
                        fi[u * w + v] += ch.data()[i * w + j] * a.sin();
                    }
                }
            }
        }
        let c = fr.iter().zip(&fi).map(|(r, i)| r.hypot(*i)).sum::<f64>() / (h * w) as f64;
        let mut out = vec![0.0; h * w];
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for u in 0..h {
                    for v in 0..w {
                        let phi = fi[u * w + v].atan2(fr[u * w + v]);
                        let a = 2.0 * PI * ((u * i) as f64 / h as f64 + (v * j) as f64 / w as f64);
                        acc += c * (phi + a).cos();
                    }
                }
                out[i * w + j] = acc / (h * w) as f64;
            }
        }
        out
    }

    #[test]
    fn matches_double_loop_oracle() {
        let mut rng = Rng::new(11);
        let img = random_image(&mut rng, 8, 8, 1);
        let pm = extract_phase_map(&img).unwrap();
        let want = oracle_texture(&pm_channel_src(&img));
        for (a, b) in pm.texture.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    fn pm_channel_src(img: &Tensor) -> Tensor {
        extract_channel(img, 0)
    }

    #[test]
    fn constant_image_gives_constant_texture() {
        let img = Tensor::filled(&[4, 6, 3], 0.7);
        let pm = extract_phase_map(&img).unwrap();
        let (_, phase) = amplitude_and_phase(&pm.channel(0)).unwrap();
        assert_eq!(phase.data()[0], 0.0);
        let first = pm.texture.data()[0];
        assert!(pm.texture.data().iter().all(|v| (v - first).abs() < 1e-12));
        assert!((pm.amplitude_constants[0] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn brightness_scaling_only_moves_c() {
        let mut rng = Rng::new(5);
        let img = random_image(&mut rng, 6, 7, 3);
        let a = extract_phase_map(&img).unwrap();
        let b = extract_phase_map(&img.scale(2.0)).unwrap();
        for c in 0..3 {
            let (_, pa) = amplitude_and_phase(&extract_channel(&img, c)).unwrap();
            let (_, pb) = amplitude_and_phase(&extract_channel(&img.scale(2.0), c)).unwrap();
            for (x, y) in pa.data().iter().zip(pb.data()) {
                assert!((x - y).abs() < 1e-9);
            }
            assert!((b.amplitude_constants[c] - 2.0 * a.amplitude_constants[c]).abs() < 1e-9);
        }
        for (x, y) in a.normalized_texture().data().iter().zip(b.normalized_texture().data()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_channel_is_degenerate() {
        let mut img = Tensor::filled(&[4, 4, 3], 1.0);
        for p in 0..16 {
            img.data_mut()[p * 3 + 1] = 0.0;
        }
        assert!(matches!(
            extract_phase_map(&img),
            Err(Error::DegenerateInput(_))
        ));
        assert!(extract_phase_map(&Tensor::filled(&[1, 4, 3], 1.0)).is_err());
    }

    #[test]
    fn area_downsample_block_mean() {
        let x = Tensor::new(vec![2, 4, 1], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        let d = downsample_area(&x, 1, 2).unwrap();
        assert_eq!(d.data(), &[3.5, 5.5]);
        let d = downsample_area(&x, 2, 3).unwrap();
        // Mass is preserved under area averaging.
        let mass: f64 = d.data().iter().sum::<f64>() * (8.0 / 6.0);
        assert!((mass - 36.0).abs() < 1e-12);
    }

    #[test]
    fn fusion_identities() {
        let mut rng = Rng::new(8);
        let img = random_image(&mut rng, 8, 8, 3);
        let pm = extract_phase_map(&img).unwrap();
        let base = random_image(&mut rng, 4, 4, 5);

        let zero = ConvStackWeights::zeros(3, 4, 5, Activation::LeakyRelu);
        assert_eq!(fuse_phase_features(&base, &pm, &zero).unwrap(), base);

        let w = ConvStackWeights::random(3, 4, 5, 1.0, Activation::LeakyRelu, &mut rng);
        let only = fuse_phase_features(&Tensor::zeros(&[4, 4, 5]), &pm, &w).unwrap();
        let direct = crate::numerics::conv_stack_forward(&adaptor_input(&pm, 4, 4).unwrap(), &w)
            .unwrap();
        assert_eq!(only, direct);

        let again = fuse_phase_features(&Tensor::zeros(&[4, 4, 5]), &pm, &w).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&only), bits(&again));

        let bad = ConvStackWeights::zeros(3, 4, 6, Activation::LeakyRelu);
        assert!(matches!(
            fuse_phase_features(&base, &pm, &bad),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn adaptor_gradient_matches_finite_differences() {
        let mut rng = Rng::new(21);
        let img = random_image(&mut rng, 8, 8, 3);
        let pm = extract_phase_map(&img).unwrap();
        let input = adaptor_input(&pm, 4, 4).unwrap();
        let base = random_image(&mut rng, 4, 4, 2);
        let w = ConvStackWeights::random(3, 3, 2, 1.0, Activation::LeakyRelu, &mut rng);
        let probe = random_image(&mut rng, 4, 4, 2);
        let (_, cache) = fuse_with_input(&base, &input, &w).unwrap();
        let g = fuse_backward(&w, &cache, &probe).unwrap();
        let flat = Tensor::vector(w.flatten()).unwrap();
        let num = finite_diff_gradient(
            |t| {
                let mut ww = w.clone();
                ww.unflatten(t.data());
                fuse_with_input(&base, &input, &ww)?.0.dot(&probe)
            },
            &flat,
            1e-6,
        )
        .unwrap();
        assert!(gradient_relative_error(&g.flatten(), num.data()) < 1e-4);
    }
}
