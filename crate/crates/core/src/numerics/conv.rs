//! Three-layer 3×3 convolution stack over channels-last `H×W×C` tensors.

use crate::error::{Error, Result};
use crate::numerics::nonlin::{leaky_relu, leaky_relu_grad};
use crate::numerics::{Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    LeakyRelu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::LeakyRelu => leaky_relu(x),
        }
    }

    fn grad(self, x: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::LeakyRelu => leaky_relu_grad(x),
        }
    }
}

/// One zero-padded 3×3 convolution. Weights are indexed `[out][in][ky][kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub cin: usize,
    pub cout: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(cin: usize, cout: usize) -> Self {
        ConvLayer {
            cin,
            cout,
            weight: vec![0.0; cout * cin * 9],
            bias: vec![0.0; cout],
        }
    }

    #[inline]
    fn w(&self, o: usize, c: usize, ky: usize, kx: usize) -> f64 {
        self.weight[((o * self.cin + c) * 3 + ky) * 3 + kx]
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (h, w, cin) = hwc(x)?;
        if cin != self.cin {
            return Err(Error::Dimension(format!(
                "conv layer expects {} input channels, got {cin}",
                self.cin
            )));
        }
        let xd = x.data();
        let mut out = vec![0.0; h * w * self.cout];
        for y in 0..h {
            for xx in 0..w {
                let o_base = (y * w + xx) * self.cout;
                out[o_base..o_base + self.cout].copy_from_slice(&self.bias);
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = xx as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let i_base = (sy as usize * w + sx as usize) * cin;
                        for o in 0..self.cout {
                            let mut acc = 0.0;
                            for c in 0..cin {
                                acc += self.w(o, c, ky, kx) * xd[i_base + c];
                            }
                            out[o_base + o] += acc;
                        }
                    }
                }
            }
        }
        Tensor::new(vec![h, w, self.cout], out)
    }

    /// Accumulates weight/bias gradients into `grad` and returns the input gradient.
    fn backward(&self, x: &Tensor, d_out: &Tensor, grad: &mut ConvLayer) -> Tensor {
        let (h, w, cin) = hwc(x).expect("cached input is H×W×C");
        let xd = x.data();
        let dd = d_out.data();
        let mut dx = vec![0.0; h * w * cin];
        for y in 0..h {
            for xx in 0..w {
                let o_base = (y * w + xx) * self.cout;
                for o in 0..self.cout {
                    grad.bias[o] += dd[o_base + o];
                }
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = xx as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let i_base = (sy as usize * w + sx as usize) * cin;
                        for o in 0..self.cout {
                            let g = dd[o_base + o];
                            if g == 0.0 {
                                continue;
                            }
                            for c in 0..cin {
                                let wi = ((o * cin + c) * 3 + ky) * 3 + kx;
                                grad.weight[wi] += g * xd[i_base + c];
                                dx[i_base + c] += g * self.weight[wi];
                            }
                        }
                    }
                }
            }
        }
        Tensor::new(vec![h, w, cin], dx).expect("shape preserved")
    }
}

fn hwc(x: &Tensor) -> Result<(usize, usize, usize)> {
    match x.dims() {
        [h, w, c] => Ok((*h, *w, *c)),
        d => Err(Error::Dimension(format!("expected H×W×C, got {d:?}"))),
    }
}

/// Weights of the three-layer convolution adaptor.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStackWeights {
    pub layers: Vec<ConvLayer>,
    pub activation: Activation,
}

impl ConvStackWeights {
    /// All-zero stack with channel chain `cin → hidden → hidden → cout`.
    pub fn zeros(cin: usize, hidden: usize, cout: usize, activation: Activation) -> Self {
        ConvStackWeights {
            layers: vec![
                ConvLayer::zeros(cin, hidden),
                ConvLayer::zeros(hidden, hidden),
                ConvLayer::zeros(hidden, cout),
            ],
            activation,
        }
    }

    /// Center-tap identity on every layer with linear activation.
    pub fn identity(channels: usize) -> Self {
        let mut s = ConvStackWeights::zeros(channels, channels, channels, Activation::Linear);
        for layer in &mut s.layers {
            for c in 0..channels {
                layer.weight[((c * channels + c) * 3 + 1) * 3 + 1] = 1.0;
            }
        }
        s
    }

    /// Gaussian weights scaled by `gain / sqrt(9·cin)`, zero biases.
    pub fn random(
        cin: usize,
        hidden: usize,
        cout: usize,
        gain: f64,
        activation: Activation,
        rng: &mut Rng,
    ) -> Self {
        let mut s = ConvStackWeights::zeros(cin, hidden, cout, activation);
        for layer in &mut s.layers {
            let std = gain / ((9 * layer.cin) as f64).sqrt();
            layer.weight.iter_mut().for_each(|v| *v = std * rng.normal());
        }
        s
    }

    pub fn zeros_like(&self) -> Self {
        ConvStackWeights {
            layers: self
                .layers
                .iter()
                .map(|l| ConvLayer::zeros(l.cin, l.cout))
                .collect(),
            activation: self.activation,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].cin
    }

    pub fn out_channels(&self) -> usize {
        self.layers[self.layers.len() - 1].cout
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.len() != 3 {
            return Err(Error::Dimension(format!(
                "conv stack needs 3 layers, got {}",
                self.layers.len()
            )));
        }
        for pair in self.layers.windows(2) {
            if pair[0].cout != pair[1].cin {
                return Err(Error::Dimension(format!(
                    "conv stack channel chain breaks: {} → {}",
                    pair[0].cout, pair[1].cin
                )));
            }
        }
        for l in &self.layers {
            if l.weight.len() != l.cin * l.cout * 9 || l.bias.len() != l.cout {
                return Err(Error::Dimension("conv layer buffer sizes".into()));
            }
        }
        Ok(())
    }

    /// `self += s · other`, layer by layer.
    pub fn add_scaled(&mut self, other: &ConvStackWeights, s: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.iter_mut().zip(&b.weight).for_each(|(x, y)| *x += s * y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += s * y);
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(&l.bias))
            .map(|v| v * v)
            .sum()
    }

    /// Flat view of all parameters in a fixed order.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn unflatten(&mut self, flat: &[f64]) {
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            for v in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *v = it.next().expect("flat parameter vector too short");
            }
        }
    }
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ConvStackCache {
    inputs: Vec<Tensor>,
    pre: Vec<Tensor>,
}

/// Forward pass; spatial size is preserved.
pub fn conv_stack_forward(x: &Tensor, w: &ConvStackWeights) -> Result<Tensor> {
    Ok(conv_stack_forward_cached(x, w)?.0)
}

pub fn conv_stack_forward_cached(
    x: &Tensor,
    w: &ConvStackWeights,
) -> Result<(Tensor, ConvStackCache)> {
    w.validate()?;
    let mut inputs = Vec::with_capacity(3);
    let mut pre = Vec::with_capacity(3);
    let mut cur = x.clone();
    let last = w.layers.len() - 1;
    for (i, layer) in w.layers.iter().enumerate() {
        let z = layer.forward(&cur)?;
        inputs.push(cur);
        cur = if i < last {
            z.map(|v| w.activation.apply(v))
        } else {
            z.clone()
        };
        pre.push(z);
    }
    Ok((cur, ConvStackCache { inputs, pre }))
}

/// Returns `(weight gradients, input gradient)` for upstream gradient `d_out`.
pub fn conv_stack_backward(
    w: &ConvStackWeights,
    cache: &ConvStackCache,
    d_out: &Tensor,
) -> Result<(ConvStackWeights, Tensor)> {
    let mut grads = w.zeros_like();
    let last = w.layers.len() - 1;
    if d_out.dims() != cache.pre[last].dims() {
        return Err(Error::Dimension(format!(
            "upstream gradient {:?} vs output {:?}",
            d_out.dims(),
            cache.pre[last].dims()
        )));
    }
    let mut d = d_out.clone();
    for i in (0..=last).rev() {
        if i < last {
            let act = w.activation;
            for (g, z) in d.data_mut().iter_mut().zip(cache.pre[i].data()) {
                *g *= act.grad(*z);
            }
        }
        d = w.layers[i].backward(&cache.inputs[i], &d, &mut grads.layers[i]);
    }
    Ok((grads, d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{finite_diff_gradient, gradient_relative_error};

    /// Plain nested-loop convolution used as an independent reference.
    fn reference_layer(x: &Tensor, l: &ConvLayer) -> Tensor {
        let (h, w, cin) = (x.dims()[0], x.dims()[1], x.dims()[2]);
        let mut out = Tensor::zeros(&[h, w, l.cout]);
        for y in 0..h as isize {
            for xx in 0..w as isize {
                for o in 0..l.cout {
                    let mut acc = l.bias[o];
                    for c in 0..cin {
                        for dy in -1..=1isize {
                            for dx in -1..=1isize {
                                let (sy, sx) = (y + dy, xx + dx);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                let wv = l.weight
                                    [((o * cin + c) * 3 + (dy + 1) as usize) * 3 + (dx + 1) as usize];
                                acc += wv * x.data()[(sy as usize * w + sx as usize) * cin + c];
                            }
                        }
                    }
                    out.data_mut()[(y as usize * w + xx as usize) * l.cout + o] = acc;
                }
            }
        }
        out
    }

    fn random_input(rng: &mut Rng, dims: &[usize]) -> Tensor {
        let n: usize = dims.iter().product();
        Tensor::new(dims.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn identity_stack_is_identity() {
        let mut rng = Rng::new(1);
        let x = random_input(&mut rng, &[4, 6, 1]);
        let y = conv_stack_forward(&x, &ConvStackWeights::identity(1)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut rng = Rng::new(2);
        let x = random_input(&mut rng, &[5, 5, 3]);
        let w = ConvStackWeights::zeros(3, 4, 2, Activation::LeakyRelu);
        let y = conv_stack_forward(&x, &w).unwrap();
        assert_eq!(y.dims(), &[5, 5, 2]);
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn matches_nested_loop_reference() {
        let mut rng = Rng::new(3);
        let x = random_input(&mut rng, &[5, 5, 2]);
        let mut w = ConvStackWeights::random(2, 3, 4, 1.0, Activation::LeakyRelu, &mut rng);
        for l in &mut w.layers {
            l.bias.iter_mut().for_each(|b| *b = rng.normal());
        }
        let mut expect = x.clone();
        for (i, l) in w.layers.iter().enumerate() {
            expect = reference_layer(&expect, l);
            if i < 2 {
                expect = expect.map(leaky_relu);
            }
        }
        let got = conv_stack_forward(&x, &w).unwrap();
        for (a, b) in got.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_mismatch_is_dimension_error() {
        let x = Tensor::zeros(&[3, 3, 2]);
        let w = ConvStackWeights::zeros(3, 3, 3, Activation::Linear);
        assert!(matches!(conv_stack_forward(&x, &w), Err(Error::Dimension(_))));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Rng::new(4);
        let x = random_input(&mut rng, &[4, 5, 2]);
        let w = ConvStackWeights::random(2, 3, 2, 1.5, Activation::LeakyRelu, &mut rng);
        let probe = random_input(&mut rng, &[4, 5, 2]);
        let (_, cache) = conv_stack_forward_cached(&x, &w).unwrap();
        let (gw, gx) = conv_stack_backward(&w, &cache, &probe).unwrap();

        let readout = |xx: &Tensor, ww: &ConvStackWeights| {
            conv_stack_forward(xx, ww).unwrap().dot(&probe).unwrap()
        };
        let num_x = finite_diff_gradient(|t| Ok(readout(t, &w)), &x, 1e-6).unwrap();
        assert!(gradient_relative_error(gx.data(), num_x.data()) < 1e-6);

        let flat = Tensor::vector(w.flatten()).unwrap();
        let num_w = finite_diff_gradient(
            |t| {
                let mut ww = w.clone();
                ww.unflatten(t.data());
                Ok(readout(&x, &ww))
            },
            &flat,
            1e-6,
        )
        .unwrap();
        assert!(gradient_relative_error(&gw.flatten(), num_w.data()) < 1e-6);
    }
}
