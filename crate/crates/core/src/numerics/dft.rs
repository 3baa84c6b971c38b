//! Exact 2-D discrete Fourier transform.
//!
//! The transform is evaluated as a separable sum (rows then columns) with
//! twiddle factors indexed by `(u·i) mod H`, which keeps every phase angle in
//! `[0, 2π)` and avoids accumulating rounding error in the exponent. Images in
//! this crate are at most a few dozen pixels on a side, so no FFT is needed.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::numerics::{ComplexTensor, Tensor};

fn twiddles(n: usize, sign: f64) -> (Vec<f64>, Vec<f64>) {
    (0..n)
        .map(|k| {
            let a = sign * 2.0 * PI * k as f64 / n as f64;
            (a.cos(), a.sin())
        })
        .unzip()
}

fn hw(dims: &[usize]) -> Result<(usize, usize)> {
    match dims {
        [h, w] if *h >= 1 && *w >= 1 => Ok((*h, *w)),
        d => Err(Error::Dimension(format!(
            "2-D transform needs an H×W tensor, got dims {d:?}"
        ))),
    }
}

/// In-place 1-D transform of every row (or every column) of an `h×w` plane.
fn transform_axis(
    re: &mut [f64],
    im: &mut [f64],
    h: usize,
    w: usize,
    along_rows: bool,
    sign: f64,
) {
    let n = if along_rows { w } else { h };
    let (c, s) = twiddles(n, sign);
    let lines = if along_rows { h } else { w };
    let mut buf_re = vec![0.0; n];
    let mut buf_im = vec![0.0; n];
    for line in 0..lines {
        let idx = |k: usize| if along_rows { line * w + k } else { k * w + line };
        for (f, (br, bi)) in buf_re.iter_mut().zip(buf_im.iter_mut()).enumerate() {
            let mut acc_re = 0.0;
            let mut acc_im = 0.0;
            for k in 0..n {
                let t = (f * k) % n;
                let (xr, xi) = (re[idx(k)], im[idx(k)]);
                acc_re += xr * c[t] - xi * s[t];
                acc_im += xr * s[t] + xi * c[t];
            }
            *br = acc_re;
            *bi = acc_im;
        }
        for k in 0..n {
            re[idx(k)] = buf_re[k];
            im[idx(k)] = buf_im[k];
        }
    }
}

/// Forward transform `F(u,v) = Σ x(i,j)·exp(-2πJ(ui/H + vj/W))` of a real image.
pub fn dft2(x: &Tensor) -> Result<ComplexTensor> {
    dft2_complex(&ComplexTensor::from_real(x))
}

/// Forward transform of a complex `H×W` tensor.
pub fn dft2_complex(x: &ComplexTensor) -> Result<ComplexTensor> {
    let (h, w) = hw(x.dims())?;
    let mut out = x.clone();
    let (re, im) = out.planes_mut();
    transform_axis(re, im, h, w, true, -1.0);
    transform_axis(re, im, h, w, false, -1.0);
    Ok(out)
}

/// Inverse transform with `1/(HW)` normalization, so `idft2(dft2(x)) == x`.
pub fn idft2(f: &ComplexTensor) -> Result<ComplexTensor> {
    let (h, w) = hw(f.dims())?;
    let mut out = f.clone();
    let norm = 1.0 / (h * w) as f64;
    let (re, im) = out.planes_mut();
    transform_axis(re, im, h, w, true, 1.0);
    transform_axis(re, im, h, w, false, 1.0);
    re.iter_mut().for_each(|v| *v *= norm);
    im.iter_mut().for_each(|v| *v *= norm);
    Ok(out)
}
