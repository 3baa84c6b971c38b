use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Slope of the leaky rectifier used between convolution layers.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Max-subtracted softmax of a slice, in place.
pub fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    v.iter_mut().for_each(|x| *x /= s);
}

/// Softmax along `axis`; every slice along that axis sums to one.
pub fn softmax(v: &Tensor, axis: usize) -> Result<Tensor> {
    let dims = v.dims();
    if axis >= dims.len() {
        return Err(Error::Dimension(format!(
            "softmax axis {axis} for dims {dims:?}"
        )));
    }
    let n = dims[axis];
    let inner: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let mut out = v.clone();
    let data = out.data_mut();
    let mut buf = vec![0.0; n];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * n + k) * inner + i;
            for (k, b) in buf.iter_mut().enumerate() {
                *b = data[at(k)];
            }
            softmax_in_place(&mut buf);
            for (k, b) in buf.iter().enumerate() {
                data[at(k)] = *b;
            }
        }
    }
    Ok(out)
}

/// Row-wise softmax of a matrix.
pub fn softmax_rows(m: &Tensor) -> Result<Tensor> {
    m.shape2()?;
    softmax(m, 1)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Cosine of the angle between `a` and `b`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "cosine of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateInput("zero-norm vector in cosine".into()));
    }
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((d / (na * nb)).clamp(-1.0, 1.0))
}

pub fn leaky_relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

pub fn leaky_relu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        let t = Tensor::vector(vec![0.0, 0.0]).unwrap();
        assert_eq!(softmax(&t, 0).unwrap().data(), &[0.5, 0.5]);

        let t = Tensor::vector(vec![1000.0, 0.0]).unwrap();
        let s = softmax(&t, 0).unwrap();
        assert_eq!(s.data()[0], 1.0);
        assert!(s.data()[1] >= 0.0 && s.data()[1] < 1e-300);
        assert!(s.all_finite());

        let t = Tensor::vector(vec![1f64.ln(), 2f64.ln(), 3f64.ln()]).unwrap();
        let s = softmax(&t, 0).unwrap();
        for (got, want) in s.data().iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_along_first_axis() {
        let t = Tensor::from_rows(&[vec![0.0, 5.0], vec![0.0, 5.0]]).unwrap();
        let s = softmax(&t, 0).unwrap();
        assert!(s.data().iter().all(|v| (v - 0.5).abs() < 1e-15));
        assert!(softmax(&t, 2).is_err());
    }

    #[test]
    fn sigmoid_and_cosine() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_similarity(&[1.0, 2.0], &[2.0, 4.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::DegenerateInput(_))
        ));
    }
}
