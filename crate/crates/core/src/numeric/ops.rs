//! Forward and backward kernels for the few operations the model needs.
//!
//! The slice-level kernels (`matvec_acc`, `outer_acc`, ...) are what the model
//! code calls in its hot loops. The `Tensor`-level functions wrap them with
//! shape checks for callers outside the crate.

use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// `out += W x` for a row-major `rows × cols` matrix.
#[inline]
pub fn matvec_acc(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(out.len(), rows);
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        let mut s = 0.0;
        for (a, b) in row.iter().zip(x) {
            s += a * b;
        }
        *o += s;
    }
}

/// `dx += Wᵀ dy`.
#[inline]
pub fn matvec_t_acc(w: &[f64], rows: usize, cols: usize, dy: &[f64], dx: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(dy.len(), rows);
    debug_assert_eq!(dx.len(), cols);
    for (&g, row) in dy.iter().zip(w.chunks_exact(cols)) {
        if g == 0.0 {
            continue;
        }
        for (d, a) in dx.iter_mut().zip(row) {
            *d += g * a;
        }
    }
}

/// `dW += dy ⊗ x`.
#[inline]
pub fn outer_acc(dw: &mut [f64], dy: &[f64], x: &[f64]) {
    let cols = x.len();
    debug_assert_eq!(dw.len(), dy.len() * cols);
    for (&g, row) in dy.iter().zip(dw.chunks_exact_mut(cols)) {
        if g == 0.0 {
            continue;
        }
        for (d, a) in row.iter_mut().zip(x) {
            *d += g * a;
        }
    }
}

#[inline]
pub fn add_assign(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu_in_place(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Numerically stable softmax.
pub fn softmax_slice(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

/// Cross-entropy of `softmax(logits)` against `target`. Returns the loss and
/// writes `softmax(logits) - onehot(target)` into `grad`.
pub fn cross_entropy_slice(logits: &[f64], target: usize, grad: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|v| (v - max).exp()).sum();
    let log_z = max + sum.ln();
    for (g, &l) in grad.iter_mut().zip(logits) {
        *g = (l - log_z).exp();
    }
    grad[target] -= 1.0;
    log_z - logits[target]
}

fn check_vec(op: &'static str, name: &str, t: &Tensor, n: usize) -> Result<()> {
    if t.shape() != [n] {
        return Err(Error::dim(
            op,
            format!("{name} has shape {:?}, expected [{n}]", t.shape()),
        ));
    }
    Ok(())
}

fn check_linear(w: &Tensor, b: &Tensor, x: &Tensor) -> Result<(usize, usize)> {
    let [m, n] = *w.shape() else {
        return Err(Error::dim("linear", format!("W must be a matrix, got {:?}", w.shape())));
    };
    check_vec("linear", "b", b, m)?;
    check_vec("linear", "x", x, n)?;
    Ok((m, n))
}

/// `y = W x + b`.
pub fn linear(w: &Tensor, b: &Tensor, x: &Tensor) -> Result<Tensor> {
    let (m, n) = check_linear(w, b, x)?;
    let mut y = b.values().to_vec();
    matvec_acc(w.values(), m, n, x.values(), &mut y);
    Tensor::vector(y)
}

/// Gradients of `linear` with respect to each operand.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads {
    pub dw: Tensor,
    pub db: Tensor,
    pub dx: Tensor,
}

pub fn linear_backward(w: &Tensor, b: &Tensor, x: &Tensor, dy: &Tensor) -> Result<LinearGrads> {
    let (m, n) = check_linear(w, b, x)?;
    check_vec("linear_backward", "dy", dy, m)?;
    let mut dw = Tensor::zeros(&[m, n]);
    outer_acc(dw.values_mut(), dy.values(), x.values());
    let mut dx = vec![0.0; n];
    matvec_t_acc(w.values(), m, n, dy.values(), &mut dx);
    Ok(LinearGrads {
        dw,
        db: dy.clone(),
        dx: Tensor::vector(dx)?,
    })
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let values = x.values().iter().map(|&v| f(v)).collect();
    Tensor::new(x.shape().to_vec(), values).expect("elementwise map preserves shape")
}

fn zip_map(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let values = a.values().iter().zip(b.values()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), values)
}

pub fn relu(x: &Tensor) -> Tensor {
    map(x, |v| v.max(0.0))
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    map(x, sigmoid_scalar)
}

pub fn tanh(x: &Tensor) -> Tensor {
    map(x, f64::tanh)
}

pub fn hadamard(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_map("hadamard", a, b, |x, y| x * y)
}

pub fn softmax(x: &Tensor) -> Result<Tensor> {
    if x.is_empty() {
        return Err(Error::EmptyInput("softmax input"));
    }
    Tensor::new(x.shape().to_vec(), softmax_slice(x.values()))
}

/// Backward of `relu` given the forward input.
pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Result<Tensor> {
    zip_map("relu_backward", x, dy, |v, g| if v > 0.0 { g } else { 0.0 })
}

/// Backward of `sigmoid` given the forward output.
pub fn sigmoid_backward(y: &Tensor, dy: &Tensor) -> Result<Tensor> {
    zip_map("sigmoid_backward", y, dy, |s, g| g * s * (1.0 - s))
}

/// Backward of `tanh` given the forward output.
pub fn tanh_backward(y: &Tensor, dy: &Tensor) -> Result<Tensor> {
    zip_map("tanh_backward", y, dy, |t, g| g * (1.0 - t * t))
}

/// Backward of `softmax` given the forward output.
pub fn softmax_backward(y: &Tensor, dy: &Tensor) -> Result<Tensor> {
    if y.shape() != dy.shape() {
        return Err(Error::dim(
            "softmax_backward",
            format!("{:?} vs {:?}", y.shape(), dy.shape()),
        ));
    }
    let dot: f64 = y.values().iter().zip(dy.values()).map(|(a, b)| a * b).sum();
    zip_map("softmax_backward", y, dy, |s, g| s * (g - dot))
}

/// `-log softmax(logits)[target]` and its gradient with respect to `logits`.
pub fn cross_entropy(logits: &Tensor, target: usize) -> Result<(f64, Tensor)> {
    let k = logits.len();
    if target >= k {
        return Err(Error::Index {
            what: "cross-entropy target",
            index: target,
            size: k,
        });
    }
    let mut grad = vec![0.0; k];
    let loss = cross_entropy_slice(logits.values(), target, &mut grad);
    Ok((loss, Tensor::new(logits.shape().to_vec(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::rng::seeded;
    use rand::Rng;

    fn vecf(v: &[f64]) -> Tensor {
        Tensor::vector(v.to_vec()).unwrap()
    }

    #[test]
    fn linear_identity_and_zero_weight() {
        let y = linear(&Tensor::identity(2), &Tensor::zeros(&[2]), &vecf(&[3.0, 4.0])).unwrap();
        assert_eq!(y.values(), &[3.0, 4.0]);
        let y = linear(&Tensor::zeros(&[2, 2]), &vecf(&[1.0, 2.0]), &vecf(&[9.0, 9.0])).unwrap();
        assert_eq!(y.values(), &[1.0, 2.0]);
    }

    #[test]
    fn linear_shape_errors_name_operands() {
        let err = linear(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2]), &Tensor::zeros(&[2])).unwrap_err();
        assert!(err.to_string().contains('x'), "{err}");
        let err = linear(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[3]), &Tensor::zeros(&[3])).unwrap_err();
        assert!(err.to_string().contains('b'), "{err}");
    }

    // Central differences of L = c · linear(W, b, x) against the analytic
    // backward, seed 7, m = n = 3.
    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut rng = seeded(7);
        let mut rand_t = |shape: &[usize]| {
            let n = shape.iter().product();
            Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        let w = rand_t(&[3, 3]);
        let b = rand_t(&[3]);
        let x = rand_t(&[3]);
        let c = rand_t(&[3]);
        let loss = |w: &Tensor, b: &Tensor, x: &Tensor| -> f64 {
            let y = linear(w, b, x).unwrap();
            y.values().iter().zip(c.values()).map(|(a, b)| a * b).sum()
        };
        let g = linear_backward(&w, &b, &x, &c).unwrap();
        let eps = 1e-5;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
        let mut worst: f64 = 0.0;
        for (which, analytic) in [(0, &g.dw), (1, &g.db), (2, &g.dx)] {
            for i in 0..analytic.len() {
                let mut p = [w.clone(), b.clone(), x.clone()];
                let mut m = [w.clone(), b.clone(), x.clone()];
                p[which].values_mut()[i] += eps;
                m[which].values_mut()[i] -= eps;
                let num = (loss(&p[0], &p[1], &p[2]) - loss(&m[0], &m[1], &m[2])) / (2.0 * eps);
                worst = worst.max(rel(analytic.values()[i], num));
            }
        }
        assert!(worst <= 1e-6, "worst relative error {worst}");
    }

    #[test]
    fn activations_basic_values() {
        assert_eq!(relu(&vecf(&[-1.0, 0.0, 2.0])).values(), &[0.0, 0.0, 2.0]);
        let s = softmax(&vecf(&[0.0, 0.0, 0.0])).unwrap();
        for v in s.values() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(sigmoid(&vecf(&[0.0])).values(), &[0.5]);
        assert_eq!(tanh(&vecf(&[0.0])).values(), &[0.0]);
        assert_eq!(
            hadamard(&vecf(&[2.0, 3.0]), &vecf(&[4.0, -1.0])).unwrap().values(),
            &[8.0, -3.0]
        );
        assert!(softmax(&Tensor::zeros(&[0])).is_err());
    }

    #[test]
    fn softmax_handles_extreme_logits() {
        let s = softmax(&vecf(&[1000.0, -1000.0, 0.0])).unwrap();
        assert!(s.all_finite());
        assert!((s.values().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_values() {
        let (loss, _) = cross_entropy(&vecf(&[0.0, 0.0]), 0).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        let (loss, _) = cross_entropy(&vecf(&[50.0, -50.0, -50.0]), 0).unwrap();
        assert!(loss < 1e-20);
        assert!(matches!(cross_entropy(&vecf(&[0.0, 0.0]), 2), Err(Error::Index { .. })));
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = seeded(3);
        let logits: Vec<f64> = (0..7).map(|_| rng.random_range(-2.0..2.0)).collect();
        let target = 4;
        let (_, grad) = cross_entropy(&vecf(&logits), target).unwrap();
        let eps = 1e-5;
        for i in 0..7 {
            let mut p = logits.clone();
            let mut m = logits.clone();
            p[i] += eps;
            m[i] -= eps;
            let num = (cross_entropy(&vecf(&p), target).unwrap().0 - cross_entropy(&vecf(&m), target).unwrap().0)
                / (2.0 * eps);
            let a = grad.values()[i];
            assert!(
                (a - num).abs() / a.abs().max(num.abs()) <= 1e-6,
                "component {i}: {a} vs {num}"
            );
        }
    }

    #[test]
    fn activation_backwards_match_finite_differences() {
        let x = vecf(&[-0.7, 0.3, 1.2, -2.0]);
        let dy = vecf(&[0.5, -1.0, 2.0, 0.25]);
        let eps = 1e-6;
        type Fwd = fn(&Tensor) -> Tensor;
        let cases: [(Fwd, Tensor); 3] = [
            (relu, relu_backward(&x, &dy).unwrap()),
            (sigmoid, sigmoid_backward(&sigmoid(&x), &dy).unwrap()),
            (tanh, tanh_backward(&tanh(&x), &dy).unwrap()),
        ];
        for (f, analytic) in cases {
            for i in 0..x.len() {
                let mut p = x.clone();
                let mut m = x.clone();
                p.values_mut()[i] += eps;
                m.values_mut()[i] -= eps;
                let dot = |t: Tensor| t.values().iter().zip(dy.values()).map(|(a, b)| a * b).sum::<f64>();
                let num = (dot(f(&p)) - dot(f(&m))) / (2.0 * eps);
                assert!((analytic.values()[i] - num).abs() < 1e-8);
            }
        }
        let y = softmax(&x).unwrap();
        let analytic = softmax_backward(&y, &dy).unwrap();
        for i in 0..x.len() {
            let mut p = x.clone();
            let mut m = x.clone();
            p.values_mut()[i] += eps;
            m.values_mut()[i] -= eps;
            let dot = |t: Tensor| t.values().iter().zip(dy.values()).map(|(a, b)| a * b).sum::<f64>();
            let num = (dot(softmax(&p).unwrap()) - dot(softmax(&m).unwrap())) / (2.0 * eps);
            assert!((analytic.values()[i] - num).abs() < 1e-8);
        }
    }

    proptest::proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            logits in proptest::collection::vec(-30.0f64..30.0, 1..12),
            shift in -100.0f64..100.0,
        ) {
            let s = softmax(&vecf(&logits)).unwrap();
            let total: f64 = s.values().iter().sum();
            proptest::prop_assert!((total - 1.0).abs() <= 1e-6);
            proptest::prop_assert!(s.values().iter().all(|&v| v > 0.0));
            let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
            let t = softmax(&vecf(&shifted)).unwrap();
            for (a, b) in s.values().iter().zip(t.values()) {
                proptest::prop_assert!((a - b).abs() <= 1e-9);
            }
        }
    }
}
