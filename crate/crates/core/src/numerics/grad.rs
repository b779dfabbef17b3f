use crate::error::{IrpeError, Result};
use crate::numerics::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Central-difference gradient of a scalar function of a tensor.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> f64,
{
    let mut probe = x.clone();
    let grad = finite_diff_with(x.len(), h, |i, delta| {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + delta;
        let v = f(&probe);
        probe.data_mut()[i] = orig;
        Ok(v)
    })?;
    Tensor::from_vec(x.shape(), grad)
}

/// Central differences over `len` coordinates.
///
/// `eval(i, delta)` must return the objective with coordinate `i` shifted by
/// `delta` and leave the state unchanged afterwards.
pub fn finite_diff_with<F>(len: usize, h: f64, mut eval: F) -> Result<Vec<f64>>
where
    F: FnMut(usize, f64) -> Result<f64>,
{
    if h.is_nan() || h <= 0.0 {
        return Err(IrpeError::Config(format!("finite-difference step must be > 0, got {h}")));
    }
    (0..len)
        .map(|i| {
            let plus = eval(i, h)?;
            let minus = eval(i, -h)?;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(IrpeError::Numeric {
                    context: "finite_diff".into(),
                    detail: format!("non-finite objective at coordinate {i}"),
                });
            }
            Ok((plus - minus) / (2.0 * h))
        })
        .collect()
}

/// Norm-wise relative error `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`; zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let g = finite_diff_grad(|t| t.data().iter().map(|v| v * v).sum(), &x, DEFAULT_STEP).unwrap();
        assert!((g.data()[0] - 2.0).abs() < 1e-6);
        assert!((g.data()[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn product_rule() {
        let x = Tensor::from_vec(&[2], vec![3.0, 5.0]).unwrap();
        let g = finite_diff_grad(|t| t.data()[0] * t.data()[1], &x, DEFAULT_STEP).unwrap();
        assert!((g.data()[0] - 5.0).abs() < 1e-6);
        assert!((g.data()[1] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn error_is_second_order_in_step() {
        // f = x³ has f''' = 6, so the central-difference error is exactly h².
        let x = Tensor::from_vec(&[1], vec![1.5]).unwrap();
        let exact = 3.0 * 1.5 * 1.5;
        let err = |h: f64| {
            let g = finite_diff_grad(|t| t.data()[0].powi(3), &x, h).unwrap();
            (g.data()[0] - exact).abs()
        };
        let ratio = err(1e-2) / err(5e-3);
        assert!((ratio - 4.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let x = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        let r = finite_diff_grad(|_| f64::NAN, &x, 1e-5);
        assert!(matches!(r, Err(IrpeError::Numeric { .. })));
    }

    #[test]
    fn rejects_non_positive_step() {
        let x = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        assert!(finite_diff_grad(|t| t.data()[0], &x, 0.0).is_err());
    }

    #[test]
    fn relative_error_basics() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!((relative_error(&[1.0], &[1.1]) - 0.1 / 1.1).abs() < 1e-15);
    }
}
