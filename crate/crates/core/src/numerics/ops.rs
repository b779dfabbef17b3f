use crate::error::{IrpeError, Result};
use crate::numerics::{exec, record_macs, Tensor};

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out += s * x`
#[inline]
pub fn axpy(out: &mut [f64], s: f64, x: &[f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += s * v;
    }
}

/// `c = a · b` for `a: m×p`, `b: p×q`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, p) = a.dims2()?;
    let (p2, q) = b.dims2()?;
    if p != p2 {
        return Err(IrpeError::shape(
            "matmul",
            format!("{m}x{p} · {p2}x{q}: inner dims differ"),
        ));
    }
    let mut out = Tensor::zeros(&[m, q]);
    matmul_slices(a.data(), b.data(), m, p, q, out.data_mut());
    Ok(out)
}

/// `c = a · bᵀ` for `a: m×p`, `b: q×p`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, p) = a.dims2()?;
    let (q, p2) = b.dims2()?;
    if p != p2 {
        return Err(IrpeError::shape(
            "matmul_nt",
            format!("{m}x{p} · ({q}x{p2})ᵀ: inner dims differ"),
        ));
    }
    let mut out = Tensor::zeros(&[m, q]);
    matmul_nt_slices(a.data(), b.data(), m, p, q, out.data_mut());
    Ok(out)
}

/// `c = aᵀ · b` for `a: p×m`, `b: p×q`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (p, m) = a.dims2()?;
    let (p2, q) = b.dims2()?;
    if p != p2 {
        return Err(IrpeError::shape(
            "matmul_tn",
            format!("({p}x{m})ᵀ · {p2}x{q}: inner dims differ"),
        ));
    }
    let mut out = Tensor::zeros(&[m, q]);
    matmul_tn_slices(a.data(), b.data(), m, p, q, out.data_mut());
    Ok(out)
}

pub(crate) fn matmul_slices(a: &[f64], b: &[f64], m: usize, p: usize, q: usize, out: &mut [f64]) {
    record_macs((m * p * q) as u64);
    exec::for_each_row(out, q, |i, row| {
        row.fill(0.0);
        let a_row = &a[i * p..(i + 1) * p];
        for (kk, &av) in a_row.iter().enumerate() {
            axpy(row, av, &b[kk * q..(kk + 1) * q]);
        }
    });
}

pub(crate) fn matmul_nt_slices(
    a: &[f64],
    b: &[f64],
    m: usize,
    p: usize,
    q: usize,
    out: &mut [f64],
) {
    record_macs((m * p * q) as u64);
    exec::for_each_row(out, q, |i, row| {
        let a_row = &a[i * p..(i + 1) * p];
        for (j, o) in row.iter_mut().enumerate() {
            *o = dot(a_row, &b[j * p..(j + 1) * p]);
        }
    });
}

pub(crate) fn matmul_tn_slices(
    a: &[f64],
    b: &[f64],
    m: usize,
    p: usize,
    q: usize,
    out: &mut [f64],
) {
    record_macs((m * p * q) as u64);
    exec::for_each_row(out, q, |i, row| {
        row.fill(0.0);
        for kk in 0..p {
            axpy(row, a[kk * m + i], &b[kk * q..(kk + 1) * q]);
        }
    });
}

/// Softmax over the last axis, with max subtraction.
pub fn softmax_rows(e: &Tensor) -> Tensor {
    let mut out = e.clone();
    let cols = *e.shape().last().unwrap_or(&0);
    for row in out.data_mut().chunks_mut(cols.max(1)) {
        softmax_in_place(row);
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{measure_macs, Rng};
    use proptest::prelude::*;

    fn triple_loop(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, p) = a.dims2().unwrap();
        let (_, q) = b.dims2().unwrap();
        let mut c = vec![0.0; m * q];
        for i in 0..m {
            for j in 0..q {
                let mut s = 0.0;
                for k in 0..p {
                    s += a.at(i, k) * b.at(k, j);
                }
                c[i * q + j] = s;
            }
        }
        Tensor::from_vec(&[m, q], c).unwrap()
    }

    #[test]
    fn identity_is_neutral() {
        let mut rng = Rng::seed(3);
        let m = Tensor::randn(&[3, 3], 1.0, &mut rng);
        assert_eq!(matmul(&Tensor::eye(3), &m).unwrap(), m);
    }

    #[test]
    fn hand_product() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn matches_triple_loop() {
        let mut rng = Rng::seed(11);
        let a = Tensor::randn(&[5, 7], 1.0, &mut rng);
        let b = Tensor::randn(&[7, 3], 1.0, &mut rng);
        let d = matmul(&a, &b).unwrap().max_abs_diff(&triple_loop(&a, &b)).unwrap();
        assert!(d < 1e-12, "diff {d}");
    }

    #[test]
    fn transposed_variants_agree() {
        let mut rng = Rng::seed(5);
        let a = Tensor::randn(&[4, 6], 1.0, &mut rng);
        let b = Tensor::randn(&[5, 6], 1.0, &mut rng);
        let nt = matmul_nt(&a, &b).unwrap();
        let ref_nt = matmul(&a, &b.transpose2().unwrap()).unwrap();
        assert!(nt.max_abs_diff(&ref_nt).unwrap() < 1e-12);

        let c = Tensor::randn(&[4, 3], 1.0, &mut rng);
        let tn = matmul_tn(&a, &c).unwrap();
        let ref_tn = matmul(&a.transpose2().unwrap(), &c).unwrap();
        assert!(tn.max_abs_diff(&ref_tn).unwrap() < 1e-12);
    }

    #[test]
    fn shape_mismatch_errors() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        assert!(matches!(matmul(&a, &b), Err(IrpeError::Shape { .. })));
        assert!(matmul(&Tensor::zeros(&[2, 3, 1]), &b).is_err());
    }

    #[test]
    fn matmul_records_macs() {
        let a = Tensor::zeros(&[4, 5]);
        let b = Tensor::zeros(&[5, 6]);
        let (_, macs) = measure_macs(|| matmul(&a, &b).unwrap());
        assert_eq!(macs, 4 * 5 * 6);
    }

    #[test]
    fn large_product_matches_oracle() {
        // Big enough to take the parallel path when the feature is on.
        let mut rng = Rng::seed(8);
        let a = Tensor::randn(&[70, 40], 1.0, &mut rng);
        let b = Tensor::randn(&[40, 90], 1.0, &mut rng);
        let d = matmul(&a, &b).unwrap().max_abs_diff(&triple_loop(&a, &b)).unwrap();
        assert!(d < 1e-12);
    }

    #[test]
    fn softmax_uniform_row() {
        let e = Tensor::from_rows(&[vec![0.0, 0.0, 0.0]]).unwrap();
        for &v in softmax_rows(&e).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_large_values_do_not_overflow() {
        let e = Tensor::from_rows(&[vec![1000.0, 1000.0]]).unwrap();
        assert_eq!(softmax_rows(&e).data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_closed_form() {
        let e = Tensor::from_rows(&[vec![0.0, 3f64.ln()]]).unwrap();
        let s = softmax_rows(&e);
        assert!((s.data()[0] - 0.25).abs() < 1e-15);
        assert!((s.data()[1] - 0.75).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn softmax_rows_normalised(row in prop::collection::vec(-1e3f64..1e3, 1..40), shift in -50.0f64..50.0) {
            let n = row.len();
            let e = Tensor::from_vec(&[1, n], row.clone()).unwrap();
            let s = softmax_rows(&e);
            let total: f64 = s.data().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(s.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            let shifted = Tensor::from_vec(&[1, n], row.iter().map(|v| v + shift).collect()).unwrap();
            prop_assert!(softmax_rows(&shifted).max_abs_diff(&s).unwrap() < 1e-12);
        }

        #[test]
        fn matmul_is_associative(seed in any::<u64>(), m in 1usize..6, p in 1usize..6, q in 1usize..6, r in 1usize..6) {
            let mut rng = Rng::seed(seed);
            let a = Tensor::randn(&[m, p], 1.0, &mut rng);
            let b = Tensor::randn(&[p, q], 1.0, &mut rng);
            let c = Tensor::randn(&[q, r], 1.0, &mut rng);
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            prop_assert!(left.max_abs_diff(&right).unwrap() < 1e-10);
        }
    }
}
