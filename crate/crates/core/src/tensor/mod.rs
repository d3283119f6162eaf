//! Dense matrices, a reverse-mode autodiff tape and the Adam optimizer.

mod adam;
mod matrix;
mod tape;

pub use adam::Adam;
pub use matrix::Matrix;
pub use tape::{log_sum_exp, sigmoid, softmax_in_place, Gradients, Tape, Var};

/// Glorot-uniform initialisation for a `fan_in x fan_out` weight.
pub fn glorot(rows: usize, cols: usize, rng: &mut crate::rng::Rng) -> Matrix {
    use rand::Rng as _;
    let a = (6.0 / (rows + cols).max(1) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-a..a)).collect();
    Matrix::from_vec(rows, cols, data).expect("glorot shape")
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::rng::{self, Stream};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    /// Central finite differences of a scalar function of one matrix.
    fn numeric_grad(x: &Matrix, f: &dyn Fn(&Matrix) -> f64) -> Matrix {
        let h = 1e-6;
        let mut g = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.data().len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            g.data_mut()[i] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn check(x: &Matrix, build: &dyn Fn(&mut Tape, Var) -> Var) {
        let f = |m: &Matrix| {
            let mut t = Tape::new();
            let v = t.constant(m.clone());
            let out = build(&mut t, v);
            t.value(out).item()
        };
        let mut t = Tape::new();
        let v = t.param(x.clone());
        let out = build(&mut t, v);
        let grads = t.backward(out).unwrap();
        let analytic = grads.get(v).unwrap().clone();
        let numeric = numeric_grad(x, &f);
        for (a, n) in analytic.data().iter().zip(numeric.data()) {
            assert!(close(*a, *n, 1e-6), "analytic {a} vs numeric {n}");
        }
    }

    fn sample(rows: usize, cols: usize, idx: u64) -> Matrix {
        let mut r = rng::stream(11, Stream::Init, idx);
        glorot(rows, cols, &mut r).map(|x| x * 2.0)
    }

    #[test]
    fn softmax_of_equal_row_is_uniform() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::filled(1, 4, 3.0));
        let y = t.softmax_rows(x);
        for &p in t.value(y).data() {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_large_margin_is_near_zero() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::from_vec(1, 2, vec![100.0, 0.0]).unwrap());
        let l = t.cross_entropy(x, Arc::new(vec![0])).unwrap();
        assert!(t.value(l).item() < 1e-12);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::new();
        let x = t.param(Matrix::from_vec(2, 2, vec![1., 2., 3., 4.]).unwrap());
        let s = t.sum(x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn sum_of_squares_gradient_is_twice_input() {
        let mut t = Tape::new();
        let x = t.param(Matrix::from_vec(2, 2, vec![1., 2., 3., 4.]).unwrap());
        let sq = t.mul(x, x).unwrap();
        let s = t.sum(sq);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2., 4., 6., 8.]);
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let b = sample(4, 2, 1);
        check(&sample(3, 4, 0), &|t, x| {
            let bv = t.constant(b.clone());
            let y = t.matmul(x, bv).unwrap();
            let y = t.tanh(y);
            t.sum(y)
        });
        let a = sample(3, 4, 2);
        check(&sample(4, 2, 3), &|t, x| {
            let av = t.constant(a.clone());
            let y = t.matmul(av, x).unwrap();
            let y = t.mul(y, y).unwrap();
            t.sum(y)
        });
    }

    #[test]
    fn elementwise_gradients_match_finite_differences() {
        let x = sample(3, 3, 4);
        check(&x, &|t, v| {
            let y = t.elu(v);
            t.sum(y)
        });
        check(&x, &|t, v| {
            let y = t.leaky_relu(v, 0.2);
            let y = t.mul(y, y).unwrap();
            t.sum(y)
        });
        check(&x, &|t, v| {
            let y = t.sigmoid(v);
            let y = t.add_const(y, 0.5);
            let y = t.log(y);
            t.mean(y)
        });
        check(&x, &|t, v| {
            let y = t.sigmoid(v);
            let y = t.powf(y, -0.5);
            t.sum(y)
        });
    }

    #[test]
    fn softmax_and_cross_entropy_gradients_match() {
        let x = sample(3, 4, 5);
        let w = sample(3, 4, 6);
        check(&x, &|t, v| {
            let y = t.softmax_rows(v);
            let wv = t.constant(w.clone());
            let y = t.mul(y, wv).unwrap();
            t.sum(y)
        });
        check(&x, &|t, v| t.cross_entropy(v, Arc::new(vec![0, 3, 1])).unwrap());
        let mask = vec![
            true, false, true, true, false, false, false, false, true, true, true, false,
        ];
        check(&x, &|t, v| {
            let y = t.masked_softmax(v, &mask).unwrap();
            let wv = t.constant(w.clone());
            let y = t.mul(y, wv).unwrap();
            t.sum(y)
        });
    }

    #[test]
    fn graph_ops_gradients_match() {
        let rows = Arc::new(vec![0, 0, 1, 2, 2]);
        let cols = Arc::new(vec![1, 2, 0, 0, 3]);
        let x = sample(4, 4, 7);
        let coef = sample(5, 2, 8);
        let w = sample(3, 4, 9);
        // gradient through x
        check(&x, &|t, v| {
            let c = t.constant(coef.clone());
            let y = t.spmm(rows.clone(), cols.clone(), c, v, 2, 3).unwrap();
            let wv = t.constant(w.clone());
            let y = t.mul(y, wv).unwrap();
            t.sum(y)
        });
        // gradient through the coefficients, routed through an edge softmax
        check(&coef, &|t, c| {
            let a = t.edge_softmax(c, rows.clone(), 3).unwrap();
            let xv = t.constant(x.clone());
            let y = t.spmm(rows.clone(), cols.clone(), a, xv, 2, 3).unwrap();
            let wv = t.constant(w.clone());
            let y = t.mul(y, wv).unwrap();
            t.sum(y)
        });
    }

    #[test]
    fn shape_ops_gradients_match() {
        let x = sample(3, 2, 10);
        let col = sample(3, 1, 11);
        let row = sample(1, 2, 12);
        check(&x, &|t, v| {
            let c = t.constant(col.clone());
            let r = t.constant(row.clone());
            let a = t.mul_col(v, c).unwrap();
            let a = t.add_row(a, r).unwrap();
            let b = t.concat_cols(&[a, v]).unwrap();
            let b = t.concat_rows(&[b, b]).unwrap();
            let b = t.tanh(b);
            let g = t.gather_rows(b, Arc::new(vec![5, 0, 0])).unwrap();
            let m = t.mean_rows(g).unwrap();
            let m = t.mul(m, m).unwrap();
            t.sum(m)
        });
        check(&col, &|t, c| {
            let xv = t.constant(x.clone());
            let a = t.mul_col(xv, c).unwrap();
            let k = t.column(a, 1).unwrap();
            let s = t.sum(k);
            let s2 = t.mul_scalar(a, s).unwrap();
            let s2 = t.tanh(s2);
            t.sum(s2)
        });
    }

    #[test]
    fn dropout_zero_is_identity_and_scaling_preserves_mean() {
        let mut r = rng::stream(1, Stream::Dropout, 0);
        let mut t = Tape::new();
        let x = t.param(Matrix::filled(100, 100, 1.0));
        assert_eq!(t.dropout(x, 0.0, &mut r).unwrap(), x);
        let y = t.dropout(x, 0.6, &mut r).unwrap();
        let mean = t.value(y).data().iter().sum::<f64>() / 10_000.0;
        assert!((mean - 1.0).abs() < 0.05);
    }

    #[test]
    fn backward_rejects_non_scalar_and_constant_loss() {
        let mut t = Tape::new();
        let x = t.param(Matrix::zeros(2, 2));
        assert!(matches!(
            Tape::backward(std::mem::take(&mut t), x),
            Err(crate::Error::Usage(_))
        ));
        let mut t = Tape::new();
        let c = t.constant(Matrix::scalar(1.0));
        assert!(t.backward(c).is_err());
    }

    #[test]
    fn matmul_shape_error() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::zeros(2, 3));
        let b = t.constant(Matrix::zeros(2, 3));
        assert!(matches!(t.matmul(a, b), Err(crate::Error::Dimension { .. })));
    }
}
