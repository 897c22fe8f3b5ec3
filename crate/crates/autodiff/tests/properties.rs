use evssm_autodiff::optim::reduce_gradients;
use evssm_autodiff::{Tape, Tensor};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor<f64>> {
    prop::collection::vec(-3.0f64..3.0, rows * cols)
        .prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(x in (1usize..5, 1usize..7).prop_flat_map(|(r, c)| matrix(r, c))) {
        let tape = Tape::new();
        let s = tape.constant(x.clone()).softmax().value();
        let cols = x.shape()[1];
        for r in 0..x.shape()[0] {
            let row = &s.data()[r * cols..(r + 1) * cols];
            prop_assert!(row.iter().all(|&v| v > 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn product_transpose_identity((a, b) in (1usize..5, 1usize..5, 1usize..5).prop_flat_map(|(m, k, n)| (matrix(m, k), matrix(k, n)))) {
        let tape = Tape::new();
        let (va, vb) = (tape.constant(a), tape.constant(b));
        let lhs = va.matmul(&vb).unwrap().transpose().unwrap().value();
        let rhs = vb.transpose().unwrap().matmul(&va.transpose().unwrap()).unwrap().value();
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn sum_gradient_is_ones(x in (1usize..4, 1usize..6).prop_flat_map(|(r, c)| matrix(r, c))) {
        let tape = Tape::new();
        let v = tape.param(x);
        let g = tape.backward(v.sum()).unwrap().wrt(v);
        prop_assert!(g.data().iter().all(|&d| d == 1.0));
    }

    #[test]
    fn reducing_copies_is_identity(x in matrix(2, 3), n in 1usize..6) {
        let per_sample = vec![vec![x.clone()]; n];
        let mean = reduce_gradients(&per_sample).unwrap();
        prop_assert!(mean[0].max_abs_diff(&x) <= 1e-15);
    }
}
