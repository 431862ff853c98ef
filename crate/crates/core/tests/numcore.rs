use fiat::numcore::{softmax, softmax_cross_entropy, GradTape, Tensor};
use proptest::prelude::*;

fn row(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-30.0f64..30.0, n)
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(v in row(12)) {
        let t = Tensor::new(vec![3, 4], v).unwrap();
        let s = softmax(&t);
        for r in 0..3 {
            let sum: f64 = s.row(r).iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn cross_entropy_is_non_negative(v in row(6), target in 0usize..6) {
        let t = Tensor::new(vec![6], v).unwrap();
        prop_assert!(softmax_cross_entropy(&t, target).unwrap() >= 0.0);
    }

    #[test]
    fn backward_distributes_over_sums(a in row(6), b in row(6), w in row(6)) {
        let x = Tensor::new(vec![2, 3], a).unwrap();
        let y = Tensor::new(vec![3, 2], b).unwrap();
        let wt = Tensor::new(vec![2, 3], w).unwrap();
        let l1 = |tape: &mut GradTape, p| {
            let xv = tape.constant(x.clone());
            let m = tape.mul(xv, p).unwrap();
            tape.sum(m).unwrap()
        };
        let l2 = |tape: &mut GradTape, p| {
            let yv = tape.constant(y.clone());
            let m = tape.matmul(p, yv).unwrap();
            let g = tape.gelu(m).unwrap();
            tape.sum(g).unwrap()
        };
        let mut tape = GradTape::new();
        let p = tape.param(0, &wt, true);
        let (s1, s2) = (l1(&mut tape, p), l2(&mut tape, p));
        let total = tape.add(s1, s2).unwrap();
        let joint = tape.backward(total).unwrap();
        let mut t1 = GradTape::new();
        let p1 = t1.param(0, &wt, true);
        let r1 = l1(&mut t1, p1);
        let g1 = t1.backward(r1).unwrap();
        let mut t2 = GradTape::new();
        let p2 = t2.param(0, &wt, true);
        let r2 = l2(&mut t2, p2);
        let g2 = t2.backward(r2).unwrap();
        let sep = g1.get(0).unwrap().add_scaled(g2.get(0).unwrap(), 1.0).unwrap();
        prop_assert!(joint.get(0).unwrap().max_abs_diff(&sep) <= 1e-12);
    }
}

#[test]
fn cross_entropy_is_zero_only_for_a_certain_target() {
    let sure = Tensor::new(vec![3], vec![0.0, 800.0, 0.0]).unwrap();
    assert_eq!(softmax_cross_entropy(&sure, 1).unwrap(), 0.0);
    let unsure = Tensor::new(vec![3], vec![0.0, 5.0, 0.0]).unwrap();
    assert!(softmax_cross_entropy(&unsure, 1).unwrap() > 0.0);
}
