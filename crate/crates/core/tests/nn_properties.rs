use proptest::prelude::*;
use sodalab::nn::{grad_check, Graph, Tensor};
use sodalab::Result;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n)
}

/// Σ wᵢ·yᵢ with fixed pseudo-random weights, so every output entry matters.
fn probe(g: &mut Graph, y: Tensor) -> Result<Tensor> {
    let n = g.value(y).len();
    let w: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) % 11) as f64 / 5.0 - 1.0).collect();
    let shape = g.shape(y).to_vec();
    let w = g.constant(w, &shape)?;
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn softmax_rows_sum_to_one(x in values(24)) {
        let mut g = Graph::new();
        let t = g.constant(x, &[4, 6]).unwrap();
        let s = g.softmax(t).unwrap();
        for row in g.value(s).chunks(6) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn cross_entropy_is_non_negative(x in prop::collection::vec(-30.0f64..30.0, 15), t in prop::collection::vec(0usize..5, 3)) {
        let mut g = Graph::new();
        let logits = g.constant(x, &[3, 5]).unwrap();
        let l = g.softmax_cross_entropy(logits, &t).unwrap();
        prop_assert!(g.scalar(l) >= 0.0);
    }

    #[test]
    fn layer_norm_standardizes_rows(x in prop::collection::vec(-10.0f64..10.0, 30)) {
        // skip near-constant rows, where eps dominates the variance
        prop_assume!(x.chunks(10).all(|r| {
            let m = r.iter().sum::<f64>() / 10.0;
            r.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 10.0 > 0.1
        }));
        let mut g = Graph::new();
        let t = g.constant(x, &[3, 10]).unwrap();
        let gain = g.constant(vec![1.0; 10], &[10]).unwrap();
        let bias = g.constant(vec![0.0; 10], &[10]).unwrap();
        let y = g.layer_norm(t, gain, bias, 1e-12).unwrap();
        for row in g.value(y).chunks(10) {
            let m = row.iter().sum::<f64>() / 10.0;
            let v = row.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 10.0;
            prop_assert!(m.abs() < 1e-9);
            prop_assert!((v - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn matmul_gradient(a in values(12), b in values(12)) {
        let e = grad_check(|g, x| {
            let bt = g.constant(b.clone(), &[4, 3])?;
            let y = g.matmul(x, bt)?;
            probe(g, y)
        }, &a, &[3, 4], H).unwrap();
        prop_assert!(e < TOL, "{e}");
        let e = grad_check(|g, x| {
            let at = g.constant(a.clone(), &[3, 4])?;
            let y = g.matmul(at, x)?;
            probe(g, y)
        }, &b, &[4, 3], H).unwrap();
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn batch_matmul_gradient(a in values(24), b in values(24)) {
        for trans_b in [false, true] {
            let e = grad_check(|g, x| {
                let bt = g.constant(b.clone(), if trans_b { &[2, 4, 3] } else { &[2, 3, 4] })?;
                let y = g.batch_matmul(x, bt, trans_b)?;
                probe(g, y)
            }, &a, &[2, 4, 3], H).unwrap();
            prop_assert!(e < TOL, "{e}");
        }
    }

    #[test]
    fn elementwise_gradients(x in values(12)) {
        let e = grad_check(|g, x| { let y = g.exp(x); probe(g, y) }, &x, &[3, 4], H).unwrap();
        prop_assert!(e < TOL, "exp {e}");
        let e = grad_check(|g, x| { let y = g.gelu(x); probe(g, y) }, &x, &[3, 4], H).unwrap();
        prop_assert!(e < TOL, "gelu {e}");
        let e = grad_check(|g, x| { let y = g.scale(x, -1.7); probe(g, y) }, &x, &[3, 4], H).unwrap();
        prop_assert!(e < TOL, "scale {e}");
        let e = grad_check(|g, x| { let y = g.mul(x, x)?; probe(g, y) }, &x, &[3, 4], H).unwrap();
        prop_assert!(e < TOL, "mul {e}");
        let e = grad_check(|g, x| {
            let b = g.constant(vec![0.5, -1.0, 2.0, 0.0], &[4])?;
            let y = g.add_bias(x, b)?;
            let y = g.add(y, x)?;
            probe(g, y)
        }, &x, &[3, 4], H).unwrap();
        prop_assert!(e < TOL, "add {e}");
    }

    #[test]
    fn linear_gradient_wrt_weight_and_bias(x in values(6), w in values(8), b in values(4)) {
        let e = grad_check(|g, wt| {
            let xt = g.constant(x.clone(), &[3, 2])?;
            let bt = g.constant(b.clone(), &[4])?;
            let y = g.linear(xt, wt, bt)?;
            probe(g, y)
        }, &w, &[2, 4], H).unwrap();
        prop_assert!(e < TOL, "{e}");
        let e = grad_check(|g, bt| {
            let xt = g.constant(x.clone(), &[3, 2])?;
            let wt = g.constant(w.clone(), &[2, 4])?;
            let y = g.linear(xt, wt, bt)?;
            probe(g, y)
        }, &b, &[4], H).unwrap();
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn softmax_and_masked_softmax_gradients(x in values(12)) {
        let e = grad_check(|g, x| { let y = g.softmax(x)?; probe(g, y) }, &x, &[3, 4], H).unwrap();
        prop_assert!(e < TOL, "{e}");
        let e = grad_check(|g, x| { let y = g.masked_softmax(x, vec![4, 2, 1])?; probe(g, y) }, &x, &[3, 4], H).unwrap();
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn layer_norm_gradient(x in values(12), gain in values(4)) {
        let e = grad_check(|g, x| {
            let gt = g.constant(gain.clone(), &[4])?;
            let bt = g.constant(vec![0.1, 0.2, 0.3, 0.4], &[4])?;
            let y = g.layer_norm(x, gt, bt, 1e-5)?;
            probe(g, y)
        }, &x, &[3, 4], H).unwrap();
        prop_assert!(e < TOL, "{e}");
        let e = grad_check(|g, gt| {
            let xt = g.constant(x.clone(), &[3, 4])?;
            let bt = g.constant(vec![0.0; 4], &[4])?;
            let y = g.layer_norm(xt, gt, bt, 1e-5)?;
            probe(g, y)
        }, &gain, &[4], H).unwrap();
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn cross_entropy_gradient(x in values(28), t in prop::collection::vec(0usize..7, 4)) {
        let e = grad_check(|g, x| g.softmax_cross_entropy(x, &t), &x, &[4, 7], H).unwrap();
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn gather_embedding_and_segment_mean_gradients(x in values(15), ids in prop::collection::vec(0usize..5, 6)) {
        let e = grad_check(|g, x| { let y = g.embedding_lookup(x, &ids)?; probe(g, y) }, &x, &[5, 3], H).unwrap();
        prop_assert!(e < TOL, "{e}");
        let e = grad_check(|g, x| {
            let y = g.segment_mean(x, vec![vec![0, 1], vec![4], vec![2, 3, 4]])?;
            probe(g, y)
        }, &x, &[5, 3], H).unwrap();
        prop_assert!(e < TOL, "{e}");
        let e = grad_check(|g, x| {
            let y = g.gather(x, vec![14, 0, 3, 3], &[2, 2])?;
            let y = g.reshape(y, &[4])?;
            probe(g, y)
        }, &x, &[5, 3], H).unwrap();
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn dropout_gradient(x in values(8), keep in prop::collection::vec(any::<bool>(), 8)) {
        let mask: Vec<f64> = keep.iter().map(|&k| if k { 2.0 } else { 0.0 }).collect();
        let e = grad_check(|g, x| { let y = g.dropout(x, mask.clone())?; probe(g, y) }, &x, &[2, 4], H).unwrap();
        prop_assert!(e < TOL, "{e}");
    }

    /// Using x k times gives the same gradient as k independent copies of x.
    #[test]
    fn reused_node_matches_duplicated_graph(x in values(4), k in 1usize..5) {
        let mut g = Graph::new();
        let xt = g.variable(x.clone(), &[4]).unwrap();
        let mut acc = g.exp(xt);
        for _ in 1..k {
            let e = g.exp(xt);
            acc = g.add(acc, e).unwrap();
        }
        let loss = g.sum(acc);
        g.backward(loss).unwrap();
        let shared = g.grad(xt).unwrap().to_vec();

        let mut g = Graph::new();
        let copies: Vec<Tensor> = (0..k).map(|_| g.variable(x.clone(), &[4]).unwrap()).collect();
        let mut acc = g.exp(copies[0]);
        for &c in &copies[1..] {
            let e = g.exp(c);
            acc = g.add(acc, e).unwrap();
        }
        let loss = g.sum(acc);
        g.backward(loss).unwrap();
        for i in 0..4 {
            let total: f64 = copies.iter().map(|&c| g.grad(c).unwrap()[i]).sum();
            prop_assert!((shared[i] - total).abs() < 1e-12);
        }
    }
}
