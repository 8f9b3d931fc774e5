use approx::assert_abs_diff_eq;

use super::*;
use crate::corpus::{Domain, Review};
use crate::nn::grad_check;

fn tiny(d: usize, layers: usize, vocab: usize) -> EncoderModel {
    EncoderModel::new(EncoderConfig {
        vocab_size: vocab,
        max_len: 16,
        d_model: d,
        n_layers: layers,
        n_heads: 2,
        d_ff: 2 * d,
        dropout_prob: 0.1,
        seed: 11,
    })
    .unwrap()
}

fn review(tokens: &[usize]) -> Review {
    Review {
        id: 0,
        tokens: tokens.to_vec(),
        language: 0,
        domain: Domain::In,
        group: 0,
        sentiment: 0,
        topic: 0,
    }
}

fn batch(rows: &[&[usize]]) -> Batch {
    let reviews: Vec<Review> = rows.iter().map(|r| review(r)).collect();
    Batch::from_reviews(&reviews, 16).unwrap()
}

#[test]
fn hidden_shape_contract() {
    let model = EncoderModel::new(EncoderConfig {
        vocab_size: 30,
        ..Default::default()
    })
    .unwrap();
    let b = batch(&[&[4, 5, 6, 7, 8, 9, 10, 11, 12], &[4, 5, 6]]);
    let mut g = Graph::new();
    let mut binder = Binder::new();
    let out = model.encode(&mut g, &mut binder, &b, Mode::Eval).unwrap();
    assert_eq!(g.shape(out.hidden), &[2, 10, 64]);
}

#[test]
fn padding_columns_get_zero_attention() {
    let model = tiny(8, 2, 20);
    let b = batch(&[&[4, 5, 6, 7, 8], &[9, 10]]);
    let mut g = Graph::new();
    let mut binder = Binder::new();
    let out = model.encode(&mut g, &mut binder, &b, Mode::Eval).unwrap();
    let seq = b.seq_len;
    let heads = model.config.n_heads;
    for &probs in &out.attention {
        let v = g.value(probs);
        for h in 0..heads {
            // second sequence has length 3 (CLS + 2 tokens)
            for q in 0..seq {
                let row = &v[((heads + h) * seq + q) * seq..((heads + h) * seq + q + 1) * seq];
                let pad_mass: f64 = row[3..].iter().sum();
                assert!(pad_mass.abs() < 1e-12);
                assert_abs_diff_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            }
        }
    }
}

#[test]
fn padding_does_not_change_real_positions() {
    let model = tiny(8, 2, 20);
    let alone = batch(&[&[9, 10]]);
    let padded = batch(&[&[9, 10], &[4, 5, 6, 7, 8]]);
    let run = |b: &Batch| {
        let mut g = Graph::new();
        let mut binder = Binder::new();
        let out = model.encode(&mut g, &mut binder, b, Mode::Eval).unwrap();
        // sequence 0 occupies the first rows regardless of padding width
        g.value(out.hidden)[..3 * 8].to_vec()
    };
    let a = run(&alone);
    let p = run(&padded);
    for (x, y) in a.iter().zip(&p) {
        assert_abs_diff_eq!(x, y, epsilon = 1e-12);
    }
}

#[test]
fn eval_mode_is_deterministic_and_train_mode_drops_out() {
    let model = tiny(8, 1, 20);
    let b = batch(&[&[4, 5, 6, 7]]);
    let run = |mode: Mode<'_>| {
        let mut g = Graph::new();
        let mut binder = Binder::new();
        let out = model.encode(&mut g, &mut binder, &b, mode).unwrap();
        g.value(out.hidden).to_vec()
    };
    assert_eq!(run(Mode::Eval), run(Mode::Eval));
    let mut rng = seed::rng(1, "dropout");
    assert_ne!(run(Mode::Eval), run(Mode::Train(&mut rng)));
}

#[test]
fn rejects_out_of_range_ids_and_missing_cls() {
    let model = tiny(8, 1, 20);
    let mut b = batch(&[&[4, 5]]);
    b.input_ids[1] = 20;
    let mut g = Graph::new();
    let mut binder = Binder::new();
    assert!(matches!(
        model.encode(&mut g, &mut binder, &b, Mode::Eval),
        Err(Error::Index { .. })
    ));
    let mut b = batch(&[&[4, 5]]);
    b.input_ids[0] = 4;
    assert!(matches!(
        model.encode(&mut g, &mut binder, &b, Mode::Eval),
        Err(Error::Contract(_))
    ));
}

#[test]
fn cls_representation_slices_position_zero() {
    let mut g = Graph::new();
    let values: Vec<f64> = (0..2 * 3 * 4).map(|v| v as f64).collect();
    let hidden = g.variable(values.clone(), &[2, 3, 4]).unwrap();
    let cls = cls_representation(&mut g, hidden).unwrap();
    assert_eq!(g.shape(cls), &[2, 4]);
    assert_eq!(&g.value(cls)[..4], &values[..4]);
    assert_eq!(&g.value(cls)[4..], &values[12..16]);

    let one = g.variable(vec![1.0; 5 * 4], &[1, 5, 4]).unwrap();
    let c = cls_representation(&mut g, one).unwrap();
    assert_eq!(g.shape(c), &[1, 4]);
}

#[test]
fn cls_gradient_only_reaches_position_zero() {
    let weights: Vec<f64> = (0..4).map(|i| 0.3 * i as f64 - 0.5).collect();
    let f = |g: &mut Graph, h: Tensor| {
        let cls = cls_representation(g, h)?;
        let w = g.constant([weights.clone(), weights.clone()].concat(), &[2, 4])?;
        let prod = g.mul(cls, w)?;
        let sq = g.mul(prod, prod)?;
        Ok(g.sum(sq))
    };
    let x: Vec<f64> = (0..24).map(|i| (i as f64 * 0.37).sin()).collect();
    let mut g = Graph::new();
    let h = g.variable(x.clone(), &[2, 3, 4]).unwrap();
    let l = f(&mut g, h).unwrap();
    g.backward(l).unwrap();
    let grad = g.grad(h).unwrap();
    for b in 0..2 {
        for p in 1..3 {
            for j in 0..4 {
                let i = (b * 3 + p) * 4 + j;
                // central difference at a non-CLS coordinate
                let mut up = x.clone();
                up[i] += 1e-5;
                let mut down = x.clone();
                down[i] -= 1e-5;
                let eval = |v: Vec<f64>| {
                    let mut g = Graph::new();
                    let h = g.variable(v, &[2, 3, 4]).unwrap();
                    let l = f(&mut g, h).unwrap();
                    g.scalar(l)
                };
                assert_eq!((eval(up) - eval(down)) / 2e-5, 0.0);
                assert_eq!(grad[i], 0.0);
            }
        }
    }
    assert!(grad_check(f, &x, &[2, 3, 4], 1e-5).unwrap() < 1e-6);
}

#[test]
fn ctx_mean_examples() {
    let mut g = Graph::new();
    let values: Vec<f64> = (0..3 * 2).map(|v| v as f64 + 1.0).collect();
    let hidden = g.variable(values, &[1, 3, 2]).unwrap();
    let one = ctx_masked_mean(&mut g, hidden, &[vec![2]]).unwrap();
    assert_eq!(g.value(one), &[5.0, 6.0]);
    let two = ctx_masked_mean(&mut g, hidden, &[vec![1, 2]]).unwrap();
    assert_eq!(g.value(two), &[4.0, 5.0]);
    assert!(matches!(
        ctx_masked_mean(&mut g, hidden, &[vec![]]),
        Err(Error::Contract(_))
    ));
}

#[test]
fn ctx_mean_gradient_splits_evenly() {
    let positions = vec![vec![1, 3, 4], vec![2]];
    let f = |g: &mut Graph, h: Tensor| {
        let m = ctx_masked_mean(g, h, &positions)?;
        Ok(g.sum(m))
    };
    let x: Vec<f64> = (0..2 * 5 * 3).map(|i| (i as f64).cos()).collect();
    let mut g = Graph::new();
    let h = g.variable(x.clone(), &[2, 5, 3]).unwrap();
    let l = f(&mut g, h).unwrap();
    g.backward(l).unwrap();
    let grad = g.grad(h).unwrap();
    for p in [1, 3, 4] {
        assert_abs_diff_eq!(grad[p * 3], 1.0 / 3.0, epsilon = 1e-15);
    }
    assert_eq!(grad[(5 + 2) * 3], 1.0);
    assert_eq!(grad[0], 0.0);
    assert!(grad_check(f, &x, &[2, 5, 3], 1e-5).unwrap() < 1e-8);
}

#[test]
fn heads_are_affine_and_named() {
    let mut model = tiny(8, 1, 20);
    model.ensure_head(SOCIO_HEAD, 2).unwrap();
    model.ensure_head("SA", 3).unwrap();
    model.params.get_mut("head.SA.b").unwrap().values = vec![0.5, -1.0, 2.0];
    let mut g = Graph::new();
    let mut b = Binder::new();
    let zero = g.constant(vec![0.0; 2 * 8], &[2, 8]).unwrap();
    let logits = model.head_logits(&mut g, &mut b, zero, "SA").unwrap();
    assert_eq!(g.shape(logits), &[2, 3]);
    assert_eq!(g.value(logits), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
    let socio = model.head_logits(&mut g, &mut b, zero, SOCIO_HEAD).unwrap();
    assert_eq!(g.shape(socio), &[2, 2]);
    assert!(matches!(
        model.head_logits(&mut g, &mut b, zero, "TD"),
        Err(Error::Config(_))
    ));

    model.drop_all_heads();
    assert!(model.heads().is_empty());
    assert!(!model.params.names().any(|n| n.starts_with("head.")));
    assert_eq!(model.params.num_values(), model.config.param_count());
}

#[test]
fn mlm_logits_rows_and_commutation() {
    let model = tiny(8, 1, 20);
    let b = batch(&[&[4, 5, 6, 7], &[8, 9, 10]]);
    let positions = vec![vec![1, 3], vec![2]];
    let mut g = Graph::new();
    let mut binder = Binder::new();
    let out = model.encode(&mut g, &mut binder, &b, Mode::Eval).unwrap();
    let logits = model.mlm_logits(&mut g, &mut binder, out.hidden, &positions).unwrap();
    assert_eq!(g.shape(logits), &[3, 20]);

    // project every position, then gather
    let seq = b.seq_len;
    let flat = g.reshape(out.hidden, &[2 * seq, 8]).unwrap();
    let all = model.linear(&mut g, &mut binder, flat, "mlm").unwrap();
    let all_v = g.value(all).to_vec();
    let got = g.value(logits).to_vec();
    for (r, row) in [1, 3, seq + 2].iter().enumerate() {
        for j in 0..20 {
            assert_abs_diff_eq!(got[r * 20 + j], all_v[row * 20 + j], epsilon = 1e-12);
        }
    }

    let single = model.mlm_logits(&mut g, &mut binder, out.hidden, &[vec![1], vec![]]).unwrap();
    assert_eq!(g.shape(single), &[1, 20]);
}

#[test]
fn permuting_tokens_with_positions_permutes_hidden() {
    let model = tiny(8, 2, 20);
    let ids = vec![CLS_ID, 4, 9, 12, 7];
    let pos = vec![0, 1, 2, 3, 4];
    let perm = [0usize, 3, 1, 4, 2];
    let pids: Vec<usize> = perm.iter().map(|&i| ids[i]).collect();
    let ppos: Vec<usize> = perm.iter().map(|&i| pos[i]).collect();
    let run = |ids: &[usize], pos: &[usize]| {
        let mut g = Graph::new();
        let mut b = Binder::new();
        let out = model
            .encode_with_positions(&mut g, &mut b, ids, &[5], 5, pos, Mode::Eval)
            .unwrap();
        g.value(out.hidden).to_vec()
    };
    let base = run(&ids, &pos);
    let permuted = run(&pids, &ppos);
    for (new, &old) in perm.iter().enumerate() {
        for j in 0..8 {
            assert_abs_diff_eq!(permuted[new * 8 + j], base[old * 8 + j], epsilon = 1e-12);
        }
    }
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let mut model = tiny(8, 2, 20);
    model.ensure_head("TD", 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&model, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, model);
    assert_eq!(loaded.to_bytes().unwrap(), model.to_bytes().unwrap());

    let b = batch(&[&[4, 5, 6]]);
    let enc = |m: &EncoderModel| {
        let mut g = Graph::new();
        let mut binder = Binder::new();
        let out = m.encode(&mut g, &mut binder, &b, Mode::Eval).unwrap();
        g.value(out.hidden).iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(enc(&model), enc(&loaded));

    let mut bytes = model.to_bytes().unwrap();
    bytes.pop();
    assert!(EncoderModel::from_bytes(&bytes).is_err());
    assert!(matches!(
        load_checkpoint(&dir.path().join("absent.ckpt")),
        Err(Error::MissingArtifact { .. })
    ));
}

#[test]
fn initialization_is_seeded_and_finite() {
    let a = tiny(8, 2, 20);
    let b = tiny(8, 2, 20);
    assert_eq!(a, b);
    assert!(a.params.all_finite());
    assert_eq!(a.params.num_values(), a.config.param_count());
    assert_eq!(a.params.get("mlm.w").unwrap().shape, vec![8, 20]);
}

#[test]
fn config_validation() {
    let bad = EncoderConfig {
        vocab_size: 10,
        d_model: 10,
        n_heads: 4,
        ..Default::default()
    };
    assert!(matches!(EncoderModel::new(bad), Err(Error::Config(_))));
    let short = EncoderConfig {
        vocab_size: 10,
        max_len: 1,
        ..Default::default()
    };
    assert!(matches!(EncoderModel::new(short), Err(Error::Config(_))));
}
