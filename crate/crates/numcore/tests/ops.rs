use std::sync::Arc;

use proptest::prelude::*;
use umaea_numcore::{finite_diff_check, NeighborLists, NumError, ParamStore, Tape, Tensor};

fn t(rows: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

/// Deterministic pseudo-random fill, good enough for gradient probes.
fn probe(rows: usize, cols: usize, salt: u64) -> Tensor {
    let mut state = salt
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    let data = (0..rows * cols)
        .map(|_| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[vec![0.0, 0.0]])).unwrap();
    let y = tape.row_softmax(x).unwrap();
    assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
}

#[test]
fn layer_norm_of_constant_row_is_zero() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[vec![2.5; 6]])).unwrap();
    let g = tape.constant(Tensor::filled(1, 6, 1.0)).unwrap();
    let b = tape.constant(Tensor::zeros(1, 6)).unwrap();
    let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn l2_normalize_three_four() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[vec![3.0, 4.0]])).unwrap();
    let y = tape.l2_normalize_rows(x).unwrap();
    let v = tape.value(y);
    assert!((v.get(0, 0) - 0.6).abs() < 1e-15);
    assert!((v.get(0, 1) - 0.8).abs() < 1e-15);
}

#[test]
fn square_gradient() {
    let mut store = ParamStore::new();
    let id = store.add("x", Tensor::scalar(3.0));
    let mut tape = Tape::new();
    let x = tape.param(&store, id).unwrap();
    let sq = tape.mul(x, x).unwrap();
    let loss = tape.sum(sq).unwrap();
    tape.backward(loss, &mut store).unwrap();
    assert_eq!(store.get(id).grad.item(), 6.0);
}

#[test]
fn unused_parameter_has_zero_gradient() {
    let mut store = ParamStore::new();
    let x = store.add("x", Tensor::scalar(3.0));
    let p = store.add("p", Tensor::scalar(-2.0));
    let mut tape = Tape::new();
    let xv = tape.param(&store, x).unwrap();
    let _pv = tape.param(&store, p).unwrap();
    let loss = tape.sum(xv).unwrap();
    tape.backward(loss, &mut store).unwrap();
    assert_eq!(store.get(p).grad.item(), 0.0);
}

#[test]
fn frozen_parameter_gets_no_gradient() {
    let mut store = ParamStore::new();
    let x = store.add("x", Tensor::scalar(3.0));
    store.get_mut(x).trainable = false;
    let mut tape = Tape::new();
    let xv = tape.param(&store, x).unwrap();
    let sq = tape.mul(xv, xv).unwrap();
    let loss = tape.sum(sq).unwrap();
    assert!(!tape.requires_grad(loss));
    tape.backward(loss, &mut store).unwrap();
    assert_eq!(store.get(x).grad.item(), 0.0);
}

#[test]
fn backward_twice_is_an_error() {
    let mut store = ParamStore::new();
    let x = store.add("x", Tensor::scalar(1.0));
    let mut tape = Tape::new();
    let xv = tape.param(&store, x).unwrap();
    let loss = tape.sum(xv).unwrap();
    tape.backward(loss, &mut store).unwrap();
    assert!(matches!(
        tape.backward(loss, &mut store),
        Err(NumError::TapeConsumed)
    ));
}

#[test]
fn non_finite_results_are_errors() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[vec![0.0, 1.0]])).unwrap();
    assert!(matches!(
        tape.log(x),
        Err(NumError::NonFinite { op: "log" })
    ));
}

#[test]
fn shape_mismatch_is_an_error() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(2, 3)).unwrap();
    let b = tape.constant(Tensor::zeros(2, 2)).unwrap();
    assert!(matches!(tape.add(a, b), Err(NumError::Shape(_))));
    assert!(matches!(tape.matmul(a, a), Err(NumError::Shape(_))));
}

#[test]
fn concat_gradient_splits_back() {
    let mut store = ParamStore::new();
    let a = store.add("a", probe(3, 2, 1));
    let b = store.add("b", probe(3, 4, 2));
    let w = probe(3, 6, 3);
    let mut tape = Tape::new();
    let av = tape.param(&store, a).unwrap();
    let bv = tape.param(&store, b).unwrap();
    let c = tape.hconcat(&[av, bv]).unwrap();
    let wv = tape.constant(w.clone()).unwrap();
    let prod = tape.mul(c, wv).unwrap();
    let loss = tape.sum(prod).unwrap();
    tape.backward(loss, &mut store).unwrap();
    for r in 0..3 {
        assert_eq!(store.get(a).grad.row_slice(r), &w.row_slice(r)[..2]);
        assert_eq!(store.get(b).grad.row_slice(r), &w.row_slice(r)[2..]);
    }
}

#[test]
fn quadratic_gradient_check_is_tight() {
    let mut store = ParamStore::new();
    let x = store.add("x", probe(4, 3, 9));
    let a = probe(3, 3, 10);
    let report = finite_diff_check(&mut store, &[x], 1e-5, |tape, s| {
        let xv = tape.param(s, x)?;
        let av = tape.constant(a.clone())?;
        let xa = tape.matmul(xv, av)?;
        let q = tape.mul(xa, xv)?;
        tape.sum(q)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-9, "{report:?}");
}

/// One loss touching every differentiable op; checks all parameters at once.
#[test]
fn every_op_passes_gradient_check() {
    let mut store = ParamStore::new();
    let x = store.add("x", probe(6, 4, 21));
    let w = store.add("w", probe(4, 4, 22));
    let row = store.add("row", probe(1, 4, 23));
    let gamma = store.add("gamma", probe(1, 4, 24).map(|v| 1.0 + 0.3 * v));
    let beta = store.add("beta", probe(1, 4, 25));
    let logits = store.add("logits", probe(1, 3, 26));
    let asrc = store.add("asrc", probe(4, 1, 27));
    let adst = store.add("adst", probe(4, 1, 28));
    let adj = Arc::new(NeighborLists::from_lists(&[
        vec![0, 1, 2],
        vec![1, 0],
        vec![2, 3, 5],
        vec![3],
        vec![4, 0, 1, 2],
        vec![5, 4],
    ]));
    let mut mask = vec![false; 6 * 10];
    for r in 0..6 {
        mask[r * 10 + (r + 4) % 10] = true;
    }
    let ids: Vec<_> = store.ids().collect();
    let report = finite_diff_check(&mut store, &ids, 1e-6, |tape, s| {
        let xv = tape.param(s, x)?;
        let wv = tape.param(s, w)?;
        let rv = tape.param(s, row)?;
        let gv = tape.param(s, gamma)?;
        let bv = tape.param(s, beta)?;
        let lv = tape.param(s, logits)?;
        let sv = tape.param(s, asrc)?;
        let dv = tape.param(s, adst)?;

        let h = tape.matmul(xv, wv)?;
        let h = tape.add_row(h, rv)?;
        let h = tape.mul_row(h, gv)?;
        let src = tape.matmul(h, sv)?;
        let dst = tape.matmul(h, dv)?;
        let ga = tape.graph_attention(h, src, dst, &adj, 0.2)?;
        let ga = tape.elu(ga)?;
        let ln = tape.layer_norm(ga, gv, bv, 1e-5)?;
        let lr = tape.leaky_relu(ln, 0.2)?;
        let n = tape.l2_normalize_rows(lr)?;
        let sims = tape.matmul_nt(n, xv)?;
        let both = tape.hconcat(&[sims, n])?;
        let both = tape.scale(both, 3.0)?;
        let lsm = tape.masked_log_softmax(both, &mask)?;
        let picked = tape.pick(lsm, &[0, 1, 2, 3, 4, 5])?;
        let l1 = tape.mean(picked)?;

        // grouped attention over groups of 3 rows
        let q = tape.gather_rows(h, &[0, 1, 2, 3, 4, 5])?;
        let k = tape.gather_rows(xv, &[5, 4, 3, 2, 1, 0])?;
        let sc = tape.group_scores(q, k, 3, 0.5)?;
        let beta_m = tape.row_softmax(sc)?;
        let mixed = tape.group_mix(beta_m, xv, 3)?;
        let rs = tape.reshape(mixed, 3, 8)?;
        let sl = tape.slice_cols(rs, 2, 5)?;
        let ab = tape.abs(sl)?;
        let ex = tape.exp(ab)?;
        let ex = tape.add_const(ex, 1.0)?;
        let lg = tape.log(ex)?;
        let s2 = tape.sum_rows(lg)?;
        let l2 = tape.sum(s2)?;

        let wts = tape.row_softmax(lv)?;
        let a0 = tape.scale_by(l1, wts, 0)?;
        let a1 = tape.scale_by(l2, wts, 1)?;
        let sm = tape.sub(a0, a1)?;
        let top = tape.gather_rows(xv, &[0, 1])?;
        let bot = tape.gather_rows(h, &[2, 3])?;
        let mn = tape.min(top, bot)?;
        let rl = tape.relu(mn)?;
        let sel = tape.where_rows(&[true, false], top, rl)?;
        let stacked = tape.vconcat(&[sel, mn])?;
        let l3 = tape.sum(stacked)?;
        let l3 = tape.scale_by(l3, wts, 2)?;
        tape.add(sm, l3)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

#[test]
fn graph_attention_with_self_loops_only_is_identity() {
    let mut tape = Tape::new();
    let z = tape.constant(probe(4, 3, 5)).unwrap();
    let s = tape.constant(probe(4, 1, 6)).unwrap();
    let d = tape.constant(probe(4, 1, 7)).unwrap();
    let adj = Arc::new(NeighborLists::from_lists(&[
        vec![0],
        vec![1],
        vec![2],
        vec![3],
    ]));
    let out = tape.graph_attention(z, s, d, &adj, 0.2).unwrap();
    assert_eq!(tape.value(out), tape.value(z));
    assert!(tape
        .attention_weights(out)
        .unwrap()
        .iter()
        .all(|&a| a == 1.0));
}

proptest! {
    #[test]
    fn softmax_rows_and_their_gradients_sum_correctly(
        vals in proptest::collection::vec(-20.0f64..20.0, 12),
        upstream in proptest::collection::vec(-3.0f64..3.0, 12),
    ) {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::from_vec(3, 4, vals).unwrap());
        let mut tape = Tape::new();
        let x = tape.param(&store, id).unwrap();
        let y = tape.row_softmax(x).unwrap();
        for r in 0..3 {
            let s: f64 = tape.value(y).row_slice(r).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
        }
        let w = tape.constant(Tensor::from_vec(3, 4, upstream).unwrap()).unwrap();
        let p = tape.mul(y, w).unwrap();
        let loss = tape.sum(p).unwrap();
        tape.backward(loss, &mut store).unwrap();
        for r in 0..3 {
            let s: f64 = store.get(id).grad.row_slice(r).iter().sum();
            prop_assert!(s.abs() < 1e-6);
        }
    }

    #[test]
    fn forward_ops_are_bit_reproducible(vals in proptest::collection::vec(-5.0f64..5.0, 20)) {
        let run = || {
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::from_vec(4, 5, vals.clone()).unwrap()).unwrap();
            let y = tape.matmul_nt(x, x).unwrap();
            let y = tape.row_softmax(y).unwrap();
            let z = tape.l2_normalize_rows(y).unwrap();
            tape.value(z).clone()
        };
        prop_assert_eq!(run(), run());
    }
}
