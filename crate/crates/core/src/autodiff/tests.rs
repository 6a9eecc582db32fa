use std::rc::Rc;

use ndarray::{array, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::testutil::max_grad_error;

fn store_with(shapes: &[(&str, (usize, usize))], seed: u64) -> (ParamStore<f64>, Vec<ParamId>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let ids = shapes
        .iter()
        .map(|(n, s)| store.add_uniform(*n, *s, 1.0, &mut rng))
        .collect();
    (store, ids)
}

fn readout(g: &mut Graph<'_, f64>, v: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.shape(v);
    let w = Array2::from_shape_simple_fn(shape, || rand::Rng::random_range(&mut rng, -1.0..1.0));
    g.weighted_sum(v, w)
}

#[test]
fn dense_ops_match_finite_differences() {
    let (store, ids) = store_with(&[("a", (3, 4)), ("b", (4, 2)), ("bias", (1, 2)), ("c", (3, 2))], 1);
    let err = max_grad_error(&store, 50, |g| {
        let a = g.param(ids[0]);
        let b = g.param(ids[1]);
        let bias = g.param(ids[2]);
        let c = g.param(ids[3]);
        let ab = g.matmul(a, b);
        let x = g.add_row(ab, bias);
        let t = g.tanh(x);
        let s = g.sigmoid(c);
        let m = g.mul(t, s);
        let d = g.sub(m, c);
        let r = g.relu(d);
        let e = g.affine(r, 0.7, 0.1);
        let cat = g.concat_cols(&[e, t, c]);
        let stacked = g.concat_rows(&[cat, cat]);
        let cat = g.slice_cols(stacked, 0, 6);
        let sl = g.slice_cols(cat, 1, 5);
        let sm = g.softmax_rows(sl);
        let l = g.log(sm);
        readout(g, l, 9)
    });
    assert!(err < 1e-6, "relative error {err}");
}

#[test]
fn structural_ops_match_finite_differences() {
    let (store, ids) = store_with(&[("h", (5, 3)), ("s", (5, 1)), ("col", (2, 1))], 2);
    let segs = Rc::new(Segments::from_lengths(&[2, 3]));
    let keep: Rc<[bool]> = Rc::from(vec![true, true, false, true, true]);
    let csr = Rc::new(Csr::from_triplets(
        3,
        5,
        vec![(0, 0, 0.5), (0, 4, 0.5), (1, 1, 1.0), (2, 2, 0.25), (2, 3, 0.75)],
    ));
    let err = max_grad_error(&store, 50, |g| {
        let h = g.param(ids[0]);
        let s = g.param(ids[1]);
        let col = g.param(ids[2]);
        let w = g.segment_softmax(s, segs.clone());
        let wn = g.segment_normalize(w, keep.clone(), segs.clone());
        let ctx = g.segment_weighted_sum(wn, h, segs.clone());
        let mx = g.segment_max(h, &segs);
        let sp = g.spmm(csr.clone(), h);
        let gat = g.gather_rows(h, Rc::from(vec![4, 0, 0, 2]));
        let scat = g.scatter_cols(w, Rc::from(vec![(0, 0), (0, 2), (1, 1), (1, 1), (1, 0)]), (2, 3));
        let mc = g.mul_col(scat, col);
        let pad = g.pad_cols(mc, 5);
        let pk = g.pick(pad, Rc::from(vec![(0, 2), (1, 1), (1, 1)]));
        let parts = [
            readout(g, ctx, 1),
            readout(g, mx, 2),
            readout(g, sp, 3),
            readout(g, gat, 4),
            readout(g, pad, 5),
            readout(g, pk, 6),
        ];
        let cat = g.concat_cols(&parts);
        g.sum_all(cat)
    });
    assert!(err < 1e-6, "relative error {err}");
}

#[test]
fn log_floors_zero_probabilities() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let p = g.constant(array![[0.0, 1.0]]);
    let l = g.log(p);
    assert_eq!(g.value(l)[(0, 0)], LOG_FLOOR);
    assert_eq!(g.value(l)[(0, 1)], 0.0);
}

#[test]
fn segment_normalize_masks_exactly() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let w = g.constant(array![[0.2], [0.3], [0.5]]);
    let segs = Rc::new(Segments::from_lengths(&[3]));
    let out = g.segment_normalize(w, Rc::from(vec![true, true, false]), segs);
    let v = g.value(out);
    assert!((v[(0, 0)] - 0.4).abs() < 1e-12);
    assert!((v[(1, 0)] - 0.6).abs() < 1e-12);
    assert_eq!(v[(2, 0)], 0.0);
}

#[test]
fn clipping_bounds_global_norm() {
    let (store, ids) = store_with(&[("a", (4, 4))], 5);
    let mut g = Graph::new(&store);
    let a = g.param(ids[0]);
    let sq = g.mul(a, a);
    let big = g.scale(sq, 1000.0);
    let out = g.sum_all(big);
    let mut grads = g.backward(out);
    let before = grads.clip_global_norm(10.0);
    assert!(before > 10.0);
    assert!(grads.global_norm() <= 10.0 + 1e-6);
}

#[test]
fn adam_leaves_frozen_rows() {
    let (mut store, ids) = store_with(&[("emb", (3, 2))], 6);
    store.set_frozen_rows(ids[0], vec![true, false, true]);
    let before = store.get(ids[0]).clone();
    let mut adam = Adam::new(&store, 0.01);
    for _ in 0..3 {
        let mut grads = {
            let mut g = Graph::new(&store);
            let e = g.param(ids[0]);
            let out = g.sum_all(e);
            g.backward(out)
        };
        grads.mask_frozen(&store);
        adam.update(&mut store, &grads);
    }
    let after = store.get(ids[0]);
    assert_eq!(after.row(0), before.row(0));
    assert_eq!(after.row(2), before.row(2));
    assert!(after[(1, 0)] < before[(1, 0)]);
}

#[test]
fn inference_tape_has_no_gradients() {
    let (store, ids) = store_with(&[("a", (2, 2))], 7);
    let mut g = Graph::inference(&store);
    let a = g.param(ids[0]);
    let out = g.sum_all(a);
    assert!(g.backward(out).get(ids[0]).is_none());
}
