//! Gradient-checking support: central finite differences over the forward
//! path only, for validating the tape's reverse-mode gradients. Kept
//! deliberately independent of `Tape::backward` — the only thing it calls
//! is the loss closure handed to it.

use super::store::{ParamId, ParamStore};
use super::tensor::Tensor;

/// Central finite-difference gradient of `loss` with respect to parameter
/// `id`: each component is perturbed by `±h` in turn and the loss closure is
/// re-evaluated. The store is restored before returning.
pub fn finite_diff_grad<F>(store: &mut ParamStore, id: ParamId, h: f64, mut loss: F) -> Tensor
where
    F: FnMut(&ParamStore) -> f64,
{
    let shape = store.value(id).shape().to_vec();
    let n = store.value(id).len();
    let mut out = Tensor::zeros(&shape);
    for i in 0..n {
        let orig = store.value(id).data()[i];
        store.value_mut(id).data_mut()[i] = orig + h;
        let fp = loss(store);
        store.value_mut(id).data_mut()[i] = orig - h;
        let fm = loss(store);
        store.value_mut(id).data_mut()[i] = orig;
        out.data_mut()[i] = (fp - fm) / (2.0 * h);
    }
    out
}

/// Norm-relative error `||a - b|| / max(||a||, ||b||, 1e-10)`. Zero when
/// both tensors are (near) zero.
pub fn rel_err_norm(a: &Tensor, b: &Tensor) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let diff: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    diff / a.norm().max(b.norm()).max(1e-10)
}

/// Worst componentwise relative error, with small components compared on an
/// absolute scale: `max_i |a_i - b_i| / max(|a_i|, |b_i|, 1)`.
pub fn max_rel_err(a: &Tensor, b: &Tensor) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::cell::{GruCell, LstmCell};
    use crate::num::tape::{dropout_mask, ParamGrads, Tape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    /// Check the tape gradient of `build` (which must construct a scalar
    /// loss from the store) against central finite differences for every
    /// parameter in the store.
    fn assert_grads_match<F>(store: &mut ParamStore, tol: f64, mut build: F)
    where
        F: FnMut(&ParamStore) -> (f64, ParamGrads),
    {
        let (_, grads) = build(store);
        for id in store.ids().collect::<Vec<_>>() {
            let fd = finite_diff_grad(store, id, 1e-5, |s| build(s).0);
            let analytic = grads
                .get(id)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(store.value(id).shape()));
            let err = rel_err_norm(&analytic, &fd);
            assert!(
                err <= tol,
                "param {} gradient mismatch: rel err {err:.3e} (tol {tol:.1e})",
                store.param(id).name
            );
        }
    }

    fn random_store(specs: &[(&str, Vec<usize>)], seed: u64) -> ParamStore {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, shape) in specs {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|_| rng.random_range(-0.8..0.8)).collect();
            store.add(name, Tensor::from_vec(shape, data).unwrap()).unwrap();
        }
        store
    }

    #[test]
    fn affine_cross_entropy_gradient_matches_finite_differences() {
        for seed in 0..5 {
            let mut store = random_store(
                &[("w", vec![4, 3]), ("b", vec![4]), ("x", vec![3])],
                100 + seed,
            );
            assert_grads_match(&mut store, 1e-6, |s| {
                let mut tape = Tape::new(s);
                let w = tape.param(s.lookup("w").unwrap());
                let b = tape.param(s.lookup("b").unwrap());
                let x = tape.param(s.lookup("x").unwrap());
                let y = tape.affine(w, x, b).unwrap();
                let loss = tape.cross_entropy(y, 2).unwrap();
                let val = tape.value(loss).item();
                (val, tape.backward(loss).unwrap())
            });
        }
    }

    #[test]
    fn lstm_unroll_gradient_matches_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, &mut rng, "lstm", 2, 3).unwrap();
        let out_w = store.add_matrix("out", 4, 3, &mut rng).unwrap();
        let out_b = store.add_zero_vector("out_b", 4).unwrap();
        let xs = [[0.3, -0.9], [0.1, 0.4], [-0.7, 0.2]];
        assert_grads_match(&mut store, 1e-5, |s| {
            let mut tape = Tape::new(s);
            let mut state = cell.initial_state(&mut tape);
            let mut losses = Vec::new();
            for (t, x) in xs.iter().enumerate() {
                let xv = tape.input(Tensor::vector(x.to_vec()));
                state = cell.step(&mut tape, &state, xv).unwrap();
                let w = tape.param(out_w);
                let b = tape.param(out_b);
                let logits = tape.affine(w, state.h, b).unwrap();
                losses.push(tape.cross_entropy(logits, t % 4).unwrap());
            }
            let total = tape.sum_scalars(&losses).unwrap();
            let val = tape.value(total).item();
            (val, tape.backward(total).unwrap())
        });
    }

    #[test]
    fn gru_unroll_gradient_matches_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(43);
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, &mut rng, "gru", 2, 3).unwrap();
        let out_w = store.add_matrix("out", 3, 3, &mut rng).unwrap();
        let out_b = store.add_zero_vector("out_b", 3).unwrap();
        let xs = [[0.5, 0.1], [-0.2, 0.8]];
        assert_grads_match(&mut store, 1e-5, |s| {
            let mut tape = Tape::new(s);
            let mut state = cell.initial_state(&mut tape);
            let mut losses = Vec::new();
            for (t, x) in xs.iter().enumerate() {
                let xv = tape.input(Tensor::vector(x.to_vec()));
                state = cell.step(&mut tape, &state, xv).unwrap();
                let w = tape.param(out_w);
                let b = tape.param(out_b);
                let logits = tape.affine(w, state.h, b).unwrap();
                losses.push(tape.cross_entropy(logits, t % 3).unwrap());
            }
            let total = tape.sum_scalars(&losses).unwrap();
            let val = tape.value(total).item();
            (val, tape.backward(total).unwrap())
        });
    }

    #[test]
    fn attention_style_composite_gradient_matches_finite_differences() {
        // softmax over scores, convex combination, then cross-entropy: the
        // same op pattern the inflector's attention uses.
        let mut store = random_store(
            &[
                ("enc0", vec![3]),
                ("enc1", vec![3]),
                ("enc2", vec![3]),
                ("att", vec![3, 2]),
                ("query", vec![2]),
                ("out", vec![2, 3]),
                ("out_b", vec![2]),
            ],
            7,
        );
        assert_grads_match(&mut store, 1e-5, |s| {
            let mut tape = Tape::new(s);
            let rows = ["enc0", "enc1", "enc2"]
                .iter()
                .map(|n| tape.param(s.lookup(n).unwrap()))
                .collect::<Vec<_>>();
            let h_mat = tape.stack(&rows).unwrap();
            let att = tape.param(s.lookup("att").unwrap());
            let q = tape.param(s.lookup("query").unwrap());
            let keys = tape.matvec(att, q).unwrap(); // [3]
            let scores = tape.matvec(h_mat, keys).unwrap(); // [3]
            let alpha = tape.softmax(scores).unwrap();
            let ctx = tape.mat_t_vec(h_mat, alpha).unwrap(); // [3]
            let w = tape.param(s.lookup("out").unwrap());
            let b = tape.param(s.lookup("out_b").unwrap());
            let logits = tape.affine(w, ctx, b).unwrap();
            let loss = tape.cross_entropy(logits, 1).unwrap();
            let val = tape.value(loss).item();
            (val, tape.backward(loss).unwrap())
        });
    }

    #[test]
    fn masked_path_gradient_matches_finite_differences() {
        // A fixed dropout mask is just a constant elementwise scale; the
        // gradient must flow through the kept components only.
        let mut mask_rng = ChaCha20Rng::seed_from_u64(9);
        let mask = dropout_mask(4, 0.5, &mut mask_rng).unwrap();
        let mut store = random_store(&[("v", vec![4]), ("w", vec![3, 4]), ("b", vec![3])], 21);
        assert_grads_match(&mut store, 1e-6, |s| {
            let mut tape = Tape::new(s);
            let v = tape.param(s.lookup("v").unwrap());
            let dropped = tape.mask_mul(v, mask.clone()).unwrap();
            let w = tape.param(s.lookup("w").unwrap());
            let b = tape.param(s.lookup("b").unwrap());
            let logits = tape.affine(w, dropped, b).unwrap();
            let loss = tape.cross_entropy(logits, 0).unwrap();
            let val = tape.value(loss).item();
            (val, tape.backward(loss).unwrap())
        });
    }

    #[test]
    fn rel_err_norm_is_zero_for_identical_tensors() {
        let t = Tensor::vector(vec![1.0, -2.0]);
        assert_eq!(rel_err_norm(&t, &t), 0.0);
        assert_eq!(max_rel_err(&t, &t), 0.0);
    }
}
