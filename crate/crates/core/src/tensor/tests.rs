use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Central finite differences at every coordinate of every input.
fn check<F>(inputs: Vec<Tensor>, f: F)
where
    F: Fn(&Tape, &[Var]) -> Var,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&tape, &vars);
    let grads = tape.backward(loss).unwrap();
    let eval = |xs: &[Tensor]| {
        let t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
        let l = f(&t, &vs);
        let v = t.value(l).item();
        v
    };
    let h = 1e-5;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]);
        for i in 0..input.len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            assert!(err < 1e-4, "input {k} coord {i}: analytic {a} numeric {numeric}");
        }
    }
}

/// Contracts an arbitrary tensor to a scalar with fixed random weights so that
/// every output element has a distinct gradient.
fn project(t: &Tape, v: Var, seed: u64) -> Var {
    let shape = t.shape(v);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = t.constant(rand_tensor(&mut rng, &shape));
    let p = t.mul(v, w).unwrap();
    t.sum(p)
}

#[test]
fn matmul_shapes() {
    let t = Tape::new();
    let a = t.param(Tensor::zeros(&[2, 3]));
    let b = t.param(Tensor::zeros(&[3, 4]));
    assert_eq!(t.shape(t.matmul(a, b).unwrap()), vec![2, 4]);
    let err = t.matmul(b, b).unwrap_err();
    assert_eq!(err.left, vec![3, 4]);
    assert_eq!(err.right, vec![3, 4]);
}

#[test]
fn softmax_rows_normalize() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let t = Tape::new();
    let x = t.constant(rand_tensor(&mut rng, &[4, 7]));
    let y = t.softmax(x);
    for row in t.value(y).data().chunks(7) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn masked_softmax_is_exactly_zero() {
    let t = Tape::new();
    let x = t.constant(Tensor::new(&[1, 3], vec![0.3, f64::NEG_INFINITY, -0.2]).unwrap());
    let y = t.softmax(x);
    assert_eq!(t.value(y).data()[1], 0.0);
}

#[test]
fn segment_mean_hand_values() {
    let t = Tape::new();
    let x = t.constant(Tensor::new(&[3, 1], vec![1.0, 3.0, 5.0]).unwrap());
    let y = t.segment_mean(x, &[0, 0, 1], 2).unwrap();
    assert_eq!(t.value(y).data(), &[2.0, 5.0]);
    let y = t.segment_mean(x, &[0, 0, 2], 4).unwrap();
    assert_eq!(t.value(y).data(), &[2.0, 0.0, 5.0, 0.0]);
}

#[test]
fn sum_gives_ones() {
    let t = Tape::new();
    let w = t.param(Tensor::new(&[2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap());
    let l = t.sum(w);
    let g = t.backward(l).unwrap();
    assert_eq!(g.get(w).data(), &[1.0; 4]);
}

#[test]
fn half_square_gives_identity() {
    let t = Tape::new();
    let data = vec![1.0, -2.0, 3.0, 0.5];
    let w = t.param(Tensor::new(&[2, 2], data.clone()).unwrap());
    let sq = t.mul(w, w).unwrap();
    let s = t.sum(sq);
    let l = t.scale(s, 0.5);
    let g = t.backward(l).unwrap();
    assert_eq!(g.get(w).data(), data.as_slice());
}

#[test]
fn non_scalar_loss_rejected() {
    let t = Tape::new();
    let w = t.param(Tensor::zeros(&[2]));
    assert!(t.backward(w).is_err());
}

#[test]
fn unreachable_param_gets_zeros() {
    let t = Tape::new();
    let a = t.param(Tensor::filled(&[3], 2.0));
    let b = t.param(Tensor::filled(&[2], 1.0));
    let l = t.sum(a);
    let g = t.backward(l).unwrap();
    assert_eq!(g.get(b).data(), &[0.0, 0.0]);
}

#[test]
fn fan_out_accumulates() {
    // l = sum(w + w + w) -> dl/dw = 3
    let t = Tape::new();
    let w = t.param(Tensor::filled(&[2], 0.7));
    let a = t.add(w, w).unwrap();
    let b = t.add(a, w).unwrap();
    let l = t.sum(b);
    let g = t.backward(l).unwrap();
    assert_eq!(g.get(w).data(), &[3.0, 3.0]);
    // gather of the same row twice accumulates twice
    let t = Tape::new();
    let table = t.param(Tensor::zeros(&[3, 2]));
    let rows = t.gather(table, &[1, 1, 2]).unwrap();
    let l = t.sum(rows);
    let g = t.backward(l).unwrap();
    assert_eq!(g.get(table).data(), &[0.0, 0.0, 2.0, 2.0, 1.0, 1.0]);
}

#[test]
fn gradcheck_elementwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = rand_tensor(&mut rng, &[3, 4]);
    let b = rand_tensor(&mut rng, &[3, 4]);
    check(vec![a.clone(), b.clone()], |t, v| {
        let s = t.add(v[0], v[1]).unwrap();
        let d = t.sub(s, v[1]).unwrap();
        let m = t.mul(d, v[1]).unwrap();
        let r = t.relu(m);
        let r = t.add(r, m).unwrap();
        let r = t.scale(r, 1.7);
        project(t, r, 10)
    });
    // strictly positive inputs for sqrt / recip
    let p = Tensor::new(&[5], vec![0.5, 1.0, 1.5, 2.0, 3.0]).unwrap();
    check(vec![p], |t, v| {
        let s = t.sqrt(v[0]);
        let r = t.recip(s);
        project(t, r, 11)
    });
}

#[test]
fn gradcheck_matmul_family() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    check(vec![rand_tensor(&mut rng, &[2, 3]), rand_tensor(&mut rng, &[3, 4])], |t, v| {
        let c = t.matmul(v[0], v[1]).unwrap();
        project(t, c, 12)
    });
    check(vec![rand_tensor(&mut rng, &[2, 3, 4]), rand_tensor(&mut rng, &[2, 3, 5])], |t, v| {
        let at = t.transpose(v[0]).unwrap();
        let c = t.batch_matmul(at, v[1]).unwrap();
        project(t, c, 13)
    });
    check(vec![rand_tensor(&mut rng, &[2, 3, 4, 2])], |t, v| {
        let p = t.permute(v[0], &[2, 0, 3, 1]).unwrap();
        let r = t.reshape(p, &[8, 6]).unwrap();
        project(t, r, 14)
    });
}

#[test]
fn gradcheck_structural() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    check(vec![rand_tensor(&mut rng, &[2, 3, 2]), rand_tensor(&mut rng, &[2, 1, 2])], |t, v| {
        let c = t.concat(&[v[0], v[1], v[0]], 1).unwrap();
        project(t, c, 15)
    });
    check(vec![rand_tensor(&mut rng, &[5, 3])], |t, v| {
        let g = t.gather(v[0], &[4, 0, 4, 2]).unwrap();
        let s = t.slice_rows(v[0], 1, 3).unwrap();
        let l = t.slice_last(g, 1, 3).unwrap();
        let m = t.segment_mean(v[0], &[1, 1, 0, 3, 1], 4).unwrap();
        let a = project(t, l, 16);
        let b = project(t, s, 17);
        let c = project(t, m, 18);
        let ab = t.add(a, b).unwrap();
        t.add(ab, c).unwrap()
    });
}

#[test]
fn gradcheck_normalizers() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    check(vec![rand_tensor(&mut rng, &[3, 6])], |t, v| {
        let s = t.softmax(v[0]);
        project(t, s, 19)
    });
    check(vec![rand_tensor(&mut rng, &[3, 6])], |t, v| {
        let s = t.log_softmax(v[0]);
        project(t, s, 20)
    });
    check(
        vec![rand_tensor(&mut rng, &[4, 5]), rand_tensor(&mut rng, &[5]), rand_tensor(&mut rng, &[5])],
        |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
            project(t, y, 21)
        },
    );
}

#[test]
fn gradcheck_broadcast_helpers() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mask = Tensor::new(&[2, 3], vec![0.0, 2.0, 2.0, 2.0, 0.0, 2.0]).unwrap();
    check(
        vec![rand_tensor(&mut rng, &[2, 3]), rand_tensor(&mut rng, &[3]), rand_tensor(&mut rng, &[2])],
        |t, v| {
            let d = t.dropout(v[0], &mask).unwrap();
            let b = t.add_bias(d, v[1]).unwrap();
            let s = t.scale_rows(b, v[2]).unwrap();
            let r = t.sum_last(s).unwrap();
            project(t, r, 22)
        },
    );
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = Tape::new();
        let a = t.constant(rand_tensor(&mut rng, &[64, 64]));
        let b = t.constant(rand_tensor(&mut rng, &[64, 64]));
        let c = t.matmul(a, b).unwrap();
        let s = t.softmax(c);
        let out = t.value(s).clone();
        out
    };
    assert_eq!(run(), run());
}
