use morphtag::numkernel::{
    lstm_step, run_lstm, softmax, LstmParams, NodeId, ParamStore, Tape, Tensor,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-6;
// Below this magnitude gradients are compared absolutely; central
// differences on O(1) losses carry ~1e-11 round-off plus O(h²) truncation.
const FLOOR: f64 = 1e-3;

fn rand_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
}

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::new(shape.to_vec(), rand_vec(shape.iter().product(), rng)).unwrap()
}

/// Scalar `Σ_k r_k·v_k` with fixed random weights `r`.
fn project(tape: &mut Tape<'_>, v: NodeId, weights: &[f64]) -> NodeId {
    let r = tape.input_vector(weights.to_vec()).unwrap();
    let p = tape.mul(v, r).unwrap();
    tape.sum_all(p)
}

/// Worst relative error between tape gradients and central differences of
/// the scalar built by `f` over all parameters.
fn worst_error<F>(mut store: ParamStore, f: F) -> f64
where
    F: Fn(&mut Tape<'_>, &[NodeId]) -> NodeId,
{
    let eval = |store: &ParamStore| {
        let mut tape = Tape::new(store);
        let ps: Vec<NodeId> = store.ids().map(|id| tape.param(id)).collect();
        let out = f(&mut tape, &ps);
        tape.scalar(out)
    };
    let grads = {
        let mut tape = Tape::new(&store);
        let ps: Vec<NodeId> = store.ids().map(|id| tape.param(id)).collect();
        let out = f(&mut tape, &ps);
        tape.backward(out).unwrap()
    };
    let ids: Vec<_> = store.ids().collect();
    let mut worst: f64 = 0.0;
    for id in ids {
        for k in 0..store.get(id).len() {
            let orig = store.get(id).values()[k];
            store.get_mut(id).values_mut()[k] = orig + STEP;
            let up = eval(&store);
            store.get_mut(id).values_mut()[k] = orig - STEP;
            let down = eval(&store);
            store.get_mut(id).values_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let a = grads.get(id).values()[k];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR));
        }
    }
    worst
}

fn store_of(tensors: Vec<Tensor>) -> ParamStore {
    let mut s = ParamStore::new();
    for (i, t) in tensors.into_iter().enumerate() {
        s.add(format!("p{i}"), t).unwrap();
    }
    s
}

fn check_op<F>(name: &str, mut make: F)
where
    F: FnMut(&mut ChaCha8Rng) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64 * 7919);
    for trial in 0..100 {
        let err = make(&mut rng);
        assert!(err <= TOL, "{name}, trial {trial}: relative error {err:e}");
    }
}

#[test]
fn matvec_gradient() {
    check_op("matvec", |rng| {
        let (r, c) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        let w = rand_vec(r, rng);
        worst_error(store_of(vec![rand_tensor(&[r, c], rng), rand_tensor(&[c], rng)]), |t, p| {
            let y = t.matvec(p[0], p[1]).unwrap();
            project(t, y, &w)
        })
    });
}

#[test]
fn elementwise_gradients() {
    check_op("elementwise", |rng| {
        let n = rng.gen_range(1..=8);
        let w = rand_vec(n, rng);
        let mask: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { 0.0 } else { 1.25 }).collect();
        let k = rng.gen_range(-3.0..3.0);
        worst_error(store_of(vec![rand_tensor(&[n], rng), rand_tensor(&[n], rng)]), |t, p| {
            let a = t.add(p[0], p[1]).unwrap();
            let m = t.mul(a, p[1]).unwrap();
            let s = t.scale(m, k);
            let s = t.sigmoid(s);
            let th = t.tanh(p[0]);
            let y = t.add(s, th).unwrap();
            let y = t.mask(y, mask.clone()).unwrap();
            project(t, y, &w)
        })
    });
}

#[test]
fn concat_slice_row_gradients() {
    check_op("structural", |rng| {
        let (a, b) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        let rows = rng.gen_range(1..=8);
        let r = rng.gen_range(0..rows);
        let start = rng.gen_range(0..a + b);
        let len = rng.gen_range(1..=a + b - start);
        let w = rand_vec(len + b, rng);
        let store = store_of(vec![rand_tensor(&[a], rng), rand_tensor(&[rows, b], rng)]);
        worst_error(store, |t, p| {
            let row = t.row(p[1], r).unwrap();
            let cat = t.concat(&[p[0], row]).unwrap();
            let sl = t.slice(cat, start, len).unwrap();
            let y = t.concat(&[sl, row]).unwrap();
            project(t, y, &w)
        })
    });
}

#[test]
fn log_softmax_pick_add_n_gradients() {
    check_op("log_softmax", |rng| {
        let n = rng.gen_range(1..=8);
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        let store = store_of(vec![rand_tensor(&[n], rng), rand_tensor(&[n], rng)]);
        worst_error(store, |t, p| {
            let a = t.log_softmax(p[0]).unwrap();
            let b = t.log_softmax(p[1]).unwrap();
            let x = t.pick(a, i).unwrap();
            let y = t.pick(b, j).unwrap();
            let z = t.sum_all(p[0]);
            t.add_n(&[x, y, z, x]).unwrap()
        })
    });
}

#[test]
fn lstm_step_gradient() {
    check_op("lstm_step", |rng| {
        let (d, h) = (rng.gen_range(1..=8), rng.gen_range(1..=6));
        let w = rand_vec(2 * h, rng);
        let store = store_of(vec![
            rand_tensor(&[d], rng),
            rand_tensor(&[2 * h], rng),
            rand_tensor(&[4 * h, d], rng),
            rand_tensor(&[4 * h, h], rng),
            rand_tensor(&[4 * h], rng),
        ]);
        worst_error(store, |t, p| {
            let s = t.lstm_step(p[0], p[1], p[2], p[3], p[4]).unwrap();
            project(t, s, &w)
        })
    });
}

/// The LSTM cell written with primitive tape ops only.
fn composed_step(t: &mut Tape<'_>, x: NodeId, state: NodeId, wx: NodeId, wh: NodeId, b: NodeId, h: usize) -> NodeId {
    let hp = t.slice(state, 0, h).unwrap();
    let cp = t.slice(state, h, h).unwrap();
    let zx = t.matvec(wx, x).unwrap();
    let zh = t.matvec(wh, hp).unwrap();
    let z = t.add_n(&[zx, zh, b]).unwrap();
    let gi = t.slice(z, 0, h).unwrap();
    let gf = t.slice(z, h, h).unwrap();
    let gg = t.slice(z, 2 * h, h).unwrap();
    let go = t.slice(z, 3 * h, h).unwrap();
    let i = t.sigmoid(gi);
    let f = t.sigmoid(gf);
    let g = t.tanh(gg);
    let o = t.sigmoid(go);
    let fc = t.mul(f, cp).unwrap();
    let ig = t.mul(i, g).unwrap();
    let c = t.add(fc, ig).unwrap();
    let tc = t.tanh(c);
    let hn = t.mul(o, tc).unwrap();
    t.concat(&[hn, c]).unwrap()
}

#[test]
fn fused_lstm_matches_composed_cell() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for _ in 0..50 {
        let (d, h, steps) = (rng.gen_range(1..=6), rng.gen_range(1..=5), rng.gen_range(1..=4));
        let mut tensors = vec![rand_tensor(&[4 * h, d], &mut rng), rand_tensor(&[4 * h, h], &mut rng), rand_tensor(&[4 * h], &mut rng)];
        tensors.extend((0..steps).map(|_| rand_tensor(&[d], &mut rng)));
        let store = store_of(tensors);
        let w = rand_vec(2 * h, &mut rng);
        let run = |fused: bool| {
            let mut t = Tape::new(&store);
            let ps: Vec<NodeId> = store.ids().map(|id| t.param(id)).collect();
            let mut s = t.zeros(2 * h);
            for &x in &ps[3..] {
                s = if fused {
                    t.lstm_step(x, s, ps[0], ps[1], ps[2]).unwrap()
                } else {
                    composed_step(&mut t, x, s, ps[0], ps[1], ps[2], h)
                };
            }
            let state = t.value(s).values().to_vec();
            let loss = project(&mut t, s, &w);
            (state, t.backward(loss).unwrap())
        };
        let (sa, ga) = run(true);
        let (sb, gb) = run(false);
        for (a, b) in sa.iter().zip(&sb) {
            assert!((a - b).abs() <= 1e-13, "state {a} vs {b}");
        }
        for id in store.ids() {
            for (a, b) in ga.get(id).values().iter().zip(gb.get(id).values()) {
                assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{}: {a} vs {b}", store.name(id));
            }
        }
    }
}

#[test]
fn value_level_lstm_agrees_with_tape() {
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    for _ in 0..20 {
        let (d, h) = (rng.gen_range(1..=6), rng.gen_range(1..=5));
        let p = LstmParams::new(rand_tensor(&[4 * h, d], &mut rng), rand_tensor(&[4 * h, h], &mut rng), rand_tensor(&[4 * h], &mut rng)).unwrap();
        let seq: Vec<Vec<f64>> = (0..3).map(|_| rand_vec(d, &mut rng)).collect();
        let (last, all) = run_lstm(&seq, &p).unwrap();
        let (h1, _) = lstm_step(&seq[0], &vec![0.0; h], &vec![0.0; h], &p).unwrap();
        assert_eq!(all[0], h1);
        assert_eq!(&last, all.last().unwrap());

        let store = store_of(vec![p.wx().clone(), p.wh().clone(), p.b().clone()]);
        let mut t = Tape::new(&store);
        let ps: Vec<NodeId> = store.ids().map(|id| t.param(id)).collect();
        let mut s = t.zeros(2 * h);
        for x in &seq {
            let xn = t.input_vector(x.clone()).unwrap();
            s = t.lstm_step(xn, s, ps[0], ps[1], ps[2]).unwrap();
        }
        assert_eq!(&t.value(s).values()[..h], last.as_slice());
    }
}

#[test]
fn forward_backward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(46);
    let store = store_of(vec![rand_tensor(&[12, 3], &mut rng), rand_tensor(&[12, 3], &mut rng), rand_tensor(&[12], &mut rng), rand_tensor(&[3], &mut rng)]);
    let run = || {
        let mut t = Tape::new(&store);
        let ps: Vec<NodeId> = store.ids().map(|id| t.param(id)).collect();
        let s0 = t.zeros(6);
        let s = t.lstm_step(ps[3], s0, ps[0], ps[1], ps[2]).unwrap();
        let l = t.log_softmax(s).unwrap();
        let loss = t.pick(l, 2).unwrap();
        let g = t.backward(loss).unwrap();
        store.ids().flat_map(|id| g.get(id).values().to_vec()).map(f64::to_bits).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn softmax_sums_to_one_and_is_shift_invariant(
        xs in proptest::collection::vec(-50.0f64..50.0, 1..10),
        c in -50.0f64..50.0,
    ) {
        let p = softmax(&xs).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|v| v.is_finite() && *v >= 0.0));
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let q = softmax(&shifted).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn ops_stay_finite_on_bounded_inputs(xs in proptest::collection::vec(-50.0f64..50.0, 8)) {
        let store = store_of(vec![Tensor::vector(xs.clone()).unwrap()]);
        let mut t = Tape::new(&store);
        let p = t.param(store.ids().next().unwrap());
        let a = t.sigmoid(p);
        let b = t.tanh(p);
        let c = t.log_softmax(p).unwrap();
        let cat = t.concat(&[a, b, c]).unwrap();
        let loss = t.sum_all(cat);
        prop_assert!(t.value(cat).is_finite());
        let g = t.backward(loss).unwrap();
        prop_assert!(g.is_finite());
    }
}
