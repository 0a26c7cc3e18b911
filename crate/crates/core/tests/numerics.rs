use langreach::numerics::{ops, Adam, Checkpoint, Graph, NumericsError, ParamStore, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn store(entries: &[(&str, Tensor)]) -> ParamStore {
    let mut p = ParamStore::new();
    for (n, t) in entries {
        p.insert(*n, t.clone()).unwrap();
    }
    p
}

#[test]
fn gradient_of_sum_is_all_ones() {
    let p = store(&[("w", Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 3.0, 0.0, -4.0]).unwrap())]);
    let mut g = Graph::new(&p);
    let w = g.param("w").unwrap();
    let loss = g.sum(w);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get("w").unwrap(), &Tensor::full(&[2, 3], 1.0));
}

#[test]
fn gradient_of_sum_tanh_at_zero_is_all_ones() {
    let p = store(&[("w", Tensor::zeros(&[4]))]);
    let mut g = Graph::new(&p);
    let w = g.param("w").unwrap();
    let t = g.tanh(w);
    let loss = g.sum(t);
    assert_eq!(g.backward(loss).unwrap().get("w").unwrap(), &Tensor::full(&[4], 1.0));
}

#[test]
fn unreachable_parameters_get_zero_gradients() {
    let p = store(&[("used", Tensor::full(&[2], 1.0)), ("unused", Tensor::full(&[3], 1.0))]);
    let mut g = Graph::new(&p);
    let u = g.param("used").unwrap();
    let loss = g.sum(u);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get("unused").unwrap(), &Tensor::zeros(&[3]));
    grads.check_parity(&p).unwrap();
}

#[test]
fn non_scalar_loss_is_rejected() {
    let p = store(&[("w", Tensor::zeros(&[2, 2]))]);
    let mut g = Graph::new(&p);
    let w = g.param("w").unwrap();
    assert_eq!(g.backward(w).unwrap_err(), NumericsError::NonScalar(vec![2, 2]));
}

#[test]
fn shape_mismatch_names_both_shapes() {
    let p = ParamStore::new();
    let mut g = Graph::new(&p);
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[3, 2]));
    let msg = g.add(a, b).unwrap_err().to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
}

const WIDTHS: [usize; 4] = [5, 7, 6, 1];

fn mlp_params(rng: &mut ChaCha8Rng) -> ParamStore {
    let mut p = ParamStore::new();
    for l in 0..3 {
        let (i, o) = (WIDTHS[l], WIDTHS[l + 1]);
        let w = (0..i * o).map(|_| rng.random_range(-0.8..0.8)).collect();
        let b = (0..o).map(|_| rng.random_range(-0.3..0.3)).collect();
        p.insert(format!("l{l}.w"), Tensor::new(vec![o, i], w).unwrap()).unwrap();
        p.insert(format!("l{l}.b"), Tensor::new(vec![o], b).unwrap()).unwrap();
    }
    p
}

/// Plain-loop forward pass of the same network, independent of the tape.
fn mlp_loss_by_hand(p: &ParamStore, x: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for row in x {
        let mut h = row.clone();
        for l in 0..3 {
            let w = p.get(&format!("l{l}.w")).unwrap();
            let b = p.get(&format!("l{l}.b")).unwrap();
            let (o, i) = (WIDTHS[l + 1], WIDTHS[l]);
            let mut next = vec![0.0; o];
            for (r, n) in next.iter_mut().enumerate() {
                *n = b.data()[r] + (0..i).map(|c| w.data()[r * i + c] * h[c]).sum::<f64>();
                if l < 2 {
                    *n = n.tanh();
                }
            }
            h = next;
        }
        total += h[0] * h[0];
    }
    total / x.len() as f64
}

#[test]
fn mlp_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut p = mlp_params(&mut rng);
    let x: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..WIDTHS[0]).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let grads = {
        let mut g = Graph::new(&p);
        let mut h = g.constant(Tensor::from_rows(&x).unwrap());
        for l in 0..3 {
            let w = g.param(&format!("l{l}.w")).unwrap();
            let b = g.param(&format!("l{l}.b")).unwrap();
            h = g.linear(h, w, b).unwrap();
            if l < 2 {
                h = g.tanh(h);
            }
        }
        let sq = g.square(h);
        let loss = g.mean(sq);
        assert!((g.value(loss).item().unwrap() - mlp_loss_by_hand(&p, &x)).abs() < 1e-12);
        g.backward(loss).unwrap()
    };
    let names: Vec<String> = p.names().map(String::from).collect();
    let h = 1e-5;
    for _ in 0..20 {
        let name = &names[rng.random_range(0..names.len())];
        let i = rng.random_range(0..p.get(name).unwrap().len());
        let orig = p.get(name).unwrap().data()[i];
        p.get_mut(name).unwrap().data_mut()[i] = orig + h;
        let plus = mlp_loss_by_hand(&p, &x);
        p.get_mut(name).unwrap().data_mut()[i] = orig - h;
        let minus = mlp_loss_by_hand(&p, &x);
        p.get_mut(name).unwrap().data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let analytic = grads.get(name).unwrap().data()[i];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        assert!(rel < 1e-4, "{name}[{i}]: {analytic} vs {numeric}");
    }
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(
        rows in 1usize..6,
        cols in 1usize..9,
        seed in any::<u64>(),
        scale in 0.1f64..50.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
        let s = ops::softmax_rows(&Tensor::new(vec![rows, cols], data).unwrap(), None).unwrap();
        for r in 0..rows {
            let row = s.row(r);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }

    #[test]
    fn checkpoint_round_trips(
        shapes in prop::collection::vec(prop::collection::vec(1usize..4, 0..3), 1..5),
        seed in any::<u64>(),
        step in 0u64..1000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (k, shape) in shapes.iter().enumerate() {
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-1e3..1e3)).collect();
            params.insert(format!("t{k}"), Tensor::new(shape.clone(), data).unwrap()).unwrap();
        }
        let adam = Adam::from_state(1e-3, step, params.clone(), params.clone());
        let ckpt = Checkpoint::new(&params, Some(&adam));
        let mut bytes = Vec::new();
        ckpt.write_to(&mut bytes).unwrap();
        let back = Checkpoint::read_from(&mut bytes.as_slice()).unwrap();
        prop_assert_eq!(back, ckpt);
    }
}

#[test]
fn maxpool_of_two_by_two_is_its_maximum() {
    let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let (y, _) = ops::maxpool2(&x).unwrap();
    assert_eq!(y.data(), &[4.0]);
}
