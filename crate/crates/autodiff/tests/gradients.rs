use adsf_autodiff::gradcheck::check_gradients;
use adsf_autodiff::{CVar, Error, Tape, Var, MASKED_LOGIT};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-4;
const TOL: f64 = 1e-4;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn input(rng: &mut ChaCha8Rng, shape: &[usize]) -> (Vec<f64>, Vec<usize>) {
    (rand_vec(rng, shape.iter().product()), shape.to_vec())
}

fn positive(rng: &mut ChaCha8Rng, shape: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let n = shape.iter().product();
    (
        (0..n).map(|_| rng.random_range(0.5..2.0)).collect(),
        shape.to_vec(),
    )
}

/// Reduces any tensor to a scalar with a fixed random projection, so that
/// every output element contributes with a distinct weight.
fn project<'t>(x: Var<'t>, seed: u64) -> Var<'t> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = x.tape().constant(rand_vec(&mut rng, x.numel()), &x.shape());
    x.mul(&w).unwrap().sum()
}

fn assert_grad<F>(name: &str, inputs: &[(Vec<f64>, Vec<usize>)], f: F)
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> adsf_autodiff::Result<Var<'t>>,
{
    let report = check_gradients(inputs, H, None, f).unwrap();
    let err = report.max_rel_error();
    assert!(err < TOL, "{name}: relative gradient error {err:e}");
}

#[test]
fn square_derivative_at_three() {
    let tape = Tape::new();
    let x = tape.leaf(vec![3.0], &[1]);
    let y = x.mul(&x).unwrap().sum();
    let g = tape.backward(&y).unwrap();
    assert_eq!(g.get(&x).unwrap(), &[6.0]);
}

#[test]
fn linear_sum_gradient_is_input_transpose() {
    // loss = sum(W x) with W [2,3], x [3,1]: dW[i][j] = x[j]
    let tape = Tape::new();
    let w = tape.leaf(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6], &[2, 3]);
    let x = tape.constant(vec![1.0, -2.0, 0.5], &[3, 1]);
    let loss = w.matmul(&x).unwrap().sum();
    let g = tape.backward(&loss).unwrap();
    assert_eq!(g.get(&w).unwrap(), &[1.0, -2.0, 0.5, 1.0, -2.0, 0.5]);
    assert!(g.get(&x).is_none());
}

#[test]
fn diamond_graph_adds_both_paths() {
    // y = exp(x) + x², dy/dx = exp(x) + 2x
    let tape = Tape::new();
    let x = tape.leaf(vec![0.7], &[1]);
    let y = x.exp().add(&x.square()).unwrap().sum();
    let g = tape.backward(&y).unwrap();
    let expected = 0.7f64.exp() + 1.4;
    assert!((g.get(&x).unwrap()[0] - expected).abs() < 1e-14);
}

#[test]
fn masked_softmax_is_uniform_over_valid_positions() {
    let t = 5;
    let tape = Tape::new();
    let logits = tape.leaf(vec![0.3; t * t], &[t, t]);
    let mut mask = vec![0.0; t * t];
    for i in 0..t {
        for j in i + 1..t {
            mask[i * t + j] = MASKED_LOGIT;
        }
    }
    let mask = tape.constant(mask, &[t, t]);
    let w = logits.masked_softmax(&mask).unwrap();
    let v = w.value();
    for i in 0..t {
        for j in 0..t {
            let expected = if j <= i { 1.0 / (i + 1) as f64 } else { 0.0 };
            assert!((v[i * t + j] - expected).abs() < 1e-15);
            if j > i {
                assert_eq!(v[i * t + j], 0.0);
            }
        }
    }
    // gradient with respect to masked logits is exactly zero
    let loss = project(w, 3);
    let g = tape.backward(&loss).unwrap();
    let gl = g.get(&logits).unwrap();
    for i in 0..t {
        for j in i + 1..t {
            assert_eq!(gl[i * t + j], 0.0);
        }
    }
}

#[test]
fn complex_matmul_matches_direct_arithmetic() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 4;
    let (ar, ai, br, bi) = (
        rand_vec(&mut rng, n * n),
        rand_vec(&mut rng, n * n),
        rand_vec(&mut rng, n * n),
        rand_vec(&mut rng, n * n),
    );
    let tape = Tape::new();
    let a = CVar::new(
        tape.constant(ar.clone(), &[n, n]),
        tape.constant(ai.clone(), &[n, n]),
    )
    .unwrap();
    let b = CVar::new(
        tape.constant(br.clone(), &[n, n]),
        tape.constant(bi.clone(), &[n, n]),
    )
    .unwrap();
    let c = a.matmul(&b).unwrap();
    let (cr, ci) = (c.re.value(), c.im.value());
    for i in 0..n {
        for j in 0..n {
            let (mut re, mut im) = (0.0, 0.0);
            for k in 0..n {
                let (x, y) = (
                    (ar[i * n + k], ai[i * n + k]),
                    (br[k * n + j], bi[k * n + j]),
                );
                re += x.0 * y.0 - x.1 * y.1;
                im += x.0 * y.1 + x.1 * y.0;
            }
            assert!((cr[i * n + j] - re).abs() < 1e-12);
            assert!((ci[i * n + j] - im).abs() < 1e-12);
        }
    }
    let h = a.conj_transpose().unwrap();
    for i in 0..n {
        for j in 0..n {
            assert_eq!(h.re.value()[i * n + j], ar[j * n + i]);
            assert_eq!(h.im.value()[i * n + j], -ai[j * n + i]);
        }
    }
}

#[test]
fn complex_solve_inverts_matmul() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (b, n, k) = (3, 4, 2);
    let tape = Tape::new();
    let mut ar = rand_vec(&mut rng, b * n * n);
    for bi in 0..b {
        for i in 0..n {
            ar[bi * n * n + i * n + i] += 3.0;
        }
    }
    let a = CVar::new(
        tape.constant(ar, &[b, n, n]),
        tape.constant(rand_vec(&mut rng, b * n * n), &[b, n, n]),
    )
    .unwrap();
    let x = CVar::new(
        tape.constant(rand_vec(&mut rng, b * n * k), &[b, n, k]),
        tape.constant(rand_vec(&mut rng, b * n * k), &[b, n, k]),
    )
    .unwrap();
    let rhs = a.matmul(&x).unwrap();
    let sol = a.solve(&rhs).unwrap();
    for (s, e) in sol.re.value().iter().zip(x.re.value().iter()) {
        assert!((s - e).abs() < 1e-12);
    }
    for (s, e) in sol.im.value().iter().zip(x.im.value().iter()) {
        assert!((s - e).abs() < 1e-12);
    }
}

#[test]
fn backward_rejects_non_scalar_and_nan() {
    let tape = Tape::new();
    let x = tape.leaf(vec![1.0, 2.0], &[2]);
    assert!(matches!(tape.backward(&x), Err(Error::InvalidInput(_))));
    let bad = x.scale(-1.0).log().sum();
    assert!(matches!(tape.backward(&bad), Err(Error::Numerical(_))));
}

#[test]
fn shape_mismatch_is_invalid_input() {
    let tape = Tape::new();
    let a = tape.leaf(vec![0.0; 6], &[2, 3]);
    let b = tape.leaf(vec![0.0; 6], &[3, 2]);
    assert!(matches!(a.add(&b), Err(Error::InvalidInput(_))));
    assert!(matches!(a.matmul(&a), Err(Error::InvalidInput(_))));
    assert!(matches!(a.reshape(&[4]), Err(Error::InvalidInput(_))));
    assert!(matches!(a.slice(1, 2, 4), Err(Error::InvalidInput(_))));
}

#[test]
fn backward_is_bit_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let w = input(&mut rng, &[6, 5]);
    let x = input(&mut rng, &[4, 6]);
    let run = || {
        let tape = Tape::new();
        let wv = tape.leaf(w.0.clone(), &w.1);
        let xv = tape.leaf(x.0.clone(), &x.1);
        let y = xv.matmul(&wv).unwrap().layer_norm(1e-5).softmax();
        let loss = project(y, 1);
        let g = tape.backward(&loss).unwrap();
        (g.get(&wv).unwrap().to_vec(), g.get(&xv).unwrap().to_vec())
    };
    let (a, b) = (run(), run());
    assert_eq!(
        a.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(
        a.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn elementwise_primitives_pass_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = input(&mut rng, &[3, 4]);
    let b = input(&mut rng, &[3, 4]);
    let row = input(&mut rng, &[4]);
    let pos = positive(&mut rng, &[3, 4]);
    assert_grad("add", &[a.clone(), b.clone()], |_, v| {
        Ok(project(v[0].add(&v[1])?, 1))
    });
    assert_grad("sub", &[a.clone(), b.clone()], |_, v| {
        Ok(project(v[0].sub(&v[1])?, 2))
    });
    assert_grad("mul", &[a.clone(), b.clone()], |_, v| {
        Ok(project(v[0].mul(&v[1])?, 3))
    });
    assert_grad("div", &[a.clone(), pos.clone()], |_, v| {
        Ok(project(v[0].div(&v[1])?, 4))
    });
    assert_grad("broadcast add", &[a.clone(), row.clone()], |_, v| {
        Ok(project(v[0].add(&v[1])?, 5))
    });
    assert_grad("broadcast mul", &[row.clone(), a.clone()], |_, v| {
        Ok(project(v[0].mul(&v[1])?, 6))
    });
    assert_grad("neg/scale/shift", std::slice::from_ref(&a), |_, v| {
        Ok(project(v[0].neg().scale(2.5).add_scalar(0.3), 7))
    });
    assert_grad("sigmoid", std::slice::from_ref(&a), |_, v| {
        Ok(project(v[0].sigmoid(), 8))
    });
    assert_grad("tanh", std::slice::from_ref(&a), |_, v| Ok(project(v[0].tanh(), 9)));
    assert_grad("exp", std::slice::from_ref(&a), |_, v| Ok(project(v[0].exp(), 10)));
    assert_grad("log", std::slice::from_ref(&pos), |_, v| Ok(project(v[0].log(), 11)));
    assert_grad("sqrt", std::slice::from_ref(&pos), |_, v| Ok(project(v[0].sqrt(), 12)));
    assert_grad("powf", std::slice::from_ref(&pos), |_, v| {
        Ok(project(v[0].powf(1.7), 13))
    });
    assert_grad("square", std::slice::from_ref(&a), |_, v| {
        Ok(project(v[0].square(), 14))
    });
    assert_grad("reciprocal", std::slice::from_ref(&pos), |_, v| {
        Ok(project(v[0].reciprocal(), 15))
    });
    // keep relu inputs away from the kink
    let away: Vec<f64> =
        a.0.iter()
            .map(|x| if x.abs() < 0.05 { 0.3 } else { *x })
            .collect();
    assert_grad("relu", &[(away, a.1.clone())], |_, v| {
        Ok(project(v[0].relu(), 16))
    });
}

#[test]
fn structural_primitives_pass_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = input(&mut rng, &[2, 3, 4]);
    let b = input(&mut rng, &[2, 4, 5]);
    let shared = input(&mut rng, &[4, 5]);
    let c = input(&mut rng, &[2, 2, 4]);
    assert_grad("batched matmul", &[a.clone(), b.clone()], |_, v| {
        Ok(project(v[0].matmul(&v[1])?, 1))
    });
    assert_grad("shared matmul", &[a.clone(), shared.clone()], |_, v| {
        Ok(project(v[0].matmul(&v[1])?, 2))
    });
    assert_grad("transpose", std::slice::from_ref(&a), |_, v| {
        Ok(project(v[0].transpose()?, 3))
    });
    assert_grad("reshape", std::slice::from_ref(&a), |_, v| {
        Ok(project(v[0].reshape(&[6, 4])?, 4))
    });
    assert_grad("concat axis 1", &[a.clone(), c.clone()], |_, v| {
        Ok(project(Var::concat(&[v[0], v[1]], 1)?, 5))
    });
    assert_grad("concat axis 2", &[a.clone(), a.clone()], |_, v| {
        Ok(project(Var::concat(&[v[0], v[1]], 2)?, 6))
    });
    assert_grad("slice", std::slice::from_ref(&a), |_, v| {
        Ok(project(v[0].slice(2, 1, 3)?, 7))
    });
    assert_grad("sum", std::slice::from_ref(&a), |_, v| Ok(v[0].square().sum()));
    assert_grad("mean", std::slice::from_ref(&a), |_, v| Ok(v[0].square().mean()));
    assert_grad("sum_axis 0", std::slice::from_ref(&a), |_, v| {
        Ok(project(v[0].sum_axis(0)?, 8))
    });
    assert_grad("sum_axis 1", std::slice::from_ref(&a), |_, v| {
        Ok(project(v[0].sum_axis(1)?, 9))
    });
    assert_grad("softmax", std::slice::from_ref(&a), |_, v| {
        Ok(project(v[0].softmax(), 10))
    });
    assert_grad("masked softmax", &[input(&mut rng, &[2, 4, 4])], |t, v| {
        let mut mask = vec![0.0; 16];
        for i in 0..4 {
            for j in i + 1..4 {
                mask[i * 4 + j] = MASKED_LOGIT;
            }
        }
        let mask = t.constant(mask, &[4, 4]);
        Ok(project(v[0].masked_softmax(&mask)?, 11))
    });
    assert_grad("layer_norm", std::slice::from_ref(&a), |_, v| {
        Ok(project(v[0].layer_norm(1e-5), 12))
    });
}

#[test]
fn solve_passes_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (b, n, k) = (2, 4, 3);
    let mut a = input(&mut rng, &[b, n, n]);
    for bi in 0..b {
        for i in 0..n {
            a.0[bi * n * n + i * n + i] += 2.5;
        }
    }
    let rhs = input(&mut rng, &[b, n, k]);
    assert_grad("solve", &[a, rhs], |_, v| {
        Ok(project(v[0].solve(&v[1])?, 1))
    });
}

#[test]
fn complex_helpers_pass_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let shape = [2, 3, 3];
    let mut ins: Vec<_> = (0..4).map(|_| input(&mut rng, &shape)).collect();
    for bi in 0..2 {
        for i in 0..3 {
            ins[0].0[bi * 9 + i * 3 + i] += 2.0;
        }
    }
    assert_grad("complex matmul", &ins, |_, v| {
        let a = CVar::new(v[0], v[1])?;
        let b = CVar::new(v[2], v[3])?;
        let c = a.matmul(&b.conj_transpose()?)?;
        project(c.re, 1).add(&project(c.im, 2))
    });
    assert_grad("complex solve", &ins, |_, v| {
        let a = CVar::new(v[0], v[1])?;
        let b = CVar::new(v[2], v[3])?;
        let x = a.solve(&b)?;
        project(x.re, 3).add(&project(x.im, 4))
    });
    assert_grad("complex reciprocal", &ins[2..], |_, v| {
        let z = CVar::new(v[0].add_scalar(2.0), v[1])?.reciprocal()?;
        project(z.re, 5).add(&project(z.im, 6))
    });
}

#[test]
fn three_layer_mlp_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ins = vec![
        input(&mut rng, &[5, 6]),
        input(&mut rng, &[6, 8]),
        input(&mut rng, &[8]),
        input(&mut rng, &[8, 8]),
        input(&mut rng, &[8]),
        input(&mut rng, &[8, 1]),
    ];
    assert_grad("mlp", &ins, |_, v| {
        let h1 = v[0].matmul(&v[1])?.add(&v[2])?.tanh();
        let h2 = h1.matmul(&v[3])?.add(&v[4])?.sigmoid();
        let out = h2.matmul(&v[5])?;
        Ok(out.square().mean())
    });
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn softmax_rows_are_distributions(vals in prop::collection::vec(-30.0f64..30.0, 12)) {
        let tape = Tape::new();
        let x = tape.constant(vals, &[3, 4]);
        let y = x.softmax().value();
        for row in y.chunks(4) {
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_gradient_matches_fd(seed in 0u64..1000, n in 1usize..4, k in 1usize..4, m in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ins = vec![input(&mut rng, &[n, k]), input(&mut rng, &[k, m])];
        let r = check_gradients(&ins, H, None, |_, v| Ok(project(v[0].matmul(&v[1])?, seed))).unwrap();
        prop_assert!(r.max_rel_error() < TOL);
    }
}
