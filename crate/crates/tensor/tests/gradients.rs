use pemp_tensor::gradcheck::{check_gradients, primitive_cases, worst_rel_err};
use pemp_tensor::{ConvSpec, Tape, Tensor};

#[test]
fn every_primitive_passes_finite_differences() {
    for seed in [1, 2, 3] {
        for case in primitive_cases(seed) {
            assert!(
                case.param_count() <= 64,
                "{} has {} params",
                case.name,
                case.param_count()
            );
            let err = case.run(1e-6).unwrap();
            assert!(err <= 1e-4, "{} (seed {seed}): rel err {err:e}", case.name);
        }
    }
}

#[test]
fn softmax_cross_entropy_gradient_is_probs_minus_onehot() {
    let z = Tensor::new(&[4], vec![0.3, -1.2, 2.0, 0.5]).unwrap();
    let y = Tensor::new(&[4], vec![0.0, 1.0, 0.0, 0.0]).unwrap();

    let tape = Tape::new();
    let zv = tape.param(z.clone());
    let p = zv.softmax(0).unwrap();
    let loss = p
        .ln()
        .unwrap()
        .mul(tape.constant(y.clone()))
        .unwrap()
        .sum()
        .unwrap()
        .neg()
        .unwrap();
    let probs = p.value();
    let grads = tape.backward(loss).unwrap();
    let g = grads.get(zv).unwrap();
    for i in 0..4 {
        assert!((g.data()[i] - (probs.data()[i] - y.data()[i])).abs() < 1e-14);
    }

    let y2 = y.clone();
    let reports = check_gradients(&[z], 1e-6, move |t, v| {
        let yc = t.constant(y2.clone());
        v[0].softmax(0)?.ln()?.mul(yc)?.sum()?.neg()
    })
    .unwrap();
    assert!(worst_rel_err(&reports) <= 1e-6, "{reports:?}");
}

#[test]
fn conv2d_kernel_gradient_matches_finite_differences() {
    let x = Tensor::from_fn(&[2, 5, 5], |i| ((i * 7 % 13) as f64 - 6.0) / 6.0);
    let k = Tensor::from_fn(&[2, 2, 3, 3], |i| ((i * 5 % 11) as f64 - 5.0) / 10.0);
    let xc = x.clone();
    let reports = check_gradients(&[k], 1e-6, move |t, v| {
        let input = t.constant(xc.clone());
        let y = input.conv2d(v[0], None, ConvSpec::same(3, 1))?;
        y.mul(y)?.sum()
    })
    .unwrap();
    assert!(worst_rel_err(&reports) <= 1e-4, "{reports:?}");
}

#[test]
fn backward_of_independent_sum_splits() {
    let a = Tensor::from_fn(&[3, 2], |i| i as f64 * 0.3 - 0.5);
    let b = Tensor::from_fn(&[2, 2], |i| 1.0 - i as f64 * 0.4);

    let separate = |which: usize| {
        let tape = Tape::new();
        let av = tape.param(a.clone());
        let bv = tape.param(b.clone());
        let la = av.softmax(1).unwrap().mul(av).unwrap().sum().unwrap();
        let lb = bv.exp().unwrap().sum().unwrap();
        let g = tape.backward(if which == 0 { la } else { lb }).unwrap();
        (g.get(av).unwrap().clone(), g.get(bv).unwrap().clone())
    };
    let (ga, gb_zero) = separate(0);
    let (ga_zero, gb) = separate(1);
    assert_eq!(gb_zero, Tensor::zeros(&[2, 2]));
    assert_eq!(ga_zero, Tensor::zeros(&[3, 2]));

    let tape = Tape::new();
    let av = tape.param(a.clone());
    let bv = tape.param(b.clone());
    let la = av.softmax(1).unwrap().mul(av).unwrap().sum().unwrap();
    let lb = bv.exp().unwrap().sum().unwrap();
    let g = tape.backward(la.add(lb).unwrap()).unwrap();
    assert_eq!(g.get(av).unwrap(), &ga);
    assert_eq!(g.get(bv).unwrap(), &gb);
}
