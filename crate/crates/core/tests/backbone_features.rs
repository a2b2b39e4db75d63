use pemp::backbone::{ForwardCtx, NetSpec};
use pemp::params::ParamSet;
use pemp_tensor::{ConvSpec, Mode, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn spec(in_channels: usize, comm: bool, dilations: Vec<usize>) -> NetSpec {
    NetSpec {
        in_channels,
        widths: [4, 6, 6, 8],
        feature_dim: 5,
        aspp_dilations: dilations,
        dropout: 0.5,
        comm,
        comm_masked_mean: false,
    }
}

fn image() -> Tensor {
    Tensor::from_fn(&[3, 24, 24], |i| ((i as f64 * 0.31).sin() + 1.0) / 2.0)
}

fn features(s: &NetSpec, p: &ParamSet, label: Option<&Tensor>, mode: Mode, seed: u64) -> Tensor {
    let tape = Tape::new();
    let bound = p.bind(&tape, |_| false);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ctx = ForwardCtx { mode, rng: &mut rng };
    let f = s.extract_features(&tape, &bound, &image(), label, &mut ctx).unwrap();
    (*f.value()).clone()
}

#[test]
fn zero_parameters_give_zero_features() {
    for (c, comm) in [(3, false), (4, true)] {
        let s = spec(c, comm, vec![1, 2, 4]);
        let mut p = s.init(&mut ChaCha8Rng::seed_from_u64(1), false);
        let names: Vec<String> = p.names().map(str::to_string).collect();
        for n in names {
            let t = p.get_mut(&n).unwrap();
            *t = Tensor::zeros(t.shape());
        }
        let label = Tensor::ones(&[1, 24, 24]);
        let f = features(&s, &p, (c == 4).then_some(&label), Mode::Eval, 0);
        assert_eq!(f.shape(), &[5, 6, 6]);
        assert!(f.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn label_channel_changes_features() {
    let s = spec(4, false, vec![1, 2, 4]);
    let mut p = s.init(&mut ChaCha8Rng::seed_from_u64(2), false);
    let k = p.get_mut("backbone.block1.conv1.kernel").unwrap();
    let c_out = k.shape()[0];
    for o in 0..c_out {
        k.set(&[o, 3, 1, 1], 1.0);
    }
    let ones = Tensor::ones(&[1, 24, 24]);
    let zeros = Tensor::zeros(&[1, 24, 24]);
    let a = features(&s, &p, Some(&ones), Mode::Eval, 0);
    let b = features(&s, &p, Some(&zeros), Mode::Eval, 0);
    assert_eq!(a.shape(), b.shape());
    assert!(a.max_abs_diff(&b) > 1e-6);
}

#[test]
fn eval_is_deterministic_and_train_follows_the_rng() {
    let s = spec(3, false, vec![1, 2, 4]);
    let p = s.init(&mut ChaCha8Rng::seed_from_u64(3), false);
    assert_eq!(
        features(&s, &p, None, Mode::Eval, 1),
        features(&s, &p, None, Mode::Eval, 2)
    );
    assert_eq!(
        features(&s, &p, None, Mode::Train, 5),
        features(&s, &p, None, Mode::Train, 5)
    );
    assert_ne!(
        features(&s, &p, None, Mode::Train, 5),
        features(&s, &p, None, Mode::Eval, 5)
    );
}

#[test]
fn shared_unit_dilation_aspp_is_one_conv() {
    let d = 3;
    let s = NetSpec {
        feature_dim: d,
        ..spec(3, false, vec![1, 1, 1])
    };
    let mut p = s.init(&mut ChaCha8Rng::seed_from_u64(4), false);
    let k = p.get("purifier.aspp1.kernel").unwrap().clone();
    let b = Tensor::from_fn(&[d], |i| 0.1 * i as f64 - 0.05);
    for i in 1..=3 {
        p.insert(format!("purifier.aspp{i}.kernel"), k.clone());
        p.insert(format!("purifier.aspp{i}.bias"), b.clone());
    }
    let proj = p.get("purifier.project.kernel").unwrap().clone();
    let proj_bias = p.get("purifier.project.bias").unwrap().clone();
    // Summing the projection over the three identical branches.
    let summed = Tensor::from_fn(&[d, d, 1, 1], |i| {
        let (o, c) = (i / d, i % d);
        (0..3).map(|br| proj.get(&[o, br * d + c, 0, 0])).sum()
    });
    let x = Tensor::from_fn(&[d, 5, 5], |i| (i as f64 * 0.77).cos());

    let tape = Tape::new();
    let bound = p.bind(&tape, |_| false);
    let via_aspp = s.aspp(&bound, tape.constant(x.clone())).unwrap().value();
    let single = tape
        .constant(x)
        .conv2d(tape.constant(k), Some(tape.constant(b)), ConvSpec::same(3, 1))
        .unwrap()
        .relu()
        .unwrap()
        .conv2d(
            tape.constant(summed),
            Some(tape.constant(proj_bias)),
            ConvSpec::default(),
        )
        .unwrap()
        .value();
    assert!(via_aspp.max_abs_diff(&single) <= 1e-10);
}
