use pgcs::nnkit::{bce_cell, AdamHyper, AdamState, DenseNet, Tape, Tensor};
use pgcs::oracle::{central_difference, relative_error};
use pgcs::rng::{RngStreams, Stream};
use pgcs::selftest::{pipeline_gradient_check, soft_bps_gradient_error, GradCheckSetup};

#[test]
fn square_has_derivative_six_at_three() {
    let mut tape = Tape::new();
    let w = tape.param(Tensor::scalar(3.0));
    let sq = tape.mul(w, w).unwrap();
    let loss = tape.sum(sq).unwrap();
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(w).unwrap().data(), &[6.0]);
}

#[test]
fn sigmoid_unit_bce_gradient_is_closed_form() {
    // LLR = w.x + b; P(b=1) = sigmoid(-LLR)
    let x = [0.3, -1.2, 2.0];
    for (bit, w0) in [(0u8, [0.5, 0.1, -0.4]), (1, [-0.2, 0.7, 0.3])] {
        let mut tape = Tape::new();
        let xv = tape.constant(Tensor::row(x.to_vec()));
        let w = tape.param(Tensor::new(1, 3, w0.to_vec()).unwrap());
        let b = tape.param(Tensor::new(1, 1, vec![0.05]).unwrap());
        let llr = tape.affine(xv, w, b).unwrap();
        let loss = tape.bce_with_logits(llr, &[bit], &[false]).unwrap();
        let g = tape.backward(loss).unwrap();
        let l: f64 = w0.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + 0.05;
        let p1 = 1.0 / (1.0 + l.exp());
        let y = bit as f64;
        for (i, xi) in x.iter().enumerate() {
            let expect = -(p1 - y) * xi;
            assert!((g.get(w).unwrap().data()[i] - expect).abs() < 1e-12);
        }
        assert!((bce_cell(l, bit) - tape.value(loss).data()[0]).abs() < 1e-12);
    }
}

#[test]
fn dense_net_gradients_match_central_differences() {
    let mut rng = RngStreams::new(12);
    let net = DenseNet::init(&[4, 8, 8, 3], rng.get(Stream::Init)).unwrap();
    let input = Tensor::new(5, 4, (0..20).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let bits: Vec<u8> = (0..15).map(|i| (i % 3 == 0) as u8).collect();
    let mask = vec![false; 5];
    let loss_of = |n: &DenseNet| {
        let mut tape = Tape::new();
        let vars = n.attach(&mut tape);
        let x = tape.constant(input.clone());
        let out = n.forward_on(&mut tape, &vars, x).unwrap();
        let loss = tape.bce_with_logits(out, &bits, &mask).unwrap();
        tape.value(loss).data()[0]
    };
    let mut tape = Tape::new();
    let vars = net.attach(&mut tape);
    let x = tape.constant(input.clone());
    let out = net.forward_on(&mut tape, &vars, x).unwrap();
    let loss = tape.bce_with_logits(out, &bits, &mask).unwrap();
    let grads = net.gradients(&tape.backward(loss).unwrap(), &vars);
    for (p, g) in grads.iter().enumerate() {
        for i in (0..g.len()).step_by(3) {
            let numeric = central_difference(
                |v| {
                    let mut n = net.clone();
                    n.params_mut()[p][i] = v;
                    loss_of(&n)
                },
                net.params()[p].data()[i],
                1e-6,
            );
            assert!(relative_error(g[i], numeric, 1e-6) < 1e-6, "param {p}[{i}]: {} vs {numeric}", g[i]);
        }
    }
}

#[test]
fn adam_first_step_and_zero_gradient() {
    let mut w = vec![0.0];
    let mut adam = AdamState::new(AdamHyper::default(), &[1]);
    adam.step(&mut [&mut w[..]], &[vec![1.0]]).unwrap();
    assert!((w[0] + 9.9999e-4).abs() < 1e-8, "{}", w[0]);
    let before = w[0];
    adam.step(&mut [&mut w[..]], &[vec![0.0]]).unwrap();
    assert_eq!(adam.step, 2);
    // second step still moves along the first moment
    assert!(w[0] < before);
    let mut z = vec![0.5];
    let mut fresh = AdamState::new(AdamHyper::default(), &[1]);
    fresh.step(&mut [&mut z[..]], &[vec![0.0]]).unwrap();
    assert_eq!(z[0], 0.5);
    assert_eq!(fresh.step, 1);
}

#[test]
fn soft_bps_gradients_match_finite_differences_across_seeds() {
    for seed in [1, 2, 3] {
        let err = soft_bps_gradient_error(seed).unwrap();
        assert!(err < 1e-5, "seed {seed}: {err}");
    }
}

#[test]
fn pipeline_gradients_hold_for_other_orders_and_seeds() {
    for (m, seed) in [(2, 5), (3, 23), (4, 31)] {
        let setup = GradCheckSetup {
            m,
            seed,
            coords: 40,
            ..GradCheckSetup::default()
        };
        let r = pipeline_gradient_check(&setup, 1e-4).unwrap();
        assert!(r.failures.is_empty(), "m={m}: {:?}", r.failures);
        assert_eq!(r.checked, 40);
    }
}
