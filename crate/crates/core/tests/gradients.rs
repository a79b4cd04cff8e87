mod common;

use common::*;
use fresh::nnet::{LayerSpec, Network};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn isolated(spec: LayerSpec, rows: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::new(&[spec], &mut rng).unwrap();
    let x = random_matrix(rows, spec.input_dim, &mut rng);
    let coeffs = random_matrix(rows, spec.output_dim, &mut rng);
    check_network(&mut net, &x, &linear_loss(coeffs))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dense_alone(i in 1usize..5, o in 1usize..5, n in 1usize..5, seed: u64) {
        prop_assert!(isolated(LayerSpec::dense(i, o), n, seed) <= GRAD_TOLERANCE);
    }

    #[test]
    fn relu_alone(d in 1usize..6, n in 1usize..5, seed: u64) {
        prop_assert!(isolated(LayerSpec::relu(d), n, seed) <= GRAD_TOLERANCE);
    }

    #[test]
    fn batchnorm_alone(d in 1usize..5, n in 2usize..7, seed: u64) {
        prop_assert!(isolated(LayerSpec::batchnorm(d), n, seed) <= GRAD_TOLERANCE);
    }

    #[test]
    fn softmax_alone(d in 2usize..6, n in 1usize..5, seed: u64) {
        prop_assert!(isolated(LayerSpec::softmax(d), n, seed) <= GRAD_TOLERANCE);
    }

    #[test]
    fn sigmoid_alone(d in 1usize..5, n in 1usize..5, seed: u64) {
        prop_assert!(isolated(LayerSpec::sigmoid(d), n, seed) <= GRAD_TOLERANCE);
    }

    #[test]
    fn composed_action_loss(seed: u64) {
        prop_assert!(random_action_check(&mut ChaCha8Rng::seed_from_u64(seed)) <= GRAD_TOLERANCE);
    }

    #[test]
    fn composed_state_loss(seed: u64) {
        prop_assert!(random_state_check(&mut ChaCha8Rng::seed_from_u64(seed)) <= GRAD_TOLERANCE);
    }

    #[test]
    fn td_update_follows_the_loss_gradient(seed: u64) {
        prop_assert!(random_td_check(&mut ChaCha8Rng::seed_from_u64(seed)) <= GRAD_TOLERANCE);
    }
}

#[test]
fn batchnorm_eval_mode_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut net = Network::new(&[LayerSpec::batchnorm(3)], &mut rng).unwrap();
    let x = random_matrix(4, 3, &mut rng);
    for _ in 0..5 {
        net.forward(&random_matrix(6, 3, &mut rng), fresh::nnet::Mode::Train).unwrap();
    }
    let coeffs = random_matrix(4, 3, &mut rng);
    let loss = linear_loss(coeffs.clone());
    let y = net.infer(&x).unwrap();
    let (l0, _) = loss(&y);
    net.zero_grad();
    net.forward(&x, fresh::nnet::Mode::Eval).unwrap();
    let dx = net.backward(&coeffs).unwrap();
    for r in 0..4 {
        for c in 0..3 {
            let mut xp = x.clone();
            xp[[r, c]] += FD_STEP;
            let (lp, _) = loss(&net.infer(&xp).unwrap());
            let mut xm = x.clone();
            xm[[r, c]] -= FD_STEP;
            let (lm, _) = loss(&net.infer(&xm).unwrap());
            assert!(rel_err(dx[[r, c]], (lp - lm) / (2.0 * FD_STEP)) <= GRAD_TOLERANCE, "l0 {l0}");
        }
    }
    let _ = rng.random::<u8>();
}
