#![allow(dead_code)]

use fresh::agent::{QNetworkPair, TdSample};
use fresh::buffers::Label;
use fresh::fnn::{action_loss, action_loss_grad, state_loss, state_loss_grad};
use fresh::nnet::{LayerSpec, Mode, Network};
use ndarray::Array2;
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Denominator floor for relative errors of gradients that are essentially zero.
pub const REL_FLOOR: f64 = 1e-6;
/// Multiple of the central-difference rounding error `ε·|L|/h` below which
/// a gradient counts as zero.
pub const ROUNDING_MARGIN: f64 = 100.0;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    rel_err_above(analytic, numeric, REL_FLOOR)
}

fn rel_err_above(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Relative-error floor for differences of a loss of magnitude `loss`: a
/// mismatch within the rounding bound stays within tolerance.
pub fn floor_for(loss: f64) -> f64 {
    REL_FLOOR.max(ROUNDING_MARGIN * f64::EPSILON * loss.abs().max(1.0) / FD_STEP / GRAD_TOLERANCE)
}

/// Steps tried in turn when a central difference disagrees; a relu input
/// within one step of its kink spoils the larger steps only.
pub const FD_STEPS: [f64; 3] = [FD_STEP, FD_STEP / 10.0, FD_STEP / 100.0];

/// Smallest relative error between `analytic` and central differences of
/// `f` over [`FD_STEPS`], each judged against its own rounding floor.
fn fd_err(analytic: f64, loss: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let mut best = f64::INFINITY;
    for h in FD_STEPS {
        let numeric = (f(h) - f(-h)) / (2.0 * h);
        best = best.min(rel_err_above(analytic, numeric, floor_for(loss) * FD_STEP / h));
        if best <= GRAD_TOLERANCE {
            break;
        }
    }
    best
}

pub type LossFn<'a> = dyn Fn(&Array2<f64>) -> (f64, Array2<f64>) + 'a;

fn set_param(net: &mut Network, mut index: usize, value: f64) -> f64 {
    for p in net.params_mut() {
        if index < p.values.len() {
            let old = p.values[index];
            p.values[index] = value;
            return old;
        }
        index -= p.values.len();
    }
    panic!("parameter index out of range");
}

fn get_param(net: &Network, index: usize) -> f64 {
    net.params().flat_map(|p| p.values.iter().copied()).nth(index).expect("parameter index out of range")
}

fn loss_at(net: &mut Network, x: &Array2<f64>, loss: &LossFn<'_>) -> f64 {
    let out = net.forward(x, Mode::Train).unwrap();
    loss(&out).0
}

/// Largest relative error between backprop and central differences, over
/// every parameter and every input coordinate.
pub fn check_network(net: &mut Network, x: &Array2<f64>, loss: &LossFn<'_>) -> f64 {
    net.zero_grad();
    let out = net.forward(x, Mode::Train).unwrap();
    let (base, upstream) = loss(&out);
    let dx = net.backward(&upstream).unwrap();
    let analytic: Vec<f64> = net.params().flat_map(|p| p.grad.clone()).collect();

    let mut worst = 0.0f64;
    for (i, &g) in analytic.iter().enumerate() {
        let v = get_param(net, i);
        worst = worst.max(fd_err(g, base, |h| {
            set_param(net, i, v + h);
            let l = loss_at(net, x, loss);
            set_param(net, i, v);
            l
        }));
    }
    let mut xp = x.clone();
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let v = x[[r, c]];
        worst = worst.max(fd_err(dx[[r, c]], base, |h| {
            xp[[r, c]] = v + h;
            let l = loss_at(net, &xp, loss);
            xp[[r, c]] = v;
            l
        }));
    }
    worst
}

pub fn random_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.5..1.5))
}

/// Dense layers with optional batchnorm and relu between them, ending in `out` units.
pub fn random_body<R: Rng>(input: usize, out: usize, rng: &mut R) -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    let mut width = input;
    for _ in 0..rng.random_range(1..=2) {
        let next = rng.random_range(2..=6);
        specs.push(LayerSpec::dense(width, next));
        if rng.random_bool(0.6) {
            specs.push(LayerSpec::batchnorm(next));
        }
        specs.push(LayerSpec::relu(next));
        width = next;
    }
    specs.push(LayerSpec::dense(width, out));
    specs
}

/// Fresh networks have zero biases, which can park a relu input exactly on
/// its kink; central differences are meaningless there.
pub fn jittered<R: Rng>(specs: &[LayerSpec], rng: &mut R) -> Network {
    let mut net = Network::new(specs, rng).unwrap();
    for p in net.params_mut() {
        p.values.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
    }
    net
}

pub fn random_label<R: Rng>(rng: &mut R) -> Label {
    if rng.random_bool(0.5) {
        Label::Good
    } else {
        Label::Bad
    }
}

/// Mean action loss over the rows of a softmax output.
pub fn action_batch_loss(actions: Vec<usize>, labels: Vec<Label>) -> impl Fn(&Array2<f64>) -> (f64, Array2<f64>) {
    move |probs: &Array2<f64>| {
        let n = probs.nrows() as f64;
        let mut total = 0.0;
        let mut grad = Array2::zeros(probs.raw_dim());
        for (i, row) in probs.rows().into_iter().enumerate() {
            let p = row.to_vec();
            total += action_loss(&p, actions[i], labels[i]).unwrap() / n;
            for (j, g) in action_loss_grad(&p, actions[i], labels[i]).into_iter().enumerate() {
                grad[[i, j]] = g / n;
            }
        }
        (total, grad)
    }
}

/// Mean binary cross-entropy over a single sigmoid column.
pub fn state_batch_loss(labels: Vec<Label>) -> impl Fn(&Array2<f64>) -> (f64, Array2<f64>) {
    move |g: &Array2<f64>| {
        let n = g.nrows() as f64;
        let mut total = 0.0;
        let mut grad = Array2::zeros(g.raw_dim());
        for i in 0..g.nrows() {
            total += state_loss(g[[i, 0]], labels[i]) / n;
            grad[[i, 0]] = state_loss_grad(g[[i, 0]], labels[i]) / n;
        }
        (total, grad)
    }
}

/// `Σ c_ij · y_ij` for fixed random coefficients.
pub fn linear_loss(coeffs: Array2<f64>) -> impl Fn(&Array2<f64>) -> (f64, Array2<f64>) {
    move |y: &Array2<f64>| ((y * &coeffs).sum(), coeffs.clone())
}

pub fn random_action_check<R: Rng>(rng: &mut R) -> f64 {
    let (d, k, n) = (rng.random_range(2..=5), rng.random_range(2..=4), rng.random_range(2..=6));
    let mut specs = random_body(d, k, rng);
    specs.push(LayerSpec::softmax(k));
    let mut net = jittered(&specs, rng);
    let x = random_matrix(n, d, rng);
    let actions = (0..n).map(|_| rng.random_range(0..k)).collect();
    let labels = (0..n).map(|_| random_label(rng)).collect();
    check_network(&mut net, &x, &action_batch_loss(actions, labels))
}

pub fn random_state_check<R: Rng>(rng: &mut R) -> f64 {
    let (d, n) = (rng.random_range(2..=5), rng.random_range(2..=6));
    let mut specs = random_body(d, 1, rng);
    specs.push(LayerSpec::sigmoid(1));
    let mut net = jittered(&specs, rng);
    let x = random_matrix(n, d, rng);
    let labels = (0..n).map(|_| random_label(rng)).collect();
    check_network(&mut net, &x, &state_batch_loss(labels))
}

/// Compares the update `td_update` applies at learning rate 1 with central
/// differences of the mean squared TD error against fixed targets.
pub fn random_td_check<R: Rng>(rng: &mut R) -> f64 {
    let (d, a, n) = (rng.random_range(2..=5), rng.random_range(2..=4), rng.random_range(2..=6));
    let online = jittered(&random_body(d, a, rng), rng);
    let mut target = online.clone();
    for p in target.params_mut() {
        p.values.iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
    }
    let mut pair = QNetworkPair { online, target };
    let obs = random_matrix(n, d, rng);
    let next = random_matrix(n, d, rng);
    let rows: Vec<Vec<f64>> = obs.rows().into_iter().map(|r| r.to_vec()).collect();
    let next_rows: Vec<Vec<f64>> = next.rows().into_iter().map(|r| r.to_vec()).collect();
    let batch: Vec<TdSample<'_>> = (0..n)
        .map(|i| TdSample {
            observation: &rows[i],
            action: rng.random_range(0..a),
            reward: rng.random_range(-1.0..1.0),
            next_observation: &next_rows[i],
            terminal: rng.random_bool(0.3),
        })
        .collect();
    let gamma = 0.99;
    let targets = pair.double_q_targets(&batch, gamma).unwrap();
    let actions: Vec<usize> = batch.iter().map(|s| s.action).collect();
    let td_loss = |net: &mut Network| {
        let q = net.forward(&obs, Mode::Train).unwrap();
        (0..n).map(|i| (q[[i, actions[i]]] - targets[i]).powi(2)).sum::<f64>() / n as f64
    };

    let mut probe = pair.online.clone();
    let expected_loss = td_loss(&mut probe);
    let before = pair.online.flat_params();
    let reported = pair.td_update(&batch, gamma, 1.0).unwrap();
    let after = pair.online.flat_params();
    let mut worst = rel_err(reported, expected_loss);
    for i in 0..before.len() {
        let analytic = before[i] - after[i];
        let v = get_param(&probe, i);
        worst = worst.max(fd_err(analytic, expected_loss, |h| {
            set_param(&mut probe, i, v + h);
            let l = td_loss(&mut probe);
            set_param(&mut probe, i, v);
            l
        }));
    }
    worst
}
