mod common;

use common::*;
use continual::significance::{
    accumulate_signal, estimate_fisher_diag, fisher_labels, FisherLabels, SignificanceKind,
};
use continual::Network;
use ndarray::{s, Array2};

/// Literal per-connection means: `mean_k |x_kj · w_ij|` for weights and
/// `mean_k |y_ki|` for biases, in parameter order.
fn signal_oracle(net: &Network, x: &Array2<f64>) -> Vec<f64> {
    let outputs = naive_forward(net, x);
    let n = x.nrows() as f64;
    let mut out = Vec::new();
    for (k, layer) in net.params.layers.iter().enumerate() {
        let input = if k == 0 { x } else { &outputs[k - 1] };
        let (fan_out, fan_in) = layer.weights.dim();
        for i in 0..fan_out {
            for j in 0..fan_in {
                let total: f64 = (0..x.nrows())
                    .map(|r| (input[[r, j]] * layer.weights[[i, j]]).abs())
                    .sum();
                out.push(total / n);
            }
        }
        for i in 0..fan_out {
            let total: f64 = (0..x.nrows()).map(|r| outputs[k][[r, i]].abs()).sum();
            out.push(total / n);
        }
    }
    out
}

fn small_nets() -> Vec<Vec<usize>> {
    vec![
        vec![3, 4, 2],
        vec![2, 3, 3, 2],
        vec![5, 2, 3],
        vec![4, 6, 2],
        vec![1, 5, 4],
        vec![6, 3, 2, 2],
    ]
}

#[test]
fn signal_matches_explicit_loops() {
    for (case, sizes) in small_nets().into_iter().enumerate() {
        let net = random_net(&sizes, case as u64);
        assert!(net.params.len() <= 50, "{sizes:?} too large");
        let x = random_inputs(37, sizes[0], 10 + case as u64);
        let store = accumulate_signal(&net, x.view()).unwrap();
        assert_eq!(store.kind, SignificanceKind::Signal);
        assert_eq!(store.examples, 37);
        let want = signal_oracle(&net, &x);
        for (k, (got, want)) in store.values.values().zip(want).enumerate() {
            assert!(
                (got - want).abs() <= 1e-12,
                "{sizes:?} param {k}: {got} vs {want}"
            );
        }
    }
}

#[test]
fn signal_is_independent_of_scan_chunking() {
    let net = random_net(&[10, 8, 4], 1);
    let x = random_inputs(1234, 10, 2);
    let whole = accumulate_signal(&net, x.view()).unwrap();
    let want = signal_oracle(&net, &x);
    for (got, want) in whole.values.values().zip(want) {
        assert!((got - want).abs() <= 1e-12);
    }
}

/// Squared central-difference gradient of `log p(label | row)` per
/// parameter, averaged over rows.
fn fisher_oracle(net: &Network, x: &Array2<f64>, labels: &[usize], h: f64) -> Vec<f64> {
    let mut acc = vec![0.0; net.params.len()];
    for (r, &label) in labels.iter().enumerate().take(x.nrows()) {
        let row = x.slice(s![r..r + 1, ..]).to_owned();
        let label = [label];
        for (k, a) in acc.iter_mut().enumerate() {
            let d = central_difference(net, k, h, |n| -loss(n, &row, &label));
            *a += d * d;
        }
    }
    acc.iter().map(|a| a / x.nrows() as f64).collect()
}

#[test]
fn fisher_matches_squared_finite_differences() {
    for (case, sizes) in small_nets().into_iter().enumerate() {
        let net = random_net(&sizes, 40 + case as u64);
        let x = random_inputs(25, sizes[0], 60 + case as u64);
        let truth = random_labels(25, *sizes.last().unwrap(), 80 + case as u64);
        let seed = 1000 + case as u64;
        let store =
            estimate_fisher_diag(&net, x.view(), &truth, FisherLabels::Sampled, seed).unwrap();
        assert_eq!(store.kind, SignificanceKind::Fisher);
        let sampled = fisher_labels(&net, x.view(), &truth, FisherLabels::Sampled, seed).unwrap();
        let want = fisher_oracle(&net, &x, &sampled, 1e-5);
        for (k, (got, want)) in store.values.values().zip(want).enumerate() {
            let err = rel_err(got, want, 1e-8);
            assert!(err < 1e-3, "{sizes:?} param {k}: {got} vs {want} (rel {err:e})");
        }
    }
}

#[test]
fn fisher_with_true_labels_matches_oracle() {
    let net = random_net(&[4, 5, 3], 9);
    let x = random_inputs(30, 4, 10);
    let truth = random_labels(30, 3, 11);
    let store = estimate_fisher_diag(&net, x.view(), &truth, FisherLabels::True, 0).unwrap();
    let want = fisher_oracle(&net, &x, &truth, 1e-5);
    for (got, want) in store.values.values().zip(want) {
        assert!(rel_err(got, want, 1e-8) < 1e-3, "{got} vs {want}");
    }
}

#[test]
fn sampled_labels_follow_model_probabilities() {
    // A network whose output ignores the input: class probabilities are the
    // softmax of its output biases.
    let mut net = Network::init(&[2, 3], 0).unwrap();
    net.params.layers[0].weights.fill(0.0);
    net.params.layers[0].biases = ndarray::array![0.0, 1.0, 2.0];
    let x = random_inputs(20_000, 2, 1);
    let labels = fisher_labels(&net, x.view(), &[], FisherLabels::Sampled, 3).unwrap();
    let z: f64 = [0.0f64, 1.0, 2.0].iter().map(|v| v.exp()).sum();
    for c in 0..3 {
        let freq = labels.iter().filter(|&&l| l == c).count() as f64 / labels.len() as f64;
        let p = (c as f64).exp() / z;
        assert!((freq - p).abs() < 0.015, "class {c}: {freq} vs {p}");
    }
}
