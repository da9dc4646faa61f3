//! Helpers shared by the integration tests: small random networks, slow
//! reference implementations and synthetic MNIST-shaped data.

#![allow(dead_code)]

use std::io::Write;
use std::path::Path;

use continual::data::{Mnist, Split, INPUT_DIM, NUM_CLASSES};
use continual::Network;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random sizes: input, up to `max_hidden` hidden layers, output.
pub fn random_sizes(rng: &mut ChaCha8Rng, max_layers: usize, max_units: usize) -> Vec<usize> {
    let layers = rng.random_range(1..=max_layers);
    let mut sizes = vec![rng.random_range(1..=max_units)];
    for _ in 0..layers - 1 {
        sizes.push(rng.random_range(1..=max_units));
    }
    sizes.push(rng.random_range(2..=max_units.max(2)));
    sizes
}

/// He-initialised network with biases also drawn at random so that every
/// parameter takes part.
pub fn random_net(sizes: &[usize], seed: u64) -> Network {
    let mut net = Network::init(sizes, seed).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    for layer in &mut net.params.layers {
        layer.biases.mapv_inplace(|_| r.random_range(-0.5..0.5));
    }
    net
}

pub fn random_inputs(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_simple_fn((rows, cols), || r.random_range(-1.0..1.0))
}

pub fn random_labels(rows: usize, classes: usize, seed: u64) -> Vec<usize> {
    let mut r = rng(seed);
    (0..rows).map(|_| r.random_range(0..classes)).collect()
}

pub fn param(net: &Network, k: usize) -> f64 {
    net.params.values().nth(k).unwrap()
}

pub fn set_param(net: &mut Network, k: usize, v: f64) {
    *net.params.values_mut().nth(k).unwrap() = v;
}

/// Forward pass with explicit loops; returns every layer's post-activation
/// output, logits last.
pub fn naive_forward(net: &Network, x: &Array2<f64>) -> Vec<Array2<f64>> {
    let mut outputs = Vec::new();
    let mut cur = x.clone();
    let n = net.params.layers.len();
    for (k, layer) in net.params.layers.iter().enumerate() {
        let (fan_out, fan_in) = layer.weights.dim();
        let mut y = Array2::zeros((cur.nrows(), fan_out));
        for r in 0..cur.nrows() {
            for o in 0..fan_out {
                let mut z = layer.biases[o];
                for i in 0..fan_in {
                    z += layer.weights[[o, i]] * cur[[r, i]];
                }
                y[[r, o]] = if k + 1 < n { z.max(0.0) } else { z };
            }
        }
        outputs.push(y.clone());
        cur = y;
    }
    outputs
}

/// Neumaier-compensated sum.
pub fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Mean cross-entropy computed row by row with compensated sums.
pub fn reference_loss(logits: &Array2<f64>, labels: &[usize]) -> f64 {
    let per_row = logits.rows().into_iter().zip(labels).map(|(row, &y)| {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s = compensated_sum(row.iter().map(|&z| (z - m).exp()));
        m + s.ln() - row[y]
    });
    compensated_sum(per_row) / labels.len() as f64
}

/// Loss of `net` on a batch, through the library's forward pass.
pub fn loss(net: &Network, x: &Array2<f64>, labels: &[usize]) -> f64 {
    let logits = net.predict(x.view()).unwrap();
    continual::nn::loss_softmax_xent(logits.view(), labels).unwrap()
}

/// Central difference of `f` with respect to parameter `k`.
pub fn central_difference(net: &Network, k: usize, h: f64, f: impl Fn(&Network) -> f64) -> f64 {
    let mut probe = net.clone();
    let p = param(net, k);
    set_param(&mut probe, k, p + h);
    let up = f(&probe);
    set_param(&mut probe, k, p - h);
    let down = f(&probe);
    (up - down) / (2.0 * h)
}

/// Relative error with a floor so that two near-zero values compare as equal.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// MNIST-shaped data: each class is a fixed random blob of bright pixels on
/// a dark background, plus noise. Learnable in a few epochs.
pub fn synthetic_split(rows: usize, seed: u64) -> Split {
    let mut protos = rng(0xC1A55);
    let prototypes: Vec<Vec<f64>> = (0..NUM_CLASSES)
        .map(|_| {
            (0..INPUT_DIM)
                .map(|_| if protos.random_bool(0.15) { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    let mut r = rng(seed);
    let labels: Vec<usize> = (0..rows).map(|i| i % NUM_CLASSES).collect();
    let mut inputs = Array2::zeros((rows, INPUT_DIM));
    for (i, &y) in labels.iter().enumerate() {
        for j in 0..INPUT_DIM {
            let v = prototypes[y][j] * r.random_range(0.5..1.0) + r.random_range(0.0..0.2);
            inputs[[i, j]] = (v * 255.0).round().min(255.0) / 255.0;
        }
    }
    Split { inputs, labels }
}

pub fn synthetic_mnist(train: usize, test: usize) -> Mnist {
    Mnist {
        train: synthetic_split(train, 1),
        test: synthetic_split(test, 2),
    }
}

/// Writes `split` as a pair of raw IDX files.
pub fn write_idx(dir: &Path, images: &str, labels: &str, split: &Split) {
    let n = split.labels.len() as u32;
    let mut img = Vec::with_capacity(16 + split.inputs.len());
    img.extend(0x0803u32.to_be_bytes());
    img.extend(n.to_be_bytes());
    img.extend(28u32.to_be_bytes());
    img.extend(28u32.to_be_bytes());
    img.extend(split.inputs.iter().map(|&v| (v * 255.0).round() as u8));
    let mut lab = Vec::with_capacity(8 + split.labels.len());
    lab.extend(0x0801u32.to_be_bytes());
    lab.extend(n.to_be_bytes());
    lab.extend(split.labels.iter().map(|&l| l as u8));
    std::fs::File::create(dir.join(images))
        .and_then(|mut f| f.write_all(&img))
        .unwrap();
    std::fs::File::create(dir.join(labels))
        .and_then(|mut f| f.write_all(&lab))
        .unwrap();
}

pub fn write_mnist_dir(dir: &Path, mnist: &Mnist) {
    write_idx(dir, "train-images-idx3-ubyte", "train-labels-idx1-ubyte", &mnist.train);
    write_idx(dir, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", &mnist.test);
}
