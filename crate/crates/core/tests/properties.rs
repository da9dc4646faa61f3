mod common;

use common::*;
use continual::data::{make_split_task, Mnist, Permutation, Split, NUM_CLASSES};
use continual::methods::{attenuation, wva_step};
use continual::significance::{
    accumulate_signal, estimate_fisher_diag, FisherLabels, SignificanceKind, SignificanceStore,
};
use continual::{Gradients, Network, Params};
use ndarray::{concatenate, Array2, Axis};
use proptest::prelude::*;

fn arch() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..8, 2..5).prop_map(|mut v| {
        let last = v.len() - 1;
        v[last] = v[last].max(2);
        v
    })
}

fn store_for(sizes: &[usize], seed: u64, kind: SignificanceKind) -> SignificanceStore {
    let net = random_net(sizes, seed);
    let x = random_inputs(6, sizes[0], seed + 1);
    match kind {
        SignificanceKind::Signal => accumulate_signal(&net, x.view()).unwrap(),
        SignificanceKind::Fisher => {
            let labels = random_labels(6, *sizes.last().unwrap(), seed + 2);
            estimate_fisher_diag(&net, x.view(), &labels, FisherLabels::Sampled, seed).unwrap()
        }
    }
}

fn assert_close(a: &Params, b: &Params) -> Result<(), TestCaseError> {
    for (x, y) in a.values().zip(b.values()) {
        prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0));
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn significance_is_finite_and_non_negative(
        sizes in arch(),
        seed in any::<u64>(),
        scale in 0.0f64..100.0,
    ) {
        let net = random_net(&sizes, seed);
        let x = random_inputs(11, sizes[0], seed ^ 1).mapv(|v| v * scale);
        let labels = random_labels(11, *sizes.last().unwrap(), seed ^ 2);
        let signal = accumulate_signal(&net, x.view()).unwrap();
        signal.check_valid().unwrap();
        prop_assert!(signal.values.values().all(|v| v >= 0.0 && v.is_finite()));
        for mode in [FisherLabels::Sampled, FisherLabels::True] {
            let fisher = estimate_fisher_diag(&net, x.view(), &labels, mode, seed).unwrap();
            fisher.check_valid().unwrap();
            prop_assert!(fisher.values.values().all(|v| v >= 0.0 && v.is_finite()));
        }
    }

    #[test]
    fn merge_with_zero_is_identity(sizes in arch(), seed in any::<u64>()) {
        for kind in [SignificanceKind::Signal, SignificanceKind::Fisher] {
            let s = store_for(&sizes, seed, kind);
            let zero = SignificanceStore::zeros(kind, &s.values);
            prop_assert_eq!(&s.merge(&zero).unwrap().values, &s.values);
            prop_assert_eq!(&zero.merge(&s).unwrap().values, &s.values);
        }
    }

    #[test]
    fn merge_is_commutative_and_associative(
        sizes in arch(),
        seeds in (any::<u64>(), any::<u64>(), any::<u64>()),
    ) {
        let kind = SignificanceKind::Signal;
        let (a, b, c) = (
            store_for(&sizes, seeds.0, kind),
            store_for(&sizes, seeds.1, kind),
            store_for(&sizes, seeds.2, kind),
        );
        prop_assert_eq!(a.merge(&b).unwrap().values, b.merge(&a).unwrap().values);
        let left = a.merge(&b).unwrap().merge(&c).unwrap();
        let right = a.merge(&b.merge(&c).unwrap()).unwrap();
        assert_close(&left.values, &right.values)?;
        prop_assert_eq!(left.examples, right.examples);
    }

    #[test]
    fn merge_rejects_mismatches(seed in any::<u64>()) {
        let signal = store_for(&[3, 4, 2], seed, SignificanceKind::Signal);
        let fisher = store_for(&[3, 4, 2], seed, SignificanceKind::Fisher);
        prop_assert!(signal.merge(&fisher).is_err());
        let other = store_for(&[3, 5, 2], seed, SignificanceKind::Signal);
        prop_assert!(signal.merge(&other).is_err());
    }

    #[test]
    fn attenuation_lies_in_unit_interval(lambda in 0.0f64..1e6, sig in 0.0f64..1e6) {
        let a = attenuation(lambda, sig);
        prop_assert!(a > 0.0 && a <= 1.0);
        prop_assert_eq!(attenuation(0.0, sig), 1.0);
        prop_assert_eq!(attenuation(lambda, 0.0), 1.0);
    }

    #[test]
    fn wva_displacement_is_non_increasing_in_significance(
        g in -10.0f64..10.0,
        lr in 1e-4f64..1.0,
        lambda in 0.0f64..1e3,
        s1 in 0.0f64..100.0,
        ds in 0.0f64..100.0,
    ) {
        let step = |s: f64| -> f64 {
            let mut net = Network::init(&[1, 1], 0).unwrap();
            net.params.layers[0].weights[[0, 0]] = 0.5;
            let mut grads = Gradients(Params::zeros_like(&net.params));
            grads.0.layers[0].weights[[0, 0]] = g;
            let mut sig = SignificanceStore::zeros(SignificanceKind::Signal, &net.params);
            sig.values.layers[0].weights[[0, 0]] = s;
            wva_step(&mut net, &grads, &sig, lambda, lr).unwrap();
            (net.params.layers[0].weights[[0, 0]] - 0.5).abs()
        };
        prop_assert!(step(s1 + ds) <= step(s1));
    }

    #[test]
    fn seeded_permutations_are_bijections(n in 1usize..2000, seed in any::<u64>()) {
        let p = Permutation::from_seed(n, seed);
        let mut sorted = p.indices().to_vec();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(Permutation::from_seed(n, seed), p.clone());
        let row: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let mut moved = p.apply(&row);
        moved.sort_by(f64::total_cmp);
        prop_assert_eq!(moved, row);
        prop_assert!(Permutation::from_indices(p.indices().to_vec()).is_ok());
    }

    #[test]
    fn non_bijections_are_rejected(n in 2usize..100, a in any::<usize>(), b in any::<usize>()) {
        let mut indices: Vec<usize> = (0..n).collect();
        let (i, j) = (a % n, b % n);
        prop_assume!(i != j);
        indices[i] = indices[j];
        prop_assert!(Permutation::from_indices(indices).is_err());
    }

    #[test]
    fn split_tasks_partition_the_data(
        labels in prop::collection::vec(0usize..NUM_CLASSES, 1..200),
        mask in prop::collection::vec(any::<bool>(), NUM_CLASSES),
    ) {
        let a: Vec<usize> = (0..NUM_CLASSES).filter(|&c| mask[c]).collect();
        let b: Vec<usize> = (0..NUM_CLASSES).filter(|&c| !mask[c]).collect();
        prop_assume!(!a.is_empty() && !b.is_empty());
        let n = labels.len();
        let inputs = Array2::from_shape_fn((n, 3), |(i, j)| (i * 3 + j) as f64);
        let split = Split { inputs, labels: labels.clone() };
        let base = Mnist { train: split.clone(), test: split };
        let ta = make_split_task(&base, &a).unwrap();
        let tb = make_split_task(&base, &b).unwrap();
        prop_assert_eq!(ta.train.len() + tb.train.len(), n);
        prop_assert!(ta.train.labels.iter().all(|l| a.contains(l)));
        prop_assert!(tb.train.labels.iter().all(|l| b.contains(l)));
        // Every original row appears exactly once across the two tasks.
        let mut ids: Vec<usize> = ta.train.inputs.column(0).iter()
            .chain(tb.train.inputs.column(0).iter())
            .map(|&v| v as usize / 3)
            .collect();
        ids.sort_unstable();
        prop_assert_eq!(ids, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn signal_is_a_mean_over_examples(
        sizes in arch(),
        seed in any::<u64>(),
        n1 in 1usize..20,
        n2 in 1usize..20,
    ) {
        let net = random_net(&sizes, seed);
        let x1 = random_inputs(n1, sizes[0], seed ^ 3);
        let x2 = random_inputs(n2, sizes[0], seed ^ 4);
        let both = concatenate(Axis(0), &[x1.view(), x2.view()]).unwrap();
        let s1 = accumulate_signal(&net, x1.view()).unwrap();
        let s2 = accumulate_signal(&net, x2.view()).unwrap();
        let s = accumulate_signal(&net, both.view()).unwrap();
        let (w1, w2) = (n1 as f64, n2 as f64);
        for ((a, b), c) in s1.values.values().zip(s2.values.values()).zip(s.values.values()) {
            let want = (w1 * a + w2 * b) / (w1 + w2);
            prop_assert!((c - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
        // Repeating the data leaves the mean unchanged.
        let twice = concatenate(Axis(0), &[x1.view(), x1.view()]).unwrap();
        let d = accumulate_signal(&net, twice.view()).unwrap();
        assert_close(&d.values, &s1.values)?;
    }

    #[test]
    fn permuting_pixels_and_weights_together_changes_nothing(
        hidden in 1usize..10,
        n in 2usize..30,
        seed in any::<u64>(),
    ) {
        let net = random_net(&[n, hidden, 3], seed);
        let perm = Permutation::from_seed(n, seed ^ 5);
        let x = random_inputs(8, n, seed ^ 6);
        let px = Array2::from_shape_fn((8, n), |(r, i)| x[[r, perm.indices()[i]]]);
        let mut pnet = net.clone();
        let w = &net.params.layers[0].weights;
        pnet.params.layers[0].weights =
            Array2::from_shape_fn(w.dim(), |(o, i)| w[[o, perm.indices()[i]]]);
        let a = net.predict(x.view()).unwrap();
        let b = pnet.predict(px.view()).unwrap();
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0));
        }
        let s = accumulate_signal(&net, x.view()).unwrap();
        let ps = accumulate_signal(&pnet, px.view()).unwrap();
        for o in 0..hidden {
            for i in 0..n {
                let (u, v) = (
                    s.values.layers[0].weights[[o, perm.indices()[i]]],
                    ps.values.layers[0].weights[[o, i]],
                );
                prop_assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0));
            }
        }
    }

    #[test]
    fn shuffling_batch_rows_shuffles_logits_and_keeps_the_loss(
        sizes in arch(),
        seed in any::<u64>(),
        rows in 1usize..20,
    ) {
        let net = random_net(&sizes, seed);
        let x = random_inputs(rows, sizes[0], seed ^ 7);
        let labels = random_labels(rows, *sizes.last().unwrap(), seed ^ 8);
        let order = Permutation::from_seed(rows, seed ^ 9);
        let px = x.select(Axis(0), order.indices());
        let plabels: Vec<usize> = order.indices().iter().map(|&i| labels[i]).collect();
        let a = net.predict(x.view()).unwrap();
        let b = net.predict(px.view()).unwrap();
        prop_assert_eq!(a.select(Axis(0), order.indices()), b);
        let (la, lb) = (loss(&net, &x, &labels), loss(&net, &px, &plabels));
        prop_assert!(la >= 0.0 && lb >= 0.0);
        prop_assert!((la - lb).abs() <= 1e-12 * la.max(1.0));
        prop_assert_eq!(net.predict(x.view()).unwrap(), a);
    }

    #[test]
    fn repeating_a_batch_keeps_loss_and_gradients(
        sizes in arch(),
        seed in any::<u64>(),
        rows in 1usize..20,
    ) {
        let net = random_net(&sizes, seed);
        let x = random_inputs(rows, sizes[0], seed ^ 10);
        let labels = random_labels(rows, *sizes.last().unwrap(), seed ^ 11);
        let xx = concatenate(Axis(0), &[x.view(), x.view()]).unwrap();
        let ll: Vec<usize> = labels.iter().chain(&labels).copied().collect();
        let (la, lb) = (loss(&net, &x, &labels), loss(&net, &xx, &ll));
        prop_assert!((la - lb).abs() <= 1e-12 * la.max(1.0));
        let grad = |x: &Array2<f64>, l: &[usize]| {
            let (_, cache) = net.forward(x.view()).unwrap();
            net.backward(&cache, l).unwrap().0
        };
        assert_close(&grad(&x, &labels), &grad(&xx, &ll))?;
    }
}
