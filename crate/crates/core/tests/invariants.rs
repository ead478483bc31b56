//! Property tests over randomly generated inputs.

use infobound::complexity::{
    complexity_closed_form, complexity_lower_bound, majorizes, PosteriorSpec,
};
use infobound::experiment::{
    default_model, make_synthetic, train_from, Sgd, SyntheticDataSpec, TrainConfig,
};
use infobound::fitdiag::{
    cross_norm_sq, decompose, f_term_entk_bound_gap, fit_report, lagrange_identity_residual,
};
use infobound::model::{entk, Activation, Checkpoint, ModelSpec, ParamVector};
use infobound::prob::{
    entropy, kl_divergence, l1_distance, pinsker_gap, softmax, Logits, Pmf, RngSeed,
};
use infobound::risk::LossSpec;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn pmf(k: usize) -> impl Strategy<Value = Pmf> {
    prop::collection::vec(0.0f64..1.0, k)
        .prop_filter_map("all zero", |w| Pmf::from_weights(&w).ok())
}

fn pmf_pair() -> impl Strategy<Value = (Pmf, Pmf)> {
    (2usize..8).prop_flat_map(|k| (pmf(k), pmf(k)))
}

fn small_model() -> impl Strategy<Value = (ModelSpec, ParamVector, Vec<f64>)> {
    (1usize..4, 1usize..6, 2usize..5, any::<u64>()).prop_flat_map(|(d, h, k, seed)| {
        let spec = ModelSpec::new(d, vec![h], k, Activation::Tanh).unwrap();
        let theta = ParamVector::init(&spec, RngSeed(seed));
        (
            Just(spec),
            Just(theta),
            prop::collection::vec(-2.0f64..2.0, d),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn softmax_is_shift_invariant(v in prop::collection::vec(-50.0f64..50.0, 1..10), c in -100.0f64..100.0) {
        let (p, lz) = softmax(&Logits::new(v.clone()).unwrap());
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let (p2, lz2) = softmax(&Logits::new(shifted).unwrap());
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lz >= max);
        prop_assert!((lz2 - lz - c).abs() <= 1e-9 * (1.0 + lz.abs() + c.abs()));
        prop_assert!(l1_distance(&p, &p2).unwrap() < 1e-12);
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_diagonal((q, p) in pmf_pair()) {
        let d = kl_divergence(&q, &p).unwrap();
        prop_assert!(d >= -1e-15);
        prop_assert!(kl_divergence(&q, &q).unwrap().abs() < 1e-12);
        prop_assert!(entropy(&q) >= -1e-15);
        // Pinsker in its L1 form.
        let l1 = l1_distance(&q, &p).unwrap();
        prop_assert!(d + 1e-12 >= 0.5 * l1 * l1);
    }

    #[test]
    fn pinsker_gap_is_nonnegative((q, p) in pmf_pair(), l in 0.01f64..100.0, seed in any::<u64>()) {
        let mut rng = RngSeed(seed).rng();
        let f: Vec<f64> = (0..q.alphabet_size()).map(|_| rand::Rng::random_range(&mut rng, 0.0..=l)).collect();
        prop_assert!(pinsker_gap(&q, &p, &f, l).unwrap() >= -1e-12);
    }

    #[test]
    fn lagrange_identity(r in 1usize..12, k in 1usize..12, seed in any::<u64>()) {
        let mut rng = RngSeed(seed).rng();
        let a = DMatrix::from_fn(r, k, |_, _| rand::Rng::random_range(&mut rng, -5.0..5.0));
        let x: Vec<f64> = (0..k).map(|_| rand::Rng::random_range(&mut rng, -5.0..5.0)).collect();
        let xx: f64 = x.iter().map(|v| v * v).sum();
        prop_assert!(lagrange_identity_residual(&a, &x).unwrap() <= 1e-9 * (1.0 + a.norm_squared() * xx));
        let row: Vec<f64> = a.row(0).iter().copied().collect();
        prop_assert!(cross_norm_sq(&row, &x).unwrap() >= 0.0);
    }

    #[test]
    fn fit_split_is_exact_and_entk_bounded((spec, theta, x) in small_model(), seed in any::<u64>()) {
        let k = spec.num_classes;
        let q = Pmf::from_weights(&(0..k).map(|i| ((seed >> i) & 7) as f64 + 0.5).collect::<Vec<_>>()).unwrap();
        let d = decompose(&spec, &theta, &x, &q).unwrap();
        prop_assert!(d.f_term >= -1e-15 && d.g_term >= -1e-15);
        prop_assert!((d.f_term + d.g_term - d.residual_sq).abs() <= 1e-9 * d.residual_sq.max(1e-300));
        prop_assert!(f_term_entk_bound_gap(&spec, &theta, &x, &q).unwrap() >= -1e-12);
        let e = entk(&spec, &theta, &x).unwrap();
        prop_assert!(e.eigenvalues()[0] >= -1e-10 * e.trace());
    }

    #[test]
    fn complexity_lower_bound_and_positivity(counts in prop::collection::vec(0u64..30, 2..6), alpha in 0.2f64..5.0) {
        prop_assume!(counts.iter().sum::<u64>() > 0);
        let spec = PosteriorSpec::symmetric(alpha, counts).unwrap();
        let c = complexity_closed_form(&spec);
        prop_assert!(c >= 0.0);
        prop_assert!(complexity_lower_bound(&spec) <= 2.0 * c + 1e-12);
    }

    #[test]
    fn majorization_orders_complexity(n in 1u64..30, cuts in prop::collection::vec(0.0f64..1.0, 4)) {
        let split = |u: f64, v: f64| {
            let (lo, hi) = if u < v { (u, v) } else { (v, u) };
            let (i, j) = ((lo * n as f64) as u64, (hi * n as f64) as u64);
            let mut c = vec![i, j - i, n - j];
            c.sort_unstable_by(|a, b| b.cmp(a));
            c
        };
        let (a, b) = (split(cuts[0], cuts[1]), split(cuts[2], cuts[3]));
        let (hi, lo) = if majorizes(&a, &b) { (a, b) } else { (b, a) };
        prop_assume!(majorizes(&hi, &lo));
        let ch = complexity_closed_form(&PosteriorSpec::uniform_prior(hi).unwrap());
        let cl = complexity_closed_form(&PosteriorSpec::uniform_prior(lo).unwrap());
        prop_assert!(ch >= cl - 1e-12);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact((spec, theta, _x) in small_model(), seed in any::<u64>()) {
        let mut t = theta.clone();
        t.as_mut_slice().iter_mut().enumerate().for_each(|(i, v)| *v *= 1.0 + (seed.rotate_left(i as u32) as f64) * 1e-20);
        let json = Checkpoint::new(spec.clone(), &t, Some(RngSeed(seed))).to_json().unwrap();
        let (spec2, t2) = Checkpoint::from_json(&json).unwrap().into_parts().unwrap();
        prop_assert_eq!(spec2, spec);
        let bits = |p: &ParamVector| p.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&t2), bits(&t));
    }

    #[test]
    fn sgd_matches_update_rule(theta in prop::collection::vec(-1.0f64..1.0, 4), g in prop::collection::vec(-1.0f64..1.0, 4)) {
        let (mu, wd, lr) = (0.9, 5e-4, 0.1);
        let mut sgd = Sgd::new(4, mu, wd);
        let mut t = theta.clone();
        sgd.step(&mut t, &g, lr);
        sgd.step(&mut t, &g, lr);
        // Two steps by hand.
        let mut v = [0.0; 4];
        let mut e = theta.clone();
        for _ in 0..2 {
            for i in 0..4 {
                v[i] = mu * v[i] + g[i] + wd * e[i];
                e[i] -= lr * v[i];
            }
        }
        for i in 0..4 {
            prop_assert!((t[i] - e[i]).abs() < 1e-15);
        }
    }
}

#[test]
fn training_shrinks_the_f_term() {
    let data_spec = SyntheticDataSpec::default();
    let data = make_synthetic(&data_spec, RngSeed(7)).unwrap();
    let spec = default_model(&data_spec);
    let config = TrainConfig {
        epochs: 60,
        seed: RngSeed(7),
        ..TrainConfig::default()
    };
    let theta0 = ParamVector::init(&spec, RngSeed(70));
    let initial = fit_report(&spec, &theta0, &data.train, &LossSpec::SoftmaxCrossEntropy).unwrap();
    let run = train_from(&spec, &config, &data.train, &data.test, theta0).unwrap();
    let last = run.records.last().unwrap();
    assert!(
        last.mean_f < 0.5 * initial.mean_f,
        "{} -> {}",
        initial.mean_f,
        last.mean_f
    );
}
