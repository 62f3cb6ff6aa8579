//! Property tests for the core invariants: row stochasticity with the
//! positivity floor, simplex closure of estimator outputs, the gradient
//! inner-product identity, and seed determinism.

use mtd::estimators::{default_eta, em_fit, one_step_md, safe_eta};
use mtd::model::{
    generate_sequence, log_likelihood_gradient, responsibilities, sample_mixture_weights,
};
use mtd::theory::simplex_uniform_sample;
use mtd::{
    DirichletPrior, MixtureWeights, ModelConfig, Rng, TokenSequence, TransitionMatrix, C_MIN,
};
use ndarray::Array2;
use proptest::prelude::*;

fn instance(
    seed: u64,
    q: usize,
    m: usize,
    t: usize,
) -> (TransitionMatrix, MixtureWeights, TokenSequence) {
    let mut rng = Rng::new(seed);
    let pi = TransitionMatrix::sample(q, &mut rng.child(0)).unwrap();
    let cfg = ModelConfig::new(q, m, t).unwrap();
    let lambda = sample_mixture_weights(&DirichletPrior::flat(m), &mut rng);
    let seq = generate_sequence(&cfg, &pi, &lambda, &mut rng).unwrap();
    (pi, lambda, seq)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flooring_preserves_both_invariants(
        seed in any::<u64>(),
        q in 2usize..6,
        zero_mask in 0u32..64,
    ) {
        // Raw rows with arbitrary magnitudes and hard zeros must come out
        // row-stochastic with every entry at the floor or above.
        let mut rng = Rng::new(seed);
        let raw = Array2::from_shape_fn((q, q), |(i, j)| {
            if zero_mask & (1 << ((i * q + j) % 32)) != 0 {
                0.0
            } else {
                10.0 * rng.uniform()
            }
        });
        let pi = TransitionMatrix::floored(raw).unwrap();
        for row in pi.entries().rows() {
            prop_assert!((row.sum() - 1.0).abs() <= 1e-12);
        }
        prop_assert!(pi.min_entry() >= C_MIN - 1e-15);
    }

    #[test]
    fn estimator_outputs_stay_on_the_simplex(
        seed in any::<u64>(),
        q in 2usize..6,
        m in 1usize..6,
        extra in 4usize..40,
    ) {
        let t = m + extra;
        let (pi, _, seq) = instance(seed, q, m, t);
        let cfg = ModelConfig::new(q, m, t).unwrap();
        let md = one_step_md(&pi, &seq, m, default_eta(m));
        let (em, _) = em_fit(&pi, &seq, &MixtureWeights::uniform(m), 1e-10, 200);
        for out in [md, em] {
            prop_assert!((out.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(out.as_slice().iter().all(|&x| x >= 0.0));
        }
        let _ = safe_eta(&cfg);
    }

    #[test]
    fn gradient_inner_product_is_step_count(
        seed in any::<u64>(),
        q in 2usize..6,
        m in 1usize..6,
        extra in 4usize..60,
    ) {
        let t = m + extra;
        let (pi, lambda, seq) = instance(seed, q, m, t);
        let grad = log_likelihood_gradient(&pi, &lambda, &seq);
        let dot: f64 = grad.iter().zip(lambda.as_slice()).map(|(&g, &l)| g * l).sum();
        prop_assert!((dot - extra as f64).abs() < 1e-9);
    }

    #[test]
    fn responsibility_rows_are_distributions(
        seed in any::<u64>(),
        q in 2usize..5,
        m in 1usize..6,
        extra in 4usize..30,
    ) {
        let (pi, lambda, seq) = instance(seed, q, m, m + extra);
        let gamma = responsibilities(&pi, &lambda, &seq);
        for row in gamma.gamma().rows() {
            prop_assert!((row.sum() - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn generation_is_seed_deterministic(
        seed in any::<u64>(),
        q in 2usize..5,
        m in 1usize..4,
        extra in 4usize..30,
    ) {
        let a = instance(seed, q, m, m + extra).2;
        let b = instance(seed, q, m, m + extra).2;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn kl_is_nonnegative_on_random_simplex_pairs(
        seed in any::<u64>(),
        q in 2usize..8,
    ) {
        let mut rng = Rng::new(seed);
        let p = simplex_uniform_sample(q, &mut rng);
        let r = simplex_uniform_sample(q, &mut rng);
        let kl = mtd::numeric::kl_divergence(&p, &r).unwrap();
        prop_assert!(kl >= -1e-12);
    }
}
