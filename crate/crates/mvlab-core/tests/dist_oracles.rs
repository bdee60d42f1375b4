//! Independent oracles for the distribution layer: a Monte-Carlo estimate
//! of KL(q‖p), grid quadrature of product-of-experts densities, and
//! finite differences through the reparameterized sample. The oracles use
//! plain scalar math so they share nothing with the tensor path they check.

use mvlab_core::dist::{gaussian_log_prob, poe_combine, DiagGaussian, LN_2PI};
use mvlab_core::gradcheck::check_graph;
use mvlab_core::rng;
use mvlab_core::tensor::Tensor;
use proptest::prelude::*;
use rand::Rng;

fn scalar_log_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * LN_2PI - 0.5 * var.ln() - (x - mean) * (x - mean) / (2.0 * var)
}

#[test]
fn kl_matches_monte_carlo_within_three_standard_errors() {
    let n_draws = 100_000;
    for case in 0..10u64 {
        let mut rng = rng::stream(900 + case, 0);
        let d = rng.random_range(1..=4usize);
        let mean: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let logvar: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();

        let q = DiagGaussian::new(
            Tensor::constant(1, d, mean.clone()).unwrap(),
            Tensor::constant(1, d, logvar.clone()).unwrap(),
        )
        .unwrap();
        let closed = q.kl_to_standard().unwrap().item().unwrap();

        // Monte-Carlo E_q[log q(z) - log p(z)] with plain scalar math.
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut noise = rng::stream(900 + case, 1);
        for _ in 0..n_draws {
            let mut term = 0.0;
            for j in 0..d {
                let var = logvar[j].exp();
                let z = mean[j] + var.sqrt() * rng::normal_vec(&mut noise, 1)[0];
                term += scalar_log_normal(z, mean[j], var) - scalar_log_normal(z, 0.0, 1.0);
            }
            sum += term;
            sum_sq += term * term;
        }
        let mc = sum / n_draws as f64;
        let var_est = (sum_sq / n_draws as f64 - mc * mc).max(0.0);
        let se = (var_est / n_draws as f64).sqrt();
        assert!(
            (closed - mc).abs() < 3.0 * se + 1e-12,
            "case {case}: closed {closed} vs mc {mc} (se {se})"
        );
    }
}

#[test]
fn poe_matches_grid_quadrature_product_of_densities() {
    // 1-D experts: the renormalized pointwise product of densities must
    // equal the fused Gaussian density within 1e-6 in sup-norm.
    for case in 0..6u64 {
        let mut rng = rng::stream(950 + case, 0);
        let mu = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let lv = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let include_prior = case % 2 == 0;

        let experts: Vec<DiagGaussian> = (0..2)
            .map(|i| {
                DiagGaussian::new(
                    Tensor::constant(1, 1, vec![mu[i]]).unwrap(),
                    Tensor::constant(1, 1, vec![lv[i]]).unwrap(),
                )
                .unwrap()
            })
            .collect();
        let fused = poe_combine(&experts, include_prior, (1, 1)).unwrap();
        let fm = fused.mean().item().unwrap();
        let fv = fused.logvar().item().unwrap().exp();

        let lo = -15.0;
        let hi = 15.0;
        let steps = 30_000usize;
        let h = (hi - lo) / steps as f64;
        let product = |x: f64| -> f64 {
            let mut lp = scalar_log_normal(x, mu[0], lv[0].exp())
                + scalar_log_normal(x, mu[1], lv[1].exp());
            if include_prior {
                lp += scalar_log_normal(x, 0.0, 1.0);
            }
            lp.exp()
        };
        // trapezoid normalization
        let mut mass = 0.5 * (product(lo) + product(hi));
        for i in 1..steps {
            mass += product(lo + h * i as f64);
        }
        mass *= h;

        let mut sup = 0.0_f64;
        for i in 0..=steps {
            let x = lo + h * i as f64;
            let approx = product(x) / mass;
            let exact = scalar_log_normal(x, fm, fv).exp();
            sup = sup.max((approx - exact).abs());
        }
        assert!(sup < 1e-6, "case {case}: sup-norm {sup}");
    }
}

#[test]
fn reparam_sample_gradients_match_finite_differences() {
    let mut rng = rng::stream(77, 0);
    let mean: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let logvar: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let noise = Tensor::constant(2, 3, rng::normal_vec(&mut rng, 6)).unwrap();
    let weights = Tensor::constant(2, 3, (0..6).map(|i| 0.3 + 0.2 * i as f64).collect()).unwrap();

    let worst = check_graph(
        &[(2, 3), (2, 3)],
        &[mean, logvar],
        |l| {
            let q = DiagGaussian::new(l[0].clone(), l[1].clone())?;
            q.sample(&noise)?.mul(&weights).map(|t| t.mean_all())
        },
        1e-5,
    )
    .unwrap();
    assert!(worst < 1e-4, "max rel err {worst}");
}

#[test]
fn log_prob_gradients_match_finite_differences() {
    let mut rng = rng::stream(78, 0);
    let x = Tensor::constant(3, 2, rng::normal_vec(&mut rng, 6)).unwrap();
    let mean: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let logvar: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
    let worst = check_graph(
        &[(3, 2), (1, 2)],
        &[mean, logvar],
        |l| gaussian_log_prob(&x, &l[0], &l[1]).map(|t| t.mean_all()),
        1e-5,
    )
    .unwrap();
    assert!(worst < 1e-4, "max rel err {worst}");
}

proptest! {
    #[test]
    fn kl_is_nonnegative_and_positive_away_from_standard(
        mean in prop::collection::vec(-3.0f64..3.0, 4),
        logvar in prop::collection::vec(-3.0f64..3.0, 4),
    ) {
        let q = DiagGaussian::new(
            Tensor::constant(2, 2, mean.clone()).unwrap(),
            Tensor::constant(2, 2, logvar.clone()).unwrap(),
        ).unwrap();
        let kl = q.kl_to_standard().unwrap();
        for r in 0..2 {
            prop_assert!(kl.get(r, 0) >= 0.0);
        }
        let noticeably_off = mean.iter().any(|v| v.abs() > 1e-3)
            || logvar.iter().any(|v| v.abs() > 1e-3);
        if noticeably_off {
            let total: f64 = kl.values().iter().sum();
            prop_assert!(total > 0.0);
        }
    }

    #[test]
    fn poe_order_invariance_and_variance_shrinkage(
        mu in prop::collection::vec(-3.0f64..3.0, 2),
        lv in prop::collection::vec(-3.0f64..3.0, 2),
        include_prior in any::<bool>(),
    ) {
        let make = |m: f64, v: f64| DiagGaussian::new(
            Tensor::constant(1, 1, vec![m]).unwrap(),
            Tensor::constant(1, 1, vec![v]).unwrap(),
        ).unwrap();
        let a = make(mu[0], lv[0]);
        let b = make(mu[1], lv[1]);
        let ab = poe_combine(&[a.clone(), b.clone()], include_prior, (1, 1)).unwrap();
        let ba = poe_combine(&[b.clone(), a.clone()], include_prior, (1, 1)).unwrap();
        prop_assert_eq!(ab.mean().values(), ba.mean().values());
        prop_assert_eq!(ab.logvar().values(), ba.logvar().values());
        let var = |q: &DiagGaussian| q.logvar().item().unwrap().exp();
        prop_assert!(var(&ab) <= var(&a).min(var(&b)) + 1e-15);
    }

    #[test]
    fn reparam_with_fixed_noise_is_deterministic(
        mean in prop::collection::vec(-3.0f64..3.0, 3),
        logvar in prop::collection::vec(-3.0f64..3.0, 3),
        noise in prop::collection::vec(-3.0f64..3.0, 3),
    ) {
        let q = DiagGaussian::new(
            Tensor::constant(1, 3, mean).unwrap(),
            Tensor::constant(1, 3, logvar).unwrap(),
        ).unwrap();
        let n = Tensor::constant(1, 3, noise).unwrap();
        let z1 = q.sample(&n).unwrap();
        let z2 = q.sample(&n).unwrap();
        prop_assert_eq!(z1.values(), z2.values());
    }
}
