use proptest::prelude::*;
use vcsmc::metrics::{kl_mixture_vs_particles, rmse, WeightedKde, KL_MC_SAMPLES};
use vcsmc::stats::{Gaussian1D, GaussianMixture1D, Rng};

fn standard() -> GaussianMixture1D {
    GaussianMixture1D::single(Gaussian1D::standard())
}

fn self_kl(n: usize, seed: u64) -> f64 {
    let truth = standard();
    let mut rng = Rng::new(seed);
    let xs: Vec<f64> = (0..n).map(|_| truth.sample(&mut rng)).collect();
    kl_mixture_vs_particles(&truth, &xs, &vec![1.0; n], KL_MC_SAMPLES, &mut rng).unwrap().value
}

#[test]
fn self_kl_is_small_and_shrinks_with_particles() {
    let kl: Vec<f64> = [100, 1000, 10_000].iter().map(|&n| self_kl(n, 30)).collect();
    assert!(kl[2] < 0.05, "{kl:?}");
    assert!(kl[0] > kl[1] && kl[1] > kl[2], "{kl:?}");
}

/// Far from the cloud the kernel density decays like the narrow kernel on the outermost
/// particle, so the estimate is checked against quadrature of the same integral.
#[test]
fn monte_carlo_matches_quadrature_for_distant_cloud() {
    let truth = standard();
    let mut rng = Rng::new(31);
    let xs: Vec<f64> = (0..5000).map(|_| 5.0 + rng.standard_normal()).collect();
    let w = vec![1.0; 5000];
    let kde = WeightedKde::silverman(&xs, &w).unwrap();
    let h = 1e-3;
    let quad: f64 = (0..20_000)
        .map(|k| {
            let x = -10.0 + (k as f64 + 0.5) * h;
            truth.logpdf(x).exp() * (truth.logpdf(x) - kde.logpdf(x)) * h
        })
        .sum();
    let k = kl_mixture_vs_particles(&truth, &xs, &w, KL_MC_SAMPLES, &mut rng).unwrap();
    assert!((k.value - quad).abs() < 3.0 * k.standard_error, "{} vs {quad}", k.value);
    assert!(k.value > 12.5, "kernel tails make this larger than the Gaussian value");
    assert_eq!(k.mc_samples, KL_MC_SAMPLES);
}

#[test]
fn nearby_cloud_gives_gaussian_kl() {
    let truth = standard();
    let mut rng = Rng::new(34);
    let n = 10_000;
    let xs: Vec<f64> = (0..n).map(|_| 0.5 + rng.standard_normal()).collect();
    let w = vec![1.0; n];
    let bw = WeightedKde::silverman(&xs, &w).unwrap().bandwidth;
    let m = xs.iter().sum::<f64>() / n as f64;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64 + bw * bw;
    let closed = 0.5 * (1.0 / v + m * m / v - 1.0 + v.ln());
    let k = kl_mixture_vs_particles(&truth, &xs, &w, KL_MC_SAMPLES, &mut rng).unwrap();
    assert!((k.value - closed).abs() < 0.02, "{} vs {closed}", k.value);
}

#[test]
fn weights_shift_the_estimate() {
    // a bimodal cloud weighted onto the left mode approximates the left Gaussian
    let truth = GaussianMixture1D::single(Gaussian1D { mean: -3.0, std: 1.0 });
    let mut rng = Rng::new(32);
    let mut xs = Vec::new();
    let mut w = Vec::new();
    for _ in 0..4000 {
        xs.push(-3.0 + rng.standard_normal());
        w.push(1.0);
        xs.push(3.0 + rng.standard_normal());
        w.push(0.0);
    }
    let k = kl_mixture_vs_particles(&truth, &xs, &w, KL_MC_SAMPLES, &mut rng).unwrap();
    assert!(k.value < 0.05, "{}", k.value);
}

#[test]
fn rmse_matches_two_pass_computation() {
    let mut rng = Rng::new(33);
    let truth: Vec<Vec<f64>> = (0..7).map(|_| rng.standard_normal_vec(4)).collect();
    let est: Vec<Vec<f64>> = (0..7).map(|_| rng.standard_normal_vec(4)).collect();
    let r = rmse(3, &est, &truth).unwrap();
    let mut sq = Vec::new();
    for k in 0..7 {
        for v in 0..4 {
            sq.push((est[k][v] - truth[k][v]).powi(2));
        }
    }
    let pooled = (sq.iter().sum::<f64>() / sq.len() as f64).sqrt();
    assert!((r.pooled - pooled).abs() < 1e-12);
    for v in 0..4 {
        let col: f64 = (0..7).map(|k| sq[k * 4 + v]).sum::<f64>() / 7.0;
        assert!((r.per_variable[v] - col.sqrt()).abs() < 1e-12);
    }
    assert_eq!(r.trial, 3);
    assert!(rmse(0, &est[..3], &truth).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn kl_is_nonnegative_up_to_noise(shift in -3.0f64..3.0, scale in 0.3f64..3.0, seed in 0u64..1000) {
        let truth = standard();
        let mut rng = Rng::new(seed);
        let xs: Vec<f64> = (0..200).map(|_| shift + scale * rng.standard_normal()).collect();
        let w: Vec<f64> = (0..200).map(|_| rng.uniform()).collect();
        let k = kl_mixture_vs_particles(&truth, &xs, &w, 2000, &mut rng).unwrap();
        prop_assert!(k.value >= -3.0 * k.standard_error);
    }

    #[test]
    fn rmse_is_translation_covariant(
        rows in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 6), 1..8),
        shift in -100.0f64..100.0,
    ) {
        let truth: Vec<Vec<f64>> = rows.iter().map(|r| r[..3].to_vec()).collect();
        let est: Vec<Vec<f64>> = rows.iter().map(|r| r[3..].to_vec()).collect();
        let moved = |m: &Vec<Vec<f64>>| m.iter().map(|r| r.iter().map(|v| v + shift).collect()).collect::<Vec<Vec<f64>>>();
        let a = rmse(0, &est, &truth).unwrap();
        let b = rmse(0, &moved(&est), &moved(&truth)).unwrap();
        prop_assert!((a.pooled - b.pooled).abs() < 1e-9);
        prop_assert!(a.per_variable.iter().all(|v| *v >= 0.0));
    }
}
