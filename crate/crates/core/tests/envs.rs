mod common;

use vcsmc::envs::{simulate, Dataset, ExactMixturePosterior, LinearGaussianModel, PlanarNavModel, ThreeDoorsModel};
use vcsmc::smc::StateSpaceModel;
use vcsmc::stats::{mixture_logpdf, Gaussian1D, GaussianMixture1D, Rng};

#[test]
fn simulation_is_reproducible() {
    let m = ThreeDoorsModel::default();
    assert_eq!(m.simulate(&mut Rng::new(3)), m.simulate(&mut Rng::new(3)));
    let p = PlanarNavModel::default();
    assert_eq!(p.simulate(&mut Rng::new(3)), p.simulate(&mut Rng::new(3)));
}

#[test]
fn door_labels_are_uniform() {
    let m = ThreeDoorsModel::default();
    let mut rng = Rng::new(20);
    let mut counts = [0.0; 3];
    for _ in 0..10_000 {
        for c in m.simulate(&mut rng).associations {
            counts[c] += 1.0;
        }
    }
    let (stat, _, p) = common::chi_square(&counts, &[10_000.0; 3]);
    assert!(p > 0.001, "chi-square {stat}");
}

#[test]
fn exact_posterior_component_counts_and_weights() {
    let m = ThreeDoorsModel::default();
    for seed in 0..20 {
        let post = m.exact_posterior(&m.simulate(&mut Rng::new(seed)).observations);
        for (t, step) in post.steps.iter().enumerate() {
            assert_eq!(step.weights.len(), 3usize.pow(t as u32 + 1));
            assert!((step.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}

#[test]
fn component_likelihoods_match_quadrature() {
    for seed in [21, 22] {
        let worst = common::doors_quadrature_worst(seed);
        assert!(worst <= 1e-3, "seed {seed}: relative error {worst}");
    }
}

#[test]
fn planar_noiseless_limits() {
    let m = PlanarNavModel { speed: 1.0, start: [0.0, 0.0, 0.0], process_std: [1e-300; 3], range_std: 1e-300, horizon: 5 };
    let (xs, ys) = m.simulate(&mut Rng::new(1));
    for t in 0..5 {
        assert!((xs[t][0] - (t + 1) as f64).abs() < 1e-12 && xs[t][1].abs() < 1e-12);
        assert!((ys[t][0] - (t + 1) as f64).abs() < 1e-12);
    }
}

/// Heading noise accumulates, so `E[cos heading_k] = cos(h0) exp(-k sigma^2 / 2)`.
#[test]
fn planar_rollout_means_match_closed_form() {
    let m = PlanarNavModel::default();
    let reps = 10_000;
    let mut rng = Rng::new(22);
    let runs: Vec<Vec<Vec<f64>>> = (0..reps).map(|_| m.simulate(&mut rng).0).collect();
    let s2 = m.process_std[2].powi(2);
    let h0 = m.start[2];
    for t in 0..m.horizon {
        let damp: f64 = (0..=t).map(|k| (-(k as f64) * s2 / 2.0).exp()).sum();
        let exact = [m.speed * h0.cos() * damp, m.speed * h0.sin() * damp, h0];
        for i in 0..3 {
            let col: Vec<f64> = runs.iter().map(|r| r[t][i]).collect();
            let (mean, se) = common::mean_and_se(&col);
            assert!((mean - exact[i]).abs() < 3.5 * se, "step {t}, component {i}: {mean} vs {}", exact[i]);
        }
    }
}

fn integrate_1d<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    (0..n).map(|k| f(lo + (k as f64 + 0.5) * h)).sum::<f64>() * h
}

#[test]
fn observation_densities_integrate_to_one() {
    let doors = ThreeDoorsModel::default();
    let x = [0.3, -0.1, 2.2, 5.7];
    let mass = integrate_1d(|y| doors.observation_logpdf(0, &x, &[y]).exp(), -15.0, 15.0, 30_000);
    assert!((mass - 1.0).abs() < 1e-6);
    let planar = PlanarNavModel::default();
    let mass = integrate_1d(|y| planar.observation_logpdf(0, &[0.6, 0.8, 0.1], &[y]).exp(), -5.0, 7.0, 30_000);
    assert!((mass - 1.0).abs() < 1e-6);
    let lg = LinearGaussianModel::default();
    for f in [
        Box::new(|y: f64| lg.observation_logpdf(0, &[0.4], &[y]).exp()) as Box<dyn Fn(f64) -> f64>,
        Box::new(|x: f64| lg.initial_logpdf(&[x]).exp()),
        Box::new(|x: f64| lg.transition_logpdf(1, &[1.5], &[x]).exp()),
    ] {
        assert!((integrate_1d(f, -15.0, 15.0, 30_000) - 1.0).abs() < 1e-6);
    }
}

#[test]
fn dynamics_densities_integrate_to_one() {
    // product grids over +-8 standard deviations around the mean
    fn integrate<F: Fn(&[f64]) -> f64>(f: F, mean: &[f64], sd: &[f64], k: usize) -> f64 {
        let d = mean.len();
        let mut total = 0.0;
        let mut idx = vec![0usize; d];
        loop {
            let x: Vec<f64> = (0..d).map(|i| mean[i] + sd[i] * (-8.0 + 16.0 * (idx[i] as f64 + 0.5) / k as f64)).collect();
            total += f(&x);
            let mut i = 0;
            while i < d {
                idx[i] += 1;
                if idx[i] < k {
                    break;
                }
                idx[i] = 0;
                i += 1;
            }
            if i == d {
                break;
            }
        }
        total * (0..d).map(|i| 16.0 * sd[i] / k as f64).product::<f64>()
    }
    let doors = ThreeDoorsModel::default();
    let prev = [1.9, 0.2, 2.1, 5.8];
    let (m0, s0) = doors.initial_moments();
    assert!((integrate(|x| doors.initial_logpdf(x).exp(), &m0, &s0, 30) - 1.0).abs() < 1e-6);
    let mt = doors.transition_mean(1, &prev);
    let st = doors.transition_std(1);
    assert!((integrate(|x| doors.transition_logpdf(1, &prev, x).exp(), &mt, &st, 30) - 1.0).abs() < 1e-6);
    let planar = PlanarNavModel::default();
    let prev = [0.4, 0.5, 0.9];
    let mt = planar.transition_mean(1, &prev);
    let st = planar.transition_std(1);
    assert!((integrate(|x| planar.transition_logpdf(1, &prev, x).exp(), &mt, &st, 60) - 1.0).abs() < 1e-6);
}

#[test]
fn observation_samples_match_density() {
    let doors = ThreeDoorsModel::default();
    let x = [0.3, -0.1, 2.2, 5.7];
    let mut rng = Rng::new(23);
    let (lo, hi, bins) = (-2.0, 7.0, 45);
    let w = (hi - lo) / bins as f64;
    let mut observed = vec![0.0; bins];
    let n = 20_000;
    for _ in 0..n {
        let y = doors.sample_observation(0, &x, &mut rng)[0];
        let k = ((y - lo) / w).floor();
        if k >= 0.0 && (k as usize) < bins {
            observed[k as usize] += 1.0;
        }
    }
    let expected: Vec<f64> = (0..bins)
        .map(|k| n as f64 * integrate_1d(|y| doors.observation_logpdf(0, &x, &[y]).exp(), lo + k as f64 * w, lo + (k + 1) as f64 * w, 200))
        .collect();
    let (stat, dof, p) = common::chi_square(&observed, &expected);
    assert!(p > 0.001, "chi-square {stat} on {dof} dof");
    let mix = GaussianMixture1D {
        weights: vec![1.0 / 3.0; 3],
        components: (1..4).map(|i| Gaussian1D { mean: x[i] - x[0], std: 0.1f64.sqrt() }).collect(),
    };
    assert!((doors.observation_logpdf(0, &x, &[1.7]) - mixture_logpdf(1.7, &mix)).abs() < 1e-14);
}

#[test]
fn simulated_data_has_finite_density() {
    let doors = ThreeDoorsModel::default();
    let planar = PlanarNavModel::default();
    let mut rng = Rng::new(24);
    for _ in 0..10_000 {
        let run = doors.simulate(&mut rng);
        assert!(joint_logpdf(&doors, &run.states, &run.observations).is_finite());
    }
    for _ in 0..1000 {
        let (xs, ys) = planar.simulate(&mut rng);
        assert!(joint_logpdf(&planar, &xs, &ys).is_finite());
    }
}

fn joint_logpdf<M: StateSpaceModel>(m: &M, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> f64 {
    (0..xs.len())
        .map(|t| {
            let dynamics = if t == 0 { m.initial_logpdf(&xs[0]) } else { m.transition_logpdf(t, &xs[t - 1], &xs[t]) };
            dynamics + m.observation_logpdf(t, &xs[t], &ys[t])
        })
        .sum()
}

#[test]
fn dataset_and_posterior_json_roundtrip() {
    let doors = ThreeDoorsModel::default();
    let run = doors.simulate(&mut Rng::new(25));
    let ds = Dataset {
        env: "threedoors".into(),
        seed: 25,
        params: serde_json::to_value(&doors).unwrap(),
        states: run.states.clone(),
        associations: run.associations.clone(),
        observations: run.observations.clone(),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.json");
    ds.save(&path).unwrap();
    assert_eq!(Dataset::load(&path).unwrap(), ds);
    let post = doors.exact_posterior(&run.observations);
    let back: ExactMixturePosterior = serde_json::from_str(&serde_json::to_string(&post).unwrap()).unwrap();
    assert_eq!(back, post);
    let lg = LinearGaussianModel::default();
    let (xs, ys) = simulate(&lg, 5, &mut Rng::new(26));
    assert_eq!((xs.len(), ys.len()), (5, 5));
}
