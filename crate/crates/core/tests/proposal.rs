mod common;

use proptest::prelude::*;
use vcsmc::copula::LatentLayout;
use vcsmc::proposal::{proposal_logpdf, CopulaProposal, Frame, Marginal, VariationalParams};
use vcsmc::stats::Rng;

#[test]
fn histogram_matches_density() {
    let (stat, dof, pval) = common::proposal_histogram_test(0.7, 100_000, 80);
    assert!(pval > 0.001, "chi-square {stat} on {dof} dof, p = {pval}");
}

#[test]
fn zero_theta_factorizes() {
    let p = common::gmm_pair(0.0);
    assert_eq!(p.theta.state_landmark, vec![0.0]);
    let mut rng = Rng::new(81);
    for _ in 0..500 {
        let x = [3.0 * rng.standard_normal(), 1.0 + 2.0 * rng.standard_normal()];
        let joint = proposal_logpdf(&x, 0, &p).unwrap();
        let parts = p.eta[0][0].logpdf(x[0]) + p.eta[0][1].logpdf(x[1]);
        assert!((joint - parts).abs() <= 1e-12, "{joint} vs {parts}");
    }
}

fn arb_marginal() -> impl Strategy<Value = Marginal> {
    prop_oneof![
        (-3.0f64..3.0, -1.0f64..1.0).prop_map(|(mean, log_std)| Marginal::Gaussian { mean, log_std }),
        (prop::collection::vec(-1.0f64..1.0, 3), prop::collection::vec(-3.0f64..3.0, 3), prop::collection::vec(-1.0f64..0.5, 3))
            .prop_map(|(logits, means, log_stds)| Marginal::Mixture { logits, means, log_stds }),
    ]
}

fn arb_params() -> impl Strategy<Value = VariationalParams> {
    (prop::collection::vec(-1.5f64..1.5, 6), prop::collection::vec(arb_marginal(), 4)).prop_map(|(theta, marginals)| {
        let mut p = VariationalParams::standard(LatentLayout::new(1, 3, 1), 1, Frame::Absolute);
        let mut flat = p.flatten();
        flat[..6].copy_from_slice(&theta);
        p.assign(&flat).unwrap();
        p.eta[0] = marginals;
        p
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn draw_density_agrees_with_logpdf(p in arb_params(), eps in prop::collection::vec(-3.0f64..3.0, 4)) {
        let q = CopulaProposal::new(&p).unwrap();
        let d = q.draw(0, &eps).unwrap();
        let lp = q.logpdf(0, &d.x).unwrap();
        prop_assert!(d.log_q.is_finite());
        prop_assert!((d.log_q - lp).abs() < 1e-6 * lp.abs().max(1.0), "{} vs {}", d.log_q, lp);
    }

    #[test]
    fn marginal_scores_roundtrip(m in arb_marginal(), z in -6.0f64..6.0) {
        let x = m.quantile_from_score(z).unwrap();
        prop_assert!((m.score(x).unwrap() - z).abs() < 1e-7);
    }

    #[test]
    fn params_roundtrip_through_json(p in arb_params()) {
        prop_assert_eq!(VariationalParams::from_json(&p.to_json().unwrap()).unwrap(), p);
    }
}
