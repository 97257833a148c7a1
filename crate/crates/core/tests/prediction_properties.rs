use htenmr::nmr::{McmcSettings, NmrPosterior, NmrSpec};
use htenmr::prediction::{PredictOptions, PredictionAnchor, Predictor};
use indexmap::IndexMap;
use proptest::prelude::*;

fn posterior(delta: &[f64], gamma0: &[f64], gamma: &[f64]) -> NmrPosterior<f64> {
    let n = delta.len();
    let draws = (0..n).flat_map(|d| [delta[d], gamma0[d], gamma[d]]).collect();
    NmrPosterior {
        names: vec!["delta[B]".into(), "gamma0".into(), "gamma[B]".into()],
        chains: 2,
        draws_per_chain: n / 2,
        draws,
        diagnostics: Vec::new(),
        spec: NmrSpec { mcmc: McmcSettings { chains: 2, iterations: n / 2, burn_in: 0, thin: 1 }, ..NmrSpec::default() },
        treatments: vec!["A".into(), "B".into()],
        reference: "A".into(),
        centering: IndexMap::new(),
        stage1_fingerprint: None,
    }
}

fn anchor(alpha: f64, se: f64) -> PredictionAnchor<f64> {
    PredictionAnchor {
        alpha,
        alpha_se: se,
        mean_logit_risk: -0.5,
        slope: None,
        n: 100,
        events: 40,
        source: "A arms".into(),
        stage1_fingerprint: None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn intervals_bracket_means_and_stay_in_range(
        cols in prop::collection::vec((-2.0f64..2.0, 0.0f64..2.0, -1.0f64..1.0), 8..60),
        alpha in -2.0f64..1.0,
        se in 0.0f64..0.5,
        lr in -6.0f64..4.0,
        seed in any::<u64>(),
    ) {
        let n = cols.len() / 2 * 2;
        let (d, g0, g): (Vec<f64>, Vec<f64>, Vec<f64>) = cols[..n].iter().fold((vec![], vec![], vec![]), |mut acc, c| {
            acc.0.push(c.0);
            acc.1.push(c.1);
            acc.2.push(c.2);
            acc
        });
        let opts = PredictOptions { seed, ..Default::default() };
        let p = Predictor::new(&posterior(&d, &g0, &g), &anchor(alpha, se), opts).unwrap();
        let res = p.predict(lr, None).unwrap();
        for t in &res.treatments {
            prop_assert!(t.cr_low <= t.cr_high);
            prop_assert!(t.cr_low > 0.0 && t.cr_high < 1.0);
            prop_assert!(t.or_low <= t.or_high && t.or_low > 0.0);
            // Means are averages of the draws, quantiles interpolate inside their range.
            let eta = p.log_odds_draws(lr, &t.treatment).unwrap();
            let probs: Vec<f64> = eta.iter().map(|&e| htenmr::scalar::expit(e)).collect();
            let lo = probs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(t.probability >= lo - 1e-15 && t.probability <= hi + 1e-15);
        }
        // Same seed, same anchor draws.
        let again = Predictor::new(&posterior(&d, &g0, &g), &anchor(alpha, se), opts).unwrap();
        prop_assert_eq!(again.predict(lr, None).unwrap(), res);
    }

    #[test]
    fn flat_odds_ratio_without_modifier(delta in -2.0f64..2.0, lr1 in -5.0f64..3.0, lr2 in -5.0f64..3.0) {
        let n = 10;
        let post = posterior(&vec![delta; n], &vec![1.0; n], &vec![0.0; n]);
        let p = Predictor::new(&post, &anchor(-0.4, 0.2), PredictOptions::default()).unwrap();
        let or1 = p.predict(lr1, None).unwrap().get("B").unwrap().odds_ratio;
        let or2 = p.predict(lr2, None).unwrap().get("B").unwrap().odds_ratio;
        prop_assert!((or1 - delta.exp()).abs() < 1e-12 * delta.exp().max(1.0));
        prop_assert!((or1 - or2).abs() < 1e-12 * or1.max(1.0));
    }
}
