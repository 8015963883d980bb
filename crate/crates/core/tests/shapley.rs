use rand::Rng;
use rand_distr::{Distribution, Normal};
use urbcause::gbdt::{fit, TrainConfig};
use urbcause::shapley::{
    causal_shapley_values, coalition_table, interventional_expectation, marginal_shapley_values,
    mean_absolute_importance, shapley_from_table, CausalChain, FnPredictor, ShapleyConfig,
    ShapleyExplanation, ValueKind,
};
use urbcause::stats;

fn gaussian_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stats::rng(seed);
    let z = Normal::new(0.0, 1.0).unwrap();
    (0..n)
        .map(|_| (0..d).map(|_| z.sample(&mut rng)).collect())
        .collect()
}

fn chain(d: usize) -> CausalChain {
    CausalChain::singletons(&(0..d).collect::<Vec<_>>())
}

fn efficiency_gap(e: &ShapleyExplanation<f64>) -> f64 {
    (e.phi.iter().sum::<f64>() - (e.prediction - e.base_value)).abs()
}

#[test]
fn permutation_oracle_matches_enumeration() {
    let model = FnPredictor {
        n_features: 3,
        f: |x: &[f64]| x[0] * x[1] + (x[2] * 2.0).sin() + x[0].powi(2),
    };
    let reference = gaussian_rows(300, 3, 1);
    let x = [0.4, -1.2, 0.9];
    for kind in [ValueKind::Causal, ValueKind::Marginal] {
        let t = coalition_table(
            &model,
            &x,
            kind,
            &chain(3),
            &reference,
            &ShapleyConfig::default(),
        )
        .unwrap();
        let e = shapley_from_table(&t, kind, 0);
        let perms = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        for i in 0..3 {
            let mut acc = 0.0;
            for p in &perms {
                let mut mask = 0u32;
                for &j in p {
                    if j == i {
                        break;
                    }
                    mask |= 1 << j;
                }
                acc += t.value(mask | 1 << i) - t.value(mask);
            }
            let oracle = acc / 6.0;
            assert!(
                (e.phi[i] - oracle).abs() < 1e-12,
                "{kind:?} feature {i}: {} vs {oracle}",
                e.phi[i]
            );
        }
        assert!(efficiency_gap(&e) <= 1e-9);
    }
}

#[test]
fn linear_model_matches_closed_form() {
    let beta = [1.5, -2.0, 0.5];
    let model = FnPredictor {
        n_features: 3,
        f: move |x: &[f64]| 0.3 + beta.iter().zip(x).map(|(b, v)| b * v).sum::<f64>(),
    };
    let reference = gaussian_rows(2000, 3, 2);
    let mu: Vec<f64> = (0..3)
        .map(|j| reference.iter().map(|r| r[j]).sum::<f64>() / 2000.0)
        .collect();
    let x = [1.0, 0.5, -1.5];
    let cfg = ShapleyConfig {
        n_samples: 400,
        ..ShapleyConfig::default()
    };
    let marginal = marginal_shapley_values(&model, &x, &reference, &cfg).unwrap();
    for j in 0..3 {
        let expect = beta[j] * (x[j] - mu[j]);
        assert!(
            (marginal.phi[j] - expect).abs() <= 3.0 * marginal.phi_se[j],
            "marginal feature {j}: {} vs {expect} (se {})",
            marginal.phi[j],
            marginal.phi_se[j]
        );
    }
    // Under the chain, later features are drawn from ten-row neighbourhoods,
    // which adds an error of about beta * sd / sqrt(10) beyond sampling noise.
    let causal = causal_shapley_values(&model, &x, &chain(3), &reference, &cfg).unwrap();
    for j in 0..3 {
        let expect = beta[j] * (x[j] - mu[j]);
        let tol = 3.0
            * (causal.phi_se[j].powi(2) + beta.iter().map(|b| b * b).sum::<f64>() / 10.0).sqrt();
        assert!(
            (causal.phi[j] - expect).abs() <= tol,
            "causal feature {j}: {} vs {expect}",
            causal.phi[j]
        );
    }
}

#[test]
fn interventional_expectation_of_linear_model() {
    let model = FnPredictor {
        n_features: 2,
        f: |x: &[f64]| 2.0 * x[0] - x[1] + 1.0,
    };
    let reference = gaussian_rows(1000, 2, 3);
    let mu1 = reference.iter().map(|r| r[1]).sum::<f64>() / 1000.0;
    let cfg = ShapleyConfig {
        n_samples: 2000,
        ..ShapleyConfig::default()
    };
    // feature 1 heads the chain, so it is drawn from the empirical marginal
    let order = CausalChain::singletons(&[1, 0]);
    let v =
        interventional_expectation(&model, &[0], &[0.7, 3.0], &order, &reference, &cfg).unwrap();
    let expect = 2.0 * 0.7 - mu1 + 1.0;
    let sd1 = (reference.iter().map(|r| (r[1] - mu1).powi(2)).sum::<f64>() / 999.0).sqrt();
    assert!(
        (v - expect).abs() <= 3.0 * sd1 / (2000f64).sqrt(),
        "{v} vs {expect}"
    );
    let constant = FnPredictor {
        n_features: 2,
        f: |_: &[f64]| 4.25,
    };
    assert_eq!(
        interventional_expectation(&constant, &[], &[0.0, 0.0], &chain(2), &reference, &cfg)
            .unwrap(),
        4.25
    );
}

#[test]
fn constant_model_gets_zero_attribution() {
    let model = FnPredictor {
        n_features: 4,
        f: |_: &[f64]| 7.0,
    };
    let reference = gaussian_rows(100, 4, 4);
    let e = causal_shapley_values(
        &model,
        &[1.0, 2.0, 3.0, 4.0],
        &chain(4),
        &reference,
        &ShapleyConfig::default(),
    )
    .unwrap();
    assert!(e.phi.iter().all(|&p| p == 0.0));
    assert_eq!(e.base_value, 7.0);
}

#[test]
fn symmetric_features_share_credit() {
    let model = FnPredictor {
        n_features: 3,
        f: |x: &[f64]| (x[0] + x[1]).exp() * 0.1 + x[2],
    };
    // every row appears with features 0 and 1 swapped, so they are exchangeable
    let reference: Vec<Vec<f64>> = gaussian_rows(250, 3, 5)
        .into_iter()
        .flat_map(|r| [r.clone(), vec![r[1], r[0], r[2]]])
        .collect();
    let x = [0.8, 0.8, -0.3];
    let e = marginal_shapley_values(&model, &x, &reference, &ShapleyConfig::default()).unwrap();
    let se = (e.phi_se[0].powi(2) + e.phi_se[1].powi(2)).sqrt();
    assert!(
        (e.phi[0] - e.phi[1]).abs() <= 3.0 * se,
        "{} vs {}",
        e.phi[0],
        e.phi[1]
    );
    let joint = CausalChain {
        components: vec![vec![0, 1], vec![2]],
    };
    let c =
        causal_shapley_values(&model, &x, &joint, &reference, &ShapleyConfig::default()).unwrap();
    let se = (c.phi_se[0].powi(2) + c.phi_se[1].powi(2)).sqrt();
    assert!(
        (c.phi[0] - c.phi[1]).abs() <= 3.0 * se,
        "{} vs {}",
        c.phi[0],
        c.phi[1]
    );
}

#[test]
fn unused_tree_feature_gets_exact_zero() {
    let mut rng = stats::rng(6);
    let n = 400;
    let mut cols: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..n).map(|_| rng.random::<f64>()).collect())
        .collect();
    // feature 2 is constant in training, so no tree can split on it
    cols.push(vec![0.5; n]);
    let y: Vec<f64> = (0..n)
        .map(|i| 4.0 * cols[0][i] - cols[1][i] * cols[1][i])
        .collect();
    let model = fit(&cols, &y, &TrainConfig::default()).unwrap();
    assert!(!model.used_features().contains(&2));
    let reference: Vec<Vec<f64>> = (0..n)
        .map(|i| vec![cols[0][i], cols[1][i], rng.random::<f64>()])
        .collect();
    for r in reference.iter().take(20) {
        let c = causal_shapley_values(&model, r, &chain(3), &reference, &ShapleyConfig::default())
            .unwrap();
        let m = marginal_shapley_values(&model, r, &reference, &ShapleyConfig::default()).unwrap();
        assert_eq!(c.phi[2], 0.0);
        assert_eq!(m.phi[2], 0.0);
        assert!(efficiency_gap(&c) <= 1e-9 && efficiency_gap(&m) <= 1e-9);
    }
}

#[test]
fn explanations_are_deterministic() {
    let model = FnPredictor {
        n_features: 3,
        f: |x: &[f64]| x[0] * x[2] - x[1],
    };
    let reference = gaussian_rows(200, 3, 7);
    let cfg = ShapleyConfig {
        seed: 99,
        ..ShapleyConfig::default()
    };
    let a = causal_shapley_values(&model, &[0.1, 0.2, 0.3], &chain(3), &reference, &cfg).unwrap();
    let b = causal_shapley_values(&model, &[0.1, 0.2, 0.3], &chain(3), &reference, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn root_cause_gains_credit_under_causal_value() {
    // x0 -> x1 -> x2 with strong links; the model only reads x2.
    let mut rng = stats::rng(8);
    let z = Normal::new(0.0, 1.0).unwrap();
    let reference: Vec<Vec<f64>> = (0..1500)
        .map(|_| {
            let a = z.sample(&mut rng);
            let b = 0.9 * a + 0.3 * z.sample(&mut rng);
            let c = 0.9 * b + 0.3 * z.sample(&mut rng);
            vec![a, b, c]
        })
        .collect();
    let model = FnPredictor {
        n_features: 3,
        f: |x: &[f64]| x[2],
    };
    let mut causal = Vec::new();
    let mut marginal = Vec::new();
    for (i, r) in reference.iter().take(40).enumerate() {
        let cfg = ShapleyConfig {
            seed: i as u64,
            ..ShapleyConfig::default()
        };
        causal.push(causal_shapley_values(&model, r, &chain(3), &reference, &cfg).unwrap());
        marginal.push(marginal_shapley_values(&model, r, &reference, &cfg).unwrap());
    }
    let ic = mean_absolute_importance(&causal, true).unwrap();
    let im = mean_absolute_importance(&marginal, true).unwrap();
    assert!(ic[0] > im[0], "causal {} vs marginal {}", ic[0], im[0]);
    assert_eq!(im[0], 0.0);
}

#[test]
fn importance_concentrates_on_single_cause() {
    let mut rng = stats::rng(10);
    let n = 600;
    let cols: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..n).map(|_| rng.random::<f64>()).collect())
        .collect();
    let y: Vec<f64> = (0..n)
        .map(|i| 5.0 * cols[1][i] + 0.05 * rng.random::<f64>())
        .collect();
    let model = fit(&cols, &y, &TrainConfig::default()).unwrap();
    let reference: Vec<Vec<f64>> = (0..n)
        .map(|i| cols.iter().map(|c| c[i]).collect())
        .collect();
    let ex: Vec<_> = reference
        .iter()
        .take(50)
        .map(|r| {
            causal_shapley_values(&model, r, &chain(4), &reference, &ShapleyConfig::default())
                .unwrap()
        })
        .collect();
    let imp = mean_absolute_importance(&ex, true).unwrap();
    assert!(imp[1] > 0.7, "importance {imp:?}");
    assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn importance_ignores_sign() {
    let e = |phi: Vec<f64>| ShapleyExplanation {
        phi_se: vec![0.0; phi.len()],
        phi,
        base_value: 0.0,
        prediction: 0.0,
        value_kind: ValueKind::Causal,
        n_samples: 1,
        seed: 0,
    };
    let a = mean_absolute_importance(&[e(vec![1.0, -2.0])], false).unwrap();
    let b = mean_absolute_importance(&[e(vec![-1.0, 2.0])], false).unwrap();
    assert_eq!(a, vec![1.0, 2.0]);
    assert_eq!(a, b);
}
