use rand::Rng;
use rand_distr::{Distribution, Normal};
use urbcause::gbdt::{fit, regression_metrics, TrainConfig};
use urbcause::stats;

fn predictions(model: &urbcause::gbdt::GbdtModel<f64>, columns: &[Vec<f64>]) -> Vec<f64> {
    let rows: Vec<Vec<f64>> = (0..columns[0].len())
        .map(|i| columns.iter().map(|c| c[i]).collect())
        .collect();
    model.predict_rows(&rows).unwrap()
}

fn assert_loss_non_increasing(loss: &[f64]) {
    for w in loss.windows(2) {
        assert!(w[1] <= w[0], "training loss rose from {} to {}", w[0], w[1]);
    }
}

#[test]
fn step_function_is_recovered() {
    let x: Vec<f64> = (0..200).map(|i| -1.0 + 2.0 * i as f64 / 199.0).collect();
    let y: Vec<f64> = x.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
    let cfg = TrainConfig {
        n_trees: 50,
        max_depth: 1,
        // 0.05 leaves 0.95^50 of the step unfitted, which caps R2 near 0.977
        learning_rate: 0.1,
        ..TrainConfig::default()
    };
    let model = fit(&[x.clone()], &y, &cfg).unwrap();
    let m = regression_metrics(&y, &predictions(&model, &[x]));
    assert!(m.r2 >= 0.99, "step R2 {}", m.r2);
    assert!(m.mae <= m.rmse);
    assert_loss_non_increasing(&model.training_loss);
}

#[test]
fn linear_target_fits_with_defaults() {
    let mut rng = stats::rng(7);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let x1: Vec<f64> = (0..2000).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let x2: Vec<f64> = (0..2000).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let y: Vec<f64> = x1
        .iter()
        .zip(&x2)
        .map(|(a, b)| 3.0 * a - 2.0 * b + noise.sample(&mut rng))
        .collect();
    let cols = vec![x1, x2];
    let model = fit(&cols, &y, &TrainConfig::default()).unwrap();
    let m = regression_metrics(&y, &predictions(&model, &cols));
    assert!(m.r2 >= 0.95, "linear R2 {}", m.r2);
    assert!(m.mae <= m.rmse);
    assert_loss_non_increasing(&model.training_loss);
    assert_eq!(model.training_loss.len(), model.trees.len() + 1);
}

#[test]
fn batch_prediction_matches_single_calls() {
    let mut rng = stats::rng(3);
    let cols: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..300).map(|_| rng.random::<f64>()).collect())
        .collect();
    let y: Vec<f64> = (0..300)
        .map(|i| cols[0][i] * cols[1][i] + cols[2][i].sin())
        .collect();
    let model = fit(&cols, &y, &TrainConfig::default()).unwrap();
    let rows: Vec<Vec<f64>> = (0..300)
        .map(|i| cols.iter().map(|c| c[i]).collect())
        .collect();
    let batch = model.predict_rows(&rows).unwrap();
    for (r, b) in rows.iter().zip(&batch) {
        assert_eq!(model.predict(r).unwrap(), *b);
    }
    assert!(model.predict(&[0.0, 1.0]).is_err());
}

#[test]
fn row_order_does_not_change_predictions() {
    let mut rng = stats::rng(5);
    let n = 400;
    let cols: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..n).map(|_| rng.random::<f64>()).collect())
        .collect();
    let y: Vec<f64> = (0..n)
        .map(|i| (cols[0][i] * 6.0).sin() + cols[1][i])
        .collect();
    let base = fit(&cols, &y, &TrainConfig::default()).unwrap();
    let mut perm: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
    let pcols: Vec<Vec<f64>> = cols
        .iter()
        .map(|c| perm.iter().map(|&i| c[i]).collect())
        .collect();
    let py: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
    let other = fit(&pcols, &py, &TrainConfig::default()).unwrap();
    for i in 0..n {
        let x = [cols[0][i], cols[1][i]];
        let (a, b) = (base.predict(&x).unwrap(), other.predict(&x).unwrap());
        assert!((a - b).abs() < 1e-9, "row {i}: {a} vs {b}");
    }
}

#[test]
fn mae_never_exceeds_rmse() {
    let mut rng = stats::rng(9);
    for _ in 0..200 {
        let n = rng.random_range(1..50);
        let t: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 10.0).collect();
        let p: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 10.0).collect();
        let m = regression_metrics(&t, &p);
        assert!(m.mae <= m.rmse + 1e-12);
    }
}
