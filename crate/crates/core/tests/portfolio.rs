use hjb_core::{estimate_moments, PriceHistory};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Prices driven by correlated normal log-returns with known moments.
fn synthetic_history(samples: usize, drift: &[f64], chol: &[Vec<f64>], seed: u64) -> PriceHistory {
    let n = drift.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut level = vec![100.0_f64; n];
    let mut prices = vec![level.clone()];
    let mut dates = vec![date(0)];
    for t in 1..=samples {
        let e: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        for i in 0..n {
            let shock: f64 = (0..=i).map(|k| chol[i][k] * e[k]).sum();
            level[i] *= (drift[i] + shock).exp();
        }
        prices.push(level.clone());
        dates.push(date(t));
    }
    let tickers = (0..n).map(|i| format!("S{i}")).collect();
    PriceHistory::new(tickers, dates, prices).unwrap()
}

/// Consecutive calendar days from 1900-01-01, valid ISO dates.
fn date(t: usize) -> String {
    let (mut y, mut d) = (1900usize, t);
    loop {
        let leap = (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
        let len = if leap { 366 } else { 365 };
        if d < len {
            break;
        }
        d -= len;
        y += 1;
    }
    let leap = (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
    let months = [31, if leap { 29 } else { 28 }, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];
    let mut m = 0;
    while d >= months[m] {
        d -= months[m];
        m += 1;
    }
    format!("{y:04}-{:02}-{:02}", m + 1, d + 1)
}

#[test]
fn estimates_fall_within_three_standard_errors() {
    let drift = [4e-4, 2e-4, -1e-4];
    let chol = vec![
        vec![0.02, 0.0, 0.0],
        vec![0.006, 0.012, 0.0],
        vec![-0.004, 0.003, 0.009],
    ];
    let cov: Vec<Vec<f64>> = (0..3)
        .map(|i| (0..3).map(|j| (0..3).map(|k| chol[i][k] * chol[j][k]).sum()).collect())
        .collect();
    let samples = 100_000;
    let ppy = 252.0;
    let history = synthetic_history(samples, &drift, &chol, 11);
    let model = estimate_moments(&history, ppy).unwrap();
    let count = samples as f64;
    for i in 0..3 {
        // standard error of the annualized sample mean
        let se = ppy * (cov[i][i] / count).sqrt();
        assert!((model.mu()[i] - ppy * drift[i]).abs() < 3.0 * se, "mu_{i}");
        for j in 0..3 {
            // standard error of a sample covariance of jointly normal data
            let se = ppy * ((cov[i][i] * cov[j][j] + cov[i][j] * cov[i][j]) / count).sqrt();
            assert!((model.sigma().get(i, j) - ppy * cov[i][j]).abs() < 3.0 * se, "sigma_{i}{j}");
        }
    }
}

#[test]
fn calendar_helper_emits_valid_dates() {
    assert_eq!(date(0), "1900-01-01");
    assert_eq!(date(59), "1900-03-01");
    assert_eq!(date(365), "1901-01-01");
}
