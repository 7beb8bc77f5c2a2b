//! Validates the sampler and the constrained MAP against deterministic
//! quadrature on the M=3 simplex: total-variation agreement of histograms,
//! matching posterior moments, widening posteriors as operator uncertainty
//! grows, confidence-ellipse coverage calibration, and boundary MAP versus a
//! brute-force grid search.

use ndarray::{array, Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

use simplex_uq::covariance::{CovarianceEstimate, CovarianceMode};
use simplex_uq::inversion::{
    log_marginal_posterior, map_fixed_operator, mh_sample, summarize, InversionModel,
    InversionProblem, McmcConfig,
};
use simplex_uq::reference::{
    bin_simplex_draws_m3, posterior_grid_m3, simplex_grid_argmin_m3, tv_distance, PosteriorGrid,
};
use simplex_uq::rng::stream;
use simplex_uq::synth::generic_operator;
use simplex_uq::training::OperatorEstimate;

const T: usize = 12;
const SIGMA: f64 = 0.1;

fn problem(scaling: Array1<f64>, model: InversionModel, truth: &[f64]) -> InversionProblem {
    let a = generic_operator(T, 3);
    let m_true = Array1::from_vec(truth.to_vec());
    let mut s = a.dot(&m_true);
    // One fixed noise draw so the posterior is not centered exactly on truth.
    let mut rng = stream(77);
    for v in s.iter_mut() {
        *v += SIGMA * rng.sample::<f64, _>(StandardNormal);
    }
    let op = OperatorEstimate {
        matrix: a,
        b_matrix: Array2::eye(3),
        scaling,
        n_train: 30,
    };
    let cov = CovarianceEstimate::from_matrix(
        Array2::eye(T) * (SIGMA * SIGMA),
        CovarianceMode::Diag,
        1000,
    )
    .unwrap();
    InversionProblem::new(s, &op, &cov, model).unwrap()
}

fn grid_for(p: &InversionProblem, resolution: usize) -> PosteriorGrid {
    let a = generic_operator(T, 3);
    let sigma = Array2::eye(T) * (SIGMA * SIGMA);
    let scaling = match p.model() {
        InversionModel::FixedOperator => None,
        InversionModel::StochasticOperator => Some(p.scaling()),
    };
    posterior_grid_m3(p.observation(), a.view(), sigma.view(), scaling, resolution)
}

/// Aggregates a fine quadrature grid (resolution bins·q) into `bins`×`bins`
/// cells matching `bin_simplex_draws_m3`.
fn coarsen(grid: &PosteriorGrid, bins: usize) -> Array2<f64> {
    let q = grid.resolution / bins;
    assert_eq!(q * bins, grid.resolution, "resolution must be a multiple of bins");
    let mut out = Array2::<f64>::zeros((bins, bins));
    for ((i, j), &w) in grid.mass.indexed_iter() {
        out[(i / q, j / q)] += w;
    }
    out
}

fn compare_chain_to_grid(p: &InversionProblem, label: &str) {
    let grid = grid_for(p, 300);
    let config = McmcConfig {
        chain_length: 120_000,
        burn_in: 20_000,
        thinning: 10,
        seed: 5,
        ..McmcConfig::default()
    };
    let ens = mh_sample(p, &config).unwrap();
    assert!(!ens.meta.mixing_warning, "{label}: sampler failed to mix");

    for j in 0..3 {
        let diff = (ens.mean()[j] - grid.mean[j]).abs();
        assert!(
            diff < 0.01,
            "{label}: mean[{j}] {} vs quadrature {} (|Δ| = {diff})",
            ens.mean()[j],
            grid.mean[j]
        );
    }
    let cov_scale = grid
        .covariance
        .iter()
        .map(|v| v.abs())
        .fold(0.0f64, f64::max);
    for (idx, (&a, &b)) in ens
        .covariance()
        .iter()
        .zip(grid.covariance.iter())
        .enumerate()
    {
        assert!(
            (a - b).abs() < 0.15 * cov_scale,
            "{label}: covariance entry {idx}: {a} vs {b}"
        );
    }

    let draws: Vec<Array1<f64>> = ens
        .draws
        .rows()
        .into_iter()
        .map(|r| r.to_owned())
        .collect();
    let hist = bin_simplex_draws_m3(&draws, 15);
    let tv = tv_distance(&hist, &coarsen(&grid, 15));
    assert!(tv < 0.1, "{label}: TV distance {tv} between chain and quadrature");
}

#[test]
fn chain_matches_quadrature_fixed_operator() {
    let p = problem(
        array![0.0, 0.0, 0.0],
        InversionModel::FixedOperator,
        &[0.5, 0.3, 0.2],
    );
    compare_chain_to_grid(&p, "fixed");
}

#[test]
fn chain_matches_quadrature_stochastic_operator() {
    let p = problem(
        array![0.4, 0.2, 0.3],
        InversionModel::StochasticOperator,
        &[0.5, 0.3, 0.2],
    );
    compare_chain_to_grid(&p, "stochastic");
}

#[test]
fn posterior_widens_with_operator_uncertainty() {
    // Quadrature only: the marginal posterior's total variance must grow
    // monotonically as the training-variance factors scale up.
    let mut traces = Vec::new();
    for factor in [0.0, 0.5, 2.0, 8.0] {
        let scaling = array![0.4, 0.2, 0.3].mapv(|r: f64| r * factor);
        let model = if factor == 0.0 {
            InversionModel::FixedOperator
        } else {
            InversionModel::StochasticOperator
        };
        let p = problem(scaling, model, &[0.5, 0.3, 0.2]);
        let grid = grid_for(&p, 300);
        let trace: f64 = (0..3).map(|i| grid.covariance[(i, i)]).sum();
        traces.push(trace);
    }
    for w in traces.windows(2) {
        assert!(
            w[1] > w[0] * 1.02,
            "posterior trace failed to grow: {traces:?}"
        );
    }
}

#[test]
fn stochastic_map_shifts_toward_uniform_elsewhere_unchanged() {
    // With b(m) = 1 + Σ m_j² r_j, large uniform r penalizes concentrated
    // compositions through the T·ln b term, pulling the posterior mode
    // toward the barycenter relative to the fixed-operator MAP.
    let p_fixed = problem(
        array![0.0, 0.0, 0.0],
        InversionModel::FixedOperator,
        &[0.7, 0.2, 0.1],
    );
    let map_fixed = map_fixed_operator(&p_fixed).unwrap();

    let p_stoch = problem(
        array![5.0, 5.0, 5.0],
        InversionModel::StochasticOperator,
        &[0.7, 0.2, 0.1],
    );
    let mode_stoch =
        simplex_grid_argmin_m3(600, |m| -log_marginal_posterior(m, &p_stoch));

    let sq = |m: &Array1<f64>| m.iter().map(|v| v * v).sum::<f64>();
    assert!(
        sq(&mode_stoch) < sq(&map_fixed.values().to_owned()),
        "stochastic mode {mode_stoch:?} not flatter than fixed MAP {:?}",
        map_fixed.values()
    );
}

#[test]
fn boundary_map_agrees_with_grid_search() {
    // Truth on an edge of the simplex: the unconstrained optimum falls
    // outside and the active-set solver must clamp, matching brute force.
    let p = problem(
        array![0.0, 0.0, 0.0],
        InversionModel::FixedOperator,
        &[0.93, 0.07, 0.0],
    );
    let map = map_fixed_operator(&p).unwrap();
    let grid = simplex_grid_argmin_m3(800, |m| -log_marginal_posterior(m, &p));
    for j in 0..3 {
        assert!(
            (map.values()[j] - grid[j]).abs() <= 2.0 / 800.0,
            "MAP {:?} vs grid {grid:?}",
            map.values()
        );
    }
}

#[test]
fn ellipse_coverage_calibrates_to_nominal_level() {
    // Draws from a known Gaussian on (m₁, m₂) (third coordinate filled in by
    // the sum constraint): the 95% ellipse fitted from the draws must cover
    // ≈95% of them, for every coordinate pair.
    let n = 40_000;
    let center = (0.40, 0.35);
    let (sa, sb, rho) = (0.02, 0.015, 0.4);
    let mut rng = stream(12);
    let mut draws = Array2::<f64>::zeros((n, 3));
    for i in 0..n {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let x = center.0 + sa * z1;
        let y = center.1 + sb * (rho * z1 + (1.0 - rho * rho).sqrt() * z2);
        draws[(i, 0)] = x;
        draws[(i, 1)] = y;
        draws[(i, 2)] = 1.0 - x - y;
    }
    let summary = summarize(draws.view()).unwrap();
    for pair in [(0usize, 1usize), (0, 2), (1, 2)] {
        let ellipse = summary.confidence_ellipse(0.95, pair).unwrap();
        assert!(ellipse.semi_axes[0] >= ellipse.semi_axes[1]);
        let mut inside = 0usize;
        for row in draws.rows() {
            if summary.includes(row, 0.95, pair).unwrap() {
                inside += 1;
            }
        }
        let rate = inside as f64 / n as f64;
        assert!(
            (0.94..=0.96).contains(&rate),
            "pair {pair:?}: coverage {rate} at nominal 0.95"
        );
    }
}
