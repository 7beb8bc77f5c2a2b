//! Independent reference implementations backing the verification suite.
//!
//! Everything here deliberately avoids the main code paths it is used to
//! check: plain Gaussian elimination instead of the Cholesky route, exhaustive
//! grid scans instead of the active-set solver, and deterministic quadrature
//! instead of Monte Carlo. Slow and simple on purpose.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::simplex::MomentPair;

/// Frozen outputs of the pinned pseudo-uniform oracle configuration
/// (midpoint rule, 100 nodes per dimension). The M=2 values sit 4.2e−5 from
/// the analytic E[U₁²] = 1 − ln 2 (midpoint truncation); a 200-node run puts
/// the M=3 truth within ~6e−6 of these constants.
pub const PSEUDO_UNIFORM_SIGMA_M3: f64 = 0.14341077953230813;
pub const PSEUDO_UNIFORM_BETA_M3: f64 = 0.094961276900512523;
pub const PSEUDO_UNIFORM_SIGMA_M2: f64 = 0.30681054774802619;
pub const PSEUDO_UNIFORM_BETA_M2: f64 = 0.19318945225197387;

/// Midpoint-rule quadrature of the pseudo-uniform second moments
/// E[U₁²] = ∫ u₁²/(Σu)² du and E[U₁U₂] = ∫ u₁u₂/(Σu)² du over [0,1]^M.
///
/// Supports M ∈ {2, 3}; `nodes_per_dim = 100` is the pinned reference
/// configuration (cost 10⁴ / 10⁶ evaluations).
pub fn pseudo_uniform_moments(m: usize, nodes_per_dim: usize) -> MomentPair {
    assert!(m == 2 || m == 3, "quadrature oracle supports M ∈ {{2,3}}");
    assert!(nodes_per_dim >= 2);
    let n = nodes_per_dim;
    let node = |i: usize| (i as f64 + 0.5) / n as f64;
    let mut sigma = 0.0f64;
    let mut beta = 0.0f64;
    if m == 2 {
        for i in 0..n {
            let u = node(i);
            let mut s_acc = 0.0;
            let mut b_acc = 0.0;
            for j in 0..n {
                let v = node(j);
                let denom = (u + v) * (u + v);
                s_acc += u * u / denom;
                b_acc += u * v / denom;
            }
            sigma += s_acc;
            beta += b_acc;
        }
        let vol = 1.0 / (n * n) as f64;
        return MomentPair { sigma: sigma * vol, beta: beta * vol };
    }
    for i in 0..n {
        let u = node(i);
        let mut s_acc = 0.0;
        let mut b_acc = 0.0;
        for j in 0..n {
            let v = node(j);
            for k in 0..n {
                let w = node(k);
                let t = u + v + w;
                let denom = t * t;
                s_acc += u * u / denom;
                b_acc += u * v / denom;
            }
        }
        sigma += s_acc;
        beta += b_acc;
    }
    let vol = 1.0 / (n * n * n) as f64;
    MomentPair { sigma: sigma * vol, beta: beta * vol }
}

/// Gaussian elimination with partial pivoting, solving `a·X = B`.
/// Returns `None` on a (numerically) singular pivot.
pub fn ge_solve(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n);
    assert_eq!(b.nrows(), n);
    let mut aug = Array2::<f64>::zeros((n, n + b.ncols()));
    aug.slice_mut(ndarray::s![.., ..n]).assign(&a);
    aug.slice_mut(ndarray::s![.., n..]).assign(&b);
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&r1, &r2| aug[(r1, col)].abs().total_cmp(&aug[(r2, col)].abs()))
            .unwrap();
        let pivot = aug[(pivot_row, col)];
        if pivot.abs() < 1e-300 || !pivot.is_finite() {
            return None;
        }
        if pivot_row != col {
            for j in 0..n + b.ncols() {
                aug.swap((col, j), (pivot_row, j));
            }
        }
        for row in col + 1..n {
            let f = aug[(row, col)] / aug[(col, col)];
            if f == 0.0 {
                continue;
            }
            for j in col..n + b.ncols() {
                let v = aug[(col, j)];
                aug[(row, j)] -= f * v;
            }
        }
    }
    let mut x = Array2::<f64>::zeros((n, b.ncols()));
    for rhs in 0..b.ncols() {
        for row in (0..n).rev() {
            let mut s = aug[(row, n + rhs)];
            for j in row + 1..n {
                s -= aug[(row, j)] * x[(j, rhs)];
            }
            x[(row, rhs)] = s / aug[(row, row)];
        }
    }
    Some(x)
}

/// Dense inverse by Gaussian elimination.
pub fn ge_invert(a: ArrayView2<'_, f64>) -> Option<Array2<f64>> {
    ge_solve(a, Array2::<f64>::eye(a.nrows()).view())
}

/// Exhaustive minimization over the M=3 simplex lattice with the given number
/// of steps per unit (step size 1/steps). Returns the best lattice point.
pub fn simplex_grid_argmin_m3<F: FnMut(ArrayView1<'_, f64>) -> f64>(
    steps: usize,
    mut objective: F,
) -> Array1<f64> {
    let mut best = Array1::from_vec(vec![1.0, 0.0, 0.0]);
    let mut best_val = f64::INFINITY;
    let h = 1.0 / steps as f64;
    let mut point = Array1::<f64>::zeros(3);
    for i in 0..=steps {
        for j in 0..=steps - i {
            let k = steps - i - j;
            point[0] = i as f64 * h;
            point[1] = j as f64 * h;
            point[2] = k as f64 * h;
            let v = objective(point.view());
            if v < best_val {
                best_val = v;
                best.assign(&point);
            }
        }
    }
    best
}

/// Deterministic quadrature of the (fixed- or stochastic-operator) posterior
/// on the M=3 simplex over a `resolution`×`resolution` midpoint grid in the
/// (m₁, m₂) plane.
pub struct PosteriorGrid {
    pub resolution: usize,
    /// Normalized cell masses; cells outside the simplex carry zero.
    pub mass: Array2<f64>,
    pub mean: Array1<f64>,
    pub covariance: Array2<f64>,
}

/// Quadrature of p(m|s) ∝ b(m)^(−T/2)·exp(−½·(s−A₀m)ᵀ(b(m)Σ)⁻¹(s−A₀m)) with
/// b(m) = 1 + Σ m_j² r_j (`scaling = None` means b ≡ 1, the fixed-operator
/// likelihood). `sigma` is inverted here by Gaussian elimination so the
/// oracle shares nothing with the covariance module.
pub fn posterior_grid_m3(
    s: ArrayView1<'_, f64>,
    a0: ArrayView2<'_, f64>,
    sigma: ArrayView2<'_, f64>,
    scaling: Option<ArrayView1<'_, f64>>,
    resolution: usize,
) -> PosteriorGrid {
    assert_eq!(a0.ncols(), 3, "grid oracle is for M=3");
    let t = s.len() as f64;
    let precision = ge_invert(sigma).expect("oracle covariance must be invertible");
    let res = resolution;
    let h = 1.0 / res as f64;
    let mut logd = Array2::<f64>::from_elem((res, res), f64::NEG_INFINITY);
    let mut max_log = f64::NEG_INFINITY;
    for i in 0..res {
        let m1 = (i as f64 + 0.5) * h;
        for j in 0..res {
            let m2 = (j as f64 + 0.5) * h;
            let m3 = 1.0 - m1 - m2;
            if m3 < 0.0 {
                continue;
            }
            let m = [m1, m2, m3];
            let b = match scaling {
                Some(r) => 1.0 + m.iter().zip(r.iter()).map(|(mj, rj)| mj * mj * rj).sum::<f64>(),
                None => 1.0,
            };
            let mut quad = 0.0;
            // δᵀ P δ with δ = s − A₀m
            for (row, &sv) in s.iter().enumerate() {
                let pred: f64 = (0..3).map(|c| a0[(row, c)] * m[c]).sum();
                let d = sv - pred;
                let mut acc = 0.0;
                for (col, &sv2) in s.iter().enumerate() {
                    let pred2: f64 = (0..3).map(|c| a0[(col, c)] * m[c]).sum();
                    acc += precision[(row, col)] * (sv2 - pred2);
                }
                quad += d * acc;
            }
            let ld = -0.5 * t * b.ln() - 0.5 * quad / b;
            logd[(i, j)] = ld;
            if ld > max_log {
                max_log = ld;
            }
        }
    }
    let mut mass = logd.mapv(|ld| if ld.is_finite() { (ld - max_log).exp() } else { 0.0 });
    let total = mass.sum();
    mass.mapv_inplace(|w| w / total);

    let mut mean = Array1::<f64>::zeros(3);
    let mut second = Array2::<f64>::zeros((3, 3));
    for i in 0..res {
        let m1 = (i as f64 + 0.5) * h;
        for j in 0..res {
            let w = mass[(i, j)];
            if w == 0.0 {
                continue;
            }
            let m2 = (j as f64 + 0.5) * h;
            let m = [m1, m2, 1.0 - m1 - m2];
            for a in 0..3 {
                mean[a] += w * m[a];
                for b in 0..3 {
                    second[(a, b)] += w * m[a] * m[b];
                }
            }
        }
    }
    let mut covariance = second;
    for a in 0..3 {
        for b in 0..3 {
            covariance[(a, b)] -= mean[a] * mean[b];
        }
    }
    PosteriorGrid { resolution: res, mass, mean, covariance }
}

/// Bins M=3 simplex points into the same (m₁, m₂) grid as
/// [`posterior_grid_m3`], normalized to total mass 1.
pub fn bin_simplex_draws_m3(draws: &[Array1<f64>], resolution: usize) -> Array2<f64> {
    let res = resolution;
    let mut mass = Array2::<f64>::zeros((res, res));
    for d in draws {
        let i = ((d[0] * res as f64) as usize).min(res - 1);
        let j = ((d[1] * res as f64) as usize).min(res - 1);
        mass[(i, j)] += 1.0;
    }
    let total = mass.sum();
    if total > 0.0 {
        mass.mapv_inplace(|w| w / total);
    }
    mass
}

/// Total-variation distance between two normalized histograms.
pub fn tv_distance(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    0.5 * a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
}
