//! Operator training and training-uncertainty scaling.
//!
//! A training set pairs known compositions (columns of an M×N matrix) with
//! observed responses (columns of a T×N matrix). The estimated operator is
//! the maximum-a-posteriori solution under a flat operator prior and
//! i.i.d. Gaussian noise per training sample,
//!
//! ```text
//! Ã = S Mᵀ (M Mᵀ)⁻¹,
//! ```
//!
//! and each estimated row ã_t is Gaussian around the true row with
//! covariance r_t Σ scaled by factors r that depend only on the composition
//! matrix. `analytic_scaling_factor` provides the closed forms for the
//! standard mixture designs so experiment sizes can be planned without
//! simulating; `empirical_scaling_factors` computes the exact factors for a
//! concrete composition matrix.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::linalg::{spd_condition, Cholesky};
use crate::simplex::{validate_composition, MixtureDesign, MomentPair, SUM_TOLERANCE};

/// Largest Gram condition number accepted as "full rank".
pub const MAX_GRAM_CONDITION: f64 = 1e12;

/// Validated training pair: compositions M×N, observations T×N.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    compositions: Array2<f64>,
    observations: Array2<f64>,
}

impl TrainingSet {
    /// Column convention: one training sample per column of both matrices.
    pub fn new(compositions: Array2<f64>, observations: Array2<f64>) -> Result<Self> {
        let (m, n) = compositions.dim();
        let (t, n_obs) = observations.dim();
        if n == 0 || m == 0 || t == 0 {
            return Err(Error::Shape("training matrices must be non-empty".into()));
        }
        if n_obs != n {
            return Err(Error::Shape(format!(
                "compositions have {n} samples but observations have {n_obs}"
            )));
        }
        if n < m {
            return Err(Error::Param(format!(
                "need at least as many training samples as endmembers (N={n} < M={m})"
            )));
        }
        let mut compositions = compositions;
        for i in 0..n {
            let col = compositions.column(i).to_owned();
            let checked = validate_composition(col, SUM_TOLERANCE).map_err(|e| {
                Error::Composition {
                    index: i,
                    reason: e.to_string(),
                }
            })?;
            compositions.column_mut(i).assign(&checked.values());
        }
        if observations.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation matrix".into()));
        }
        let set = Self {
            compositions,
            observations,
        };
        let cond = spd_condition(set.gram().view());
        if !cond.is_finite() || cond > MAX_GRAM_CONDITION {
            return Err(Error::RankDeficient { cond });
        }
        Ok(set)
    }

    /// Builds from the sample-per-row file layout (N×M and N×T).
    pub fn from_rows(compositions: Array2<f64>, observations: Array2<f64>) -> Result<Self> {
        Self::new(compositions.t().to_owned(), observations.t().to_owned())
    }

    pub fn compositions(&self) -> ArrayView2<'_, f64> {
        self.compositions.view()
    }

    pub fn observations(&self) -> ArrayView2<'_, f64> {
        self.observations.view()
    }

    pub fn n_samples(&self) -> usize {
        self.compositions.ncols()
    }

    pub fn n_endmembers(&self) -> usize {
        self.compositions.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.observations.nrows()
    }

    /// Gram matrix M Mᵀ of the composition matrix.
    pub fn gram(&self) -> Array2<f64> {
        self.compositions.dot(&self.compositions.t())
    }
}

/// Trained operator with its training-uncertainty description.
#[derive(Clone, Debug)]
pub struct OperatorEstimate {
    /// Estimated operator Ã, T×M.
    pub matrix: Array2<f64>,
    /// Back-projection B = Mᵀ (M Mᵀ)⁻¹, N×M; Ã = S B.
    pub b_matrix: Array2<f64>,
    /// Variance scaling factor per endmember, r_i = ‖b_i‖² = [(M Mᵀ)⁻¹]_ii.
    pub scaling: Array1<f64>,
    /// Number of training samples used.
    pub n_train: usize,
}

/// MAP estimate of the forward operator from a training set.
pub fn estimate_operator(ts: &TrainingSet) -> Result<OperatorEstimate> {
    let gram = ts.gram();
    let cond = spd_condition(gram.view());
    if !cond.is_finite() || cond > MAX_GRAM_CONDITION {
        return Err(Error::RankDeficient { cond });
    }
    let chol = Cholesky::new(gram.view()).ok_or(Error::RankDeficient { cond })?;
    let gram_inv = chol.inverse();
    let b_matrix = ts.compositions().t().dot(&gram_inv);
    let matrix = ts.observations().dot(&b_matrix);
    let scaling = gram_inv.diag().to_owned();
    Ok(OperatorEstimate {
        matrix,
        b_matrix,
        scaling,
        n_train: ts.n_samples(),
    })
}

/// Exact per-endmember scaling factors diag((M Mᵀ)⁻¹) for a composition matrix.
pub fn empirical_scaling_factors(compositions: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    let gram = compositions.dot(&compositions.t());
    let cond = spd_condition(gram.view());
    if !cond.is_finite() || cond > MAX_GRAM_CONDITION {
        return Err(Error::RankDeficient { cond });
    }
    let chol = Cholesky::new(gram.view()).ok_or(Error::RankDeficient { cond })?;
    Ok(chol.inverse().diag().to_owned())
}

/// Sum of the scaling factors, trace((M Mᵀ)⁻¹).
pub fn summed_scaling_factor(compositions: ArrayView2<'_, f64>) -> Result<f64> {
    Ok(empirical_scaling_factors(compositions)?.sum())
}

/// Closed-form expected scaling factor for a design with N training samples.
///
/// For the repeated binary design this is the worst (first-endmember) factor;
/// `analytic_scaling_factors` gives the whole profile. Designs without a
/// closed form return [`Error::UnsupportedClosedForm`].
pub fn analytic_scaling_factor(design: MixtureDesign, n: usize) -> Result<f64> {
    design.validate()?;
    if n == 0 {
        return Err(Error::Param("n must be positive".into()));
    }
    let m = design.endmembers() as f64;
    let nf = n as f64;
    let value = match design {
        MixtureDesign::RepeatedPure { .. } => m / nf,
        MixtureDesign::RepeatedBinary { .. } => m * (4.0 * m - 3.0) / nf,
        MixtureDesign::Multinomial { .. } => m / nf,
        MixtureDesign::DoubleMultinomialWithReplacement { .. } => (2.0 * m - 1.0) / nf,
        MixtureDesign::DoubleMultinomialWithoutReplacement { .. } => {
            // M(2M−3)/(M−2) = 2M + M/(M−2); M ≥ 3 is enforced by validate().
            m * (2.0 * m - 3.0) / ((m - 2.0) * nf)
        }
        MixtureDesign::UniformSimplex { .. } => m * m / nf,
        MixtureDesign::PseudoUniform { .. } => {
            return Err(Error::UnsupportedClosedForm(
                "pseudo-uniform design has no closed-form scaling factor; \
                 use moment-based or empirical factors"
                    .into(),
            ))
        }
    };
    Ok(value)
}

/// Per-endmember closed-form scaling factors for a design with N samples.
///
/// Stochastic designs are exchangeable, so the profile is flat. The repeated
/// binary design decays from (4M−3)/K at the first endmember to 1/K at the
/// last, with K = N/M repetitions of the base block.
pub fn analytic_scaling_factors(design: MixtureDesign, n: usize) -> Result<Array1<f64>> {
    design.validate()?;
    let m = design.endmembers();
    match design {
        MixtureDesign::RepeatedBinary { .. } | MixtureDesign::RepeatedPure { .. } => {
            if n == 0 || n % m != 0 {
                return Err(Error::Param(format!(
                    "repeated designs need N divisible by M (N={n}, M={m})"
                )));
            }
            let k = (n / m) as f64;
            Ok(match design {
                MixtureDesign::RepeatedPure { .. } => Array1::from_elem(m, 1.0 / k),
                _ => Array1::from_shape_fn(m, |i| (4.0 * (m - 1 - i) as f64 + 1.0) / k),
            })
        }
        _ => Ok(Array1::from_elem(m, analytic_scaling_factor(design, n)?)),
    }
}

/// Expected scaling factor from design moments: with α = σ − β,
/// r = (α + (M−1)β) / (N α (α + Mβ)).
pub fn scaling_factor_from_moments(moments: MomentPair, m: usize, n: usize) -> Result<f64> {
    if m < 2 {
        return Err(Error::Param("m must be at least 2".into()));
    }
    if n == 0 {
        return Err(Error::Param("n must be positive".into()));
    }
    let alpha = moments.alpha();
    let mf = m as f64;
    let denom = alpha + mf * moments.beta;
    if alpha <= 0.0 || denom <= 0.0 {
        return Err(Error::Param(format!(
            "degenerate design moments (sigma={}, beta={})",
            moments.sigma, moments.beta
        )));
    }
    Ok((alpha + (mf - 1.0) * moments.beta) / ((n as f64) * alpha * denom))
}

/// Ratio of observed estimator variance to its predicted value.
///
/// `estimates` are replicated operator fits of a common truth; `noise_var`
/// holds the per-channel noise variance σ_t²; `scaling` the per-endmember
/// factors r_j; `index_set` the (0-based) channels to average over. Returns
/// γ_j = mean_{t∈set} Var[ã_tj] / (r_j · mean_{t∈set} σ_t²), which tends to 1
/// when the variance law holds.
pub fn gamma_ratio(
    estimates: &[OperatorEstimate],
    noise_var: ArrayView1<'_, f64>,
    scaling: ArrayView1<'_, f64>,
    index_set: &[usize],
) -> Result<Array1<f64>> {
    if estimates.len() < 2 {
        return Err(Error::VarianceUndefined(format!(
            "need at least 2 replications to estimate variance, got {}",
            estimates.len()
        )));
    }
    let shape = estimates[0].matrix.dim();
    if estimates.iter().any(|e| e.matrix.dim() != shape) {
        return Err(Error::Shape("replications have mismatched shapes".into()));
    }
    let (t, m) = shape;
    if noise_var.len() != t {
        return Err(Error::Shape(format!(
            "noise variance has {} entries for {t} channels",
            noise_var.len()
        )));
    }
    if scaling.len() != m {
        return Err(Error::Shape(format!(
            "scaling has {} entries for {m} endmembers",
            scaling.len()
        )));
    }
    if index_set.is_empty() {
        return Err(Error::Param("index set is empty".into()));
    }
    if let Some(&bad) = index_set.iter().find(|&&i| i >= t) {
        return Err(Error::Param(format!(
            "index {bad} outside 0..{t} in index set"
        )));
    }
    if scaling.iter().any(|&r| r <= 0.0) {
        return Err(Error::Param("scaling factors must be positive".into()));
    }
    let reps = estimates.len() as f64;
    let mut gamma = Array1::zeros(m);
    let sigma2_set =
        index_set.iter().map(|&i| noise_var[i]).sum::<f64>() / index_set.len() as f64;
    for j in 0..m {
        let mut var_sum = 0.0;
        let mut scale_sum = 0.0;
        for &ti in index_set {
            let mean = estimates.iter().map(|e| e.matrix[[ti, j]]).sum::<f64>() / reps;
            let ss = estimates
                .iter()
                .map(|e| {
                    let d = e.matrix[[ti, j]] - mean;
                    d * d
                })
                .sum::<f64>();
            var_sum += ss / (reps - 1.0);
            scale_sum += mean * mean;
        }
        let avg_var = var_sum / index_set.len() as f64;
        gamma[j] = if sigma2_set <= 0.0 {
            // Noise-free replicates agree up to floating-point dust; measure
            // the spread against the entries' own magnitude before treating
            // it as a genuine variance with no noise to explain it.
            let scale = scale_sum / index_set.len() as f64;
            if avg_var <= (scale + 1.0) * 1e-24 {
                0.0
            } else {
                return Err(Error::Param(
                    "index set has zero noise variance but nonzero estimator variance".into(),
                ));
            }
        } else {
            avg_var / (scaling[j] * sigma2_set)
        };
    }
    Ok(gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::ge_invert;
    use crate::rng::stream;
    use crate::simplex::{binary_design_matrix, exact_moments, sample_matrix, DesignSampler};
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn repeated_identity(m: usize, k: usize) -> Array2<f64> {
        let mut out = Array2::zeros((m, m * k));
        for rep in 0..k {
            for j in 0..m {
                out[[j, rep * m + j]] = 1.0;
            }
        }
        out
    }

    #[test]
    fn identity_compositions_recover_observations() {
        // M = I ⇒ Ã = S exactly.
        let comps = repeated_identity(3, 1);
        let obs = array![[1.0, 2.0, 3.0], [0.5, -1.0, 2.0]];
        let ts = TrainingSet::new(comps, obs.clone()).unwrap();
        let est = estimate_operator(&ts).unwrap();
        for (a, b) in est.matrix.iter().zip(obs.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        assert_eq!(est.b_matrix.dim(), (3, 3));
        for r in est.scaling.iter() {
            assert_abs_diff_eq!(*r, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn repeated_pure_averages_observations() {
        // Two copies of e1 with responses (1,0) and (3,0): column 1 of Ã is
        // the average (2,0); the Gram is singular in M=1-of-2 sense so embed
        // in M=2 with both endmembers observed.
        let comps = array![[1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]];
        let obs = array![[1.0, 3.0, 0.0, 0.0], [0.0, 0.0, 1.0, 3.0]];
        let ts = TrainingSet::new(comps, obs).unwrap();
        let est = estimate_operator(&ts).unwrap();
        assert_abs_diff_eq!(est.matrix[[0, 0]], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(est.matrix[[1, 0]], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(est.matrix[[1, 1]], 2.0, epsilon = 1e-12);
        // K = 2 repetitions of each pure sample: r = 1/2 per endmember.
        for r in est.scaling.iter() {
            assert_abs_diff_eq!(*r, 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn matches_generic_least_squares_solution() {
        // Oracle: solve the normal equations with plain Gaussian elimination.
        let mut rng = stream(31);
        let (m, n, t) = (4, 12, 7);
        let comps = sample_matrix(
            MixtureDesign::UniformSimplex { m },
            n,
            &mut rng,
        )
        .unwrap();
        let mut obs = Array2::zeros((t, n));
        obs.mapv_inplace(|_| -> f64 { rng.sample(StandardNormal) });
        let ts = TrainingSet::new(comps.clone(), obs.clone()).unwrap();
        let est = estimate_operator(&ts).unwrap();

        let gram = comps.dot(&comps.t());
        let gram_inv = ge_invert(gram.view()).unwrap();
        let oracle = obs.dot(&comps.t()).dot(&gram_inv);
        for (a, b) in est.matrix.iter().zip(oracle.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
        let scale_oracle = gram_inv.diag();
        for (a, b) in est.scaling.iter().zip(scale_oracle.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn pure_design_scaling_is_one_over_k() {
        let comps = repeated_identity(5, 7);
        let r = empirical_scaling_factors(comps.view()).unwrap();
        for v in r.iter() {
            assert_abs_diff_eq!(*v, 1.0 / 7.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(
            summed_scaling_factor(comps.view()).unwrap(),
            5.0 / 7.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn binary_design_scaling_profile() {
        // Single base block, M = 3: diag of the Gram inverse is (9, 5, 1).
        let m0 = binary_design_matrix(3).unwrap();
        let r = empirical_scaling_factors(m0.view()).unwrap();
        assert_abs_diff_eq!(r[0], 9.0, epsilon = 1e-10);
        assert_abs_diff_eq!(r[1], 5.0, epsilon = 1e-10);
        assert_abs_diff_eq!(r[2], 1.0, epsilon = 1e-10);

        // M = 10, K = 4: first endmember factor (4M−3)/K = 37/4.
        let mut comps = Array2::zeros((10, 40));
        let base = binary_design_matrix(10).unwrap();
        for k in 0..4 {
            comps
                .slice_mut(ndarray::s![.., k * 10..(k + 1) * 10])
                .assign(&base);
        }
        let r = empirical_scaling_factors(comps.view()).unwrap();
        assert_abs_diff_eq!(r[0], 37.0 / 4.0, epsilon = 1e-9);
        let analytic = analytic_scaling_factors(
            MixtureDesign::RepeatedBinary { m: 10, k: 4 },
            40,
        )
        .unwrap();
        for (a, b) in r.iter().zip(analytic.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn analytic_factor_table() {
        // Spot values for all closed forms.
        assert_abs_diff_eq!(
            analytic_scaling_factor(MixtureDesign::Multinomial { m: 3 }, 30).unwrap(),
            0.1,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            analytic_scaling_factor(MixtureDesign::UniformSimplex { m: 3 }, 9).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            analytic_scaling_factor(
                MixtureDesign::DoubleMultinomialWithoutReplacement { m: 3 },
                9
            )
            .unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            analytic_scaling_factor(
                MixtureDesign::DoubleMultinomialWithReplacement { m: 4 },
                100
            )
            .unwrap(),
            0.07,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            analytic_scaling_factor(MixtureDesign::RepeatedPure { m: 5, k: 2 }, 10)
                .unwrap(),
            0.5,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            analytic_scaling_factor(MixtureDesign::RepeatedBinary { m: 10, k: 1 }, 10)
                .unwrap(),
            37.0,
            epsilon = 1e-12
        );
        assert!(matches!(
            analytic_scaling_factor(MixtureDesign::PseudoUniform { m: 3 }, 10),
            Err(Error::UnsupportedClosedForm(_))
        ));
    }

    #[test]
    fn moment_formula_matches_table() {
        for m in 3..=12 {
            for design in [
                MixtureDesign::Multinomial { m },
                MixtureDesign::DoubleMultinomialWithReplacement { m },
                MixtureDesign::DoubleMultinomialWithoutReplacement { m },
                MixtureDesign::UniformSimplex { m },
            ] {
                let n = 97;
                let got =
                    scaling_factor_from_moments(exact_moments(design).unwrap(), m, n)
                        .unwrap();
                let want = analytic_scaling_factor(design, n).unwrap();
                assert_abs_diff_eq!(got, want, epsilon = 1e-12 * want.max(1.0));
            }
        }
    }

    #[test]
    fn degenerate_moments_are_rejected() {
        // σ = β means all coordinates equal (α = 0): Gram is rank one.
        let err = scaling_factor_from_moments(
            MomentPair {
                sigma: 0.25,
                beta: 0.25,
            },
            4,
            10,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Param(_)));
    }

    #[test]
    fn rank_deficient_training_is_rejected() {
        // All samples identical: Gram condition is effectively infinite.
        let comps = array![
            [0.5, 0.5, 0.5, 0.5],
            [0.3, 0.3, 0.3, 0.3],
            [0.2, 0.2, 0.2, 0.2]
        ];
        let obs = Array2::zeros((2, 4));
        match TrainingSet::new(comps, obs) {
            Err(Error::RankDeficient { cond }) => assert!(cond > MAX_GRAM_CONDITION),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn too_few_samples_is_param_error() {
        let comps = array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]];
        let obs = Array2::zeros((2, 2));
        assert!(matches!(
            TrainingSet::new(comps, obs),
            Err(Error::Param(_))
        ));
    }

    #[test]
    fn invalid_composition_column_reports_index() {
        let comps = array![[1.0, 0.4], [0.0, 0.4]];
        let obs = Array2::zeros((2, 2));
        match TrainingSet::new(comps, obs) {
            Err(Error::Composition { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gamma_is_zero_without_noise() {
        // Identical replications ⇒ zero variance ⇒ γ = 0 even at σ² > 0.
        let comps = repeated_identity(2, 2);
        let obs = array![[1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]];
        let ts = TrainingSet::new(comps, obs).unwrap();
        let est = estimate_operator(&ts).unwrap();
        let reps = vec![est.clone(), est.clone(), est];
        let gamma = gamma_ratio(
            &reps,
            array![0.01, 0.01].view(),
            array![0.5, 0.5].view(),
            &[0, 1],
        )
        .unwrap();
        for g in gamma.iter() {
            assert_eq!(*g, 0.0);
        }
    }

    #[test]
    fn gamma_requires_two_replications() {
        let comps = repeated_identity(2, 1);
        let obs = Array2::zeros((2, 2));
        let ts = TrainingSet::new(comps, obs).unwrap();
        let est = estimate_operator(&ts).unwrap();
        assert!(matches!(
            gamma_ratio(
                &[est],
                array![1.0, 1.0].view(),
                array![1.0, 1.0].view(),
                &[0]
            ),
            Err(Error::VarianceUndefined(_))
        ));
    }

    #[test]
    fn gamma_near_one_under_matching_noise() {
        // Fixed compositions + fresh noise, normalized by the *empirical*
        // factors: γ concentrates at 1 (only Monte Carlo error remains).
        let mut rng = stream(77);
        let m = 4;
        let n = 24;
        let t = 16;
        let mut sampler = DesignSampler::new(MixtureDesign::UniformSimplex { m }).unwrap();
        let mut comps = Array2::zeros((m, n));
        for i in 0..n {
            comps
                .column_mut(i)
                .assign(&sampler.sample_composition(&mut rng).values());
        }
        let a_true = Array2::from_shape_fn((t, m), |(i, j)| ((i * m + j) as f64).sin());
        let sd = 0.3;
        let reps = 3000;
        let mut estimates = Vec::with_capacity(reps);
        for _ in 0..reps {
            let mut obs = a_true.dot(&comps);
            obs.mapv_inplace(|v| v + sd * rng.sample::<f64, _>(StandardNormal));
            let ts = TrainingSet::new(comps.clone(), obs).unwrap();
            estimates.push(estimate_operator(&ts).unwrap());
        }
        let scaling = empirical_scaling_factors(comps.view()).unwrap();
        let noise_var = Array1::from_elem(t, sd * sd);
        let all: Vec<usize> = (0..t).collect();
        let gamma = gamma_ratio(&estimates, noise_var.view(), scaling.view(), &all).unwrap();
        // SE of a variance ratio over reps=3000 with t=16 channel averaging
        // is ≈ sqrt(2/3000)/4 ≈ 0.6%; allow 4 sigma.
        for g in gamma.iter() {
            assert_abs_diff_eq!(*g, 1.0, epsilon = 0.03);
        }
    }

    #[test]
    fn estimator_is_unbiased_over_replications() {
        let mut rng = stream(5150);
        let m = 3;
        let n = 12;
        let t = 6;
        let comps = sample_matrix(MixtureDesign::DoubleMultinomialWithReplacement { m }, n, &mut rng)
            .unwrap();
        let a_true =
            Array2::from_shape_fn((t, m), |(i, j)| 1.0 + (i as f64) * 0.1 - (j as f64) * 0.2);
        let sd = 0.5;
        let reps = 5000;
        let mut mean = Array2::<f64>::zeros((t, m));
        for _ in 0..reps {
            let mut obs = a_true.dot(&comps);
            obs.mapv_inplace(|v| v + sd * rng.sample::<f64, _>(StandardNormal));
            let ts = TrainingSet::new(comps.clone(), obs).unwrap();
            mean += &estimate_operator(&ts).unwrap().matrix;
        }
        mean /= reps as f64;
        // SE per entry ≈ sd·sqrt(r_max/reps) ≈ 0.5·sqrt(1.5/5000) ≈ 0.009.
        let tol = 0.05;
        for (a, b) in mean.iter().zip(a_true.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = tol);
        }
    }
}
