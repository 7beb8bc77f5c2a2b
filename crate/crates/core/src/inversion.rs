//! Bayesian inversion of an observation onto the simplex.
//!
//! Two posterior models share one setup. The *fixed-operator* model treats
//! the trained operator as exact, giving a Gaussian likelihood whose MAP on
//! the simplex is a convex quadratic program. The *stochastic-operator*
//! model propagates training uncertainty: marginalizing the Gaussian
//! operator posterior inflates the noise covariance by
//!
//! ```text
//! b(m) = 1 + Σ_j m_j² r_j,
//! ```
//!
//! so the marginal density gains a b(m)^(−T/2) factor and is no longer
//! Gaussian; it is sampled by a random-walk Metropolis chain whose proposal
//! lives in the zero-sum tangent plane of the simplex.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::covariance::{invert_covariance, CovarianceEstimate, Precision};
use crate::error::{Error, Result};
use crate::linalg::{quad_form, Cholesky};
use crate::simplex::Composition;
use crate::training::OperatorEstimate;

/// Which posterior the problem evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InversionModel {
    FixedOperator,
    StochasticOperator,
}

/// Consecutive out-of-simplex proposals tolerated before giving up.
const MAX_PROPOSAL_REJECTIONS: u64 = 10_000;

/// Observation plus trained operator, ready for MAP solves and sampling.
#[derive(Clone, Debug)]
pub struct InversionProblem {
    observation: Array1<f64>,
    operator: Array2<f64>,
    scaling: Array1<f64>,
    model: InversionModel,
    precision: Precision,
    /// Q = ÃᵀΣ⁻¹Ã.
    normal: Array2<f64>,
    /// c = ÃᵀΣ⁻¹s.
    atps: Array1<f64>,
    /// sᵀΣ⁻¹s, the constant completing ‖s − Ãm‖²_Σ⁻¹ = sᵀΣ⁻¹s − 2cᵀm + mᵀQm.
    obs_quad: f64,
    /// Lower factor L with L Lᵀ = Q⁻¹; proposal shape for the sampler.
    proposal: Array2<f64>,
}

impl InversionProblem {
    pub fn new(
        observation: Array1<f64>,
        operator: &OperatorEstimate,
        covariance: &CovarianceEstimate,
        model: InversionModel,
    ) -> Result<Self> {
        let (t, m) = operator.matrix.dim();
        if observation.len() != t {
            return Err(Error::Shape(format!(
                "observation has {} channels but the operator has {t}",
                observation.len()
            )));
        }
        if covariance.dim() != t {
            return Err(Error::Shape(format!(
                "covariance is {}×{} but the operator has {t} channels",
                covariance.dim(),
                covariance.dim()
            )));
        }
        if observation.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation vector".into()));
        }
        if model == InversionModel::StochasticOperator
            && operator.scaling.iter().any(|&r| r <= 0.0)
        {
            return Err(Error::Param(
                "stochastic-operator model needs positive scaling factors".into(),
            ));
        }
        let precision = invert_covariance(covariance)?;
        let normal = precision.normal_matrix(operator.matrix.view());
        let chol = Cholesky::new(normal.view()).ok_or_else(|| {
            Error::NonUnique(format!(
                "ÃᵀΣ⁻¹Ã is rank deficient for {m} endmembers; the observation \
                 does not pin down a unique composition"
            ))
        })?;
        let inv = chol.inverse();
        // Any square root works for proposal sampling; re-factor the inverse.
        let proposal = Cholesky::new(inv.view())
            .ok_or_else(|| Error::NonUnique("proposal covariance is singular".into()))?
            .factor()
            .to_owned();
        let atps = operator.matrix.t().dot(&precision.dot(observation.view()));
        let obs_quad = precision.quad_form(observation.view());
        Ok(Self {
            observation,
            operator: operator.matrix.clone(),
            scaling: operator.scaling.clone(),
            model,
            precision,
            normal,
            atps,
            obs_quad,
            proposal,
        })
    }

    /// Channel-space precision Σ⁻¹ used to weight residuals.
    pub fn precision(&self) -> &Precision {
        &self.precision
    }

    pub fn n_channels(&self) -> usize {
        self.operator.nrows()
    }

    pub fn n_endmembers(&self) -> usize {
        self.operator.ncols()
    }

    pub fn model(&self) -> InversionModel {
        self.model
    }

    pub fn observation(&self) -> ArrayView1<'_, f64> {
        self.observation.view()
    }

    pub fn scaling(&self) -> ArrayView1<'_, f64> {
        self.scaling.view()
    }

    /// Proposal shape factor L (lower triangular, L Lᵀ = (ÃᵀΣ⁻¹Ã)⁻¹).
    pub fn proposal_factor(&self) -> ArrayView2<'_, f64> {
        self.proposal.view()
    }
}

/// Variance inflation from training uncertainty at composition `m`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct UncertaintyFactor {
    /// b(m) = 1 + Σ_j m_j² r_j.
    pub b: f64,
    /// Upper bound 1 + max_j r_j attained at the worst vertex.
    pub b_max: f64,
}

/// Computes b(m); scaling factors must be non-negative.
pub fn uncertainty_factor(m: &Composition, scaling: ArrayView1<'_, f64>) -> Result<UncertaintyFactor> {
    if m.len() != scaling.len() {
        return Err(Error::Shape(format!(
            "composition has {} entries, scaling has {}",
            m.len(),
            scaling.len()
        )));
    }
    if scaling.iter().any(|&r| r < 0.0) {
        return Err(Error::Param("scaling factors must be non-negative".into()));
    }
    let b = 1.0
        + m.values()
            .iter()
            .zip(scaling.iter())
            .map(|(&mi, &ri)| mi * mi * ri)
            .sum::<f64>();
    let b_max = 1.0 + scaling.iter().cloned().fold(0.0f64, f64::max);
    Ok(UncertaintyFactor { b, b_max })
}

fn in_simplex(x: ArrayView1<'_, f64>) -> bool {
    let mut sum = 0.0;
    for &v in x {
        if !(v >= 0.0) {
            return false;
        }
        sum += v;
    }
    (sum - 1.0).abs() <= 1e-9
}

fn b_factor(x: ArrayView1<'_, f64>, scaling: ArrayView1<'_, f64>) -> f64 {
    1.0 + x
        .iter()
        .zip(scaling.iter())
        .map(|(&mi, &ri)| mi * mi * ri)
        .sum::<f64>()
}

/// Unnormalized log posterior density at `m` (−∞ outside the simplex).
///
/// Fixed model: −½ (s−Ãm)ᵀ Σ⁻¹ (s−Ãm). Stochastic model additionally
/// divides the quadratic by b(m) and subtracts (T/2)·ln b(m).
pub fn log_marginal_posterior(m: ArrayView1<'_, f64>, p: &InversionProblem) -> f64 {
    if m.len() != p.n_endmembers() || !in_simplex(m) {
        return f64::NEG_INFINITY;
    }
    // Expanded residual norm; O(M²) instead of O(T²) per evaluation, which
    // is what makes long chains affordable. Clamped at zero because the
    // expansion can go fractionally negative when the fit is near perfect.
    let quad = (p.obs_quad - 2.0 * m.dot(&p.atps) + quad_form(p.normal.view(), m)).max(0.0);
    match p.model {
        InversionModel::FixedOperator => -0.5 * quad,
        InversionModel::StochasticOperator => {
            let b = b_factor(m, p.scaling.view());
            let t = p.n_channels() as f64;
            -0.5 * (quad / b + t * b.ln())
        }
    }
}

/// MAP composition under the fixed-operator model.
///
/// Minimizes ½ mᵀQm − cᵀm with Q = ÃᵀΣ⁻¹Ã over the simplex by a primal
/// active-set method: the sum constraint stays in the working set, bounds
/// enter when a step hits them and leave when their multiplier goes
/// negative. Also the initial state of the stochastic sampler.
pub fn map_fixed_operator(p: &InversionProblem) -> Result<Composition> {
    let m = p.n_endmembers();
    if m == 1 {
        return Composition::new(Array1::from_elem(1, 1.0));
    }
    let x = active_set_qp(&p.normal, &p.atps)?;
    Composition::new(x)
}

fn active_set_qp(q: &Array2<f64>, c: &Array1<f64>) -> Result<Array1<f64>> {
    let m = q.nrows();
    let mut x = Array1::from_elem(m, 1.0 / m as f64);
    let mut active = vec![false; m];
    let cap = 50 * (m + 2);
    for _ in 0..cap {
        let free: Vec<usize> = (0..m).filter(|&i| !active[i]).collect();
        let nf = free.len();
        let g = q.dot(&x) - c;
        // Equality-constrained step on the free coordinates.
        let mut qff = Array2::zeros((nf, nf));
        for (a, &i) in free.iter().enumerate() {
            for (b, &j) in free.iter().enumerate() {
                qff[[a, b]] = q[[i, j]];
            }
        }
        let chol = Cholesky::new(qff.view()).ok_or_else(|| {
            Error::NonUnique("reduced normal matrix is not positive definite".into())
        })?;
        let gf = Array1::from_iter(free.iter().map(|&i| g[i]));
        let u = chol.solve_vec((-&gf).view());
        let v = chol.solve_vec(Array1::from_elem(nf, 1.0).view());
        let lambda = -u.sum() / v.sum();
        let d: Array1<f64> = &u + &(&v * lambda);

        let scale = 1.0 + x.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        if d.iter().all(|&di| di.abs() <= 1e-12 * scale) {
            // Converged on this working set; test the bound multipliers.
            let mut worst = (0usize, -1e-10 * (1.0 + lambda.abs()));
            for i in 0..m {
                if active[i] {
                    let mu = g[i] - lambda;
                    if mu < worst.1 {
                        worst = (i, mu);
                    }
                }
            }
            if worst.1 >= -1e-10 * (1.0 + lambda.abs()) {
                return Ok(x);
            }
            active[worst.0] = false;
            continue;
        }

        // Longest feasible step toward the subproblem optimum.
        let mut alpha = 1.0f64;
        let mut blocking = None;
        for (a, &i) in free.iter().enumerate() {
            if d[a] < 0.0 {
                let limit = -x[i] / d[a];
                if limit < alpha {
                    alpha = limit;
                    blocking = Some(i);
                }
            }
        }
        for (a, &i) in free.iter().enumerate() {
            x[i] += alpha * d[a];
        }
        if let Some(i) = blocking {
            x[i] = 0.0;
            active[i] = true;
        }
    }
    Err(Error::NonFinite(
        "constrained MAP solve exceeded its iteration budget".into(),
    ))
}

/// Worst KKT violation of `x` for the fixed-operator program of `p`.
///
/// Combines stationarity on the support, dual feasibility of the bounds and
/// primal feasibility, normalized by the gradient scale.
pub fn kkt_residual(p: &InversionProblem, x: ArrayView1<'_, f64>) -> f64 {
    let g = p.normal.dot(&x) - &p.atps;
    let gscale = 1.0 + g.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let free: Vec<usize> = (0..x.len()).filter(|&i| x[i] > 1e-10).collect();
    let lambda = free.iter().map(|&i| g[i]).sum::<f64>() / free.len() as f64;
    let mut worst = (x.sum() - 1.0).abs();
    for i in 0..x.len() {
        if x[i] < 0.0 {
            worst = worst.max(-x[i]);
        }
        if x[i] > 1e-10 {
            worst = worst.max((g[i] - lambda).abs() / gscale);
        } else {
            worst = worst.max((lambda - g[i]).max(0.0) / gscale);
        }
    }
    worst
}

/// Candidate state plus how many out-of-simplex draws it took.
#[derive(Clone, Debug)]
pub struct Proposal {
    pub candidate: Array1<f64>,
    pub rejections: u64,
}

/// Random-walk proposal in the zero-sum plane, rejected against the simplex.
///
/// The step is scale·(Lξ − mean(Lξ)1) with ξ standard normal, so candidate
/// coordinates keep the unit sum of `m`; draws are repeated until the
/// candidate is non-negative, and [`Error::StepScale`] reports a scale so
/// large that [`MAX_PROPOSAL_REJECTIONS`] consecutive draws left the simplex.
pub fn propose<R: Rng + ?Sized>(
    m: ArrayView1<'_, f64>,
    factor: ArrayView2<'_, f64>,
    scale: f64,
    rng: &mut R,
) -> Result<Proposal> {
    let dim = m.len();
    let mut xi = Array1::zeros(dim);
    let mut rejections = 0u64;
    loop {
        for v in xi.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let mut step = factor.dot(&xi);
        let mean = step.sum() / dim as f64;
        step.mapv_inplace(|v| (v - mean) * scale);
        let candidate = &m + &step;
        if candidate.iter().all(|&v| v >= 0.0) {
            return Ok(Proposal {
                candidate,
                rejections,
            });
        }
        rejections += 1;
        if rejections >= MAX_PROPOSAL_REJECTIONS {
            return Err(Error::StepScale { rejections });
        }
    }
}

/// Metropolis ratio min(1, exp(Δ log density) · z_ratio).
pub fn acceptance_ratio(
    m: ArrayView1<'_, f64>,
    candidate: ArrayView1<'_, f64>,
    p: &InversionProblem,
    z_ratio: f64,
) -> f64 {
    let lp_m = log_marginal_posterior(m, p);
    let lp_c = log_marginal_posterior(candidate, p);
    if lp_c == f64::NEG_INFINITY {
        return 0.0;
    }
    if lp_m == f64::NEG_INFINITY {
        return 1.0;
    }
    let log_acc = lp_c - lp_m + z_ratio.ln();
    if log_acc >= 0.0 {
        1.0
    } else {
        log_acc.exp()
    }
}

fn default_chain_length() -> usize {
    50_000
}
fn default_burn_in() -> usize {
    10_000
}
fn default_thinning() -> usize {
    10
}
fn default_scale() -> f64 {
    1.0
}
fn default_z_mc_samples() -> usize {
    256
}

/// Metropolis chain configuration. `z_threshold = None` calibrates the
/// boundary-correction trigger to half the mean burn-in step length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    #[serde(default = "default_chain_length")]
    pub chain_length: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_thinning")]
    pub thinning: usize,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default)]
    pub z_threshold: Option<f64>,
    #[serde(default = "default_z_mc_samples")]
    pub z_mc_samples: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            chain_length: default_chain_length(),
            burn_in: default_burn_in(),
            thinning: default_thinning(),
            scale: default_scale(),
            z_threshold: None,
            z_mc_samples: default_z_mc_samples(),
            seed: 0,
        }
    }
}

/// Book-keeping from a finished chain.
#[derive(Clone, Debug, Serialize)]
pub struct ChainMeta {
    pub chain_length: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
    /// Proposal scale after burn-in adaptation.
    pub final_scale: f64,
    /// Step length above which the boundary correction is evaluated.
    pub z_threshold: f64,
    /// How many post-burn-in steps evaluated the boundary correction.
    pub z_reeval_count: u64,
    /// Post-burn-in acceptance below 1%: treat the draws with suspicion.
    pub mixing_warning: bool,
}

/// Mean and covariance of a draw matrix (one draw per row).
#[derive(Clone, Debug)]
pub struct EnsembleSummary {
    pub mean: Array1<f64>,
    pub covariance: Array2<f64>,
    pub n_draws: usize,
}

/// Moment summary of posterior draws; needs at least two rows.
pub fn summarize(draws: ArrayView2<'_, f64>) -> Result<EnsembleSummary> {
    let (n, m) = draws.dim();
    if n < 2 {
        return Err(Error::VarianceUndefined(format!(
            "need at least 2 draws to summarize, got {n}"
        )));
    }
    let mut mean = Array1::zeros(m);
    for row in draws.rows() {
        mean += &row;
    }
    mean /= n as f64;
    let mut covariance = Array2::zeros((m, m));
    for row in draws.rows() {
        let d = &row - &mean;
        for i in 0..m {
            for j in i..m {
                covariance[[i, j]] += d[i] * d[j];
            }
        }
    }
    covariance /= (n - 1) as f64;
    for i in 0..m {
        for j in 0..i {
            covariance[[i, j]] = covariance[[j, i]];
        }
    }
    Ok(EnsembleSummary {
        mean,
        covariance,
        n_draws: n,
    })
}

/// χ² quantile with two degrees of freedom: −2 ln(1 − level).
pub fn chi2_quantile_2dof(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Param(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    Ok(-2.0 * (1.0 - level).ln())
}

/// Marginal confidence ellipse for one coordinate pair.
#[derive(Clone, Debug, Serialize)]
pub struct ConfidenceEllipse {
    pub pair: (usize, usize),
    pub level: f64,
    pub center: [f64; 2],
    pub covariance: [[f64; 2]; 2],
    /// χ²₂ quantile used as the Mahalanobis radius².
    pub chi2: f64,
    /// Major/minor semi-axis lengths sqrt(χ²·λ).
    pub semi_axes: [f64; 2],
    /// Orientation of the major axis, radians in (−π/2, π/2].
    pub angle: f64,
}

fn eigen_2x2(a: f64, b: f64, c: f64) -> ((f64, f64), f64) {
    // Symmetric [[a, b], [b, c]]: eigenvalues and major-axis angle.
    let half_tr = 0.5 * (a + c);
    let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let l1 = half_tr + disc;
    let l2 = half_tr - disc;
    let mut angle = if b.abs() <= 1e-300 {
        if a >= c {
            0.0
        } else {
            std::f64::consts::FRAC_PI_2
        }
    } else {
        (l1 - a).atan2(b)
    };
    // An axis direction is a line: fold into (−π/2, π/2].
    if angle > std::f64::consts::FRAC_PI_2 {
        angle -= std::f64::consts::PI;
    }
    ((l1, l2), angle)
}

impl EnsembleSummary {
    fn pair_blocks(&self, pair: (usize, usize)) -> Result<([f64; 2], [[f64; 2]; 2])> {
        let m = self.mean.len();
        let (i, j) = pair;
        if i >= m || j >= m || i == j {
            return Err(Error::Param(format!(
                "coordinate pair ({i}, {j}) invalid for {m} endmembers"
            )));
        }
        let center = [self.mean[i], self.mean[j]];
        let cov = [
            [self.covariance[[i, i]], self.covariance[[i, j]]],
            [self.covariance[[j, i]], self.covariance[[j, j]]],
        ];
        Ok((center, cov))
    }

    /// Confidence ellipse of the (i, j) marginal at the given level.
    pub fn confidence_ellipse(
        &self,
        level: f64,
        pair: (usize, usize),
    ) -> Result<ConfidenceEllipse> {
        let chi2 = chi2_quantile_2dof(level)?;
        let (center, cov) = self.pair_blocks(pair)?;
        let ((l1, l2), angle) = eigen_2x2(cov[0][0], cov[0][1], cov[1][1]);
        Ok(ConfidenceEllipse {
            pair,
            level,
            center,
            covariance: cov,
            chi2,
            semi_axes: [(chi2 * l1.max(0.0)).sqrt(), (chi2 * l2.max(0.0)).sqrt()],
            angle,
        })
    }

    /// Whether `truth` falls inside the (i, j) marginal ellipse.
    ///
    /// Degenerate directions (zero variance) admit only points matching the
    /// center to 1e−9 along them.
    pub fn includes(
        &self,
        truth: ArrayView1<'_, f64>,
        level: f64,
        pair: (usize, usize),
    ) -> Result<bool> {
        let chi2 = chi2_quantile_2dof(level)?;
        let (center, cov) = self.pair_blocks(pair)?;
        if truth.len() != self.mean.len() {
            return Err(Error::Shape(format!(
                "truth has {} entries, expected {}",
                truth.len(),
                self.mean.len()
            )));
        }
        let d = [truth[pair.0] - center[0], truth[pair.1] - center[1]];
        let ((l1, l2), angle) = eigen_2x2(cov[0][0], cov[0][1], cov[1][1]);
        let (cs, sn) = (angle.cos(), angle.sin());
        // Components of d in the eigenbasis (major axis first).
        let proj = [cs * d[0] + sn * d[1], -sn * d[0] + cs * d[1]];
        let floor = l1.max(0.0) * 1e-12;
        let mut q = 0.0;
        for (p, l) in proj.iter().zip([l1, l2]) {
            if l > floor && l > 0.0 {
                q += p * p / l;
            } else if p.abs() > 1e-9 {
                return Ok(false);
            }
        }
        Ok(q <= chi2)
    }
}

/// Posterior sample of the inversion problem.
#[derive(Clone, Debug)]
pub struct PosteriorEnsemble {
    /// One draw per row, each summing to 1.
    pub draws: Array2<f64>,
    /// Unnormalized log density of each draw.
    pub log_densities: Array1<f64>,
    /// Post-burn-in acceptance fraction.
    pub acceptance_rate: f64,
    /// Highest-density recorded draw.
    pub map_draw: Composition,
    pub summary: EnsembleSummary,
    pub meta: ChainMeta,
}

impl PosteriorEnsemble {
    pub fn mean(&self) -> ArrayView1<'_, f64> {
        self.summary.mean.view()
    }

    pub fn covariance(&self) -> ArrayView2<'_, f64> {
        self.summary.covariance.view()
    }

    pub fn confidence_ellipse(&self, level: f64, pair: (usize, usize)) -> Result<ConfidenceEllipse> {
        self.summary.confidence_ellipse(level, pair)
    }

    pub fn includes(
        &self,
        truth: ArrayView1<'_, f64>,
        level: f64,
        pair: (usize, usize),
    ) -> Result<bool> {
        self.summary.includes(truth, level, pair)
    }
}

/// Fraction estimate (as a count) of proposal steps from `x` staying in the
/// simplex; the boundary-correction weight is a ratio of two such counts.
fn in_simplex_count<R: Rng + ?Sized>(
    x: ArrayView1<'_, f64>,
    factor: ArrayView2<'_, f64>,
    scale: f64,
    samples: usize,
    rng: &mut R,
) -> u64 {
    let dim = x.len();
    let mut xi = Array1::zeros(dim);
    let mut count = 0u64;
    for _ in 0..samples {
        for v in xi.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let mut step = factor.dot(&xi);
        let mean = step.sum() / dim as f64;
        step.mapv_inplace(|v| (v - mean) * scale);
        if x.iter().zip(step.iter()).all(|(&a, &b)| a + b >= 0.0) {
            count += 1;
        }
    }
    count
}

const ADAPT_WINDOW: usize = 100;
const ADAPT_TARGET: f64 = 0.3;

/// Samples the posterior by random-walk Metropolis.
///
/// Starts at the fixed-operator MAP. During burn-in the proposal scale is
/// adapted toward ≈30% acceptance and the boundary correction is off; both
/// are frozen afterwards so the recorded chain targets a fixed kernel. Long
/// steps near the boundary re-weight by the ratio of in-simplex proposal
/// fractions, estimated with `z_mc_samples` draws per endpoint.
pub fn mh_sample(p: &InversionProblem, config: &McmcConfig) -> Result<PosteriorEnsemble> {
    if config.chain_length <= config.burn_in {
        return Err(Error::Param(format!(
            "chain length {} must exceed burn-in {}",
            config.chain_length, config.burn_in
        )));
    }
    if config.thinning == 0 {
        return Err(Error::Param("thinning must be at least 1".into()));
    }
    if !(config.scale.is_finite() && config.scale > 0.0) {
        return Err(Error::Param(format!(
            "proposal scale must be positive, got {}",
            config.scale
        )));
    }
    if config.z_mc_samples == 0 {
        return Err(Error::Param("z_mc_samples must be at least 1".into()));
    }
    if let Some(th) = config.z_threshold {
        if !(th >= 0.0) {
            return Err(Error::Param(format!(
                "z_threshold must be non-negative, got {th}"
            )));
        }
    }
    let kept = (config.chain_length - config.burn_in) / config.thinning;
    if kept < 2 {
        return Err(Error::VarianceUndefined(format!(
            "chain records {kept} draws; need at least 2 (increase chain length \
             or decrease thinning)"
        )));
    }

    let mut rng = crate::rng::stream(config.seed);
    let m = p.n_endmembers();
    let mut state = map_fixed_operator(p)?.into_inner();
    let mut logd = log_marginal_posterior(state.view(), p);
    if !logd.is_finite() {
        return Err(Error::NonFinite("posterior density at the initial state".into()));
    }

    let mut scale = config.scale;
    let mut z_threshold = if config.burn_in == 0 {
        config.z_threshold.unwrap_or(f64::INFINITY)
    } else {
        f64::INFINITY
    };
    let mut burn_step_sum = 0.0;
    let mut window_accepts = 0usize;
    let mut window_resamples = 0u64;
    let mut accepted_post = 0u64;
    let mut z_reeval_count = 0u64;
    let mut draws = Array2::zeros((kept, m));
    let mut log_densities = Array1::zeros(kept);
    let mut recorded = 0usize;

    for step in 1..=config.chain_length {
        let in_burn = step <= config.burn_in;
        let proposal = propose(state.view(), p.proposal_factor(), scale, &mut rng)?;
        let cand = proposal.candidate;
        let jump = state
            .iter()
            .zip(cand.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();

        let mut z_ratio = 1.0;
        if !in_burn && jump > z_threshold {
            let from_state = in_simplex_count(
                state.view(),
                p.proposal_factor(),
                scale,
                config.z_mc_samples,
                &mut rng,
            )
            .max(1);
            let from_cand = in_simplex_count(
                cand.view(),
                p.proposal_factor(),
                scale,
                config.z_mc_samples,
                &mut rng,
            )
            .max(1);
            z_ratio = from_state as f64 / from_cand as f64;
            z_reeval_count += 1;
        }

        let lp_cand = log_marginal_posterior(cand.view(), p);
        if lp_cand.is_nan() {
            return Err(Error::NonFinite("posterior density at a proposal".into()));
        }
        let log_acc = lp_cand - logd + z_ratio.ln();
        let accept = log_acc >= 0.0 || rng.random::<f64>() < log_acc.exp();
        if accept {
            state = cand;
            logd = lp_cand;
            let sum = state.sum();
            if (sum - 1.0).abs() > 1e-12 {
                state /= sum;
            }
        }

        if in_burn {
            burn_step_sum += jump;
            window_resamples += proposal.rejections;
            if accept {
                window_accepts += 1;
            }
            if step % ADAPT_WINDOW == 0 {
                let rate = window_accepts as f64 / ADAPT_WINDOW as f64;
                // Flat targets keep acceptance high at any scale; once most
                // raw draws miss the simplex, growing further only wastes
                // proposal resamples, so back off instead.
                if window_resamples > 50 * ADAPT_WINDOW as u64 {
                    scale *= 0.8;
                } else {
                    scale = (scale * (0.5 * (rate - ADAPT_TARGET)).exp()).clamp(1e-8, 1e8);
                }
                window_accepts = 0;
                window_resamples = 0;
            }
            if step == config.burn_in {
                z_threshold = config.z_threshold.unwrap_or_else(|| {
                    0.5 * burn_step_sum / config.burn_in as f64
                });
            }
        } else {
            if accept {
                accepted_post += 1;
            }
            if (step - config.burn_in) % config.thinning == 0 && recorded < kept {
                draws.row_mut(recorded).assign(&state);
                log_densities[recorded] = logd;
                recorded += 1;
            }
        }
    }

    let acceptance_rate =
        accepted_post as f64 / (config.chain_length - config.burn_in) as f64;
    let summary = summarize(draws.view())?;
    let best = log_densities
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let map_draw = Composition::new(draws.row(best).to_owned())?;
    Ok(PosteriorEnsemble {
        draws,
        log_densities,
        acceptance_rate,
        map_draw,
        summary,
        meta: ChainMeta {
            chain_length: config.chain_length,
            burn_in: config.burn_in,
            thinning: config.thinning,
            seed: config.seed,
            final_scale: scale,
            z_threshold,
            z_reeval_count,
            mixing_warning: acceptance_rate < 0.01,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::CovarianceMode;
    use crate::rng::stream;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn eye_problem(s: Array1<f64>, model: InversionModel, r: f64) -> InversionProblem {
        let m = s.len();
        let op = OperatorEstimate {
            matrix: Array2::eye(m),
            b_matrix: Array2::eye(m),
            scaling: Array1::from_elem(m, r),
            n_train: m,
        };
        let cov = CovarianceEstimate::from_matrix(
            Array2::eye(m),
            CovarianceMode::Diag,
            m,
        )
        .unwrap();
        InversionProblem::new(s, &op, &cov, model).unwrap()
    }

    #[test]
    fn map_recovers_interior_observation() {
        let p = eye_problem(array![0.2, 0.3, 0.5], InversionModel::FixedOperator, 0.1);
        let m = map_fixed_operator(&p).unwrap();
        assert_abs_diff_eq!(m.values()[0], 0.2, epsilon = 1e-10);
        assert_abs_diff_eq!(m.values()[1], 0.3, epsilon = 1e-10);
        assert_abs_diff_eq!(m.values()[2], 0.5, epsilon = 1e-10);
        assert!(kkt_residual(&p, m.values()) < 1e-8);
    }

    #[test]
    fn map_clamps_outside_target_to_boundary() {
        // Unconstrained optimum (1.5, −0.5) exits the simplex: the solution
        // is the vertex (1, 0).
        let p = eye_problem(array![1.5, -0.5], InversionModel::FixedOperator, 0.0);
        let m = map_fixed_operator(&p).unwrap();
        assert_abs_diff_eq!(m.values()[0], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(m.values()[1], 0.0, epsilon = 1e-10);
        assert!(kkt_residual(&p, m.values()) < 1e-8);
    }

    #[test]
    fn map_single_endmember_is_trivial() {
        let p = eye_problem(array![3.7], InversionModel::FixedOperator, 0.0);
        let m = map_fixed_operator(&p).unwrap();
        assert_eq!(m.values()[0], 1.0);
    }

    #[test]
    fn map_matches_grid_oracle() {
        // Random overdetermined operator and dense covariance; oracle is an
        // exhaustive lattice search on the simplex.
        let mut rng = stream(17);
        let t = 6;
        let a = Array2::from_shape_fn((t, 3), |_| {
            rng.sample::<f64, _>(StandardNormal)
        });
        let truth = array![0.15, 0.25, 0.6];
        let s = a.dot(&truth);
        let mut cm = Array2::eye(t);
        cm[[0, 1]] = 0.3;
        cm[[1, 0]] = 0.3;
        let op = OperatorEstimate {
            matrix: a.clone(),
            b_matrix: Array2::eye(3),
            scaling: array![0.1, 0.1, 0.1],
            n_train: 10,
        };
        let cov = CovarianceEstimate::from_matrix(cm.clone(), CovarianceMode::Banded { k: 1 }, 10)
            .unwrap();
        let p = InversionProblem::new(s.clone(), &op, &cov, InversionModel::FixedOperator)
            .unwrap();
        let m = map_fixed_operator(&p).unwrap();
        // Noise-free observation of an interior point: exact recovery.
        for (got, want) in m.values().iter().zip(truth.iter()) {
            assert_abs_diff_eq!(got, want, epsilon = 1e-8);
        }

        // Perturbed observation: compare against the lattice argmin.
        let s2 = &s + &Array1::from_shape_fn(t, |_| 0.3 * rng.sample::<f64, _>(StandardNormal));
        let p2 = InversionProblem::new(s2.clone(), &op, &cov, InversionModel::FixedOperator)
            .unwrap();
        let m2 = map_fixed_operator(&p2).unwrap();
        assert!(kkt_residual(&p2, m2.values()) < 1e-8);
        let pinv = crate::reference::ge_invert(cm.view()).unwrap();
        let oracle = crate::reference::simplex_grid_argmin_m3(400, |mv| {
            let d = &s2 - &a.dot(&mv);
            d.dot(&pinv.dot(&d))
        });
        for (got, want) in m2.values().iter().zip(oracle.iter()) {
            assert_abs_diff_eq!(got, want, epsilon = 1.5 / 400.0);
        }
    }

    #[test]
    fn kkt_holds_across_random_problems() {
        let mut rng = stream(23);
        for trial in 0..40 {
            let m = 2 + trial % 5;
            let t = m + 2;
            let a = Array2::from_shape_fn((t, m), |_| rng.sample::<f64, _>(StandardNormal));
            let s = Array1::from_shape_fn(t, |_| rng.sample::<f64, _>(StandardNormal));
            let op = OperatorEstimate {
                matrix: a,
                b_matrix: Array2::eye(m),
                scaling: Array1::from_elem(m, 0.2),
                n_train: t,
            };
            let cov = CovarianceEstimate::from_matrix(
                Array2::eye(t),
                CovarianceMode::Diag,
                t,
            )
            .unwrap();
            let p =
                InversionProblem::new(s, &op, &cov, InversionModel::FixedOperator).unwrap();
            let sol = map_fixed_operator(&p).unwrap();
            assert!(
                kkt_residual(&p, sol.values()) < 1e-8,
                "trial {trial}: residual {}",
                kkt_residual(&p, sol.values())
            );
        }
    }

    #[test]
    fn uncertainty_factor_examples() {
        let m = Composition::new(array![0.5, 0.5]).unwrap();
        // Zero scaling: no inflation.
        let f = uncertainty_factor(&m, array![0.0, 0.0].view()).unwrap();
        assert_eq!(f.b, 1.0);
        // Vertex hits 1 + r_j; interior point stays below b_max.
        let vertex = Composition::new(array![1.0, 0.0]).unwrap();
        let f = uncertainty_factor(&vertex, array![3.0, 1.0].view()).unwrap();
        assert_abs_diff_eq!(f.b, 4.0, epsilon = 1e-14);
        assert_abs_diff_eq!(f.b_max, 4.0, epsilon = 1e-14);
        let f = uncertainty_factor(&m, array![3.0, 1.0].view()).unwrap();
        assert!(f.b > 1.0 && f.b <= f.b_max);
        assert_abs_diff_eq!(f.b, 2.0, epsilon = 1e-14); // 1 + 0.25·3 + 0.25·1
        assert!(matches!(
            uncertainty_factor(&m, array![-0.1, 0.0].view()),
            Err(Error::Param(_))
        ));
    }

    #[test]
    fn log_posterior_matches_models() {
        let s = array![0.6, 0.4];
        let pf = eye_problem(s.clone(), InversionModel::FixedOperator, 0.5);
        let ps = eye_problem(s.clone(), InversionModel::StochasticOperator, 0.5);
        let m = array![0.5, 0.5];
        // Fixed: −½‖s−m‖².
        assert_abs_diff_eq!(
            log_marginal_posterior(m.view(), &pf),
            -0.5 * 0.02,
            epsilon = 1e-12
        );
        // Stochastic: quadratic shrinks by b, penalty (T/2)·ln b appears.
        let b: f64 = 1.0 + 0.5 * 0.5; // Σ m_j² r_j = 0.25·0.5·2
        assert_abs_diff_eq!(
            log_marginal_posterior(m.view(), &ps),
            -0.5 * (0.02 / b + 2.0 * b.ln()),
            epsilon = 1e-12
        );
        // Outside the simplex: −∞ for both.
        assert_eq!(
            log_marginal_posterior(array![0.7, 0.4].view(), &pf),
            f64::NEG_INFINITY
        );
        assert_eq!(
            log_marginal_posterior(array![1.2, -0.2].view(), &ps),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn stochastic_reduces_to_fixed_as_scaling_vanishes() {
        let s = array![0.55, 0.45];
        let pf = eye_problem(s.clone(), InversionModel::FixedOperator, 0.0);
        let ps = eye_problem(s.clone(), InversionModel::StochasticOperator, 1e-14);
        let m = array![0.3, 0.7];
        let c = array![0.6, 0.4];
        let rf = acceptance_ratio(m.view(), c.view(), &pf, 1.0);
        let rs = acceptance_ratio(m.view(), c.view(), &ps, 1.0);
        assert_abs_diff_eq!(rf, rs, epsilon = 1e-10);
    }

    #[test]
    fn acceptance_ratio_basics() {
        let p = eye_problem(array![0.6, 0.4], InversionModel::StochasticOperator, 0.3);
        let m = array![0.6, 0.4];
        // Same state: ratio 1.
        assert_eq!(acceptance_ratio(m.view(), m.view(), &p, 1.0), 1.0);
        // Candidate outside: 0.
        assert_eq!(
            acceptance_ratio(m.view(), array![1.1, -0.1].view(), &p, 1.0),
            0.0
        );
        // Uphill move is certain; the reverse move has the inverse ratio.
        let worse = array![0.1, 0.9];
        let up = acceptance_ratio(worse.view(), m.view(), &p, 1.0);
        let down = acceptance_ratio(m.view(), worse.view(), &p, 1.0);
        assert_eq!(up, 1.0);
        let lp_m = log_marginal_posterior(m.view(), &p);
        let lp_w = log_marginal_posterior(worse.view(), &p);
        assert_abs_diff_eq!(down, (lp_w - lp_m).exp(), epsilon = 1e-12);
        // z_ratio scales the ratio.
        assert_abs_diff_eq!(
            acceptance_ratio(m.view(), worse.view(), &p, 2.0),
            (down * 2.0).min(1.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn proposal_preserves_sum_and_counts_rejections() {
        let mut rng = stream(3);
        let factor = Array2::eye(3);
        let m = array![0.4, 0.35, 0.25];
        for _ in 0..200 {
            let prop = propose(m.view(), factor.view(), 0.05, &mut rng).unwrap();
            let sum: f64 = prop.candidate.sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-9);
            assert!(prop.candidate.iter().all(|&v| v >= 0.0));
        }
        // Hopeless scale: every draw leaves the simplex.
        let err = propose(m.view(), factor.view(), 1e9, &mut rng).unwrap_err();
        match err {
            Error::StepScale { rejections } => assert_eq!(rejections, 10_000),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn chi2_quantile_value() {
        assert_abs_diff_eq!(
            chi2_quantile_2dof(0.95).unwrap(),
            5.991464547107979,
            epsilon = 1e-12
        );
        assert!(chi2_quantile_2dof(1.0).is_err());
        assert!(chi2_quantile_2dof(0.0).is_err());
    }

    #[test]
    fn summary_requires_two_draws() {
        let draws = array![[0.4, 0.6]];
        assert!(matches!(
            summarize(draws.view()),
            Err(Error::VarianceUndefined(_))
        ));
    }

    #[test]
    fn ellipse_of_circular_cloud_is_a_circle() {
        let summary = EnsembleSummary {
            mean: array![0.5, 0.3, 0.2],
            covariance: Array2::from_diag(&array![0.01, 0.01, 0.02]),
            n_draws: 100,
        };
        let e = summary.confidence_ellipse(0.95, (0, 1)).unwrap();
        assert_abs_diff_eq!(e.semi_axes[0], e.semi_axes[1], epsilon = 1e-12);
        assert_abs_diff_eq!(
            e.semi_axes[0],
            (5.991464547107979f64 * 0.01).sqrt(),
            epsilon = 1e-12
        );
        // Center inside, far point outside.
        assert!(summary
            .includes(array![0.5, 0.3, 0.2].view(), 0.95, (0, 1))
            .unwrap());
        assert!(!summary
            .includes(array![0.9, 0.05, 0.05].view(), 0.95, (0, 1))
            .unwrap());
    }

    #[test]
    fn degenerate_ellipse_includes_only_its_center() {
        let summary = EnsembleSummary {
            mean: array![0.5, 0.5],
            covariance: Array2::zeros((2, 2)),
            n_draws: 10,
        };
        assert!(summary
            .includes(array![0.5, 0.5].view(), 0.95, (0, 1))
            .unwrap());
        assert!(!summary
            .includes(array![0.5001, 0.4999].view(), 0.95, (0, 1))
            .unwrap());
    }

    #[test]
    fn anisotropic_ellipse_orientation() {
        // Strong positive correlation: major axis near 45°.
        let summary = EnsembleSummary {
            mean: array![0.4, 0.6],
            covariance: array![[0.02, 0.018], [0.018, 0.02]],
            n_draws: 50,
        };
        let e = summary.confidence_ellipse(0.9, (0, 1)).unwrap();
        assert_abs_diff_eq!(e.angle, std::f64::consts::FRAC_PI_4, epsilon = 1e-9);
        assert!(e.semi_axes[0] > 3.0 * e.semi_axes[1]);
    }

    #[test]
    fn short_chain_smoke() {
        let p = eye_problem(
            array![0.45, 0.35, 0.2],
            InversionModel::StochasticOperator,
            0.4,
        );
        let cfg = McmcConfig {
            chain_length: 4_000,
            burn_in: 1_000,
            thinning: 5,
            seed: 42,
            ..McmcConfig::default()
        };
        let ens = mh_sample(&p, &cfg).unwrap();
        assert_eq!(ens.draws.nrows(), 600);
        for row in ens.draws.rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-9);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
        assert!(ens.acceptance_rate > 0.02 && ens.acceptance_rate <= 1.0);
        assert!(!ens.meta.mixing_warning);
        assert!(ens.meta.z_threshold.is_finite());
        // Unit noise keeps this posterior nearly flat, so the mean sits
        // between the barycenter and the observation.
        for (got, want) in ens.mean().iter().zip([0.45, 0.35, 0.2]) {
            assert_abs_diff_eq!(got, &want, epsilon = 0.17);
        }
        // Deterministic under a fixed seed.
        let again = mh_sample(&p, &cfg).unwrap();
        assert_eq!(ens.draws, again.draws);
    }

    #[test]
    fn chain_config_validation() {
        let p = eye_problem(array![0.5, 0.5], InversionModel::FixedOperator, 0.0);
        let bad = McmcConfig {
            chain_length: 100,
            burn_in: 100,
            ..McmcConfig::default()
        };
        assert!(matches!(mh_sample(&p, &bad), Err(Error::Param(_))));
        let bad = McmcConfig {
            thinning: 0,
            ..McmcConfig::default()
        };
        assert!(matches!(mh_sample(&p, &bad), Err(Error::Param(_))));
        let bad = McmcConfig {
            chain_length: 101,
            burn_in: 100,
            thinning: 10,
            ..McmcConfig::default()
        };
        assert!(matches!(
            mh_sample(&p, &bad),
            Err(Error::VarianceUndefined(_))
        ));
    }

    #[test]
    fn rank_deficient_normal_matrix_is_rejected() {
        // Two identical operator columns: ÃᵀΣ⁻¹Ã is singular.
        let op = OperatorEstimate {
            matrix: array![[1.0, 1.0], [2.0, 2.0]],
            b_matrix: Array2::eye(2),
            scaling: array![0.1, 0.1],
            n_train: 4,
        };
        let cov = CovarianceEstimate::from_matrix(
            Array2::eye(2),
            CovarianceMode::Diag,
            4,
        )
        .unwrap();
        assert!(matches!(
            InversionProblem::new(
                array![1.0, 2.0],
                &op,
                &cov,
                InversionModel::FixedOperator
            ),
            Err(Error::NonUnique(_))
        ));
    }

    #[test]
    fn nonpositive_scaling_rejected_for_stochastic_model() {
        let op = OperatorEstimate {
            matrix: Array2::eye(2),
            b_matrix: Array2::eye(2),
            scaling: array![0.0, 0.1],
            n_train: 2,
        };
        let cov =
            CovarianceEstimate::from_matrix(Array2::eye(2), CovarianceMode::Diag, 2).unwrap();
        assert!(matches!(
            InversionProblem::new(
                array![0.5, 0.5],
                &op,
                &cov,
                InversionModel::StochasticOperator
            ),
            Err(Error::Param(_))
        ));
    }
}
