//! The simplex domain: compositions, mixture designs, and their moments.
//!
//! A composition is a point on the unit simplex S_M (nonnegative fractions
//! summing to one). Training sets draw compositions from one of seven mixture
//! designs; the four with closed-form second moments expose them through
//! [`exact_moments`], and every design can be estimated by Monte Carlo via
//! [`numeric_moments`]. The second moments σ = E[U₁²] and β = E[U₁U₂] feed
//! the variance-scaling-factor theory in the `training` module.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on |sum − 1| when accepting raw vectors.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Floating-point noise floor: entries in [−1e−12, 0) are clamped to zero
/// before validation; anything more negative is rejected.
pub const NEGATIVE_CLAMP: f64 = -1e-12;

/// A point on the unit simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct Composition {
    values: Array1<f64>,
}

impl Composition {
    /// Validates with the default [`SUM_TOLERANCE`].
    pub fn new(raw: Array1<f64>) -> Result<Self> {
        validate_composition(raw, SUM_TOLERANCE)
    }

    pub fn values(&self) -> ArrayView1<'_, f64> {
        self.values.view()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.values
    }

    /// Pure endmember e_j.
    pub fn endmember(m: usize, j: usize) -> Self {
        assert!(j < m, "endmember index out of range");
        let mut v = Array1::zeros(m);
        v[j] = 1.0;
        Self { values: v }
    }

    /// The barycenter (1/M, …, 1/M).
    pub fn barycenter(m: usize) -> Self {
        assert!(m > 0);
        Self {
            values: Array1::from_elem(m, 1.0 / m as f64),
        }
    }
}

/// Checks a raw vector against the simplex invariants and returns it with the
/// sum renormalized to 1.
///
/// Entries in [−1e−12, 0) are clamped to zero first (normalization arithmetic
/// routinely produces −1e−17-scale noise); genuine negatives and sums farther
/// than `tolerance` from 1 are rejected with the offending index.
pub fn validate_composition(raw: Array1<f64>, tolerance: f64) -> Result<Composition> {
    if raw.is_empty() {
        return Err(Error::Param("composition must have at least one entry".into()));
    }
    let mut v = raw;
    for (i, x) in v.iter_mut().enumerate() {
        if !x.is_finite() {
            return Err(Error::Composition {
                index: i,
                reason: format!("non-finite entry {x}"),
            });
        }
        if *x < 0.0 {
            if *x >= NEGATIVE_CLAMP {
                *x = 0.0;
            } else {
                return Err(Error::Composition {
                    index: i,
                    reason: format!("negative entry {x}"),
                });
            }
        }
    }
    let sum: f64 = v.sum();
    if (sum - 1.0).abs() > tolerance {
        return Err(Error::Param(format!(
            "composition sum {sum} is not within {tolerance} of 1"
        )));
    }
    // renormalize, then nudge the largest entry so the sum is exactly 1
    v.mapv_inplace(|x| x / sum);
    let drift = 1.0 - v.sum();
    if drift != 0.0 {
        let imax = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        v[imax] += drift;
    }
    Ok(Composition { values: v })
}

/// Training composition designs, each with a closed-form scaling factor.
///
/// `RepeatedPure`/`RepeatedBinary` are deterministic: they cycle through C=M
/// unique columns K times each (N = M·K). The rest draw i.i.d. random
/// compositions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "design", rename_all = "kebab-case")]
pub enum MixtureDesign {
    /// The M pure endmembers, each repeated K times.
    #[serde(rename = "pure")]
    RepeatedPure { m: usize, k: usize },
    /// Adjacent binary mixtures plus the last pure endmember, repeated K times.
    #[serde(rename = "binary")]
    RepeatedBinary { m: usize, k: usize },
    /// One pure endmember chosen uniformly at random.
    #[serde(rename = "multinomial")]
    Multinomial { m: usize },
    /// Average of two uniformly chosen endmembers, drawn with replacement.
    #[serde(rename = "dmult-replace")]
    DoubleMultinomialWithReplacement { m: usize },
    /// Average of two distinct uniformly chosen endmembers.
    #[serde(rename = "dmult-noreplace")]
    DoubleMultinomialWithoutReplacement { m: usize },
    /// Flat density on the simplex.
    #[serde(rename = "uniform")]
    UniformSimplex { m: usize },
    /// M i.i.d. uniforms on [0,1] normalized by their sum.
    #[serde(rename = "pseudo-uniform")]
    PseudoUniform { m: usize },
}

impl MixtureDesign {
    pub fn endmembers(&self) -> usize {
        match *self {
            Self::RepeatedPure { m, .. }
            | Self::RepeatedBinary { m, .. }
            | Self::Multinomial { m }
            | Self::DoubleMultinomialWithReplacement { m }
            | Self::DoubleMultinomialWithoutReplacement { m }
            | Self::UniformSimplex { m }
            | Self::PseudoUniform { m } => m,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.endmembers();
        if m < 2 {
            return Err(Error::Param(format!("design needs M ≥ 2 endmembers, got {m}")));
        }
        if let Self::DoubleMultinomialWithoutReplacement { .. } = self {
            if m < 3 {
                return Err(Error::Param(
                    "double multinomial without replacement needs M ≥ 3 (the factor M/(M−2))"
                        .into(),
                ));
            }
        }
        if let Self::RepeatedPure { k, .. } | Self::RepeatedBinary { k, .. } = self {
            if *k < 1 {
                return Err(Error::Param("repeated designs need K ≥ 1".into()));
            }
        }
        Ok(())
    }

    /// Number of unique columns for deterministic designs (C), `None` otherwise.
    pub fn unique_count(&self) -> Option<usize> {
        match self {
            Self::RepeatedPure { m, .. } | Self::RepeatedBinary { m, .. } => Some(*m),
            _ => None,
        }
    }

    /// Total sample count C·K implied by a deterministic design.
    pub fn implied_samples(&self) -> Option<usize> {
        match self {
            Self::RepeatedPure { m, k } | Self::RepeatedBinary { m, k } => Some(m * k),
            _ => None,
        }
    }

    pub fn is_deterministic(&self) -> bool {
        self.unique_count().is_some()
    }

    /// Stable name used in CLI flags and reports.
    pub fn name(&self) -> &'static str {
        match self {
            Self::RepeatedPure { .. } => "pure",
            Self::RepeatedBinary { .. } => "binary",
            Self::Multinomial { .. } => "multinomial",
            Self::DoubleMultinomialWithReplacement { .. } => "dmult-replace",
            Self::DoubleMultinomialWithoutReplacement { .. } => "dmult-noreplace",
            Self::UniformSimplex { .. } => "uniform",
            Self::PseudoUniform { .. } => "pseudo-uniform",
        }
    }
}

/// Draws compositions from a design; deterministic designs cycle through
/// their unique columns in order, stochastic ones consume the RNG.
pub struct DesignSampler {
    design: MixtureDesign,
    binary: Option<Array2<f64>>,
    cursor: usize,
}

impl DesignSampler {
    pub fn new(design: MixtureDesign) -> Result<Self> {
        design.validate()?;
        let binary = match design {
            MixtureDesign::RepeatedBinary { m, .. } => Some(binary_design_matrix(m)?),
            _ => None,
        };
        Ok(Self { design, binary, cursor: 0 })
    }

    pub fn design(&self) -> MixtureDesign {
        self.design
    }

    /// One composition per the design's law.
    pub fn sample_composition<R: Rng>(&mut self, rng: &mut R) -> Composition {
        let m = self.design.endmembers();
        match self.design {
            MixtureDesign::RepeatedPure { m, .. } => {
                let j = self.cursor % m;
                self.cursor += 1;
                Composition::endmember(m, j)
            }
            MixtureDesign::RepeatedBinary { m, .. } => {
                let j = self.cursor % m;
                self.cursor += 1;
                let col = self.binary.as_ref().unwrap().column(j).to_owned();
                Composition { values: col }
            }
            MixtureDesign::Multinomial { .. } => {
                Composition::endmember(m, rng.random_range(0..m))
            }
            MixtureDesign::DoubleMultinomialWithReplacement { .. } => {
                let (i, j) = (rng.random_range(0..m), rng.random_range(0..m));
                let mut v = Array1::zeros(m);
                v[i] += 0.5;
                v[j] += 0.5;
                Composition { values: v }
            }
            MixtureDesign::DoubleMultinomialWithoutReplacement { .. } => {
                let i = rng.random_range(0..m);
                let mut j = rng.random_range(0..m - 1);
                if j >= i {
                    j += 1;
                }
                let mut v = Array1::zeros(m);
                v[i] = 0.5;
                v[j] = 0.5;
                Composition { values: v }
            }
            MixtureDesign::UniformSimplex { .. } => {
                // normalized unit-rate exponentials = flat Dirichlet
                loop {
                    let v = Array1::from_iter(
                        (0..m).map(|_| rng.sample::<f64, _>(rand_distr::Exp1)),
                    );
                    let sum = v.sum();
                    if sum > 0.0 && sum.is_finite() {
                        break Composition { values: v / sum };
                    }
                }
            }
            MixtureDesign::PseudoUniform { .. } => loop {
                let v = Array1::from_iter((0..m).map(|_| rng.random::<f64>()));
                let sum = v.sum();
                if sum > 0.0 {
                    break Composition { values: v / sum };
                }
            },
        }
    }
}

/// Draws `n` compositions as the columns of an M×N matrix.
///
/// For deterministic designs `n` must equal the implied C·K.
pub fn sample_matrix<R: Rng>(
    design: MixtureDesign,
    n: usize,
    rng: &mut R,
) -> Result<Array2<f64>> {
    if n == 0 {
        return Err(Error::Param("need at least one sample".into()));
    }
    if let Some(expected) = design.implied_samples() {
        if n != expected {
            return Err(Error::Param(format!(
                "{} design with M={} K={} implies N={}, got N={}",
                design.name(),
                design.endmembers(),
                expected / design.endmembers(),
                expected,
                n
            )));
        }
    }
    let mut sampler = DesignSampler::new(design)?;
    let m = design.endmembers();
    let mut out = Array2::zeros((m, n));
    for i in 0..n {
        out.column_mut(i)
            .assign(&sampler.sample_composition(rng).into_inner());
    }
    Ok(out)
}

/// Exact second moments of the simplex distributions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentPair {
    /// σ = E[U₁²]
    pub sigma: f64,
    /// β = E[U₁U₂]
    pub beta: f64,
}

impl MomentPair {
    /// α = σ − β, the coefficient of the identity part of E[mmᵀ].
    pub fn alpha(&self) -> f64 {
        self.sigma - self.beta
    }

    /// E[(Σ_{i≤k} U_i)²] = kσ + k(k−1)β; equals 1 at k = M.
    pub fn partial_sum_second_moment(&self, k: usize) -> f64 {
        let k = k as f64;
        k * self.sigma + k * (k - 1.0) * self.beta
    }
}

/// Closed-form (σ, β) for the four distributions that have them.
pub fn exact_moments(design: MixtureDesign) -> Result<MomentPair> {
    design.validate()?;
    let m = design.endmembers() as f64;
    match design {
        MixtureDesign::Multinomial { .. } => Ok(MomentPair { sigma: 1.0 / m, beta: 0.0 }),
        MixtureDesign::DoubleMultinomialWithReplacement { .. } => Ok(MomentPair {
            sigma: (m + 1.0) / (2.0 * m * m),
            beta: 1.0 / (2.0 * m * m),
        }),
        MixtureDesign::DoubleMultinomialWithoutReplacement { .. } => Ok(MomentPair {
            sigma: 1.0 / (2.0 * m),
            beta: 1.0 / (2.0 * m * (m - 1.0)),
        }),
        MixtureDesign::UniformSimplex { .. } => Ok(MomentPair {
            sigma: 2.0 / (m * (m + 1.0)),
            beta: 1.0 / (m * (m + 1.0)),
        }),
        _ => Err(Error::UnsupportedClosedForm(format!(
            "{} has no closed-form moments; use numeric_moments",
            design.name()
        ))),
    }
}

/// Monte Carlo moment estimates with their standard errors.
#[derive(Clone, Copy, Debug)]
pub struct NumericMoments {
    pub moments: MomentPair,
    pub sigma_se: f64,
    pub beta_se: f64,
    pub n_samples: usize,
}

/// Estimates (σ, β) by Monte Carlo, averaging over all M coordinates and all
/// M(M−1) ordered pairs per draw (valid under exchangeability, and an exact
/// identity on the simplex: Σ_{i≠j} U_iU_j = 1 − ΣU_i²).
pub fn numeric_moments<R: Rng>(
    design: MixtureDesign,
    n_samples: usize,
    rng: &mut R,
) -> Result<NumericMoments> {
    if n_samples < 1000 {
        return Err(Error::Param(format!(
            "numeric_moments needs at least 1000 samples, got {n_samples}"
        )));
    }
    let mut sampler = DesignSampler::new(design)?;
    let m = design.endmembers() as f64;
    let (mut s_sum, mut s_sq) = (0.0f64, 0.0f64);
    for _ in 0..n_samples {
        let comp = sampler.sample_composition(rng);
        let sq: f64 = comp.values().iter().map(|x| x * x).sum();
        let s_draw = sq / m; // per-draw estimate of E[U₁²]
        s_sum += s_draw;
        s_sq += s_draw * s_draw;
    }
    let n = n_samples as f64;
    let sigma = s_sum / n;
    let var_s = (s_sq / n - sigma * sigma).max(0.0) * n / (n - 1.0);
    let sigma_se = (var_s / n).sqrt();
    // an exact per-draw identity, since (ΣU)² = 1:
    //   mean over ordered pairs of U_iU_j = (1 − ΣU²) / (M(M−1))
    let beta = (1.0 - m * sigma) / (m * (m - 1.0));
    let beta_se = sigma_se / (m - 1.0);
    Ok(NumericMoments {
        moments: MomentPair { sigma, beta },
        sigma_se,
        beta_se,
        n_samples,
    })
}

/// Corr(U₁, U₂) from the closed-form moments: (β − 1/M²)/(σ − 1/M²), which is
/// −1/(M−1) for every exchangeable simplex-supported design.
pub fn pairwise_correlation(design: MixtureDesign) -> Result<f64> {
    let moments = exact_moments(design)?;
    let m = design.endmembers() as f64;
    let mean_sq = 1.0 / (m * m);
    let var = moments.sigma - mean_sq;
    if var <= 0.0 {
        return Err(Error::UndefinedCorrelation(format!(
            "degenerate design: Var(U₁) = {var} is not positive"
        )));
    }
    Ok((moments.beta - mean_sq) / var)
}

/// The deterministic binary design matrix M₀: column j < M mixes endmembers
/// j and j+1 half-and-half; the last column is the pure endmember e_M.
pub fn binary_design_matrix(m: usize) -> Result<Array2<f64>> {
    if m < 2 {
        return Err(Error::Param(format!("binary design needs M ≥ 2, got {m}")));
    }
    let mut m0 = Array2::zeros((m, m));
    for j in 0..m - 1 {
        m0[(j, j)] = 0.5;
        m0[(j + 1, j)] = 0.5;
    }
    m0[(m - 1, m - 1)] = 1.0;
    Ok(m0)
}
