//! Reduced-rank Gaussian-process regression on a hypercube.
//!
//! The squared-exponential kernel is expanded in Laplace eigenfunctions with
//! Dirichlet boundary conditions,
//!
//! `k(x, x') ≈ Σ_n S(√λ_n) φ_n(x) φ_n(x')`,
//!
//! so that a function realization is a coefficient vector `w` over the fixed
//! basis `φ`. Coefficients are the posterior mean of the weight-space model,
//! i.e. the solution of a ridge problem whose penalty is the inverse spectral
//! density.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simplex::{nelder_mead, NelderMeadOptions};

/// Axis-aligned box `[lower_1, upper_1] × … × [lower_d, upper_d]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DomainBounds", into = "DomainBounds")]
pub struct Domain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DomainBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl From<Domain> for DomainBounds {
    fn from(d: Domain) -> Self {
        DomainBounds {
            lower: d.lower,
            upper: d.upper,
        }
    }
}

impl TryFrom<DomainBounds> for Domain {
    type Error = Error;

    fn try_from(b: DomainBounds) -> Result<Self> {
        Domain::new(b.lower, b.upper)
    }
}

impl Domain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::input(format!(
                "domain bounds must be non-empty and of equal length (got {} and {})",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (lo, up)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && up.is_finite() && lo < up) {
                return Err(Error::input(format!(
                    "domain dimension {i}: need finite lower < upper, got [{lo}, {up}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// `[-L_1, L_1] × … × [-L_d, L_d]`.
    pub fn symmetric(half_widths: &[f64]) -> Result<Self> {
        Self::new(
            half_widths.iter().map(|l| -l).collect(),
            half_widths.to_vec(),
        )
    }

    /// Box around a data range, widened by `fraction` of the range per
    /// dimension (split evenly between both sides).
    pub fn padded(data_lower: &[f64], data_upper: &[f64], fraction: f64) -> Result<Self> {
        if fraction < 0.0 || !fraction.is_finite() {
            return Err(Error::input(format!("padding fraction must be >= 0, got {fraction}")));
        }
        let (lower, upper) = data_lower
            .iter()
            .zip(data_upper)
            .map(|(lo, up)| {
                let pad = 0.5 * fraction * (up - lo);
                (lo - pad, up + pad)
            })
            .unzip();
        Self::new(lower, upper)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn half_width(&self, i: usize) -> f64 {
        0.5 * (self.upper[i] - self.lower[i])
    }

    pub fn center(&self, i: usize) -> f64 {
        0.5 * (self.upper[i] + self.lower[i])
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, up))| *lo <= *v && *v <= *up)
    }

    pub fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::input(format!(
                "point has dimension {}, domain has {}",
                x.len(),
                self.dim()
            )));
        }
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::Domain {
                point: x.to_vec(),
                lower: self.lower.clone(),
                upper: self.upper.clone(),
            })
        }
    }
}

/// Squared-exponential kernel hyperparameters plus the observation noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Signal variance σ².
    pub sigma2: f64,
    /// Lengthscale l.
    pub l: f64,
    /// Observation noise variance σ_ξ².
    pub sigma_xi2: f64,
}

impl Hyperparameters {
    pub fn new(sigma2: f64, l: f64, sigma_xi2: f64) -> Result<Self> {
        let h = Self { sigma2, l, sigma_xi2 };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("sigma2", self.sigma2), ("l", self.l), ("sigma_xi2", self.sigma_xi2)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::input(format!("hyperparameter {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// `σ² exp(-‖x - x'‖² / (2 l²))`.
pub fn se_kernel(hyper: &Hyperparameters, x: &[f64], x_prime: &[f64]) -> f64 {
    let r2: f64 = x.iter().zip(x_prime).map(|(a, b)| (a - b) * (a - b)).sum();
    hyper.sigma2 * (-r2 / (2.0 * hyper.l * hyper.l)).exp()
}

/// One-dimensional spectral density of the SE kernel,
/// `σ² √(2π l²) exp(-l² ω² / 2)`.
pub fn se_spectral_density(hyper: &Hyperparameters, omega: f64) -> f64 {
    se_spectral_density_nd(hyper, omega, 1)
}

/// Spectral density of the isotropic SE kernel in `dim` input dimensions,
/// evaluated at radial frequency `omega`.
pub fn se_spectral_density_nd(hyper: &Hyperparameters, omega: f64, dim: usize) -> f64 {
    log_se_spectral_density(hyper, omega, dim).exp()
}

fn log_se_spectral_density(hyper: &Hyperparameters, omega: f64, dim: usize) -> f64 {
    let l2 = hyper.l * hyper.l;
    hyper.sigma2.ln() + 0.5 * dim as f64 * (2.0 * PI * l2).ln() - 0.5 * l2 * omega * omega
}

/// Basis definition: a domain, an ordered list of eigenfunction index tuples
/// and the prior hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    domain: Domain,
    indices: Vec<Vec<u32>>,
    hyper: Hyperparameters,
}

#[derive(PartialEq)]
struct Candidate {
    lambda: f64,
    index: Vec<u32>,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    // Reversed so that `BinaryHeap` pops the smallest eigenvalue first,
    // lexicographically smallest tuple on ties.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .lambda
            .total_cmp(&self.lambda)
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn eigenvalue_of(domain: &Domain, index: &[u32]) -> f64 {
    index
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            let a = PI * j as f64 / (2.0 * domain.half_width(i));
            a * a
        })
        .sum()
}

impl BasisSpec {
    /// The `count` eigenfunctions with the largest prior spectral density.
    ///
    /// Since the SE spectral density is strictly decreasing in frequency this
    /// is a best-first walk over index tuples in ascending eigenvalue order.
    pub fn new(domain: Domain, count: usize, hyper: Hyperparameters) -> Result<Self> {
        hyper.validate()?;
        let dim = domain.dim();
        let mut heap = BinaryHeap::new();
        let mut seen = HashSet::new();
        let start = vec![1u32; dim];
        heap.push(Candidate {
            lambda: eigenvalue_of(&domain, &start),
            index: start.clone(),
        });
        seen.insert(start);
        let mut indices = Vec::with_capacity(count);
        while indices.len() < count {
            let Some(c) = heap.pop() else { break };
            for i in 0..dim {
                let mut next = c.index.clone();
                next[i] += 1;
                if seen.insert(next.clone()) {
                    heap.push(Candidate {
                        lambda: eigenvalue_of(&domain, &next),
                        index: next,
                    });
                }
            }
            indices.push(c.index);
        }
        Ok(Self { domain, indices, hyper })
    }

    /// Explicit index tuples, kept in the given order.
    pub fn with_indices(domain: Domain, indices: Vec<Vec<u32>>, hyper: Hyperparameters) -> Result<Self> {
        hyper.validate()?;
        let mut seen = HashSet::new();
        for idx in &indices {
            if idx.len() != domain.dim() || idx.iter().any(|&j| j == 0) {
                return Err(Error::input(format!(
                    "index tuple {idx:?} must have {} entries, each >= 1",
                    domain.dim()
                )));
            }
            if !seen.insert(idx.clone()) {
                return Err(Error::input(format!("duplicate index tuple {idx:?}")));
            }
        }
        Ok(Self { domain, indices, hyper })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn indices(&self) -> &[Vec<u32>] {
        &self.indices
    }

    pub fn hyper(&self) -> &Hyperparameters {
        &self.hyper
    }

    pub fn count(&self) -> usize {
        self.indices.len()
    }

    pub fn with_hyper(&self, hyper: Hyperparameters) -> Result<Self> {
        hyper.validate()?;
        Ok(Self {
            hyper,
            ..self.clone()
        })
    }

    /// The first `count` basis functions of this spec.
    pub fn truncated(&self, count: usize) -> Self {
        Self {
            indices: self.indices[..count.min(self.count())].to_vec(),
            ..self.clone()
        }
    }

    fn check_index(&self, n: usize) -> Result<()> {
        if n < self.count() {
            Ok(())
        } else {
            Err(Error::input(format!(
                "basis index {n} out of range for {} basis functions",
                self.count()
            )))
        }
    }

    /// Eigenvalue `λ_n = Σ_i (π j_i / (2 L_i))²` of basis function `n` (zero-based).
    pub fn eigenvalue(&self, n: usize) -> Result<f64> {
        self.check_index(n)?;
        Ok(eigenvalue_of(&self.domain, &self.indices[n]))
    }

    /// Eigenfunction `n` (zero-based) at `x`.
    pub fn eigenfunction(&self, n: usize, x: &[f64]) -> Result<f64> {
        self.check_index(n)?;
        self.domain.check(x)?;
        Ok(self.indices[n]
            .iter()
            .enumerate()
            .map(|(i, &j)| self.factor(i, j, x[i]))
            .product())
    }

    fn factor(&self, i: usize, j: u32, xi: f64) -> f64 {
        let half = self.domain.half_width(i);
        let s = xi - self.domain.center(i);
        (PI * j as f64 * (s + half) / (2.0 * half)).sin() / half.sqrt()
    }

    /// All basis functions at `x`, i.e. the vector `φ(x)`.
    pub fn basis_vector(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.domain.check(x)?;
        let mut out = DVector::zeros(self.count());
        self.fill_basis_unchecked(x, out.as_mut_slice());
        Ok(out)
    }

    /// Fills `out` with `φ(x)` without the domain check.
    pub(crate) fn fill_basis_unchecked(&self, x: &[f64], out: &mut [f64]) {
        let dim = self.domain.dim();
        if dim == 1 {
            for (o, idx) in out.iter_mut().zip(&self.indices) {
                *o = self.factor(0, idx[0], x[0]);
            }
            return;
        }
        // Per-dimension tables of sin factors, then products.
        let tables: Vec<Vec<f64>> = (0..dim)
            .map(|i| {
                let max_j = self.indices.iter().map(|t| t[i]).max().unwrap_or(0);
                (1..=max_j).map(|j| self.factor(i, j, x[i])).collect()
            })
            .collect();
        for (o, idx) in out.iter_mut().zip(&self.indices) {
            *o = idx
                .iter()
                .enumerate()
                .map(|(i, &j)| tables[i][j as usize - 1])
                .product();
        }
    }

    /// `wᵀφ(x)` without the domain check or a temporary basis vector.
    pub fn dot_unchecked(&self, w: &[f64], x: &[f64]) -> f64 {
        if self.domain.dim() == 1 {
            return self
                .indices
                .iter()
                .zip(w)
                .map(|(idx, wn)| wn * self.factor(0, idx[0], x[0]))
                .sum();
        }
        let mut phi = vec![0.0; self.count()];
        self.fill_basis_unchecked(x, &mut phi);
        phi.iter().zip(w).map(|(p, wn)| p * wn).sum()
    }

    /// `K × N` matrix of basis evaluations, one row per input point.
    pub fn design_matrix(&self, inputs: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let mut phi = DMatrix::zeros(inputs.len(), self.count());
        let mut row = vec![0.0; self.count()];
        for (k, x) in inputs.iter().enumerate() {
            self.domain.check(x)?;
            self.fill_basis_unchecked(x, &mut row);
            for (n, v) in row.iter().enumerate() {
                phi[(k, n)] = *v;
            }
        }
        Ok(phi)
    }

    /// Prior variances `S(√λ_n)` of the coefficients.
    pub fn spectral_weights(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.count(),
            self.indices.iter().map(|idx| {
                se_spectral_density_nd(&self.hyper, eigenvalue_of(&self.domain, idx).sqrt(), self.domain.dim())
            }),
        )
    }

    fn log_spectral_weights(&self, hyper: &Hyperparameters) -> Vec<f64> {
        self.indices
            .iter()
            .map(|idx| log_se_spectral_density(hyper, eigenvalue_of(&self.domain, idx).sqrt(), self.domain.dim()))
            .collect()
    }
}

/// Reduced-rank approximation of the SE kernel, `Σ_n S(√λ_n) φ_n(x) φ_n(x')`.
pub fn kernel_approximation(spec: &BasisSpec, x: &[f64], x_prime: &[f64]) -> Result<f64> {
    let a = spec.basis_vector(x)?;
    let b = spec.basis_vector(x_prime)?;
    let s = spec.spectral_weights();
    Ok(a.iter().zip(b.iter()).zip(s.iter()).map(|((p, q), s)| s * p * q).sum())
}

/// A basis plus fitted coefficients: `Ξ̂(x) = wᵀ φ(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelDoc", into = "ModelDoc")]
pub struct HilbertGpModel {
    spec: BasisSpec,
    w: DVector<f64>,
}

impl HilbertGpModel {
    pub fn new(spec: BasisSpec, w: DVector<f64>) -> Result<Self> {
        if w.len() != spec.count() {
            return Err(Error::input(format!(
                "coefficient vector has length {}, basis has {} functions",
                w.len(),
                spec.count()
            )));
        }
        Ok(Self { spec, w })
    }

    pub fn spec(&self) -> &BasisSpec {
        &self.spec
    }

    pub fn w(&self) -> &DVector<f64> {
        &self.w
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        Ok(self.w.dot(&self.spec.basis_vector(x)?))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    domain: Domain,
    hyper: Hyperparameters,
    indices: Vec<Vec<u32>>,
    w: Vec<f64>,
}

impl From<HilbertGpModel> for ModelDoc {
    fn from(m: HilbertGpModel) -> Self {
        ModelDoc {
            domain: m.spec.domain,
            hyper: m.spec.hyper,
            indices: m.spec.indices,
            w: m.w.iter().copied().collect(),
        }
    }
}

impl TryFrom<ModelDoc> for HilbertGpModel {
    type Error = Error;

    fn try_from(doc: ModelDoc) -> Result<Self> {
        let spec = BasisSpec::with_indices(doc.domain, doc.indices, doc.hyper)?;
        HilbertGpModel::new(spec, DVector::from_vec(doc.w))
    }
}

/// Regression data for one function realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionData {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl RegressionData {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(Error::input(format!(
                "need K >= 1 inputs matching targets (got {} inputs, {} targets)",
                inputs.len(),
                targets.len()
            )));
        }
        if let Some(k) = targets.iter().position(|t| !t.is_finite()) {
            return Err(Error::input(format!("target {k} is not finite")));
        }
        Ok(Self { inputs, targets })
    }
}

// Inverse spectral weights are capped so that the penalty stays representable;
// coefficients under such a penalty are zero to working precision either way.
const MAX_INV_PRIOR: f64 = 1e200;

/// Regularized least-squares coefficients
/// `w = (ΦᵀΦ + σ_ξ² V⁻¹)⁻¹ Φᵀ ξ` with `V = diag(S(√λ_n))`.
pub fn fit_coefficients(spec: &BasisSpec, inputs: &[Vec<f64>], targets: &[f64]) -> Result<HilbertGpModel> {
    let data = RegressionData::new(inputs.to_vec(), targets.to_vec())?;
    let phi = spec.design_matrix(&data.inputs)?;
    let xi = DVector::from_column_slice(&data.targets);
    let rhs = phi.tr_mul(&xi);
    let mut a = phi.tr_mul(&phi);
    let log_s = spec.log_spectral_weights(spec.hyper());
    for (n, ls) in log_s.iter().enumerate() {
        a[(n, n)] += spec.hyper().sigma_xi2 * (-ls).exp().min(MAX_INV_PRIOR);
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Numeric("regularized normal matrix is not positive definite".into()))?;
    let w = chol.solve(&rhs);
    HilbertGpModel::new(spec.clone(), w)
}

/// Sufficient statistics of one dataset for the marginal likelihood.
struct Gram {
    k: usize,
    phi_t_phi: DMatrix<f64>,
    phi_t_y: DVector<f64>,
    y_t_y: f64,
}

impl Gram {
    fn new(spec: &BasisSpec, data: &RegressionData) -> Result<Self> {
        let phi = spec.design_matrix(&data.inputs)?;
        let y = DVector::from_column_slice(&data.targets);
        Ok(Self {
            k: data.targets.len(),
            phi_t_phi: phi.tr_mul(&phi),
            phi_t_y: phi.tr_mul(&y),
            y_t_y: y.dot(&y),
        })
    }

    /// Reduced-rank log marginal likelihood in the prior-scaled form
    /// `B = σ_ξ² I + D ΦᵀΦ D`, `D = diag(√S)`, which avoids forming `S⁻¹`.
    fn log_marginal(&self, spec: &BasisSpec, hyper: &Hyperparameters) -> f64 {
        let n = spec.count();
        let d: Vec<f64> = spec
            .log_spectral_weights(hyper)
            .into_iter()
            .map(|ls| (0.5 * ls).exp())
            .collect();
        let mut b = DMatrix::from_fn(n, n, |r, c| d[r] * self.phi_t_phi[(r, c)] * d[c]);
        for i in 0..n {
            b[(i, i)] += hyper.sigma_xi2;
        }
        let Some(chol) = b.cholesky() else {
            return f64::NEG_INFINITY;
        };
        let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let c = DVector::from_iterator(n, self.phi_t_y.iter().zip(&d).map(|(v, s)| v * s));
        let alpha = chol.solve(&c);
        let quad = (self.y_t_y - c.dot(&alpha)) / hyper.sigma_xi2;
        -0.5 * ((self.k as f64 - n as f64) * hyper.sigma_xi2.ln()
            + log_det
            + quad
            + self.k as f64 * (2.0 * PI).ln())
    }
}

/// Reduced-rank log marginal likelihood `log p(ξ | θ)` of one dataset.
pub fn log_marginal_likelihood(spec: &BasisSpec, data: &RegressionData) -> Result<f64> {
    Ok(Gram::new(spec, data)?.log_marginal(spec, spec.hyper()))
}

/// Lower bound on the fitted noise variance.
pub const MIN_NOISE_VARIANCE: f64 = 1e-10;

/// Maximizes the summed reduced-rank log marginal likelihood over all
/// datasets with a Nelder–Mead search on `(log σ², log l, log σ_ξ²)`.
///
/// Three fixed starting points (short, medium and long lengthscale relative
/// to the domain) are tried; the best optimum is returned.
pub fn optimize_hyperparameters(template: &BasisSpec, datasets: &[RegressionData]) -> Result<Hyperparameters> {
    if datasets.is_empty() {
        return Err(Error::input("hyperparameter optimization needs at least one dataset"));
    }
    let grams = datasets
        .iter()
        .map(|d| Gram::new(template, d))
        .collect::<Result<Vec<_>>>()?;

    let decode = |theta: &[f64]| Hyperparameters {
        sigma2: theta[0].exp(),
        l: theta[1].exp(),
        sigma_xi2: theta[2].exp().max(MIN_NOISE_VARIANCE),
    };
    let objective = |theta: &[f64]| {
        let h = decode(theta);
        if !(h.sigma2.is_finite() && h.l.is_finite() && h.sigma_xi2.is_finite()) {
            return f64::INFINITY;
        }
        let total: f64 = grams.iter().map(|g| -g.log_marginal(template, &h)).sum();
        if total.is_finite() {
            total
        } else {
            f64::INFINITY
        }
    };

    let mean_sq = datasets
        .iter()
        .flat_map(|d| d.targets.iter())
        .map(|t| t * t)
        .sum::<f64>()
        / datasets.iter().map(|d| d.targets.len()).sum::<usize>() as f64;
    let sigma2_0 = mean_sq.max(1e-6);
    let half = (0..template.domain().dim())
        .map(|i| template.domain().half_width(i))
        .fold(f64::INFINITY, f64::min);

    let options = NelderMeadOptions {
        max_iter: 200,
        initial_step: 1.0,
        ..Default::default()
    };
    let mut best: Option<(Vec<f64>, f64)> = None;
    for divisor in [2.0, 5.0, 15.0] {
        let start = [sigma2_0.ln(), (half / divisor).ln(), (1e-2 * sigma2_0).max(MIN_NOISE_VARIANCE).ln()];
        let (theta, value) = nelder_mead(&objective, &start, &options);
        if value.is_finite() && best.as_ref().is_none_or(|(_, b)| value < *b) {
            best = Some((theta, value));
        }
    }
    let (theta, _) = best.ok_or_else(|| Error::Optimization("objective is non-finite at every visited point".into()))?;
    Ok(decode(&theta))
}
