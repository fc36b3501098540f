//! Data-driven conditioning of a reduced-rank GP basis.
//!
//! Coefficient vectors fitted to `J` realizations are stacked into
//! `W ∈ R^{J×N}` and decomposed as `W = U Σ Zᵀ`. The leading `M` right
//! singular vectors define expressive basis functions `ρ_m(x) = z_mᵀ φ(x)`,
//! which inherit orthonormality from `φ`, so the L2 distance between an
//! expansion `wᵀφ` and a reduced expansion `vᵀρ` equals `‖w − Z_M v‖`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert_gp::{BasisSpec, HilbertGpModel};
use crate::quadrature;

/// Row-stacked coefficient vectors of several realizations over one basis.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientStack {
    spec: BasisSpec,
    w: DMatrix<f64>,
    realization_ids: Vec<String>,
}

impl CoefficientStack {
    pub fn spec(&self) -> &BasisSpec {
        &self.spec
    }

    /// `J × N` coefficient matrix; row `j` is `w_jᵀ`.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn realization_ids(&self) -> &[String] {
        &self.realization_ids
    }

    pub fn realizations(&self) -> usize {
        self.w.nrows()
    }

    pub fn row(&self, j: usize) -> DVector<f64> {
        self.w.row(j).transpose()
    }

    pub fn with_realization_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.realizations() {
            return Err(Error::input(format!(
                "{} realization ids for {} rows",
                ids.len(),
                self.realizations()
            )));
        }
        self.realization_ids = ids;
        Ok(self)
    }
}

/// Builds `W` from fitted models, keeping input order.
pub fn stack_coefficients(models: &[HilbertGpModel]) -> Result<CoefficientStack> {
    let first = models
        .first()
        .ok_or_else(|| Error::input("cannot stack an empty list of models"))?;
    let spec = first.spec().clone();
    if let Some(j) = models.iter().position(|m| m.spec() != &spec) {
        return Err(Error::input(format!(
            "model {j} was fitted against a different basis than model 0"
        )));
    }
    let n = spec.count();
    let w = DMatrix::from_fn(models.len(), n, |j, c| models[j].w()[c]);
    Ok(CoefficientStack {
        spec,
        w,
        realization_ids: (0..models.len()).map(|j| j.to_string()).collect(),
    })
}

/// One line of a singular-value scree table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreeRow {
    pub m: usize,
    pub sigma_m: f64,
    pub cumulative_energy: f64,
}

struct Decomposition {
    singular_values: Vec<f64>,
    /// Right singular vectors as columns, sorted by descending singular value.
    z: DMatrix<f64>,
}

fn decompose(stack: &CoefficientStack) -> Result<Decomposition> {
    let w = stack.matrix();
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("coefficient matrix contains non-finite entries".into()));
    }
    if w.iter().all(|v| *v == 0.0) {
        return Err(Error::Numeric("no signal energy: coefficient matrix is zero".into()));
    }
    let svd = w.clone().svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numeric("SVD did not return right singular vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));

    let n = w.ncols();
    let mut z = DMatrix::zeros(n, order.len());
    for (col, &k) in order.iter().enumerate() {
        let mut v: Vec<f64> = v_t.row(k).iter().copied().collect();
        // Largest-magnitude entry positive; ties go to the lowest index.
        let mut pivot = 0;
        for (i, x) in v.iter().enumerate() {
            if x.abs() > v[pivot].abs() {
                pivot = i;
            }
        }
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for (i, x) in v.into_iter().enumerate() {
            z[(i, col)] = x;
        }
    }
    Ok(Decomposition {
        singular_values: order.iter().map(|&k| svd.singular_values[k].max(0.0)).collect(),
        z,
    })
}

fn cumulative_energy(values: &[f64]) -> Vec<f64> {
    let total: f64 = values.iter().map(|s| s * s).sum();
    let mut acc = 0.0;
    values
        .iter()
        .map(|s| {
            acc += s * s;
            (acc / total).min(1.0)
        })
        .collect()
}

/// Singular values of `W` with cumulative explained energy.
pub fn scree(stack: &CoefficientStack) -> Result<Vec<ScreeRow>> {
    let d = decompose(stack)?;
    let energy = cumulative_energy(&d.singular_values);
    Ok(d
        .singular_values
        .iter()
        .zip(energy)
        .enumerate()
        .map(|(i, (&sigma_m, cumulative_energy))| ScreeRow {
            m: i + 1,
            sigma_m,
            cumulative_energy,
        })
        .collect())
}

/// Smallest rank whose explained energy reaches `threshold`.
pub fn rank_for_energy(stack: &CoefficientStack, threshold: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::input(format!("energy threshold must lie in [0, 1], got {threshold}")));
    }
    let rows = scree(stack)?;
    Ok(rows
        .iter()
        .find(|r| r.cumulative_energy >= threshold)
        .map_or(rows.len(), |r| r.m))
}

/// Leading right singular vectors of a coefficient stack.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionedBasis {
    spec: BasisSpec,
    z: DMatrix<f64>,
    singular_values: DVector<f64>,
    explained_energy: f64,
}

/// Keeps the first `m` right singular vectors of `W = U Σ Zᵀ`.
pub fn svd_condition(stack: &CoefficientStack, m: usize) -> Result<ConditionedBasis> {
    let max_rank = stack.realizations().min(stack.spec().count());
    if m == 0 || m > max_rank {
        return Err(Error::input(format!(
            "rank M = {m} must lie in 1..={max_rank} (min(J, N))"
        )));
    }
    let d = decompose(stack)?;
    let energy = cumulative_energy(&d.singular_values);
    Ok(ConditionedBasis {
        spec: stack.spec().clone(),
        z: d.z.columns(0, m).into_owned(),
        singular_values: DVector::from_column_slice(&d.singular_values[..m]),
        explained_energy: energy[m - 1],
    })
}

/// Serialized layout of a [`ConditionedBasis`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConditionedBasisDoc {
    spec_ref: BasisSpec,
    #[serde(rename = "M")]
    m: usize,
    /// `N × M`, row-major.
    #[serde(rename = "Z_M")]
    z_m: Vec<Vec<f64>>,
    singular_values: Vec<f64>,
    explained_energy: f64,
}

impl Serialize for ConditionedBasis {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        ConditionedBasisDoc {
            spec_ref: self.spec.clone(),
            m: self.rank(),
            z_m: self.z.row_iter().map(|r| r.iter().copied().collect()).collect(),
            singular_values: self.singular_values.iter().copied().collect(),
            explained_energy: self.explained_energy,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ConditionedBasis {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let doc = ConditionedBasisDoc::deserialize(deserializer)?;
        let n = doc.spec_ref.count();
        if doc.z_m.len() != n || doc.z_m.iter().any(|r| r.len() != doc.m) || doc.singular_values.len() != doc.m {
            return Err(D::Error::custom("Z_M / singular_values shape does not match N and M"));
        }
        Ok(ConditionedBasis {
            z: DMatrix::from_fn(n, doc.m, |r, c| doc.z_m[r][c]),
            singular_values: DVector::from_vec(doc.singular_values),
            explained_energy: doc.explained_energy,
            spec: doc.spec_ref,
        })
    }
}

impl ConditionedBasis {
    /// Builds a basis from an explicit column-orthonormal `Z_M`.
    pub fn from_parts(spec: BasisSpec, z: DMatrix<f64>, singular_values: DVector<f64>, explained_energy: f64) -> Result<Self> {
        if z.nrows() != spec.count() || z.ncols() != singular_values.len() || z.ncols() == 0 {
            return Err(Error::input(format!(
                "Z_M is {}x{}, expected {}x{}",
                z.nrows(),
                z.ncols(),
                spec.count(),
                singular_values.len()
            )));
        }
        Ok(Self {
            spec,
            z,
            singular_values,
            explained_energy,
        })
    }

    pub fn spec(&self) -> &BasisSpec {
        &self.spec
    }

    /// `N × M` matrix with columns `z_m`.
    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.singular_values
    }

    pub fn explained_energy(&self) -> f64 {
        self.explained_energy
    }

    pub fn rank(&self) -> usize {
        self.z.ncols()
    }

    fn check_len(&self, v: &DVector<f64>, expected: usize, what: &str) -> Result<()> {
        if v.len() == expected {
            Ok(())
        } else {
            Err(Error::input(format!("{what} has length {}, expected {expected}", v.len())))
        }
    }

    /// `ρ(x) = Z_Mᵀ φ(x)`.
    pub fn evaluate_rho(&self, x: &[f64]) -> Result<DVector<f64>> {
        Ok(self.z.tr_mul(&self.spec.basis_vector(x)?))
    }

    /// `vᵀ ρ(x)`.
    pub fn evaluate_reduced(&self, v: &DVector<f64>, x: &[f64]) -> Result<f64> {
        self.check_len(v, self.rank(), "subspace coefficient vector")?;
        Ok(v.dot(&self.evaluate_rho(x)?))
    }

    /// Coefficients over the original basis, `Z_M v`.
    pub fn lift(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(v, self.rank(), "subspace coefficient vector")?;
        Ok(&self.z * v)
    }

    /// Least-squares projection `v = Z_Mᵀ w`.
    pub fn project(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(w, self.spec.count(), "coefficient vector")?;
        Ok(self.z.tr_mul(w))
    }

    /// `‖w − Z_M v‖²`, the squared L2 distance between `wᵀφ` and `vᵀρ` on Ω.
    pub fn subspace_distance(&self, w: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
        self.check_len(w, self.spec.count(), "coefficient vector")?;
        Ok((w - self.lift(v)?).norm_squared())
    }

    /// `max_{i,j} |∫ ρ_i ρ_j − δ_ij|` by the trapezoid rule with
    /// `grid_points` nodes per dimension.
    pub fn orthonormality_defect(&self, grid_points: usize) -> Result<f64> {
        let m = self.rank();
        let mut gram = DMatrix::<f64>::zeros(m, m);
        let mut phi = vec![0.0; self.spec.count()];
        quadrature::for_each_node(self.spec.domain(), grid_points, |x, weight| {
            self.spec.fill_basis_unchecked(x, &mut phi);
            let rho = self.z.tr_mul(&DVector::from_column_slice(&phi));
            gram.ger(weight, &rho, &rho, 1.0);
        })?;
        Ok((0..m)
            .flat_map(|i| (0..m).map(move |j| (i, j)))
            .map(|(i, j)| (gram[(i, j)] - if i == j { 1.0 } else { 0.0 }).abs())
            .fold(0.0, f64::max))
    }
}
