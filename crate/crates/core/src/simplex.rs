//! Decision sets, Euclidean projection onto the probability simplex and a
//! small quadratic solver used for closed-form reference decisions.

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, SpdMatrix, Vector};

/// Feasible set for portfolio weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionSet {
    /// Long-only, fully invested: `δ ≥ 0`, `Σ δ = 1`.
    #[default]
    Simplex,
    /// No constraint, `δ ∈ ℝ^d`.
    #[serde(alias = "rd", alias = "unconstrained")]
    Rd,
}

impl DecisionSet {
    pub fn project(&self, v: &Vector) -> Result<Vector> {
        match self {
            DecisionSet::Simplex => project_simplex(v),
            DecisionSet::Rd => {
                if v.is_empty() {
                    return Err(Error::InvalidParameter("empty decision vector".into()));
                }
                Ok(v.clone())
            }
        }
    }

    pub fn contains(&self, v: &Vector, tol: f64) -> bool {
        match self {
            DecisionSet::Simplex => v.iter().all(|&x| x >= -tol) && (v.sum() - 1.0).abs() <= tol,
            DecisionSet::Rd => v.iter().all(|x| x.is_finite()),
        }
    }

    /// Starting point of the outer solvers: the uniform allocation.
    pub fn initial_point(&self, d: usize) -> Vector {
        Vector::from_element(d, 1.0 / d as f64)
    }
}

impl std::str::FromStr for DecisionSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "simplex" => Ok(DecisionSet::Simplex),
            "rd" | "unconstrained" => Ok(DecisionSet::Rd),
            other => Err(Error::InvalidParameter(format!("unknown decision set `{other}`"))),
        }
    }
}

/// Euclidean projection onto the probability simplex (sort-based, `O(d log d)`).
pub fn project_simplex(v: &Vector) -> Result<Vector> {
    if v.is_empty() {
        return Err(Error::InvalidParameter("cannot project an empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter(
            "non-finite entry in projection input".into(),
        ));
    }
    let mut sorted: Vec<f64> = v.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));

    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - 1.0) / (i + 1) as f64;
        if u - candidate > 0.0 {
            tau = candidate;
        }
    }
    let mut out = v.map(|x| (x - tau).max(0.0));
    // Remove the last few ulps of drift so the sum is 1 to machine precision.
    let total = out.sum();
    if total > 0.0 {
        out /= total;
    }
    Ok(out)
}

/// Minimizes `½ δᵀ H δ - gᵀ δ` over `set`.
///
/// On `ℝ^d` this is a Cholesky solve; on the simplex an accelerated projected
/// gradient method with step `1/L` and adaptive restart, run to `1e-14`.
pub fn minimize_quadratic(h: &Matrix, g: &Vector, set: DecisionSet) -> Result<Vector> {
    let d = g.len();
    if h.nrows() != d || h.ncols() != d {
        return Err(Error::Dimension {
            context: "minimize_quadratic",
            expected: d,
            found: h.nrows(),
        });
    }
    match set {
        DecisionSet::Rd => {
            let spd = SpdMatrix::named(h.clone(), "quadratic Hessian")
                .map_err(|_| Error::Singular("quadratic Hessian".into()))?;
            Ok(spd.solve_vec(g))
        }
        DecisionSet::Simplex => {
            let lipschitz = SymmetricEigen::new(h.clone())
                .eigenvalues
                .iter()
                .fold(0.0f64, |acc, &x| acc.max(x.abs()))
                .max(1e-300);
            let step = 1.0 / lipschitz;
            let value = |x: &Vector| 0.5 * x.dot(&(h * x)) - g.dot(x);

            let mut x = DecisionSet::Simplex.initial_point(d);
            let mut y = x.clone();
            let mut t = 1.0f64;
            for _ in 0..200_000 {
                let grad = h * &y - g;
                let next = project_simplex(&(&y - grad * step))?;
                let moved = (&next - &x).amax();
                if value(&next) > value(&x) {
                    // Adaptive restart.
                    t = 1.0;
                    y = x.clone();
                    continue;
                }
                let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
                y = &next + (&next - &x) * ((t - 1.0) / t_next);
                x = next;
                t = t_next;
                if moved < 1e-14 {
                    break;
                }
            }
            Ok(x)
        }
    }
}
