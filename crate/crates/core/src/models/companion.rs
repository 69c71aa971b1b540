//! Companion-form lifting of an AR(p) transition to an AR(1) on the stacked state.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Companion matrix of `Y_t = Γ₁Y_{t-1} + … + Γ_pY_{t-p}`: top block row
/// `[Γ₁ … Γ_p]`, identity blocks on the first subdiagonal, zeros elsewhere.
pub fn ar_p_companion(gammas: &[Matrix]) -> Result<Matrix> {
    let first = gammas
        .first()
        .ok_or_else(|| Error::InvalidParameter("companion matrix needs at least one lag".into()))?;
    let d = first.nrows();
    if d == 0 {
        return Err(Error::InvalidParameter("empty transition matrix".into()));
    }
    for g in gammas {
        if g.nrows() != d || g.ncols() != d {
            return Err(Error::Dimension {
                context: "companion lag matrix",
                expected: d,
                found: if g.nrows() != d { g.nrows() } else { g.ncols() },
            });
        }
    }
    let p = gammas.len();
    let mut out = Matrix::zeros(d * p, d * p);
    for (i, g) in gammas.iter().enumerate() {
        out.view_mut((0, i * d), (d, d)).copy_from(g);
    }
    for i in 1..p {
        out.view_mut((i * d, (i - 1) * d), (d, d)).fill_with_identity();
    }
    Ok(out)
}
