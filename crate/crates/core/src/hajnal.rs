//! Hajnal diameter of a single matrix, scramblingness and the generalized
//! Hajnal inequality `diam(GH) <= (1 - eta(G)) diam(H)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, NormKind, StochasticMatrix};

/// Entries above this count as positive in scrambling tests.
pub const POSITIVE_TOL: f64 = 1e-12;

/// Slack allowed on the right-hand side of the Hajnal inequality.
pub const HAJNAL_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiamValue {
    pub value: f64,
    pub norm: NormKind,
}

/// `max_{i,j} ||g_i - g_j||` over the rows of `l`. For a column vector this
/// is the state diameter `max |x_i - x_j|`.
pub fn diam_matrix(l: &Matrix, kind: NormKind) -> DiamValue {
    DiamValue {
        value: row_diameter(l, kind),
        norm: kind,
    }
}

pub(crate) fn row_diameter(l: &Matrix, kind: NormKind) -> f64 {
    let (n, c) = (l.rows(), l.cols());
    match kind {
        // max over columns of the column's range
        NormKind::Inf => (0..c)
            .map(|j| {
                let (lo, hi) = (0..n).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| {
                    let x = l[(i, j)];
                    (lo.min(x), hi.max(x))
                });
                hi - lo
            })
            .fold(0.0, f64::max),
        _ => {
            let mut best: f64 = 0.0;
            let mut diff = vec![0.0; c];
            for i in 0..n {
                for j in i + 1..n {
                    for ((d, a), b) in diff.iter_mut().zip(l.row(i)).zip(l.row(j)) {
                        *d = a - b;
                    }
                    best = best.max(kind.vector_norm(&diff));
                }
            }
            best
        }
    }
}

/// State diameter `max_{i,j} |x_i - x_j|`.
pub fn state_diameter(x: &[f64]) -> f64 {
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if x.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

/// `eta(G) = min_{i,j} sum_k min(G_ik, G_jk)`.
pub fn eta(g: &StochasticMatrix) -> f64 {
    let n = g.dim();
    if n < 2 {
        return 1.0;
    }
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            let overlap: f64 = g.row(i).iter().zip(g.row(j)).map(|(a, b)| a.min(*b)).sum();
            best = best.min(overlap);
        }
    }
    best.clamp(0.0, 1.0)
}

/// Every pair of rows shares a positively supported column.
pub fn is_scrambling(g: &StochasticMatrix) -> bool {
    let n = g.dim();
    (0..n).all(|i| {
        (i + 1..n).all(|j| {
            g.row(i)
                .iter()
                .zip(g.row(j))
                .any(|(a, b)| *a > POSITIVE_TOL && *b > POSITIVE_TOL)
        })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HajnalCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Evaluates both sides of `diam(G H) <= (1 - eta(G)) diam(H)`.
pub fn hajnal_bound_check(
    g: &StochasticMatrix,
    h: &StochasticMatrix,
    kind: NormKind,
) -> Result<HajnalCheck> {
    if g.dim() != h.dim() {
        return Err(Error::DimensionMismatch {
            expected: g.dim(),
            got: h.dim(),
        });
    }
    let gh = g.matmul(h)?;
    let lhs = row_diameter(&gh, kind);
    let rhs = (1.0 - eta(g)) * row_diameter(h, kind);
    Ok(HajnalCheck {
        lhs,
        rhs,
        holds: lhs <= rhs + HAJNAL_SLACK,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn s(rows: &[&[f64]]) -> StochasticMatrix {
        StochasticMatrix::new(Matrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn diam_examples() {
        let equal = Matrix::from_rows(&[[0.2, 0.8], [0.2, 0.8]]).unwrap();
        assert_eq!(diam_matrix(&equal, NormKind::Inf).value, 0.0);
        let id = Matrix::identity(2);
        assert_eq!(diam_matrix(&id, NormKind::Inf).value, 1.0);
        assert_eq!(diam_matrix(&id, NormKind::One).value, 2.0);
        assert_abs_diff_eq!(diam_matrix(&id, NormKind::Two).value, 2f64.sqrt(), epsilon = 1e-15);
        let col = Matrix::new(3, 1, vec![0.5, -1.0, 2.0]).unwrap();
        assert_eq!(diam_matrix(&col, NormKind::Inf).value, 3.0);
        assert_eq!(diam_matrix(&col, NormKind::Two).value, 3.0);
        assert_eq!(state_diameter(&[0.5, -1.0, 2.0]), 3.0);
    }

    #[test]
    fn eta_examples() {
        assert_eq!(eta(&StochasticMatrix::identity(4)), 0.0);
        assert_eq!(eta(&s(&[&[0.3, 0.7], &[0.3, 0.7]])), 1.0);
        // row pairs: (1,2): .5, (1,3): .5, (2,3): .5
        let c = s(&[&[0.5, 0.5, 0.0], &[0.0, 0.5, 0.5], &[0.5, 0.0, 0.5]]);
        assert_abs_diff_eq!(eta(&c), 0.5, epsilon = 1e-15);
        assert!(is_scrambling(&c));
    }

    #[test]
    fn scrambling_examples() {
        assert!(!is_scrambling(&StochasticMatrix::identity(3)));
        let col = s(&[&[1.0, 0.0, 0.0], &[0.5, 0.5, 0.0], &[0.2, 0.0, 0.8]]);
        assert!(is_scrambling(&col));
        // float dust below the threshold does not count
        let dust = s(&[&[1.0 - 1e-14, 1e-14], &[0.0, 1.0]]);
        assert!(!is_scrambling(&dust));
    }

    #[test]
    fn hajnal_examples() {
        let g = s(&[&[0.4, 0.6], &[0.4, 0.6]]);
        let h = s(&[&[0.9, 0.1], &[0.2, 0.8]]);
        let c = hajnal_bound_check(&g, &h, NormKind::Inf).unwrap();
        assert!(c.lhs.abs() < 1e-15 && c.rhs == 0.0 && c.holds);

        let id = StochasticMatrix::identity(2);
        let c = hajnal_bound_check(&id, &id, NormKind::Inf).unwrap();
        assert_eq!((c.lhs, c.rhs, c.holds), (1.0, 1.0, true));

        let big = StochasticMatrix::identity(3);
        assert!(matches!(
            hajnal_bound_check(&id, &big, NormKind::Inf),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
