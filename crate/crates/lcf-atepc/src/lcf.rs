//! Semantic-relative distance (SRD) and the local-context-focus matrices.
//!
//! The SRD of position `i` with respect to an aspect centered at `P_a` with
//! length `m` is `|i - P_a| - floor(m / 2)`. Positions with SRD below the
//! threshold `alpha` form the local context. Non-local feature rows are
//! either zeroed (CDM, the mask variant) or linearly decayed by how far
//! their SRD overshoots the threshold (CDW, the weight variant).

use std::ops::Deref;

use crate::numerics::Matrix;

/// Per-position SRD values. Values inside the aspect can be negative; they
/// always satisfy the local-context test.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SrdVector {
    values: Vec<i64>,
}

impl SrdVector {
    pub fn values(&self) -> &[i64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl Deref for SrdVector {
    type Target = [i64];

    fn deref(&self) -> &[i64] {
        &self.values
    }
}

/// `values[i] = |i - p_a| - floor(m / 2)` for every position in `[0, n)`.
pub fn compute_srd(n: usize, p_a: usize, m: usize) -> SrdVector {
    assert!(p_a < n, "aspect center {p_a} out of range for length {n}");
    assert!(m >= 1 && m <= n, "aspect length {m} out of range for length {n}");
    let half = (m / 2) as i64;
    let center = p_a as i64;
    let values = (0..n as i64).map(|i| (i - center).abs() - half).collect();
    SrdVector { values }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum FocusKind {
    Mask,
    Weight,
}

/// One constant row vector per position, broadcast over the feature
/// dimension: all-ones or all-zeros rows for the mask variant, constant rows
/// in `[0, 1]` for the weight variant.
#[derive(Clone, Debug, PartialEq)]
pub struct FocusMatrix {
    kind: FocusKind,
    m: Matrix,
}

impl FocusMatrix {
    pub fn kind(&self) -> FocusKind {
        self.kind
    }

    pub fn matrix(&self) -> &Matrix {
        &self.m
    }

    pub fn into_matrix(self) -> Matrix {
        self.m
    }
}

/// Mask variant: row `i` is all-ones when `srd[i] <= alpha`, all-zeros
/// otherwise.
pub fn cdm_matrix(srd: &[i64], alpha: i64, d_h: usize) -> FocusMatrix {
    assert!(alpha >= 0, "alpha must be non-negative");
    let mut m = Matrix::zeros(srd.len(), d_h);
    for (i, &s) in srd.iter().enumerate() {
        if s <= alpha {
            m.row_mut(i).fill(1.0);
        }
    }
    FocusMatrix { kind: FocusKind::Mask, m }
}

/// Weight variant: local rows keep weight 1; a row whose SRD overshoots the
/// threshold is decayed to `(n - (srd - alpha)) / n`, clamped at 0 so long
/// sequences never flip feature signs.
pub fn cdw_matrix(srd: &[i64], alpha: i64, n: usize, d_h: usize) -> FocusMatrix {
    assert!(alpha >= 0, "alpha must be non-negative");
    assert!(n >= 1, "n must be positive");
    let mut m = Matrix::zeros(srd.len(), d_h);
    for (i, &s) in srd.iter().enumerate() {
        let w = if s <= alpha {
            1.0
        } else {
            ((n as f64 - (s - alpha) as f64) / n as f64).max(0.0)
        };
        m.row_mut(i).fill(w);
    }
    FocusMatrix { kind: FocusKind::Weight, m }
}

/// Position-wise application: output row `i` is the feature row scaled
/// element-wise by focus row `i`.
pub fn apply_focus(features: &Matrix, fm: &FocusMatrix) -> Matrix {
    assert_eq!(features.shape(), fm.m.shape(), "apply_focus shape mismatch");
    features.hadamard(&fm.m)
}

/// Adjust raw SRD values for the special positions of an encoded instance:
///
/// - position 0 (the leading marker read by head pooling) is always local;
/// - positions from `nonlocal_from` on (the appended aspect suffix of the
///   sentence-pair layout) are forced out of the local context;
/// - padding positions from `valid_len` on are forced out as well.
///
/// Forcing is done on the SRD itself (`min`/`max` against the threshold) so
/// the mask and weight formulas stay untouched.
pub fn effective_srd(srd: &[i64], alpha: i64, nonlocal_from: Option<usize>, valid_len: usize) -> Vec<i64> {
    let cut = nonlocal_from.unwrap_or(valid_len).min(valid_len);
    srd.iter()
        .enumerate()
        .map(|(i, &s)| {
            if i == 0 {
                s.min(alpha)
            } else if i >= cut {
                s.max(alpha + 1)
            } else {
                s
            }
        })
        .collect()
}
