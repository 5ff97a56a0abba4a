//! Local and global correction of client deltas.
//!
//! Clients accumulate the preconditioners used in their local steps into a
//! diagonal `N_i` and send `N_i⁻¹Δ_i` instead of `Δ_i`. The server can then
//! rescale the aggregate by `N_s⁻¹` with `N_s = Σ w_iN_i⁻¹`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{DiagMatrix, ParamVector};

/// Components of a correction matrix below this value are treated as broken
/// accounting.
pub const CORRECTION_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionMode {
    #[default]
    None,
    Local,
    /// Local correction followed by global correction on the server.
    Joint,
}

impl CorrectionMode {
    pub fn local(self) -> bool {
        !matches!(self, CorrectionMode::None)
    }

    pub fn global(self) -> bool {
        matches!(self, CorrectionMode::Joint)
    }
}

/// Momentum-weighted preconditioner `M` and its running sum `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionAccumulator {
    pub m: DiagMatrix,
    pub n: DiagMatrix,
}

impl CorrectionAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            m: DiagMatrix::zeros(dim),
            n: DiagMatrix::zeros(dim),
        }
    }

    /// `M ← β₁M + (1 − β₁)B`, then `N ← N + M`.
    pub fn accumulate(&mut self, b: &DiagMatrix, beta1: f64) {
        debug_assert_eq!(b.len(), self.m.len());
        let m: Vec<f64> = self
            .m
            .iter()
            .zip(b.iter())
            .map(|(m, b)| beta1 * m + (1.0 - beta1) * b)
            .collect();
        let n: Vec<f64> = self.n.iter().zip(&m).map(|(n, m)| n + m).collect();
        self.m = DiagMatrix::new(m);
        self.n = DiagMatrix::new(n);
    }
}

fn check_floor(n: &DiagMatrix) -> Result<()> {
    for (index, &value) in n.iter().enumerate() {
        if !(value >= CORRECTION_FLOOR) || !value.is_finite() {
            return Err(Error::CorrectionFloor {
                index,
                value,
                floor: CORRECTION_FLOOR,
            });
        }
    }
    Ok(())
}

/// `N⁻¹Δ`
pub fn apply_local(delta: &ParamVector, n: &DiagMatrix) -> Result<ParamVector> {
    n.ensure_dim(delta.len())?;
    check_floor(n)?;
    Ok(n.solve_vec(delta))
}

/// `N_s = Σ w_iN_i⁻¹`, reduced in list order.
pub fn aggregate_global_norm(n_list: &[DiagMatrix], weights: &[f64]) -> Result<DiagMatrix> {
    let first = n_list.first().ok_or(Error::Empty("correction matrices"))?;
    if weights.len() != n_list.len() {
        return Err(Error::DimensionMismatch {
            expected: n_list.len(),
            got: weights.len(),
        });
    }
    let mut acc = vec![0.0; first.len()];
    for (n, &w) in n_list.iter().zip(weights) {
        n.ensure_dim(first.len())?;
        check_floor(n)?;
        for (a, d) in acc.iter_mut().zip(n.iter()) {
            *a += w / d;
        }
    }
    Ok(DiagMatrix::new(acc))
}

/// `N_s⁻¹Δ`
pub fn apply_global(delta_agg: &ParamVector, n_s: &DiagMatrix) -> Result<ParamVector> {
    apply_local(delta_agg, n_s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn d(v: &[f64]) -> DiagMatrix {
        DiagMatrix::new(v.to_vec())
    }

    fn p(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec())
    }

    #[test]
    fn accumulate_without_momentum_sums_preconditioners() {
        let mut acc = CorrectionAccumulator::new(1);
        acc.accumulate(&d(&[2.0]), 0.0);
        assert_eq!(acc.m, d(&[2.0]));
        acc.accumulate(&d(&[3.0]), 0.0);
        assert_eq!(acc.m, d(&[3.0]));
        assert_eq!(acc.n, d(&[5.0]));
    }

    #[test]
    fn accumulate_with_momentum() {
        let mut acc = CorrectionAccumulator::new(1);
        acc.accumulate(&d(&[1.0]), 0.5);
        assert_eq!(acc.m, d(&[0.5]));
        acc.accumulate(&d(&[1.0]), 0.5);
        assert_eq!(acc.m, d(&[0.75]));
        assert_eq!(acc.n, d(&[1.25]));
    }

    #[test]
    fn empty_accumulation_is_zero() {
        assert_eq!(CorrectionAccumulator::new(3).n, DiagMatrix::zeros(3));
    }

    #[test]
    fn apply_local_examples() {
        // Two GD steps on ½x² from 1 with η = 0.1: Δ = 0.19, N = 0.2.
        assert_abs_diff_eq!(apply_local(&p(&[0.19]), &d(&[0.2])).unwrap()[0], 0.95, epsilon = 1e-15);
        assert_eq!(apply_local(&p(&[0.0, 0.0]), &d(&[0.3, 2.0])).unwrap(), p(&[0.0, 0.0]));
        let v = p(&[1.5, -2.25]);
        assert_eq!(apply_local(&v, &d(&[1.0, 1.0])).unwrap(), v);
    }

    #[test]
    fn floor_is_an_error() {
        assert!(matches!(
            apply_local(&p(&[1.0, 1.0]), &d(&[1.0, 0.0])),
            Err(Error::CorrectionFloor { index: 1, .. })
        ));
        assert!(apply_local(&p(&[1.0]), &d(&[1e-13])).is_err());
        assert!(apply_local(&p(&[1.0]), &d(&[-1.0])).is_err());
        assert!(apply_global(&p(&[1.0]), &d(&[f64::NAN])).is_err());
    }

    #[test]
    fn global_norm_examples() {
        assert_eq!(
            aggregate_global_norm(&[d(&[2.0]), d(&[4.0])], &[0.5, 0.5]).unwrap(),
            d(&[0.375])
        );
        let n = d(&[0.5, 4.0]);
        assert_eq!(
            aggregate_global_norm(&[n.clone(), n.clone()], &[0.5, 0.5]).unwrap(),
            n.inverse()
        );
        assert_eq!(aggregate_global_norm(&[d(&[8.0])], &[1.0]).unwrap(), d(&[0.125]));
        assert!(matches!(aggregate_global_norm(&[], &[]), Err(Error::Empty(_))));
    }

    #[test]
    fn apply_global_examples() {
        // N_s = 0.375 and Δ₁ = Δ₂ = δ: Σ w N_i⁻¹ Δ_i = 0.375 δ, corrected back to δ.
        let delta = 0.7;
        let agg = 0.5 * delta / 2.0 + 0.5 * delta / 4.0;
        assert_abs_diff_eq!(apply_global(&p(&[agg]), &d(&[0.375])).unwrap()[0], delta, epsilon = 1e-15);
        assert_eq!(apply_global(&p(&[0.0]), &d(&[0.375])).unwrap(), p(&[0.0]));
    }

    #[test]
    fn joint_correction_with_homogeneous_n_is_identity() {
        // Dyadic N and weights make every operation exact.
        let n = d(&[0.25, 0.5]);
        let deltas = [p(&[0.3, -1.1]), p(&[0.7, 2.9])];
        let w = [0.5, 0.5];
        let mut plain = ParamVector::zeros(2);
        let mut corrected = ParamVector::zeros(2);
        for (delta, wi) in deltas.iter().zip(w) {
            plain.axpy(wi, delta);
            corrected.axpy(wi, &apply_local(delta, &n).unwrap());
        }
        let n_s = aggregate_global_norm(&[n.clone(), n], &w).unwrap();
        assert_eq!(apply_global(&corrected, &n_s).unwrap(), plain);
    }
}
