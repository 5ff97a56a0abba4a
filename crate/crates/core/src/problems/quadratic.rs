//! Heterogeneous quadratic clients `F_i(x) = ½xᵀH_ix − e_iᵀx + c_i` and the
//! closed forms of the local operator for fixed-preconditioner GD.
//!
//! For GD with a fixed diagonal preconditioner `P_i`, `τ_i` local steps of
//! size `η_i` give `A_i(x) = K_i(x − x_i*) + x_i*` with
//! `K_i = (I − η_iP_iH_i)^{τ_i}`; everything below follows from that.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, DiagMatrix, ParamVector};

pub const DEFAULT_MAX_DIM: usize = 64;

const SYMMETRY_TOL: f64 = 1e-12;
const WEIGHT_SUM_TOL: f64 = 1e-9;
const MAX_CONDITION: f64 = 1e12;
const POWER_ITER_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct QuadraticClient {
    pub h: DMatrix<f64>,
    pub e: ParamVector,
    pub c: f64,
    pub weight: f64,
}

impl QuadraticClient {
    pub fn new(h: DMatrix<f64>, e: ParamVector, c: f64, weight: f64) -> Self {
        Self { h, e, c, weight }
    }

    /// Client with Hessian `h` whose local minimizer is `x_star`.
    pub fn with_minimizer(h: DMatrix<f64>, x_star: &ParamVector, weight: f64) -> Self {
        let e = ParamVector::from_dvector(&(&h * x_star.to_dvector()));
        Self::new(h, e, 0.0, weight)
    }
}

/// Parameters of fixed-preconditioner GD on one client: step size (or the
/// relative rate `γ_i` for the small-step limit), local steps, and `P_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClientRule {
    pub lr: f64,
    pub steps: usize,
    pub precond: DiagMatrix,
}

impl LinearClientRule {
    pub fn new(lr: f64, steps: usize, precond: DiagMatrix) -> Self {
        Self { lr, steps, precond }
    }

    pub fn plain(lr: f64, steps: usize, dim: usize) -> Self {
        Self::new(lr, steps, DiagMatrix::identity(dim))
    }
}

#[derive(Debug, Clone)]
pub struct QuadraticFamily {
    dim: usize,
    clients: Vec<QuadraticClient>,
}

impl QuadraticFamily {
    pub fn new(clients: Vec<QuadraticClient>) -> Result<Self> {
        Self::with_max_dim(clients, DEFAULT_MAX_DIM)
    }

    pub fn with_max_dim(clients: Vec<QuadraticClient>, max_dim: usize) -> Result<Self> {
        let first = clients.first().ok_or(Error::Empty("quadratic clients"))?;
        let dim = first.e.len();
        if dim == 0 || dim > max_dim {
            return Err(Error::config(format!(
                "quadratic dimension {dim} outside 1..={max_dim}"
            )));
        }
        let mut weight_sum = 0.0;
        for (i, c) in clients.iter().enumerate() {
            if c.h.nrows() != dim || c.h.ncols() != dim {
                return Err(Error::config(format!(
                    "client {i}: H is {}x{}, expected {dim}x{dim}",
                    c.h.nrows(),
                    c.h.ncols()
                )));
            }
            c.e.ensure_dim(dim)?;
            if !(c.weight >= 0.0 && c.weight.is_finite()) {
                return Err(Error::config(format!("client {i}: weight must be >= 0")));
            }
            if (&c.h - c.h.transpose()).norm() >= SYMMETRY_TOL {
                return Err(Error::config(format!("client {i}: H is not symmetric")));
            }
            let min_eig = SymmetricEigen::new(c.h.clone()).eigenvalues.min();
            if !(min_eig > 0.0) {
                return Err(Error::config(format!(
                    "client {i}: H is not positive definite (min eigenvalue {min_eig})"
                )));
            }
            weight_sum += c.weight;
        }
        if (weight_sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::config(format!(
                "client weights sum to {weight_sum}, expected 1"
            )));
        }
        Ok(Self { dim, clients })
    }

    /// Two 1-D clients, `H = (1, 2)`, `x_i* = (1, 2)`, equal weights.
    /// Global minimizer 5/3.
    pub fn scalar_pair() -> Self {
        let c = |h: f64, x: f64| {
            QuadraticClient::with_minimizer(
                DMatrix::from_element(1, 1, h),
                &ParamVector::new(vec![x]),
                0.5,
            )
        };
        Self::new(vec![c(1.0, 1.0), c(2.0, 2.0)]).expect("valid builtin family")
    }

    /// Two 2-D clients with coupled Hessians and unequal weights.
    ///
    /// `H_1 = [[3, 1], [1, 2]]`, `x_1* = (1, 0)`, `w_1 = 0.4`;
    /// `H_2 = [[1, -0.5], [-0.5, 4]]`, `x_2* = (-1, 2)`, `w_2 = 0.6`.
    pub fn planar_pair() -> Self {
        let h1 = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let h2 = DMatrix::from_row_slice(2, 2, &[1.0, -0.5, -0.5, 4.0]);
        Self::new(vec![
            QuadraticClient::with_minimizer(h1, &ParamVector::new(vec![1.0, 0.0]), 0.4),
            QuadraticClient::with_minimizer(h2, &ParamVector::new(vec![-1.0, 2.0]), 0.6),
        ])
        .expect("valid builtin family")
    }

    /// Two 2-D clients with diagonal Hessians, so ideal diagonal
    /// preconditioners `P_i = H_i⁻¹` exist.
    ///
    /// `H_1 = diag(1, 4)`, `x_1* = (1, 1)`, `H_2 = diag(3, 0.5)`,
    /// `x_2* = (-1, 3)`, equal weights.
    pub fn diagonal_pair() -> Self {
        let h1 = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]));
        let h2 = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 0.5]));
        Self::new(vec![
            QuadraticClient::with_minimizer(h1, &ParamVector::new(vec![1.0, 1.0]), 0.5),
            QuadraticClient::with_minimizer(h2, &ParamVector::new(vec![-1.0, 3.0]), 0.5),
        ])
        .expect("valid builtin family")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn clients(&self) -> &[QuadraticClient] {
        &self.clients
    }

    pub fn client(&self, i: usize) -> &QuadraticClient {
        &self.clients[i]
    }

    pub fn weights(&self) -> Vec<f64> {
        self.clients.iter().map(|c| c.weight).collect()
    }

    /// `∇F_i(x) = H_i x − e_i`
    pub fn grad(&self, i: usize, x: &ParamVector) -> ParamVector {
        let c = &self.clients[i];
        let hx = &c.h * x.to_dvector();
        ParamVector::new(hx.iter().zip(c.e.iter()).map(|(a, b)| a - b).collect())
    }

    pub fn loss(&self, i: usize, x: &ParamVector) -> f64 {
        let c = &self.clients[i];
        let xv = x.to_dvector();
        0.5 * xv.dot(&(&c.h * &xv)) - c.e.dot(x) + c.c
    }

    /// Smallest and largest eigenvalue of `H_i` (strong convexity and
    /// smoothness constants).
    pub fn eigen_bounds(&self, i: usize) -> (f64, f64) {
        let eig = SymmetricEigen::new(self.clients[i].h.clone()).eigenvalues;
        (eig.min(), eig.max())
    }

    /// Diagonal of `H_i⁻¹` when `H_i` is diagonal; the ideal fixed
    /// preconditioner.
    pub fn inverse_hessian_diag(&self, i: usize) -> Result<DiagMatrix> {
        let h = &self.clients[i].h;
        let off_diag = (0..self.dim)
            .flat_map(|r| (0..self.dim).map(move |c| (r, c)))
            .any(|(r, c)| r != c && h[(r, c)] != 0.0);
        if off_diag {
            return Err(Error::config(format!(
                "client {i}: H is not diagonal, no exact diagonal inverse"
            )));
        }
        Ok(DiagMatrix::new(h.diagonal().iter().map(|d| 1.0 / d).collect()))
    }

    /// `x_i* = H_i⁻¹ e_i`
    pub fn local_min(&self, i: usize) -> Result<ParamVector> {
        let c = &self.clients[i];
        let eig = SymmetricEigen::new(c.h.clone()).eigenvalues;
        let cond = eig.max() / eig.min();
        if !(cond <= MAX_CONDITION) {
            return Err(Error::IllConditioned(cond));
        }
        let x = solve(&c.h, &c.e.to_dvector()).ok_or(Error::Singular("H_i"))?;
        let residual = (&c.h * &x - c.e.to_dvector()).norm();
        if residual >= 1e-10 * c.e.norm().max(1.0) {
            return Err(Error::IllConditioned(cond));
        }
        Ok(ParamVector::from_dvector(&x))
    }

    /// `x* = (Σ w_iH_i)⁻¹ Σ w_iH_ix_i*`
    pub fn global_min(&self) -> Result<ParamVector> {
        let mut lhs = DMatrix::zeros(self.dim, self.dim);
        let mut rhs = DVector::zeros(self.dim);
        for (i, c) in self.clients.iter().enumerate() {
            lhs += &c.h * c.weight;
            rhs += (&c.h * self.local_min(i)?.to_dvector()) * c.weight;
        }
        let x = solve(&lhs, &rhs).ok_or(Error::Singular("Σ w_i H_i"))?;
        Ok(ParamVector::from_dvector(&x))
    }

    /// `K_i = (I − η_iP_iH_i)^{τ_i}` by repeated multiplication.
    pub fn step_power(&self, i: usize, rule: &LinearClientRule) -> Result<DMatrix<f64>> {
        rule.precond.ensure_dim(self.dim)?;
        let one_step = DMatrix::identity(self.dim, self.dim)
            - rule.precond.to_dmatrix() * &self.clients[i].h * rule.lr;
        let mut k = DMatrix::identity(self.dim, self.dim);
        for _ in 0..rule.steps {
            k = &one_step * k;
        }
        Ok(k)
    }

    /// `A_i(x) = K_i(x − x_i*) + x_i*`, the exact local operator.
    pub fn local_operator(
        &self,
        i: usize,
        rule: &LinearClientRule,
        x: &ParamVector,
    ) -> Result<ParamVector> {
        let x_star = self.local_min(i)?;
        let k = self.step_power(i, rule)?;
        let moved = k * x.sub(&x_star).to_dvector();
        Ok(ParamVector::from_dvector(&moved).add(&x_star))
    }

    /// `‖Σ w_iK_i‖₂`, the Lipschitz constant of the aggregate operator.
    pub fn aggregate_contraction(&self, rules: &[LinearClientRule]) -> Result<f64> {
        self.check_rules(rules)?;
        let mut kbar = DMatrix::zeros(self.dim, self.dim);
        for (i, rule) in rules.iter().enumerate() {
            kbar += self.step_power(i, rule)? * self.clients[i].weight;
        }
        Ok(spectral_norm(&kbar, POWER_ITER_TOL, 100_000))
    }

    /// Exact contraction constant `‖K_i‖₂²` of one client's operator.
    pub fn contraction_constant(&self, i: usize, rule: &LinearClientRule) -> Result<f64> {
        let k = self.step_power(i, rule)?;
        Ok(spectral_norm(&k, POWER_ITER_TOL, 100_000).powi(2))
    }

    /// Fixed point of the locally corrected operator
    /// `x − Σ w_iN_i⁻¹(x − A_i(x))` with `N_i = η_iτ_iP_i`:
    /// `[Σ w_iN_i⁻¹(I − K_i)]⁻¹ Σ w_iN_i⁻¹(I − K_i)x_i*`.
    ///
    /// Global correction rescales the aggregate by a client-independent
    /// matrix, so it shares this fixed point.
    pub fn corrected_fixed_point(&self, rules: &[LinearClientRule]) -> Result<ParamVector> {
        self.check_rules(rules)?;
        let eye = DMatrix::<f64>::identity(self.dim, self.dim);
        let mut lhs = DMatrix::zeros(self.dim, self.dim);
        let mut rhs = DVector::zeros(self.dim);
        for (i, rule) in rules.iter().enumerate() {
            let n_inv = rule.precond.scale(rule.lr * rule.steps as f64).inverse();
            let m = n_inv.to_dmatrix() * (&eye - self.step_power(i, rule)?) * self.clients[i].weight;
            rhs += &m * self.local_min(i)?.to_dvector();
            lhs += m;
        }
        let x = solve(&lhs, &rhs).ok_or(Error::Singular("corrected fixed-point system"))?;
        Ok(ParamVector::from_dvector(&x))
    }

    fn check_rules(&self, rules: &[LinearClientRule]) -> Result<()> {
        if rules.len() != self.clients.len() {
            return Err(Error::DimensionMismatch {
                expected: self.clients.len(),
                got: rules.len(),
            });
        }
        for r in rules {
            r.precond.ensure_dim(self.dim)?;
        }
        Ok(())
    }
}

/// Closed-form fixed point of the aggregate operator `A = Σ w_iA_i`:
/// `x̃ = [Σ w_i(I − K_i)]⁻¹ Σ w_i(I − K_i)x_i*`.
///
/// Errors with [`Error::NotContractive`] when `‖Σ w_iK_i‖₂ ≥ 1`.
pub fn fixed_point_closed_form(
    family: &QuadraticFamily,
    rules: &[LinearClientRule],
) -> Result<ParamVector> {
    let norm = family.aggregate_contraction(rules)?;
    if !(norm < 1.0) {
        return Err(Error::NotContractive(norm));
    }
    let dim = family.dim();
    let eye = DMatrix::<f64>::identity(dim, dim);
    let mut lhs = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    for (i, rule) in rules.iter().enumerate() {
        let m = (&eye - family.step_power(i, rule)?) * family.client(i).weight;
        rhs += &m * family.local_min(i)?.to_dvector();
        lhs += m;
    }
    let x = solve(&lhs, &rhs).ok_or(Error::Singular("Σ w_i (I − K_i)"))?;
    Ok(ParamVector::from_dvector(&x))
}

/// Small-step limit of the fixed point with `η_i = γ_iη`, `η → 0`:
/// `(Σ w_iγ_iτ_iP_iH_i)⁻¹ Σ w_iγ_iτ_iP_iH_ix_i*`. Each rule's `lr` is `γ_i`.
pub fn limiting_fixed_point(
    family: &QuadraticFamily,
    rules: &[LinearClientRule],
) -> Result<ParamVector> {
    family.check_rules(rules)?;
    let dim = family.dim();
    let mut lhs = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    for (i, rule) in rules.iter().enumerate() {
        let c = family.client(i);
        let m = rule.precond.to_dmatrix() * &c.h * (c.weight * rule.lr * rule.steps as f64);
        rhs += &m * family.local_min(i)?.to_dvector();
        lhs += m;
    }
    let x = solve(&lhs, &rhs).ok_or(Error::Singular("Σ w_iγ_iτ_iP_iH_i"))?;
    Ok(ParamVector::from_dvector(&x))
}

/// `x − A(x) = Σ w_i[I − K_i]H_i⁻¹∇F_i(x)`: the implicitly reweighted
/// aggregate of local gradients.
pub fn skew_residual(
    family: &QuadraticFamily,
    rules: &[LinearClientRule],
    x: &ParamVector,
) -> Result<ParamVector> {
    family.check_rules(rules)?;
    x.ensure_dim(family.dim())?;
    let dim = family.dim();
    let eye = DMatrix::<f64>::identity(dim, dim);
    let mut acc = DVector::zeros(dim);
    for (i, rule) in rules.iter().enumerate() {
        let c = family.client(i);
        let scaled_grad =
            solve(&c.h, &family.grad(i, x).to_dvector()).ok_or(Error::Singular("H_i"))?;
        acc += (&eye - family.step_power(i, rule)?) * scaled_grad * c.weight;
    }
    Ok(ParamVector::from_dvector(&acc))
}

fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let x = a.clone().lu().solve(b)?;
    x.iter().all(|v| v.is_finite()).then_some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn one_client(h: f64, e: f64) -> QuadraticFamily {
        QuadraticFamily::new(vec![QuadraticClient::new(
            DMatrix::from_element(1, 1, h),
            ParamVector::new(vec![e]),
            0.0,
            1.0,
        )])
        .unwrap()
    }

    fn x1(v: f64) -> ParamVector {
        ParamVector::new(vec![v])
    }

    #[test]
    fn grad_examples() {
        assert_eq!(one_client(1.0, 1.0).grad(0, &x1(1.0)), x1(0.0));
        assert_eq!(one_client(2.0, 4.0).grad(0, &x1(1.0)), x1(-2.0));
        let fam = QuadraticFamily::planar_pair();
        for i in 0..2 {
            let g = fam.grad(i, &fam.local_min(i).unwrap());
            assert!(g.norm() < 1e-12);
        }
    }

    #[test]
    fn local_min_examples() {
        assert_eq!(one_client(1.0, 1.0).local_min(0).unwrap(), x1(1.0));
        assert_eq!(one_client(2.0, 4.0).local_min(0).unwrap(), x1(2.0));
        let fam = QuadraticFamily::new(vec![QuadraticClient::new(
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0])),
            ParamVector::new(vec![1.0, 4.0]),
            0.0,
            1.0,
        )])
        .unwrap();
        assert_eq!(fam.local_min(0).unwrap(), ParamVector::new(vec![1.0, 1.0]));
    }

    #[test]
    fn local_min_rejects_ill_conditioned() {
        let fam = QuadraticFamily::new(vec![QuadraticClient::new(
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-13])),
            ParamVector::new(vec![1.0, 1.0]),
            0.0,
            1.0,
        )])
        .unwrap();
        assert!(matches!(fam.local_min(0), Err(Error::IllConditioned(_))));
    }

    #[test]
    fn construction_validation() {
        let bad_sym = QuadraticClient::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]),
            ParamVector::zeros(2),
            0.0,
            1.0,
        );
        assert!(QuadraticFamily::new(vec![bad_sym]).is_err());
        let not_pd = QuadraticClient::new(
            DMatrix::from_row_slice(1, 1, &[-1.0]),
            ParamVector::zeros(1),
            0.0,
            1.0,
        );
        assert!(QuadraticFamily::new(vec![not_pd]).is_err());
        let bad_weight = QuadraticClient::new(
            DMatrix::from_element(1, 1, 1.0),
            ParamVector::zeros(1),
            0.0,
            0.7,
        );
        assert!(QuadraticFamily::new(vec![bad_weight]).is_err());
        assert!(QuadraticFamily::new(vec![]).is_err());
    }

    #[test]
    fn global_min_examples() {
        let fam = QuadraticFamily::scalar_pair();
        assert_abs_diff_eq!(fam.global_min().unwrap()[0], 5.0 / 3.0, epsilon = 1e-14);
        let single = one_client(2.0, 4.0);
        assert_eq!(single.global_min().unwrap(), single.local_min(0).unwrap());
        let c = QuadraticClient::with_minimizer(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
            &ParamVector::new(vec![0.5, -1.5]),
            0.5,
        );
        let twins = QuadraticFamily::new(vec![c.clone(), c]).unwrap();
        assert!(twins.global_min().unwrap().dist(&ParamVector::new(vec![0.5, -1.5])) < 1e-12);
    }

    #[test]
    fn global_gradient_vanishes_at_global_min() {
        for fam in [
            QuadraticFamily::scalar_pair(),
            QuadraticFamily::planar_pair(),
            QuadraticFamily::diagonal_pair(),
        ] {
            let x = fam.global_min().unwrap();
            let mut g = ParamVector::zeros(fam.dim());
            for i in 0..fam.num_clients() {
                g.axpy(fam.client(i).weight, &fam.grad(i, &x));
            }
            assert!(g.norm() < 1e-10);
        }
    }

    #[test]
    fn fixed_point_fedsgd_equals_global_min() {
        for fam in [QuadraticFamily::scalar_pair(), QuadraticFamily::planar_pair()] {
            let rules = vec![LinearClientRule::plain(0.05, 1, fam.dim()); 2];
            let x = fixed_point_closed_form(&fam, &rules).unwrap();
            assert!(x.dist(&fam.global_min().unwrap()) < 1e-12);
        }
    }

    #[test]
    fn fixed_point_two_local_steps() {
        // I − K = (0.19, 0.36); x̃ = 0.455 / 0.275.
        let fam = QuadraticFamily::scalar_pair();
        let rules = vec![LinearClientRule::plain(0.1, 2, 1); 2];
        let x = fixed_point_closed_form(&fam, &rules).unwrap();
        assert_abs_diff_eq!(x[0], 0.455 / 0.275, epsilon = 1e-12);
        assert_abs_diff_eq!(x[0], 1.654545, epsilon = 1e-6);
    }

    #[test]
    fn fixed_point_ideal_preconditioners() {
        let fam = QuadraticFamily::scalar_pair();
        let rules = vec![
            LinearClientRule::new(0.1, 1, DiagMatrix::new(vec![1.0])),
            LinearClientRule::new(0.1, 1, DiagMatrix::new(vec![0.5])),
        ];
        let x = fixed_point_closed_form(&fam, &rules).unwrap();
        assert_abs_diff_eq!(x[0], 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(
            (x[0] - fam.global_min().unwrap()[0]).abs(),
            1.0 / 6.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn fixed_point_rejects_expansive_operator() {
        let fam = QuadraticFamily::scalar_pair();
        let rules = vec![LinearClientRule::plain(1.5, 1, 1); 2];
        // K = (-0.5, -2): Σ w K = -1.25.
        match fixed_point_closed_form(&fam, &rules) {
            Err(Error::NotContractive(n)) => assert_abs_diff_eq!(n, 1.25, epsilon = 1e-8),
            other => panic!("expected NotContractive, got {other:?}"),
        }
    }

    #[test]
    fn limiting_fixed_point_examples() {
        let fam = QuadraticFamily::scalar_pair();
        let rules = vec![
            LinearClientRule::new(1.0, 1, DiagMatrix::new(vec![1.0])),
            LinearClientRule::new(2.0, 1, DiagMatrix::new(vec![1.0])),
        ];
        assert_abs_diff_eq!(limiting_fixed_point(&fam, &rules).unwrap()[0], 1.8, epsilon = 1e-12);

        // γτPH identical across clients: the limit is x*.
        let rules = vec![
            LinearClientRule::new(1.0, 1, DiagMatrix::new(vec![2.0])),
            LinearClientRule::new(1.0, 1, DiagMatrix::new(vec![1.0])),
        ];
        assert_abs_diff_eq!(limiting_fixed_point(&fam, &rules).unwrap()[0], 1.5, epsilon = 1e-12);
        let rules = vec![LinearClientRule::plain(1.0, 3, 2); 2];
        let fam2 = QuadraticFamily::planar_pair();
        let lim = limiting_fixed_point(&fam2, &rules).unwrap();
        assert!(lim.dist(&fam2.global_min().unwrap()) < 1e-12);
    }

    #[test]
    fn limiting_fixed_point_is_small_step_limit() {
        let fam = QuadraticFamily::scalar_pair();
        let ideal = |lr: f64, steps: usize| {
            vec![
                LinearClientRule::new(lr, steps, DiagMatrix::new(vec![1.0])),
                LinearClientRule::new(lr, steps, DiagMatrix::new(vec![0.5])),
            ]
        };
        let limit = limiting_fixed_point(&fam, &ideal(1.0, 1)).unwrap();
        assert_abs_diff_eq!(limit[0], 1.5, epsilon = 1e-12);
        for eta in [1e-2, 1e-3, 1e-4] {
            let x = fixed_point_closed_form(&fam, &ideal(eta, 1)).unwrap();
            assert_abs_diff_eq!(x[0], 1.5, epsilon = 1e-10);
        }

        // A case where the gap to the limit is visible: heterogeneous steps.
        let rules = |eta: f64| {
            vec![
                LinearClientRule::plain(eta, 3, 1),
                LinearClientRule::plain(eta, 1, 1),
            ]
        };
        let limit = limiting_fixed_point(&fam, &rules(1.0)).unwrap();
        let gaps: Vec<f64> = [1e-2, 1e-3, 1e-4]
            .iter()
            .map(|&eta| fixed_point_closed_form(&fam, &rules(eta)).unwrap().dist(&limit))
            .collect();
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
        assert!(gaps[2] < 1e-4);
    }

    #[test]
    fn skew_residual_vanishes_at_fixed_point() {
        for fam in [QuadraticFamily::scalar_pair(), QuadraticFamily::planar_pair()] {
            let rules = vec![
                LinearClientRule::new(0.1, 3, DiagMatrix::constant(fam.dim(), 1.0)),
                LinearClientRule::new(0.05, 2, DiagMatrix::constant(fam.dim(), 0.7)),
            ];
            let xt = fixed_point_closed_form(&fam, &rules).unwrap();
            assert!(skew_residual(&fam, &rules, &xt).unwrap().norm() < 1e-10);
            // Matches x − A(x) computed from the operator itself.
            let x = ParamVector::filled(fam.dim(), 0.3);
            let mut ax = ParamVector::zeros(fam.dim());
            for (i, r) in rules.iter().enumerate() {
                ax.axpy(fam.client(i).weight, &fam.local_operator(i, r, &x).unwrap());
            }
            let direct = x.sub(&ax);
            assert!(skew_residual(&fam, &rules, &x).unwrap().dist(&direct) < 1e-12);
        }
    }

    #[test]
    fn skew_residual_single_client() {
        let fam = one_client(2.0, 4.0);
        let rule = vec![LinearClientRule::plain(0.1, 2, 1)];
        assert!(skew_residual(&fam, &rule, &x1(2.0)).unwrap().norm() < 1e-15);
        // (I − K)H⁻¹∇F(x) at x = 3: (1 − 0.64)·1 = 0.36.
        assert_abs_diff_eq!(skew_residual(&fam, &rule, &x1(3.0)).unwrap()[0], 0.36, epsilon = 1e-12);
    }

    #[test]
    fn skew_residual_first_order_term() {
        // [x* − A(x*)] / max η_iτ_i → Σ w_i (γ_iτ_iP_i / max γτ) ∇F_i(x*).
        let fam = QuadraticFamily::scalar_pair();
        let xs = fam.global_min().unwrap();
        let p = [1.0, 0.5];
        let rules = |eta: f64| {
            vec![
                LinearClientRule::new(eta, 2, DiagMatrix::new(vec![p[0]])),
                LinearClientRule::new(eta, 2, DiagMatrix::new(vec![p[1]])),
            ]
        };
        let first_order: f64 = (0..2)
            .map(|i| 0.5 * p[i] * fam.grad(i, &xs)[0])
            .sum();
        assert!(first_order.abs() > 0.1);
        let mut errs = vec![];
        for eta in [1e-2, 1e-4] {
            let r = skew_residual(&fam, &rules(eta), &xs).unwrap()[0] / (2.0 * eta);
            errs.push((r - first_order).abs());
        }
        assert!(errs[1] < errs[0] && errs[1] < 1e-3, "{errs:?}");
    }

    #[test]
    fn corrected_fixed_point_tau_one_is_global_min() {
        let fam = QuadraticFamily::diagonal_pair();
        let rules = vec![
            LinearClientRule::new(0.1, 1, fam.inverse_hessian_diag(0).unwrap()),
            LinearClientRule::new(0.3, 1, fam.inverse_hessian_diag(1).unwrap()),
        ];
        let x = fam.corrected_fixed_point(&rules).unwrap();
        assert!(x.dist(&fam.global_min().unwrap()) < 1e-12);
    }
}
