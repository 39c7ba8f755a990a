//! Subset Extended Kalman Filter for parameter estimation.
//!
//! Each step predicts, forms the innovation, picks a parameter subset from the
//! current-sample loss gradient, and runs the EKF update on that subset only.
//! `P` stays dense; `Q` is diagonal and constant; `R = I / eta`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::model::ParamModel;
use crate::nn::loss_gradient;
use crate::selection::SelectionPolicy;

/// Diagonal jitter added to the innovation covariance when its factorization fails.
pub const REGULARIZATION: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SekfDocument", into = "SekfDocument")]
pub struct SekfState {
    p: DMatrix<f64>,
    q_diag: Vec<f64>,
    eta: f64,
    policy: SelectionPolicy,
    k: u64,
}

/// Result of one filter step.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    /// Prediction made before the update.
    pub prediction: Vec<f64>,
    /// Innovation `target - prediction`.
    pub innovation: Vec<f64>,
    /// Updated parameter indices (sorted). Empty means the step was skipped.
    pub selected: Vec<usize>,
    /// Wall-clock seconds spent on the whole step.
    pub wall_time: f64,
}

impl SekfState {
    pub fn new(l: usize, p0: f64, q0: f64, eta0: f64, policy: SelectionPolicy) -> Result<Self> {
        if l == 0 {
            return Err(Error::Config("filter needs at least one parameter".into()));
        }
        if !(p0 >= 0.0) || !(q0 >= 0.0) {
            return Err(Error::Config(format!("p0 and q0 must be >= 0, got {p0} and {q0}")));
        }
        if !(eta0 > 0.0) || !eta0.is_finite() {
            return Err(Error::Config(format!("eta must be > 0, got {eta0}")));
        }
        Ok(SekfState {
            p: DMatrix::from_diagonal_element(l, l, p0),
            q_diag: vec![q0; l],
            eta: eta0,
            policy,
            k: 0,
        })
    }

    pub fn n_params(&self) -> usize {
        self.q_diag.len()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn process_noise(&self) -> &[f64] {
        &self.q_diag
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn policy(&self) -> &SelectionPolicy {
        &self.policy
    }

    pub fn policy_mut(&mut self) -> &mut SelectionPolicy {
        &mut self.policy
    }

    pub fn steps(&self) -> u64 {
        self.k
    }

    /// Predict on `input`, then update the model toward `target`.
    pub fn step<M: ParamModel + ?Sized>(
        &mut self,
        model: &mut M,
        input: &[f64],
        target: &[f64],
    ) -> Result<StepOutcome> {
        let start = Instant::now();
        ensure_len("filter parameters", self.n_params(), model.n_params())?;
        ensure_len("filter target", model.n_outputs(), target.len())?;
        let (prediction, h) = model.jacobian(input)?;
        let innovation: Vec<f64> = target.iter().zip(&prediction).map(|(y, p)| y - p).collect();
        if innovation.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite innovation at step {}", self.k)));
        }
        let selected = self.update_with_jacobian(model.params_mut(), &h, &innovation)?;
        Ok(StepOutcome {
            prediction,
            innovation,
            selected,
            wall_time: start.elapsed().as_secs_f64(),
        })
    }

    /// Selection plus subset update given the parameter Jacobian `h` (l x n)
    /// and innovation `e`. Returns the selected indices. On error neither
    /// `params` nor the state is modified.
    pub fn update_with_jacobian(&mut self, params: &mut [f64], h: &DMatrix<f64>, e: &[f64]) -> Result<Vec<usize>> {
        let l = self.n_params();
        ensure_len("parameter vector", l, params.len())?;
        ensure_len("jacobian rows", l, h.nrows())?;
        ensure_len("innovation", h.ncols(), e.len())?;
        let grad_abs: Vec<f64> = loss_gradient(h, e)?.into_iter().map(f64::abs).collect();
        let selected = self.policy.select(&grad_abs)?;
        if selected.is_empty() {
            self.k += 1;
            return Ok(selected);
        }

        let h_sub = gather_rows(h, &selected)?;
        let mut p_sub = gather_subset(&self.p, &selected)?;
        let e = DVector::from_column_slice(e);
        let (delta, p_new) = subset_update(&p_sub, &h_sub, &e, self.eta)?;
        p_sub = p_new;
        for (i, &j) in selected.iter().enumerate() {
            p_sub[(i, i)] += self.q_diag[j];
        }
        symmetrize(&mut p_sub);
        if p_sub.iter().any(|v| !v.is_finite()) || delta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite filter update".into()));
        }
        for (i, &j) in selected.iter().enumerate() {
            params[j] += delta[i];
        }
        scatter_subset(&mut self.p, &selected, &p_sub)?;
        if selected.len() < l {
            decouple(&mut self.p, &selected);
        }
        self.k += 1;
        Ok(selected)
    }
}

/// Zeroes the covariance between selected and unselected parameters. The
/// updated block no longer agrees with the stale cross terms, and keeping
/// them lets a later, different subset gather an indefinite block; with the
/// coupling removed every principal block stays positive semi-definite.
fn decouple(p: &mut DMatrix<f64>, selected: &[usize]) {
    let l = p.nrows();
    let mut in_set = vec![false; l];
    for &j in selected {
        in_set[j] = true;
    }
    for &j in selected {
        for i in 0..l {
            if !in_set[i] {
                p[(i, j)] = 0.0;
                p[(j, i)] = 0.0;
            }
        }
    }
}

/// Kalman correction on a gathered block. Returns `(K e, P' - K H'^T P')`
/// using the Cholesky factor of `S = H'^T P' H' + R`.
fn subset_update(
    p: &DMatrix<f64>,
    h: &DMatrix<f64>,
    e: &DVector<f64>,
    eta: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = h.ncols();
    let m = h.nrows();
    // W = P' H'  (m x n)
    let mut w = DMatrix::<f64>::zeros(m, n);
    w.gemm(1.0, p, h, 0.0);
    let mut s = DMatrix::<f64>::zeros(n, n);
    s.gemm(1.0, &h.transpose(), &w, 0.0);
    for i in 0..n {
        s[(i, i)] += 1.0 / eta;
    }
    symmetrize(&mut s);
    let chol = match s.clone().cholesky() {
        Some(c) => c,
        None => {
            for i in 0..n {
                s[(i, i)] += REGULARIZATION;
            }
            s.cholesky()
                .ok_or_else(|| Error::Numeric("innovation covariance is singular".into()))?
        }
    };
    // M = L^{-1} W^T, so K e = M^T L^{-1} e and K H'^T P' = M^T M.
    let l = chol.l();
    let mt_rows = l
        .solve_lower_triangular(&w.transpose())
        .ok_or_else(|| Error::Numeric("triangular solve failed".into()))?;
    let z = l
        .solve_lower_triangular(e)
        .ok_or_else(|| Error::Numeric("triangular solve failed".into()))?;
    let mt = mt_rows.transpose();
    let delta = &mt * z;
    let mut p_new = p.clone();
    p_new.gemm(-1.0, &mt, &mt_rows, 1.0);
    Ok((delta, p_new))
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for c in 0..n {
        for r in (c + 1)..n {
            let v = 0.5 * (m[(r, c)] + m[(c, r)]);
            m[(r, c)] = v;
            m[(c, r)] = v;
        }
    }
}

fn check_indices(len: usize, idx: &[usize]) -> Result<()> {
    if let Some(&bad) = idx.iter().find(|&&j| j >= len) {
        return Err(Error::Domain(format!("index {bad} out of range for dimension {len}")));
    }
    Ok(())
}

/// Principal submatrix `m[j, j]`.
pub fn gather_subset(m: &DMatrix<f64>, idx: &[usize]) -> Result<DMatrix<f64>> {
    check_indices(m.nrows().min(m.ncols()), idx)?;
    if idx.len() == m.nrows() && idx.len() == m.ncols() && idx.iter().enumerate().all(|(i, &j)| i == j) {
        return Ok(m.clone());
    }
    Ok(DMatrix::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])]))
}

/// Row slice `m[j, :]`.
pub fn gather_rows(m: &DMatrix<f64>, idx: &[usize]) -> Result<DMatrix<f64>> {
    check_indices(m.nrows(), idx)?;
    Ok(m.select_rows(idx))
}

/// Writes `block` back into `m[j, j]`.
pub fn scatter_subset(m: &mut DMatrix<f64>, idx: &[usize], block: &DMatrix<f64>) -> Result<()> {
    check_indices(m.nrows().min(m.ncols()), idx)?;
    if block.nrows() != idx.len() || block.ncols() != idx.len() {
        return Err(Error::shape("subset block", idx.len(), block.nrows()));
    }
    for (c, &jc) in idx.iter().enumerate() {
        for (r, &jr) in idx.iter().enumerate() {
            m[(jr, jc)] = block[(r, c)];
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct SekfDocument {
    p: Vec<Vec<f64>>,
    q_diag: Vec<f64>,
    eta: f64,
    policy: SelectionPolicy,
    k: u64,
}

impl From<SekfState> for SekfDocument {
    fn from(s: SekfState) -> Self {
        let l = s.p.nrows();
        SekfDocument {
            p: (0..l).map(|r| s.p.row(r).iter().copied().collect()).collect(),
            q_diag: s.q_diag,
            eta: s.eta,
            policy: s.policy,
            k: s.k,
        }
    }
}

impl TryFrom<SekfDocument> for SekfState {
    type Error = Error;

    fn try_from(d: SekfDocument) -> Result<Self> {
        let l = d.q_diag.len();
        if l == 0 || d.p.len() != l || d.p.iter().any(|r| r.len() != l) {
            return Err(Error::Schema(format!("covariance must be {l}x{l}")));
        }
        if d.q_diag.iter().any(|&q| !(q >= 0.0)) || !(d.eta > 0.0) {
            return Err(Error::Schema("process noise must be >= 0 and eta > 0".into()));
        }
        let p = DMatrix::from_fn(l, l, |r, c| d.p[r][c]);
        Ok(SekfState {
            p,
            q_diag: d.q_diag,
            eta: d.eta,
            policy: d.policy,
            k: d.k,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mlp;

    fn scalar_state(p0: f64) -> SekfState {
        SekfState::new(1, p0, 0.1, 0.001, SelectionPolicy::All).unwrap()
    }

    #[test]
    fn init_scales_identities() {
        let s = SekfState::new(3, 100.0, 0.1, 0.001, SelectionPolicy::All).unwrap();
        assert_eq!(s.covariance(), &(DMatrix::identity(3, 3) * 100.0));
        assert_eq!(s.process_noise(), &[0.1; 3]);
        assert_eq!(s.steps(), 0);
        assert!(SekfState::new(0, 1.0, 0.1, 0.1, SelectionPolicy::All).is_err());
        assert!(SekfState::new(2, 1.0, 0.1, 0.0, SelectionPolicy::All).is_err());
        assert!(SekfState::new(2, -1.0, 0.1, 0.1, SelectionPolicy::All).is_err());
    }

    #[test]
    fn scalar_step() {
        let mut s = scalar_state(100.0);
        let mut pi = [0.0];
        let h = DMatrix::from_element(1, 1, 1.0);
        let j = s.update_with_jacobian(&mut pi, &h, &[1.0]).unwrap();
        assert_eq!(j, vec![0]);
        assert!((pi[0] - 1.0 / 11.0).abs() < 1e-12);
        let expected = (1.0 - 1.0 / 11.0) * 100.0 + 0.1;
        assert!((s.covariance()[(0, 0)] - expected).abs() < 1e-10);
        assert!((expected - 91.009).abs() < 1e-3);
    }

    #[test]
    fn zero_prior_never_moves() {
        let mut s = scalar_state(0.0);
        let mut pi = [0.5];
        let h = DMatrix::from_element(1, 1, 2.0);
        s.update_with_jacobian(&mut pi, &h, &[3.0]).unwrap();
        assert_eq!(pi[0], 0.5);
    }

    #[test]
    fn zero_innovation_and_zero_jacobian() {
        let mut s = SekfState::new(2, 10.0, 0.1, 0.01, SelectionPolicy::All).unwrap();
        let mut pi = [0.3, -0.2];
        let h = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        s.update_with_jacobian(&mut pi, &h, &[0.0]).unwrap();
        assert_eq!(pi, [0.3, -0.2]);
        assert!(s.covariance()[(0, 0)] < 10.1);

        let mut s = SekfState::new(2, 10.0, 0.1, 0.01, SelectionPolicy::All).unwrap();
        let h0 = DMatrix::zeros(2, 1);
        s.update_with_jacobian(&mut pi, &h0, &[1.0]).unwrap();
        assert_eq!(pi, [0.3, -0.2]);
        assert!((s.covariance()[(0, 0)] - 10.1).abs() < 1e-12);
        assert_eq!(s.covariance()[(0, 1)], 0.0);
    }

    #[test]
    fn empty_selection_is_a_no_op() {
        let mut s = SekfState::new(3, 10.0, 0.1, 0.01, SelectionPolicy::Prop { q: 0.5 }).unwrap();
        let before = s.covariance().clone();
        let mut pi = [1.0, 2.0, 3.0];
        let h = DMatrix::from_row_slice(3, 1, &[1.0, 1.0, 1.0]);
        let j = s.update_with_jacobian(&mut pi, &h, &[1.0]).unwrap();
        assert!(j.is_empty());
        assert_eq!(pi, [1.0, 2.0, 3.0]);
        assert_eq!(s.covariance(), &before);
    }

    #[test]
    fn subset_leaves_complement_untouched() {
        let mut mlp = Mlp::new(&[2, 5, 2], 3).unwrap();
        let mut s = SekfState::new(mlp.n_params(), 100.0, 0.1, 0.001, SelectionPolicy::Prop { q: 0.7 }).unwrap();
        // Warm P so it has off-diagonal structure.
        s.policy = SelectionPolicy::All;
        s.step(&mut mlp, &[0.2, 0.1], &[1.0, -1.0]).unwrap();
        s.policy = SelectionPolicy::Prop { q: 0.7 };
        let p_before = s.covariance().clone();
        let pi_before = mlp.params().to_vec();
        let out = s.step(&mut mlp, &[-0.4, 0.9], &[0.5, 0.2]).unwrap();
        assert!(!out.selected.is_empty() && out.selected.len() < mlp.n_params());
        let inside = |i: usize| out.selected.binary_search(&i).is_ok();
        for i in 0..mlp.n_params() {
            if !inside(i) {
                assert_eq!(mlp.params()[i].to_bits(), pi_before[i].to_bits());
            }
            for c in 0..mlp.n_params() {
                let now = s.covariance()[(i, c)];
                if !inside(i) && !inside(c) {
                    assert_eq!(now.to_bits(), p_before[(i, c)].to_bits());
                } else if inside(i) != inside(c) {
                    assert_eq!(now, 0.0);
                }
            }
        }
        let p = s.covariance();
        assert!((p - p.transpose()).amax() == 0.0);
    }

    #[test]
    fn alternating_subsets_keep_covariance_positive() {
        let mut mlp = Mlp::new(&[2, 6, 2], 5).unwrap();
        let mut s = SekfState::new(mlp.n_params(), 100.0, 0.1, 1e-3, SelectionPolicy::Prop { q: 0.5 }).unwrap();
        for k in 0..200 {
            let a = (k as f64 * 0.37).sin();
            let b = (k as f64 * 0.11).cos();
            s.step(&mut mlp, &[a, b], &[a * b, a - b]).unwrap();
            let min = s.covariance().clone().symmetric_eigenvalues().min();
            assert!(min > -1e-9, "step {k}: eigenvalue {min}");
        }
    }

    #[test]
    fn gather_scatter() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(gather_subset(&m, &[0]).unwrap(), DMatrix::from_element(1, 1, 1.0));
        assert_eq!(gather_subset(&m, &[0, 1]).unwrap(), m);
        assert!(gather_subset(&m, &[2]).is_err());
        let big = DMatrix::from_fn(5, 5, |r, c| (r * 5 + c) as f64);
        let idx = [1, 3, 4];
        let mut copy = big.clone();
        let block = gather_subset(&big, &idx).unwrap();
        scatter_subset(&mut copy, &idx, &block).unwrap();
        assert_eq!(copy, big);
        assert_eq!(gather_rows(&big, &[4]).unwrap()[(0, 2)], 22.0);
    }

    #[test]
    fn json_round_trip() {
        let mut s = SekfState::new(
            2,
            3.0,
            0.5,
            0.02,
            SelectionPolicy::Mag {
                q: 0.9,
                threshold: Some(0.01),
            },
        )
        .unwrap();
        let mut pi = [0.0, 0.0];
        let h = DMatrix::from_row_slice(2, 1, &[1.0, 0.5]);
        s.update_with_jacobian(&mut pi, &h, &[0.3]).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        let back: SekfState = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<SekfState>(
            r#"{"p":[[1.0]],"q_diag":[0.1,0.1],"eta":1.0,"policy":{"kind":"all"},"k":0}"#
        )
        .is_err());
    }
}
