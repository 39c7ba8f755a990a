//! Independent reference implementations shared by the integration tests
//! and the acceptance runner.
#![allow(dead_code, clippy::needless_range_loop)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sekf::{Mlp, NodeModel, ParamModel, SekfState, SelectionPolicy};

pub type Mat = Vec<Vec<f64>>;

pub fn invert(mut a: Mat) -> Mat {
    let n = a.len();
    let mut inv: Mat = (0..n).map(|i| (0..n).map(|j| f64::from(i == j)).collect()).collect();
    for c in 0..n {
        let piv = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
        a.swap(c, piv);
        inv.swap(c, piv);
        let d = a[c][c];
        for j in 0..n {
            a[c][j] /= d;
            inv[c][j] /= d;
        }
        for r in 0..n {
            if r != c {
                let f = a[r][c];
                for j in 0..n {
                    a[r][j] -= f * a[c][j];
                    inv[r][j] -= f * inv[c][j];
                }
            }
        }
    }
    inv
}

pub struct Textbook {
    pub p: Mat,
    pub q: f64,
    pub r: f64,
}

impl Textbook {
    /// `h` is l x n, as a list of rows.
    pub fn step(&mut self, params: &mut [f64], h: &Mat, e: &[f64]) {
        let l = params.len();
        let n = e.len();
        let ph: Mat = (0..l)
            .map(|i| (0..n).map(|c| (0..l).map(|k| self.p[i][k] * h[k][c]).sum()).collect())
            .collect();
        let mut s: Mat = (0..n)
            .map(|a| (0..n).map(|b| (0..l).map(|k| h[k][a] * ph[k][b]).sum()).collect())
            .collect();
        for (i, row) in s.iter_mut().enumerate() {
            row[i] += self.r;
        }
        let s_inv = invert(s);
        let k: Mat = (0..l)
            .map(|i| (0..n).map(|c| (0..n).map(|m| ph[i][m] * s_inv[m][c]).sum()).collect())
            .collect();
        for i in 0..l {
            params[i] += (0..n).map(|c| k[i][c] * e[c]).sum::<f64>();
        }
        // P = (I - K H^T) P + Q
        let khp: Mat = (0..l)
            .map(|i| (0..l).map(|j| (0..n).map(|c| k[i][c] * ph[j][c]).sum()).collect())
            .collect();
        for i in 0..l {
            for j in 0..l {
                self.p[i][j] -= khp[i][j];
            }
            self.p[i][i] += self.q;
        }
    }
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Largest relative deviation between the All-selection filter and the
/// textbook filter over `steps` random steps on `cases` random small nets.
pub fn filter_vs_textbook(seed: u64, cases: u64, steps: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let n_in = rng.gen_range(1..=3);
        let n_out = rng.gen_range(1..=3);
        let hidden = rng.gen_range(2..=5);
        let sizes = [n_in, hidden, n_out];
        let mut mlp = Mlp::new(&sizes, case).unwrap();
        let l = mlp.n_params();
        assert!(l <= 50);
        let eta = 10f64.powf(rng.gen_range(-3.0..0.0));
        let mut state = SekfState::new(l, 100.0, 0.1, eta, SelectionPolicy::All).unwrap();
        let mut oracle = Textbook {
            p: (0..l)
                .map(|i| (0..l).map(|j| if i == j { 100.0 } else { 0.0 }).collect())
                .collect(),
            q: 0.1,
            r: 1.0 / eta,
        };
        let mut oracle_params = mlp.params().to_vec();
        for _ in 0..steps {
            let x: Vec<f64> = (0..n_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..n_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let oracle_model = Mlp::from_params(&sizes, oracle_params.clone()).unwrap();
            let (pred, h) = oracle_model.jacobian(&x).unwrap();
            let h_rows: Mat = (0..l).map(|i| (0..n_out).map(|c| h[(i, c)]).collect()).collect();
            let e: Vec<f64> = y.iter().zip(&pred).map(|(t, p)| t - p).collect();
            oracle.step(&mut oracle_params, &h_rows, &e);
            state.step(&mut mlp, &x, &y).unwrap();
            for (a, b) in mlp.params().iter().zip(&oracle_params) {
                worst = worst.max(rel(*a, *b));
            }
            for i in 0..l {
                for j in 0..l {
                    worst = worst.max(rel(state.covariance()[(i, j)], oracle.p[i][j]));
                }
            }
        }
    }
    worst
}

pub fn finite_difference<M: ParamModel>(model: &mut M, input: &[f64], step: f64) -> DMatrix<f64> {
    let n = model.n_outputs();
    let mut fd = DMatrix::zeros(model.n_params(), n);
    for i in 0..model.n_params() {
        let orig = model.params()[i];
        model.params_mut()[i] = orig + step;
        let up = model.predict(input).unwrap();
        model.params_mut()[i] = orig - step;
        let down = model.predict(input).unwrap();
        model.params_mut()[i] = orig;
        for j in 0..n {
            fd[(i, j)] = (up[j] - down[j]) / (2.0 * step);
        }
    }
    fd
}

pub fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

/// Worst relative Jacobian error over `cases` random MLPs.
pub fn mlp_jacobian_error(seed: u64, cases: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let mut sizes = vec![rng.gen_range(1..=4)];
        for _ in 0..rng.gen_range(1..=3) {
            sizes.push(rng.gen_range(2..=8));
        }
        sizes.push(rng.gen_range(1..=3));
        let mut mlp = Mlp::new(&sizes, case).unwrap();
        let x: Vec<f64> = (0..sizes[0]).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (_, h) = mlp.jacobian(&x).unwrap();
        worst = worst.max(relative_error(&h, &finite_difference(&mut mlp, &x, 1e-6)));
    }
    worst
}

/// Worst relative Jacobian error over `cases` random neural ODEs with
/// horizons up to 10.
pub fn node_jacobian_error(seed: u64, cases: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let n_states = rng.gen_range(1..=3);
        let n_exo = rng.gen_range(0..=2);
        let horizon = rng.gen_range(1..=10);
        let hidden: Vec<usize> = (0..rng.gen_range(1..=2)).map(|_| rng.gen_range(2..=6)).collect();
        let extra = rng.gen_bool(0.5);
        let dt = rng.gen_range(0.05..0.5);
        let mut node = NodeModel::new(n_states, n_exo, &hidden, dt, horizon, extra, case).unwrap();
        let input: Vec<f64> = (0..node.n_inputs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (y, h) = node.jacobian(&input).unwrap();
        assert_eq!(y.len(), n_states * horizon);
        worst = worst.max(relative_error(&h, &finite_difference(&mut node, &input, 1e-6)));
    }
    worst
}
