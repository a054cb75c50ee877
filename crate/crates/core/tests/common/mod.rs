//! Dense multivariate-normal reference for the linear Gaussian model.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

pub struct DenseLgssm {
    pub mean_x: DVector<f64>,
    pub cov_x: DMatrix<f64>,
    pub loading: DMatrix<f64>,
}

impl DenseLgssm {
    /// `x_1 = a + e_1`, `x_t = a x_{t-1} + e_t`, `y_t = c_t x_t + v_t`.
    pub fn new(a: f64, c: f64, len: usize, unit_first_loading: bool) -> Self {
        // B x = (a, 0, ..., 0) + e with B unit lower bidiagonal
        let mut b = DMatrix::identity(len, len);
        for t in 1..len {
            b[(t, t - 1)] = -a;
        }
        let b_inv = b.try_inverse().unwrap();
        let mut shift = DVector::zeros(len);
        shift[0] = a;
        let mean_x = &b_inv * shift;
        let cov_x = &b_inv * b_inv.transpose();
        let mut loading = DMatrix::from_diagonal_element(len, len, c);
        if unit_first_loading {
            loading[(0, 0)] = 1.0;
        }
        Self { mean_x, cov_x, loading }
    }

    pub fn joint_logpdf(&self, x: &[f64], y: &[f64]) -> f64 {
        let n = x.len();
        let mut mean = DVector::zeros(2 * n);
        let mut cov = DMatrix::zeros(2 * n, 2 * n);
        let cy = &self.loading * &self.mean_x;
        let sxc = &self.cov_x * self.loading.transpose();
        let syy = &self.loading * &sxc + DMatrix::identity(n, n);
        for i in 0..n {
            mean[i] = self.mean_x[i];
            mean[n + i] = cy[i];
            for j in 0..n {
                cov[(i, j)] = self.cov_x[(i, j)];
                cov[(i, n + j)] = sxc[(i, j)];
                cov[(n + i, j)] = sxc[(j, i)];
                cov[(n + i, n + j)] = syy[(i, j)];
            }
        }
        let v: Vec<f64> = x.iter().chain(y).copied().collect();
        mvn_logpdf(&DVector::from_vec(v), &mean, &cov)
    }

    pub fn marginal_y_logpdf(&self, y: &[f64]) -> f64 {
        let n = y.len();
        let mean = &self.loading * &self.mean_x;
        let cov = &self.loading * &self.cov_x * self.loading.transpose() + DMatrix::identity(n, n);
        mvn_logpdf(&DVector::from_column_slice(y), &mean, &cov)
    }

    /// `E[x | y]` and `Var[x_t | y]`.
    pub fn condition(&self, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = y.len();
        let sxc = &self.cov_x * self.loading.transpose();
        let syy = &self.loading * &sxc + DMatrix::identity(n, n);
        let gain = &sxc * syy.try_inverse().unwrap();
        let resid = DVector::from_column_slice(y) - &self.loading * &self.mean_x;
        let mean = &self.mean_x + &gain * resid;
        let cov = &self.cov_x - &gain * sxc.transpose();
        (mean.iter().copied().collect(), (0..n).map(|i| cov[(i, i)]).collect())
    }
}

pub fn mvn_logpdf(v: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let n = v.len() as f64;
    let chol = cov.clone().cholesky().unwrap();
    let d = v - mean;
    let z = chol.l().solve_lower_triangular(&d).unwrap();
    let logdet: f64 = chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>() * 2.0;
    -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + logdet + z.dot(&z))
}
