//! Weighted least squares on accumulated normal equations, with an optional
//! L1 penalty solved by cyclic coordinate descent.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative pivot floor below which the Gram matrix is treated as singular.
const RANK_TOL: f64 = 1e-12;

/// Running `XᵀWX`, `XᵀWy` and `yᵀWy` for a linear model without intercept.
/// Intercepts are modelled as an explicit all-ones column.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    p: usize,
    gram: Vec<f64>,
    rhs: Vec<f64>,
    yy: f64,
    weight_sum: f64,
    rows: usize,
    nz: Vec<usize>,
}

impl NormalEquations {
    pub fn new(p: usize) -> Self {
        NormalEquations {
            p,
            gram: vec![0.0; p * p],
            rhs: vec![0.0; p],
            yy: 0.0,
            weight_sum: 0.0,
            rows: 0,
            nz: Vec::with_capacity(p),
        }
    }

    pub fn unknowns(&self) -> usize {
        self.p
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn weight_sum(&self) -> f64 {
        self.weight_sum
    }

    /// Adds one observation. Zero entries of `x` are skipped, so indicator
    /// designs cost `O(nnz²)` per row.
    pub fn add(&mut self, x: &[f64], y: f64, w: f64) {
        debug_assert_eq!(x.len(), self.p);
        debug_assert!(w.is_finite() && w >= 0.0);
        self.nz.clear();
        self.nz.extend((0..self.p).filter(|&j| x[j] != 0.0));
        for (a, &i) in self.nz.iter().enumerate() {
            let wxi = w * x[i];
            self.rhs[i] += wxi * y;
            let row = &mut self.gram[i * self.p..(i + 1) * self.p];
            for &j in &self.nz[a..] {
                row[j] += wxi * x[j];
            }
        }
        self.yy += w * y * y;
        self.weight_sum += w;
        self.rows += 1;
    }

    fn full_gram(&self) -> DMatrix<f64> {
        let p = self.p;
        DMatrix::from_fn(p, p, |i, j| {
            if i <= j {
                self.gram[i * p + j]
            } else {
                self.gram[j * p + i]
            }
        })
    }

    /// Unpenalized solution of the normal equations.
    pub fn solve(&self) -> Result<Vec<f64>> {
        if self.p == 0 {
            return Ok(Vec::new());
        }
        let g = self.full_gram();
        let scale = g.diagonal().iter().cloned().fold(0.0, f64::max);
        if scale <= 0.0 {
            return Err(singular(self));
        }
        let chol = g.clone().cholesky().ok_or_else(|| singular(self))?;
        let min_pivot = chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| d * d)
            .fold(f64::INFINITY, f64::min);
        if min_pivot < RANK_TOL * scale {
            return Err(singular(self));
        }
        let sol = chol.solve(&DVector::from_column_slice(&self.rhs));
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(singular(self));
        }
        Ok(sol.iter().copied().collect())
    }

    /// Minimises `(1 / 2W) Σ w (y - x·a)² + λ Σ_{j penalized} |a_j|` where `W`
    /// is the total weight. `penalized[j] == false` exempts coefficient `j`.
    pub fn solve_lasso(&self, lambda: f64, penalized: &[bool], tol: f64) -> Result<Vec<f64>> {
        if lambda < 0.0 || !lambda.is_finite() {
            return Err(Error::Config(format!(
                "L1 penalty must be a finite nonnegative number, got {lambda}"
            )));
        }
        if lambda == 0.0 {
            return self.solve();
        }
        debug_assert_eq!(penalized.len(), self.p);
        let p = self.p;
        let g = self.full_gram();
        let thresh = lambda * self.weight_sum;
        let mut a = vec![0.0; p];
        // residual correlation: b - G a, kept up to date incrementally
        let mut corr = self.rhs.clone();
        const MAX_SWEEPS: usize = 100_000;
        for _ in 0..MAX_SWEEPS {
            let mut max_delta: f64 = 0.0;
            for j in 0..p {
                let gjj = g[(j, j)];
                if gjj <= 0.0 {
                    continue;
                }
                let z = corr[j] + gjj * a[j];
                let next = if penalized[j] {
                    soft_threshold(z, thresh) / gjj
                } else {
                    z / gjj
                };
                let delta = next - a[j];
                if delta != 0.0 {
                    for (k, c) in corr.iter_mut().enumerate() {
                        *c -= g[(k, j)] * delta;
                    }
                    a[j] = next;
                    max_delta = max_delta.max(delta.abs());
                }
            }
            if max_delta < tol {
                return Ok(a);
            }
        }
        Err(Error::Estimation(format!(
            "coordinate descent did not reach tolerance {tol} on {} rows",
            self.rows
        )))
    }
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

fn singular(eq: &NormalEquations) -> Error {
    Error::Estimation(format!(
        "normal equations are singular: {} rows of distinct information cannot identify {} unknowns",
        eq.rows, eq.p
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_linear_model() {
        let truth = [0.5, -1.0, 2.0];
        let mut eq = NormalEquations::new(3);
        for r in 0..8u32 {
            let x: Vec<f64> = (0..3).map(|j| ((r >> j) & 1) as f64).collect();
            let x = [1.0, x[0], x[1] + x[2] * 0.5];
            let y: f64 = x.iter().zip(&truth).map(|(a, b)| a * b).sum();
            eq.add(&x, y, 1.0 + r as f64);
        }
        let a = eq.solve().unwrap();
        for (u, v) in a.iter().zip(truth) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn singular_design_is_an_error() {
        let mut eq = NormalEquations::new(2);
        eq.add(&[1.0, 1.0], 1.0, 1.0);
        eq.add(&[2.0, 2.0], 2.0, 1.0);
        assert!(matches!(eq.solve(), Err(Error::Estimation(_))));
        assert!(matches!(NormalEquations::new(2).solve(), Err(Error::Estimation(_))));
    }

    #[test]
    fn lasso_shrinks_and_respects_exemptions() {
        let mut eq = NormalEquations::new(3);
        for r in 0..8u32 {
            let x = [1.0, (r & 1) as f64, (r >> 1 & 1) as f64];
            eq.add(&x, 3.0 + 2.0 * x[1] + 0.01 * x[2], 1.0);
        }
        let a = eq.solve_lasso(0.05, &[false, true, true], 1e-10).unwrap();
        assert_eq!(a[2], 0.0);
        // shrinkage is λ / var(x1) = 0.05 / 0.25
        assert!((a[1] - 1.8).abs() < 1e-6);
        let exact = eq.solve_lasso(0.0, &[false, true, true], 1e-10).unwrap();
        assert!((exact[2] - 0.01).abs() < 1e-10);
    }

    #[test]
    fn lasso_handles_rank_deficiency() {
        let mut eq = NormalEquations::new(3);
        for r in 0..4u32 {
            let s = (r & 1) as f64;
            eq.add(&[1.0, s, s], 1.0 + s, 1.0);
        }
        let a = eq.solve_lasso(1e-3, &[false, true, true], 1e-12).unwrap();
        assert!(a.iter().all(|v| v.is_finite()));
        assert!((a[1] + a[2] - 1.0).abs() < 0.01);
    }
}
