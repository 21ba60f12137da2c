//! Dense operators on `L^2(mu)` for a discrete measure, power iteration and
//! small fitting helpers.
//!
//! An [`OperatorMatrix`] represents `(Af)_i = sum_j K_ij w_j f_j + c_i f_i`:
//! an integral kernel against the measure plus a pointwise multiplier.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct OperatorMatrix {
    pub kernel: Array2<f64>,
    pub diag: Array1<f64>,
    pub weights: Array1<f64>,
}

/// Anything that can be applied to a function on the atoms.
pub trait LinearOp: Sync {
    fn len(&self) -> usize;
    /// Atom weights defining the inner product.
    fn weights(&self) -> &[f64];
    fn apply(&self, f: &[f64]) -> Vec<f64>;
    /// Adjoint with respect to the weighted inner product.
    fn apply_adjoint(&self, f: &[f64]) -> Vec<f64>;
}

impl OperatorMatrix {
    pub fn zeros(weights: &[f64]) -> Self {
        let n = weights.len();
        OperatorMatrix {
            kernel: Array2::zeros((n, n)),
            diag: Array1::zeros(n),
            weights: Array1::from(weights.to_vec()),
        }
    }

    pub fn identity(weights: &[f64]) -> Self {
        let mut z = Self::zeros(weights);
        z.diag.fill(1.0);
        z
    }

    /// Pointwise multiplication by `m`.
    pub fn multiplier(weights: &[f64], m: &[f64]) -> Self {
        let mut z = Self::zeros(weights);
        z.diag = Array1::from(m.to_vec());
        z
    }

    pub fn from_parts(kernel: Array2<f64>, diag: Array1<f64>, weights: &[f64]) -> Self {
        OperatorMatrix {
            kernel,
            diag,
            weights: Array1::from(weights.to_vec()),
        }
    }

    pub fn n(&self) -> usize {
        self.diag.len()
    }

    /// Matrix acting on coefficient vectors: `K W + C`.
    pub fn action_matrix(&self) -> Array2<f64> {
        let mut m = &self.kernel * &self.weights.view().insert_axis(Axis(0));
        for i in 0..self.n() {
            m[[i, i]] += self.diag[i];
        }
        m
    }

    pub fn apply_vec(&self, f: &Array1<f64>) -> Array1<f64> {
        let wf = &self.weights * f;
        self.kernel.dot(&wf) + &self.diag * f
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &OperatorMatrix) -> OperatorMatrix {
        let w = self.weights.view().insert_axis(Axis(0));
        let kaw = &self.kernel * &w;
        let mut kernel = kaw.dot(&other.kernel);
        // K_A C_B scales columns of K_A, C_A K_B scales rows of K_B
        kernel += &(&self.kernel * &other.diag.view().insert_axis(Axis(0)));
        kernel += &(&other.kernel * &self.diag.view().insert_axis(Axis(1)));
        OperatorMatrix {
            kernel,
            diag: &self.diag * &other.diag,
            weights: self.weights.clone(),
        }
    }

    /// Adjoint in `L^2(mu)`: transposed kernel, same multiplier.
    pub fn adjoint(&self) -> OperatorMatrix {
        OperatorMatrix {
            kernel: self.kernel.t().to_owned(),
            diag: self.diag.clone(),
            weights: self.weights.clone(),
        }
    }

    pub fn add(&self, other: &OperatorMatrix) -> OperatorMatrix {
        OperatorMatrix {
            kernel: &self.kernel + &other.kernel,
            diag: &self.diag + &other.diag,
            weights: self.weights.clone(),
        }
    }

    pub fn sub(&self, other: &OperatorMatrix) -> OperatorMatrix {
        OperatorMatrix {
            kernel: &self.kernel - &other.kernel,
            diag: &self.diag - &other.diag,
            weights: self.weights.clone(),
        }
    }

    pub fn scale(&self, s: f64) -> OperatorMatrix {
        OperatorMatrix {
            kernel: &self.kernel * s,
            diag: &self.diag * s,
            weights: self.weights.clone(),
        }
    }

    pub fn add_assign(&mut self, other: &OperatorMatrix) {
        self.kernel += &other.kernel;
        self.diag += &other.diag;
    }

    /// `A 1`.
    pub fn apply_one(&self) -> Array1<f64> {
        self.kernel.dot(&self.weights) + &self.diag
    }

    /// Largest `|K_ij - K_ji|` plus nothing from the multiplier, which is
    /// always symmetric.
    pub fn asymmetry(&self) -> f64 {
        let k = &self.kernel;
        let mut m = 0.0_f64;
        for i in 0..self.n() {
            for j in (i + 1)..self.n() {
                m = m.max((k[[i, j]] - k[[j, i]]).abs());
            }
        }
        m
    }

    pub fn is_zero(&self) -> bool {
        self.kernel.iter().all(|&v| v == 0.0) && self.diag.iter().all(|&v| v == 0.0)
    }

    /// `L^2(mu)` operator norm by power iteration.
    pub fn norm(&self, seed: u64) -> Result<f64> {
        operator_norm(self, seed, 1e-8, 20_000)
    }

    /// Writes the kernel row-major as CSV, preceded by a header line
    /// `# k=<k> N=<n>`.
    pub fn write_kernel_csv<W: std::io::Write>(&self, k: i32, out: W) -> Result<()> {
        let mut out = out;
        writeln!(out, "# k={} N={}", k, self.n())?;
        let mut wtr = csv::Writer::from_writer(out);
        for row in self.kernel.rows() {
            wtr.write_record(row.iter().map(|v| format!("{v:e}")))
                .map_err(|e| Error::Numerical(e.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

impl LinearOp for OperatorMatrix {
    fn len(&self) -> usize {
        self.n()
    }

    fn weights(&self) -> &[f64] {
        self.weights.as_slice().expect("contiguous weights")
    }

    fn apply(&self, f: &[f64]) -> Vec<f64> {
        self.apply_vec(&Array1::from(f.to_vec())).to_vec()
    }

    fn apply_adjoint(&self, f: &[f64]) -> Vec<f64> {
        let f = Array1::from(f.to_vec());
        let wf = &self.weights * &f;
        (self.kernel.t().dot(&wf) + &self.diag * &f).to_vec()
    }
}

/// A plain matrix acting on coefficient vectors, `(Af)_i = sum_j m_ij f_j`,
/// with the weighted inner product for adjoints and norms.
pub struct ActionOp<'a> {
    pub m: &'a Array2<f64>,
    pub w: &'a [f64],
}

impl LinearOp for ActionOp<'_> {
    fn len(&self) -> usize {
        self.w.len()
    }

    fn weights(&self) -> &[f64] {
        self.w
    }

    fn apply(&self, f: &[f64]) -> Vec<f64> {
        self.m.dot(&ndarray::ArrayView1::from(f)).to_vec()
    }

    fn apply_adjoint(&self, f: &[f64]) -> Vec<f64> {
        let wf: Array1<f64> = f.iter().zip(self.w).map(|(a, b)| a * b).collect();
        let t = self.m.t().dot(&wf);
        t.iter().zip(self.w).map(|(a, b)| a / b).collect()
    }
}

/// `L^2(mu)` norm of an action matrix.
pub fn action_norm(m: &Array2<f64>, w: &[f64], seed: u64) -> Result<f64> {
    operator_norm(&ActionOp { m, w }, seed, 1e-8, 5_000)
}

/// Composition of operators applied right to left, never formed densely.
pub struct Chain<'a> {
    pub factors: Vec<&'a dyn LinearOp>,
}

impl LinearOp for Chain<'_> {
    fn len(&self) -> usize {
        self.factors[0].len()
    }

    fn weights(&self) -> &[f64] {
        self.factors[0].weights()
    }

    fn apply(&self, f: &[f64]) -> Vec<f64> {
        let mut v = f.to_vec();
        for op in self.factors.iter().rev() {
            v = op.apply(&v);
        }
        v
    }

    fn apply_adjoint(&self, f: &[f64]) -> Vec<f64> {
        let mut v = f.to_vec();
        for op in self.factors.iter() {
            v = op.apply_adjoint(&v);
        }
        v
    }
}

/// Weighted inner product `sum_i w_i f_i g_i`.
pub fn inner(w: &[f64], f: &[f64], g: &[f64]) -> f64 {
    w.iter().zip(f).zip(g).map(|((w, f), g)| w * f * g).sum()
}

pub fn norm_l2(w: &[f64], f: &[f64]) -> f64 {
    inner(w, f, f).sqrt()
}

/// `||A||` on `L^2(mu)`: power iteration on `A* A` from a seeded random
/// start, stopping when the Rayleigh quotient changes by less than `tol`
/// (relative).
pub fn operator_norm(op: &dyn LinearOp, seed: u64, tol: f64, max_iter: usize) -> Result<f64> {
    let n = op.len();
    let w = op.weights();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let nv = norm_l2(w, &v);
    if nv == 0.0 {
        return Ok(0.0);
    }
    v.iter_mut().for_each(|x| *x /= nv);
    let mut last = 0.0;
    for it in 0..max_iter {
        let av = op.apply(&v);
        let mut u = op.apply_adjoint(&av);
        let lam = inner(w, &v, &u);
        let nu = norm_l2(w, &u);
        if nu == 0.0 || !nu.is_finite() {
            return if nu == 0.0 {
                Ok(0.0)
            } else {
                Err(Error::Numerical("power iteration diverged".into()))
            };
        }
        u.iter_mut().for_each(|x| *x /= nu);
        v = u;
        if it > 2 && (lam - last).abs() <= tol * lam.abs() {
            return Ok(lam.max(0.0).sqrt());
        }
        last = lam;
    }
    Ok(last.max(0.0).sqrt())
}

/// Ordinary least squares `y = a + b x`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LinearFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
        points: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn sample() -> OperatorMatrix {
        OperatorMatrix::from_parts(
            array![[1.0, 2.0, 0.0], [0.5, 0.0, 1.0], [0.0, 3.0, 1.0]],
            array![0.1, 0.2, 0.3],
            &[0.5, 1.0, 2.0],
        )
    }

    #[test]
    fn compose_matches_action_product() {
        let a = sample();
        let b = sample().adjoint().scale(0.5);
        let ab = a.compose(&b);
        let direct = a.action_matrix().dot(&b.action_matrix());
        let got = ab.action_matrix();
        for (x, y) in got.iter().zip(direct.iter()) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn adjoint_is_weighted_transpose() {
        let a = sample();
        let w = a.weights.to_vec();
        let f = [1.0, -2.0, 0.5];
        let g = [0.3, 0.7, -1.0];
        let lhs = inner(&w, &a.apply(&f), &g);
        let rhs = inner(&w, &f, &a.apply_adjoint(&g));
        assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
    }

    #[test]
    fn norm_of_multiplier() {
        let w = [1.0, 2.0, 3.0];
        let m = OperatorMatrix::multiplier(&w, &[0.5, -3.0, 2.0]);
        let n = m.norm(7).unwrap();
        assert_relative_eq!(n, 3.0, epsilon = 1e-6);
    }

    #[test]
    fn fit_recovers_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, -1.0, -3.0, -5.0];
        let f = linear_fit(&x, &y).unwrap();
        assert_relative_eq!(f.slope, -2.0);
        assert_relative_eq!(f.r_squared, 1.0);
    }
}
