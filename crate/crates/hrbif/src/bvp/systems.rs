//! Concrete BVP systems: the full Hindmarsh-Rose flow and its fast
//! subsystem, time-rescaled to [0, 1].

use nalgebra::{DMatrix, DVector, Vector2, Vector3};

use super::mesh::BvpSystem;
use crate::model::{fast_jacobian, fast_rhs, hr_jacobian, hr_rhs, ModelParams};

/// Full model as a BVP system: du/ds = q[0] * f(u; b, I).
///
/// `q[0]` is always the time scale. `free_b` / `free_i` give the q-index
/// holding that parameter (the base value is used when absent). `n_globals`
/// may exceed the model's needs; trailing globals belong to the conditions
/// (homotopy levels and similar) and do not enter the flow.
#[derive(Debug, Clone)]
pub struct HrBvpSystem {
    pub base: ModelParams,
    pub free_b: Option<usize>,
    pub free_i: Option<usize>,
    pub n_globals: usize,
}

impl HrBvpSystem {
    pub fn fixed(base: ModelParams, n_globals: usize) -> Self {
        HrBvpSystem {
            base,
            free_b: None,
            free_i: None,
            n_globals,
        }
    }

    pub fn params(&self, q: &DVector<f64>) -> ModelParams {
        let mut p = self.base;
        if let Some(k) = self.free_b {
            p.b = q[k];
        }
        if let Some(k) = self.free_i {
            p.i = q[k];
        }
        p
    }
}

impl BvpSystem for HrBvpSystem {
    fn dim(&self) -> usize {
        3
    }

    fn n_globals(&self) -> usize {
        self.n_globals
    }

    fn rhs(&self, _s: f64, u: &DVector<f64>, q: &DVector<f64>) -> DVector<f64> {
        let p = self.params(q);
        let v = Vector3::new(u[0], u[1], u[2]);
        let f = hr_rhs(&v, &p) * q[0];
        DVector::from_column_slice(f.as_slice())
    }

    fn jac_u(&self, _s: f64, u: &DVector<f64>, q: &DVector<f64>) -> DMatrix<f64> {
        let p = self.params(q);
        let v = Vector3::new(u[0], u[1], u[2]);
        let j = hr_jacobian(&v, &p) * q[0];
        DMatrix::from_column_slice(3, 3, j.as_slice())
    }

    fn jac_q(&self, _s: f64, u: &DVector<f64>, q: &DVector<f64>) -> DMatrix<f64> {
        let p = self.params(q);
        let v = Vector3::new(u[0], u[1], u[2]);
        let mut m = DMatrix::zeros(3, self.n_globals);
        let f = hr_rhs(&v, &p);
        for r in 0..3 {
            m[(r, 0)] = f[r];
        }
        if let Some(k) = self.free_b {
            m[(0, k)] = q[0] * u[0] * u[0];
        }
        if let Some(k) = self.free_i {
            m[(0, k)] = q[0];
        }
        m
    }
}

/// Fast subsystem (x, y) with frozen z: du/ds = q[0] * f_fast(u; z).
#[derive(Debug, Clone)]
pub struct FastBvpSystem {
    pub base: ModelParams,
    pub z_base: f64,
    /// q-index of z when it is a free global.
    pub free_z: Option<usize>,
    pub n_globals: usize,
}

impl FastBvpSystem {
    fn z(&self, q: &DVector<f64>) -> f64 {
        self.free_z.map(|k| q[k]).unwrap_or(self.z_base)
    }
}

impl BvpSystem for FastBvpSystem {
    fn dim(&self) -> usize {
        2
    }

    fn n_globals(&self) -> usize {
        self.n_globals
    }

    fn rhs(&self, _s: f64, u: &DVector<f64>, q: &DVector<f64>) -> DVector<f64> {
        let v = Vector2::new(u[0], u[1]);
        let f = fast_rhs(&v, self.z(q), &self.base) * q[0];
        DVector::from_column_slice(f.as_slice())
    }

    fn jac_u(&self, _s: f64, u: &DVector<f64>, q: &DVector<f64>) -> DMatrix<f64> {
        let v = Vector2::new(u[0], u[1]);
        let j = fast_jacobian(&v, &self.base) * q[0];
        DMatrix::from_column_slice(2, 2, j.as_slice())
    }

    fn jac_q(&self, _s: f64, u: &DVector<f64>, q: &DVector<f64>) -> DMatrix<f64> {
        let v = Vector2::new(u[0], u[1]);
        let mut m = DMatrix::zeros(2, self.n_globals);
        let f = fast_rhs(&v, self.z(q), &self.base);
        m[(0, 0)] = f[0];
        m[(1, 0)] = f[1];
        if let Some(k) = self.free_z {
            // df/dz = (-1, 0).
            m[(0, k)] = -q[0];
        }
        m
    }
}

/// Closure-backed system for tests and synthetic verification problems.
pub struct ClosureSystem<F, J> {
    pub dim: usize,
    pub n_globals: usize,
    /// Unscaled vector field f(u, q).
    pub f: F,
    /// Unscaled Jacobian df/du.
    pub jac: J,
}

impl<F, J> BvpSystem for ClosureSystem<F, J>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64>,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn n_globals(&self) -> usize {
        self.n_globals
    }

    fn rhs(&self, _s: f64, u: &DVector<f64>, q: &DVector<f64>) -> DVector<f64> {
        (self.f)(u, q) * q[0]
    }

    fn jac_u(&self, _s: f64, u: &DVector<f64>, q: &DVector<f64>) -> DMatrix<f64> {
        (self.jac)(u, q) * q[0]
    }

    fn jac_q(&self, _s: f64, u: &DVector<f64>, q: &DVector<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.n_globals);
        let f = (self.f)(u, q);
        for r in 0..self.dim {
            m[(r, 0)] = f[r];
        }
        // Other globals by finite differences on the unscaled field.
        for k in 1..self.n_globals {
            let h = 1e-7 * (1.0 + q[k].abs());
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[k] += h;
            qm[k] -= h;
            let col = ((self.f)(u, &qp) - (self.f)(u, &qm)) * (q[0] / (2.0 * h));
            for r in 0..self.dim {
                m[(r, k)] = col[r];
            }
        }
        m
    }
}
