//! Dense convex QPs over the nonnegative orthant with linear equalities:
//!
//! ```text
//! minimize   1/2 x^T M x - h^T x
//! subject to x >= 0,  E x = e
//! ```
//!
//! `M` only needs to be positive semidefinite. The solver is a primal
//! active-set method whose working set holds the bounds `x_i = 0`; each
//! iteration minimises over the null space of the free equality block, and
//! falls back to a descent ray inside the null space of the reduced Hessian
//! when that subproblem is unbounded. A phase-1 nonnegative least-squares
//! solve of `E x = e` supplies the starting point.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// KKT residual (scaled by the gradient magnitude) accepted at termination.
pub const KKT_TOL: f64 = 1e-9;
/// Maximum equality residual accepted from phase 1.
pub const FEASIBILITY_TOL: f64 = 1e-8;
/// Rows of `E` whose pivoted residual falls below this (relative) are dropped as dependent.
pub const ROW_DEPENDENCE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexQp {
    m: DMatrix<f64>,
    h: DVector<f64>,
    e: DMatrix<f64>,
    rhs: DVector<f64>,
}

impl SimplexQp {
    pub fn new(m: DMatrix<f64>, h: DVector<f64>, e: DMatrix<f64>, rhs: DVector<f64>) -> Result<Self> {
        let d = h.len();
        if m.nrows() != d || m.ncols() != d {
            return Err(Error::Dimension(format!(
                "M is {}x{}, h has length {d}",
                m.nrows(),
                m.ncols()
            )));
        }
        if e.ncols() != d || e.nrows() != rhs.len() {
            return Err(Error::Dimension(format!(
                "E is {}x{}, e has length {}, expected {d} columns",
                e.nrows(),
                e.ncols(),
                rhs.len()
            )));
        }
        let scale = m.amax().max(1.0);
        if (&m - m.transpose()).amax() > 1e-10 * scale {
            return Err(Error::Dimension("M is not symmetric".into()));
        }
        Ok(Self {
            m: linalg::symmetrize(&m),
            h,
            e,
            rhs,
        })
    }

    /// Single constraint `sum_i x_i = 1`.
    pub fn on_simplex(m: DMatrix<f64>, h: DVector<f64>) -> Result<Self> {
        let d = h.len();
        Self::new(
            m,
            h,
            DMatrix::from_element(1, d, 1.0),
            DVector::from_element(1, 1.0),
        )
    }

    pub fn dim(&self) -> usize {
        self.h.len()
    }

    pub fn m(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn h(&self) -> &DVector<f64> {
        &self.h
    }

    pub fn e(&self) -> &DMatrix<f64> {
        &self.e
    }

    pub fn rhs(&self) -> &DVector<f64> {
        &self.rhs
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.m * x)) - self.h.dot(x)
    }

    /// Same problem with variables reordered so that old index `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let d = self.dim();
        let mut m = DMatrix::zeros(d, d);
        let mut h = DVector::zeros(d);
        let mut e = DMatrix::zeros(self.e.nrows(), d);
        for i in 0..d {
            h[perm[i]] = self.h[i];
            e.set_column(perm[i], &self.e.column(i));
            for j in 0..d {
                m[(perm[i], perm[j])] = self.m[(i, j)];
            }
        }
        Self {
            m,
            h,
            e,
            rhs: self.rhs.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub kkt_residual: f64,
    pub iterations: usize,
    /// Indices held at zero by the final working set, ascending.
    pub active_set: Vec<usize>,
}

/// Keeps a maximal independent subset of the rows of `e` (QR with row pivoting).
fn independent_rows(e: &DMatrix<f64>, rhs: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let p = e.nrows();
    let mut residual: Vec<DVector<f64>> = (0..p).map(|r| e.row(r).transpose()).collect();
    let top = residual.iter().map(|r| r.norm()).fold(0.0, f64::max);
    let mut remaining: Vec<usize> = (0..p).collect();
    let mut keep = Vec::new();
    while !remaining.is_empty() {
        let (pos, &best) = remaining
            .iter()
            .enumerate()
            .max_by(|a, b| {
                residual[*a.1]
                    .norm()
                    .total_cmp(&residual[*b.1].norm())
                    .then(b.1.cmp(a.1))
            })
            .expect("nonempty");
        let norm = residual[best].norm();
        if norm <= ROW_DEPENDENCE_TOL * top.max(f64::MIN_POSITIVE) {
            break;
        }
        remaining.swap_remove(pos);
        let q = &residual[best] / norm;
        for &r in &remaining {
            let c = residual[r].dot(&q);
            residual[r] -= &q * c;
        }
        keep.push(best);
    }
    keep.sort_unstable();
    let mut out = DMatrix::zeros(keep.len(), e.ncols());
    for (k, &r) in keep.iter().enumerate() {
        out.set_row(k, &e.row(r));
    }
    let rhs = DVector::from_iterator(keep.len(), keep.iter().map(|&r| rhs[r]));
    (out, rhs)
}

fn select_cols(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |r, c| m[(r, cols[c])])
}

fn select_square(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])])
}

enum Direction {
    Zero,
    Newton(DVector<f64>),
    Ray(DVector<f64>),
}

struct Core<'a> {
    m: &'a DMatrix<f64>,
    h: &'a DVector<f64>,
    e: &'a DMatrix<f64>,
    scale: f64,
}

impl Core<'_> {
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.m * x - self.h
    }

    /// Minimises the quadratic model over the free variables subject to `E_F p = 0`.
    fn direction(&self, free: &[usize], g: &DVector<f64>) -> Direction {
        if free.is_empty() {
            return Direction::Zero;
        }
        let e_f = select_cols(self.e, free);
        let z = linalg::null_space(&e_f, 1e-10);
        if z.ncols() == 0 {
            return Direction::Zero;
        }
        let m_ff = select_square(self.m, free);
        let g_f = DVector::from_iterator(free.len(), free.iter().map(|&i| g[i]));
        let hess = linalg::symmetrize(&(z.transpose() * &m_ff * &z));
        let rg = z.transpose() * &g_f;
        let eig = hess.symmetric_eigen();
        let lmax = eig.eigenvalues.amax();
        let tau = 1e-11 * lmax.max(1e-300);
        let coeffs = eig.eigenvectors.transpose() * &rg;
        let mut newton = DVector::zeros(coeffs.len());
        let mut ray = DVector::zeros(coeffs.len());
        let mut ray_norm = 0.0_f64;
        for k in 0..coeffs.len() {
            if eig.eigenvalues[k] > tau {
                newton[k] = -coeffs[k] / eig.eigenvalues[k];
            } else {
                ray[k] = -coeffs[k];
                ray_norm = ray_norm.max(coeffs[k].abs());
            }
        }
        if ray_norm > 1e-12 * self.scale {
            Direction::Ray(z * (&eig.eigenvectors * ray))
        } else {
            Direction::Newton(z * (&eig.eigenvectors * newton))
        }
    }

    /// Equality multipliers from the free rows and the bound multipliers `g - E^T nu`.
    fn multipliers(&self, free: &[usize], g: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let nu = if self.e.nrows() == 0 || free.is_empty() {
            DVector::zeros(self.e.nrows())
        } else {
            let e_f = select_cols(self.e, free);
            let g_f = DVector::from_iterator(free.len(), free.iter().map(|&i| g[i]));
            linalg::lstsq(&e_f.transpose(), &g_f, 1e-12)
        };
        let mu = g - self.e.transpose() * &nu;
        (nu, mu)
    }

    fn run(&self, mut x: DVector<f64>, cap: usize) -> Result<(DVector<f64>, Vec<bool>, usize)> {
        let d = x.len();
        let mut fixed: Vec<bool> = x.iter().map(|&v| v <= 0.0).collect();
        x.iter_mut().for_each(|v| *v = v.max(0.0));
        let mu_tol = 1e-11 * self.scale;
        // Set after an unblocked Newton step: x already minimises over the working set.
        let mut settled = false;
        for iter in 0..cap {
            let free: Vec<usize> = (0..d).filter(|&i| !fixed[i]).collect();
            let g = self.gradient(&x);
            let xnorm = x.amax();
            let direction = if settled {
                Direction::Zero
            } else {
                self.direction(&free, &g)
            };
            settled = false;
            let (p, ray) = match direction {
                Direction::Zero => (None, false),
                Direction::Newton(p) if p.amax() <= 1e-14 * (1.0 + xnorm) => (None, false),
                Direction::Newton(p) => (Some(p), false),
                Direction::Ray(p) => (Some(p), true),
            };
            match p {
                None => {
                    let (_, mu) = self.multipliers(&free, &g);
                    let mut worst: Option<usize> = None;
                    for i in (0..d).filter(|&i| fixed[i]) {
                        if mu[i] < -mu_tol && worst.is_none_or(|w| mu[i] < mu[w]) {
                            worst = Some(i);
                        }
                    }
                    match worst {
                        Some(i) => fixed[i] = false,
                        None => return Ok((x, fixed, iter + 1)),
                    }
                }
                Some(p_f) => {
                    let mut step = if ray { f64::INFINITY } else { 1.0 };
                    let mut blocking = None;
                    for (k, &i) in free.iter().enumerate() {
                        if p_f[k] < 0.0 {
                            let ratio = x[i] / -p_f[k];
                            if ratio < step {
                                step = ratio;
                                blocking = Some(i);
                            }
                        }
                    }
                    if !step.is_finite() {
                        return Err(Error::Unbounded);
                    }
                    #[cfg(debug_assertions)]
                    let before = 0.5 * x.dot(&(self.m * &x)) - self.h.dot(&x);
                    for (k, &i) in free.iter().enumerate() {
                        x[i] = (x[i] + step * p_f[k]).max(0.0);
                    }
                    match blocking {
                        Some(b) => {
                            x[b] = 0.0;
                            fixed[b] = true;
                        }
                        None => settled = !ray,
                    }
                    #[cfg(debug_assertions)]
                    {
                        let after = 0.5 * x.dot(&(self.m * &x)) - self.h.dot(&x);
                        debug_assert!(
                            after <= before + 1e-9 * self.scale * (1.0 + x.amax()),
                            "active-set step increased the objective: {before} -> {after}"
                        );
                    }
                }
            }
        }
        Err(Error::MaxIterations(cap))
    }
}

fn scale_of(m: &DMatrix<f64>, h: &DVector<f64>) -> f64 {
    1.0 + m.amax() + h.amax()
}

/// Nonnegative point with `E x = e`, or `Infeasible`.
fn phase_one(e: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let d = e.ncols();
    if e.nrows() == 0 {
        return Ok(DVector::zeros(d));
    }
    let m = e.transpose() * e;
    let h = e.transpose() * rhs;
    let none = DMatrix::zeros(0, d);
    let core = Core {
        m: &m,
        h: &h,
        e: &none,
        scale: scale_of(&m, &h),
    };
    let (mut x, _, _) = core.run(DVector::zeros(d), 50 * d.max(1))?;
    // Polish on the support so the equalities hold to rounding.
    let support: Vec<usize> = (0..d).filter(|&i| x[i] > 0.0).collect();
    if !support.is_empty() {
        let e_s = select_cols(e, &support);
        let r = rhs - e * &x;
        let delta = linalg::lstsq(&e_s, &r, 1e-12);
        for (k, &i) in support.iter().enumerate() {
            x[i] = (x[i] + delta[k]).max(0.0);
        }
    }
    let resid = (e * &x - rhs).amax();
    if resid >= FEASIBILITY_TOL * (1.0 + rhs.amax()) {
        return Err(Error::Infeasible(resid));
    }
    Ok(x)
}

/// Solves `qp`; see the module docs for the method.
pub fn solve(qp: &SimplexQp) -> Result<QpSolution> {
    let d = qp.dim();
    let (e, rhs) = independent_rows(&qp.e, &qp.rhs);
    let x0 = phase_one(&e, &rhs)?;
    // Dropped rows must still hold at the phase-1 point.
    let full_resid = if qp.e.nrows() > 0 {
        (&qp.e * &x0 - &qp.rhs).amax()
    } else {
        0.0
    };
    if full_resid >= FEASIBILITY_TOL * (1.0 + qp.rhs.amax()) {
        return Err(Error::Infeasible(full_resid));
    }
    let core = Core {
        m: &qp.m,
        h: &qp.h,
        e: &e,
        scale: scale_of(&qp.m, &qp.h),
    };
    let cap = 50 * d.max(1);
    let (mut x, mut fixed, mut iterations) = core.run(x0, cap)?;
    let mut residual = kkt_residual(&core, &e, &rhs, &x, &fixed);
    if residual > KKT_TOL {
        // One more pass from the current point usually cleans up rounding in the free block.
        let (x2, f2, it2) = core.run(x.clone(), cap)?;
        let r2 = kkt_residual(&core, &e, &rhs, &x2, &f2);
        iterations += it2;
        if r2 < residual {
            x = x2;
            fixed = f2;
            residual = r2;
        }
    }
    if residual > KKT_TOL {
        return Err(Error::KktNotSatisfied(residual));
    }
    Ok(QpSolution {
        x,
        kkt_residual: residual,
        iterations,
        active_set: (0..d).filter(|&i| fixed[i]).collect(),
    })
}

fn kkt_residual(
    core: &Core<'_>,
    e: &DMatrix<f64>,
    rhs: &DVector<f64>,
    x: &DVector<f64>,
    fixed: &[bool],
) -> f64 {
    let d = x.len();
    let free: Vec<usize> = (0..d).filter(|&i| !fixed[i]).collect();
    let g = core.gradient(x);
    let (_, mu) = core.multipliers(&free, &g);
    let grad_scale = 1.0 + core.m.amax() * x.amax() + core.h.amax();
    let mut r: f64 = 0.0;
    for i in 0..d {
        if fixed[i] {
            r = r.max((-mu[i]).max(0.0) / grad_scale);
        } else {
            r = r.max(mu[i].abs() / grad_scale);
        }
        r = r.max((-x[i]).max(0.0));
        r = r.max((x[i] * mu[i]).abs() / grad_scale);
    }
    if e.nrows() > 0 {
        r = r.max((e * x - rhs).amax() / (1.0 + rhs.amax()));
    }
    r
}

/// Outcome of the unconstrained normal-equation shortcut.
#[derive(Debug, Clone, PartialEq)]
pub enum NormalEquations {
    /// `W^{-1} 1` normalised to sum 1; all entries positive.
    Solved(DVector<f64>),
    /// `W^{-1} 1` has a nonpositive entry; the caller must solve the constrained QP.
    NeedsQp,
}

/// Largest condition number of `W` accepted by [`solve_normal_equations`].
pub const MAX_CONDITION: f64 = 1e12;

pub fn solve_normal_equations(w: &DMatrix<f64>) -> Result<NormalEquations> {
    let n = w.nrows();
    if w.ncols() != n || n == 0 {
        return Err(Error::Dimension(format!(
            "W must be square and nonempty, got {}x{}",
            w.nrows(),
            w.ncols()
        )));
    }
    let inv_cond = linalg::inverse_condition(w);
    if inv_cond <= 1.0 / MAX_CONDITION {
        return Err(Error::SingularW(if inv_cond > 0.0 {
            1.0 / inv_cond
        } else {
            f64::INFINITY
        }));
    }
    let x = w
        .clone()
        .lu()
        .solve(&DVector::from_element(n, 1.0))
        .ok_or(Error::SingularW(f64::INFINITY))?;
    if x.iter().all(|&v| v > 0.0) {
        let s = x.sum();
        Ok(NormalEquations::Solved(x / s))
    } else {
        Ok(NormalEquations::NeedsQp)
    }
}

/// Stability bound `eps / (lambda - eps) * (1 + ||x||)` for the minimiser of a
/// perturbed strictly convex QP, with `lambda = lambda_min(M)` and
/// `eps = max(||M_hat - M||_2, ||h_hat - h||_2)`.
pub fn perturbation_bound(
    m: &DMatrix<f64>,
    h: &DVector<f64>,
    m_hat: &DMatrix<f64>,
    h_hat: &DVector<f64>,
    x: &DVector<f64>,
) -> Result<f64> {
    let lambda = linalg::lambda_min_sym(m);
    let epsilon = linalg::norm2(&(m_hat - m)).max((h_hat - h).norm());
    if epsilon >= lambda {
        return Err(Error::BoundInapplicable { epsilon, lambda });
    }
    Ok(epsilon / (lambda - epsilon) * (1.0 + x.norm()))
}
