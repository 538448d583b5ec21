//! Dense strictly convex quadratic programming with the dual active-set method
//! of Goldfarb and Idnani.
//!
//! ```text
//!     minimize    1/2 x' H x + f' x
//!     subject to  A x <= b
//! ```
//!
//! The method starts from the unconstrained minimizer and adds violated
//! constraints one at a time while keeping dual feasibility, so no feasible
//! starting point is needed and infeasibility is detected exactly.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// Quadratic program in inequality form.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// One multiplier per row of `A`; zero for inactive rows.
    pub multipliers: DVector<f64>,
    pub active_set: Vec<usize>,
    pub objective: f64,
    pub iterations: usize,
}

/// Infinity-norm KKT residuals of a candidate primal/dual pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.dual).max(self.complementarity)
    }
}

impl QuadraticProgram {
    pub fn new(hessian: DMatrix<f64>, gradient: DVector<f64>, a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let n = gradient.len();
        if hessian.shape() != (n, n) {
            return Err(Error::Dimension(format!("hessian is {:?}, expected {n}x{n}", hessian.shape())));
        }
        if a.ncols() != n || a.nrows() != b.len() {
            return Err(Error::Dimension(format!("constraints are {:?} with {} bounds", a.shape(), b.len())));
        }
        Ok(Self { hessian, gradient, a, b })
    }

    pub fn num_vars(&self) -> usize {
        self.gradient.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.b.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.gradient.dot(x)
    }

    pub fn kkt_residuals(&self, x: &DVector<f64>, lambda: &DVector<f64>) -> KktResiduals {
        let grad = &self.hessian * x + &self.gradient + self.a.transpose() * lambda;
        let slack = &self.b - &self.a * x;
        KktResiduals {
            stationarity: grad.amax(),
            primal: slack.iter().map(|s| (-s).max(0.0)).fold(0.0, f64::max),
            dual: lambda.iter().map(|l| (-l).max(0.0)).fold(0.0, f64::max),
            complementarity: lambda.iter().zip(slack.iter()).map(|(l, s)| (l * s).abs()).fold(0.0, f64::max),
        }
    }

    /// Solves from scratch.
    pub fn solve(&self) -> Result<QpSolution> {
        self.solve_with_hint(&[])
    }

    /// Solves, preferring the rows in `hint` (e.g. the previous active set)
    /// when choosing among violated constraints. The optimum does not depend
    /// on the hint; only the path to it does.
    pub fn solve_with_hint(&self, hint: &[usize]) -> Result<QpSolution> {
        GoldfarbIdnani::new(self)?.run(hint)
    }
}

struct GoldfarbIdnani<'a> {
    qp: &'a QuadraticProgram,
    n: usize,
    x: DVector<f64>,
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    active: Vec<usize>,
    u: Vec<f64>,
    row_norms: Vec<f64>,
}

const FEAS_TOL: f64 = 1e-11;
const DEP_TOL: f64 = 1e-12;

impl<'a> GoldfarbIdnani<'a> {
    fn new(qp: &'a QuadraticProgram) -> Result<Self> {
        let n = qp.num_vars();
        let h = (&qp.hessian + qp.hessian.transpose()) * 0.5;
        let chol = Cholesky::new(h).ok_or_else(|| Error::IllConditioned("QP Hessian is not positive definite".into()))?;
        let x = -chol.solve(&qp.gradient);
        let lt = chol.l().transpose();
        let j = lt
            .solve_upper_triangular(&DMatrix::identity(n, n))
            .ok_or_else(|| Error::IllConditioned("singular Cholesky factor".into()))?;
        let row_norms = (0..qp.num_constraints()).map(|i| qp.a.row(i).norm().max(1e-300)).collect();
        Ok(Self { qp, n, x, j, r: DMatrix::zeros(n, n), active: Vec::new(), u: Vec::new(), row_norms })
    }

    /// Scaled slack of row `i`; negative when violated.
    fn slack(&self, i: usize) -> f64 {
        self.qp.b[i] - self.qp.a.row(i).dot(&self.x.transpose())
    }

    fn most_violated(&self, hint: &[usize]) -> Option<usize> {
        let tol = |i: usize| FEAS_TOL * (1.0 + self.qp.b[i].abs() / self.row_norms[i]);
        let violated = |i: usize| !self.active.contains(&i) && self.slack(i) / self.row_norms[i] < -tol(i);
        if let Some(&i) = hint.iter().find(|&&i| i < self.qp.num_constraints() && violated(i)) {
            return Some(i);
        }
        (0..self.qp.num_constraints()).filter(|&i| violated(i)).min_by(|&a, &b| {
            let sa = self.slack(a) / self.row_norms[a];
            let sb = self.slack(b) / self.row_norms[b];
            sa.total_cmp(&sb)
        })
    }

    fn run(mut self, hint: &[usize]) -> Result<QpSolution> {
        let max_iter = 50 * (self.n + self.qp.num_constraints()) + 100;
        let mut iterations = 0;
        while let Some(p) = self.most_violated(hint) {
            // normal of the row in the `n' x >= c` convention
            let np: DVector<f64> = -self.qp.a.row(p).transpose();
            let mut u_plus = self.u.clone();
            u_plus.push(0.0);
            loop {
                iterations += 1;
                if iterations > max_iter {
                    return Err(Error::IllConditioned("active-set iteration limit reached".into()));
                }
                let q = self.active.len();
                let d = self.j.transpose() * &np;
                let d2 = d.rows(q, self.n - q);
                let z = self.j.columns(q, self.n - q) * d2;
                let dep = d2.norm() <= DEP_TOL * d.norm().max(1e-300);
                let r_dir = if q > 0 {
                    self.r
                        .view((0, 0), (q, q))
                        .solve_upper_triangular(&d.rows(0, q).into_owned())
                        .ok_or_else(|| Error::IllConditioned("singular active-set factor".into()))?
                } else {
                    DVector::zeros(0)
                };
                let mut t1 = f64::INFINITY;
                let mut drop_at = None;
                for k in 0..q {
                    if r_dir[k] > 0.0 {
                        let t = u_plus[k] / r_dir[k];
                        if t < t1 {
                            t1 = t;
                            drop_at = Some(k);
                        }
                    }
                }
                let t2 = if dep { f64::INFINITY } else { -self.slack(p) / z.dot(&np) };
                let t = t1.min(t2);
                if !t.is_finite() {
                    return Err(Error::Infeasible);
                }
                for k in 0..q {
                    u_plus[k] -= t * r_dir[k];
                }
                u_plus[q] += t;
                if t2.is_finite() {
                    self.x += &z * t;
                }
                if t2 <= t1 {
                    self.u = u_plus;
                    self.active.push(p);
                    self.add_column(d);
                    break;
                }
                let k = drop_at.expect("partial step has a blocking constraint");
                u_plus.remove(k);
                self.active.remove(k);
                self.drop_column(k);
                self.u = u_plus[..self.active.len()].to_vec();
            }
        }
        let mut multipliers = DVector::zeros(self.qp.num_constraints());
        for (&i, &ui) in self.active.iter().zip(&self.u) {
            multipliers[i] = ui.max(0.0);
        }
        let objective = self.qp.objective(&self.x);
        Ok(QpSolution { x: self.x, multipliers, active_set: self.active, objective, iterations })
    }

    fn rotate_columns(&mut self, a: usize, b: usize, c: f64, s: f64) {
        for k in 0..self.n {
            let (ja, jb) = (self.j[(k, a)], self.j[(k, b)]);
            self.j[(k, a)] = c * ja + s * jb;
            self.j[(k, b)] = -s * ja + c * jb;
        }
    }

    fn add_column(&mut self, mut d: DVector<f64>) {
        let q = self.active.len() - 1;
        for jj in (q + 1..self.n).rev() {
            let (a, b) = (d[jj - 1], d[jj]);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            d[jj - 1] = h;
            d[jj] = 0.0;
            self.rotate_columns(jj - 1, jj, c, s);
        }
        for i in 0..=q {
            self.r[(i, q)] = d[i];
        }
    }

    /// Removes column `k` of `R` (the active set is already shortened) and
    /// restores the triangular form.
    fn drop_column(&mut self, k: usize) {
        let q = self.active.len() + 1;
        for col in k..q - 1 {
            for row in 0..q {
                self.r[(row, col)] = self.r[(row, col + 1)];
            }
        }
        for row in 0..q {
            self.r[(row, q - 1)] = 0.0;
        }
        for jj in k..q - 1 {
            let (a, b) = (self.r[(jj, jj)], self.r[(jj + 1, jj)]);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            for col in jj..q - 1 {
                let (ra, rb) = (self.r[(jj, col)], self.r[(jj + 1, col)]);
                self.r[(jj, col)] = c * ra + s * rb;
                self.r[(jj + 1, col)] = -s * ra + c * rb;
            }
            self.r[(jj + 1, jj)] = 0.0;
            self.rotate_columns(jj, jj + 1, c, s);
        }
    }
}
