//! Problem instances: concave utilities under linear equality constraints.
//!
//! An instance is
//!
//! ```text
//!   maximize   sum_i U_i(x_i)
//!   subject to A x = b,        A: N x M real, N < M
//! ```
//!
//! with every `U_i` strictly concave. Validation checks the standing
//! assumptions (strict negative curvature, full row rank, more variables than
//! constraints) and records the per-utility curvature bounds plus the step-size
//! cap `min_i 1/|u_min_i|` that the dynamics must respect. The optimum
//! `(x*, lambda*)` is the reference point every error measurement uses: for
//! quadratic utilities it comes from one exact KKT linear solve, otherwise from
//! damped Newton iterations on the KKT residual.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{Error, Result};

/// Default residual tolerance for the direct quadratic KKT solve.
pub const DEFAULT_TOL_QUADRATIC: f64 = 1e-10;
/// Default residual tolerance for the Newton path.
pub const DEFAULT_TOL_NEWTON: f64 = 1e-8;
/// Newton iteration cap.
pub const NEWTON_MAX_ITERS: usize = 200;
/// Smallest damping factor tried before Newton gives up (2^-20).
pub const NEWTON_MIN_STEP: f64 = 1.0 / (1 << 20) as f64;
/// Default number of samples used to audit declared curvature bounds.
pub const CURVATURE_GRID_POINTS: usize = 512;

/// Scalar derivative evaluator for general concave utilities.
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// One agent's utility function.
#[derive(Clone)]
pub enum Utility {
    /// `U(x) = -(a/2) x^2 + c x + f` with `a > 0`; curvature is exactly `-a`.
    Quadratic { a: f64, c: f64, f: f64 },
    /// A general strictly concave utility given by its first two derivatives
    /// plus declared curvature bounds `u_min <= U'' <= u_max < 0`, audited by
    /// sampling over `domain`.
    GeneralConcave {
        du: ScalarFn,
        d2u: ScalarFn,
        u_min: f64,
        u_max: f64,
        domain: (f64, f64),
    },
}

impl fmt::Debug for Utility {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Utility::Quadratic { a, c, f } => fm
                .debug_struct("Quadratic")
                .field("a", a)
                .field("c", c)
                .field("f", f)
                .finish(),
            Utility::GeneralConcave {
                u_min,
                u_max,
                domain,
                ..
            } => fm
                .debug_struct("GeneralConcave")
                .field("u_min", u_min)
                .field("u_max", u_max)
                .field("domain", domain)
                .finish(),
        }
    }
}

impl Utility {
    /// Quadratic utility `-(a/2) x^2 + c x + f`.
    pub fn quadratic(a: f64, c: f64, f: f64) -> Self {
        Utility::Quadratic { a, c, f }
    }

    /// General concave utility from derivative evaluators and declared bounds.
    pub fn general_concave(
        du: ScalarFn,
        d2u: ScalarFn,
        u_min: f64,
        u_max: f64,
        domain: (f64, f64),
    ) -> Self {
        Utility::GeneralConcave {
            du,
            d2u,
            u_min,
            u_max,
            domain,
        }
    }

    /// First derivative `U'(x)`.
    pub fn du(&self, x: f64) -> f64 {
        match self {
            Utility::Quadratic { a, c, .. } => -a * x + c,
            Utility::GeneralConcave { du, .. } => du(x),
        }
    }

    /// Second derivative `U''(x)`.
    pub fn d2u(&self, x: f64) -> f64 {
        match self {
            Utility::Quadratic { a, .. } => -a,
            Utility::GeneralConcave { d2u, .. } => d2u(x),
        }
    }

    /// Declared curvature bounds `(u_min, u_max)`; for quadratics both equal `-a`.
    pub fn curvature_bounds(&self) -> (f64, f64) {
        match self {
            Utility::Quadratic { a, .. } => (-a, -a),
            Utility::GeneralConcave { u_min, u_max, .. } => (*u_min, *u_max),
        }
    }

    fn is_quadratic(&self) -> bool {
        matches!(self, Utility::Quadratic { .. })
    }
}

/// An unvalidated problem instance.
#[derive(Debug, Clone)]
pub struct NumProblem {
    utilities: Vec<Utility>,
    a_matrix: DMatrix<f64>,
    b: DVector<f64>,
}

impl NumProblem {
    /// Builds an instance, checking only that the shapes agree
    /// (`A` is `N x M`, `b` has length `N`, one utility per column of `A`).
    pub fn new(utilities: Vec<Utility>, a_matrix: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a_matrix.ncols() != utilities.len() {
            return Err(Error::Dimension(format!(
                "constraint matrix has {} columns but {} utilities were given",
                a_matrix.ncols(),
                utilities.len()
            )));
        }
        if a_matrix.nrows() != b.len() {
            return Err(Error::Dimension(format!(
                "constraint matrix has {} rows but b has length {}",
                a_matrix.nrows(),
                b.len()
            )));
        }
        Ok(NumProblem {
            utilities,
            a_matrix,
            b,
        })
    }

    /// Number of decision variables (agents).
    pub fn m(&self) -> usize {
        self.utilities.len()
    }

    /// Number of equality constraints (network nodes).
    pub fn n(&self) -> usize {
        self.b.len()
    }

    pub fn utilities(&self) -> &[Utility] {
        &self.utilities
    }

    pub fn a_matrix(&self) -> &DMatrix<f64> {
        &self.a_matrix
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    /// Parses an instance from the structured problem-file format.
    ///
    /// ```toml
    /// M = 2
    /// N = 1
    /// A = [1.0, 1.0]   # row-major, N*M entries
    /// b = [2.0]
    ///
    /// [utility.0]
    /// a = 1.0
    /// c = 0.0
    /// f = 0.0
    /// ```
    ///
    /// Utility tables must cover exactly the indices `0..M-1`; unknown keys are
    /// rejected. Only quadratic utilities are expressible in files.
    pub fn from_toml_str(src: &str) -> Result<Self> {
        let file: ProblemFile = toml::from_str(src).map_err(|e| toml_error(src, &e))?;
        file.build()
    }

    /// Reads and parses a problem file.
    pub fn from_path(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)?;
        Self::from_toml_str(&src)
    }
}

/// Converts a toml deserialization error into a line-numbered parse error.
pub(crate) fn toml_error(src: &str, e: &toml::de::Error) -> Error {
    let line = e
        .span()
        .map(|span| 1 + src[..span.start.min(src.len())].matches('\n').count())
        .unwrap_or(0);
    Error::Parse {
        line,
        message: e.message().to_string(),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemFile {
    #[serde(rename = "M")]
    m: usize,
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "A")]
    a: Vec<f64>,
    b: Vec<f64>,
    utility: BTreeMap<String, UtilityFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct UtilityFile {
    a: f64,
    c: f64,
    f: f64,
}

impl ProblemFile {
    fn build(self) -> Result<NumProblem> {
        if self.a.len() != self.m * self.n {
            return Err(Error::Dimension(format!(
                "A has {} entries, expected N*M = {}",
                self.a.len(),
                self.m * self.n
            )));
        }
        if self.b.len() != self.n {
            return Err(Error::Dimension(format!(
                "b has {} entries, expected N = {}",
                self.b.len(),
                self.n
            )));
        }
        let mut utilities = Vec::with_capacity(self.m);
        for i in 0..self.m {
            let key = i.to_string();
            let u = self.utility.get(&key).ok_or_else(|| {
                Error::Param(format!("missing [utility.{key}] table (indices are 0-based)"))
            })?;
            utilities.push(Utility::quadratic(u.a, u.c, u.f));
        }
        if self.utility.len() != self.m {
            let extra: Vec<_> = self
                .utility
                .keys()
                .filter(|k| k.parse::<usize>().map_or(true, |i| i >= self.m))
                .cloned()
                .collect();
            return Err(Error::Param(format!(
                "utility tables {extra:?} do not match any agent index"
            )));
        }
        let a_matrix = DMatrix::from_row_slice(self.n, self.m, &self.a);
        NumProblem::new(utilities, a_matrix, DVector::from_vec(self.b))
    }
}

/// A problem that passed [`validate`]: curvature bounds audited, rank checked.
#[derive(Debug, Clone)]
pub struct ValidatedProblem {
    problem: NumProblem,
    u_min: Vec<f64>,
    u_max: Vec<f64>,
    step_cap: f64,
}

impl ValidatedProblem {
    pub fn problem(&self) -> &NumProblem {
        &self.problem
    }

    pub fn m(&self) -> usize {
        self.problem.m()
    }

    pub fn n(&self) -> usize {
        self.problem.n()
    }

    pub fn utilities(&self) -> &[Utility] {
        self.problem.utilities()
    }

    pub fn a_matrix(&self) -> &DMatrix<f64> {
        self.problem.a_matrix()
    }

    pub fn b(&self) -> &DVector<f64> {
        self.problem.b()
    }

    /// Per-utility curvature lower bounds (most negative second derivative).
    pub fn u_min(&self) -> &[f64] {
        &self.u_min
    }

    /// Per-utility curvature upper bounds (closest to zero, still negative).
    pub fn u_max(&self) -> &[f64] {
        &self.u_max
    }

    /// Largest admissible step size, `min_i 1/|u_min_i|`.
    pub fn step_cap(&self) -> f64 {
        self.step_cap
    }

    /// True when every utility is quadratic.
    pub fn is_quadratic(&self) -> bool {
        self.problem.utilities.iter().all(Utility::is_quadratic)
    }

    /// Quadratic coefficient vectors `(a, c)`; errors on general utilities.
    pub fn quadratic_coefficients(&self) -> Result<(DVector<f64>, DVector<f64>)> {
        let m = self.m();
        let mut a = DVector::zeros(m);
        let mut c = DVector::zeros(m);
        for (i, u) in self.utilities().iter().enumerate() {
            match u {
                Utility::Quadratic { a: ai, c: ci, .. } => {
                    a[i] = *ai;
                    c[i] = *ci;
                }
                Utility::GeneralConcave { .. } => return Err(Error::NotQuadratic),
            }
        }
        Ok((a, c))
    }
}

/// The reference optimum: the unique KKT point of the instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub x_star: DVector<f64>,
    pub lambda_star: DVector<f64>,
}

impl Optimum {
    /// Concatenated `(x*, lambda*)` in the order the dynamics use.
    pub fn y_star(&self) -> DVector<f64> {
        let mut y = DVector::zeros(self.x_star.len() + self.lambda_star.len());
        y.rows_mut(0, self.x_star.len()).copy_from(&self.x_star);
        y.rows_mut(self.x_star.len(), self.lambda_star.len())
            .copy_from(&self.lambda_star);
        y
    }
}

/// Checks the standing assumptions with the default curvature audit grid.
pub fn validate(problem: NumProblem) -> Result<ValidatedProblem> {
    validate_with_grid(problem, CURVATURE_GRID_POINTS)
}

/// Checks the standing assumptions, sampling general curvatures at
/// `grid_points` locations over each declared domain.
///
/// Rejects `N >= M`, rank-deficient `A`, and any curvature that is not
/// strictly negative or that escapes its declared bounds.
pub fn validate_with_grid(problem: NumProblem, grid_points: usize) -> Result<ValidatedProblem> {
    let (m, n) = (problem.m(), problem.n());
    if n >= m {
        return Err(Error::Dimension(format!(
            "need fewer constraints than variables, got N = {n} >= M = {m}"
        )));
    }
    if !problem.a_matrix.iter().all(|v| v.is_finite()) || !problem.b.iter().all(|v| v.is_finite())
    {
        return Err(Error::Numeric("constraint data"));
    }

    let svd_eps = rank_tolerance(&problem.a_matrix);
    let rank = problem.a_matrix.rank(svd_eps);
    if rank < n {
        return Err(Error::Rank { rank, rows: n });
    }

    let mut u_min = Vec::with_capacity(m);
    let mut u_max = Vec::with_capacity(m);
    for (i, u) in problem.utilities.iter().enumerate() {
        let (lo, hi) = u.curvature_bounds();
        if !(lo.is_finite() && hi.is_finite()) || lo > hi || hi >= 0.0 {
            return Err(Error::Curvature(format!(
                "utility {i}: declared curvature bounds [{lo}, {hi}] must satisfy lo <= hi < 0"
            )));
        }
        if let Utility::GeneralConcave { d2u, domain, .. } = u {
            let (dlo, dhi) = *domain;
            if !(dlo.is_finite() && dhi.is_finite()) || dlo >= dhi {
                return Err(Error::Param(format!(
                    "utility {i}: invalid curvature audit domain [{dlo}, {dhi}]"
                )));
            }
            let steps = grid_points.max(2);
            for g in 0..steps {
                let x = dlo + (dhi - dlo) * g as f64 / (steps - 1) as f64;
                let v = d2u(x);
                if !v.is_finite() || v < lo || v > hi {
                    return Err(Error::Curvature(format!(
                        "utility {i}: second derivative {v} at x = {x} escapes declared bounds [{lo}, {hi}]"
                    )));
                }
            }
        }
        u_min.push(lo);
        u_max.push(hi);
    }

    let step_cap = u_min.iter().map(|v| 1.0 / v.abs()).fold(f64::INFINITY, f64::min);
    Ok(ValidatedProblem {
        problem,
        u_min,
        u_max,
        step_cap,
    })
}

fn rank_tolerance(a: &DMatrix<f64>) -> f64 {
    let sigma_max = a.norm(); // Frobenius upper-bounds sigma_max; adequate for a tolerance scale
    f64::EPSILON * sigma_max.max(1.0) * a.nrows().max(a.ncols()) as f64
}

/// Computes the exact optimum of a validated instance.
///
/// Quadratic instances solve the KKT linear system
/// `[diag(a)  A^T; A  0] [x; lambda] = [c; b]` directly; general instances run
/// damped Newton on the KKT residual `F(x, lambda) = [U'(x) - A^T lambda; A x - b]`
/// until its infinity norm is at most `tol`.
pub fn solve_optimum(p: &ValidatedProblem, tol: f64) -> Result<Optimum> {
    if !(tol > 0.0) {
        return Err(Error::Param(format!("tolerance must be positive, got {tol}")));
    }
    let opt = if p.is_quadratic() {
        solve_quadratic(p)?
    } else {
        solve_newton(p, tol)?
    };
    let resid = kkt_residual(p, &opt);
    if !(resid <= tol) {
        return Err(Error::NoConvergence {
            iterations: 0,
            residual: resid,
        });
    }
    Ok(opt)
}

/// Infinity norm of the KKT residual at a candidate point.
pub fn kkt_residual(p: &ValidatedProblem, opt: &Optimum) -> f64 {
    let at_lambda = p.a_matrix().transpose() * &opt.lambda_star;
    let mut worst = 0.0f64;
    for (i, u) in p.utilities().iter().enumerate() {
        worst = worst.max((u.du(opt.x_star[i]) - at_lambda[i]).abs());
    }
    let feas = p.a_matrix() * &opt.x_star - p.b();
    worst.max(feas.amax())
}

fn solve_quadratic(p: &ValidatedProblem) -> Result<Optimum> {
    let (m, n) = (p.m(), p.n());
    let (a, c) = p.quadratic_coefficients()?;
    let mut kkt = DMatrix::zeros(m + n, m + n);
    for i in 0..m {
        kkt[(i, i)] = a[i];
    }
    kkt.view_mut((0, m), (m, n))
        .copy_from(&p.a_matrix().transpose());
    kkt.view_mut((m, 0), (n, m)).copy_from(p.a_matrix());
    let mut rhs = DVector::zeros(m + n);
    rhs.rows_mut(0, m).copy_from(&c);
    rhs.rows_mut(m, n).copy_from(p.b());

    let sol = kkt.lu().solve(&rhs).ok_or(Error::SingularKkt)?;
    if !sol.iter().all(|v| v.is_finite()) {
        return Err(Error::SingularKkt);
    }
    Ok(Optimum {
        x_star: sol.rows(0, m).into_owned(),
        lambda_star: sol.rows(m, n).into_owned(),
    })
}

fn solve_newton(p: &ValidatedProblem, tol: f64) -> Result<Optimum> {
    let (m, n) = (p.m(), p.n());
    // Start primal variables at the center of each declared domain (0 for quadratics).
    let mut x = DVector::zeros(m);
    for (i, u) in p.utilities().iter().enumerate() {
        if let Utility::GeneralConcave { domain, .. } = u {
            x[i] = 0.5 * (domain.0 + domain.1);
        }
    }
    let mut lambda = DVector::zeros(n);

    let residual = |x: &DVector<f64>, lambda: &DVector<f64>| -> DVector<f64> {
        let at_lambda = p.a_matrix().transpose() * lambda;
        let mut r = DVector::zeros(m + n);
        for (i, u) in p.utilities().iter().enumerate() {
            r[i] = u.du(x[i]) - at_lambda[i];
        }
        r.rows_mut(m, n)
            .copy_from(&(p.a_matrix() * x - p.b()));
        r
    };

    let mut f = residual(&x, &lambda);
    for iter in 0..NEWTON_MAX_ITERS {
        let fnorm = f.amax();
        if !fnorm.is_finite() {
            return Err(Error::Numeric("Newton residual"));
        }
        if fnorm <= tol {
            return Ok(Optimum {
                x_star: x,
                lambda_star: lambda,
            });
        }

        let mut jac = DMatrix::zeros(m + n, m + n);
        for (i, u) in p.utilities().iter().enumerate() {
            jac[(i, i)] = u.d2u(x[i]);
        }
        jac.view_mut((0, m), (m, n))
            .copy_from(&(-p.a_matrix().transpose()));
        jac.view_mut((m, 0), (n, m)).copy_from(p.a_matrix());

        let delta = jac.lu().solve(&(-&f)).ok_or(Error::SingularKkt)?;
        let dx = delta.rows(0, m).into_owned();
        let dl = delta.rows(m, n).into_owned();

        // Backtracking damping: accept the first step that reduces the residual.
        let mut t = 1.0;
        loop {
            let cx = &x + &dx * t;
            let cl = &lambda + &dl * t;
            let cf = residual(&cx, &cl);
            if cf.amax() < fnorm {
                x = cx;
                lambda = cl;
                f = cf;
                break;
            }
            t *= 0.5;
            if t < NEWTON_MIN_STEP {
                return Err(Error::NoConvergence {
                    iterations: iter,
                    residual: fnorm,
                });
            }
        }
    }
    Err(Error::NoConvergence {
        iterations: NEWTON_MAX_ITERS,
        residual: f.amax(),
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// M=2, N=1, a=(1,1), c=(0,0), A=[[1,1]], b=(2).
    pub(crate) fn two_agent() -> ValidatedProblem {
        let p = NumProblem::new(
            vec![Utility::quadratic(1.0, 0.0, 0.0), Utility::quadratic(1.0, 0.0, 0.0)],
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_vec(vec![2.0]),
        )
        .unwrap();
        validate(p).unwrap()
    }

    #[test]
    fn validate_accepts_two_agent_instance() {
        let v = two_agent();
        assert_eq!(v.m(), 2);
        assert_eq!(v.n(), 1);
        assert_eq!(v.step_cap(), 1.0);
        assert_eq!(v.u_min(), &[-1.0, -1.0]);
    }

    #[test]
    fn validate_rejects_square_system() {
        let p = NumProblem::new(
            vec![Utility::quadratic(1.0, 0.0, 0.0)],
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DVector::from_vec(vec![1.0]),
        )
        .unwrap();
        assert!(matches!(validate(p), Err(Error::Dimension(_))));
    }

    #[test]
    fn validate_rejects_nonpositive_curvature() {
        let p = NumProblem::new(
            vec![Utility::quadratic(-1.0, 0.0, 0.0), Utility::quadratic(1.0, 0.0, 0.0)],
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_vec(vec![2.0]),
        )
        .unwrap();
        assert!(matches!(validate(p), Err(Error::Curvature(_))));
    }

    #[test]
    fn validate_rejects_rank_deficient_constraints() {
        let p = NumProblem::new(
            vec![
                Utility::quadratic(1.0, 0.0, 0.0),
                Utility::quadratic(1.0, 0.0, 0.0),
                Utility::quadratic(1.0, 0.0, 0.0),
            ],
            DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 2.0, 2.0, 0.0]),
            DVector::from_vec(vec![1.0, 2.0]),
        )
        .unwrap();
        assert!(matches!(validate(p), Err(Error::Rank { rank: 1, rows: 2 })));
    }

    #[test]
    fn solve_symmetric_instance() {
        let opt = solve_optimum(&two_agent(), DEFAULT_TOL_QUADRATIC).unwrap();
        assert!((opt.x_star[0] - 1.0).abs() <= 1e-12);
        assert!((opt.x_star[1] - 1.0).abs() <= 1e-12);
        assert!((opt.lambda_star[0] + 1.0).abs() <= 1e-12);
    }

    #[test]
    fn solve_asymmetric_instance_matches_reference() {
        // a=(2,1), c=(4,1), A=[[1,-1]], b=(0): reference solution from an
        // independent dense solve is x* = (5/3, 5/3), lambda* = 2/3.
        let p = NumProblem::new(
            vec![Utility::quadratic(2.0, 4.0, 0.0), Utility::quadratic(1.0, 1.0, 0.0)],
            DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
            DVector::from_vec(vec![0.0]),
        )
        .unwrap();
        let opt = solve_optimum(&validate(p).unwrap(), DEFAULT_TOL_QUADRATIC).unwrap();
        assert!((opt.x_star[0] - 5.0 / 3.0).abs() <= 1e-10);
        assert!((opt.x_star[1] - 5.0 / 3.0).abs() <= 1e-10);
        assert!((opt.lambda_star[0] - 2.0 / 3.0).abs() <= 1e-10);
    }

    #[test]
    fn newton_agrees_with_closed_form() {
        // Same asymmetric instance expressed through derivative evaluators.
        let wrap = |a: f64, c: f64| {
            Utility::general_concave(
                Arc::new(move |x| -a * x + c),
                Arc::new(move |_| -a),
                -a,
                -a,
                (-10.0, 10.0),
            )
        };
        let p = NumProblem::new(
            vec![wrap(2.0, 4.0), wrap(1.0, 1.0)],
            DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
            DVector::from_vec(vec![0.0]),
        )
        .unwrap();
        let opt = solve_optimum(&validate(p).unwrap(), DEFAULT_TOL_NEWTON).unwrap();
        assert!((opt.x_star[0] - 5.0 / 3.0).abs() <= 1e-8);
        assert!((opt.x_star[1] - 5.0 / 3.0).abs() <= 1e-8);
        assert!((opt.lambda_star[0] - 2.0 / 3.0).abs() <= 1e-8);
    }

    #[test]
    fn newton_handles_nonlinear_curvature() {
        // U(x) = -cosh(x - 1) has U' = -sinh(x - 1), U'' = -cosh(x - 1) in
        // [-2, -1] over x in [1 - acosh(2), 1 + acosh(2)].
        let half_width = 2.0f64.acosh();
        let u = || {
            Utility::general_concave(
                Arc::new(|x: f64| -(x - 1.0).sinh()),
                Arc::new(|x: f64| -(x - 1.0).cosh()),
                -2.0,
                -1.0,
                (1.0 - half_width, 1.0 + half_width),
            )
        };
        let p = NumProblem::new(
            vec![u(), u()],
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_vec(vec![2.0]),
        )
        .unwrap();
        let v = validate(p).unwrap();
        let opt = solve_optimum(&v, DEFAULT_TOL_NEWTON).unwrap();
        // Symmetric instance: x* = (1, 1); stationarity gives lambda* = -sinh(0) = 0.
        assert!((opt.x_star[0] - 1.0).abs() <= 1e-8);
        assert!((opt.x_star[1] - 1.0).abs() <= 1e-8);
        assert!(opt.lambda_star[0].abs() <= 1e-8);
        assert!(kkt_residual(&v, &opt) <= DEFAULT_TOL_NEWTON);
    }

    #[test]
    fn curvature_audit_rejects_escaping_bounds() {
        // Declared bounds claim U'' >= -1 but the true curvature dips to -2.
        let u = Utility::general_concave(
            Arc::new(|x: f64| -(x).sinh()),
            Arc::new(|x: f64| -(x).cosh()),
            -1.0,
            -0.5,
            (-2.0, 2.0),
        );
        let p = NumProblem::new(
            vec![u, Utility::quadratic(1.0, 0.0, 0.0)],
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_vec(vec![2.0]),
        )
        .unwrap();
        assert!(matches!(validate(p), Err(Error::Curvature(_))));
    }

    #[test]
    fn parses_problem_file() {
        let src = "\
M = 2
N = 1
A = [1.0, 1.0]
b = [2.0]

[utility.0]
a = 1.0
c = 0.0
f = 0.0

[utility.1]
a = 1.0
c = 0.0
f = 0.0
";
        let p = NumProblem::from_toml_str(src).unwrap();
        assert_eq!(p.m(), 2);
        assert_eq!(p.n(), 1);
        assert_eq!(p.a_matrix()[(0, 1)], 1.0);
    }

    #[test]
    fn parse_error_reports_line() {
        let src = "M = 2\nN = 1\nA = [1.0, \"x\"]\nb = [2.0]\n";
        match NumProblem::from_toml_str(src) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_unknown_keys() {
        let src = "M = 2\nN = 1\nA = [1.0, 1.0]\nb = [2.0]\nbogus = 1\n\n[utility.0]\na = 1.0\nc = 0.0\nf = 0.0\n\n[utility.1]\na = 1.0\nc = 0.0\nf = 0.0\n";
        assert!(matches!(
            NumProblem::from_toml_str(src),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn parse_rejects_missing_utility() {
        let src = "M = 2\nN = 1\nA = [1.0, 1.0]\nb = [2.0]\n\n[utility.0]\na = 1.0\nc = 0.0\nf = 0.0\n";
        assert!(matches!(NumProblem::from_toml_str(src), Err(Error::Param(_))));
    }
}
