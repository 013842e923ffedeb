//! Information-theoretic lower bounds on convergence under finite data rates.
//!
//! Everything here is computed in nats (natural log); the `*_log2` mirrors
//! divide by `ln 2` at the boundary. Two families are provided.
//!
//! **Asymptotic decay-rate bounds** (on the exponential rate of
//! `E ||y_k - y*||^2`): no consistent scheme under an average rate budget can
//! beat
//!
//! ```text
//! pd:       (2/(M+N)) (sum_i ln(1 + mu* U_i''(x*_i)) - R_Q)
//! primal:   (2/M)     (sum_i ln(1 + mu* U_i''(x*_i)) - R_lambda)
//! dual:    -(2/N)      R_x
//! zoom-in: -(2/(M+N))  ln(beta / prod_i |T_ii|)
//! combined: (2/(M+N)) (sum_i ln(1 - mu* a_i) - min(ln beta, R_Q))
//! ```
//!
//! where `R_x`, `R_lambda`, `R_Q` are the average primal/dual/total rates and
//! `beta` is the lattice-point count of the reachable-reconstruction set.
//!
//! **Finite-time bounds** (on `ln E ||error_k||^2` at each step `k`): with
//! `C(d) = (1 - 1/d) - ln(2 pi e)` and `h[.]` the differential entropy of the
//! initial condition,
//!
//! ```text
//! pd:     C(M+N) + (2/(M+N)) (sum_i sum_{n<k} ln(1 + mu_n u_min_i) + h[y_0] - nats_total(k))
//! primal: C(M)   + (2/M)     (sum_i sum_{n<k} ln(1 + mu_n u_min_i) + h[x_0] - nats_dual(k))
//! dual:   C(N)   + (2/N)     (h[lambda_0] - nats_primal(k))
//! ```
//!
//! The rate terms charge the bits *received* by each side: agents decode dual
//! transmissions (so the primal bound charges `nats_dual`) and nodes decode
//! primal transmissions. `nats_*(k)` converts the ledger's bit totals through
//! step `k - 1` at `ln 2` nats per bit; an unbounded (passthrough) ledger makes
//! every finite-time bound `-inf`, i.e. vacuous, as it must be for an
//! infinite-rate channel.

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lattice::LatticeCountResult;
use crate::pd::{spectral_radius, StepSchedule, TMatrix};
use crate::problem::{Optimum, Utility, ValidatedProblem};
use crate::quantize::{ceil_log2, RateLedger, RateSummary};

/// `ln(2 pi e)`.
fn ln_two_pi_e() -> f64 {
    (2.0 * std::f64::consts::PI * std::f64::consts::E).ln()
}

/// Rate-loss constant `C(d) = (1 - 1/d) - ln(2 pi e)` for dimension `d`.
pub fn rate_loss_const(d: usize) -> f64 {
    (1.0 - 1.0 / d as f64) - ln_two_pi_e()
}

/// Nats-to-bits conversion (divide by `ln 2`).
pub fn nats_to_bits(nats: f64) -> f64 {
    nats / std::f64::consts::LN_2
}

/// Differential entropy of a uniform distribution on a `dims`-dimensional box
/// with side length `side` per coordinate: `dims * ln(side)`.
pub fn entropy_uniform_box(dims: usize, side: f64) -> Result<f64> {
    if !(side > 0.0 && side.is_finite()) {
        return Err(Error::Param(format!("box side must be positive and finite, got {side}")));
    }
    Ok(dims as f64 * side.ln())
}

/// Distribution of the initial condition, as the entropy terms the finite-time
/// bounds need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialDistribution {
    /// Every coordinate (primal and dual) independently uniform on
    /// `(-L alpha, L alpha)` — the zoom-in codec's start interval.
    UniformBox { l: u32, alpha: f64 },
    /// Explicit differential entropies of the full primal and dual vectors.
    Custom { h_x0: f64, h_lambda0: f64 },
}

impl InitialDistribution {
    fn box_side(l: u32, alpha: f64) -> Result<f64> {
        if l == 0 || !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Param(format!(
                "uniform-box initial condition needs L >= 1 and alpha > 0, got L = {l}, alpha = {alpha}"
            )));
        }
        Ok(2.0 * l as f64 * alpha)
    }

    /// Differential entropy of the primal initial vector (`m` coordinates).
    pub fn h_x0(&self, m: usize) -> Result<f64> {
        match self {
            InitialDistribution::UniformBox { l, alpha } => {
                entropy_uniform_box(m, Self::box_side(*l, *alpha)?)
            }
            InitialDistribution::Custom { h_x0, .. } => {
                if h_x0.is_finite() {
                    Ok(*h_x0)
                } else {
                    Err(Error::Param(format!("custom h[x_0] must be finite, got {h_x0}")))
                }
            }
        }
    }

    /// Differential entropy of the dual initial vector (`n` coordinates).
    pub fn h_lambda0(&self, n: usize) -> Result<f64> {
        match self {
            InitialDistribution::UniformBox { l, alpha } => {
                entropy_uniform_box(n, Self::box_side(*l, *alpha)?)
            }
            InitialDistribution::Custom { h_lambda0, .. } => {
                if h_lambda0.is_finite() {
                    Ok(*h_lambda0)
                } else {
                    Err(Error::Param(format!(
                        "custom h[lambda_0] must be finite, got {h_lambda0}"
                    )))
                }
            }
        }
    }

    /// Joint entropy of `(x_0, lambda_0)` under independence.
    pub fn h_y0(&self, m: usize, n: usize) -> Result<f64> {
        Ok(self.h_x0(m)? + self.h_lambda0(n)?)
    }
}

/// `sum_i ln(1 + mu U_i''(x*_i))`: curvature measured at the optimum
/// (the decay-rate bounds' curvature term).
pub fn curvature_sum_at_optimum(p: &ValidatedProblem, opt: &Optimum, mu: f64) -> Result<f64> {
    check_mu(mu)?;
    if opt.x_star.len() != p.m() {
        return Err(Error::Dimension(format!(
            "optimum has {} primal coordinates, instance has {}",
            opt.x_star.len(),
            p.m()
        )));
    }
    let mut sum = 0.0;
    for (i, u) in p.utilities().iter().enumerate() {
        let term = 1.0 + mu * u.d2u(opt.x_star[i]);
        if !(term > 0.0) {
            return Err(Error::Domain(format!(
                "1 + mu U''(x*) = {term} for utility {i}; the decay-rate bound needs it positive"
            )));
        }
        sum += term.ln();
    }
    Ok(sum)
}

/// `sum_i ln(1 + mu u_min_i)`: worst-case curvature over each utility's whole
/// domain (the finite-time bounds' per-step curvature term).
pub fn curvature_sum_worst(p: &ValidatedProblem, mu: f64) -> Result<f64> {
    check_mu(mu)?;
    let mut sum = 0.0;
    for (i, lo) in p.u_min().iter().enumerate() {
        let term = 1.0 + mu * lo;
        if !(term > 0.0) {
            return Err(Error::Domain(format!(
                "1 + mu u_min = {term} for utility {i}; the finite-time bound needs it positive"
            )));
        }
        sum += term.ln();
    }
    Ok(sum)
}

fn check_mu(mu: f64) -> Result<()> {
    if mu > 0.0 && mu.is_finite() {
        Ok(())
    } else {
        Err(Error::Param(format!("step size must be positive and finite, got {mu}")))
    }
}

/// Decay-rate bound for the combined primal-dual error under total rate
/// `r_q_nats` (nats per step; may be infinite).
pub fn dde_bound_pd(
    p: &ValidatedProblem,
    opt: &Optimum,
    mu_star: f64,
    r_q_nats: f64,
) -> Result<f64> {
    let d = (p.m() + p.n()) as f64;
    Ok((2.0 / d) * (curvature_sum_at_optimum(p, opt, mu_star)? - r_q_nats))
}

/// Decay-rate bound for the primal error under dual rate `r_lambda_nats`.
pub fn dde_bound_primal(
    p: &ValidatedProblem,
    opt: &Optimum,
    mu_star: f64,
    r_lambda_nats: f64,
) -> Result<f64> {
    let m = p.m() as f64;
    Ok((2.0 / m) * (curvature_sum_at_optimum(p, opt, mu_star)? - r_lambda_nats))
}

/// Decay-rate bound for the dual error under primal rate `r_x_nats`.
pub fn dde_bound_dual(n: usize, r_x_nats: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Dimension("need at least one constraint".into()));
    }
    Ok(-(2.0 / n as f64) * r_x_nats)
}

/// Decay-rate bound specific to the zoom-in scheme: `-(2/d) ln(beta / prod_i |T_ii|)`
/// where `beta >= 1` counts the reachable reconstruction lattice.
pub fn dde_bound_zoomin(t: &DMatrix<f64>, beta: f64) -> Result<f64> {
    if t.nrows() != t.ncols() || t.nrows() == 0 {
        return Err(Error::Dimension(format!(
            "zoom-in bound needs a square transition matrix, got {}x{}",
            t.nrows(),
            t.ncols()
        )));
    }
    if !(beta >= 1.0 && beta.is_finite()) {
        return Err(Error::Param(format!("lattice count must be >= 1 and finite, got {beta}")));
    }
    let d = t.nrows();
    let mut ln_diag = 0.0;
    for i in 0..d {
        let tii = t[(i, i)].abs();
        if !(tii > 0.0) {
            return Err(Error::Domain(format!(
                "transition diagonal entry {i} is zero; the zoom-in bound needs |T_ii| > 0"
            )));
        }
        ln_diag += tii.ln();
    }
    Ok((2.0 / d as f64) * (ln_diag - beta.ln()))
}

/// Combined decay-rate bound: the curvature term minus the *smaller* of the
/// lattice channel capacity `ln beta` and the raw rate `R_Q`.
pub fn dde_bound_combined(
    p: &ValidatedProblem,
    opt: &Optimum,
    mu_star: f64,
    r_q_nats: f64,
    ln_beta: f64,
) -> Result<f64> {
    if !(ln_beta >= 0.0) {
        return Err(Error::Param(format!("ln beta must be >= 0, got {ln_beta}")));
    }
    let d = (p.m() + p.n()) as f64;
    let info = ln_beta.min(r_q_nats);
    Ok((2.0 / d) * (curvature_sum_at_optimum(p, opt, mu_star)? - info))
}

/// Curvature accumulated over steps `0..k` at the worst-case per-agent rates.
fn curvature_through(p: &ValidatedProblem, schedule: &StepSchedule, k: usize) -> Result<f64> {
    let mut sum = 0.0;
    for step in 0..k {
        sum += curvature_sum_worst(p, schedule.mu(step))?;
    }
    Ok(sum)
}

fn offset_surcharge(offset_cap: Option<u64>) -> u32 {
    offset_cap.map(|cap| ceil_log2(2 * cap + 1)).unwrap_or(0)
}

fn nats_from_bits(total: Option<u64>) -> f64 {
    total
        .map(|b| b as f64 * std::f64::consts::LN_2)
        .unwrap_or(f64::INFINITY)
}

fn require_ledger(ledger: &RateLedger, k: usize) -> Result<()> {
    if ledger.steps_complete() >= k {
        Ok(())
    } else {
        Err(Error::EmptyLedger)
    }
}

/// Finite-time lower bound on `ln E ||y_k - y*||^2` (combined error).
pub fn msd_bound_pd(
    k: usize,
    p: &ValidatedProblem,
    schedule: &StepSchedule,
    init: &InitialDistribution,
    ledger: &RateLedger,
    offset_cap: Option<u64>,
) -> Result<f64> {
    require_ledger(ledger, k)?;
    let (m, n) = (p.m(), p.n());
    let d = (m + n) as f64;
    let surcharge = offset_surcharge(offset_cap);
    let nats = nats_from_bits(ledger.total_bits_x(k, surcharge))
        + nats_from_bits(ledger.total_bits_lambda(k, surcharge));
    Ok(rate_loss_const(m + n)
        + (2.0 / d) * (curvature_through(p, schedule, k)? + init.h_y0(m, n)? - nats))
}

/// Finite-time lower bound on `ln E ||x_k - x*||^2` (primal error, charged
/// with the dual bits the agents receive).
pub fn msd_bound_primal(
    k: usize,
    p: &ValidatedProblem,
    schedule: &StepSchedule,
    init: &InitialDistribution,
    ledger: &RateLedger,
    offset_cap: Option<u64>,
) -> Result<f64> {
    require_ledger(ledger, k)?;
    let m = p.m();
    let nats = nats_from_bits(ledger.total_bits_lambda(k, offset_surcharge(offset_cap)));
    Ok(rate_loss_const(m)
        + (2.0 / m as f64) * (curvature_through(p, schedule, k)? + init.h_x0(m)? - nats))
}

/// Finite-time lower bound on `ln E ||lambda_k - lambda*||^2` (dual error,
/// charged with the primal bits the nodes receive; no curvature term).
pub fn msd_bound_dual(
    k: usize,
    p: &ValidatedProblem,
    schedule: &StepSchedule,
    init: &InitialDistribution,
    ledger: &RateLedger,
    offset_cap: Option<u64>,
) -> Result<f64> {
    require_ledger(ledger, k)?;
    let _ = schedule; // the dual bound carries no curvature term
    let n = p.n();
    let nats = nats_from_bits(ledger.total_bits_x(k, offset_surcharge(offset_cap)));
    Ok(rate_loss_const(n) + (2.0 / n as f64) * (init.h_lambda0(n)? - nats))
}

/// All decay-rate bounds for one configuration, plus the context needed to
/// read them.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub m: usize,
    pub n: usize,
    pub mu_star: f64,
    pub spectral_radius: f64,
    pub r_x_nats: f64,
    pub r_lambda_nats: f64,
    pub r_q_nats: f64,
    /// `ln` of the tightest available lattice count.
    pub ln_beta: f64,
    /// True when the lattice count was enumerated exactly.
    pub beta_exact: bool,
    pub dde_pd_nats: f64,
    pub dde_primal_nats: f64,
    pub dde_dual_nats: f64,
    pub dde_zoomin_nats: f64,
    pub dde_combined_nats: f64,
}

impl BoundReport {
    /// Writes the report as deterministic `key = value` lines, with log2
    /// mirrors for every rate and bound.
    pub fn write_text<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "variables_m = {}", self.m)?;
        writeln!(w, "constraints_n = {}", self.n)?;
        writeln!(w, "mu_star = {:.16e}", self.mu_star)?;
        writeln!(w, "spectral_radius = {:.16e}", self.spectral_radius)?;
        writeln!(w, "beta_exact = {}", self.beta_exact)?;
        writeln!(w, "ln_beta = {:.16e}", self.ln_beta)?;
        for (key, nats) in [
            ("rate_x", self.r_x_nats),
            ("rate_lambda", self.r_lambda_nats),
            ("rate_total", self.r_q_nats),
            ("decay_bound_pd", self.dde_pd_nats),
            ("decay_bound_primal", self.dde_primal_nats),
            ("decay_bound_dual", self.dde_dual_nats),
            ("decay_bound_zoomin", self.dde_zoomin_nats),
            ("decay_bound_combined", self.dde_combined_nats),
        ] {
            writeln!(w, "{key}_nats = {:.16e}", nats)?;
            writeln!(w, "{key}_log2 = {:.16e}", nats_to_bits(nats))?;
        }
        Ok(())
    }

    /// Column names of the one-row CSV form, matching [`Self::write_csv`].
    pub fn csv_header() -> &'static str {
        "variables_m,constraints_n,mu_star,spectral_radius,beta_exact,ln_beta,\
         rate_x_nats,rate_lambda_nats,rate_total_nats,decay_bound_pd_nats,\
         decay_bound_primal_nats,decay_bound_dual_nats,decay_bound_zoomin_nats,\
         decay_bound_combined_nats"
    }

    /// Writes the report as a header line plus one data row.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::csv_header())?;
        writeln!(
            w,
            "{},{},{:.16e},{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            self.m,
            self.n,
            self.mu_star,
            self.spectral_radius,
            self.beta_exact,
            self.ln_beta,
            self.r_x_nats,
            self.r_lambda_nats,
            self.r_q_nats,
            self.dde_pd_nats,
            self.dde_primal_nats,
            self.dde_dual_nats,
            self.dde_zoomin_nats,
            self.dde_combined_nats
        )
    }
}

/// Assembles every decay-rate bound for an instance, its transition matrix at
/// the limiting step size, measured rates, and a lattice count.
pub fn bound_report(
    p: &ValidatedProblem,
    opt: &Optimum,
    t: &TMatrix,
    rates: &RateSummary,
    lattice: &LatticeCountResult,
) -> Result<BoundReport> {
    let mu_star = t.mu();
    let ln_beta = (lattice.best() as f64).ln();
    Ok(BoundReport {
        m: p.m(),
        n: p.n(),
        mu_star,
        spectral_radius: spectral_radius(t.entries())?,
        r_x_nats: rates.r_x_nats,
        r_lambda_nats: rates.r_lambda_nats,
        r_q_nats: rates.r_q_nats,
        ln_beta,
        beta_exact: lattice.exact.is_some(),
        dde_pd_nats: dde_bound_pd(p, opt, mu_star, rates.r_q_nats)?,
        dde_primal_nats: dde_bound_primal(p, opt, mu_star, rates.r_lambda_nats)?,
        dde_dual_nats: dde_bound_dual(p.n(), rates.r_x_nats)?,
        dde_zoomin_nats: dde_bound_zoomin(t.entries(), lattice.best() as f64)?,
        dde_combined_nats: dde_bound_combined(p, opt, mu_star, rates.r_q_nats, ln_beta)?,
    })
}

/// Convenience: are the utilities' optimum-curvature and worst-curvature terms
/// identical? True for quadratics, where `U''` is constant.
pub fn curvature_terms_coincide(p: &ValidatedProblem) -> bool {
    p.utilities().iter().all(|u| match u {
        Utility::Quadratic { .. } => true,
        Utility::GeneralConcave { u_min, u_max, .. } => u_min == u_max,
    })
}
