//! Linear maximization over channel Choi operators.
//!
//! Solves `max Tr[C·A]` subject to `C ⪰ 0`, `Tr_out C = I_in` (and
//! optionally `C^{T_in} ⪰ 0`). Two solvers share one certificate format:
//! a scaled ADMM splitting between the affine trace-preserving set and the
//! PSD cone(s), and a log-barrier Newton method on the small dual problem
//! `min Tr Λ` s.t. `I_out ⊗ Λ ⪰ A`. Every returned solution carries an
//! exactly feasible primal point and a feasible dual `Λ`, so
//! `gap = Tr Λ − Tr[C·A]` bounds the suboptimality.

mod admm;
mod barrier;

use serde::{Deserialize, Serialize};

use crate::channels::ChoiOperator;
use crate::error::{Error, Result};
use crate::linalg::{self, CMat};

pub use admm::solve_admm;
pub use barrier::solve_barrier;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdpOptions {
    /// Absolute duality-gap target. The barrier method also reports
    /// convergence once the gap is within `tol` relative to the optimum.
    pub tol: f64,
    pub max_iters: usize,
    /// Initial ADMM penalty.
    pub rho: f64,
    /// ADMM iterations between certificate evaluations.
    pub check_every: usize,
    /// ADMM iterations [`HybridBackend`] spends polishing a barrier solution
    /// that missed the tolerance.
    pub admm_budget: usize,
    /// Stop the barrier path as soon as the gap is within `tol` relative to
    /// `max(1, |value|)`. When false it keeps tightening toward the absolute
    /// target until rounding stalls progress, which costs several times more
    /// Newton steps on large objectives.
    pub relative_stop: bool,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self { tol: 1e-7, max_iters: 20_000, rho: 1.0, check_every: 10, admm_budget: 400, relative_stop: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdpStatus {
    Converged,
    MaxIters,
}

/// ADMM iterate that can seed a later solve of a nearby problem.
#[derive(Clone, Debug)]
pub struct WarmStart {
    z: Vec<CMat>,
    u: Vec<CMat>,
    rho: f64,
    /// Dual solution in the caller's units.
    lambda: Option<CMat>,
}

#[derive(Clone, Debug)]
pub struct SdpSolution {
    pub c_star: ChoiOperator,
    pub primal_value: f64,
    pub dual_lambda: CMat,
    /// PSD multiplier `Y` of the PPT cone; the dual constraint is then
    /// `I_out ⊗ Λ − A − Y^{T_in} ⪰ 0`.
    pub ppt_multiplier: Option<CMat>,
    pub gap: f64,
    pub iterations: usize,
    pub status: SdpStatus,
    pub warm: WarmStart,
}

/// Solver seam so callers can swap in another SDP backend.
pub trait SdpBackend {
    fn solve(
        &self,
        a: &CMat,
        d_out: usize,
        d_in: usize,
        ppt: bool,
        warm: Option<&WarmStart>,
    ) -> Result<SdpSolution>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct AdmmBackend {
    pub opts: SdpOptions,
}

impl SdpBackend for AdmmBackend {
    fn solve(&self, a: &CMat, d_out: usize, d_in: usize, ppt: bool, warm: Option<&WarmStart>) -> Result<SdpSolution> {
        solve_admm(a, d_out, d_in, &self.opts, ppt, warm)
    }
}

/// Barrier method only; no PPT support.
#[derive(Clone, Copy, Debug, Default)]
pub struct BarrierBackend {
    pub opts: SdpOptions,
}

impl SdpBackend for BarrierBackend {
    fn solve(&self, a: &CMat, d_out: usize, d_in: usize, ppt: bool, warm: Option<&WarmStart>) -> Result<SdpSolution> {
        if ppt {
            return Err(Error::Parameter("the barrier solver does not handle the PPT constraint".into()));
        }
        let mut sol = solve_barrier(a, d_out, d_in, &self.opts, warm)?;
        if let Some(w) = warm {
            sol.warm.rho = w.rho;
        }
        Ok(sol)
    }
}

/// Barrier method, followed by a short ADMM run seeded at its solution
/// when the barrier misses the tolerance. PPT problems use warm-started
/// ADMM with the full iteration limit.
#[derive(Clone, Copy, Debug, Default)]
pub struct HybridBackend {
    pub opts: SdpOptions,
}

impl SdpBackend for HybridBackend {
    fn solve(&self, a: &CMat, d_out: usize, d_in: usize, ppt: bool, warm: Option<&WarmStart>) -> Result<SdpSolution> {
        if ppt {
            return solve_admm(a, d_out, d_in, &self.opts, true, warm);
        }
        let first = solve_barrier(a, d_out, d_in, &self.opts, warm)?;
        if first.status == SdpStatus::Converged {
            return Ok(first);
        }
        let quick = SdpOptions { max_iters: self.opts.admm_budget.min(self.opts.max_iters), ..self.opts };
        let mut second = solve_admm(a, d_out, d_in, &quick, false, Some(&first.warm))?;
        second.iterations += first.iterations;
        Ok(if second.gap < first.gap { second } else { first })
    }
}

/// First-order solve with the default iteration limit.
pub fn solve_cptp_linear(a: &CMat, d_out: usize, d_in: usize, opts: &SdpOptions) -> Result<SdpSolution> {
    solve_admm(a, d_out, d_in, opts, false, None)
}

pub fn solve_cptp_ppt_linear(a: &CMat, d_out: usize, d_in: usize, opts: &SdpOptions) -> Result<SdpSolution> {
    solve_admm(a, d_out, d_in, opts, true, None)
}

/// Maximally mixing channel `I_out ⊗ I_in / d_out`, a strictly feasible point.
fn mixing_choi(d_out: usize, d_in: usize) -> CMat {
    linalg::identity(d_out * d_in).scale(1.0 / d_out as f64)
}

/// `C − (1/d_out) I_out ⊗ (Tr_out C − I_in)`.
fn project_affine(m: &CMat, d_out: usize, d_in: usize) -> CMat {
    let defect = linalg::trace_first(m, d_out, d_in) - linalg::identity(d_in);
    m - linalg::kron(&linalg::identity(d_out), &defect).scale(1.0 / d_out as f64)
}

fn project_psd(m: &CMat) -> CMat {
    let (vals, vecs) = linalg::eigh(m);
    linalg::spectral_map(&vals, &vecs, |x| x.max(0.0))
}

fn project_ppt(m: &CMat, d_out: usize, d_in: usize) -> CMat {
    linalg::transpose_second(&project_psd(&linalg::transpose_second(m, d_out, d_in)), d_out, d_in)
}

/// Rescale a PSD operator so its output marginal is exactly `I_in`.
/// The congruence also preserves a PSD partial transpose.
fn normalize_marginal(z: &CMat, d_out: usize, d_in: usize) -> Option<CMat> {
    let t = linalg::trace_first(z, d_out, d_in);
    let (vals, vecs) = linalg::eigh(&t);
    if vals[0] <= 1e-10 {
        return None;
    }
    let inv_sqrt = linalg::kron(&linalg::identity(d_out), &linalg::spectral_map(&vals, &vecs, |x| 1.0 / x.sqrt()));
    Some(linalg::hermitian_part(&(&inv_sqrt * z * &inv_sqrt)))
}

/// Mix toward the maximally mixing channel until every listed cone holds.
fn pull_into_cones(c: &CMat, d_out: usize, d_in: usize, ppt: bool) -> CMat {
    let mut m = linalg::min_eigenvalue(c);
    if ppt {
        m = m.min(linalg::min_eigenvalue(&linalg::transpose_second(c, d_out, d_in)));
    }
    if m >= 0.0 {
        return c.clone();
    }
    let floor = 1.0 / d_out as f64;
    let t = (-m / (floor - m)).min(1.0);
    c.scale(1.0 - t) + mixing_choi(d_out, d_in).scale(t)
}

/// Exactly feasible channel near a PSD (or PPT) iterate `z`.
fn feasible_primal(z: &CMat, d_out: usize, d_in: usize, ppt: bool) -> CMat {
    let normalized = if ppt { None } else { normalize_marginal(z, d_out, d_in) };
    normalized.unwrap_or_else(|| pull_into_cones(&project_affine(z, d_out, d_in), d_out, d_in, ppt))
}

/// Certificate of the scaled-and-shifted problem.
struct Certificate {
    c: CMat,
    value: f64,
    lambda: CMat,
    y2: Option<CMat>,
    gap: f64,
}

/// Tighten a dual candidate `M` by the eigenvalue shift that makes
/// `I_out ⊗ M − A − extra ⪰ 0` hold with equality at the bottom.
fn tightened_dual(a: &CMat, m: &CMat, extra: Option<&CMat>, d_out: usize, d_in: usize) -> CMat {
    let mut slack = linalg::kron(&linalg::identity(d_out), m) - a;
    if let Some(x) = extra {
        slack -= x;
    }
    let mu = -linalg::min_eigenvalue(&slack);
    m + linalg::identity(d_in).scale(mu)
}

/// `A = scale·Â + I_out ⊗ shift` with `shift = Tr_out A / d_out`. The second
/// term pairs to `Tr shift` with every channel, so only `Â` is optimized;
/// removing it first avoids cancellation when `A` is dominated by it.
struct Normalized {
    a: CMat,
    shift: CMat,
    scale: f64,
}

impl Normalized {
    fn offset(&self) -> f64 {
        linalg::trace(&self.shift).re
    }
}

fn normalize_problem(a: &CMat, d_out: usize, d_in: usize) -> Result<Normalized> {
    let n = d_out * d_in;
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::Dimension(format!("coefficient is {}x{}, expected {n}x{n}", a.nrows(), a.ncols())));
    }
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Parameter("coefficient has non-finite entries".into()));
    }
    let defect = linalg::hermiticity_defect(a);
    if defect > 1e-9 * linalg::max_abs(a).max(1.0) {
        return Err(Error::NotHermitian(defect));
    }
    let a = linalg::hermitian_part(a);
    let shift = linalg::hermitian_part(&linalg::trace_first(&a, d_out, d_in).scale(1.0 / d_out as f64));
    let centered = &a - linalg::kron(&linalg::identity(d_out), &shift);
    let scale = linalg::max_abs(&centered);
    let a = if scale > 0.0 { centered.scale(1.0 / scale) } else { centered };
    Ok(Normalized { a, shift, scale })
}

/// Solution of a problem whose coefficient is a multiple of the identity.
fn trivial_solution(p: &Normalized, d_out: usize, d_in: usize, ppt: bool, rho: f64) -> Result<SdpSolution> {
    let n = d_out * d_in;
    let c = mixing_choi(d_out, d_in);
    let blocks = if ppt { 2 } else { 1 };
    Ok(SdpSolution {
        c_star: ChoiOperator::new(c.clone(), d_out, d_in)?,
        primal_value: p.offset(),
        dual_lambda: p.shift.clone(),
        ppt_multiplier: ppt.then(|| linalg::zeros(n)),
        gap: 0.0,
        iterations: 0,
        status: SdpStatus::Converged,
        warm: WarmStart { z: vec![c; blocks], u: vec![linalg::zeros(n); blocks], rho, lambda: None },
    })
}

/// Undo the normalization of a certificate.
fn finish(
    p: &Normalized,
    cert: Certificate,
    d_out: usize,
    d_in: usize,
    iterations: usize,
    status: SdpStatus,
    mut warm: WarmStart,
) -> Result<SdpSolution> {
    let primal_value = cert.value * p.scale + p.offset();
    let dual_lambda = cert.lambda.scale(p.scale) + &p.shift;
    let gap = linalg::trace(&dual_lambda).re - primal_value;
    warm.lambda = Some(dual_lambda.clone());
    Ok(SdpSolution {
        c_star: ChoiOperator::new(cert.c, d_out, d_in)?,
        primal_value,
        dual_lambda,
        ppt_multiplier: cert.y2.map(|y| y.scale(p.scale)),
        gap,
        iterations,
        status,
        warm,
    })
}
