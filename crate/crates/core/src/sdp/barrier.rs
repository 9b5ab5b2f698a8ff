//! Log-barrier Newton method on the dual `min Tr Λ` s.t. `I_out ⊗ Λ ⪰ A`.
//!
//! The dual has only `d_in²` real unknowns. On the central path
//! `C = S⁻¹/t` with `S = I_out ⊗ Λ − A` is primal feasible up to the
//! centering error, which the marginal normalization removes exactly.

use nalgebra::{DMatrix, DVector};

use super::*;
use crate::linalg::{c, ZERO};

const MAX_NEWTON: usize = 60;
const T_GROWTH: f64 = 100.0;
const T_MAX: f64 = 1e15;

/// Orthonormal basis of `d×d` Hermitian matrices, each flattened row-major.
fn hermitian_basis(d: usize) -> Vec<Vec<(usize, num_complex::Complex64)>> {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let mut basis = Vec::with_capacity(d * d);
    for j in 0..d {
        basis.push(vec![(j * d + j, c(1.0, 0.0))]);
    }
    for j in 0..d {
        for k in j + 1..d {
            basis.push(vec![(j * d + k, c(r, 0.0)), (k * d + j, c(r, 0.0))]);
            basis.push(vec![(j * d + k, c(0.0, r)), (k * d + j, c(0.0, -r))]);
        }
    }
    basis
}

fn assemble(basis: &[Vec<(usize, num_complex::Complex64)>], x: &DVector<f64>, d: usize) -> CMat {
    let mut m = linalg::zeros(d);
    for (b, &xa) in basis.iter().zip(x.iter()) {
        for &(idx, v) in b {
            m[(idx / d, idx % d)] += v * xa;
        }
    }
    m
}

/// Lower Cholesky factor and `logdet S` if `S ≻ 0`. Unlike the generic
/// complex factorization this rejects non-positive pivots.
fn cholesky(s: &CMat) -> Option<(CMat, f64)> {
    let n = s.nrows();
    let mut l = linalg::zeros(n);
    let mut logdet = 0.0;
    for j in 0..n {
        let mut diag = s[(j, j)].re;
        for k in 0..j {
            diag -= l[(j, k)].norm_sqr();
        }
        if !(diag > 0.0) {
            return None;
        }
        let ljj = diag.sqrt();
        logdet += 2.0 * ljj.ln();
        l[(j, j)] = c(ljj, 0.0);
        for i in j + 1..n {
            let mut acc = s[(i, j)];
            for k in 0..j {
                acc -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = acc / ljj;
        }
    }
    Some((l, logdet))
}

fn log_det(s: &CMat) -> Option<f64> {
    cholesky(s).map(|(_, ld)| ld)
}

/// `(logdet S, S⁻¹)` if `S ≻ 0`.
fn logdet_inverse(s: &CMat) -> Option<(f64, CMat)> {
    let (l, logdet) = cholesky(s)?;
    let n = s.nrows();
    // S⁻¹ = L⁻† L⁻¹ with L⁻¹ by forward substitution.
    let mut linv = linalg::zeros(n);
    for col in 0..n {
        for i in col..n {
            let mut acc = if i == col { c(1.0, 0.0) } else { ZERO };
            for k in col..i {
                acc -= l[(i, k)] * linv[(k, col)];
            }
            linv[(i, col)] = acc / l[(i, i)];
        }
    }
    Some((logdet, linv.adjoint() * linv))
}

/// With a previous dual in `warm`, the path starts from that point shifted
/// into the interior, at the barrier weight matching its gap.
pub fn solve_barrier(
    a: &CMat,
    d_out: usize,
    d_in: usize,
    opts: &SdpOptions,
    warm: Option<&WarmStart>,
) -> Result<SdpSolution> {
    let p = normalize_problem(a, d_out, d_in)?;
    if p.scale == 0.0 {
        return trivial_solution(&p, d_out, d_in, false, opts.rho);
    }
    let an = &p.a;
    let tol_scaled = opts.tol / p.scale;
    let basis = hermitian_basis(d_in);
    let m = basis.len();
    let trace_b: Vec<f64> = (0..m).map(|a| if a < d_in { 1.0 } else { 0.0 }).collect();
    let id_out = linalg::identity(d_out);
    let slack_of = |x: &DVector<f64>| linalg::kron(&id_out, &assemble(&basis, x, d_in)) - an;

    let (mut x, mut t) = warm
        .and_then(|w| warm_point(w, &p, &basis, d_out, d_in))
        .unwrap_or_else(|| {
            let mut x = DVector::zeros(m);
            let start = linalg::max_eigenvalue(an) + 1.0;
            for j in 0..d_in {
                x[j] = start;
            }
            (x, 1.0)
        });
    let mut newton_steps = 0;
    let mut best: Option<Certificate> = None;
    let mut status = SdpStatus::MaxIters;

    'path: loop {
        for _ in 0..MAX_NEWTON {
            let s = slack_of(&x);
            let Some((logdet, w)) = logdet_inverse(&s) else { break 'path };
            let f0 = t * x.rows(0, d_in).sum() - logdet;

            // ∂/∂x_a of −logdet S is −Tr[W (I ⊗ B_a)] = −Tr[P B_a], P = Tr_out W.
            let pm = linalg::trace_first(&w, d_out, d_in);
            let grad = DVector::from_fn(m, |a, _| {
                let tr: num_complex::Complex64 =
                    basis[a].iter().map(|&(idx, v)| v * pm[(idx % d_in, idx / d_in)]).sum();
                t * trace_b[a] - tr.re
            });
            // K[(j,k),(l,i)] = Σ_{o,o'} W[(o,i),(o',j)] W[(o',k),(o,l)] so that
            // Tr[W(I⊗X)W(I⊗Y)] = Σ X[j,k] Y[l,i] K[(j,k),(l,i)].
            let mut kmat = vec![ZERO; m * m];
            for o in 0..d_out {
                for o2 in 0..d_out {
                    for i in 0..d_in {
                        for j in 0..d_in {
                            let w1 = w[(o * d_in + i, o2 * d_in + j)];
                            if w1 == ZERO {
                                continue;
                            }
                            for k in 0..d_in {
                                for l in 0..d_in {
                                    kmat[(j * d_in + k) * m + l * d_in + i] += w1 * w[(o2 * d_in + k, o * d_in + l)];
                                }
                            }
                        }
                    }
                }
            }
            let hess = DMatrix::from_fn(m, m, |a, b| {
                let mut acc = ZERO;
                for &(ia, va) in &basis[a] {
                    for &(ib, vb) in &basis[b] {
                        acc += va * vb * kmat[ia * m + ib];
                    }
                }
                acc.re
            });
            let hess = (&hess + hess.transpose()) * 0.5;
            let Some(dx) = newton_direction(&hess, &grad) else { break };
            let dec2 = -grad.dot(&dx);
            newton_steps += 1;
            if !(dec2 > 1e-9) {
                break;
            }
            let mut step = 1.0;
            let mut moved = false;
            while step > 1e-12 {
                let trial = &x + &dx * step;
                if let Some(ld) = log_det(&slack_of(&trial)) {
                    let f1 = t * trial.rows(0, d_in).sum() - ld;
                    // Inside the quadratic region a full step stays feasible and
                    // decreases f by more than rounding can resolve at large t.
                    if (step == 1.0 && dec2 < 0.25) || f1 <= f0 - 0.25 * step * dec2 {
                        x = trial;
                        moved = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !moved {
                break;
            }
        }

        let lambda_now = assemble(&basis, &x, d_in);
        let Some((_, w)) = logdet_inverse(&slack_of(&x)) else { break };
        let primal = w.scale(1.0 / t);
        let cfeas = feasible_primal(&linalg::hermitian_part(&primal), d_out, d_in, false);
        let value = linalg::trace_product(&cfeas, an).re;
        let lambda = tightened_dual(an, &lambda_now, None, d_out, d_in);
        let gap = linalg::trace(&lambda).re - value;
        let best_gap = best.as_ref().map_or(f64::INFINITY, |b| b.gap.abs());
        if gap.abs() < best_gap {
            best = Some(Certificate { c: cfeas, value, lambda, y2: None, gap });
        } else {
            // Past the conditioning limit; further centering only degrades.
            break;
        }
        let target = if opts.relative_stop { tol_scaled * (p.scale * value + p.offset()).abs().max(1.0) } else { tol_scaled };
        if gap.abs() <= target {
            break;
        }
        if t > T_MAX || newton_steps >= opts.max_iters {
            break;
        }
        // On the central path the gap scales as 1/t; aim just below the target.
        t *= (gap.abs() / (0.3 * tol_scaled)).clamp(2.0, T_GROWTH);
    }

    // The absolute target can be out of reach at double precision for large
    // objectives; a gap within `tol` relative to the value is accepted too.
    if let Some(b) = &best {
        let unscaled = (p.scale * b.value + p.offset()).abs();
        if b.gap.abs() <= tol_scaled * unscaled.max(1.0) {
            status = SdpStatus::Converged;
        }
    }
    let cert = match best {
        Some(c) => c,
        None => {
            let c = mixing_choi(d_out, d_in);
            let value = linalg::trace_product(&c, an).re;
            let lambda = tightened_dual(an, &linalg::zeros(d_in), None, d_out, d_in);
            let gap = linalg::trace(&lambda).re - value;
            Certificate { c, value, lambda, y2: None, gap }
        }
    };
    // An ADMM seed at this optimum: Z = C, U = −(I ⊗ Λ − A)/ρ.
    let rho = opts.rho;
    let u = (linalg::kron(&id_out, &cert.lambda) - an).scale(-1.0 / rho);
    let warm = WarmStart { z: vec![cert.c.clone()], u: vec![u], rho, lambda: None };
    finish(&p, cert, d_out, d_in, newton_steps, status, warm)
}

/// Interior starting point and barrier weight from a previous solution.
fn warm_point(
    w: &WarmStart,
    p: &Normalized,
    basis: &[Vec<(usize, num_complex::Complex64)>],
    d_out: usize,
    d_in: usize,
) -> Option<(DVector<f64>, f64)> {
    let lambda = w.lambda.as_ref()?;
    let c_prev = w.z.first()?;
    if lambda.shape() != (d_in, d_in) || c_prev.shape() != p.a.shape() {
        return None;
    }
    let mut lam = (lambda - &p.shift).scale(1.0 / p.scale);
    let id_out = linalg::identity(d_out);
    let deficit = linalg::max_eigenvalue(&(&p.a - linalg::kron(&id_out, &lam))).max(0.0);
    let value = linalg::trace_product(c_prev, &p.a).re;
    let gap0 = linalg::trace(&lam).re + d_in as f64 * deficit - value;
    if !gap0.is_finite() {
        return None;
    }
    // Push into the interior by a margin comparable to the remaining gap.
    let margin = deficit + (gap0.max(0.0) / d_in as f64).max(1e-9);
    lam += linalg::identity(d_in).scale(margin);
    let gap = (linalg::trace(&lam).re - value).max(1e-12);
    let t = ((d_out * d_in) as f64 / gap).clamp(1.0, T_MAX);
    let x = DVector::from_fn(basis.len(), |a, _| {
        basis[a].iter().map(|&(idx, v)| (v.conj() * lam[(idx / d_in, idx % d_in)]).re).sum()
    });
    Some((x, t))
}

fn newton_direction(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = hess.clone().cholesky() {
        return Some(ch.solve(&(-grad)));
    }
    let ridge = 1e-12 * hess.diagonal().amax().max(1e-300);
    let shifted = hess + DMatrix::identity(hess.nrows(), hess.ncols()) * ridge;
    shifted.cholesky().map(|ch| ch.solve(&(-grad)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn basis_is_orthonormal_and_hermitian() {
        let d = 3;
        let basis = hermitian_basis(d);
        assert_eq!(basis.len(), d * d);
        let mats: Vec<CMat> = (0..d * d)
            .map(|a| {
                let mut x = DVector::zeros(d * d);
                x[a] = 1.0;
                assemble(&basis, &x, d)
            })
            .collect();
        for (i, a) in mats.iter().enumerate() {
            assert!(linalg::hermiticity_defect(a) < 1e-15);
            for (j, b) in mats.iter().enumerate() {
                let ip = linalg::trace_product(a, b).re;
                assert!((ip - if i == j { 1.0 } else { 0.0 }).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn agrees_with_admm() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let opts = SdpOptions::default();
        for (d, scale) in [(2, 1.0), (4, 1.0), (4, 300.0)] {
            for _ in 0..5 {
                let a = linalg::random_hermitian(d * d, &mut rng).scale(scale);
                let b = solve_barrier(&a, d, d, &opts, None).unwrap();
                assert_eq!(b.status, SdpStatus::Converged, "d={d} scale={scale} gap={}", b.gap);
                assert!(b.c_star.is_channel(1e-8));
                let slack = linalg::kron(&linalg::identity(d), &b.dual_lambda) - &a;
                assert!(linalg::min_eigenvalue(&slack) >= -1e-9 * scale);
                let tol = opts.tol * b.primal_value.abs().max(1.0);
                assert!(b.gap >= -tol && b.gap <= tol);
                let ad = solve_admm(&a, d, d, &opts, false, None).unwrap();
                assert!((ad.primal_value - b.primal_value).abs() <= 2.0 * tol);
            }
        }
    }

    #[test]
    fn rank_deficient_optimum() {
        // Optimum is the identity channel, a rank-one Choi operator.
        let v = [c(1.0, 0.0), ZERO, ZERO, c(1.0, 0.0)];
        let a = linalg::projector(&v).scale(50.0);
        let b = solve_barrier(&a, 2, 2, &SdpOptions::default(), None).unwrap();
        assert_eq!(b.status, SdpStatus::Converged);
        assert!((b.primal_value - 200.0).abs() < 1e-7 * 200.0, "{} gap {}", b.primal_value, b.gap);
    }

    #[test]
    fn absolute_stop_tightens_the_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let a = linalg::random_hermitian(16, &mut rng).scale(1e3);
        let rel = solve_barrier(&a, 4, 4, &SdpOptions::default(), None).unwrap();
        let abs = solve_barrier(&a, 4, 4, &SdpOptions { relative_stop: false, ..SdpOptions::default() }, None).unwrap();
        assert_eq!((rel.status, abs.status), (SdpStatus::Converged, SdpStatus::Converged));
        assert!(abs.gap.abs() <= rel.gap.abs(), "{} vs {}", abs.gap, rel.gap);
        assert!(abs.iterations >= rel.iterations);
        assert!((abs.primal_value - rel.primal_value).abs() <= 1e-7 * rel.primal_value.abs());
    }
}
