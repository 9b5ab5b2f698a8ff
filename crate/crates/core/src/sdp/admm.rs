//! Scaled ADMM between the trace-preserving affine set and PSD cone(s).

use super::*;

/// Certificate from the current ADMM iterate.
#[allow(clippy::too_many_arguments)]
fn certificate(
    a: &CMat,
    c_aff: &CMat,
    zs: &[CMat],
    us: &[CMat],
    rho: f64,
    d_out: usize,
    d_in: usize,
    ppt: bool,
) -> Certificate {
    let c = feasible_primal(&zs[0], d_out, d_in, ppt);
    let value = linalg::trace_product(&c, a).re;

    // Affine multiplier: I_out ⊗ M = A − ρ Σ_j (C − Z_j + U_j).
    let mut resid = a.clone();
    for (z, u) in zs.iter().zip(us) {
        resid -= (c_aff - z + u).scale(rho);
    }
    let m = linalg::hermitian_part(&linalg::trace_first(&resid, d_out, d_in).scale(1.0 / d_out as f64));
    // Part of the slack carried by the PPT cone: Y^Γ with Y ⪰ 0.
    let y2 = ppt.then(|| project_psd(&linalg::transpose_second(&us[1].scale(-rho), d_out, d_in)));
    let y2_gamma = y2.as_ref().map(|y| linalg::transpose_second(y, d_out, d_in));
    let lambda = tightened_dual(a, &m, y2_gamma.as_ref(), d_out, d_in);
    let gap = linalg::trace(&lambda).re - value;
    Certificate { c, value, lambda, y2, gap }
}

/// ADMM solve, optionally seeded from a previous iterate.
pub fn solve_admm(
    a: &CMat,
    d_out: usize,
    d_in: usize,
    opts: &SdpOptions,
    ppt: bool,
    warm: Option<&WarmStart>,
) -> Result<SdpSolution> {
    let p = normalize_problem(a, d_out, d_in)?;
    if p.scale == 0.0 {
        return trivial_solution(&p, d_out, d_in, ppt, opts.rho);
    }
    let n = d_out * d_in;
    let blocks = if ppt { 2 } else { 1 };
    let an = &p.a;
    let tol_scaled = opts.tol / p.scale;

    let (mut zs, mut us, mut rho) = match warm {
        Some(w) if w.z.len() == blocks && w.z[0].nrows() == n => (w.z.clone(), w.u.clone(), w.rho),
        _ => (vec![mixing_choi(d_out, d_in); blocks], vec![linalg::zeros(n); blocks], opts.rho),
    };
    let mut c_aff = zs[0].clone();
    let mut best: Option<Certificate> = None;
    let mut iterations = 0;
    let mut status = SdpStatus::MaxIters;
    let check_every = opts.check_every.max(1);

    while iterations < opts.max_iters {
        iterations += 1;
        let mut target = an.scale(1.0 / rho);
        for (z, u) in zs.iter().zip(&us) {
            target += z - u;
        }
        c_aff = project_affine(&target.scale(1.0 / blocks as f64), d_out, d_in);
        let mut r_sq = 0.0;
        let mut s_sq = 0.0;
        for j in 0..blocks {
            let v = &c_aff + &us[j];
            let z_new = if j == 0 { project_psd(&v) } else { project_ppt(&v, d_out, d_in) };
            s_sq += linalg::frobenius(&(&z_new - &zs[j])).powi(2);
            let r = &c_aff - &z_new;
            r_sq += linalg::frobenius(&r).powi(2);
            us[j] += r;
            zs[j] = z_new;
        }
        let r_norm = r_sq.sqrt();
        let s_norm = rho * s_sq.sqrt();

        if iterations % check_every == 0 || iterations == opts.max_iters {
            let cert = certificate(an, &c_aff, &zs, &us, rho, d_out, d_in, ppt);
            let done = cert.gap.abs() <= tol_scaled && r_norm <= opts.tol && s_norm <= opts.tol;
            if best.as_ref().is_none_or(|b| cert.gap.abs() < b.gap.abs()) {
                best = Some(cert);
            }
            if done {
                status = SdpStatus::Converged;
                break;
            }
        }

        if r_norm > 10.0 * s_norm {
            rho *= 2.0;
            us.iter_mut().for_each(|u| *u = u.scale(0.5));
        } else if s_norm > 10.0 * r_norm {
            rho *= 0.5;
            us.iter_mut().for_each(|u| *u = u.scale(2.0));
        }
    }

    let cert = best.unwrap_or_else(|| certificate(an, &c_aff, &zs, &us, rho, d_out, d_in, ppt));
    finish(&p, cert, d_out, d_in, iterations, status, WarmStart { z: zs, u: us, rho, lambda: None })
}
