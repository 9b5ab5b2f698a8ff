//! Symmetric logarithmic derivative and quantum Fisher information.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channels::ParamChannel;
use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::tnet::{MpoChain, Site};

/// Eigenvalue pairs with `λ_j + λ_k` at or below this are dropped.
pub const SUPPORT_CUTOFF: f64 = 1e-12;

const HERMITIAN_TOL: f64 = 1e-8;
const NEGATIVE_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct SldResult {
    pub l: CMat,
    pub qfi: f64,
    pub support_cutoff_used: f64,
}

pub fn sld(rho: &CMat, rho_dot: &CMat) -> Result<SldResult> {
    sld_with_cutoff(rho, rho_dot, SUPPORT_CUTOFF)
}

/// `L = Σ_{jk} 2⟨j|ρ̇|k⟩/(λ_j+λ_k) |j⟩⟨k|` over the eigenbasis of `ρ`.
pub fn sld_with_cutoff(rho: &CMat, rho_dot: &CMat, cutoff: f64) -> Result<SldResult> {
    if rho.shape() != rho_dot.shape() || !rho.is_square() {
        return Err(Error::Dimension("ρ and ρ̇ must be square and of equal size".into()));
    }
    let scale = linalg::max_abs(rho).max(linalg::max_abs(rho_dot)).max(1.0);
    for m in [rho, rho_dot] {
        let defect = linalg::hermiticity_defect(m);
        if defect > HERMITIAN_TOL * scale {
            return Err(Error::NotHermitian(defect));
        }
    }
    let (vals, vecs) = linalg::eigh(rho);
    if vals[0] < -NEGATIVE_TOL {
        return Err(Error::NegativeEigenvalue(vals[0]));
    }
    let n = rho.nrows();
    let dot_eig = vecs.adjoint() * linalg::hermitian_part(rho_dot) * &vecs;
    let l_eig = CMat::from_fn(n, n, |j, k| {
        let denom = vals[j] + vals[k];
        if denom > cutoff {
            dot_eig[(j, k)] * (2.0 / denom)
        } else {
            linalg::ZERO
        }
    });
    let l = linalg::hermitian_part(&(&vecs * l_eig * vecs.adjoint()));
    let qfi = linalg::trace_product(rho, &(&l * &l)).re;
    Ok(SldResult { l, qfi, support_cutoff_used: cutoff })
}

/// `2 Tr(ρ̇ X) − Tr(ρ X²)`, the variational lower bound on the QFI.
pub fn variational_value(rho: &CMat, rho_dot: &CMat, x: &CMat) -> f64 {
    2.0 * linalg::trace_product(rho_dot, x).re - linalg::trace_product(rho, &(x * x)).re
}

/// `‖ρL + Lρ − 2ρ̇‖_F`.
pub fn lyapunov_residual(rho: &CMat, rho_dot: &CMat, l: &CMat) -> f64 {
    linalg::frobenius(&(rho * l + l * rho - rho_dot.scale(2.0)))
}

/// Single-query QFI maximized over pure inputs on system ⊗ ancilla.
///
/// Alternates the SLD update and the input eigen-update from several
/// seeded Haar-random starts and keeps the best value.
pub fn qfi_single_channel_opt(channel: &ParamChannel, theta: f64, ancilla_dim: usize, seed: u64) -> Result<f64> {
    const STARTS: usize = 6;
    const MAX_ITERS: usize = 2000;
    let (e, edot) = channel.choi_pair(theta);
    let a = ancilla_dim.max(1);
    let dim = channel.d * a;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = f64::NEG_INFINITY;
    for _ in 0..STARTS {
        let psi = linalg::haar_state(dim, &mut rng);
        let mut chain =
            MpoChain::new(e.clone(), edot.clone(), linalg::projector(&psi), vec![], linalg::zeros(dim), a)?;
        let mut last = f64::NEG_INFINITY;
        for _ in 0..MAX_ITERS {
            let s = sld(&chain.output_state(), &chain.output_derivative())?;
            chain.set_x(s.l);
            let z = chain.objective_environment(Site::Rho0)?.transpose();
            let (vals, vecs) = linalg::eigh(&z);
            let top: Vec<_> = vecs.column(vals.len() - 1).iter().copied().collect();
            chain.set_rho0(linalg::projector(&top));
            let value = chain.objective()?;
            if (value - last).abs() <= 1e-13 * value.abs().max(1.0) {
                last = value;
                break;
            }
            last = value;
        }
        let s = sld(&chain.output_state(), &chain.output_derivative())?;
        best = best.max(s.qfi.max(last));
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{preset_bit_flip, preset_dephasing_direction};
    use crate::linalg::{c, max_abs};
    use rand::Rng;

    fn plus() -> Vec<num_complex::Complex64> {
        vec![c(0.5f64.sqrt(), 0.0); 2]
    }

    fn single_query(channel: &ParamChannel, theta: f64, psi: &[num_complex::Complex64]) -> (CMat, CMat) {
        let (e, edot) = channel.choi_pair(theta);
        let mut chain = MpoChain::new(e, edot, linalg::projector(psi), vec![], linalg::zeros(psi.len()), 1).unwrap();
        (chain.output_state(), chain.output_derivative())
    }

    #[test]
    fn zero_derivative() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rho = linalg::random_density(3, &mut rng);
        let s = sld(&rho, &linalg::zeros(3)).unwrap();
        assert_eq!(s.qfi, 0.0);
        assert!(max_abs(&s.l) == 0.0);
    }

    #[test]
    fn pure_phase_state() {
        let ch = preset_bit_flip(0.0).unwrap();
        let (rho, drho) = single_query(&ch, 0.3, &plus());
        let s = sld(&rho, &drho).unwrap();
        assert!((s.qfi - 1.0).abs() < 1e-12);
        assert!(lyapunov_residual(&rho, &drho, &s.l) < 1e-12);
    }

    #[test]
    fn sld_attains_variational_supremum() {
        let ch = preset_bit_flip(0.1).unwrap();
        let (rho, drho) = single_query(&ch, 1.0, &plus());
        let s = sld(&rho, &drho).unwrap();
        assert!((variational_value(&rho, &drho, &s.l) - s.qfi).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let h = linalg::random_hermitian(2, &mut rng).scale(rng.random_range(1e-4..1e-1));
            assert!(variational_value(&rho, &drho, &(&s.l + h)) <= s.qfi + 1e-12);
        }
    }

    #[test]
    fn variational_bound_and_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let rho = linalg::random_density(4, &mut rng);
            let mut drho = linalg::random_hermitian(4, &mut rng);
            let t = drho.trace() / c(4.0, 0.0);
            drho -= linalg::identity(4) * t;
            let s = sld(&rho, &drho).unwrap();
            assert!((s.qfi - linalg::trace_product(&rho, &(&s.l * &s.l)).re).abs() < 1e-10);
            assert!(lyapunov_residual(&rho, &drho, &s.l) <= 1e-8 * linalg::frobenius(&drho).max(1.0));
            assert!((variational_value(&rho, &drho, &s.l) - s.qfi).abs() < 1e-9 * s.qfi.max(1.0));
            for _ in 0..20 {
                let x = linalg::random_hermitian(4, &mut rng);
                assert!(variational_value(&rho, &drho, &x) <= s.qfi + 1e-9);
            }
            for k in [2.0, -1.0] {
                let sk = sld(&rho, &drho.scale(k)).unwrap();
                assert!((sk.qfi - k * k * s.qfi).abs() < 1e-10 * s.qfi.max(1.0));
            }
        }
    }

    #[test]
    fn invalid_inputs() {
        let bad = linalg::from_rows(&[&[c(1.0, 0.0), c(1.0, 0.0)], &[c(0.0, 0.0), c(0.0, 0.0)]]);
        assert!(matches!(sld(&bad, &linalg::zeros(2)), Err(Error::NotHermitian(_))));
        let neg = linalg::from_rows(&[&[c(1.5, 0.0), linalg::ZERO], &[linalg::ZERO, c(-0.5, 0.0)]]);
        assert!(matches!(sld(&neg, &linalg::zeros(2)), Err(Error::NegativeEigenvalue(_))));
    }

    #[test]
    fn optimal_single_query_noiseless() {
        let ch = preset_bit_flip(0.0).unwrap();
        assert!((qfi_single_channel_opt(&ch, 1.0, 1, 0).unwrap() - 1.0).abs() < 1e-9);
    }

    fn bloch_grid_max(ch: &ParamChannel, theta: f64) -> f64 {
        let mut best: f64 = 0.0;
        for i in 0..100 {
            for j in 0..100 {
                let polar = std::f64::consts::PI * (i as f64 + 0.5) / 100.0;
                let azim = std::f64::consts::TAU * j as f64 / 100.0;
                let psi = [
                    c((polar / 2.0).cos(), 0.0),
                    num_complex::Complex64::from_polar((polar / 2.0).sin(), azim),
                ];
                let (rho, drho) = single_query(ch, theta, &psi);
                best = best.max(sld(&rho, &drho).unwrap().qfi);
            }
        }
        best
    }

    #[test]
    fn optimal_single_query_against_bloch_grid() {
        let ch = preset_bit_flip(0.1).unwrap();
        let grid = bloch_grid_max(&ch, 1.0);
        let opt = qfi_single_channel_opt(&ch, 1.0, 1, 7).unwrap();
        assert!((opt - grid).abs() < 1e-3, "{opt} vs {grid}");
        let (rho, drho) = single_query(&ch, 1.0, &plus());
        assert!(sld(&rho, &drho).unwrap().qfi <= opt + 1e-9);
    }

    #[test]
    fn optimal_single_query_with_ancilla_against_grid() {
        // Coarse grid over 2-qubit pure states with real Schmidt form
        // cos(t)|a0⟩ + sin(t)|a1⟩, |a0⟩ ⊥ |a1⟩ on the system.
        let ch = preset_dephasing_direction(0.1).unwrap();
        let mut best: f64 = 0.0;
        for i in 0..=40 {
            let t = std::f64::consts::FRAC_PI_4 * i as f64 / 40.0;
            for j in 0..40 {
                let polar = std::f64::consts::PI * j as f64 / 40.0;
                for k in 0..40 {
                    let azim = std::f64::consts::TAU * k as f64 / 40.0;
                    let a0 = [c((polar / 2.0).cos(), 0.0), num_complex::Complex64::from_polar((polar / 2.0).sin(), azim)];
                    let a1 = [-a0[1].conj(), a0[0].conj()];
                    let psi: Vec<_> = vec![
                        a0[0] * t.cos(),
                        a1[0] * t.sin(),
                        a0[1] * t.cos(),
                        a1[1] * t.sin(),
                    ];
                    let (e, edot) = ch.choi_pair(1.0);
                    let mut chain =
                        MpoChain::new(e, edot, linalg::projector(&psi), vec![], linalg::zeros(4), 2).unwrap();
                    let q = sld(&chain.output_state(), &chain.output_derivative()).unwrap().qfi;
                    best = best.max(q);
                }
            }
        }
        let opt = qfi_single_channel_opt(&ch, 1.0, 2, 11).unwrap();
        assert!(opt >= best - 1e-9 && opt - best < 1e-2, "{opt} vs {best}");
    }
}
