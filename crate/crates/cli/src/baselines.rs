//! Reference strategies the optimized QFI is compared against.

use seqmetro_core::ansatz::choi_of_unitary;
use seqmetro_core::channels::{ChoiOperator, ParamChannel};
use seqmetro_core::error::Result;
use seqmetro_core::linalg::{self, CMat};
use seqmetro_core::optimize::{update_x, DISCONTINUITY_JUMP};
use seqmetro_core::qfi::qfi_single_channel_opt;
use seqmetro_core::tnet::MpoChain;

/// Offset used to probe the near-inverse QFI for a discontinuity.
pub const NEAR_INVERSE_PROBE: f64 = 1e-4;

/// Seed of the multi-start single-channel optimization.
pub const SINGLE_CHANNEL_SEED: u64 = 0;

fn plus_state() -> CMat {
    let h = linalg::c(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    linalg::projector(&[h, h])
}

/// QFI of `N` sequential queries with a fixed control between each pair.
fn fixed_strategy_qfi(channel: &ParamChannel, theta0: f64, n: usize, control: &CMat, rho0: CMat) -> Result<f64> {
    let (e, edot) = channel.choi_pair(theta0);
    let controls = vec![control.clone(); n.saturating_sub(1)];
    let dim = rho0.nrows();
    let mut chain = MpoChain::new(e, edot, rho0, controls, linalg::zeros(dim), 1)?;
    Ok(update_x(&mut chain)?.qfi)
}

/// Input `|+⟩`, identity controls, no ancilla.
pub fn control_free(channel: &ParamChannel, theta0: f64, n: usize) -> Result<f64> {
    let id = ChoiOperator::identity_channel(channel.d).mat;
    fixed_strategy_qfi(channel, theta0, n, &id, plus_state())
}

/// `N` independent uses of the best single-query strategy.
pub fn classical(channel: &ParamChannel, theta0: f64, n: usize, ancilla_dim: usize) -> Result<f64> {
    Ok(n as f64 * qfi_single_channel_opt(channel, theta0, ancilla_dim, SINGLE_CHANNEL_SEED)?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NearInverse {
    pub qfi: f64,
    /// The QFI changes by more than the discontinuity threshold when the
    /// offset moves by [`NEAR_INVERSE_PROBE`], i.e. the output state sits at
    /// a rank change.
    pub discontinuous: bool,
}

/// Identical controls `U_Z(θ₀ + ε)†` with input `|+⟩`.
pub fn near_inverse(channel: &ParamChannel, theta0: f64, n: usize, eps: f64) -> Result<NearInverse> {
    let at = |offset: f64| -> Result<f64> {
        let u = linalg::rz(theta0 + offset).adjoint();
        fixed_strategy_qfi(channel, theta0, n, &choi_of_unitary(&u)?.mat, plus_state())
    };
    let qfi = at(eps)?;
    let probe = at(eps + NEAR_INVERSE_PROBE)?;
    let scale = qfi.abs().max(probe.abs());
    let discontinuous = scale > 0.0 && (qfi - probe).abs() > DISCONTINUITY_JUMP * scale;
    Ok(NearInverse { qfi, discontinuous })
}

#[cfg(test)]
mod tests {
    use super::*;
    use seqmetro_core::channels::{preset_amplitude_damping, preset_bit_flip};

    #[test]
    fn noiseless_control_free_is_heisenberg() {
        let ch = preset_bit_flip(0.0).unwrap();
        for n in 1..=8 {
            let q = control_free(&ch, 1.0, n).unwrap();
            assert!((q - (n * n) as f64).abs() < 1e-9, "N={n}: {q}");
        }
    }

    #[test]
    fn fixed_input_is_below_optimized_single_query() {
        let ch = preset_bit_flip(0.1).unwrap();
        let fixed = control_free(&ch, 1.0, 1).unwrap();
        let opt = classical(&ch, 1.0, 1, 1).unwrap();
        assert!(fixed <= opt + 1e-9, "{fixed} > {opt}");
        assert!((classical(&ch, 1.0, 7, 1).unwrap() - 7.0 * opt).abs() < 1e-9 * opt);
    }

    #[test]
    fn amplitude_damping_baseline_closed_form() {
        // Populations carry no phase information and the coherence shrinks
        // by sqrt(1 - p) per query, so QFI = N²(1 - p)^N.
        let p = 0.1;
        let ch = preset_amplitude_damping(p).unwrap();
        for n in 1..=30 {
            let q = control_free(&ch, 1.0, n).unwrap();
            let expected = (n * n) as f64 * (1.0 - p).powi(n as i32);
            assert!((q - expected).abs() < 1e-9 * expected, "N={n}: {q} vs {expected}");
        }
    }

    #[test]
    fn near_inverse_approaches_the_asymptote() {
        let ch = preset_bit_flip(0.1).unwrap();
        let per_n: Vec<f64> =
            [5, 10, 20, 40].iter().map(|&n| near_inverse(&ch, 1.0, n, 0.01).unwrap().qfi / n as f64).collect();
        assert!(per_n.windows(2).all(|w| w[1] > w[0]), "{per_n:?}");
        assert!(per_n[3] < 9.0);
    }

    #[test]
    fn noiseless_near_inverse_keeps_heisenberg_scaling() {
        // Pure phase: the offset control only shifts the accumulated phase.
        let ch = preset_bit_flip(0.0).unwrap();
        let r = near_inverse(&ch, 1.0, 3, 0.01).unwrap();
        assert!((r.qfi - 9.0).abs() < 1e-8, "{}", r.qfi);
        assert!(!r.discontinuous);
    }

    #[test]
    fn exact_inverse_is_flagged() {
        let ch = preset_bit_flip(0.1).unwrap();
        let exact = near_inverse(&ch, 1.0, 10, 0.0).unwrap();
        assert!(exact.discontinuous);
        assert!(!near_inverse(&ch, 1.0, 10, 0.01).unwrap().discontinuous);
    }
}
