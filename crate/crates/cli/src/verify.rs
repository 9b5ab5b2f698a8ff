//! Cross-check of a finished strategy against dense link products.

use serde::{Deserialize, Serialize};

use seqmetro_core::channels::ParamChannel;
use seqmetro_core::comb::dense_strategy_output;
use seqmetro_core::error::Result;
use seqmetro_core::linalg::{self, CMat};
use seqmetro_core::optimize::Strategy;
use seqmetro_core::qfi;
use seqmetro_core::tnet::{MpoChain, Site};

/// Largest N the CLI verifies densely.
pub const VERIFY_MAX_N: usize = 4;

/// Relative agreement required between the two evaluations.
pub const VERIFY_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub state_err: f64,
    pub derivative_err: f64,
    pub f1_err: f64,
    pub f2_err: f64,
    /// Worst mismatch of `Tr[T·envᵀ]` against the dense objective over the
    /// input state and every control site.
    pub environment_err: f64,
    pub passed: bool,
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn rel_mat(a: &CMat, b: &CMat) -> f64 {
    linalg::max_abs(&(a - b)) / linalg::max_abs(a).max(linalg::max_abs(b)).max(1.0)
}

/// Compare the cached tensor-network contractions of `strategy` at its SLD
/// with the dense oracle.
pub fn verify_strategy(channel: &ParamChannel, theta0: f64, strategy: &Strategy) -> Result<Verification> {
    let (e, edot) = channel.choi_pair(theta0);
    let controls = strategy.control_chois()?;
    let a = strategy.ancilla_dim;
    let (rho_d, drho_d) = dense_strategy_output(&e, &edot, &controls, &strategy.rho0, strategy.n, a)?;
    let sld = qfi::sld(&rho_d, &drho_d)?;
    let x = sld.l;
    let x_sq = &x * &x;
    let f1_d = linalg::trace_product(&drho_d, &x).re;
    let f2_d = linalg::trace_product(&rho_d, &x_sq).re;
    let objective = 2.0 * f1_d - f2_d;

    let mut chain = MpoChain::new(e, edot, strategy.rho0.clone(), controls.clone(), x, a)?;
    let rho_t = chain.output_state();
    let drho_t = chain.output_derivative();
    let (f1_t, f2_t) = chain.f1_f2()?;

    let mut environment_err = rel(linalg::pairing(&strategy.rho0, &chain.objective_environment(Site::Rho0)?).re, objective);
    for (k, c) in controls.iter().enumerate() {
        let env = chain.objective_environment(Site::Control(k + 1))?;
        environment_err = environment_err.max(rel(linalg::pairing(c, &env).re, objective));
    }

    let mut v = Verification {
        state_err: rel_mat(&rho_t, &rho_d),
        derivative_err: rel_mat(&drho_t, &drho_d),
        f1_err: rel(f1_t, f1_d),
        f2_err: rel(f2_t, f2_d),
        environment_err,
        passed: false,
    };
    v.passed = [v.state_err, v.derivative_err, v.f1_err, v.f2_err, v.environment_err].iter().all(|&e| e <= VERIFY_TOL);
    Ok(v)
}
