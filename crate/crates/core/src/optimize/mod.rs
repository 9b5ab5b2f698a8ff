//! Alternating maximization of `2f₁ − f₂` over `X`, the input state and
//! the controls.
//!
//! Each outer iteration sets `X` to the SLD (which makes the objective equal
//! to the QFI of the current strategy), replaces the input state with the
//! top eigenvector of its environment, and then sweeps the controls with
//! the update rule of the chosen [`ControlMode`].

mod adagrad;
mod checkpoint;
mod scalar;

use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adagrad::Adagrad;
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use scalar::bounded_scalar_minimize;

use crate::ansatz::{self, AnsatzParams};
use crate::channels::{mix_with_depolarizing, ChoiOperator, ParamChannel};
use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::qfi;
use crate::sdp::{HybridBackend, SdpBackend, SdpOptions, SdpSolution, SdpStatus, WarmStart};
use crate::tnet::{identical_f1_f2, MpoChain, Site};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    ArbitraryCptp,
    IdenticalCptp,
    VariationalLocal,
    VariationalGlobal,
}

impl ControlMode {
    pub const ALL: [ControlMode; 4] =
        [Self::ArbitraryCptp, Self::IdenticalCptp, Self::VariationalLocal, Self::VariationalGlobal];

    pub fn name(self) -> &'static str {
        match self {
            Self::ArbitraryCptp => "arbitrary_cptp",
            Self::IdenticalCptp => "identical_cptp",
            Self::VariationalLocal => "variational_local",
            Self::VariationalGlobal => "variational_global",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }

    pub fn is_variational(self) -> bool {
        matches!(self, Self::VariationalLocal | Self::VariationalGlobal)
    }
}

/// Control operations of a strategy, one variant per [`ControlMode`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Controls {
    Arbitrary { choi: Vec<ChoiOperator> },
    Identical { choi: ChoiOperator },
    Local { params: Vec<AnsatzParams> },
    Global { params: AnsatzParams },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub n: usize,
    pub ancilla_dim: usize,
    #[serde(with = "crate::serde_cmat")]
    pub rho0: CMat,
    pub controls: Controls,
    /// Adagrad squared-gradient accumulators of the variational modes, one
    /// per local control or a single shared one. Carried through warm starts
    /// and checkpoints so a resumed run does not restart with full-size steps.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub optimizer_state: Vec<Vec<f64>>,
}

impl Strategy {
    pub fn mode(&self) -> ControlMode {
        match self.controls {
            Controls::Arbitrary { .. } => ControlMode::ArbitraryCptp,
            Controls::Identical { .. } => ControlMode::IdenticalCptp,
            Controls::Local { .. } => ControlMode::VariationalLocal,
            Controls::Global { .. } => ControlMode::VariationalGlobal,
        }
    }

    /// Joint system ⊗ ancilla dimension.
    pub fn dim(&self) -> usize {
        self.rho0.nrows()
    }

    /// The `N − 1` control Choi matrices in circuit order.
    pub fn control_chois(&self) -> Result<Vec<CMat>> {
        let k = self.n.saturating_sub(1);
        Ok(match &self.controls {
            Controls::Arbitrary { choi } => choi.iter().map(|c| c.mat.clone()).collect(),
            Controls::Identical { choi } => vec![choi.mat.clone(); k],
            Controls::Local { params } => params
                .iter()
                .map(|p| Ok(ansatz::choi_of_unitary(&ansatz::ansatz_unitary(p)?)?.mat))
                .collect::<Result<_>>()?,
            Controls::Global { params } => {
                vec![ansatz::choi_of_unitary(&ansatz::ansatz_unitary(params)?)?.mat; k]
            }
        })
    }

    /// Check shapes and physicality against a system dimension `d`.
    pub fn validate(&self, d: usize) -> Result<()> {
        let dim = d * self.ancilla_dim.max(1);
        if self.n == 0 {
            return Err(Error::Parameter("N must be at least 1".into()));
        }
        if self.rho0.shape() != (dim, dim) {
            return Err(Error::Dimension(format!("input state must be {dim}x{dim}")));
        }
        let tr = linalg::trace(&self.rho0);
        if (tr.re - 1.0).abs() > 1e-8 || linalg::min_eigenvalue(&self.rho0) < -1e-8 {
            return Err(Error::Parameter("input state is not a density matrix".into()));
        }
        let expected = match &self.controls {
            Controls::Arbitrary { choi } => Some(choi.len()),
            Controls::Local { params } => Some(params.len()),
            _ => None,
        };
        if expected.is_some_and(|len| len != self.n - 1) {
            return Err(Error::Parameter(format!("expected {} controls", self.n - 1)));
        }
        match &self.controls {
            Controls::Arbitrary { choi } => choi.iter().try_for_each(|c| check_control(c, dim))?,
            Controls::Identical { choi } => check_control(choi, dim)?,
            Controls::Local { params } => params.iter().try_for_each(|p| check_ansatz(p, dim))?,
            Controls::Global { params } => check_ansatz(params, dim)?,
        }
        Ok(())
    }

    /// Initial strategy for `N + 1` queries: the last control is repeated
    /// (shared controls are unchanged) and the input state is kept.
    pub fn extended(&self) -> Strategy {
        let mut next = self.clone();
        next.n += 1;
        match &mut next.controls {
            Controls::Arbitrary { choi } => {
                let last = choi.last().cloned().unwrap_or_else(|| ChoiOperator::identity_channel(self.dim()));
                choi.push(last);
            }
            Controls::Local { params } => {
                let last = params.last().cloned().unwrap_or_else(|| {
                    let q = self.dim().trailing_zeros() as usize;
                    AnsatzParams::zeros(q, default_layers(q))
                });
                params.push(last);
                if let Some(acc) = next.optimizer_state.last().cloned() {
                    next.optimizer_state.push(acc);
                }
            }
            Controls::Identical { .. } | Controls::Global { .. } => {}
        }
        next
    }

    /// Random initial strategy: Haar-random pure input, Stinespring-sampled
    /// CPTP controls, zero ansatz angles.
    pub fn random<R: Rng + ?Sized>(
        mode: ControlMode,
        n: usize,
        d: usize,
        ancilla_dim: usize,
        layers: Option<usize>,
        rng: &mut R,
    ) -> Result<Strategy> {
        if n == 0 {
            return Err(Error::Parameter("N must be at least 1".into()));
        }
        let a = ancilla_dim.max(1);
        let dim = d * a;
        let rho0 = linalg::projector(&linalg::haar_state(dim, rng));
        let n_qubits = || -> Result<usize> {
            if !dim.is_power_of_two() {
                return Err(Error::Parameter(format!("variational controls need a qubit register, got dimension {dim}")));
            }
            Ok(dim.trailing_zeros() as usize)
        };
        let controls = match mode {
            ControlMode::ArbitraryCptp => {
                Controls::Arbitrary { choi: (1..n).map(|_| random_cptp(dim, dim, rng)).collect() }
            }
            ControlMode::IdenticalCptp => Controls::Identical { choi: random_cptp(dim, dim, rng) },
            ControlMode::VariationalLocal => {
                let q = n_qubits()?;
                let l = layers.unwrap_or(default_layers(q));
                Controls::Local { params: vec![AnsatzParams::zeros(q, l); n - 1] }
            }
            ControlMode::VariationalGlobal => {
                let q = n_qubits()?;
                Controls::Global { params: AnsatzParams::zeros(q, layers.unwrap_or(default_layers(q))) }
            }
        };
        Ok(Strategy { n, ancilla_dim: a, rho0, controls, optimizer_state: vec![] })
    }
}

pub fn warm_start_extend(strategy: &Strategy) -> Strategy {
    strategy.extended()
}

/// One layer for a single qubit, three for two or more.
pub fn default_layers(n_qubits: usize) -> usize {
    if n_qubits <= 1 {
        1
    } else {
        3
    }
}

fn check_control(c: &ChoiOperator, dim: usize) -> Result<()> {
    if c.d_out != dim || c.d_in != dim || c.mat.nrows() != dim * dim {
        return Err(Error::Dimension(format!("control must act on dimension {dim}")));
    }
    if !c.is_channel(1e-7) {
        return Err(Error::Parameter("control is not a CPTP Choi operator".into()));
    }
    Ok(())
}

fn check_ansatz(p: &AnsatzParams, dim: usize) -> Result<()> {
    if p.dim() != dim {
        return Err(Error::Dimension(format!("ansatz acts on dimension {} but controls need {dim}", p.dim())));
    }
    ansatz::ansatz_unitary(p).map(|_| ())
}

/// Choi operator of a channel with a Haar-random Stinespring isometry.
pub fn random_cptp<R: Rng + ?Sized>(dim: usize, env_dim: usize, rng: &mut R) -> ChoiOperator {
    let v = linalg::haar_isometry(dim * env_dim, dim, rng);
    let mut choi = linalg::zeros(dim * dim);
    for k in 0..env_dim {
        let vec: Vec<_> = (0..dim * dim).map(|r| v[((r / dim) * env_dim + k, r % dim)]).collect();
        choi += linalg::projector(&vec);
    }
    ChoiOperator::new(choi, dim, dim).expect("square Choi")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    pub eps0: f64,
    pub decay: f64,
}

impl Perturbation {
    pub const PRESET: Perturbation = Perturbation { eps0: 1e-3, decay: 0.95 };

    /// Depolarizing weight at outer iteration `k`.
    pub fn at(&self, k: usize) -> f64 {
        self.eps0 * self.decay.powi(k as i32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub max_outer_iters: usize,
    /// Stop once the relative QFI change stays below this for `stall_iters`
    /// consecutive iterations.
    pub rel_tol: f64,
    pub stall_iters: usize,
    pub seed: u64,
    pub perturbation: Option<Perturbation>,
    pub sdp: SdpOptions,
    /// Restrict CPTP controls to PPT (entanglement-breaking for qubits).
    pub ppt: bool,
    pub learning_rate: f64,
    pub adagrad_eps: f64,
    pub line_search_tol: f64,
    pub local_steps: usize,
    pub global_steps: usize,
    /// Random picks per outer iteration in identical CPTP mode.
    pub identical_picks: usize,
    pub ansatz_layers: Option<usize>,
    /// Refresh `X` before every control update instead of once per sweep.
    pub x_every_control: bool,
    /// Variational gradient spot check period (0 disables).
    pub grad_check_every: usize,
    pub checkpoint_every: usize,
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            max_outer_iters: 200,
            rel_tol: 1e-7,
            stall_iters: 3,
            seed: 0,
            perturbation: None,
            sdp: SdpOptions::default(),
            ppt: false,
            learning_rate: 0.1,
            adagrad_eps: 1e-8,
            line_search_tol: 1e-6,
            local_steps: 5,
            global_steps: 1,
            identical_picks: 1,
            ansatz_layers: None,
            x_every_control: false,
            grad_check_every: 50,
            checkpoint_every: 25,
            checkpoint_path: None,
        }
    }
}

impl RunSettings {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rel_tol", self.rel_tol),
            ("sdp.tol", self.sdp.tol),
            ("sdp.rho", self.sdp.rho),
            ("learning_rate", self.learning_rate),
            ("adagrad_eps", self.adagrad_eps),
            ("line_search_tol", self.line_search_tol),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Parameter(format!("{name} must be positive, got {v}")));
        }
        if self.stall_iters == 0 || self.sdp.max_iters == 0 || self.identical_picks == 0 {
            return Err(Error::Parameter("stall_iters, sdp.max_iters and identical_picks must be at least 1".into()));
        }
        if let Some(p) = self.perturbation {
            if !(0.0..1.0).contains(&p.eps0) || !(0.0..=1.0).contains(&p.decay) {
                return Err(Error::Parameter("perturbation needs eps0 in [0, 1) and decay in [0, 1]".into()));
            }
        }
        if self.ansatz_layers == Some(0) {
            return Err(Error::Parameter("ansatz_layers must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    MaxIters,
}

/// Aggregate statistics over every control SDP of a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SdpStats {
    pub solves: usize,
    pub non_converged: usize,
    pub max_gap: f64,
    /// Largest duality gap divided by `max(1, |optimal value|)`.
    pub max_rel_gap: f64,
    pub rejected_updates: usize,
    /// Solver iterations summed over solves (ADMM steps plus Newton steps).
    pub solver_iterations: usize,
}

impl SdpStats {
    fn record(&mut self, sol: &SdpSolution) {
        self.solves += 1;
        self.solver_iterations += sol.iterations;
        self.max_gap = self.max_gap.max(sol.gap);
        self.max_rel_gap = self.max_rel_gap.max(sol.gap / sol.primal_value.abs().max(1.0));
        if sol.status != SdpStatus::Converged {
            self.non_converged += 1;
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimizationReport {
    pub channel: String,
    pub theta0: f64,
    pub n: usize,
    pub mode: ControlMode,
    pub ancilla_dim: usize,
    /// QFI after every `X` update, ending with the final value.
    pub qfi_trace: Vec<f64>,
    pub final_strategy: Strategy,
    /// `Tr(ρ L²)` from a fresh SLD of the final strategy.
    pub final_qfi: f64,
    /// `2f₁ − f₂` at `X = L`, as a cross-check of `final_qfi`.
    pub final_objective: f64,
    pub status: RunStatus,
    pub iterations: usize,
    pub wall_time: f64,
    pub sdp: SdpStats,
    /// Outer iterations where the QFI jumped by more than 50%.
    pub discontinuity_iters: Vec<usize>,
    pub discontinuity_flag: bool,
    /// Local-mode visits whose inner steps ended below their start.
    pub descent_violations: usize,
    pub local_visits: usize,
    /// `(iteration, max |gradient − finite difference|)` spot checks.
    pub grad_checks: Vec<(usize, f64)>,
    pub settings: RunSettings,
}

/// Set `X` to the SLD of the current output; returns the SLD result.
pub fn update_x(chain: &mut MpoChain) -> Result<qfi::SldResult> {
    let s = qfi::sld(&chain.output_state(), &chain.output_derivative())?;
    chain.set_x(s.l.clone());
    Ok(s)
}

/// Top eigenvector of the transposed input-state environment.
pub fn optimal_input_state(env_transposed: &CMat) -> CMat {
    let (vals, vecs) = linalg::eigh(env_transposed);
    let top: Vec<_> = vecs.column(vals.len() - 1).iter().copied().collect();
    linalg::projector(&top)
}

/// Replace the input state with the best pure state for the other sites.
pub fn update_input_state(chain: &mut MpoChain) -> Result<CMat> {
    let env = chain.objective_environment(Site::Rho0)?;
    let rho0 = optimal_input_state(&env.transpose());
    chain.set_rho0(rho0.clone());
    Ok(rho0)
}

#[derive(Clone, Debug)]
pub struct ControlUpdate {
    pub accepted: bool,
    pub previous_value: f64,
    pub solution: SdpSolution,
}

/// SDP update of control `k` against its objective environment; the chain
/// keeps the old control if the new one would lower the objective.
pub fn update_control_arbitrary(
    chain: &mut MpoChain,
    k: usize,
    backend: &dyn SdpBackend,
    ppt: bool,
    warm: Option<&WarmStart>,
) -> Result<ControlUpdate> {
    let dim = chain.dim();
    let coeff = linalg::hermitian_part(&chain.objective_environment(Site::Control(k))?.transpose());
    let old = &chain.controls()[k - 1];
    let previous_value = linalg::trace_product(old, &coeff).re;
    let solution = backend.solve(&coeff, dim, dim, ppt, warm)?;
    let accepted = solution.primal_value >= previous_value;
    if accepted {
        chain.set_control(k, solution.c_star.mat.clone())?;
    }
    Ok(ControlUpdate { accepted, previous_value, solution })
}

/// `sin²(λπ) C̃ + cos²(λπ) C`.
pub fn interpolate_controls(current: &CMat, candidate: &CMat, lambda: f64) -> CMat {
    let s = (lambda * std::f64::consts::PI).sin().powi(2);
    candidate.scale(s) + current.scale(1.0 - s)
}

#[derive(Clone, Debug)]
pub struct IdenticalUpdate {
    pub site: usize,
    pub lambda: f64,
    pub accepted: bool,
    pub previous_value: f64,
    pub value: f64,
    pub control: CMat,
    pub solution: SdpSolution,
}

/// Shared-control update: local SDP at a random site, then a bounded line
/// search over the interpolation toward the SDP optimum, scored by the
/// full identical-control objective.
#[allow(clippy::too_many_arguments)]
pub fn update_control_identical<R: Rng + ?Sized>(
    chain: &mut MpoChain,
    control: &CMat,
    rng: &mut R,
    backend: &dyn SdpBackend,
    ppt: bool,
    line_tol: f64,
    warm: Option<&WarmStart>,
) -> Result<IdenticalUpdate> {
    let n = chain.n();
    if n < 2 {
        return Err(Error::InvalidSite("no controls for N = 1".into()));
    }
    let site = rng.random_range(1..n);
    let dim = chain.dim();
    let a = chain.ancilla_dim();
    let coeff = linalg::hermitian_part(&chain.objective_environment(Site::Control(site))?.transpose());
    let solution = backend.solve(&coeff, dim, dim, ppt, warm)?;
    let (e, edot) = {
        let (e, edot) = chain.channel();
        (e.clone(), edot.clone())
    };
    let rho0 = chain.rho0().clone();
    let x = chain.x().clone();
    let objective = |c: &CMat| -> Result<f64> {
        let (f1, f2) = identical_f1_f2(&e, &edot, c, &rho0, &x, n, a)?;
        Ok(2.0 * f1 - f2)
    };
    let previous_value = objective(control)?;
    let candidate = &solution.c_star.mat;
    let mut failure = None;
    let (lam, neg) = bounded_scalar_minimize(
        |lam| match objective(&interpolate_controls(control, candidate, lam)) {
            Ok(v) => -v,
            Err(err) => {
                failure.get_or_insert(err);
                f64::INFINITY
            }
        },
        0.0,
        0.5,
        line_tol,
    )?;
    if let Some(err) = failure {
        return Err(err);
    }
    let (mut lambda, mut value) = (lam, -neg);
    let at_end = objective(candidate)?;
    if at_end > value {
        (lambda, value) = (0.5, at_end);
    }
    let accepted = value >= previous_value;
    let new_control = if accepted {
        if lambda == 0.5 {
            candidate.clone()
        } else {
            interpolate_controls(control, candidate, lambda)
        }
    } else {
        lambda = 0.0;
        value = previous_value;
        control.clone()
    };
    if accepted {
        chain.set_all_controls(&new_control);
    }
    Ok(IdenticalUpdate { site, lambda, accepted, previous_value, value, control: new_control, solution })
}

/// Gradient of `φ ↦ Tr[Choi(U(φ))·envᵀ]`, with `env` an objective environment.
pub fn environment_gradient(params: &AnsatzParams, env: &CMat) -> Result<Vec<f64>> {
    ansatz::ansatz_unitary(params)?;
    let w = env.transpose();
    Ok(ansatz::grad_objective(params, |phi| {
        let p = AnsatzParams { phi: phi.to_vec(), ..params.clone() };
        ansatz::choi_pairing(&p, &w).expect("validated ansatz")
    }))
}

/// `steps` Adagrad ascent steps on control `k` with its environment fixed.
/// Returns `(value before, value after)` of the local objective.
pub fn update_variational_local(
    chain: &mut MpoChain,
    k: usize,
    params: &mut AnsatzParams,
    adagrad: &mut Adagrad,
    steps: usize,
) -> Result<(f64, f64)> {
    let env = chain.objective_environment(Site::Control(k))?;
    let w = env.transpose();
    let before = ansatz::choi_pairing(params, &w)?;
    for _ in 0..steps {
        let g = environment_gradient(params, &env)?;
        adagrad.step(&mut params.phi, &g);
    }
    let after = ansatz::choi_pairing(params, &w)?;
    chain.set_control(k, ansatz::choi_of_unitary(&ansatz::ansatz_unitary(params)?)?.mat)?;
    Ok((before, after))
}

/// Gradient of the objective in the shared angles, from the summed
/// control environments.
pub fn variational_global_gradient(chain: &mut MpoChain, params: &AnsatzParams) -> Result<Vec<f64>> {
    let env = chain.summed_control_environment()?;
    environment_gradient(params, &env)
}

/// `steps` Adagrad steps on the shared angles; returns the last gradient.
pub fn update_variational_global(
    chain: &mut MpoChain,
    params: &mut AnsatzParams,
    adagrad: &mut Adagrad,
    steps: usize,
) -> Result<Vec<f64>> {
    let mut g = vec![0.0; params.n_params()];
    for _ in 0..steps {
        g = variational_global_gradient(chain, params)?;
        adagrad.step(&mut params.phi, &g);
        chain.set_all_controls(&ansatz::choi_of_unitary(&ansatz::ansatz_unitary(params)?)?.mat);
    }
    Ok(g)
}

/// Central finite difference of the full objective in the angles of the
/// controls selected by `sites` (all sharing `params`).
pub fn full_objective_gradient(chain: &MpoChain, params: &AnsatzParams, sites: &[usize]) -> Result<Vec<f64>> {
    let mut scratch = chain.clone();
    let mut failure = None;
    let grad = ansatz::grad_objective(params, |phi| {
        let p = AnsatzParams { phi: phi.to_vec(), ..params.clone() };
        let value = ansatz::ansatz_unitary(&p)
            .and_then(|u| ansatz::choi_of_unitary(&u))
            .and_then(|c| {
                for &k in sites {
                    scratch.set_control(k, c.mat.clone())?;
                }
                scratch.objective()
            });
        value.unwrap_or_else(|err| {
            failure.get_or_insert(err);
            f64::NAN
        })
    });
    match failure {
        Some(err) => Err(err),
        None => Ok(grad),
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Mutable state of one optimization run.
struct Driver<'a> {
    channel: &'a ParamChannel,
    theta0: f64,
    settings: &'a RunSettings,
    backend: &'a dyn SdpBackend,
    strategy: Strategy,
    chain: MpoChain,
    rng: ChaCha8Rng,
    warm: Vec<Option<WarmStart>>,
    local_adagrad: Vec<Adagrad>,
    global_adagrad: Option<Adagrad>,
    sdp: SdpStats,
    descent_violations: usize,
    local_visits: usize,
    grad_checks: Vec<(usize, f64)>,
}

impl Driver<'_> {
    fn set_perturbation(&mut self, k: usize) -> Result<()> {
        let eps = self.settings.perturbation.map_or(0.0, |p| p.at(k));
        let (e, edot) = if eps > 0.0 {
            mix_with_depolarizing(self.channel, eps)?.choi_pair(self.theta0)
        } else {
            self.channel.choi_pair(self.theta0)
        };
        self.chain.set_channel(e, edot)
    }

    fn refresh_x_if_requested(&mut self) -> Result<()> {
        if self.settings.x_every_control {
            update_x(&mut self.chain)?;
        }
        Ok(())
    }

    fn sweep(&mut self, iteration: usize) -> Result<()> {
        let n = self.strategy.n;
        if n < 2 {
            return Ok(());
        }
        let ppt = self.settings.ppt;
        match self.strategy.mode() {
            ControlMode::ArbitraryCptp => {
                self.chain.prepare_sweep();
                for k in 1..n {
                    self.refresh_x_if_requested()?;
                    let up = update_control_arbitrary(&mut self.chain, k, self.backend, ppt, self.warm[k - 1].as_ref())?;
                    self.sdp.record(&up.solution);
                    if !up.accepted {
                        self.sdp.rejected_updates += 1;
                    }
                    if let Controls::Arbitrary { choi } = &mut self.strategy.controls {
                        if up.accepted {
                            choi[k - 1] = up.solution.c_star.clone();
                        }
                    }
                    self.warm[k - 1] = Some(up.solution.warm);
                }
            }
            ControlMode::IdenticalCptp => {
                for _ in 0..self.settings.identical_picks {
                    self.refresh_x_if_requested()?;
                    let Controls::Identical { choi } = &self.strategy.controls else { unreachable!() };
                    let current = choi.mat.clone();
                    let up = update_control_identical(
                        &mut self.chain,
                        &current,
                        &mut self.rng,
                        self.backend,
                        ppt,
                        self.settings.line_search_tol,
                        self.warm[0].as_ref(),
                    )?;
                    self.sdp.record(&up.solution);
                    if !up.accepted {
                        self.sdp.rejected_updates += 1;
                    }
                    self.warm[0] = Some(up.solution.warm.clone());
                    if up.accepted {
                        let d = self.strategy.dim();
                        self.strategy.controls =
                            Controls::Identical { choi: ChoiOperator::new(up.control, d, d)? };
                    }
                }
            }
            ControlMode::VariationalLocal => {
                let check = self.grad_check_due(iteration);
                let check_site = if check { 1 + (iteration / self.settings.grad_check_every.max(1)) % (n - 1) } else { 0 };
                self.chain.prepare_sweep();
                for k in 1..n {
                    self.refresh_x_if_requested()?;
                    let Controls::Local { params } = &mut self.strategy.controls else { unreachable!() };
                    if k == check_site {
                        let env = self.chain.objective_environment(Site::Control(k))?;
                        let g = environment_gradient(&params[k - 1], &env)?;
                        let fd = full_objective_gradient(&self.chain, &params[k - 1], &[k])?;
                        self.grad_checks.push((iteration, max_abs_diff(&g, &fd)));
                    }
                    let (before, after) = update_variational_local(
                        &mut self.chain,
                        k,
                        &mut params[k - 1],
                        &mut self.local_adagrad[k - 1],
                        self.settings.local_steps,
                    )?;
                    self.local_visits += 1;
                    if after < before {
                        self.descent_violations += 1;
                    }
                }
            }
            ControlMode::VariationalGlobal => {
                let Controls::Global { params } = &mut self.strategy.controls else { unreachable!() };
                if self.settings.grad_check_every > 0 && iteration % self.settings.grad_check_every == 0 {
                    let g = variational_global_gradient(&mut self.chain, params)?;
                    let sites: Vec<usize> = (1..n).collect();
                    let fd = full_objective_gradient(&self.chain, params, &sites)?;
                    self.grad_checks.push((iteration, max_abs_diff(&g, &fd)));
                }
                let adagrad = self.global_adagrad.as_mut().expect("global mode has an optimizer");
                update_variational_global(&mut self.chain, params, adagrad, self.settings.global_steps)?;
            }
        }
        Ok(())
    }

    fn optimizer_state(&self) -> Vec<Vec<f64>> {
        self.local_adagrad.iter().chain(&self.global_adagrad).map(|opt| opt.accumulator().to_vec()).collect()
    }

    fn grad_check_due(&self, iteration: usize) -> bool {
        self.settings.grad_check_every > 0 && iteration % self.settings.grad_check_every == 0
    }

    fn write_checkpoint(&self, iteration: usize, trace: &[f64]) -> Result<()> {
        let Some(path) = &self.settings.checkpoint_path else { return Ok(()) };
        let mut strategy = self.strategy.clone();
        strategy.rho0 = self.chain.rho0().clone();
        strategy.optimizer_state = self.optimizer_state();
        let ck = Checkpoint {
            version: CHECKPOINT_VERSION,
            channel: self.channel.name.clone(),
            p: self.channel.p,
            theta0: self.theta0,
            iteration,
            qfi_trace: trace.to_vec(),
            strategy,
            settings: self.settings.clone(),
        };
        write_checkpoint(path, &ck)
    }
}

/// Run the alternating optimization from `init` or a seeded random start.
pub fn run(
    channel: &ParamChannel,
    theta0: f64,
    n: usize,
    mode: ControlMode,
    ancilla_dim: usize,
    settings: &RunSettings,
    init: Option<Strategy>,
) -> Result<OptimizationReport> {
    let backend = HybridBackend { opts: settings.sdp };
    run_with_backend(channel, theta0, n, mode, ancilla_dim, settings, init, &backend)
}

#[allow(clippy::too_many_arguments)]
pub fn run_with_backend(
    channel: &ParamChannel,
    theta0: f64,
    n: usize,
    mode: ControlMode,
    ancilla_dim: usize,
    settings: &RunSettings,
    init: Option<Strategy>,
    backend: &dyn SdpBackend,
) -> Result<OptimizationReport> {
    settings.validate()?;
    if !theta0.is_finite() {
        return Err(Error::Parameter("θ₀ must be finite".into()));
    }
    let start = Instant::now();
    let a = ancilla_dim.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let strategy = match init {
        Some(s) => {
            if s.n != n || s.mode() != mode || s.ancilla_dim.max(1) != a {
                return Err(Error::Parameter(format!(
                    "initial strategy is (N={}, {}, ancilla {}) but the run asks for (N={n}, {}, ancilla {a})",
                    s.n,
                    s.mode().name(),
                    s.ancilla_dim,
                    mode.name()
                )));
            }
            s.validate(channel.d)?;
            s
        }
        None => Strategy::random(mode, n, channel.d, a, settings.ansatz_layers, &mut rng)?,
    };
    let (e, edot) = channel.choi_pair(theta0);
    let dim = strategy.dim();
    let chain = MpoChain::new(e, edot, strategy.rho0.clone(), strategy.control_chois()?, linalg::zeros(dim), a)?;
    let n_sites = n.saturating_sub(1);
    let n_params = match &strategy.controls {
        Controls::Local { params } => params.first().map_or(0, AnsatzParams::n_params),
        Controls::Global { params } => params.n_params(),
        _ => 0,
    };
    let adagrad = |k: usize| {
        let mut opt = Adagrad::new(n_params, settings.learning_rate, settings.adagrad_eps);
        if let Some(acc) = strategy.optimizer_state.get(k).filter(|acc| acc.len() == n_params) {
            opt.set_accumulator(acc);
        }
        opt
    };
    let mut drv = Driver {
        channel,
        theta0,
        settings,
        backend,
        local_adagrad: if mode == ControlMode::VariationalLocal { (0..n_sites).map(adagrad).collect() } else { vec![] },
        global_adagrad: (mode == ControlMode::VariationalGlobal).then(|| adagrad(0)),
        strategy,
        chain,
        rng,
        warm: vec![None; n_sites.max(1)],
        sdp: SdpStats::default(),
        descent_violations: 0,
        local_visits: 0,
        grad_checks: vec![],
    };

    let mut trace: Vec<f64> = vec![];
    let mut discontinuity_iters = vec![];
    let mut status = RunStatus::MaxIters;
    let mut stall = 0;
    let mut iterations = 0;
    for it in 0..settings.max_outer_iters {
        iterations = it + 1;
        if settings.perturbation.is_some() {
            drv.set_perturbation(it)?;
        }
        let q = update_x(&mut drv.chain)?.qfi;
        if !q.is_finite() {
            return Err(Error::NonFinite(it));
        }
        if let Some(&prev) = trace.last() {
            // Early iterations of a random start jump legitimately.
            if it >= DISCONTINUITY_WARMUP && (q - prev).abs() > DISCONTINUITY_JUMP * prev.abs() {
                discontinuity_iters.push(it);
            }
            let scale = q.abs().max(prev.abs());
            let rel = if scale == 0.0 { 0.0 } else { (q - prev).abs() / scale };
            stall = if rel < settings.rel_tol { stall + 1 } else { 0 };
        }
        trace.push(q);
        if stall >= settings.stall_iters {
            status = RunStatus::Converged;
            break;
        }
        update_input_state(&mut drv.chain)?;
        drv.sweep(it)?;
        if settings.checkpoint_every > 0 && (it + 1) % settings.checkpoint_every == 0 {
            drv.write_checkpoint(it + 1, &trace)?;
        }
    }

    if settings.perturbation.is_some() {
        let (e, edot) = channel.choi_pair(theta0);
        drv.chain.set_channel(e, edot)?;
    }
    let s = update_x(&mut drv.chain)?;
    let final_objective = drv.chain.objective()?;
    if !s.qfi.is_finite() || !final_objective.is_finite() {
        return Err(Error::NonFinite(iterations));
    }
    if status == RunStatus::MaxIters || settings.perturbation.is_some() {
        trace.push(s.qfi);
    }
    drv.strategy.rho0 = drv.chain.rho0().clone();
    drv.strategy.optimizer_state = drv.optimizer_state();
    drv.write_checkpoint(iterations, &trace)?;

    Ok(OptimizationReport {
        channel: channel.name.clone(),
        theta0,
        n,
        mode,
        ancilla_dim: a,
        qfi_trace: trace,
        final_strategy: drv.strategy,
        final_qfi: s.qfi,
        final_objective,
        status,
        iterations,
        wall_time: start.elapsed().as_secs_f64(),
        sdp: drv.sdp,
        discontinuity_flag: !discontinuity_iters.is_empty(),
        discontinuity_iters,
        descent_violations: drv.descent_violations,
        local_visits: drv.local_visits,
        grad_checks: drv.grad_checks,
        settings: settings.clone(),
    })
}

/// Outer iterations exempt from the discontinuity flag.
pub const DISCONTINUITY_WARMUP: usize = 5;

/// Relative QFI jump between iterations that flags a possible rank change.
pub const DISCONTINUITY_JUMP: f64 = 0.5;
