//! Parametrized qubit channels in Kraus form and their Choi operators.
//!
//! Choi operators live on `out ⊗ in` with the unnormalized maximally
//! entangled vector `|I⟩ = Σ_j |j⟩|j⟩`, so that
//! `C[(o,i),(o',i')] = Σ_k K_k[o,i] conj(K_k[o',i'])`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, c, rz, CMat, ZERO};

/// Channel Choi operator with its subsystem dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChoiOperator {
    #[serde(with = "crate::serde_cmat")]
    pub mat: CMat,
    pub d_out: usize,
    pub d_in: usize,
}

impl ChoiOperator {
    pub fn new(mat: CMat, d_out: usize, d_in: usize) -> Result<Self> {
        if mat.nrows() != d_out * d_in || mat.ncols() != d_out * d_in {
            return Err(Error::Dimension(format!(
                "Choi matrix {}x{} does not match d_out*d_in = {}",
                mat.nrows(),
                mat.ncols(),
                d_out * d_in
            )));
        }
        Ok(Self { mat, d_out, d_in })
    }

    /// Choi operator of the identity channel on `d` dimensions.
    pub fn identity_channel(d: usize) -> Self {
        choi_from_kraus(&[linalg::identity(d)]).expect("square Kraus operator")
    }

    /// `Tr_out C`, which equals `I_in` for trace-preserving maps.
    pub fn trace_out(&self) -> CMat {
        linalg::trace_first(&self.mat, self.d_out, self.d_in)
    }

    /// Largest deviation from the CPTP conditions: `(min eigenvalue, ‖Tr_out C − I‖_max)`.
    pub fn cptp_defect(&self) -> (f64, f64) {
        let min_eig = linalg::min_eigenvalue(&self.mat);
        let tp = linalg::max_abs(&(self.trace_out() - linalg::identity(self.d_in)));
        (min_eig, tp)
    }

    pub fn is_channel(&self, tol: f64) -> bool {
        let (min_eig, tp) = self.cptp_defect();
        linalg::hermiticity_defect(&self.mat) <= tol && min_eig >= -tol && tp <= tol
    }

    /// Apply the channel to an input operator: `out[o,o'] = Σ C[(o,i),(o',i')] ρ[i,i']`.
    pub fn apply(&self, rho: &CMat) -> CMat {
        let (dout, din) = (self.d_out, self.d_in);
        let mut out = linalg::zeros(dout);
        for o in 0..dout {
            for o2 in 0..dout {
                let mut acc = ZERO;
                for i in 0..din {
                    for i2 in 0..din {
                        acc += self.mat[(o * din + i, o2 * din + i2)] * rho[(i, i2)];
                    }
                }
                out[(o, o2)] = acc;
            }
        }
        out
    }
}

type KrausFn = Arc<dyn Fn(f64) -> Vec<CMat> + Send + Sync>;

/// A θ-parametrized channel with analytic Kraus derivatives.
///
/// `depolarizing` mixes the Choi operator with the completely depolarizing
/// channel, `(1−ε)·E_θ + ε·I/d`; the Kraus accessors return the unmixed set.
#[derive(Clone)]
pub struct ParamChannel {
    pub name: String,
    pub d: usize,
    pub p: f64,
    pub depolarizing: f64,
    kraus: KrausFn,
    dkraus: KrausFn,
}

impl fmt::Debug for ParamChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParamChannel")
            .field("name", &self.name)
            .field("d", &self.d)
            .field("p", &self.p)
            .field("depolarizing", &self.depolarizing)
            .finish()
    }
}

/// Preset vocabulary used by configuration files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    BitFlip,
    AmplitudeDamping,
    DephasingDirection,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::BitFlip => "bit_flip",
            Preset::AmplitudeDamping => "amplitude_damping",
            Preset::DephasingDirection => "dephasing_direction",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "bit_flip" => Some(Preset::BitFlip),
            "amplitude_damping" => Some(Preset::AmplitudeDamping),
            "dephasing_direction" => Some(Preset::DephasingDirection),
            _ => None,
        }
    }

    pub fn build(self, p: f64) -> Result<ParamChannel> {
        match self {
            Preset::BitFlip => preset_bit_flip(p),
            Preset::AmplitudeDamping => preset_amplitude_damping(p),
            Preset::DephasingDirection => preset_dephasing_direction(p),
        }
    }
}

impl ParamChannel {
    pub fn from_fns(
        name: impl Into<String>,
        d: usize,
        kraus: impl Fn(f64) -> Vec<CMat> + Send + Sync + 'static,
        dkraus: impl Fn(f64) -> Vec<CMat> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            d,
            p: f64::NAN,
            depolarizing: 0.0,
            kraus: Arc::new(kraus),
            dkraus: Arc::new(dkraus),
        }
    }

    pub fn kraus_at(&self, theta: f64) -> Vec<CMat> {
        (self.kraus)(theta)
    }

    pub fn dkraus_at(&self, theta: f64) -> Vec<CMat> {
        (self.dkraus)(theta)
    }

    pub fn choi_at(&self, theta: f64) -> CMat {
        let base = choi_from_kraus(&self.kraus_at(theta)).expect("preset Kraus sets are square").mat;
        if self.depolarizing == 0.0 {
            return base;
        }
        let d = self.d as f64;
        base.scale(1.0 - self.depolarizing) + linalg::identity(self.d * self.d).scale(self.depolarizing / d)
    }

    pub fn dchoi_at(&self, theta: f64) -> CMat {
        let base = choi_derivative(&self.kraus_at(theta), &self.dkraus_at(theta))
            .expect("preset Kraus sets are square");
        base.scale(1.0 - self.depolarizing)
    }

    /// `(E_θ, dE_θ/dθ)` as Choi matrices.
    pub fn choi_pair(&self, theta: f64) -> (CMat, CMat) {
        (self.choi_at(theta), self.dchoi_at(theta))
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) || !p.is_finite() {
        return Err(Error::Parameter(format!("noise strength p = {p} outside [0, 1]")));
    }
    Ok(())
}

fn check_kraus(kraus: &[CMat]) -> Result<usize> {
    let first = kraus.first().ok_or_else(|| Error::Dimension("empty Kraus set".into()))?;
    let d = first.nrows();
    for k in kraus {
        if k.nrows() != d || k.ncols() != d {
            return Err(Error::Dimension(format!(
                "Kraus operator {}x{} in a set of {d}x{d} operators",
                k.nrows(),
                k.ncols()
            )));
        }
    }
    Ok(d)
}

/// `Σ_i (K_i ⊗ I)|I⟩⟨I|(K_i ⊗ I)†`.
pub fn choi_from_kraus(kraus: &[CMat]) -> Result<ChoiOperator> {
    let d = check_kraus(kraus)?;
    let mut mat = linalg::zeros(d * d);
    for k in kraus {
        let v: Vec<_> = (0..d * d).map(|r| k[(r / d, r % d)]).collect();
        mat += linalg::projector(&v);
    }
    ChoiOperator::new(mat, d, d)
}

/// `Σ_i [(dK_i⊗I)|I⟩⟨I|(K_i⊗I)† + (K_i⊗I)|I⟩⟨I|(dK_i⊗I)†]`.
pub fn choi_derivative(kraus: &[CMat], dkraus: &[CMat]) -> Result<CMat> {
    let d = check_kraus(kraus)?;
    if dkraus.len() != kraus.len() {
        return Err(Error::Dimension(format!(
            "{} Kraus operators but {} derivatives",
            kraus.len(),
            dkraus.len()
        )));
    }
    if check_kraus(dkraus)? != d {
        return Err(Error::Dimension("derivative Kraus dimension differs".into()));
    }
    let mut mat = linalg::zeros(d * d);
    for (k, dk) in kraus.iter().zip(dkraus) {
        for r in 0..d * d {
            let dkr = dk[(r / d, r % d)];
            let kr = k[(r / d, r % d)];
            for s in 0..d * d {
                mat[(r, s)] += dkr * k[(s / d, s % d)].conj() + kr * dk[(s / d, s % d)].conj();
            }
        }
    }
    Ok(mat)
}

/// Generator factor `−iσz/2` of the signal unitary.
fn signal_generator() -> CMat {
    linalg::pauli_z().scale(0.5) * c(0.0, -1.0)
}

/// Wraps noise Kraus operators with the signal `U_Z(θ)` applied after the noise.
fn phase_after_noise(name: &str, p: f64, noise: Vec<CMat>) -> ParamChannel {
    let noise_d = noise.clone();
    let mut ch = ParamChannel::from_fns(
        name,
        2,
        move |theta| noise.iter().map(|k| rz(theta) * k).collect(),
        move |theta| {
            let g = signal_generator();
            noise_d.iter().map(|k| &g * rz(theta) * k).collect()
        },
    );
    ch.p = p;
    ch
}

pub fn preset_bit_flip(p: f64) -> Result<ParamChannel> {
    check_p(p)?;
    let noise = vec![linalg::identity(2).scale((1.0 - p).sqrt()), linalg::pauli_x().scale(p.sqrt())];
    Ok(phase_after_noise(Preset::BitFlip.name(), p, noise))
}

pub fn preset_amplitude_damping(p: f64) -> Result<ParamChannel> {
    check_p(p)?;
    let k1 = linalg::from_rows(&[&[c(1.0, 0.0), ZERO], &[ZERO, c((1.0 - p).sqrt(), 0.0)]]);
    let k2 = linalg::from_rows(&[&[ZERO, c(p.sqrt(), 0.0)], &[ZERO, ZERO]]);
    Ok(phase_after_noise(Preset::AmplitudeDamping.name(), p, vec![k1, k2]))
}

/// θ enters only through the dephasing axis; there is no signal unitary.
pub fn preset_dephasing_direction(p: f64) -> Result<ParamChannel> {
    check_p(p)?;
    let sp = p.sqrt();
    let k1 = linalg::identity(2).scale((1.0 - p).sqrt());
    let k1_kraus = k1.clone();
    let mut ch = ParamChannel::from_fns(
        Preset::DephasingDirection.name(),
        2,
        move |theta| {
            let (s, co) = theta.sin_cos();
            let k2 = (linalg::pauli_z().scale(co) + linalg::pauli_x().scale(s)).scale(sp);
            vec![k1_kraus.clone(), k2]
        },
        move |theta| {
            let (s, co) = theta.sin_cos();
            let dk2 = (linalg::pauli_z().scale(-s) + linalg::pauli_x().scale(co)).scale(sp);
            vec![linalg::zeros(2), dk2]
        },
    );
    ch.p = p;
    Ok(ch)
}

/// Convex mixture with the completely depolarizing channel at the Choi level.
pub fn mix_with_depolarizing(channel: &ParamChannel, eps: f64) -> Result<ParamChannel> {
    if !(0.0..=1.0).contains(&eps) || !eps.is_finite() {
        return Err(Error::Parameter(format!("depolarizing weight {eps} outside [0, 1]")));
    }
    let mut out = channel.clone();
    // Mixing composes: (1−ε₂)[(1−ε₁)E + ε₁ D] + ε₂ D.
    out.depolarizing = 1.0 - (1.0 - channel.depolarizing) * (1.0 - eps);
    Ok(out)
}
