//! Layered single-qubit-rotation + CNOT-chain circuits used as unitary controls.
//!
//! Qubit 0 is the most significant tensor factor, so for the two-qubit
//! circuit qubit 0 is the system and qubit 1 the ancilla.

use serde::{Deserialize, Serialize};

use crate::channels::ChoiOperator;
use crate::error::{Error, Result};
use crate::linalg::{self, CMat, ONE, ZERO};

/// Central-difference step for [`grad_objective`].
pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnsatzParams {
    pub n_qubits: usize,
    pub n_layers: usize,
    /// Angles `(a, b, c)` per qubit per layer, layer-major.
    pub phi: Vec<f64>,
}

impl AnsatzParams {
    pub fn new(n_qubits: usize, n_layers: usize, phi: Vec<f64>) -> Result<Self> {
        let p = Self { n_qubits, n_layers, phi };
        p.validate()?;
        Ok(p)
    }

    pub fn zeros(n_qubits: usize, n_layers: usize) -> Self {
        Self { n_qubits, n_layers, phi: vec![0.0; 3 * n_qubits * n_layers] }
    }

    pub fn n_params(&self) -> usize {
        3 * self.n_qubits * self.n_layers
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    fn validate(&self) -> Result<()> {
        if self.n_qubits == 0 || self.n_layers == 0 {
            return Err(Error::Parameter("ansatz needs at least one qubit and one layer".into()));
        }
        if self.phi.len() != self.n_params() {
            return Err(Error::Parameter(format!(
                "expected {} angles for {} qubits x {} layers, got {}",
                self.n_params(),
                self.n_qubits,
                self.n_layers,
                self.phi.len()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Gate {
    Rotation { qubit: usize, angles: [f64; 3] },
    Cnot { control: usize, target: usize },
}

/// `R_z(c) R_y(b) R_z(a)`.
pub fn zyz(a: f64, b: f64, c: f64) -> CMat {
    linalg::rz(c) * linalg::ry(b) * linalg::rz(a)
}

/// Gates in application order.
pub fn circuit(params: &AnsatzParams) -> Result<Vec<Gate>> {
    params.validate()?;
    let n = params.n_qubits;
    let mut gates = Vec::with_capacity(params.n_layers * (2 * n - 1));
    for layer in params.phi.chunks(3 * n) {
        for (qubit, ang) in layer.chunks(3).enumerate() {
            gates.push(Gate::Rotation { qubit, angles: [ang[0], ang[1], ang[2]] });
        }
        for q in 0..n - 1 {
            gates.push(Gate::Cnot { control: q, target: q + 1 });
        }
    }
    Ok(gates)
}

fn embed_single(u: &CMat, qubit: usize, n: usize) -> CMat {
    let left = linalg::identity(1 << qubit);
    let right = linalg::identity(1 << (n - qubit - 1));
    linalg::kron(&linalg::kron(&left, u), &right)
}

fn cnot(control: usize, target: usize, n: usize) -> CMat {
    let dim = 1 << n;
    let (cb, tb) = (n - 1 - control, n - 1 - target);
    let mut m = linalg::zeros(dim);
    for x in 0..dim {
        let y = if x >> cb & 1 == 1 { x ^ (1 << tb) } else { x };
        m[(y, x)] = ONE;
    }
    m
}

pub fn ansatz_unitary(params: &AnsatzParams) -> Result<CMat> {
    let n = params.n_qubits;
    let mut u = linalg::identity(1 << n);
    for gate in circuit(params)? {
        let g = match gate {
            Gate::Rotation { qubit, angles: [a, b, c] } => embed_single(&zyz(a, b, c), qubit, n),
            Gate::Cnot { control, target } => cnot(control, target, n),
        };
        u = g * u;
    }
    Ok(u)
}

/// Rank-one Choi operator `(U ⊗ I)|I⟩⟨I|(U ⊗ I)†`.
pub fn choi_of_unitary(u: &CMat) -> Result<ChoiOperator> {
    if !u.is_square() {
        return Err(Error::Dimension("unitary must be square".into()));
    }
    let d = u.nrows();
    let defect = linalg::max_abs(&(u.adjoint() * u - linalg::identity(d)));
    if defect > 1e-10 {
        return Err(Error::Parameter(format!("matrix is not unitary (defect {defect:.3e})")));
    }
    let v: Vec<_> = (0..d * d).map(|r| u[(r / d, r % d)]).collect();
    ChoiOperator::new(linalg::projector(&v), d, d)
}

/// Component-wise central finite differences with step [`FD_STEP`].
pub fn grad_objective(params: &AnsatzParams, mut objective: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut phi = params.phi.clone();
    (0..phi.len())
        .map(|k| {
            let orig = phi[k];
            phi[k] = orig + FD_STEP;
            let up = objective(&phi);
            phi[k] = orig - FD_STEP;
            let down = objective(&phi);
            phi[k] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// `Tr[Choi(U)·W] = ⟨⟨U|W|U⟩⟩` for the ansatz unitary `U`.
pub fn choi_pairing(params: &AnsatzParams, w: &CMat) -> Result<f64> {
    let u = ansatz_unitary(params)?;
    let d = u.nrows();
    let v: Vec<_> = (0..d * d).map(|r| u[(r / d, r % d)]).collect();
    let mut acc = ZERO;
    for (i, vi) in v.iter().enumerate() {
        for (j, vj) in v.iter().enumerate() {
            acc += vi.conj() * w[(i, j)] * vj;
        }
    }
    Ok(acc.re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, max_abs, pauli_x, pauli_y, pauli_z};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// `exp(−iθσ/2)` via its power series, independent of the closed forms.
    fn expm_pauli(sigma: &CMat, theta: f64) -> CMat {
        let gen = sigma.map(|z| z * c(0.0, -theta / 2.0));
        let mut term = linalg::identity(2);
        let mut sum = term.clone();
        for k in 1..40 {
            term = &term * &gen / c(k as f64, 0.0);
            sum += &term;
        }
        sum
    }

    #[test]
    fn identity_and_cnot() {
        let u = ansatz_unitary(&AnsatzParams::zeros(1, 1)).unwrap();
        assert!(max_abs(&(u - linalg::identity(2))) < 1e-15);
        let u = ansatz_unitary(&AnsatzParams::zeros(2, 1)).unwrap();
        let expected = linalg::from_rows(&[
            &[ONE, ZERO, ZERO, ZERO],
            &[ZERO, ONE, ZERO, ZERO],
            &[ZERO, ZERO, ZERO, ONE],
            &[ZERO, ZERO, ONE, ZERO],
        ]);
        assert!(max_abs(&(u - expected)) < 1e-15);
    }

    #[test]
    fn single_qubit_matches_exponentials() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let (a, b, cc) = (rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
            let u = ansatz_unitary(&AnsatzParams::new(1, 1, vec![a, b, cc]).unwrap()).unwrap();
            let oracle = expm_pauli(&pauli_z(), cc) * expm_pauli(&pauli_y(), b) * expm_pauli(&pauli_z(), a);
            assert!(max_abs(&(u - oracle)) < 1e-12);
        }
    }

    #[test]
    fn unitary_and_choi_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for (n, l) in [(1, 1), (2, 3), (3, 2)] {
            let phi = (0..3 * n * l).map(|_| rng.random_range(-3.2..3.2)).collect();
            let p = AnsatzParams::new(n, l, phi).unwrap();
            let u = ansatz_unitary(&p).unwrap();
            let d = u.nrows();
            assert!(max_abs(&(u.adjoint() * &u - linalg::identity(d))) < 1e-12);
            let choi = choi_of_unitary(&u).unwrap();
            assert!(choi.is_channel(1e-10));
            assert!((linalg::trace(&choi.mat).re - d as f64).abs() < 1e-10);
            let purity = linalg::trace_product(&choi.mat, &choi.mat).re;
            assert!((purity - (d * d) as f64).abs() < 1e-9);
            assert_eq!(circuit(&p).unwrap().len(), l * (2 * n - 1));
        }
    }

    #[test]
    fn choi_of_identity() {
        let choi = choi_of_unitary(&linalg::identity(2)).unwrap();
        assert_eq!(choi, ChoiOperator::identity_channel(2));
        assert!(choi_of_unitary(&linalg::identity(2).scale(1.1)).is_err());
    }

    #[test]
    fn length_mismatch() {
        assert!(AnsatzParams::new(2, 3, vec![0.0; 17]).is_err());
        assert!(ansatz_unitary(&AnsatzParams { n_qubits: 1, n_layers: 1, phi: vec![0.0] }).is_err());
    }

    #[test]
    fn gradients() {
        let p = AnsatzParams::new(1, 1, vec![0.3, -0.2, 0.9]).unwrap();
        assert!(grad_objective(&p, |_| 2.5).iter().all(|&g| g == 0.0));
        let v = [0.7, -1.3, 2.0];
        let g = grad_objective(&p, |phi| phi.iter().zip(&v).map(|(a, b)| a * b).sum());
        for (gi, vi) in g.iter().zip(&v) {
            assert!((gi - vi).abs() < 1e-9);
        }

        // Single R_z: derivative of Tr[σx U ρ U†] is −Tr[σx (iσz/2 UρU† − UρU† iσz/2)].
        let rho = linalg::from_rows(&[&[c(0.6, 0.0), c(0.2, -0.1)], &[c(0.2, 0.1), c(0.4, 0.0)]]);
        let a = 0.8;
        let obj = |phi: &[f64]| {
            let u = zyz(phi[0], phi[1], phi[2]);
            linalg::trace_product(&pauli_x(), &(&u * &rho * u.adjoint())).re
        };
        let p = AnsatzParams::new(1, 1, vec![a, 0.0, 0.0]).unwrap();
        let g = grad_objective(&p, obj);
        let u = linalg::rz(a);
        let out = &u * &rho * u.adjoint();
        let hz = pauli_z().map(|z| z * c(0.0, 0.5));
        let analytic = -linalg::trace_product(&pauli_x(), &(&hz * &out - &out * &hz)).re;
        assert!((g[0] - analytic).abs() < 1e-7, "{} vs {analytic}", g[0]);
    }

    #[test]
    fn choi_pairing_matches_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = AnsatzParams::new(2, 3, (0..18).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
        let w = linalg::random_hermitian(16, &mut rng);
        let choi = choi_of_unitary(&ansatz_unitary(&p).unwrap()).unwrap();
        let direct = linalg::pairing(&choi.mat, &w.transpose()).re;
        assert!((choi_pairing(&p, &w).unwrap() - direct).abs() < 1e-10);
    }
}
