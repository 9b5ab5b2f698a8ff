//! Dense complex linear algebra helpers shared by every module.
//!
//! All operators are `nalgebra::DMatrix<Complex64>`. Composite indices are
//! row-major in the tensor factors: for `A ⊗ B` the entry `((i,j),(k,l))`
//! sits at row `i * dim_b + j`, column `k * dim_b + l`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub type CMat = DMatrix<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn zeros(n: usize) -> CMat {
    CMat::zeros(n, n)
}

pub fn from_rows(rows: &[&[Complex64]]) -> CMat {
    let nr = rows.len();
    let nc = rows.first().map_or(0, |r| r.len());
    CMat::from_fn(nr, nc, |i, j| rows[i][j])
}

pub fn pauli_x() -> CMat {
    from_rows(&[&[ZERO, ONE], &[ONE, ZERO]])
}

pub fn pauli_y() -> CMat {
    from_rows(&[&[ZERO, -I], &[I, ZERO]])
}

pub fn pauli_z() -> CMat {
    from_rows(&[&[ONE, ZERO], &[ZERO, -ONE]])
}

/// `e^{-i θ σz / 2}`.
pub fn rz(theta: f64) -> CMat {
    let h = theta / 2.0;
    from_rows(&[
        &[Complex64::from_polar(1.0, -h), ZERO],
        &[ZERO, Complex64::from_polar(1.0, h)],
    ])
}

/// `e^{-i θ σy / 2}`.
pub fn ry(theta: f64) -> CMat {
    let (s, co) = (theta / 2.0).sin_cos();
    from_rows(&[&[c(co, 0.0), c(-s, 0.0)], &[c(s, 0.0), c(co, 0.0)]])
}

pub fn dagger(m: &CMat) -> CMat {
    m.adjoint()
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

pub fn trace(m: &CMat) -> Complex64 {
    m.trace()
}

pub fn frobenius(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// `Tr(A B)` without forming the product.
pub fn trace_product(a: &CMat, b: &CMat) -> Complex64 {
    let n = a.nrows();
    let mut acc = ZERO;
    for i in 0..n {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

/// Elementwise `Σ A_ij B_ij`, i.e. `Tr(A Bᵀ)`.
pub fn pairing(a: &CMat, b: &CMat) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()).scale(0.5)
}

pub fn hermiticity_defect(m: &CMat) -> f64 {
    max_abs(&(m - m.adjoint()))
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
pub fn eigh(m: &CMat) -> (Vec<f64>, CMat) {
    let n = m.nrows();
    let eig = hermitian_part(m).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = CMat::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    (values, vectors)
}

pub fn min_eigenvalue(m: &CMat) -> f64 {
    eigh(m).0[0]
}

pub fn max_eigenvalue(m: &CMat) -> f64 {
    *eigh(m).0.last().expect("non-empty matrix")
}

/// Rebuild `V diag(f(λ)) V†`.
pub fn spectral_map(values: &[f64], vectors: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let n = vectors.nrows();
    let mut out = zeros(n);
    for (k, &lam) in values.iter().enumerate() {
        let w = f(lam);
        if w == 0.0 {
            continue;
        }
        let v = vectors.column(k);
        for i in 0..n {
            let vi = v[i] * w;
            for j in 0..n {
                out[(i, j)] += vi * v[j].conj();
            }
        }
    }
    out
}

pub fn projector(v: &[Complex64]) -> CMat {
    let n = v.len();
    CMat::from_fn(n, n, |i, j| v[i] * v[j].conj())
}

/// Partial trace over the first factor of a `(d_a·d_b)`-dim operator.
pub fn trace_first(m: &CMat, d_a: usize, d_b: usize) -> CMat {
    CMat::from_fn(d_b, d_b, |i, j| (0..d_a).map(|a| m[(a * d_b + i, a * d_b + j)]).sum())
}

/// Partial trace over the second factor of a `(d_a·d_b)`-dim operator.
pub fn trace_second(m: &CMat, d_a: usize, d_b: usize) -> CMat {
    CMat::from_fn(d_a, d_a, |i, j| (0..d_b).map(|b| m[(i * d_b + b, j * d_b + b)]).sum())
}

/// Partial transpose on the second factor.
pub fn transpose_second(m: &CMat, d_a: usize, d_b: usize) -> CMat {
    let mut out = zeros(d_a * d_b);
    for a in 0..d_a {
        for b in 0..d_b {
            for a2 in 0..d_a {
                for b2 in 0..d_b {
                    out[(a * d_b + b, a2 * d_b + b2)] = m[(a * d_b + b2, a2 * d_b + b)];
                }
            }
        }
    }
    out
}

pub fn random_ginibre<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMat {
    CMat::from_fn(rows, cols, |_, _| {
        c(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
    })
}

/// Orthonormalize the columns (modified Gram-Schmidt with phase fixing).
pub fn orthonormal_columns(mut m: CMat) -> CMat {
    let cols = m.ncols();
    for j in 0..cols {
        for k in 0..j {
            let proj: Complex64 = (0..m.nrows()).map(|i| m[(i, k)].conj() * m[(i, j)]).sum();
            for i in 0..m.nrows() {
                let v = m[(i, k)];
                m[(i, j)] -= proj * v;
            }
        }
        let norm = (0..m.nrows()).map(|i| m[(i, j)].norm_sqr()).sum::<f64>().sqrt();
        for i in 0..m.nrows() {
            m[(i, j)] /= norm;
        }
    }
    m
}

/// Haar-random isometry `dim_in → dim_out` (`dim_out ≥ dim_in`).
pub fn haar_isometry<R: Rng + ?Sized>(dim_out: usize, dim_in: usize, rng: &mut R) -> CMat {
    orthonormal_columns(random_ginibre(dim_out, dim_in, rng))
}

pub fn haar_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMat {
    haar_isometry(dim, dim, rng)
}

pub fn haar_state<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<Complex64> {
    haar_isometry(dim, 1, rng).column(0).iter().copied().collect()
}

pub fn random_hermitian<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMat {
    hermitian_part(&random_ginibre(dim, dim, rng))
}

/// Random full-rank density matrix `G G† / Tr(G G†)`.
pub fn random_density<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMat {
    let g = random_ginibre(dim, dim, rng);
    let m = &g * g.adjoint();
    let t = m.trace();
    m / t
}

/// Integer power by repeated squaring.
pub fn matrix_power(m: &CMat, mut exp: usize) -> CMat {
    let mut result = identity(m.nrows());
    let mut base = m.clone();
    while exp > 0 {
        if exp & 1 == 1 {
            result = &result * &base;
        }
        exp >>= 1;
        if exp > 0 {
            base = &base * &base;
        }
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn haar_unitary_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = haar_unitary(4, &mut rng);
        assert!(max_abs(&(u.adjoint() * &u - identity(4))) < 1e-12);
    }

    #[test]
    fn eigh_sorts_and_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = random_hermitian(4, &mut rng);
        let (vals, vecs) = eigh(&h);
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        assert!(max_abs(&(spectral_map(&vals, &vecs, |x| x) - &h)) < 1e-12);
    }

    #[test]
    fn partial_traces_of_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_density(2, &mut rng);
        let b = random_density(3, &mut rng);
        let ab = kron(&a, &b);
        assert!(max_abs(&(trace_first(&ab, 2, 3) - &b)) < 1e-14);
        assert!(max_abs(&(trace_second(&ab, 2, 3) - &a)) < 1e-14);
        assert!(max_abs(&(transpose_second(&ab, 2, 3) - kron(&a, &b.transpose()))) < 1e-14);
    }

    #[test]
    fn matrix_power_matches_repeated_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_ginibre(3, 3, &mut rng).scale(0.5);
        let mut direct = identity(3);
        for _ in 0..7 {
            direct = &direct * &m;
        }
        assert!(max_abs(&(matrix_power(&m, 7) - direct)) < 1e-10);
        assert_eq!(matrix_power(&m, 0), identity(3));
    }
}
