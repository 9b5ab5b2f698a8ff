//! Choi-operator algebra on labelled tensor factors and the dense
//! strategy evaluator used to cross-check the tensor-network engine.
//!
//! System wires are numbered as in a sequential strategy: the `i`-th query
//! maps `Sys(2i-1) → Sys(2i)` and the `i`-th control maps
//! `Sys(2i) ⊗ Anc(i) → Sys(2i+1) ⊗ Anc(i+1)`. The input state lives on
//! `Sys(1) ⊗ Anc(1)`.

use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, ZERO};

/// Largest query count accepted by [`dense_strategy_output`].
pub const DENSE_MAX_N: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Sys(usize),
    Anc(usize),
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Sys(k) => write!(f, "H{k}"),
            Label::Anc(k) => write!(f, "H{k}^a"),
        }
    }
}

/// An operator on `⊗_k H_{labels[k]}`, factors ordered as in `labels`.
#[derive(Clone, Debug)]
pub struct LabeledOperator {
    pub mat: CMat,
    pub labels: Vec<(Label, usize)>,
}

fn strides(labels: &[(Label, usize)]) -> Vec<usize> {
    let mut s = vec![1; labels.len()];
    for k in (0..labels.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * labels[k + 1].1;
    }
    s
}

/// Enumerates all multi-indices over `dims`, row-major.
fn for_each_multi(dims: &[usize], mut f: impl FnMut(&[usize])) {
    let total: usize = dims.iter().product();
    let mut idx = vec![0; dims.len()];
    for _ in 0..total {
        f(&idx);
        for k in (0..dims.len()).rev() {
            idx[k] += 1;
            if idx[k] < dims[k] {
                break;
            }
            idx[k] = 0;
        }
    }
}

impl LabeledOperator {
    pub fn new(mat: CMat, labels: Vec<(Label, usize)>) -> Result<Self> {
        let dim: usize = labels.iter().map(|l| l.1).product();
        if mat.nrows() != dim || mat.ncols() != dim {
            return Err(Error::Dimension(format!(
                "operator {}x{} but labels give dimension {dim}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        for (k, (l, _)) in labels.iter().enumerate() {
            if labels[..k].iter().any(|(m, _)| m == l) {
                return Err(Error::Dimension(format!("duplicate label {l}")));
            }
        }
        Ok(Self { mat, labels })
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    fn position(&self, label: Label) -> Result<usize> {
        self.labels
            .iter()
            .position(|(l, _)| *l == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    fn dim_of(&self, label: Label) -> Option<usize> {
        self.labels.iter().find(|(l, _)| *l == label).map(|l| l.1)
    }

    /// Flat index for a map `label → value`, given as values aligned with `order`.
    fn flat(&self, order: &[usize], values: &[usize]) -> usize {
        let st = strides(&self.labels);
        order.iter().zip(values).map(|(&pos, &v)| st[pos] * v).sum()
    }

    pub fn partial_trace(&self, traced: &[Label]) -> Result<Self> {
        let traced_pos: Vec<usize> = traced.iter().map(|&l| self.position(l)).collect::<Result<_>>()?;
        let kept: Vec<usize> = (0..self.labels.len()).filter(|k| !traced_pos.contains(k)).collect();
        let kept_dims: Vec<usize> = kept.iter().map(|&k| self.labels[k].1).collect();
        let traced_dims: Vec<usize> = traced_pos.iter().map(|&k| self.labels[k].1).collect();
        let st = strides(&self.labels);
        let out_dim: usize = kept_dims.iter().product();
        let mut out = linalg::zeros(out_dim);
        let mut rows = Vec::with_capacity(out_dim);
        for_each_multi(&kept_dims, |v| rows.push(kept.iter().zip(v).map(|(&k, &x)| st[k] * x).sum::<usize>()));
        let mut traced_offsets = Vec::new();
        for_each_multi(&traced_dims, |v| {
            traced_offsets.push(traced_pos.iter().zip(v).map(|(&k, &x)| st[k] * x).sum::<usize>())
        });
        for (r, &base_r) in rows.iter().enumerate() {
            for (s, &base_s) in rows.iter().enumerate() {
                out[(r, s)] = traced_offsets.iter().map(|&t| self.mat[(base_r + t, base_s + t)]).sum();
            }
        }
        let labels = kept.iter().map(|&k| self.labels[k]).collect();
        Self::new(out, labels)
    }

    pub fn partial_transpose(&self, label: Label) -> Result<Self> {
        let pos = self.position(label)?;
        let st = strides(&self.labels)[pos];
        let d = self.labels[pos].1;
        let n = self.dim();
        let digit = |x: usize| (x / st) % d;
        let out = CMat::from_fn(n, n, |r, s| {
            let (dr, ds) = (digit(r), digit(s));
            self.mat[(r - dr * st + ds * st, s - ds * st + dr * st)]
        });
        Self::new(out, self.labels.clone())
    }

    /// Permute tensor factors into the given label order.
    pub fn reorder(&self, order: &[Label]) -> Result<Self> {
        if order.len() != self.labels.len() {
            return Err(Error::Dimension("reorder must list every label".into()));
        }
        let pos: Vec<usize> = order.iter().map(|&l| self.position(l)).collect::<Result<_>>()?;
        let new_labels: Vec<(Label, usize)> = pos.iter().map(|&k| self.labels[k]).collect();
        let dims: Vec<usize> = new_labels.iter().map(|l| l.1).collect();
        let mut map = Vec::with_capacity(self.dim());
        for_each_multi(&dims, |v| map.push(self.flat(&pos, v)));
        let n = self.dim();
        let out = CMat::from_fn(n, n, |r, s| self.mat[(map[r], map[s])]);
        Self::new(out, new_labels)
    }
}

/// Link product `A * B = Tr_{A∩B}[(I ⊗ A^{T_{A∩B}})(B ⊗ I)]`.
///
/// The result carries the free labels of `B` followed by the free labels
/// of `A`.
pub fn link_product(a: &LabeledOperator, b: &LabeledOperator) -> Result<LabeledOperator> {
    let mut shared = Vec::new();
    for &(l, d) in &a.labels {
        if let Some(db) = b.dim_of(l) {
            if db != d {
                return Err(Error::Dimension(format!("label {l} has dimension {d} in A but {db} in B")));
            }
            shared.push((l, d));
        }
    }
    let free_a: Vec<(Label, usize)> = a.labels.iter().copied().filter(|(l, _)| b.dim_of(*l).is_none()).collect();
    let free_b: Vec<(Label, usize)> = b.labels.iter().copied().filter(|(l, _)| a.dim_of(*l).is_none()).collect();

    let pos_in = |op: &LabeledOperator, ls: &[(Label, usize)]| -> Vec<usize> {
        ls.iter().map(|(l, _)| op.position(*l).expect("label present")).collect()
    };
    let a_shared = pos_in(a, &shared);
    let a_free = pos_in(a, &free_a);
    let b_shared = pos_in(b, &shared);
    let b_free = pos_in(b, &free_b);
    let dims = |ls: &[(Label, usize)]| ls.iter().map(|l| l.1).collect::<Vec<_>>();

    // Flat offsets for every multi-index of each group.
    let offsets = |op: &LabeledOperator, pos: &[usize], ds: &[usize]| {
        let mut v = Vec::new();
        for_each_multi(ds, |x| v.push(op.flat(pos, x)));
        v
    };
    let sa = offsets(a, &a_shared, &dims(&shared));
    let sb = offsets(b, &b_shared, &dims(&shared));
    let fa = offsets(a, &a_free, &dims(&free_a));
    let fb = offsets(b, &b_free, &dims(&free_b));

    let (na, nb) = (fa.len(), fb.len());
    let mut out = linalg::zeros(na * nb);
    for (ib, &b_r) in fb.iter().enumerate() {
        for (ia, &a_r) in fa.iter().enumerate() {
            for (jb, &b_c) in fb.iter().enumerate() {
                for (ja, &a_c) in fa.iter().enumerate() {
                    let mut acc = ZERO;
                    for (&sa_s, &sb_s) in sa.iter().zip(&sb) {
                        for (&sa_t, &sb_t) in sa.iter().zip(&sb) {
                            // A[(t, a),(s, a')] · B[(b, t),(b', s)]
                            acc += a.mat[(a_r + sa_t, a_c + sa_s)] * b.mat[(b_r + sb_t, b_c + sb_s)];
                        }
                    }
                    out[(ib * na + ia, jb * na + ja)] = acc;
                }
            }
        }
    }
    let labels = free_b.into_iter().chain(free_a).collect();
    LabeledOperator::new(out, labels)
}

fn query_operator(e: &CMat, d: usize, i: usize) -> Result<LabeledOperator> {
    LabeledOperator::new(e.clone(), vec![(Label::Sys(2 * i), d), (Label::Sys(2 * i - 1), d)])
}

fn wire_labels(sys: usize, anc: usize, d: usize, a: usize) -> Vec<(Label, usize)> {
    let mut v = vec![(Label::Sys(sys), d)];
    if a > 1 {
        v.push((Label::Anc(anc), a));
    }
    v
}

/// Output state `ρ_θ` and derivative `ρ̇_θ` by sequential link products.
///
/// `controls[i]` is the Choi operator of the `(i+1)`-th control on
/// `(out_sys ⊗ out_anc) ⊗ (in_sys ⊗ in_anc)`; `rho0` lives on `sys ⊗ anc`.
/// The derivative sums the `N` chains with one query replaced by `Ė`.
pub fn dense_strategy_output(
    e: &CMat,
    edot: &CMat,
    controls: &[CMat],
    rho0: &CMat,
    n: usize,
    ancilla_dim: usize,
) -> Result<(CMat, CMat)> {
    if n == 0 {
        return Err(Error::Parameter("N must be at least 1".into()));
    }
    if n > DENSE_MAX_N {
        return Err(Error::DenseTooLarge { n, max: DENSE_MAX_N });
    }
    if controls.len() != n - 1 {
        return Err(Error::Dimension(format!("{} controls for N = {n}", controls.len())));
    }
    let d = (e.nrows() as f64).sqrt().round() as usize;
    let a = ancilla_dim.max(1);
    let chain = |deriv_at: Option<usize>| -> Result<CMat> {
        let mut state = LabeledOperator::new(rho0.clone(), wire_labels(1, 1, d, a))?;
        for i in 1..=n {
            let op = if deriv_at == Some(i) { edot } else { e };
            state = link_product(&state, &query_operator(op, d, i)?)?;
            if i < n {
                let mut labels = wire_labels(2 * i + 1, i + 1, d, a);
                labels.extend(wire_labels(2 * i, i, d, a));
                let ctrl = LabeledOperator::new(controls[i - 1].clone(), labels)?;
                state = link_product(&state, &ctrl)?;
            }
        }
        let order: Vec<Label> = wire_labels(2 * n, n, d, a).iter().map(|l| l.0).collect();
        Ok(state.reorder(&order)?.mat)
    };
    let rho = chain(None)?;
    let mut drho = linalg::zeros(rho.nrows());
    for k in 1..=n {
        drho += chain(Some(k))?;
    }
    Ok((rho, drho))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{choi_from_kraus, preset_bit_flip};
    use crate::linalg::{c, max_abs, ONE};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state(m: CMat, k: usize) -> LabeledOperator {
        let d = m.nrows();
        LabeledOperator::new(m, vec![(Label::Sys(k), d)]).unwrap()
    }

    fn random_channel(d_out: usize, d_in: usize, rng: &mut ChaCha8Rng) -> (Vec<CMat>, CMat) {
        let v = linalg::haar_isometry(d_out * 3, d_in, rng);
        let kraus: Vec<CMat> = (0..3).map(|k| CMat::from_fn(d_out, d_in, |o, i| v[(k * d_out + o, i)])).collect();
        let mut choi = linalg::zeros(d_out * d_in);
        for k in &kraus {
            let vec: Vec<_> = (0..d_out * d_in).map(|r| k[(r / d_in, r % d_in)]).collect();
            choi += linalg::projector(&vec);
        }
        (kraus, choi)
    }

    #[test]
    fn identity_channel_is_neutral() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rho = linalg::random_density(2, &mut rng);
        let id = choi_from_kraus(&[linalg::identity(2)]).unwrap().mat;
        let out = link_product(&state(rho.clone(), 1), &query_operator(&id, 2, 1).unwrap()).unwrap();
        assert_eq!(out.labels, vec![(Label::Sys(2), 2)]);
        assert!(max_abs(&(out.mat - rho)) < 1e-15);
    }

    #[test]
    fn bit_flip_action_on_zero() {
        let zero = linalg::from_rows(&[&[ONE, ZERO], &[ZERO, ZERO]]);
        let one = linalg::from_rows(&[&[ZERO, ZERO], &[ZERO, ONE]]);
        let x = choi_from_kraus(&[linalg::pauli_x()]).unwrap().mat;
        let out = link_product(&state(zero, 1), &query_operator(&x, 2, 1).unwrap()).unwrap();
        assert!(max_abs(&(out.mat - one)) < 1e-15);
    }

    #[test]
    fn link_product_matches_kraus_application() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let rho = linalg::random_density(2, &mut rng);
            let (kraus, choi) = random_channel(2, 2, &mut rng);
            let direct: CMat = kraus.iter().map(|k| k * &rho * k.adjoint()).sum();
            let out = link_product(&state(rho.clone(), 1), &query_operator(&choi, 2, 1).unwrap()).unwrap();
            assert!(max_abs(&(&out.mat - &direct)) < 1e-12);
            // Commutativity up to label order.
            let rev = link_product(&query_operator(&choi, 2, 1).unwrap(), &state(rho, 1)).unwrap();
            assert!(max_abs(&(rev.mat - direct)) < 1e-12);
        }
    }

    #[test]
    fn link_product_is_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..5 {
            let rho = state(linalg::random_density(2, &mut rng), 1);
            let e1 = LabeledOperator::new(random_channel(2, 2, &mut rng).1, vec![(Label::Sys(2), 2), (Label::Sys(1), 2)]).unwrap();
            let e2 = LabeledOperator::new(random_channel(3, 2, &mut rng).1, vec![(Label::Sys(3), 3), (Label::Sys(2), 2)]).unwrap();
            let left = link_product(&link_product(&rho, &e1).unwrap(), &e2).unwrap();
            let right = link_product(&rho, &link_product(&e1, &e2).unwrap()).unwrap();
            let right = right.reorder(&[Label::Sys(3)]).unwrap();
            assert!(max_abs(&(left.mat - right.mat)) < 1e-11);
        }
    }

    #[test]
    fn link_product_dimension_mismatch() {
        let a = state(linalg::identity(2), 1);
        let b = state(linalg::identity(3), 1);
        assert!(matches!(link_product(&a, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn partial_trace_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (_, choi) = random_channel(2, 3, &mut rng);
        let op = LabeledOperator::new(choi, vec![(Label::Sys(2), 2), (Label::Sys(1), 3)]).unwrap();
        let tr_out = op.partial_trace(&[Label::Sys(2)]).unwrap();
        assert!(max_abs(&(tr_out.mat - linalg::identity(3))) < 1e-12);
        let all = op.partial_trace(&[Label::Sys(1), Label::Sys(2)]).unwrap();
        assert!((all.mat[(0, 0)] - op.mat.trace()).norm() < 1e-13);
        assert!(matches!(op.partial_trace(&[Label::Anc(1)]), Err(Error::UnknownLabel(_))));
    }

    #[test]
    fn partial_trace_matches_index_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = linalg::random_ginibre(6, 6, &mut rng);
        let op = LabeledOperator::new(m.clone(), vec![(Label::Sys(1), 2), (Label::Sys(2), 3)]).unwrap();
        let t1 = op.partial_trace(&[Label::Sys(1)]).unwrap().mat;
        let t2 = op.partial_trace(&[Label::Sys(2)]).unwrap().mat;
        let mut o1 = linalg::zeros(3);
        let mut o2 = linalg::zeros(2);
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..3 {
                    o1[(j, k)] += m[(i * 3 + j, i * 3 + k)];
                }
            }
        }
        for j in 0..3 {
            for i in 0..2 {
                for k in 0..2 {
                    o2[(i, k)] += m[(i * 3 + j, k * 3 + j)];
                }
            }
        }
        assert!(max_abs(&(t1 - o1)) < 1e-13);
        assert!(max_abs(&(t2 - o2)) < 1e-13);
    }

    #[test]
    fn partial_transpose_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = linalg::random_hermitian(2, &mut rng);
        let b = linalg::random_ginibre(3, 3, &mut rng);
        let op = LabeledOperator::new(linalg::kron(&a, &b), vec![(Label::Sys(1), 2), (Label::Sys(2), 3)]).unwrap();
        let pt = op.partial_transpose(Label::Sys(2)).unwrap();
        assert!(max_abs(&(&pt.mat - linalg::kron(&a, &b.transpose()))) < 1e-15);
        let back = pt.partial_transpose(Label::Sys(2)).unwrap();
        assert_eq!(back.mat, op.mat);
        assert!((pt.mat.trace() - op.mat.trace()).norm() < 1e-14);
        assert!(matches!(op.partial_transpose(Label::Sys(7)), Err(Error::UnknownLabel(_))));
    }

    #[test]
    fn entanglement_breaking_choi_is_ppt() {
        // Measure in the computational basis, prepare random states.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s0 = linalg::random_density(2, &mut rng);
        let s1 = linalg::random_density(2, &mut rng);
        let p0 = linalg::from_rows(&[&[ONE, ZERO], &[ZERO, ZERO]]);
        let p1 = linalg::from_rows(&[&[ZERO, ZERO], &[ZERO, ONE]]);
        // Choi of ρ ↦ Σ_k Tr(P_k ρ) σ_k is Σ_k σ_k ⊗ P_kᵀ.
        let choi = linalg::kron(&s0, &p0.transpose()) + linalg::kron(&s1, &p1.transpose());
        let op = LabeledOperator::new(choi, vec![(Label::Sys(2), 2), (Label::Sys(1), 2)]).unwrap();
        let pt = op.partial_transpose(Label::Sys(1)).unwrap();
        assert!(linalg::min_eigenvalue(&pt.mat) >= -1e-10);
    }

    #[test]
    fn dense_single_query() {
        let ch = preset_bit_flip(0.1).unwrap();
        let (e, edot) = ch.choi_pair(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rho0 = linalg::random_density(2, &mut rng);
        let (rho, drho) = dense_strategy_output(&e, &edot, &[], &rho0, 1, 1).unwrap();
        let k = ch.kraus_at(1.0);
        let direct: CMat = k.iter().map(|k| k * &rho0 * k.adjoint()).sum();
        assert!(max_abs(&(rho - direct)) < 1e-14);
        assert!(drho.trace().norm() < 1e-12);
    }

    #[test]
    fn dense_noiseless_two_queries() {
        let ch = preset_bit_flip(0.0).unwrap();
        let (e, edot) = ch.choi_pair(0.6);
        let plus = linalg::projector(&[c(0.5f64.sqrt(), 0.0), c(0.5f64.sqrt(), 0.0)]);
        let id = choi_from_kraus(&[linalg::identity(2)]).unwrap().mat;
        let (rho, _) = dense_strategy_output(&e, &edot, &[id], &plus, 2, 1).unwrap();
        let u = linalg::rz(1.2);
        assert!(max_abs(&(rho - &u * &plus * u.adjoint())) < 1e-14);
    }

    #[test]
    fn dense_derivative_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ch = preset_bit_flip(0.1).unwrap();
        let controls: Vec<CMat> = (0..2).map(|_| random_channel(2, 2, &mut rng).1).collect();
        let rho0 = linalg::random_density(2, &mut rng);
        let h = 1e-6;
        let (ep, _) = ch.choi_pair(1.0 + h);
        let (em, _) = ch.choi_pair(1.0 - h);
        let (e, edot) = ch.choi_pair(1.0);
        let (rp, _) = dense_strategy_output(&ep, &edot, &controls, &rho0, 3, 1).unwrap();
        let (rm, _) = dense_strategy_output(&em, &edot, &controls, &rho0, 3, 1).unwrap();
        let (rho, drho) = dense_strategy_output(&e, &edot, &controls, &rho0, 3, 1).unwrap();
        assert!(max_abs(&((rp - rm) / c(2.0 * h, 0.0) - &drho)) < 1e-6);
        assert!((rho.trace() - ONE).norm() < 1e-12);
        assert!(linalg::min_eigenvalue(&rho) > -1e-12);
        assert!(drho.trace().norm() < 1e-10);
    }

    #[test]
    fn dense_guard() {
        let e = linalg::identity(4);
        let controls = vec![e.clone(); 6];
        let err = dense_strategy_output(&e, &e, &controls, &linalg::identity(2), 7, 1);
        assert!(matches!(err, Err(Error::DenseTooLarge { n: 7, .. })));
    }
}
