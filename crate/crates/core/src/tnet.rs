//! Matrix-product-operator contraction of sequential strategies.
//!
//! A strategy with `N` queries is the chain
//!
//! ```text
//!   ρ₀ ─ M₁ ─ C₁ ─ M₂ ─ C₂ ─ … ─ C_{N-1} ─ M_N ─ X
//! ```
//!
//! where every site acts on operators of the joint system ⊗ ancilla space
//! (`D = d·a`). Query sites act on the system factor only; the ancilla wire
//! passes through by index identification and is never materialized.
//!
//! Two networks share the chain. The `f₂` network uses `E_θ` at every query
//! and closes with `X²`; the `f₁` network uses the bond-dimension-2
//! derivative MPO (`M_i`) and closes with `X`. Contractions are carried out
//! in the Schrödinger picture from the left (operator-valued bond vectors
//! `L_k` after query `k`) and in the Heisenberg picture from the right
//! (`H_k` acting on the input of query `k`). Environments of a site are
//! built from the adjacent cached vectors, so a left-to-right sweep over
//! every site costs `O(N·D⁴)`.

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, ZERO};

/// Largest imaginary part tolerated for the real scalars `f₁`, `f₂`.
pub const REALITY_TOL: f64 = 1e-8;

/// One MPO site: a `rows × cols` block matrix over the bond index, each
/// non-zero block a Choi operator on `out ⊗ in` of one query.
///
/// Row index is the bond toward later queries, column index the bond
/// toward earlier queries.
#[derive(Clone, Debug)]
pub struct SiteTensor {
    pub rows: usize,
    pub cols: usize,
    blocks: Vec<Option<CMat>>,
}

impl SiteTensor {
    pub fn new(rows: usize, cols: usize, blocks: Vec<Option<CMat>>) -> Self {
        assert_eq!(blocks.len(), rows * cols, "block count must equal rows * cols");
        Self { rows, cols, blocks }
    }

    pub fn single(block: CMat) -> Self {
        Self::new(1, 1, vec![Some(block)])
    }

    pub fn block(&self, r: usize, c: usize) -> Option<&CMat> {
        self.blocks[r * self.cols + c].as_ref()
    }
}

/// Sites `M₁ … M_N` of the derivative MPO `d(E^{⊗N})/dθ`.
///
/// `M_N = (E, Ė)`, `M₁ = (Ė; E)` and bulk sites `[[E, Ė], [0, E]]`;
/// `N = 1` degenerates to the single site `Ė`.
pub fn build_derivative_mpo(e: &CMat, edot: &CMat, n: usize) -> Result<Vec<SiteTensor>> {
    if n == 0 {
        return Err(Error::Parameter("derivative MPO needs N >= 1".into()));
    }
    if n == 1 {
        return Ok(vec![SiteTensor::single(edot.clone())]);
    }
    let first = SiteTensor::new(2, 1, vec![Some(edot.clone()), Some(e.clone())]);
    let bulk = SiteTensor::new(2, 2, vec![Some(e.clone()), Some(edot.clone()), None, Some(e.clone())]);
    let last = SiteTensor::new(1, 2, vec![Some(e.clone()), Some(edot.clone())]);
    let mut sites = vec![first];
    sites.extend(std::iter::repeat_n(bulk, n - 2));
    sites.push(last);
    Ok(sites)
}

/// Dense contraction of MPO sites over the bond, `M_N ⊗ … ⊗ M₁` with the
/// later query as the leading tensor factor. Exponential in `N`; for tests.
pub fn contract_mpo_dense(sites: &[SiteTensor]) -> CMat {
    let mut acc: Vec<Option<CMat>> = sites[0].blocks.clone();
    let cols = sites[0].cols;
    let mut rows = sites[0].rows;
    for site in &sites[1..] {
        let mut next = vec![None; site.rows * cols];
        for r in 0..site.rows {
            for c in 0..cols {
                let mut sum: Option<CMat> = None;
                for k in 0..site.cols {
                    if let (Some(a), Some(b)) = (site.block(r, k), acc[k * cols + c].as_ref()) {
                        let term = linalg::kron(a, b);
                        sum = Some(match sum {
                            Some(s) => s + term,
                            None => term,
                        });
                    }
                }
                next[r * cols + c] = sum;
            }
        }
        acc = next;
        rows = site.rows;
    }
    assert!(rows == 1 && cols == 1, "open bond left after contraction");
    acc.pop().flatten().expect("non-zero contraction")
}

/// `(E ⊗ I_a)(ρ)` on a `(d·a)`-dimensional operator.
pub fn apply_query(e: &CMat, rho: &CMat, d: usize, a: usize) -> CMat {
    let dim = d * a;
    let mut out = linalg::zeros(dim);
    for o in 0..d {
        for o2 in 0..d {
            for s in 0..d {
                for s2 in 0..d {
                    let w = e[(o * d + s, o2 * d + s2)];
                    if w == ZERO {
                        continue;
                    }
                    for x in 0..a {
                        for x2 in 0..a {
                            out[(o * a + x, o2 * a + x2)] += w * rho[(s * a + x, s2 * a + x2)];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Heisenberg adjoint of [`apply_query`]: `Tr[Y (E⊗I)(ρ)] = Tr[(E⊗I)†(Y) ρ]`.
pub fn adjoint_query(e: &CMat, y: &CMat, d: usize, a: usize) -> CMat {
    let dim = d * a;
    let mut out = linalg::zeros(dim);
    for o in 0..d {
        for o2 in 0..d {
            for s in 0..d {
                for s2 in 0..d {
                    let w = e[(o * d + s, o2 * d + s2)];
                    if w == ZERO {
                        continue;
                    }
                    for x in 0..a {
                        for x2 in 0..a {
                            out[(s2 * a + x2, s * a + x)] += w * y[(o2 * a + x2, o * a + x)];
                        }
                    }
                }
            }
        }
    }
    out
}

/// `C(ρ)` for a control Choi operator on `D_out ⊗ D_in` (here `D_out = D_in`).
pub fn apply_control(c: &CMat, rho: &CMat) -> CMat {
    let dim = rho.nrows();
    let mut out = linalg::zeros(dim);
    for o in 0..dim {
        for o2 in 0..dim {
            let mut acc = ZERO;
            for i in 0..dim {
                for i2 in 0..dim {
                    acc += c[(o * dim + i, o2 * dim + i2)] * rho[(i, i2)];
                }
            }
            out[(o, o2)] = acc;
        }
    }
    out
}

/// Heisenberg adjoint of [`apply_control`].
pub fn adjoint_control(c: &CMat, y: &CMat) -> CMat {
    let dim = y.nrows();
    let mut out = linalg::zeros(dim);
    for i in 0..dim {
        for i2 in 0..dim {
            let mut acc = ZERO;
            for o in 0..dim {
                for o2 in 0..dim {
                    acc += c[(o * dim + i, o2 * dim + i2)] * y[(o2, o)];
                }
            }
            out[(i2, i)] = acc;
        }
    }
    out
}

fn real_part(z: num_complex::Complex64) -> Result<f64> {
    if z.im.abs() > REALITY_TOL * z.re.abs().max(1.0) {
        return Err(Error::ImaginaryPart(z.im));
    }
    Ok(z.re)
}

/// Which of the two networks an environment belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Network {
    F1,
    F2,
}

/// A variable site of the chain. Controls are numbered `1..=N-1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Site {
    Rho0,
    Control(usize),
    X,
}

/// Bond vectors of both networks at one cut.
#[derive(Clone, Debug)]
struct Bond {
    f1: Vec<CMat>,
    f2: Vec<CMat>,
}

/// A strategy laid out as an MPO chain with cached partial contractions.
///
/// `left[k]` (k = 1..N) holds the state after query `k`; `right[k]`
/// (k = 1..N) holds the Heisenberg operators on the input of query `k`.
/// Caches are invalidated on site replacement and rebuilt lazily from the
/// nearest valid cut.
#[derive(Clone, Debug)]
pub struct MpoChain {
    n: usize,
    d: usize,
    a: usize,
    e: CMat,
    edot: CMat,
    f1_sites: Vec<SiteTensor>,
    f2_site: SiteTensor,
    rho0: CMat,
    controls: Vec<CMat>,
    x: CMat,
    x_sq: CMat,
    left: Vec<Option<Bond>>,
    right: Vec<Option<Bond>>,
    ops: u64,
}

impl MpoChain {
    pub fn new(e: CMat, edot: CMat, rho0: CMat, controls: Vec<CMat>, x: CMat, ancilla_dim: usize) -> Result<Self> {
        let n = controls.len() + 1;
        let d = (e.nrows() as f64).sqrt().round() as usize;
        let a = ancilla_dim.max(1);
        let dim = d * a;
        if d * d != e.nrows() || e.shape() != edot.shape() {
            return Err(Error::Dimension("channel Choi pair must be d²×d²".into()));
        }
        if rho0.shape() != (dim, dim) || x.shape() != (dim, dim) {
            return Err(Error::Dimension(format!("input state and X must be {dim}x{dim}")));
        }
        if let Some(c) = controls.iter().find(|c| c.shape() != (dim * dim, dim * dim)) {
            return Err(Error::Dimension(format!("control {}x{} but expected {}", c.nrows(), c.ncols(), dim * dim)));
        }
        let f1_sites = build_derivative_mpo(&e, &edot, n)?;
        let x_sq = &x * &x;
        Ok(Self {
            n,
            d,
            a,
            f2_site: SiteTensor::single(e.clone()),
            e,
            edot,
            f1_sites,
            rho0,
            controls,
            x,
            x_sq,
            left: vec![None; n + 1],
            right: vec![None; n + 1],
            ops: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn d(&self) -> usize {
        self.d
    }
    pub fn ancilla_dim(&self) -> usize {
        self.a
    }
    pub fn dim(&self) -> usize {
        self.d * self.a
    }
    pub fn rho0(&self) -> &CMat {
        &self.rho0
    }
    pub fn x(&self) -> &CMat {
        &self.x
    }
    pub fn controls(&self) -> &[CMat] {
        &self.controls
    }
    pub fn channel(&self) -> (&CMat, &CMat) {
        (&self.e, &self.edot)
    }

    /// Number of elementary site applications performed so far.
    pub fn op_count(&self) -> u64 {
        self.ops
    }

    pub fn reset_op_count(&mut self) {
        self.ops = 0;
    }

    pub fn set_rho0(&mut self, rho0: CMat) {
        self.rho0 = rho0;
        self.left.iter_mut().for_each(|l| *l = None);
    }

    pub fn set_x(&mut self, x: CMat) {
        self.x_sq = &x * &x;
        self.x = x;
        self.right.iter_mut().for_each(|r| *r = None);
    }

    /// Replace control `k` (1-based).
    pub fn set_control(&mut self, k: usize, c: CMat) -> Result<()> {
        self.check_control(k)?;
        self.controls[k - 1] = c;
        for j in (k + 1)..=self.n {
            self.left[j] = None;
        }
        for j in 1..=k {
            self.right[j] = None;
        }
        Ok(())
    }

    /// Replace every control at once (identical-control strategies).
    pub fn set_all_controls(&mut self, c: &CMat) {
        self.controls.iter_mut().for_each(|x| *x = c.clone());
        self.left.iter_mut().for_each(|l| *l = None);
        self.right.iter_mut().for_each(|r| *r = None);
    }

    pub fn set_channel(&mut self, e: CMat, edot: CMat) -> Result<()> {
        if e.shape() != self.e.shape() || edot.shape() != self.e.shape() {
            return Err(Error::Dimension("channel dimension changed".into()));
        }
        self.f1_sites = build_derivative_mpo(&e, &edot, self.n)?;
        self.f2_site = SiteTensor::single(e.clone());
        self.e = e;
        self.edot = edot;
        self.left.iter_mut().for_each(|l| *l = None);
        self.right.iter_mut().for_each(|r| *r = None);
        Ok(())
    }

    fn check_control(&self, k: usize) -> Result<()> {
        if k == 0 || k >= self.n {
            return Err(Error::InvalidSite(format!("control {k} for N = {}", self.n)));
        }
        Ok(())
    }

    fn f1_site(&self, q: usize) -> &SiteTensor {
        &self.f1_sites[q - 1]
    }

    fn apply_site(&mut self, site: &SiteTensor, input: &[CMat]) -> Vec<CMat> {
        let (d, a) = (self.d, self.a);
        let mut out = Vec::with_capacity(site.rows);
        for r in 0..site.rows {
            let mut acc = linalg::zeros(d * a);
            for (c, v) in input.iter().enumerate().take(site.cols) {
                if let Some(b) = site.block(r, c) {
                    acc += apply_query(b, v, d, a);
                    self.ops += 1;
                }
            }
            out.push(acc);
        }
        out
    }

    fn adjoint_site(&mut self, site: &SiteTensor, input: &[CMat]) -> Vec<CMat> {
        let (d, a) = (self.d, self.a);
        let mut out = Vec::with_capacity(site.cols);
        for c in 0..site.cols {
            let mut acc = linalg::zeros(d * a);
            for (r, v) in input.iter().enumerate().take(site.rows) {
                if let Some(b) = site.block(r, c) {
                    acc += adjoint_query(b, v, d, a);
                    self.ops += 1;
                }
            }
            out.push(acc);
        }
        out
    }

    fn control_forward(&mut self, k: usize, v: &[CMat]) -> Vec<CMat> {
        self.ops += v.len() as u64;
        v.iter().map(|m| apply_control(&self.controls[k - 1], m)).collect()
    }

    fn control_adjoint(&mut self, k: usize, v: &[CMat]) -> Vec<CMat> {
        self.ops += v.len() as u64;
        v.iter().map(|m| adjoint_control(&self.controls[k - 1], m)).collect()
    }

    /// State bond vector after query `k` (1..=N).
    fn left_at(&mut self, k: usize) -> Bond {
        if let Some(b) = &self.left[k] {
            return b.clone();
        }
        let start = (1..k).rev().find(|&j| self.left[j].is_some());
        let (mut j, mut bond) = match start {
            Some(j) => (j, self.left[j].clone().expect("checked")),
            None => {
                let rho0 = vec![self.rho0.clone()];
                let site1 = self.f1_site(1).clone();
                let f2_site = self.f2_site.clone();
                let b = Bond { f1: self.apply_site(&site1, &rho0), f2: self.apply_site(&f2_site, &rho0) };
                self.left[1] = Some(b.clone());
                (1, b)
            }
        };
        while j < k {
            let f1 = self.control_forward(j, &bond.f1);
            let f2 = self.control_forward(j, &bond.f2);
            j += 1;
            let site = self.f1_site(j).clone();
            let f2_site = self.f2_site.clone();
            bond = Bond { f1: self.apply_site(&site, &f1), f2: self.apply_site(&f2_site, &f2) };
            self.left[j] = Some(bond.clone());
        }
        bond
    }

    /// Heisenberg bond vector on the input of query `k` (1..=N).
    fn right_at(&mut self, k: usize) -> Bond {
        if let Some(b) = &self.right[k] {
            return b.clone();
        }
        let start = ((k + 1)..=self.n).find(|&j| self.right[j].is_some());
        let (mut j, mut bond) = match start {
            Some(j) => (j, self.right[j].clone().expect("checked")),
            None => {
                let n = self.n;
                let site = self.f1_site(n).clone();
                let f2_site = self.f2_site.clone();
                let (x, xsq) = (vec![self.x.clone()], vec![self.x_sq.clone()]);
                let b = Bond { f1: self.adjoint_site(&site, &x), f2: self.adjoint_site(&f2_site, &xsq) };
                self.right[n] = Some(b.clone());
                (n, b)
            }
        };
        while j > k {
            j -= 1;
            let f1 = self.control_adjoint(j, &bond.f1);
            let f2 = self.control_adjoint(j, &bond.f2);
            let site = self.f1_site(j).clone();
            let f2_site = self.f2_site.clone();
            bond = Bond { f1: self.adjoint_site(&site, &f1), f2: self.adjoint_site(&f2_site, &f2) };
            self.right[j] = Some(bond.clone());
        }
        bond
    }

    /// Output state `ρ_θ` (the `f₂` network without `(X²)ᵀ`).
    pub fn output_state(&mut self) -> CMat {
        self.left_at(self.n).f2.swap_remove(0)
    }

    /// Output derivative `ρ̇_θ` (the `f₁` network without `Xᵀ`).
    pub fn output_derivative(&mut self) -> CMat {
        self.left_at(self.n).f1.swap_remove(0)
    }

    /// Open-leg tensor of a network with one site removed, as a matrix
    /// `env` with `Tr[T·envᵀ]` equal to the full contraction.
    ///
    /// For `X` the excluded tensor is `X` in `f₁` and `X²` in `f₂`.
    pub fn environment(&mut self, which: Network, site: Site) -> Result<CMat> {
        match site {
            Site::X => {
                let m = match which {
                    Network::F1 => self.output_derivative(),
                    Network::F2 => self.output_state(),
                };
                Ok(m.transpose())
            }
            Site::Rho0 => {
                let r = self.right_at(1);
                let v = match which {
                    Network::F1 => &r.f1,
                    Network::F2 => &r.f2,
                };
                Ok(v[0].transpose())
            }
            Site::Control(k) => {
                self.check_control(k)?;
                let l = self.left_at(k);
                let r = self.right_at(k + 1);
                let (lv, rv) = match which {
                    Network::F1 => (l.f1, r.f1),
                    Network::F2 => (l.f2, r.f2),
                };
                let dim = self.dim();
                let mut env = linalg::zeros(dim * dim);
                for (h, s) in rv.iter().zip(&lv) {
                    env += linalg::kron(&h.transpose(), s);
                }
                Ok(env)
            }
        }
    }

    /// `2·env(f₁) − env(f₂)` for one site.
    pub fn objective_environment(&mut self, site: Site) -> Result<CMat> {
        let e1 = self.environment(Network::F1, site)?;
        let e2 = self.environment(Network::F2, site)?;
        Ok(e1.scale(2.0) - e2)
    }

    /// Cached `(f₁, f₂)` with the current `X`.
    pub fn f1_f2(&mut self) -> Result<(f64, f64)> {
        let rho = self.output_state();
        let drho = self.output_derivative();
        let f1 = real_part(linalg::trace_product(&drho, &self.x))?;
        let f2 = real_part(linalg::trace_product(&rho, &self.x_sq))?;
        Ok((f1, f2))
    }

    /// `2f₁ − f₂` with the current `X`.
    pub fn objective(&mut self) -> Result<f64> {
        let (f1, f2) = self.f1_f2()?;
        Ok(2.0 * f1 - f2)
    }

    /// Fresh contraction of `f₂ = Tr[ρ_θ X²]` in circuit order; no caches.
    pub fn contract_f2(&self, x_sq: &CMat) -> Result<f64> {
        let rho = self.clone_uncached().output_state();
        real_part(linalg::trace_product(&rho, x_sq))
    }

    /// Fresh contraction of `f₁ = Tr[ρ̇_θ X]` in circuit order; no caches.
    pub fn contract_f1(&self, x: &CMat) -> Result<f64> {
        let drho = self.clone_uncached().output_derivative();
        real_part(linalg::trace_product(&drho, x))
    }

    fn clone_uncached(&self) -> Self {
        let mut c = self.clone();
        c.left.iter_mut().for_each(|l| *l = None);
        c.right.iter_mut().for_each(|r| *r = None);
        c
    }

    /// Precompute all right environments (reverse pass).
    pub fn prepare_sweep(&mut self) {
        self.right_at(1);
    }

    /// Sum over controls of the objective environments, as used by the
    /// shared-parameter gradient. One forward and one reverse pass.
    pub fn summed_control_environment(&mut self) -> Result<CMat> {
        let dim = self.dim();
        let mut acc = linalg::zeros(dim * dim);
        self.prepare_sweep();
        for k in 1..self.n {
            acc += self.objective_environment(Site::Control(k))?;
        }
        Ok(acc)
    }

    /// Checks that every cached cut reproduces the full contraction.
    pub fn cache_coherence_defect(&mut self) -> Result<f64> {
        let full1 = self.contract_f1(&self.x.clone())?;
        let full2 = self.contract_f2(&self.x_sq.clone())?;
        let mut worst: f64 = 0.0;
        for k in 1..self.n {
            let c = self.controls[k - 1].clone();
            let e1 = self.environment(Network::F1, Site::Control(k))?;
            let e2 = self.environment(Network::F2, Site::Control(k))?;
            worst = worst.max((linalg::pairing(&c, &e1).re - full1).abs());
            worst = worst.max((linalg::pairing(&c, &e2).re - full2).abs());
        }
        let r0 = self.rho0.clone();
        worst = worst.max((linalg::pairing(&r0, &self.environment(Network::F1, Site::Rho0)?).re - full1).abs());
        worst = worst.max((linalg::pairing(&r0, &self.environment(Network::F2, Site::Rho0)?).re - full2).abs());
        Ok(worst)
    }
}

/// Superoperator matrix of `E ⊗ I_a` on row-major `vec(ρ)`.
fn query_transfer(e: &CMat, d: usize, a: usize) -> CMat {
    let dim = d * a;
    let mut t = linalg::zeros(dim * dim);
    for o in 0..d {
        for o2 in 0..d {
            for s in 0..d {
                for s2 in 0..d {
                    let w = e[(o * d + s, o2 * d + s2)];
                    for x in 0..a {
                        for x2 in 0..a {
                            let row = (o * a + x) * dim + (o2 * a + x2);
                            let col = (s * a + x) * dim + (s2 * a + x2);
                            t[(row, col)] = w;
                        }
                    }
                }
            }
        }
    }
    t
}

/// Superoperator matrix of a control: `T[(p,p'),(q,q')] = C[(p,q),(p',q')]`.
fn control_transfer(c: &CMat, dim: usize) -> CMat {
    CMat::from_fn(dim * dim, dim * dim, |row, col| {
        let (p, p2) = (row / dim, row % dim);
        let (q, q2) = (col / dim, col % dim);
        c[(p * dim + q, p2 * dim + q2)]
    })
}

fn vectorize(m: &CMat) -> nalgebra::DVector<num_complex::Complex64> {
    let dim = m.nrows();
    nalgebra::DVector::from_fn(dim * dim, |r, _| m[(r / dim, r % dim)])
}

fn close_with(v: &[num_complex::Complex64], op: &CMat) -> num_complex::Complex64 {
    // Tr[op · ρ] with ρ = unvec(v).
    let dim = op.nrows();
    let mut acc = ZERO;
    for p in 0..dim {
        for p2 in 0..dim {
            acc += op[(p2, p)] * v[p * dim + p2];
        }
    }
    acc
}

/// `(f₁, f₂)` for `N` queries with one shared control, via powers of the
/// transfer matrices `(𝐄𝐂)^{N−1}` and `[𝐌(𝐂⊗I)]^{N−2}`.
pub fn identical_f1_f2(
    e: &CMat,
    edot: &CMat,
    control: &CMat,
    rho0: &CMat,
    x: &CMat,
    n: usize,
    ancilla_dim: usize,
) -> Result<(f64, f64)> {
    let d = (e.nrows() as f64).sqrt().round() as usize;
    let a = ancilla_dim.max(1);
    let dim = d * a;
    if n == 0 {
        return Err(Error::Parameter("N must be at least 1".into()));
    }
    let x_sq = x * x;
    let te = query_transfer(e, d, a);
    let ted = query_transfer(edot, d, a);
    let v0 = vectorize(rho0);
    let e_v0 = &te * &v0;
    let ed_v0 = &ted * &v0;
    if n == 1 {
        let f1 = real_part(close_with(ed_v0.as_slice(), x))?;
        let f2 = real_part(close_with(e_v0.as_slice(), &x_sq))?;
        return Ok((f1, f2));
    }
    let tc = control_transfer(control, dim);

    let ec = &te * &tc;
    let rho_out = linalg::matrix_power(&ec, n - 1) * &e_v0;
    let f2 = real_part(close_with(rho_out.as_slice(), &x_sq))?;

    // Augmented bulk transfer 𝐌(𝐂⊗I) on (derivative, plain) stacks.
    let m2 = dim * dim;
    let mut bulk = linalg::zeros(2 * m2);
    let tedc = &ted * &tc;
    bulk.view_mut((0, 0), (m2, m2)).copy_from(&ec);
    bulk.view_mut((0, m2), (m2, m2)).copy_from(&tedc);
    bulk.view_mut((m2, m2), (m2, m2)).copy_from(&ec);
    let mut w = nalgebra::DVector::zeros(2 * m2);
    w.rows_mut(0, m2).copy_from(&ed_v0);
    w.rows_mut(m2, m2).copy_from(&e_v0);
    let w = linalg::matrix_power(&bulk, n - 2) * w;
    let deriv = &tc * w.rows(0, m2);
    let plain = &tc * w.rows(m2, m2);
    let out = &te * deriv + &ted * plain;
    let f1 = real_part(close_with(out.as_slice(), x))?;
    Ok((f1, f2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{choi_from_kraus, preset_bit_flip};
    use crate::comb::dense_strategy_output;
    use crate::linalg::{c, max_abs, ONE};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_cptp(dim: usize, rng: &mut ChaCha8Rng) -> CMat {
        let v = linalg::haar_isometry(dim * 2, dim, rng);
        let mut choi = linalg::zeros(dim * dim);
        for k in 0..2 {
            let vec: Vec<_> = (0..dim * dim).map(|r| v[(k * dim + r / dim, r % dim)]).collect();
            choi += linalg::projector(&vec);
        }
        choi
    }

    fn random_chain(n: usize, a: usize, rng: &mut ChaCha8Rng) -> MpoChain {
        let (e, edot) = preset_bit_flip(0.1).unwrap().choi_pair(1.0);
        let dim = 2 * a;
        let controls = (0..n - 1).map(|_| random_cptp(dim, rng)).collect();
        let rho0 = linalg::random_density(dim, rng);
        let x = linalg::random_hermitian(dim, rng);
        MpoChain::new(e, edot, rho0, controls, x, a).unwrap()
    }

    #[test]
    fn derivative_mpo_two_sites() {
        let (e, edot) = preset_bit_flip(0.1).unwrap().choi_pair(1.0);
        let sites = build_derivative_mpo(&e, &edot, 2).unwrap();
        let expected = linalg::kron(&edot, &e) + linalg::kron(&e, &edot);
        assert!(max_abs(&(contract_mpo_dense(&sites) - expected)) < 1e-14);
        let zero = linalg::zeros(4);
        let sites = build_derivative_mpo(&e, &zero, 3).unwrap();
        assert!(max_abs(&contract_mpo_dense(&sites)) == 0.0);
        assert!(build_derivative_mpo(&e, &edot, 0).is_err());
    }

    #[test]
    fn trivial_closures() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut chain = random_chain(4, 1, &mut rng);
        chain.set_x(linalg::identity(2));
        let (f1, f2) = chain.f1_f2().unwrap();
        assert!((f2 - 1.0).abs() < 1e-12);
        assert!(f1.abs() < 1e-10);
    }

    #[test]
    fn single_query_noiseless() {
        let (e, edot) = preset_bit_flip(0.0).unwrap().choi_pair(0.4);
        let h = c(0.5f64.sqrt(), 0.0);
        let plus = linalg::projector(&[h, h]);
        let mut chain = MpoChain::new(e, edot, plus.clone(), vec![], linalg::identity(2), 1).unwrap();
        let u = linalg::rz(0.4);
        assert!(max_abs(&(chain.output_state() - &u * &plus * u.adjoint())) < 1e-15);
    }

    #[test]
    fn matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for &a in &[1, 2] {
            for n in 2..=4 {
                let mut chain = random_chain(n, a, &mut rng);
                let (e, edot) = chain.channel();
                let (rho, drho) =
                    dense_strategy_output(e, edot, chain.controls(), chain.rho0(), n, a).unwrap();
                assert!(max_abs(&(chain.output_state() - &rho)) < 1e-10);
                assert!(max_abs(&(chain.output_derivative() - &drho)) < 1e-10);
                let x = chain.x().clone();
                let f1 = linalg::trace_product(&drho, &x).re;
                let f2 = linalg::trace_product(&rho, &(&x * &x)).re;
                assert!((chain.contract_f1(&x).unwrap() - f1).abs() < 1e-10);
                assert!((chain.contract_f2(&(&x * &x)).unwrap() - f2).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn environments_reproduce_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..20 {
            let mut chain = random_chain(5, 2, &mut rng);
            assert!(chain.cache_coherence_defect().unwrap() < 1e-10);
            let x = chain.x().clone();
            let env_x = chain.environment(Network::F2, Site::X).unwrap();
            let f2 = chain.contract_f2(&(&x * &x)).unwrap();
            assert!((linalg::pairing(&(&x * &x), &env_x).re - f2).abs() < 1e-10);
        }
    }

    #[test]
    fn cache_coherent_after_replacements() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut chain = random_chain(6, 1, &mut rng);
        for k in [3, 1, 5, 2] {
            chain.set_control(k, random_cptp(2, &mut rng)).unwrap();
            assert!(chain.cache_coherence_defect().unwrap() < 1e-10);
        }
        chain.set_rho0(linalg::random_density(2, &mut rng));
        assert!(chain.cache_coherence_defect().unwrap() < 1e-10);
        chain.set_x(linalg::random_hermitian(2, &mut rng));
        assert!(chain.cache_coherence_defect().unwrap() < 1e-10);
        assert!(matches!(chain.set_control(6, linalg::zeros(4)), Err(Error::InvalidSite(_))));
        assert!(chain.environment(Network::F1, Site::Control(0)).is_err());
    }

    #[test]
    fn sweep_cost_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let mut chain = random_chain(30, 1, &mut rng);
        let x = chain.x().clone();
        let mut fresh = chain.clone();
        fresh.reset_op_count();
        let _ = fresh.output_state();
        let one_full = fresh.op_count();
        let _ = x;
        chain.reset_op_count();
        chain.prepare_sweep();
        for k in 1..30 {
            chain.environment(Network::F1, Site::Control(k)).unwrap();
            chain.environment(Network::F2, Site::Control(k)).unwrap();
        }
        chain.environment(Network::F1, Site::Rho0).unwrap();
        chain.environment(Network::F2, Site::X).unwrap();
        // one_full covers both networks in one forward pass.
        assert!(chain.op_count() <= 3 * one_full, "{} vs {}", chain.op_count(), one_full);
    }

    #[test]
    fn identical_path_matches_sequential() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        for &a in &[1, 2] {
            for &n in &[1, 2, 3, 7] {
                let dim = 2 * a;
                let ctrl = random_cptp(dim, &mut rng);
                let mut chain = random_chain(n, a, &mut rng);
                chain.set_all_controls(&ctrl);
                let (e, edot) = chain.channel();
                let (f1, f2) =
                    identical_f1_f2(e, edot, &ctrl, chain.rho0(), chain.x(), n, a).unwrap();
                let (g1, g2) = chain.f1_f2().unwrap();
                assert!((f1 - g1).abs() < 1e-10 && (f2 - g2).abs() < 1e-10, "n={n} a={a}");
            }
        }
    }

    #[test]
    fn identity_x_on_identical_path() {
        let (e, edot) = preset_bit_flip(0.1).unwrap().choi_pair(1.0);
        let id = choi_from_kraus(&[linalg::identity(2)]).unwrap().mat;
        let rho0 = linalg::from_rows(&[&[ONE, ZERO], &[ZERO, ZERO]]);
        let (f1, f2) = identical_f1_f2(&e, &edot, &id, &rho0, &linalg::identity(2), 10, 1).unwrap();
        assert!(f1.abs() < 1e-10 && (f2 - 1.0).abs() < 1e-10);
    }
}
