//! Order-`l` lifted objective `h(w) = ‖y(w) − b^{⊗l}‖²` with
//! `y_{k₁…k_l}(w) = ⟨w, (Ã_{k₁} ⊗ … ⊗ Ã_{k_l}) w⟩` and `Ã_k = I_r ⊗ A_k`.
//!
//! Three evaluation paths share one convention:
//! * `Reference`: naive loops over every multi-index, for testing;
//! * `Gram`: contracts the index-paired tensor `w ⊗ w` against the Gram
//!   matrix `H = Σ_k vec(Ã_k) vec(Ã_k)ᵀ` along every mode;
//! * `Staged`: depth-first traversal of the measurement multi-index with
//!   sparse mode products.

use crate::error::{Error, Result};
use crate::instances::SensingEnsemble;
use crate::linalg::{self, unstack};
use crate::pca::{dominant_component, PcaConfig};
use crate::rng::{self, Tag};
use crate::tensor::{self, DenseTensor, Rank1Certificate, SparseRows};
use crate::unlifted::FactorMatrix;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Environment variable holding the Gram-path memory budget in bytes.
pub const GRAM_BUDGET_ENV: &str = "TENSLIFT_GRAM_BUDGET";
pub const DEFAULT_GRAM_BUDGET: usize = 2 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Reference,
    Gram,
    Staged,
    #[default]
    Auto,
}

/// Budget from [`GRAM_BUDGET_ENV`], falling back to the default when unset
/// or unparsable.
pub fn gram_budget_from_env() -> usize {
    std::env::var(GRAM_BUDGET_ENV).ok().and_then(|s| s.trim().parse().ok()).unwrap_or(DEFAULT_GRAM_BUDGET)
}

#[derive(Clone, Debug)]
enum GramOperator {
    /// Sparse `H`, applied once per mode.
    Explicit(SparseRows),
    /// `H = ĀᵀĀ` applied as `Ā` along every mode, then `Āᵀ`.
    Factored,
}

#[derive(Clone, Debug)]
pub struct LiftedProblem {
    ensemble: SensingEnsemble,
    l: usize,
    d: usize,
    lifted: Vec<SparseRows>,
    u: DMatrix<f64>,
    u_sparse: SparseRows,
    a_bar: SparseRows,
    a_bar_t: SparseRows,
    gram: Option<GramOperator>,
    strategy: Strategy,
    fell_back: bool,
    b_norm_sq: f64,
    spread_i: Vec<usize>,
    spread_j: Vec<usize>,
}

/// Values shared by the loss and gradient of one evaluation.
#[derive(Clone, Debug)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: DenseTensor,
}

impl LiftedProblem {
    /// Build with the budget from the environment.
    pub fn new(ensemble: SensingEnsemble, l: usize, strategy: Strategy) -> Result<Self> {
        Self::with_budget(ensemble, l, strategy, gram_budget_from_env())
    }

    /// `Auto` selects the Gram path when `(nr)^{2l}` doubles fit in
    /// `budget_bytes` and the staged path otherwise; an explicit `Gram`
    /// request over budget is an error.
    pub fn with_budget(ensemble: SensingEnsemble, l: usize, strategy: Strategy, budget_bytes: usize) -> Result<Self> {
        if l == 0 {
            return Err(Error::InvalidArgument("lift level must be at least 1".into()));
        }
        let (n, r) = (ensemble.n, ensemble.r);
        let d = n * r;
        let lifted: Vec<SparseRows> = ensemble
            .matrices
            .iter()
            .map(|a| {
                let rows = (0..d)
                    .map(|p| {
                        let (blk, i) = (p / n, p % n);
                        (0..n).filter(|&j| a[(i, j)] != 0.0).map(|j| (blk * n + j, a[(i, j)])).collect()
                    })
                    .collect();
                SparseRows::from_rows(d, rows)
            })
            .collect();
        let mut u = DMatrix::zeros(d, d);
        for (a, &bk) in lifted.iter().zip(&ensemble.b) {
            for p in 0..d {
                for (q, v) in a.row(p) {
                    u[(p, q)] += bk * v;
                }
            }
        }
        let u_sparse = SparseRows::from_dense(&u, 0.0);
        let a_bar = SparseRows::from_rows(
            d * d,
            lifted.iter().map(|a| (0..d).flat_map(|p| a.row(p).map(move |(q, v)| (p * d + q, v))).collect()).collect(),
        );
        let a_bar_t = a_bar.transpose();
        let b_norm_sq = ensemble.b.iter().map(|v| v * v).sum();

        let dl = checked_pow(d, l)?;
        let mut spread_i = Vec::with_capacity(dl);
        let mut spread_j = Vec::with_capacity(dl);
        let big_d = d * d;
        for idx in 0..dl {
            let (mut rest, mut si, mut sj, mut stride) = (idx, 0usize, 0usize, 1usize);
            for _ in 0..l {
                let digit = rest % d;
                rest /= d;
                si += digit * d * stride;
                sj += digit * stride;
                stride *= big_d;
            }
            spread_i.push(si);
            spread_j.push(sj);
        }

        let mut p = Self {
            ensemble,
            l,
            d,
            lifted,
            u,
            u_sparse,
            a_bar,
            a_bar_t,
            gram: None,
            strategy,
            fell_back: false,
            b_norm_sq,
            spread_i,
            spread_j,
        };
        let fits = checked_pow(big_d, l).ok().and_then(|v| v.checked_mul(8)).is_some_and(|bytes| bytes <= budget_bytes);
        match strategy {
            Strategy::Gram if !fits => {
                return Err(Error::Budget(format!(
                    "gram path needs (nr)^(2l) = {}^{} doubles, over the budget of {budget_bytes} bytes",
                    d * d,
                    l
                )))
            }
            Strategy::Auto if !fits => {
                p.strategy = Strategy::Staged;
                p.fell_back = true;
            }
            Strategy::Gram | Strategy::Auto => {
                p.strategy = Strategy::Gram;
                p.gram = Some(p.choose_gram(budget_bytes));
            }
            Strategy::Reference | Strategy::Staged => {}
        }
        Ok(p)
    }

    /// Same problem evaluated along another path.
    pub fn with_strategy(&self, strategy: Strategy) -> Result<Self> {
        Self::with_budget(self.ensemble.clone(), self.l, strategy, usize::MAX)
    }

    fn choose_gram(&self, budget_bytes: usize) -> GramOperator {
        let big_d = (self.d * self.d) as f64;
        let m = self.ensemble.m() as f64;
        let l = self.l as i32;
        let mut h_rows: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); self.d * self.d];
        for k in 0..self.a_bar.nrows() {
            let row: Vec<(usize, f64)> = self.a_bar.row(k).collect();
            for &(p, a) in &row {
                for &(q, b) in &row {
                    *h_rows[p].entry(q).or_insert(0.0) += a * b;
                }
            }
        }
        let h = SparseRows::from_rows(self.d * self.d, h_rows.into_iter().map(|r| r.into_iter().collect()).collect());
        let explicit = l as f64 * big_d.powi(l - 1) * h.nnz() as f64;
        let factored: f64 = 2.0 * self.a_bar.nnz() as f64 * (1..=l).map(|t| m.powi(t - 1) * big_d.powi(l - t)).sum::<f64>();
        let peak = m.max(big_d).powi(l) * 8.0;
        if factored < explicit && peak <= budget_bytes as f64 {
            GramOperator::Factored
        } else {
            GramOperator::Explicit(h)
        }
    }

    pub fn ensemble(&self) -> &SensingEnsemble {
        &self.ensemble
    }

    pub fn level(&self) -> usize {
        self.l
    }

    /// Mode dimension `nr`.
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    /// True when `Auto` had to leave the Gram path for lack of memory.
    pub fn fell_back_to_staged(&self) -> bool {
        self.fell_back
    }

    /// `U = Σ_k b_k Ã_k`.
    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    /// The lifted sensing matrices `Ã_k` in dense form.
    pub fn lifted_matrices(&self) -> Vec<DMatrix<f64>> {
        self.lifted.iter().map(SparseRows::to_dense).collect()
    }

    /// Dense Gram matrix `Σ_k vec(Ã_k) vec(Ã_k)ᵀ`.
    pub fn gram_matrix(&self) -> DMatrix<f64> {
        let a = self.a_bar.to_dense();
        a.transpose() * a
    }

    fn check(&self, w: &DenseTensor) -> Result<()> {
        if w.order() != self.l || !w.is_cubic() || w.dim() != self.d {
            return Err(Error::Shape(format!(
                "lifted point has shape {:?}, expected order {} and dimension {}",
                w.shape(),
                self.l,
                self.d
            )));
        }
        Ok(())
    }

    /// `(U^{⊗l}) w`.
    pub fn apply_u(&self, w: &DenseTensor) -> Result<DenseTensor> {
        let mut t = w.clone();
        for mode in 0..self.l {
            t = t.mode_product_sparse(&self.u_sparse, mode)?;
        }
        Ok(t)
    }

    fn pair(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.spread_i.len() * self.spread_j.len()];
        for (&si, &ai) in self.spread_i.iter().zip(a) {
            if ai == 0.0 {
                continue;
            }
            for (&sj, &bj) in self.spread_j.iter().zip(b) {
                out[si + sj] = ai * bj;
            }
        }
        out
    }

    /// `out[I] = Σ_J g[pair(I, J)] x[J]`.
    fn contract_pair(&self, g: &[f64], x: &[f64]) -> Vec<f64> {
        self.spread_i
            .iter()
            .map(|&si| self.spread_j.iter().zip(x).map(|(&sj, &xj)| g[si + sj] * xj).sum())
            .collect()
    }

    /// `out[I] = Σ_J G[pair(I, J)] c[J]` with `G = H^{⊗l} pair(a, b)`.
    fn gram_kernel(&self, a: &[f64], b: &[f64], c: &[f64]) -> Vec<f64> {
        match self.gram.as_ref().expect("gram operator present on the gram path") {
            GramOperator::Explicit(h) => self.slab_kernel(h, a, b, c),
            GramOperator::Factored => self.contract_pair(&self.gram_apply(&self.pair(a, b)), c),
        }
    }

    /// The explicit kernel built one leading pair index at a time, so only
    /// slabs of `(nr)^{2(l-1)}` entries are ever held.
    fn slab_kernel(&self, h: &SparseRows, a: &[f64], b: &[f64], c: &[f64]) -> Vec<f64> {
        let d = self.d;
        let big_d = d * d;
        let sub = self.spread_i.len() / d;
        let slab_len = sub * sub;
        let (si, sj) = (&self.spread_i[..sub], &self.spread_j[..sub]);
        let run = d.min(sub);
        let mut out = vec![0.0; a.len()];
        let mut slab = vec![0.0; slab_len];
        let mut tmp = vec![0.0; slab_len];
        for p in 0..big_d {
            slab.fill(0.0);
            for (q, coef) in h.row(p) {
                let a_sub = &a[(q / d) * sub..(q / d + 1) * sub];
                let b_sub = &b[(q % d) * sub..(q % d + 1) * sub];
                for (&x, &ai) in si.iter().zip(a_sub) {
                    let ca = coef * ai;
                    if ca == 0.0 {
                        continue;
                    }
                    for (b_run, &y) in b_sub.chunks_exact(run).zip(sj.iter().step_by(run)) {
                        for (s, &bj) in slab[x + y..x + y + run].iter_mut().zip(b_run) {
                            *s += ca * bj;
                        }
                    }
                }
            }
            let mut inner = slab_len;
            for _ in 1..self.l {
                inner /= big_d;
                tensor::sparse_mode_product_into(&slab, h, big_d, inner, &mut tmp);
                std::mem::swap(&mut slab, &mut tmp);
            }
            let c_sub = &c[(p % d) * sub..(p % d + 1) * sub];
            for (o, &x) in out[(p / d) * sub..(p / d + 1) * sub].iter_mut().zip(si) {
                let mut acc = 0.0;
                for (c_run, &y) in c_sub.chunks_exact(run).zip(sj.iter().step_by(run)) {
                    acc += slab[x + y..x + y + run].iter().zip(c_run).map(|(g, cj)| g * cj).sum::<f64>();
                }
                *o += acc;
            }
        }
        out
    }

    fn gram_apply(&self, paired: &[f64]) -> Vec<f64> {
        let big_d = self.d * self.d;
        let ops: Vec<&SparseRows> = match self.gram.as_ref().expect("gram operator present on the gram path") {
            GramOperator::Explicit(h) => vec![h; self.l],
            GramOperator::Factored => {
                std::iter::repeat(&self.a_bar).take(self.l).chain(std::iter::repeat(&self.a_bar_t).take(self.l)).collect()
            }
        };
        self.apply_modes(paired, &ops, big_d)
    }

    /// Apply `ops[s]` along mode `s mod l` in sequence, starting from a cubic
    /// tensor of extent `extent`.
    fn apply_modes(&self, src: &[f64], ops: &[&SparseRows], extent: usize) -> Vec<f64> {
        let mut shape = vec![extent; self.l];
        let cap = ops
            .iter()
            .enumerate()
            .scan(shape.clone(), |sh, (s, op)| {
                sh[s % self.l] = op.nrows();
                Some(sh.iter().product::<usize>())
            })
            .fold(src.len(), usize::max);
        let mut cur = Vec::with_capacity(cap);
        cur.extend_from_slice(src);
        let mut next = Vec::with_capacity(cap);
        for (s, op) in ops.iter().enumerate() {
            let mode = s % self.l;
            let inner: usize = shape[mode + 1..].iter().product();
            let len = cur.len() / shape[mode] * op.nrows();
            next.resize(len, 0.0);
            tensor::sparse_mode_product_into(&cur, op, shape[mode], inner, &mut next);
            shape[mode] = op.nrows();
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Depth-first traversal over measurement multi-indices; `visit` receives
    /// `b_{k₁}⋯b_{k_l}` and `(⊗_t Ã_{k_t})` applied to each input.
    fn staged<const N: usize>(&self, inputs: [&DenseTensor; N], visit: &mut dyn FnMut(f64, &[DenseTensor; N])) -> Result<()> {
        let start: [DenseTensor; N] = inputs.map(|t| t.clone());
        self.staged_rec(0, 1.0, &start, visit)
    }

    fn staged_rec<const N: usize>(
        &self,
        depth: usize,
        bprod: f64,
        ts: &[DenseTensor; N],
        visit: &mut dyn FnMut(f64, &[DenseTensor; N]),
    ) -> Result<()> {
        if depth == self.l {
            visit(bprod, ts);
            return Ok(());
        }
        for (a, &bk) in self.lifted.iter().zip(&self.ensemble.b) {
            let mut next: Vec<DenseTensor> = Vec::with_capacity(N);
            for t in ts {
                next.push(t.mode_product_sparse(a, depth)?);
            }
            let next: [DenseTensor; N] = next.try_into().expect("arity preserved");
            self.staged_rec(depth + 1, bprod * bk, &next, visit)?;
        }
        Ok(())
    }

    /// Coefficient `Π_t Ã_{k_t}[i_t, j_t]` of the naive expansion.
    fn coefficient(&self, dense: &[DMatrix<f64>], ks: &[usize], i: usize, j: usize) -> f64 {
        let (mut i, mut j, mut c) = (i, j, 1.0);
        for t in (0..self.l).rev() {
            c *= dense[ks[t]][(i % self.d, j % self.d)];
            if c == 0.0 {
                return 0.0;
            }
            i /= self.d;
            j /= self.d;
        }
        c
    }

    fn multi_indices(&self) -> impl Iterator<Item = (Vec<usize>, f64)> + '_ {
        let m = self.ensemble.m();
        let total = m.pow(self.l as u32);
        (0..total).map(move |mut flat| {
            let mut ks = vec![0; self.l];
            for t in (0..self.l).rev() {
                ks[t] = flat % m;
                flat /= m;
            }
            let bprod = ks.iter().map(|&k| self.ensemble.b[k]).product();
            (ks, bprod)
        })
    }

    fn reference_terms(&self, w: &DenseTensor, delta: Option<&DenseTensor>) -> Vec<(f64, f64, f64, f64, Vec<f64>)> {
        let dense = self.lifted_matrices();
        let dl = w.len();
        let wd = w.data();
        self.multi_indices()
            .map(|(ks, bprod)| {
                let (mut y, mut dy, mut d2y) = (0.0, 0.0, 0.0);
                let mut grad_y = vec![0.0; dl];
                for i in 0..dl {
                    for j in 0..dl {
                        let c = self.coefficient(&dense, &ks, i, j);
                        if c == 0.0 {
                            continue;
                        }
                        y += c * wd[i] * wd[j];
                        grad_y[i] += c * wd[j];
                        grad_y[j] += c * wd[i];
                        if let Some(dt) = delta {
                            let dd = dt.data();
                            dy += c * (dd[i] * wd[j] + wd[i] * dd[j]);
                            d2y += 2.0 * c * dd[i] * dd[j];
                        }
                    }
                }
                (y, bprod, dy, d2y, grad_y)
            })
            .collect()
    }
}

fn checked_pow(base: usize, exp: usize) -> Result<usize> {
    base.checked_pow(exp as u32).ok_or_else(|| Error::Budget(format!("{base}^{exp} overflows the address space")))
}

/// The order-`l` tensor of lifted measurements `y(w)`, indexed by `(k₁,…,k_l)`.
pub fn lifted_measurements(p: &LiftedProblem, w: &DenseTensor) -> Result<DenseTensor> {
    p.check(w)?;
    let m = p.ensemble.m();
    let data = match p.strategy {
        Strategy::Reference => p.reference_terms(w, None).into_iter().map(|t| t.0).collect(),
        Strategy::Gram => {
            p.apply_modes(&p.pair(w.data(), w.data()), &vec![&p.a_bar; p.l], p.d * p.d)
        }
        _ => {
            let mut ys = Vec::with_capacity(m.pow(p.l as u32));
            p.staged([w], &mut |_, [t]| ys.push(inner(w.data(), t.data())))?;
            ys
        }
    };
    DenseTensor::from_vec(p.l, m, data)
}

fn inner(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn lifted_loss(p: &LiftedProblem, w: &DenseTensor) -> Result<f64> {
    p.check(w)?;
    let loss = match p.strategy {
        Strategy::Reference => p.reference_terms(w, None).iter().map(|(y, b, ..)| (y - b) * (y - b)).sum(),
        Strategy::Gram => {
            let y_sq = inner(w.data(), &p.gram_kernel(w.data(), w.data(), w.data()));
            let uw = p.apply_u(w)?;
            (y_sq - 2.0 * inner(w.data(), uw.data()) + p.b_norm_sq.powi(p.l as i32)).max(0.0)
        }
        _ => {
            let mut acc = 0.0;
            p.staged([w], &mut |bprod, [t]| {
                let r = inner(w.data(), t.data()) - bprod;
                acc += r * r;
            })?;
            acc
        }
    };
    finite(loss, "lifted loss")
}

pub fn lifted_grad(p: &LiftedProblem, w: &DenseTensor) -> Result<DenseTensor> {
    Ok(lifted_loss_grad(p, w)?.grad)
}

/// Loss and gradient from one shared contraction.
pub fn lifted_loss_grad(p: &LiftedProblem, w: &DenseTensor) -> Result<LossGrad> {
    p.check(w)?;
    let (loss, grad) = match p.strategy {
        Strategy::Reference => {
            let mut g = vec![0.0; w.len()];
            let mut loss = 0.0;
            for (y, b, _, _, gy) in p.reference_terms(w, None) {
                let r = y - b;
                loss += r * r;
                for (a, v) in g.iter_mut().zip(&gy) {
                    *a += 2.0 * r * v;
                }
            }
            (loss, g)
        }
        Strategy::Gram => {
            let kw = p.gram_kernel(w.data(), w.data(), w.data());
            let y_sq = inner(w.data(), &kw);
            let uw = p.apply_u(w)?;
            let loss = (y_sq - 2.0 * inner(w.data(), uw.data()) + p.b_norm_sq.powi(p.l as i32)).max(0.0);
            let grad = kw.iter().zip(uw.data()).map(|(a, b)| 4.0 * (a - b)).collect();
            (loss, grad)
        }
        _ => {
            let mut g = vec![0.0; w.len()];
            let mut loss = 0.0;
            p.staged([w], &mut |bprod, [t]| {
                let r = inner(w.data(), t.data()) - bprod;
                loss += r * r;
                for (a, v) in g.iter_mut().zip(t.data()) {
                    *a += 4.0 * r * v;
                }
            })?;
            (loss, g)
        }
    };
    let loss = finite(loss, "lifted loss")?;
    if grad.iter().any(|v: &f64| !v.is_finite()) {
        return Err(Error::NonFinite("lifted gradient".into()));
    }
    Ok(LossGrad { loss, grad: w.with_data(grad) })
}

/// `∇²h(w)[Δ, Δ] = Σ_k 8 q_k(Δ, w)² + 4 (y_k − b_k) q_k(Δ, Δ)` with
/// `q_k(a, c) = ⟨a, (⊗Ã_k) c⟩`.
pub fn lifted_hessian_quadform(p: &LiftedProblem, w: &DenseTensor, delta: &DenseTensor) -> Result<f64> {
    p.check(w)?;
    p.check(delta)?;
    let q = match p.strategy {
        Strategy::Reference => {
            p.reference_terms(w, Some(delta)).iter().map(|(y, b, dy, d2y, _)| 2.0 * dy * dy + 2.0 * (y - b) * d2y).sum()
        }
        Strategy::Gram => {
            let cross = inner(delta.data(), &p.gram_kernel(delta.data(), w.data(), w.data()));
            let y_dd = inner(delta.data(), &p.gram_kernel(w.data(), w.data(), delta.data()));
            let ud = p.apply_u(delta)?;
            8.0 * cross + 4.0 * (y_dd - inner(delta.data(), ud.data()))
        }
        _ => {
            let mut acc = 0.0;
            p.staged([w, delta], &mut |bprod, [tw, td]| {
                let r = inner(w.data(), tw.data()) - bprod;
                let qwd = inner(delta.data(), tw.data());
                let qdd = inner(delta.data(), td.data());
                acc += 8.0 * qwd * qwd + 4.0 * r * qdd;
            })?;
            acc
        }
    };
    finite(q, "hessian quadratic form")
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

/// `scale · vec(X)^{⊗l}` in column-major vectorization.
pub fn lift_factor(x: &FactorMatrix, l: usize, scale: f64) -> Result<DenseTensor> {
    DenseTensor::outer_power(&linalg::vectorize(&x.0), l, scale)
}

#[derive(Clone, Debug)]
pub struct LiftedInit {
    pub w0: DenseTensor,
    pub x0: DVector<f64>,
    /// Unit eigenvector of the largest eigenvalue of `U`.
    pub v1: DVector<f64>,
    /// Eigenvalues of `U` in descending order.
    pub spectrum: Vec<f64>,
}

/// `w₀ = ε (v₁ + g)^{⊗l}` with `g` i.i.d. Gaussian of standard deviation
/// `rho_init`.
pub fn init_lifted(p: &LiftedProblem, epsilon: f64, rho_init: f64, seed: u64, trial: u64) -> Result<LiftedInit> {
    if !(epsilon > 0.0) || !(rho_init >= 0.0) {
        return Err(Error::InvalidArgument(format!("need epsilon > 0 and rho_init >= 0 (got {epsilon}, {rho_init})")));
    }
    if p.u.norm() <= 1e-12 * (1.0 + p.b_norm_sq.sqrt()) {
        return Err(Error::Degenerate("data matrix U is numerically zero".into()));
    }
    let (vals, vecs) = linalg::sym_eigen(&p.u);
    let v1 = vecs.column(p.d - 1).into_owned();
    let mut rng = rng::stream(seed, trial, Tag::LiftedInit);
    let g = DVector::from_vec(rng::normal_vec(&mut rng, p.d));
    let x0 = &v1 + g * rho_init;
    let w0 = DenseTensor::outer_power(x0.as_slice(), p.l, epsilon)?;
    Ok(LiftedInit { w0, x0, v1, spectrum: vals.into_iter().rev().collect() })
}

#[derive(Clone, Debug)]
pub struct Recovery {
    pub x: FactorMatrix,
    pub certificate: Rank1Certificate,
    /// `‖X Xᵀ − M*‖_F` when the ground truth is known.
    pub recovery_error: Option<f64>,
    /// Set when the rank-1 fit did not reach its gradient tolerance.
    pub flagged: bool,
}

/// Factor `X = unstack(sign(λ)|λ|^{1/l} v)` from the dominant rank-1 part.
pub fn recover_factor(p: &LiftedProblem, w: &DenseTensor, cfg: &PcaConfig) -> Result<Recovery> {
    p.check(w)?;
    let cert = dominant_component(w, cfg)?;
    let mag = cert.scale.abs().powf(1.0 / p.l as f64) * cert.scale.signum();
    let v: Vec<f64> = cert.direction.iter().map(|c| c * mag).collect();
    let x = FactorMatrix::new(unstack(&v, p.ensemble.n, p.ensemble.r)?)?;
    let recovery_error = p.ensemble.m_star.as_ref().map(|m| (x.gram() - m).norm());
    Ok(Recovery { flagged: !cert.converged, x, certificate: cert, recovery_error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{gaussian_instance, nn_quadratic_instance, odd_support_factor, pmc_instance};
    use crate::rng::stream;
    use crate::tensor::asymmetry;
    use crate::unlifted::{harvest_spurious, HarvestConfig};

    fn random_w(seed: u64, l: usize, d: usize) -> DenseTensor {
        let mut rng = stream(seed, 7, Tag::Test);
        DenseTensor::from_vec(l, d, rng::normal_vec(&mut rng, d.pow(l as u32))).unwrap()
    }

    fn truth(p: &LiftedProblem) -> DenseTensor {
        lift_factor(&FactorMatrix(p.ensemble.ground_truth_z.clone().unwrap()), p.l, 1.0).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn measurements_at_truth_and_zero() {
        let e = gaussian_instance(2, 1, 3, 1).unwrap();
        for s in [Strategy::Reference, Strategy::Gram, Strategy::Staged] {
            let p = LiftedProblem::new(e.clone(), 2, s).unwrap();
            let y = lifted_measurements(&p, &truth(&p)).unwrap();
            let bl = DenseTensor::outer_power(&e.b, 2, 1.0).unwrap();
            assert!(y.sub(&bl).unwrap().norm() <= 1e-10, "{s:?}");
            assert_eq!(lifted_measurements(&p, &DenseTensor::zeros(2, 2)).unwrap().norm(), 0.0);
        }
        let p = LiftedProblem::new(e.clone(), 2, Strategy::Reference).unwrap();
        let w = random_w(3, 2, 2);
        let want = lifted_measurements(&p, &w).unwrap();
        for s in [Strategy::Gram, Strategy::Staged] {
            let got = lifted_measurements(&p.with_strategy(s).unwrap(), &w).unwrap();
            assert!(got.sub(&want).unwrap().norm() <= 1e-12 * want.norm());
        }
    }

    #[test]
    fn rank1_measurements_factor() {
        let e = gaussian_instance(3, 2, 4, 2).unwrap();
        let p = LiftedProblem::new(e.clone(), 3, Strategy::Gram).unwrap();
        let mut rng = stream(2, 0, Tag::Test);
        let x = FactorMatrix(rng::normal_matrix(&mut rng, 3, 2));
        let y = lifted_measurements(&p, &lift_factor(&x, 3, 1.0).unwrap()).unwrap();
        let base = e.measure(&x.gram());
        let want = DenseTensor::outer_power(&base, 3, 1.0).unwrap();
        assert!(y.sub(&want).unwrap().norm() <= 1e-10 * want.norm());
        let sep = want.sub(&DenseTensor::outer_power(&e.b, 3, 1.0).unwrap()).unwrap().norm().powi(2);
        assert!(rel(lifted_loss(&p, &lift_factor(&x, 3, 1.0).unwrap()).unwrap(), sep) <= 1e-9);
    }

    #[test]
    fn loss_examples() {
        let e = gaussian_instance(2, 1, 4, 5).unwrap();
        let bnorm: f64 = e.b.iter().map(|v| v * v).sum();
        for s in [Strategy::Reference, Strategy::Gram, Strategy::Staged] {
            let p = LiftedProblem::new(e.clone(), 3, s).unwrap();
            assert!(lifted_loss(&p, &truth(&p)).unwrap() <= 1e-12);
            assert!(rel(lifted_loss(&p, &DenseTensor::zeros(3, 2)).unwrap(), bnorm.powi(3)) <= 1e-12);
        }
        let p = LiftedProblem::new(e, 3, Strategy::Reference).unwrap();
        let w = random_w(9, 3, 2);
        let want = lifted_loss(&p, &w).unwrap();
        for s in [Strategy::Gram, Strategy::Staged] {
            assert!(rel(lifted_loss(&p.with_strategy(s).unwrap(), &w).unwrap(), want) <= 1e-9);
        }
    }

    #[test]
    fn paths_agree_on_loss_and_gradient() {
        for seed in 0..12u64 {
            let n = 2 + (seed % 2) as usize;
            let r = 1 + (seed % 3 == 0) as usize;
            let l = 1 + (seed % 3) as usize;
            let e = if seed % 2 == 0 {
                gaussian_instance(n, r, 3 + (seed % 3) as usize, seed).unwrap()
            } else {
                nn_quadratic_instance(n, r, 4, seed).unwrap()
            };
            let p = LiftedProblem::new(e, l, Strategy::Reference).unwrap();
            let w = random_w(seed, l, n * r);
            let want = lifted_loss_grad(&p, &w).unwrap();
            for s in [Strategy::Gram, Strategy::Staged] {
                let got = lifted_loss_grad(&p.with_strategy(s).unwrap(), &w).unwrap();
                assert!(rel(got.loss, want.loss) <= 1e-9, "seed {seed} {s:?}");
                assert!(got.grad.sub(&want.grad).unwrap().norm() <= 1e-9 * want.grad.norm(), "seed {seed} {s:?}");
            }
        }
    }

    #[test]
    fn gradient_matches_differences() {
        let e = gaussian_instance(2, 1, 3, 4).unwrap();
        let p = LiftedProblem::new(e, 3, Strategy::Gram).unwrap();
        let w = random_w(4, 3, 2);
        let g = lifted_grad(&p, &w).unwrap();
        let mut fd = vec![0.0; w.len()];
        let h = 1e-5;
        for (i, slot) in fd.iter_mut().enumerate() {
            let mut a = w.clone();
            let mut b = w.clone();
            a.data_mut()[i] += h;
            b.data_mut()[i] -= h;
            *slot = (lifted_loss(&p, &a).unwrap() - lifted_loss(&p, &b).unwrap()) / (2.0 * h);
        }
        let diff: f64 = fd.iter().zip(g.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        assert!(diff <= 1e-6 * g.norm());
        assert!(lifted_grad(&p, &truth(&p)).unwrap().norm() <= 1e-10);
    }

    #[test]
    fn hessian_examples() {
        let e = gaussian_instance(2, 1, 3, 8).unwrap();
        for s in [Strategy::Reference, Strategy::Gram, Strategy::Staged] {
            let p = LiftedProblem::new(e.clone(), 3, s).unwrap();
            let w = random_w(8, 3, 2);
            let dlt = random_w(18, 3, 2);
            assert_eq!(lifted_hessian_quadform(&p, &w, &DenseTensor::zeros(3, 2)).unwrap(), 0.0);
            let t = 1e-4;
            let f0 = lifted_loss(&p, &w).unwrap();
            let fp = lifted_loss(&p, &w.add_scaled(t, &dlt).unwrap()).unwrap();
            let fm = lifted_loss(&p, &w.add_scaled(-t, &dlt).unwrap()).unwrap();
            let fd = (fp - 2.0 * f0 + fm) / (t * t);
            let q = lifted_hessian_quadform(&p, &w, &dlt).unwrap();
            assert!(rel(q, fd) <= 1e-5, "{s:?}: {q} vs {fd}");
        }
    }

    #[test]
    fn gradient_is_symmetric_for_symmetric_input() {
        let e = gaussian_instance(3, 1, 5, 10).unwrap();
        let p = LiftedProblem::new(e, 3, Strategy::Gram).unwrap();
        let mut rng = stream(10, 0, Tag::Test);
        let a = DenseTensor::outer_power(&rng::normal_vec(&mut rng, 3), 3, 0.7).unwrap();
        let b = DenseTensor::outer_power(&rng::normal_vec(&mut rng, 3), 3, -1.3).unwrap();
        let w = a.add_scaled(1.0, &b).unwrap();
        assert!(asymmetry(&lifted_grad(&p, &w).unwrap()).unwrap() <= 1e-10);
    }

    #[test]
    fn rank1_gradient_identity() {
        let e = gaussian_instance(3, 1, 5, 12).unwrap();
        let p = LiftedProblem::new(e.clone(), 3, Strategy::Gram).unwrap();
        let mut rng = stream(12, 0, Tag::Test);
        let x = DVector::from_vec(rng::normal_vec(&mut rng, 3));
        let w = DenseTensor::outer_power(x.as_slice(), 3, 1.0).unwrap();
        let g = lifted_grad(&p, &w).unwrap();
        let y = e.measure(&(&x * x.transpose()));
        let gy: DMatrix<f64> = e.matrices.iter().zip(&y).map(|(a, v)| a * *v).sum();
        let want = DenseTensor::outer_power((gy * &x).as_slice(), 3, 4.0)
            .unwrap()
            .sub(&DenseTensor::outer_power((p.u() * &x).as_slice(), 3, 4.0).unwrap())
            .unwrap();
        assert!(g.sub(&want).unwrap().norm() <= 1e-10 * want.norm());

        let zero_b = SensingEnsemble::from_measurements(3, 1, e.matrices.clone(), vec![0.0; e.m()]).unwrap();
        let p0 = LiftedProblem::new(zero_b, 3, Strategy::Gram).unwrap();
        let g0 = lifted_grad(&p0, &w).unwrap();
        let resid_op: DMatrix<f64> = e.matrices.iter().zip(&y).map(|(a, v)| a * *v).sum();
        let dir = DenseTensor::outer_power((resid_op * &x).as_slice(), 3, 1.0).unwrap();
        let cos = crate::tensor::inner_full(&g0, &dir).unwrap() / (g0.norm() * dir.norm());
        assert!((cos - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn u_matches_adjoint_at_truth() {
        let e = pmc_instance(4, 2, 0.3, None, 1).unwrap();
        let p = LiftedProblem::new(e.clone(), 1, Strategy::Auto).unwrap();
        let adj = e.grad_matrix(&DMatrix::zeros(4, 4)) * -1.0;
        let mut want = DMatrix::zeros(8, 8);
        for blk in 0..2 {
            want.view_mut((blk * 4, blk * 4), (4, 4)).copy_from(&adj);
        }
        assert!((p.u() - want).norm() <= 1e-10);
        assert!(linalg::asymmetry(p.u()) == 0.0);
        for a in p.lifted_matrices() {
            assert!(linalg::asymmetry(&a) == 0.0);
        }
        let h = p.gram_matrix();
        let (vals, _) = linalg::sym_eigen(&h);
        assert!(vals[0] >= -1e-10);
    }

    #[test]
    fn budget_selection() {
        let e = gaussian_instance(3, 1, 3, 0).unwrap();
        let p = LiftedProblem::with_budget(e.clone(), 3, Strategy::Auto, 1000).unwrap();
        assert_eq!(p.strategy(), Strategy::Staged);
        assert!(p.fell_back_to_staged());
        assert!(matches!(LiftedProblem::with_budget(e.clone(), 3, Strategy::Gram, 1000), Err(Error::Budget(_))));
        let p = LiftedProblem::with_budget(e, 3, Strategy::Auto, 1 << 20).unwrap();
        assert_eq!(p.strategy(), Strategy::Gram);
    }

    #[test]
    fn gram_operators_match_reference_on_completion() {
        for (seed, (r, l)) in [(1, 1), (1, 2), (1, 3), (2, 1), (2, 2)].into_iter().enumerate() {
            let e = pmc_instance(3, r, 0.3, None, seed as u64).unwrap();
            let reference = LiftedProblem::new(e, l, Strategy::Reference).unwrap();
            let w = random_w(seed as u64, l, 3 * r);
            let delta = random_w(seed as u64 + 50, l, 3 * r);
            let want = lifted_loss_grad(&reference, &w).unwrap();
            let want_q = lifted_hessian_quadform(&reference, &w, &delta).unwrap();
            let mut p = reference.with_strategy(Strategy::Gram).unwrap();
            let explicit = SparseRows::from_dense(&p.gram_matrix(), 0.0);
            for op in [GramOperator::Factored, GramOperator::Explicit(explicit)] {
                p.gram = Some(op);
                let got = lifted_loss_grad(&p, &w).unwrap();
                assert!(rel(got.loss, want.loss) <= 1e-10, "r={r} l={l}");
                assert!(got.grad.sub(&want.grad).unwrap().norm() <= 1e-10 * want.grad.norm());
                assert!(rel(lifted_hessian_quadform(&p, &w, &delta).unwrap(), want_q) <= 1e-10);
            }
        }
    }

    #[test]
    fn factored_and_explicit_gram_agree() {
        let e = nn_quadratic_instance(4, 1, 3, 3).unwrap();
        let mut p = LiftedProblem::new(e, 3, Strategy::Gram).unwrap();
        let w = random_w(1, 3, 4);
        p.gram = Some(GramOperator::Factored);
        let a = lifted_loss_grad(&p, &w).unwrap();
        let h = SparseRows::from_dense(&p.gram_matrix(), 0.0);
        p.gram = Some(GramOperator::Explicit(h));
        let b = lifted_loss_grad(&p, &w).unwrap();
        assert!(rel(a.loss, b.loss) <= 1e-12);
        assert!(a.grad.sub(&b.grad).unwrap().norm() <= 1e-12 * a.grad.norm());
    }

    #[test]
    fn hessian_nonnegative_at_truth() {
        for l in [1usize, 3] {
            let e = pmc_instance(4, 1, 0.1, None, 2).unwrap();
            let p = LiftedProblem::new(e, l, Strategy::Auto).unwrap();
            let z = truth(&p);
            for s in 0..20 {
                let dlt = random_w(100 + s, l, 4);
                assert!(lifted_hessian_quadform(&p, &z, &dlt).unwrap() >= -1e-10);
            }
        }
    }

    #[test]
    fn init_examples() {
        let e = pmc_instance(4, 1, 0.2, None, 3).unwrap();
        let p = LiftedProblem::new(e, 3, Strategy::Auto).unwrap();
        let init = init_lifted(&p, 1e-3, 0.0, 1, 0).unwrap();
        let want = DenseTensor::outer_power(init.v1.as_slice(), 3, 1e-3).unwrap();
        assert_eq!(init.w0, want);
        assert!((init.v1.norm() - 1.0).abs() < 1e-12);
        let first = init.v1.iter().find(|v| v.abs() > 1e-12).unwrap();
        assert!(*first > 0.0);
        let noisy = init_lifted(&p, 1e-3, 0.25, 1, 0).unwrap();
        assert!(asymmetry(&noisy.w0).unwrap() <= 1e-15);
        assert!(init_lifted(&p, 0.0, 0.1, 1, 0).is_err());
        let z = SensingEnsemble::from_measurements(2, 1, vec![DMatrix::identity(2, 2)], vec![0.0]).unwrap();
        let pz = LiftedProblem::new(z, 1, Strategy::Auto).unwrap();
        assert!(matches!(init_lifted(&pz, 1e-3, 0.1, 1, 0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn recovery_round_trip() {
        let e = pmc_instance(4, 2, 0.3, None, 4).unwrap();
        let p = LiftedProblem::new(e.clone(), 3, Strategy::Auto).unwrap();
        let zf = FactorMatrix(e.ground_truth_z.clone().unwrap());
        let rec = recover_factor(&p, &lift_factor(&zf, 3, 1.0).unwrap(), &PcaConfig::default()).unwrap();
        assert!(rec.recovery_error.unwrap() <= 1e-6);
        let rec2 = recover_factor(&p, &lift_factor(&zf, 3, 8.0).unwrap(), &PcaConfig::default()).unwrap();
        let g2 = rec2.x.gram();
        assert!((g2 - zf.gram() * 4.0).norm() <= 1e-6 * zf.gram().norm());
    }

    #[test]
    fn harvested_points_lift_to_stationary_points() {
        let z = odd_support_factor(6, 1, 11, 0);
        let e = pmc_instance(6, 1, 0.01, Some(z), 0).unwrap();
        let pts = harvest_spurious(&e, &HarvestConfig { starts: 8, ..HarvestConfig::default() }).unwrap();
        assert!(!pts.is_empty());
        let p = LiftedProblem::new(e, 3, Strategy::Auto).unwrap();
        for pt in pts {
            let w = lift_factor(&pt.x, 3, 1.0).unwrap();
            let scale = 4.0 * p.apply_u(&w).unwrap().norm();
            assert!(lifted_grad(&p, &w).unwrap().norm() <= 1e-8 * scale.max(1.0));
        }
    }
}
