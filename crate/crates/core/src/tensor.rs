//! Dense tensors in flat row-major storage and the multilinear algebra used
//! by the objectives: outer powers, mode products, contractions and
//! symmetrization.

use crate::error::{Error, Result};
use crate::linalg;
use itertools::Itertools;
use nalgebra::DMatrix;

/// Largest order for which permutation enumeration is attempted.
pub const MAX_PERMUTATION_ORDER: usize = 6;

/// Real tensor with flat row-major storage. Most tensors in this crate are
/// cubic (every mode has the same extent); mode products against
/// rectangular matrices produce non-cubic intermediates.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Dominant symmetric rank-1 component `scale * direction^{⊗order}` of a tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Rank1Certificate {
    pub scale: f64,
    pub direction: Vec<f64>,
    pub residual_fro: f64,
    /// Gradient norm reached by the fitting procedure.
    pub grad_norm: f64,
    pub converged: bool,
}

impl Rank1Certificate {
    pub fn order_tensor(&self, order: usize) -> Result<DenseTensor> {
        DenseTensor::outer_power(&self.direction, order, self.scale)
    }
}

impl DenseTensor {
    pub fn zeros(order: usize, dim: usize) -> Self {
        Self::zeros_shape(vec![dim; order])
    }

    pub fn zeros_shape(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self { shape, data: vec![0.0; len] }
    }

    /// Cubic tensor from flat data; rejects wrong lengths and non-finite entries.
    pub fn from_vec(order: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_shape_vec(vec![dim; order], data)
    }

    pub fn from_shape_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Shape(format!("invalid tensor shape {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::Shape(format!("data length {} != {len} for shape {shape:?}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor entries must be finite".into()));
        }
        Ok(Self { shape, data })
    }

    /// Identical tensor over new storage, skipping the finiteness scan.
    pub(crate) fn with_data(&self, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self { shape: self.shape.clone(), data }
    }

    /// `scale * x^{⊗order}`.
    pub fn outer_power(x: &[f64], order: usize, scale: f64) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::InvalidArgument("outer_power of an empty vector".into()));
        }
        if order == 0 {
            return Err(Error::InvalidArgument("outer_power order must be positive".into()));
        }
        let mut data = vec![scale];
        for _ in 0..order {
            let mut next = Vec::with_capacity(data.len() * x.len());
            for &a in &data {
                next.extend(x.iter().map(|&b| a * b));
            }
            data = next;
        }
        Self::from_vec(order, x.len(), data)
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    /// Extent of the first mode; equals every extent for cubic tensors.
    pub fn dim(&self) -> usize {
        self.shape[0]
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn is_cubic(&self) -> bool {
        self.shape.iter().all(|&s| s == self.shape[0])
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Flat offset of a multi-index (Horner's rule).
    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        idx.iter().zip(&self.shape).fold(0, |acc, (&i, &s)| acc * s + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.with_data(self.data.iter().map(|v| c * v).collect())
    }

    /// `self + c * other`.
    pub fn add_scaled(&self, c: f64, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(self.with_data(self.data.iter().zip(&other.data).map(|(a, b)| a + c * b).collect()))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add_scaled(-1.0, other)
    }

    pub(crate) fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }

    pub(crate) fn require_cubic(&self) -> Result<()> {
        if !self.is_cubic() {
            return Err(Error::Shape(format!("cubic tensor required, got {:?}", self.shape)));
        }
        Ok(())
    }

    /// Contract mode `mode` against the columns of `m` (`p x d`).
    pub fn mode_product(&self, m: &DMatrix<f64>, mode: usize) -> Result<Self> {
        if mode >= self.order() {
            return Err(Error::Shape(format!("mode {mode} out of range for order {}", self.order())));
        }
        let d = self.shape[mode];
        if m.ncols() != d {
            return Err(Error::Shape(format!("matrix has {} columns, mode {mode} has extent {d}", m.ncols())));
        }
        let p = m.nrows();
        let outer: usize = self.shape[..mode].iter().product();
        let inner: usize = self.shape[mode + 1..].iter().product();
        let mut out = vec![0.0; outer * p * inner];
        for o in 0..outer {
            let src = &self.data[o * d * inner..(o + 1) * d * inner];
            let dst = &mut out[o * p * inner..(o + 1) * p * inner];
            for i in 0..p {
                let row = &mut dst[i * inner..(i + 1) * inner];
                for j in 0..d {
                    let c = m[(i, j)];
                    if c == 0.0 {
                        continue;
                    }
                    for (a, b) in row.iter_mut().zip(&src[j * inner..(j + 1) * inner]) {
                        *a += c * b;
                    }
                }
            }
        }
        let mut shape = self.shape.clone();
        shape[mode] = p;
        Ok(Self { shape, data: out })
    }

    /// Apply the same square matrix along every mode.
    pub fn mode_product_all(&self, m: &DMatrix<f64>) -> Result<Self> {
        let mut t = self.clone();
        for mode in 0..self.order() {
            t = t.mode_product(m, mode)?;
        }
        Ok(t)
    }

    /// Contract mode `mode` against a sparse matrix.
    pub fn mode_product_sparse(&self, m: &SparseRows, mode: usize) -> Result<Self> {
        if mode >= self.order() {
            return Err(Error::Shape(format!("mode {mode} out of range for order {}", self.order())));
        }
        let d = self.shape[mode];
        if m.ncols != d {
            return Err(Error::Shape(format!("sparse matrix has {} columns, mode extent {d}", m.ncols)));
        }
        let p = m.nrows();
        let outer: usize = self.shape[..mode].iter().product();
        let inner: usize = self.shape[mode + 1..].iter().product();
        let mut out = vec![0.0; outer * p * inner];
        sparse_mode_product_into(&self.data, m, d, inner, &mut out);
        let mut shape = self.shape.clone();
        shape[mode] = p;
        Ok(Self { shape, data: out })
    }

    /// Numpy-style transpose: output axis `a` is input axis `perm[a]`.
    pub fn permute_axes(&self, perm: &[usize]) -> Result<Self> {
        let order = self.order();
        if perm.len() != order || !(0..order).all(|a| perm.contains(&a)) {
            return Err(Error::InvalidArgument(format!("{perm:?} is not a permutation of 0..{order}")));
        }
        let mut in_strides = vec![1usize; order];
        for a in (0..order.saturating_sub(1)).rev() {
            in_strides[a] = in_strides[a + 1] * self.shape[a + 1];
        }
        let shape: Vec<usize> = perm.iter().map(|&a| self.shape[a]).collect();
        let strides: Vec<usize> = perm.iter().map(|&a| in_strides[a]).collect();
        let mut out = Vec::with_capacity(self.data.len());
        let mut digits = vec![0usize; order];
        let mut src = 0usize;
        for _ in 0..self.data.len() {
            out.push(self.data[src]);
            for a in (0..order).rev() {
                digits[a] += 1;
                src += strides[a];
                if digits[a] < shape[a] {
                    break;
                }
                src -= strides[a] * shape[a];
                digits[a] = 0;
            }
        }
        Ok(Self { shape, data: out })
    }
}

/// Frobenius inner product of two tensors of identical shape.
pub fn inner_full(a: &DenseTensor, b: &DenseTensor) -> Result<f64> {
    a.check_same_shape(b)?;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum())
}

fn check_permutable(t: &DenseTensor) -> Result<()> {
    t.require_cubic()?;
    if t.order() > MAX_PERMUTATION_ORDER {
        return Err(Error::InvalidArgument(format!(
            "permutation enumeration limited to order {MAX_PERMUTATION_ORDER}, got {}",
            t.order()
        )));
    }
    Ok(())
}

/// `max_σ ‖t − t∘σ‖_F / ‖t‖_F`; zero exactly for symmetric tensors.
pub fn asymmetry(t: &DenseTensor) -> Result<f64> {
    check_permutable(t)?;
    let norm = t.norm().max(f64::MIN_POSITIVE);
    let mut worst = 0.0f64;
    for perm in (0..t.order()).permutations(t.order()) {
        if perm.iter().enumerate().all(|(a, &b)| a == b) {
            continue;
        }
        let p = t.permute_axes(&perm)?;
        let diff: f64 = t.data.iter().zip(&p.data).map(|(a, b)| (a - b) * (a - b)).sum();
        worst = worst.max(diff.sqrt() / norm);
    }
    Ok(worst)
}

/// Average over all index permutations.
pub fn symmetrize(t: &DenseTensor) -> Result<DenseTensor> {
    check_permutable(t)?;
    let mut acc = vec![0.0; t.len()];
    let mut count = 0usize;
    for perm in (0..t.order()).permutations(t.order()) {
        let p = t.permute_axes(&perm)?;
        for (a, b) in acc.iter_mut().zip(&p.data) {
            *a += b;
        }
        count += 1;
    }
    let inv = 1.0 / count as f64;
    Ok(t.with_data(acc.into_iter().map(|v| v * inv).collect()))
}

/// `(I + eta * U^{⊗l})^{t_steps} w0`, evaluated in the eigenbasis of `U`.
pub fn operator_power_apply(u: &DMatrix<f64>, eta: f64, t_steps: u32, w0: &DenseTensor) -> Result<DenseTensor> {
    if !u.is_square() {
        return Err(Error::Shape("operator must be square".into()));
    }
    let scale = u.norm().max(1.0);
    if linalg::asymmetry(u) > 1e-8 * scale {
        return Err(Error::InvalidArgument("operator must be symmetric".into()));
    }
    w0.require_cubic()?;
    if w0.dim() != u.nrows() {
        return Err(Error::Shape(format!("tensor dim {} vs operator {}", w0.dim(), u.nrows())));
    }
    if t_steps == 0 {
        return Ok(w0.clone());
    }
    let (vals, vecs) = linalg::sym_eigen(u);
    let mut coeffs = w0.mode_product_all(&vecs.transpose())?;
    let d = w0.dim();
    let order = w0.order();
    let mut digits = vec![0usize; order];
    for c in coeffs.data.iter_mut() {
        let prod: f64 = digits.iter().map(|&p| vals[p]).product();
        *c *= (1.0 + eta * prod).powi(t_steps as i32);
        for a in (0..order).rev() {
            digits[a] += 1;
            if digits[a] < d {
                break;
            }
            digits[a] = 0;
        }
    }
    coeffs.mode_product_all(&vecs)
}

/// `dst = src ×_mode m` for `src` viewed as `(outer, d, inner)`; `dst` is
/// overwritten and must hold `outer · m.nrows() · inner` entries.
pub(crate) fn sparse_mode_product_into(src: &[f64], m: &SparseRows, d: usize, inner: usize, dst: &mut [f64]) {
    let p = m.nrows();
    if inner == 1 {
        const BLOCK: usize = 64;
        let mut tin = vec![0.0; d * BLOCK];
        let mut tout = vec![0.0; p * BLOCK];
        for (src, dst) in src.chunks(d * BLOCK).zip(dst.chunks_mut(p * BLOCK)) {
            let b = src.len() / d;
            for (o, row) in src.chunks_exact(d).enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    tin[j * b + o] = v;
                }
            }
            sparse_rows_apply(&tin[..d * b], m, b, &mut tout[..p * b]);
            for (o, row) in dst.chunks_exact_mut(p).enumerate() {
                for (i, a) in row.iter_mut().enumerate() {
                    *a = tout[i * b + o];
                }
            }
        }
        return;
    }
    for (src, dst) in src.chunks_exact(d * inner).zip(dst.chunks_exact_mut(p * inner)) {
        sparse_rows_apply(src, m, inner, dst);
    }
}

/// `dst[i, :] = Σ_j m[i, j] src[j, :]` for row blocks of width `inner`.
fn sparse_rows_apply(src: &[f64], m: &SparseRows, inner: usize, dst: &mut [f64]) {
    for (i, row) in dst.chunks_exact_mut(inner).enumerate() {
        let mut entries = m.row(i);
        match entries.next() {
            Some((j, c)) => {
                for (a, b) in row.iter_mut().zip(&src[j * inner..(j + 1) * inner]) {
                    *a = c * b;
                }
            }
            None => row.fill(0.0),
        }
        for (j, c) in entries {
            for (a, b) in row.iter_mut().zip(&src[j * inner..(j + 1) * inner]) {
                *a += c * b;
            }
        }
    }
}

/// Compressed sparse rows, used for the structured sensing operators.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseRows {
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseRows {
    /// Keep the entries of a dense matrix whose magnitude exceeds `drop_tol`.
    pub fn from_dense(m: &DMatrix<f64>, drop_tol: f64) -> Self {
        let mut indptr = vec![0];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let v = m[(i, j)];
                if v.abs() > drop_tol {
                    indices.push(j);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self { ncols: m.ncols(), indptr, indices, values }
    }

    /// Build from rows given as `(column, value)` lists.
    pub fn from_rows(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut indptr = vec![0];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for row in rows {
            for (j, v) in row {
                assert!(j < ncols, "column index out of range");
                indices.push(j);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Self { ncols, indptr, indices, values }
    }

    pub fn nrows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn transpose(&self) -> Self {
        let mut rows = vec![Vec::new(); self.ncols];
        for i in 0..self.nrows() {
            for (j, v) in self.row(i) {
                rows[j].push((i, v));
            }
        }
        Self::from_rows(self.nrows(), rows)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows(), self.ncols);
        for i in 0..self.nrows() {
            for (j, v) in self.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }
}
