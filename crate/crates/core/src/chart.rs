//! Darboux coordinates (t^A, q^i, p^A_i) and the canonical k-cosymplectic
//! structure carried by them.
//!
//! The phase space R^k x (T^1_k)*Q has dimension N = k + n + kn.  The
//! canonical forms are eta^A = dt^A, omega^A = dq^i /\ dp^A_i and
//! theta^A = p^A_i dq^i, and the Reeb fields are R_A = d/dt^A.  Flattened
//! coordinate order is t first, then q, then p row-major with the upper index
//! A outermost; every jacobian and kernel matrix in the crate follows this
//! order.  Indices are zero-based throughout the code.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Shared closure over the base coordinates (t, q).
pub type BaseFn<T> = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> T + Send + Sync>;

/// Shared closure over the configuration coordinates q alone.
pub type ConfigFn<T> = Arc<dyn Fn(&DVector<f64>) -> T + Send + Sync>;

/// Shared closure over a phase-space chart point.
pub type PhaseFn<T> = Arc<dyn Fn(&ChartPoint) -> T + Send + Sync>;

/// Number of base directions `k` and of configuration coordinates `n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dimensions {
    pub k: usize,
    pub n: usize,
}

impl Dimensions {
    pub fn new(k: usize, n: usize) -> Result<Self> {
        if k == 0 || n == 0 {
            return Err(Error::Dimension(format!(
                "k and n must both be at least 1, got k={k}, n={n}"
            )));
        }
        Ok(Self { k, n })
    }

    /// Dimension of the phase space, k + n + kn.
    pub fn phase_dim(&self) -> usize {
        self.k + self.n + self.k * self.n
    }

    /// Flat index of t^A.
    pub fn t_index(&self, a: usize) -> usize {
        a
    }

    /// Flat index of q^i.
    pub fn q_index(&self, i: usize) -> usize {
        self.k + i
    }

    /// Flat index of p^A_i.
    pub fn p_index(&self, a: usize, i: usize) -> usize {
        self.k + self.n + a * self.n + i
    }

    pub(crate) fn check_direction(&self, a: usize) -> Result<()> {
        if a >= self.k {
            return Err(Error::Index {
                what: "base direction",
                index: a,
                size: self.k,
            });
        }
        Ok(())
    }
}

/// A point (t^A, q^i, p^A_i); `p` holds one row per base direction A.
#[derive(Clone, Debug, PartialEq)]
pub struct ChartPoint {
    pub t: DVector<f64>,
    pub q: DVector<f64>,
    pub p: DMatrix<f64>,
}

impl ChartPoint {
    pub fn new(t: DVector<f64>, q: DVector<f64>, p: DMatrix<f64>) -> Result<Self> {
        if t.is_empty() || q.is_empty() || p.nrows() != t.len() || p.ncols() != q.len() {
            return Err(Error::Shape(format!(
                "chart point needs t of length k, q of length n and p of shape k x n; \
                 got t:{}, q:{}, p:{}x{}",
                t.len(),
                q.len(),
                p.nrows(),
                p.ncols()
            )));
        }
        Ok(Self { t, q, p })
    }

    pub fn zero(dims: Dimensions) -> Self {
        Self {
            t: DVector::zeros(dims.k),
            q: DVector::zeros(dims.n),
            p: DMatrix::zeros(dims.k, dims.n),
        }
    }

    pub fn dims(&self) -> Dimensions {
        Dimensions {
            k: self.t.len(),
            n: self.q.len(),
        }
    }

    pub fn flatten(&self) -> DVector<f64> {
        let dims = self.dims();
        let mut out = DVector::zeros(dims.phase_dim());
        for a in 0..dims.k {
            out[dims.t_index(a)] = self.t[a];
        }
        for i in 0..dims.n {
            out[dims.q_index(i)] = self.q[i];
        }
        for a in 0..dims.k {
            for i in 0..dims.n {
                out[dims.p_index(a, i)] = self.p[(a, i)];
            }
        }
        out
    }

    pub fn from_flat(dims: Dimensions, v: &DVector<f64>) -> Result<Self> {
        if v.len() != dims.phase_dim() {
            return Err(Error::Shape(format!(
                "flat vector of length {} does not match phase dimension {}",
                v.len(),
                dims.phase_dim()
            )));
        }
        let mut x = ChartPoint::zero(dims);
        for a in 0..dims.k {
            x.t[a] = v[dims.t_index(a)];
        }
        for i in 0..dims.n {
            x.q[i] = v[dims.q_index(i)];
        }
        for a in 0..dims.k {
            for i in 0..dims.n {
                x.p[(a, i)] = v[dims.p_index(a, i)];
            }
        }
        Ok(x)
    }

    /// The point x + s v.
    pub fn offset(&self, v: &TangentVector, s: f64) -> ChartPoint {
        ChartPoint {
            t: &self.t + s * &v.vt,
            q: &self.q + s * &v.vq,
            p: &self.p + s * &v.vp,
        }
    }
}

/// A tangent vector in component form (v^A, v^i, v^A_i).
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector {
    pub vt: DVector<f64>,
    pub vq: DVector<f64>,
    pub vp: DMatrix<f64>,
}

impl TangentVector {
    pub fn zero(dims: Dimensions) -> Self {
        Self {
            vt: DVector::zeros(dims.k),
            vq: DVector::zeros(dims.n),
            vp: DMatrix::zeros(dims.k, dims.n),
        }
    }

    pub fn dims(&self) -> Dimensions {
        Dimensions {
            k: self.vt.len(),
            n: self.vq.len(),
        }
    }

    pub fn flatten(&self) -> DVector<f64> {
        ChartPoint {
            t: self.vt.clone(),
            q: self.vq.clone(),
            p: self.vp.clone(),
        }
        .flatten()
    }

    pub fn from_flat(dims: Dimensions, v: &DVector<f64>) -> Result<Self> {
        let x = ChartPoint::from_flat(dims, v)?;
        Ok(Self {
            vt: x.t,
            vq: x.q,
            vp: x.p,
        })
    }

    pub fn norm_inf(&self) -> f64 {
        let mut m: f64 = 0.0;
        for v in self.vt.iter().chain(self.vq.iter()).chain(self.vp.iter()) {
            m = m.max(v.abs());
        }
        m
    }

    /// self + s w.
    pub fn add_scaled(&self, w: &TangentVector, s: f64) -> TangentVector {
        TangentVector {
            vt: &self.vt + s * &w.vt,
            vq: &self.vq + s * &w.vq,
            vp: &self.vp + s * &w.vp,
        }
    }
}

/// A covector in component form (a_A, a_i, a^i_A), dual to [`TangentVector`].
#[derive(Clone, Debug, PartialEq)]
pub struct Covector {
    pub at: DVector<f64>,
    pub aq: DVector<f64>,
    pub ap: DMatrix<f64>,
}

impl Covector {
    pub fn zero(dims: Dimensions) -> Self {
        Self {
            at: DVector::zeros(dims.k),
            aq: DVector::zeros(dims.n),
            ap: DMatrix::zeros(dims.k, dims.n),
        }
    }

    pub fn dims(&self) -> Dimensions {
        Dimensions {
            k: self.at.len(),
            n: self.aq.len(),
        }
    }

    pub fn flatten(&self) -> DVector<f64> {
        ChartPoint {
            t: self.at.clone(),
            q: self.aq.clone(),
            p: self.ap.clone(),
        }
        .flatten()
    }

    pub fn from_flat(dims: Dimensions, v: &DVector<f64>) -> Result<Self> {
        let x = ChartPoint::from_flat(dims, v)?;
        Ok(Self {
            at: x.t,
            aq: x.q,
            ap: x.p,
        })
    }

    /// Natural pairing alpha(v).
    pub fn pairing(&self, v: &TangentVector) -> f64 {
        self.at.dot(&v.vt) + self.aq.dot(&v.vq) + self.ap.dot(&v.vp)
    }

    pub fn norm_inf(&self) -> f64 {
        let mut m: f64 = 0.0;
        for v in self.at.iter().chain(self.aq.iter()).chain(self.ap.iter()) {
            m = m.max(v.abs());
        }
        m
    }
}

/// An ordered k-tuple of tangent vectors (X_1, ..., X_k) at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct KTangent {
    pub vectors: Vec<TangentVector>,
}

impl KTangent {
    pub fn new(vectors: Vec<TangentVector>) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::Shape("k-tangent needs at least one vector".into()));
        }
        let dims = vectors[0].dims();
        if vectors.len() != dims.k {
            return Err(Error::Shape(format!(
                "k-tangent needs exactly k = {} vectors, got {}",
                dims.k,
                vectors.len()
            )));
        }
        for v in &vectors {
            if v.dims() != dims {
                return Err(Error::Shape("mixed dimensions in k-tangent".into()));
            }
        }
        Ok(Self { vectors })
    }

    pub fn dims(&self) -> Dimensions {
        self.vectors[0].dims()
    }

    /// Concatenated flat coordinates, X_1 block first.
    pub fn flatten_all(&self) -> DVector<f64> {
        let dims = self.dims();
        let nn = dims.phase_dim();
        let mut out = DVector::zeros(dims.k * nn);
        for (b, v) in self.vectors.iter().enumerate() {
            out.rows_mut(b * nn, nn).copy_from(&v.flatten());
        }
        out
    }

    /// Component-wise difference, useful for gauge comparisons.
    pub fn difference(&self, other: &KTangent) -> Result<KTangent> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(
                "mixed dimensions in k-tangent difference".into(),
            ));
        }
        let vectors = self
            .vectors
            .iter()
            .zip(&other.vectors)
            .map(|(a, b)| a.add_scaled(b, -1.0))
            .collect();
        KTangent::new(vectors)
    }
}

/// eta^A(v): the A-th base component of v.
pub fn contract_eta(a: usize, v: &TangentVector) -> Result<f64> {
    v.dims().check_direction(a)?;
    Ok(v.vt[a])
}

/// i(v) omega^A with omega^A = dq^i /\ dp^A_i.
///
/// The result has aq_i = -v^A_i and a^i_A = v^i; all other components vanish.
pub fn contract_omega(a: usize, v: &TangentVector) -> Result<Covector> {
    let dims = v.dims();
    dims.check_direction(a)?;
    let mut c = Covector::zero(dims);
    for i in 0..dims.n {
        c.aq[i] = -v.vp[(a, i)];
        c.ap[(a, i)] = v.vq[i];
    }
    Ok(c)
}

/// theta^A(v) at x, with theta^A = p^A_i dq^i.
pub fn contract_theta(a: usize, v: &TangentVector, x: &ChartPoint) -> Result<f64> {
    let dims = v.dims();
    dims.check_direction(a)?;
    if x.dims() != dims {
        return Err(Error::Shape("point and vector dimensions differ".into()));
    }
    Ok((0..dims.n).map(|i| x.p[(a, i)] * v.vq[i]).sum())
}

/// The Reeb vector R_A = d/dt^A.
pub fn reeb(dims: Dimensions, a: usize) -> Result<TangentVector> {
    dims.check_direction(a)?;
    let mut v = TangentVector::zero(dims);
    v.vt[a] = 1.0;
    Ok(v)
}

/// Coordinate matrix of the flat map v -> i(v) omega^A, rows and columns in
/// flattened order.
pub fn omega_flat_matrix(dims: Dimensions, a: usize) -> Result<DMatrix<f64>> {
    dims.check_direction(a)?;
    let nn = dims.phase_dim();
    let mut m = DMatrix::zeros(nn, nn);
    for i in 0..dims.n {
        m[(dims.q_index(i), dims.p_index(a, i))] = -1.0;
        m[(dims.p_index(a, i), dims.q_index(i))] = 1.0;
    }
    Ok(m)
}

/// Matrix of the joint linear map
/// (X_1, ..., X_k) -> (sum_A i(X_A) omega^A, (eta^A(X_B))_{A,B})
/// in flattened coordinates; shape (N + k^2) x (k N).
///
/// Solution k-vector fields of the Hamiltonian equations at a fixed point form
/// an affine space modelled on the kernel of this map.
pub fn combined_map_matrix(dims: Dimensions) -> DMatrix<f64> {
    let (k, nn) = (dims.k, dims.phase_dim());
    let mut m = DMatrix::zeros(nn + k * k, k * nn);
    for a in 0..k {
        for i in 0..dims.n {
            // aq_i collects -(X_A)^A_i and a^i_A collects (X_A)^i.
            m[(dims.q_index(i), a * nn + dims.p_index(a, i))] = -1.0;
            m[(dims.p_index(a, i), a * nn + dims.q_index(i))] = 1.0;
        }
        for b in 0..k {
            m[(nn + a * k + b, b * nn + dims.t_index(a))] = 1.0;
        }
    }
    m
}

/// Rank by row reduction with partial pivoting.  Pivot candidates not above
/// `tol` times the largest absolute entry of the input count as zero.
pub fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> Result<usize> {
    let tol_ok = tol.is_finite() && tol > 0.0;
    if !tol_ok {
        return Err(Error::Tolerance(tol));
    }
    let mut a = m.clone();
    let (rows, cols) = a.shape();
    let scale = a.amax();
    if scale == 0.0 {
        return Ok(0);
    }
    let threshold = tol * scale;
    let mut rank = 0;
    let mut row = 0;
    for col in 0..cols {
        if row >= rows {
            break;
        }
        let mut pivot_row = row;
        let mut best = a[(row, col)].abs();
        for r in row + 1..rows {
            let v = a[(r, col)].abs();
            if v > best {
                best = v;
                pivot_row = r;
            }
        }
        if best <= threshold {
            continue;
        }
        a.swap_rows(row, pivot_row);
        let piv = a[(row, col)];
        for r in row + 1..rows {
            let f = a[(r, col)] / piv;
            if f != 0.0 {
                for c in col..cols {
                    let delta = f * a[(row, c)];
                    a[(r, c)] -= delta;
                }
            }
        }
        rank += 1;
        row += 1;
    }
    Ok(rank)
}

/// Nullity of the combined map: the rank of the affine solution space at a
/// point, equal to (k - 1)(kn + n).
pub fn kernel_dimension(dims: Dimensions, tol: f64) -> Result<usize> {
    let m = combined_map_matrix(dims);
    Ok(dims.k * dims.phase_dim() - numerical_rank(&m, tol)?)
}

/// Closed-form counterpart of [`kernel_dimension`].
pub fn closed_form_kernel_dimension(dims: Dimensions) -> usize {
    (dims.k - 1) * (dims.k * dims.n + dims.n)
}

/// Max-norm of the combined map applied to a k-tangent tuple; vanishes exactly
/// on differences of solution tuples.
pub fn kernel_membership_residual(kt: &KTangent) -> f64 {
    let m = combined_map_matrix(kt.dims());
    (m * kt.flatten_all()).amax()
}

/// Nullity of the single-vector map v -> ((eta^A(v))_A, (i(v) omega^A)_A).
///
/// The eta block pins vt, and the per-A omega blocks pin vq and every row of
/// vp, so this is always zero: the structure forms admit no joint degeneracy.
pub fn pointwise_joint_nullity(dims: Dimensions, tol: f64) -> Result<usize> {
    let (k, nn) = (dims.k, dims.phase_dim());
    let mut m = DMatrix::zeros(k + k * nn, nn);
    for a in 0..k {
        m[(a, dims.t_index(a))] = 1.0;
        for i in 0..dims.n {
            m[(k + a * nn + dims.q_index(i), dims.p_index(a, i))] = -1.0;
            m[(k + a * nn + dims.p_index(a, i), dims.q_index(i))] = 1.0;
        }
    }
    Ok(nn - numerical_rank(&m, tol)?)
}

/// Axis-aligned sampling box in chart coordinates.
#[derive(Clone, Debug)]
pub struct SampleBox {
    pub t_center: DVector<f64>,
    pub t_half: f64,
    pub q_center: DVector<f64>,
    pub q_half: f64,
    pub p_center: DMatrix<f64>,
    pub p_half: f64,
}

impl SampleBox {
    /// Box centred at the origin with the given half-widths per block.
    pub fn centered(dims: Dimensions, t_half: f64, q_half: f64, p_half: f64) -> Self {
        Self {
            t_center: DVector::zeros(dims.k),
            t_half,
            q_center: DVector::zeros(dims.n),
            q_half,
            p_center: DMatrix::zeros(dims.k, dims.n),
            p_half,
        }
    }
}

/// Deterministic uniform sample stream in a box; the seed pins the sequence.
pub fn sample_points(
    dims: Dimensions,
    sample_box: &SampleBox,
    count: usize,
    seed: u64,
) -> Vec<ChartPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unit = move || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut x = ChartPoint::zero(dims);
        for a in 0..dims.k {
            x.t[a] = sample_box.t_center[a] + sample_box.t_half * (2.0 * unit() - 1.0);
        }
        for i in 0..dims.n {
            x.q[i] = sample_box.q_center[i] + sample_box.q_half * (2.0 * unit() - 1.0);
        }
        for a in 0..dims.k {
            for i in 0..dims.n {
                x.p[(a, i)] =
                    sample_box.p_center[(a, i)] + sample_box.p_half * (2.0 * unit() - 1.0);
            }
        }
        out.push(x);
    }
    out
}
