//! Symmetry machinery: complete lifts, canonical prolongations, Lie
//! derivatives of the structure forms, Noether and Killing checks, and the
//! conserved currents that verified symmetries induce.
//!
//! A Noether symmetry is a phase-space vector field Y with L(Y) omega^A = 0,
//! i(Y) eta^A = 0 and L(Y) H = 0.  Such a Y commutes with the Reeb fields and
//! i(Y) omega^A is closed, so it is locally dF^A for currents F^A unique up
//! to constants.  When additionally L(Y) theta^A = 0 the symmetry is exact
//! and F^A = theta^A(Y); otherwise F^A = theta^A(Y) - zeta^A where zeta^A is
//! a potential of L(Y) theta^A, recovered here by a straight-line integral
//! from a chosen base point.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::chart::{
    self, BaseFn, ChartPoint, ConfigFn, Covector, Dimensions, PhaseFn, TangentVector,
};
use crate::hamiltonian::{Hamiltonian, HamiltonianKVectorField, MetricFamily};
use crate::{fd, Error, Result};

/// Convergence thresholds for the straight-line potential integral: absolute
/// and relative disagreement allowed between successive panel doublings.
pub const QUADRATURE_ABS_TOL: f64 = 1e-11;
pub const QUADRATURE_REL_TOL: f64 = 1e-9;

/// A vector field Z^A(t,q) d/dt^A + Z^i(t,q) d/dq^i on the base manifold.
#[derive(Clone)]
pub struct BaseVectorField {
    dims: Dimensions,
    eval: BaseFn<(DVector<f64>, DVector<f64>)>,
    /// Rows are outputs (Z^A then Z^i), columns inputs (t^B then q^j).
    jacobian: Option<BaseFn<DMatrix<f64>>>,
    /// out[r][(c1, c2)] = second partial of component r along inputs c1, c2.
    second_partials: Option<BaseFn<Vec<DMatrix<f64>>>>,
    fd_step: f64,
}

impl BaseVectorField {
    pub fn new(
        dims: Dimensions,
        eval: impl Fn(&DVector<f64>, &DVector<f64>) -> (DVector<f64>, DVector<f64>)
            + Send
            + Sync
            + 'static,
    ) -> Self {
        Self {
            dims,
            eval: Arc::new(eval),
            jacobian: None,
            second_partials: None,
            fd_step: fd::default_step(),
        }
    }

    pub fn with_jacobian(
        mut self,
        jacobian: impl Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.jacobian = Some(Arc::new(jacobian));
        self
    }

    pub fn with_second_partials(
        mut self,
        second: impl Fn(&DVector<f64>, &DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync + 'static,
    ) -> Self {
        self.second_partials = Some(Arc::new(second));
        self
    }

    /// Marks the field as having a constant jacobian, so all second partials
    /// vanish identically.  Every built-in generator qualifies.
    fn affine(self) -> Self {
        let dim = self.dims.k + self.dims.n;
        self.with_second_partials(move |_t, _q| vec![DMatrix::zeros(dim, dim); dim])
    }

    pub fn with_fd_step(mut self, step: f64) -> Self {
        self.fd_step = step;
        self
    }

    /// Constant translation along a configuration direction vector.
    pub fn translation(dims: Dimensions, direction: DVector<f64>) -> Result<Self> {
        if direction.len() != dims.n {
            return Err(Error::Shape(format!(
                "direction of length {} does not match n = {}",
                direction.len(),
                dims.n
            )));
        }
        let k = dims.k;
        let n = dims.n;
        Ok(
            Self::new(dims, move |_t, _q| (DVector::zeros(k), direction.clone()))
                .with_jacobian(move |_t, _q| DMatrix::zeros(k + n, k + n))
                .affine(),
        )
    }

    /// Rotation generator in the (i, j) configuration plane:
    /// Z^i = -q^j, Z^j = q^i.
    pub fn rotation(dims: Dimensions, i: usize, j: usize) -> Result<Self> {
        if i >= dims.n || j >= dims.n || i == j {
            return Err(Error::Index {
                what: "rotation plane coordinate",
                index: i.max(j),
                size: dims.n,
            });
        }
        let (k, n) = (dims.k, dims.n);
        Ok(Self::new(dims, move |_t, q| {
            let mut zq = DVector::zeros(n);
            zq[i] = -q[j];
            zq[j] = q[i];
            (DVector::zeros(k), zq)
        })
        .with_jacobian(move |_t, _q| {
            let mut jac = DMatrix::zeros(k + n, k + n);
            jac[(k + i, k + j)] = -1.0;
            jac[(k + j, k + i)] = 1.0;
            jac
        })
        .affine())
    }

    /// Affine configuration field Z^i = C^i_j q^j + d^i.
    pub fn linear(dims: Dimensions, matrix: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        if matrix.nrows() != dims.n || matrix.ncols() != dims.n || offset.len() != dims.n {
            return Err(Error::Shape(
                "linear field needs an n x n matrix and n-offset".into(),
            ));
        }
        let (k, n) = (dims.k, dims.n);
        let mat = matrix.clone();
        Ok(
            Self::new(dims, move |_t, q| (DVector::zeros(k), &mat * q + &offset))
                .with_jacobian(move |_t, _q| {
                    let mut jac = DMatrix::zeros(k + n, k + n);
                    jac.view_mut((k, k), (n, n)).copy_from(&matrix);
                    jac
                })
                .affine(),
        )
    }

    /// The base translation d/dt^A.
    pub fn time_translation(dims: Dimensions, a: usize) -> Result<Self> {
        if a >= dims.k {
            return Err(Error::Index {
                what: "base direction",
                index: a,
                size: dims.k,
            });
        }
        let (k, n) = (dims.k, dims.n);
        Ok(Self::new(dims, move |_t, _q| {
            let mut zt = DVector::zeros(k);
            zt[a] = 1.0;
            (zt, DVector::zeros(n))
        })
        .with_jacobian(move |_t, _q| DMatrix::zeros(k + n, k + n))
        .affine())
    }

    pub fn dims(&self) -> Dimensions {
        self.dims
    }

    pub fn eval_at(&self, t: &DVector<f64>, q: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (self.eval)(t, q)
    }

    /// Full derivative with respect to (t, q), analytic or finite differences.
    pub fn jacobian_at(&self, t: &DVector<f64>, q: &DVector<f64>) -> DMatrix<f64> {
        if let Some(jac) = &self.jacobian {
            return jac(t, q);
        }
        let (k, n) = (self.dims.k, self.dims.n);
        let mut out = DMatrix::zeros(k + n, k + n);
        let mut stack = |col: usize,
                         plus: (DVector<f64>, DVector<f64>),
                         minus: (DVector<f64>, DVector<f64>),
                         h: f64| {
            for r in 0..k {
                out[(r, col)] = (plus.0[r] - minus.0[r]) / (2.0 * h);
            }
            for r in 0..n {
                out[(k + r, col)] = (plus.1[r] - minus.1[r]) / (2.0 * h);
            }
        };
        for b in 0..k {
            let h = fd::scaled_step(self.fd_step, t[b]);
            let mut tp = t.clone();
            tp[b] += h;
            let mut tm = t.clone();
            tm[b] -= h;
            stack(b, (self.eval)(&tp, q), (self.eval)(&tm, q), h);
        }
        for j in 0..n {
            let h = fd::scaled_step(self.fd_step, q[j]);
            let mut qp = q.clone();
            qp[j] += h;
            let mut qm = q.clone();
            qm[j] -= h;
            stack(k + j, (self.eval)(t, &qp), (self.eval)(t, &qm), h);
        }
        out
    }

    /// Second partials out[r][(c1, c2)] = d^2 Z_r / d x_{c1} d x_{c2}, inputs
    /// ordered (t, q).  Falls back to central differences of the jacobian.
    pub fn second_partials_at(&self, t: &DVector<f64>, q: &DVector<f64>) -> Vec<DMatrix<f64>> {
        if let Some(second) = &self.second_partials {
            return second(t, q);
        }
        let (k, n) = (self.dims.k, self.dims.n);
        let dim = k + n;
        let mut out = vec![DMatrix::zeros(dim, dim); dim];
        let mut store = |c2: usize, jp: DMatrix<f64>, jm: DMatrix<f64>, h: f64| {
            let dj = (jp - jm) / (2.0 * h);
            for (r, hess) in out.iter_mut().enumerate() {
                for c1 in 0..dim {
                    hess[(c1, c2)] = dj[(r, c1)];
                }
            }
        };
        for b in 0..k {
            let h = fd::scaled_step(self.fd_step, t[b]);
            let mut tp = t.clone();
            tp[b] += h;
            let mut tm = t.clone();
            tm[b] -= h;
            store(b, self.jacobian_at(&tp, q), self.jacobian_at(&tm, q), h);
        }
        for j in 0..n {
            let h = fd::scaled_step(self.fd_step, q[j]);
            let mut qp = q.clone();
            qp[j] += h;
            let mut qm = q.clone();
            qm[j] -= h;
            store(k + j, self.jacobian_at(t, &qp), self.jacobian_at(t, &qm), h);
        }
        out
    }
}

/// A vector field on the phase space, evaluated pointwise with an optional
/// analytic jacobian in flattened coordinates.
#[derive(Clone)]
pub struct PhaseVectorField {
    dims: Dimensions,
    eval: PhaseFn<TangentVector>,
    jacobian: Option<PhaseFn<DMatrix<f64>>>,
    fd_step: f64,
}

impl PhaseVectorField {
    pub fn new(
        dims: Dimensions,
        eval: impl Fn(&ChartPoint) -> TangentVector + Send + Sync + 'static,
    ) -> Self {
        Self {
            dims,
            eval: Arc::new(eval),
            jacobian: None,
            fd_step: fd::default_step(),
        }
    }

    pub fn with_jacobian(
        mut self,
        jacobian: impl Fn(&ChartPoint) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.jacobian = Some(Arc::new(jacobian));
        self
    }

    pub fn with_fd_step(mut self, step: f64) -> Self {
        self.fd_step = step;
        self
    }

    /// A constant field.
    pub fn constant(dims: Dimensions, value: TangentVector) -> Self {
        let nn = dims.phase_dim();
        Self::new(dims, move |_| value.clone()).with_jacobian(move |_| DMatrix::zeros(nn, nn))
    }

    /// The Reeb field R_A as a phase-space field.
    pub fn reeb_field(dims: Dimensions, a: usize) -> Result<Self> {
        Ok(Self::constant(dims, chart::reeb(dims, a)?))
    }

    pub fn dims(&self) -> Dimensions {
        self.dims
    }

    pub fn fd_step(&self) -> f64 {
        self.fd_step
    }

    pub fn eval(&self, x: &ChartPoint) -> TangentVector {
        (self.eval)(x)
    }

    /// Jacobian J[r][c] = d Y_r / d x_c in flat order, analytic or by central
    /// differences of the evaluation closure.
    pub fn jacobian_at(&self, x: &ChartPoint) -> DMatrix<f64> {
        match &self.jacobian {
            Some(jac) => jac(x),
            None => {
                let eval = self.eval.clone();
                fd::jacobian_flat(move |y| eval(y).flatten(), x, self.fd_step)
            }
        }
    }
}

impl HamiltonianKVectorField {
    /// The A-th member X_A of the solution tuple as a standalone field.
    pub fn component_field(&self, a: usize) -> Result<PhaseVectorField> {
        let dims = self.dims();
        if a >= dims.k {
            return Err(Error::Index {
                what: "base direction",
                index: a,
                size: dims.k,
            });
        }
        let field = self.clone();
        Ok(PhaseVectorField::new(dims, move |x| {
            field.eval(x).vectors[a].clone()
        }))
    }
}

/// Complete lift of a base vector field to the phase space.
///
/// The lifted momentum components are
/// (Z*)^A_i = dZ^A/dq^i + p^B_i dZ^A/dt^B
///          - p^A_j (dZ^j/dq^i + p^B_i dZ^j/dt^B).
pub fn complete_lift(z: &BaseVectorField) -> PhaseVectorField {
    let dims = z.dims();
    let z_eval = z.clone();
    let z_jac = z.clone();
    PhaseVectorField::new(dims, move |x| {
        let (zt, zq) = z_eval.eval_at(&x.t, &x.q);
        let jac = z_eval.jacobian_at(&x.t, &x.q);
        let (k, n) = (dims.k, dims.n);
        let mut v = TangentVector::zero(dims);
        v.vt.copy_from(&zt);
        v.vq.copy_from(&zq);
        for a in 0..k {
            for i in 0..n {
                // d/dq^i + p^B_i d/dt^B applied to Z^A and to Z^j.
                let mut dza = jac[(a, k + i)];
                for b in 0..k {
                    dza += x.p[(b, i)] * jac[(a, b)];
                }
                let mut drag = 0.0;
                for j in 0..n {
                    let mut dzj = jac[(k + j, k + i)];
                    for b in 0..k {
                        dzj += x.p[(b, i)] * jac[(k + j, b)];
                    }
                    drag += x.p[(a, j)] * dzj;
                }
                v.vp[(a, i)] = dza - drag;
            }
        }
        v
    })
    .with_jacobian(move |x| {
        // The lifted momentum components are polynomial in p with
        // coefficients built from the first and second partials of Z, so the
        // full derivative closes over those.
        let (k, n) = (dims.k, dims.n);
        let nn = dims.phase_dim();
        let jac = z_jac.jacobian_at(&x.t, &x.q);
        let hess = z_jac.second_partials_at(&x.t, &x.q);
        let mut out = DMatrix::zeros(nn, nn);
        // vt and vq rows reproduce the base jacobian; flat base coordinates
        // occupy the first k + n slots in both orders.
        for r in 0..k + n {
            for c in 0..k + n {
                out[(r, c)] = jac[(r, c)];
            }
        }
        for a in 0..k {
            for i in 0..n {
                let row = dims.p_index(a, i);
                for c in 0..k + n {
                    let mut da = hess[a][(k + i, c)];
                    for b in 0..k {
                        da += x.p[(b, i)] * hess[a][(b, c)];
                    }
                    let mut acc = da;
                    for j in 0..n {
                        let mut db = hess[k + j][(k + i, c)];
                        for b in 0..k {
                            db += x.p[(b, i)] * hess[k + j][(b, c)];
                        }
                        acc -= x.p[(a, j)] * db;
                    }
                    out[(row, c)] = acc;
                }
                for c in 0..k {
                    for m in 0..n {
                        let col = dims.p_index(c, m);
                        let mut v = 0.0;
                        if m == i {
                            v += jac[(a, c)];
                            for j in 0..n {
                                v -= x.p[(a, j)] * jac[(k + j, c)];
                            }
                        }
                        if c == a {
                            let mut b_mi = jac[(k + m, k + i)];
                            for b in 0..k {
                                b_mi += x.p[(b, i)] * jac[(k + m, b)];
                            }
                            v -= b_mi;
                        }
                        out[(row, col)] = v;
                    }
                }
            }
        }
        out
    })
}

/// A fibre-preserving bundle map: t' = phi^A(t, q), q' = phi_Q(q), extended
/// canonically to the momenta.
#[derive(Clone)]
pub struct BundleMap {
    dims: Dimensions,
    time_map: BaseFn<DVector<f64>>,
    base_map: ConfigFn<DVector<f64>>,
    /// d phi_Q / d q, an invertible n x n matrix at every queried q.
    base_jacobian: ConfigFn<DMatrix<f64>>,
    /// (d phi^A/d t^B, d phi^A/d q^i) as a k x k and a k x n matrix.
    time_partials: Option<BaseFn<(DMatrix<f64>, DMatrix<f64>)>>,
    fd_step: f64,
}

impl BundleMap {
    pub fn new(
        dims: Dimensions,
        time_map: impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        base_map: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        base_jacobian: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dims,
            time_map: Arc::new(time_map),
            base_map: Arc::new(base_map),
            base_jacobian: Arc::new(base_jacobian),
            time_partials: None,
            fd_step: fd::default_step(),
        }
    }

    pub fn with_time_partials(
        mut self,
        p: impl Fn(&DVector<f64>, &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) + Send + Sync + 'static,
    ) -> Self {
        self.time_partials = Some(Arc::new(p));
        self
    }

    /// Identity in time, affine in configuration: q' = M q + d.
    pub fn base_affine(
        dims: Dimensions,
        matrix: DMatrix<f64>,
        offset: DVector<f64>,
    ) -> Result<Self> {
        if matrix.nrows() != dims.n || matrix.ncols() != dims.n || offset.len() != dims.n {
            return Err(Error::Shape(
                "affine map needs an n x n matrix and n-offset".into(),
            ));
        }
        let m = matrix.clone();
        let k = dims.k;
        Ok(Self::new(
            dims,
            move |t, _q| t.clone(),
            move |q| &m * q + &offset,
            move |_q| matrix.clone(),
        )
        .with_time_partials(move |_t, _q| (DMatrix::identity(k, k), DMatrix::zeros(k, dims.n))))
    }

    fn time_partials_at(&self, t: &DVector<f64>, q: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        if let Some(p) = &self.time_partials {
            return p(t, q);
        }
        let (k, n) = (self.dims.k, self.dims.n);
        let mut dt = DMatrix::zeros(k, k);
        for b in 0..k {
            let h = fd::scaled_step(self.fd_step, t[b]);
            let mut tp = t.clone();
            tp[b] += h;
            let mut tm = t.clone();
            tm[b] -= h;
            dt.set_column(
                b,
                &(((self.time_map)(&tp, q) - (self.time_map)(&tm, q)) / (2.0 * h)),
            );
        }
        let mut dq = DMatrix::zeros(k, n);
        for j in 0..n {
            let h = fd::scaled_step(self.fd_step, q[j]);
            let mut qp = q.clone();
            qp[j] += h;
            let mut qm = q.clone();
            qm[j] -= h;
            dq.set_column(
                j,
                &(((self.time_map)(t, &qp) - (self.time_map)(t, &qm)) / (2.0 * h)),
            );
        }
        (dt, dq)
    }
}

/// Canonical prolongation of a bundle map to the phase space.
///
/// New momenta are p'^A_i = (d phi^A/d q^m + p^B_m d phi^A/d t^B) W^m_i with
/// W the inverse of d phi_Q/d q at q, which by the inverse function theorem
/// is the jacobian of phi_Q^{-1} at phi_Q(q).
pub fn canonical_prolongation(map: &BundleMap, x: &ChartPoint) -> Result<ChartPoint> {
    let dims = map.dims;
    if x.dims() != dims {
        return Err(Error::Shape(
            "point does not match bundle map dimensions".into(),
        ));
    }
    let t_new = (map.time_map)(&x.t, &x.q);
    let q_new = (map.base_map)(&x.q);
    if t_new.len() != dims.k || q_new.len() != dims.n {
        return Err(Error::Shape(
            "bundle map returned wrong component counts".into(),
        ));
    }
    let base_jac = (map.base_jacobian)(&x.q);
    let w = base_jac
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("configuration jacobian is not invertible".into()))?;
    let (dt, dq) = map.time_partials_at(&x.t, &x.q);
    let mut p_new = DMatrix::zeros(dims.k, dims.n);
    for a in 0..dims.k {
        for i in 0..dims.n {
            let mut acc = 0.0;
            for m in 0..dims.n {
                let mut lifted = dq[(a, m)];
                for b in 0..dims.k {
                    lifted += x.p[(b, m)] * dt[(a, b)];
                }
                acc += lifted * w[(m, i)];
            }
            p_new[(a, i)] = acc;
        }
    }
    ChartPoint::new(t_new, q_new, p_new)
}

/// Directional derivative of a scalar along Y(x), by central differences on
/// the straight line x + s Y(x).
pub fn lie_derivative_scalar(
    y: &PhaseVectorField,
    f: impl Fn(&ChartPoint) -> f64,
    x: &ChartPoint,
) -> f64 {
    fd::directional(f, x, &y.eval(x), y.fd_step())
}

/// L(Y) H through the analytic (or cached finite-difference) gradient of H.
pub fn lie_derivative_hamiltonian(
    y: &PhaseVectorField,
    h: &dyn Hamiltonian,
    x: &ChartPoint,
) -> f64 {
    h.gradient(x).pairing(&y.eval(x))
}

/// L(Y) omega^A at x as the antisymmetrized jacobian of the covector field
/// x -> i(Y(x)) omega^A; the structure form is closed, so this equals
/// d i(Y) omega^A.
pub fn lie_derivative_omega(
    y: &PhaseVectorField,
    a: usize,
    x: &ChartPoint,
) -> Result<DMatrix<f64>> {
    let jac = y.jacobian_at(x);
    lie_derivative_omega_from_jacobian(y.dims(), a, &jac)
}

fn lie_derivative_omega_from_jacobian(
    dims: Dimensions,
    a: usize,
    y_jacobian: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let flat = chart::omega_flat_matrix(dims, a)?;
    let jc = flat * y_jacobian;
    Ok(jc.transpose() - jc)
}

/// L(Y) theta^A at x as a covector: d(theta^A(Y)) - i(Y) omega^A.
pub fn lie_derivative_theta(y: &PhaseVectorField, a: usize, x: &ChartPoint) -> Result<Covector> {
    let v = y.eval(x);
    let jac = y.jacobian_at(x);
    lie_derivative_theta_from_jacobian(a, x, &v, &jac)
}

/// Same quantity assembled from an already-computed value and jacobian of Y:
/// the p-block of d(theta^A(Y)) cancels against i(Y) omega^A, leaving
/// c_mu = p^A_i J[q_i, mu] + delta_{mu, q_i} v^A_i.
fn lie_derivative_theta_from_jacobian(
    a: usize,
    x: &ChartPoint,
    v: &TangentVector,
    y_jacobian: &DMatrix<f64>,
) -> Result<Covector> {
    let dims = x.dims();
    dims.check_direction(a)?;
    let nn = dims.phase_dim();
    let mut c = DVector::zeros(nn);
    for mu in 0..nn {
        let mut acc = 0.0;
        for i in 0..dims.n {
            acc += x.p[(a, i)] * y_jacobian[(dims.q_index(i), mu)];
        }
        c[mu] = acc;
    }
    for i in 0..dims.n {
        c[dims.q_index(i)] += v.vp[(a, i)];
    }
    Covector::from_flat(dims, &c)
}

/// Pointwise Lie bracket [Y1, Y2](x) = J_{Y2}(x) Y1(x) - J_{Y1}(x) Y2(x).
pub fn lie_bracket(
    y1: &PhaseVectorField,
    y2: &PhaseVectorField,
    x: &ChartPoint,
) -> Result<TangentVector> {
    if y1.dims() != y2.dims() {
        return Err(Error::Shape("bracket of fields on different spaces".into()));
    }
    let dims = y1.dims();
    let v1 = y1.eval(x).flatten();
    let v2 = y2.eval(x).flatten();
    let j1 = y1.jacobian_at(x);
    let j2 = y2.jacobian_at(x);
    TangentVector::from_flat(dims, &(j2 * v1 - j1 * v2))
}

/// The bracket as a field, for iterated symmetry constructions.
pub fn bracket_field(y1: &PhaseVectorField, y2: &PhaseVectorField) -> Result<PhaseVectorField> {
    if y1.dims() != y2.dims() {
        return Err(Error::Shape("bracket of fields on different spaces".into()));
    }
    let dims = y1.dims();
    let a = y1.clone();
    let b = y2.clone();
    Ok(PhaseVectorField::new(dims, move |x| {
        lie_bracket(&a, &b, x).expect("dimensions already checked")
    }))
}

/// Residuals and verdicts of the three Noether conditions, plus diagnostics.
#[derive(Clone, Debug)]
pub struct NoetherReport {
    /// max_A,x |L(Y) omega^A| (matrix max norm).
    pub residual_omega: f64,
    /// max_A,x |eta^A(Y)|.
    pub residual_eta: f64,
    /// max_x |L(Y) H|.
    pub residual_hamiltonian: f64,
    /// max_A,x |[Y, R_A]|; commutation with the Reeb fields is a consequence
    /// of the conditions, reported as a cross-check.
    pub residual_reeb: f64,
    /// max_A,x |L(Y) theta^A|; zero for exact symmetries.
    pub exact_residual: f64,
    pub tol: f64,
    pub samples: usize,
}

impl NoetherReport {
    pub fn pass_omega(&self) -> bool {
        self.residual_omega <= self.tol
    }

    pub fn pass_eta(&self) -> bool {
        self.residual_eta <= self.tol
    }

    pub fn pass_hamiltonian(&self) -> bool {
        self.residual_hamiltonian <= self.tol
    }

    /// All three defining conditions hold at tolerance.
    pub fn passed(&self) -> bool {
        self.pass_omega() && self.pass_eta() && self.pass_hamiltonian()
    }

    /// Exactness decided at a tenth of the check tolerance.
    pub fn is_exact(&self) -> bool {
        self.exact_residual <= self.tol / 10.0
    }
}

/// Samples the three Noether conditions (and the Reeb and exactness
/// diagnostics) over a point cloud.
pub fn noether_check(
    y: &PhaseVectorField,
    h: &dyn Hamiltonian,
    samples: &[ChartPoint],
    tol: f64,
) -> Result<NoetherReport> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let tol_ok = tol.is_finite() && tol > 0.0;
    if !tol_ok {
        return Err(Error::Tolerance(tol));
    }
    let dims = y.dims();
    if h.dims() != dims {
        return Err(Error::Shape(
            "field and Hamiltonian dimensions differ".into(),
        ));
    }
    let mut residual_omega = 0.0_f64;
    let mut residual_eta = 0.0_f64;
    let mut residual_hamiltonian = 0.0_f64;
    let mut residual_reeb = 0.0_f64;
    let mut exact_residual = 0.0_f64;
    for x in samples {
        if x.dims() != dims {
            return Err(Error::Shape("sample point dimensions differ".into()));
        }
        let v = y.eval(x);
        let jac = y.jacobian_at(x);
        for a in 0..dims.k {
            residual_eta = residual_eta.max(v.vt[a].abs());
            let lomega = lie_derivative_omega_from_jacobian(dims, a, &jac)?;
            residual_omega = residual_omega.max(lomega.amax());
            // [Y, R_A] = -J_Y e_{t^A} for the constant Reeb direction.
            residual_reeb = residual_reeb.max(jac.column(dims.t_index(a)).amax());
            let ltheta = lie_derivative_theta_from_jacobian(a, x, &v, &jac)?;
            exact_residual = exact_residual.max(ltheta.norm_inf());
        }
        residual_hamiltonian = residual_hamiltonian.max(h.gradient(x).pairing(&v).abs());
    }
    Ok(NoetherReport {
        residual_omega,
        residual_eta,
        residual_hamiltonian,
        residual_reeb,
        exact_residual,
        tol,
        samples: samples.len(),
    })
}

/// Verdict of a Killing-equation check over configuration samples.
#[derive(Clone, Debug)]
pub struct KillingReport {
    /// max over samples, directions and index pairs of the Killing residual
    /// X(g_{A,jk}) + dX^l/dq^j g_{A,kl} + dX^l/dq^k g_{A,jl}.
    pub residual: f64,
    pub tol: f64,
    pub samples: usize,
}

impl KillingReport {
    pub fn passed(&self) -> bool {
        self.residual <= self.tol
    }
}

/// Checks the Killing equation for every metric in the family.  The candidate
/// must be a configuration field: time components are rejected.  The field is
/// read on the t = 0 slice.
pub fn killing_check(
    x_field: &BaseVectorField,
    metrics: &MetricFamily,
    sample_qs: &[DVector<f64>],
    tol: f64,
) -> Result<KillingReport> {
    if sample_qs.is_empty() {
        return Err(Error::EmptySamples);
    }
    let tol_ok = tol.is_finite() && tol > 0.0;
    if !tol_ok {
        return Err(Error::Tolerance(tol));
    }
    let dims = x_field.dims();
    if metrics.k() != dims.k || metrics.n() != dims.n {
        return Err(Error::Shape(
            "metric family does not match field dimensions".into(),
        ));
    }
    let (k, n) = (dims.k, dims.n);
    let t0 = DVector::zeros(k);
    let mut residual = 0.0_f64;
    for q in sample_qs {
        if q.len() != n {
            return Err(Error::Shape("sample q of wrong length".into()));
        }
        let (zt, zq) = x_field.eval_at(&t0, q);
        if zt.amax() > 0.0 {
            return Err(Error::SymmetryCheck(
                "Killing candidates must be configuration fields; found time components".into(),
            ));
        }
        let jac = x_field.jacobian_at(&t0, q);
        let g = metrics.at(q);
        let dg = metrics.partials_at(q, fd::default_step());
        for a in 0..k {
            for j in 0..n {
                for m in 0..n {
                    let mut r = 0.0;
                    for l in 0..n {
                        r += zq[l] * dg[a][l][(j, m)];
                        r += jac[(k + l, k + j)] * g[a][(m, l)];
                        r += jac[(k + l, k + m)] * g[a][(j, l)];
                    }
                    residual = residual.max(r.abs());
                }
            }
        }
    }
    Ok(KillingReport {
        residual,
        tol,
        samples: sample_qs.len(),
    })
}

/// Where a conserved current came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Provenance {
    Killing,
    Noether { exact: bool },
    User,
}

/// A map F = (F^1, ..., F^k) from the phase space to R^k whose divergence
/// vanishes along solutions of the field equations.
#[derive(Clone)]
pub struct ConservedCurrent {
    dims: Dimensions,
    eval: PhaseFn<Result<DVector<f64>>>,
    provenance: Provenance,
}

impl ConservedCurrent {
    pub fn user(
        dims: Dimensions,
        eval: impl Fn(&ChartPoint) -> Result<DVector<f64>> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dims,
            eval: Arc::new(eval),
            provenance: Provenance::User,
        }
    }

    pub fn dims(&self) -> Dimensions {
        self.dims
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// The k current components at x.
    pub fn components(&self, x: &ChartPoint) -> Result<DVector<f64>> {
        (self.eval)(x)
    }

    /// The current transported through a point transformation: x -> F(map(x)).
    pub fn pullback(
        &self,
        map: impl Fn(&ChartPoint) -> Result<ChartPoint> + Send + Sync + 'static,
    ) -> ConservedCurrent {
        let inner = self.eval.clone();
        ConservedCurrent {
            dims: self.dims,
            eval: Arc::new(move |x| inner(&map(x)?)),
            provenance: Provenance::User,
        }
    }
}

/// Current of a Killing configuration field: F^A = p^A_i X^i(q).
pub fn conserved_from_killing(x_field: &BaseVectorField) -> ConservedCurrent {
    let dims = x_field.dims();
    let field = x_field.clone();
    ConservedCurrent {
        dims,
        eval: Arc::new(move |x| {
            let (_, zq) = field.eval_at(&x.t, &x.q);
            let mut f = DVector::zeros(dims.k);
            for a in 0..dims.k {
                f[a] = (0..dims.n).map(|i| x.p[(a, i)] * zq[i]).sum();
            }
            Ok(f)
        }),
        provenance: Provenance::Killing,
    }
}

/// Straight-line potential of L(Y) theta^A from `base` to `x`, one component
/// per direction A.  Composite 8-point Gauss-Legendre panels are doubled
/// until two successive refinements agree.
pub fn line_integral_zeta(
    y: &PhaseVectorField,
    base: &ChartPoint,
    x: &ChartPoint,
) -> Result<DVector<f64>> {
    const NODES: [f64; 4] = [
        0.1834346424956498,
        0.525532409916329,
        0.7966664774136267,
        0.9602898564975362,
    ];
    const WEIGHTS: [f64; 4] = [
        0.362683783378362,
        0.3137066458778873,
        0.2223810344533745,
        0.1012285362903763,
    ];
    let dims = y.dims();
    if base.dims() != dims || x.dims() != dims {
        return Err(Error::Shape(
            "base point or target dimensions differ".into(),
        ));
    }
    let base_flat = base.flatten();
    let direction = x.flatten() - &base_flat;
    let integrand = |s: f64, a: usize| -> Result<f64> {
        let point = ChartPoint::from_flat(dims, &(&base_flat + s * &direction))?;
        let c = lie_derivative_theta(y, a, &point)?;
        Ok(c.flatten().dot(&direction))
    };
    let composite = |panels: usize, a: usize| -> Result<f64> {
        let width = 1.0 / panels as f64;
        let mut total = 0.0;
        for panel in 0..panels {
            let mid = (panel as f64 + 0.5) * width;
            for (node, weight) in NODES.iter().zip(WEIGHTS.iter()) {
                total += weight * 0.5 * width * integrand(mid + 0.5 * width * node, a)?;
                total += weight * 0.5 * width * integrand(mid - 0.5 * width * node, a)?;
            }
        }
        Ok(total)
    };
    let mut out = DVector::zeros(dims.k);
    for a in 0..dims.k {
        let mut panels = 2;
        let mut previous = composite(panels, a)?;
        loop {
            panels *= 2;
            let refined = composite(panels, a)?;
            let disagreement = (refined - previous).abs();
            if disagreement <= QUADRATURE_ABS_TOL.max(QUADRATURE_REL_TOL * refined.abs()) {
                out[a] = refined;
                break;
            }
            if panels >= 256 {
                return Err(Error::Quadrature(format!(
                    "panel doubling stalled at {panels} panels with disagreement {disagreement:e} \
                     for direction {a}"
                )));
            }
            previous = refined;
        }
    }
    Ok(out)
}

/// Conserved current of a verified Noether symmetry.
///
/// For exact symmetries F^A = theta^A(Y); otherwise F^A = theta^A(Y) -
/// zeta^A with zeta^A the straight-line potential of L(Y) theta^A anchored
/// at `base_point`.  Exactness is decided by the report, at a tenth of its
/// check tolerance.
pub fn conserved_from_noether(
    y: &PhaseVectorField,
    report: &NoetherReport,
    base_point: &ChartPoint,
) -> Result<ConservedCurrent> {
    if !report.passed() {
        return Err(Error::SymmetryCheck(
            "conserved current construction requires a field that passed the Noether check".into(),
        ));
    }
    let dims = y.dims();
    if base_point.dims() != dims {
        return Err(Error::Shape("base point dimensions differ".into()));
    }
    let exact = report.is_exact();
    let field = y.clone();
    let base = base_point.clone();
    let eval = move |x: &ChartPoint| -> Result<DVector<f64>> {
        let v = field.eval(x);
        let mut f = DVector::zeros(dims.k);
        for a in 0..dims.k {
            f[a] = chart::contract_theta(a, &v, x)?;
        }
        if !exact {
            f -= line_integral_zeta(&field, &base, x)?;
        }
        Ok(f)
    };
    Ok(ConservedCurrent {
        dims,
        eval: Arc::new(eval),
        provenance: Provenance::Noether { exact },
    })
}
