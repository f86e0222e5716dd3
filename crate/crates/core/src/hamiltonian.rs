//! Hamiltonian data and solution k-vector fields of the geometric equations.
//!
//! A solution k-vector field X = (X_1, ..., X_k) satisfies eta^A(X_B) =
//! delta^A_B together with sum_A i(X_A) omega^A = dH - sum_A R_A(H) eta^A.
//! In Darboux coordinates this forces (X_A)^B = delta_A^B and
//! (X_A)^i = dH/dp^A_i, while the diagonal momentum components are pinned
//! only through their trace, sum_A (X_A)^A_i = -dH/dq^i.  The remaining
//! freedom is fixed by an [`HdwGauge`]; off-diagonal momentum components are
//! set to zero.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::chart::{
    self, BaseFn, ChartPoint, ConfigFn, Covector, Dimensions, KTangent, PhaseFn, TangentVector,
};
use crate::{fd, Error, Result};

/// Largest tolerated relative asymmetry of a metric matrix.
pub const METRIC_SYMMETRY_TOL: f64 = 1e-12;

/// Largest tolerated max-norm of g * dual(g) - identity.
pub const METRIC_INVERSE_TOL: f64 = 1e-10;

/// Provides a Hamiltonian value and gradient on the phase space.
pub trait Hamiltonian: Send + Sync {
    fn dims(&self) -> Dimensions;
    fn value(&self, x: &ChartPoint) -> f64;
    fn gradient(&self, x: &ChartPoint) -> Covector;
}

/// A Hamiltonian given by an arbitrary closure, with an optional analytic
/// gradient.  Without one, gradients fall back to central differences with
/// the step policy from [`crate::fd`].
#[derive(Clone)]
pub struct HamiltonianFunction {
    dims: Dimensions,
    value: PhaseFn<f64>,
    gradient: Option<PhaseFn<Covector>>,
    fd_step: f64,
}

impl HamiltonianFunction {
    pub fn new(
        dims: Dimensions,
        value: impl Fn(&ChartPoint) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            dims,
            value: Arc::new(value),
            gradient: None,
            fd_step: fd::default_step(),
        }
    }

    pub fn with_gradient(
        mut self,
        gradient: impl Fn(&ChartPoint) -> Covector + Send + Sync + 'static,
    ) -> Self {
        self.gradient = Some(Arc::new(gradient));
        self
    }

    pub fn with_fd_step(mut self, step: f64) -> Self {
        self.fd_step = step;
        self
    }

    pub fn fd_step(&self) -> f64 {
        self.fd_step
    }
}

impl Hamiltonian for HamiltonianFunction {
    fn dims(&self) -> Dimensions {
        self.dims
    }

    fn value(&self, x: &ChartPoint) -> f64 {
        (self.value)(x)
    }

    fn gradient(&self, x: &ChartPoint) -> Covector {
        match &self.gradient {
            Some(g) => g(x),
            None => fd::gradient(self.value.as_ref(), x, self.fd_step),
        }
    }
}

/// Dual (inverse) metric with symmetry and conditioning checks.
pub fn dual_metric(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if g.nrows() != g.ncols() || g.nrows() == 0 {
        return Err(Error::Shape(format!(
            "metric must be square and nonempty, got {}x{}",
            g.nrows(),
            g.ncols()
        )));
    }
    let n = g.nrows();
    let scale = g.amax().max(1.0);
    let mut asym = 0.0_f64;
    for i in 0..n {
        for j in i + 1..n {
            asym = asym.max((g[(i, j)] - g[(j, i)]).abs());
        }
    }
    if asym > METRIC_SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric {
            found: asym,
            tol: METRIC_SYMMETRY_TOL * scale,
        });
    }
    let inv = g
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("metric has no inverse".into()))?;
    let residual = (g * &inv - DMatrix::identity(n, n)).amax();
    let within_tol = residual <= METRIC_INVERSE_TOL;
    if !within_tol {
        return Err(Error::Singular(format!(
            "metric inverse residual {residual:e} exceeds {METRIC_INVERSE_TOL:e}"
        )));
    }
    Ok(inv)
}

/// One metric matrix per base direction, either constant or q-dependent.
#[derive(Clone)]
pub enum MetricFamily {
    Constant(Vec<DMatrix<f64>>),
    Variable {
        k: usize,
        n: usize,
        eval: ConfigFn<Vec<DMatrix<f64>>>,
        /// partials(q)[a][l] = d g_a / d q^l; finite differences when absent.
        partials: Option<ConfigFn<Vec<Vec<DMatrix<f64>>>>>,
    },
}

impl MetricFamily {
    pub fn constant(metrics: Vec<DMatrix<f64>>) -> Self {
        Self::Constant(metrics)
    }

    pub fn variable(
        k: usize,
        n: usize,
        eval: impl Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync + 'static,
    ) -> Self {
        Self::Variable {
            k,
            n,
            eval: Arc::new(eval),
            partials: None,
        }
    }

    pub fn with_partials(
        self,
        p: impl Fn(&DVector<f64>) -> Vec<Vec<DMatrix<f64>>> + Send + Sync + 'static,
    ) -> Self {
        match self {
            Self::Variable { k, n, eval, .. } => Self::Variable {
                k,
                n,
                eval,
                partials: Some(Arc::new(p)),
            },
            constant => constant,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Self::Constant(_))
    }

    pub fn k(&self) -> usize {
        match self {
            Self::Constant(ms) => ms.len(),
            Self::Variable { k, .. } => *k,
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Self::Constant(ms) => ms.first().map_or(0, |m| m.nrows()),
            Self::Variable { n, .. } => *n,
        }
    }

    /// The metric matrices at q.
    pub fn at(&self, q: &DVector<f64>) -> Vec<DMatrix<f64>> {
        match self {
            Self::Constant(ms) => ms.clone(),
            Self::Variable { eval, .. } => eval(q),
        }
    }

    /// partials[a][l] = d g_a / d q^l at q; zero for constant families.
    pub fn partials_at(&self, q: &DVector<f64>, step: f64) -> Vec<Vec<DMatrix<f64>>> {
        match self {
            Self::Constant(ms) => ms
                .iter()
                .map(|m| vec![DMatrix::zeros(m.nrows(), m.ncols()); q.len()])
                .collect(),
            Self::Variable {
                eval,
                partials,
                k,
                n,
            } => {
                if let Some(p) = partials {
                    return p(q);
                }
                let mut out = vec![vec![DMatrix::zeros(*n, *n); q.len()]; *k];
                for l in 0..q.len() {
                    let h = fd::scaled_step(step, q[l]);
                    let mut qp = q.clone();
                    qp[l] += h;
                    let mut qm = q.clone();
                    qm[l] -= h;
                    let gp = eval(&qp);
                    let gm = eval(&qm);
                    for a in 0..*k {
                        out[a][l] = (&gp[a] - &gm[a]) / (2.0 * h);
                    }
                }
                out
            }
        }
    }
}

/// Potential V(t, q) with optional analytic partial derivatives.
#[derive(Clone)]
pub struct Potential {
    value: BaseFn<f64>,
    partials: Option<BaseFn<(DVector<f64>, DVector<f64>)>>,
}

impl Potential {
    pub fn zero() -> Self {
        Self {
            value: Arc::new(|_, _| 0.0),
            partials: Some(Arc::new(|t, q| {
                (DVector::zeros(t.len()), DVector::zeros(q.len()))
            })),
        }
    }

    pub fn new(
        value: impl Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            value: Arc::new(value),
            partials: None,
        }
    }

    pub fn with_partials(
        mut self,
        p: impl Fn(&DVector<f64>, &DVector<f64>) -> (DVector<f64>, DVector<f64>) + Send + Sync + 'static,
    ) -> Self {
        self.partials = Some(Arc::new(p));
        self
    }

    pub fn value(&self, t: &DVector<f64>, q: &DVector<f64>) -> f64 {
        (self.value)(t, q)
    }

    /// (dV/dt, dV/dq) at (t, q), analytic or by central differences.
    pub fn partials_at(
        &self,
        t: &DVector<f64>,
        q: &DVector<f64>,
        step: f64,
    ) -> (DVector<f64>, DVector<f64>) {
        if let Some(p) = &self.partials {
            return p(t, q);
        }
        let mut dt = DVector::zeros(t.len());
        for a in 0..t.len() {
            let h = fd::scaled_step(step, t[a]);
            let mut tp = t.clone();
            tp[a] += h;
            let mut tm = t.clone();
            tm[a] -= h;
            dt[a] = ((self.value)(&tp, q) - (self.value)(&tm, q)) / (2.0 * h);
        }
        let mut dq = DVector::zeros(q.len());
        for i in 0..q.len() {
            let h = fd::scaled_step(step, q[i]);
            let mut qp = q.clone();
            qp[i] += h;
            let mut qm = q.clone();
            qm[i] -= h;
            dq[i] = ((self.value)(t, &qp) - (self.value)(t, &qm)) / (2.0 * h);
        }
        (dt, dq)
    }
}

/// H = 1/2 sum_A g_A^{ij}(q) p^A_i p^A_j + V(t, q), where g_A^{ij} is the
/// dual of the A-th metric in the family.
///
/// Dual metrics of a constant family are validated and cached at
/// construction.  For q-dependent families every query validates the metric
/// at that q; an invalid metric there violates the construction contract and
/// panics with the underlying error.
#[derive(Clone)]
pub struct QuadraticHamiltonian {
    dims: Dimensions,
    metrics: MetricFamily,
    duals: Option<Vec<DMatrix<f64>>>,
    potential: Potential,
    fd_step: f64,
}

impl QuadraticHamiltonian {
    pub fn new(dims: Dimensions, metrics: MetricFamily, potential: Potential) -> Result<Self> {
        if metrics.k() != dims.k || metrics.n() != dims.n {
            return Err(Error::Shape(format!(
                "metric family of shape k={}, n={} does not match dimensions k={}, n={}",
                metrics.k(),
                metrics.n(),
                dims.k,
                dims.n
            )));
        }
        let duals = match &metrics {
            MetricFamily::Constant(ms) => {
                if ms
                    .iter()
                    .any(|m| m.nrows() != dims.n || m.ncols() != dims.n)
                {
                    return Err(Error::Shape("metric matrices must all be n x n".into()));
                }
                Some(ms.iter().map(dual_metric).collect::<Result<Vec<_>>>()?)
            }
            MetricFamily::Variable { .. } => None,
        };
        Ok(Self {
            dims,
            metrics,
            duals,
            potential,
            fd_step: fd::default_step(),
        })
    }

    pub fn with_fd_step(mut self, step: f64) -> Self {
        self.fd_step = step;
        self
    }

    pub fn metrics(&self) -> &MetricFamily {
        &self.metrics
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn fd_step(&self) -> f64 {
        self.fd_step
    }

    /// Metric matrices at q.
    pub fn metrics_at(&self, q: &DVector<f64>) -> Vec<DMatrix<f64>> {
        self.metrics.at(q)
    }

    /// Dual metrics at q; cached for constant families.
    pub fn dual_metrics_at(&self, q: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
        match &self.duals {
            Some(d) => Ok(d.clone()),
            None => self.metrics.at(q).iter().map(dual_metric).collect(),
        }
    }

    fn duals_or_panic(&self, q: &DVector<f64>) -> Vec<DMatrix<f64>> {
        self.dual_metrics_at(q)
            .expect("q-dependent metric family produced an invalid metric at a queried q")
    }
}

impl Hamiltonian for QuadraticHamiltonian {
    fn dims(&self) -> Dimensions {
        self.dims
    }

    fn value(&self, x: &ChartPoint) -> f64 {
        let duals = self.duals_or_panic(&x.q);
        let mut kinetic = 0.0;
        for (a, dual) in duals.iter().enumerate() {
            let pa = x.p.row(a).transpose();
            kinetic += 0.5 * pa.dot(&(dual * &pa));
        }
        kinetic + self.potential.value(&x.t, &x.q)
    }

    fn gradient(&self, x: &ChartPoint) -> Covector {
        let dims = self.dims;
        let duals = self.duals_or_panic(&x.q);
        let (dv_dt, dv_dq) = self.potential.partials_at(&x.t, &x.q, self.fd_step);
        let mut g = Covector::zero(dims);
        g.at.copy_from(&dv_dt);
        g.aq.copy_from(&dv_dq);
        for (a, dual) in duals.iter().enumerate() {
            let pa = x.p.row(a).transpose();
            let dual_pa = dual * &pa;
            for i in 0..dims.n {
                g.ap[(a, i)] = dual_pa[i];
            }
        }
        if !self.metrics.is_constant() {
            // d(dual)/dq^l = -dual (dg/dq^l) dual
            let partials = self.metrics.partials_at(&x.q, self.fd_step);
            for (l, aq_l) in g.aq.iter_mut().enumerate() {
                let mut term = 0.0;
                for (a, dual) in duals.iter().enumerate() {
                    let pa = x.p.row(a).transpose();
                    let d_dual = -(dual * &partials[a][l] * dual);
                    term += 0.5 * pa.dot(&(d_dual * &pa));
                }
                *aq_l += term;
            }
        }
        g
    }
}

/// How the force -dH/dq^i is distributed over the k diagonal momentum
/// components of a solution k-vector field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum HdwGauge {
    /// Each direction carries -dH/dq^i / k.
    #[default]
    Symmetric,
    /// The chosen direction carries the whole force.
    Concentrated(usize),
}

/// A solution k-vector field in a fixed gauge.
#[derive(Clone)]
pub struct HamiltonianKVectorField {
    hamiltonian: Arc<dyn Hamiltonian>,
    gauge: HdwGauge,
}

/// Builds the solution k-vector field of the geometric Hamiltonian equations
/// for H in the given gauge.
pub fn build_hdw(
    hamiltonian: Arc<dyn Hamiltonian>,
    gauge: HdwGauge,
) -> Result<HamiltonianKVectorField> {
    if let HdwGauge::Concentrated(a) = gauge {
        let k = hamiltonian.dims().k;
        if a >= k {
            return Err(Error::Index {
                what: "gauge direction",
                index: a,
                size: k,
            });
        }
    }
    Ok(HamiltonianKVectorField { hamiltonian, gauge })
}

impl HamiltonianKVectorField {
    pub fn dims(&self) -> Dimensions {
        self.hamiltonian.dims()
    }

    pub fn gauge(&self) -> HdwGauge {
        self.gauge
    }

    pub fn hamiltonian(&self) -> &Arc<dyn Hamiltonian> {
        &self.hamiltonian
    }

    /// The tuple (X_1, ..., X_k) at x.
    pub fn eval(&self, x: &ChartPoint) -> KTangent {
        let dims = self.dims();
        let grad = self.hamiltonian.gradient(x);
        let mut vectors = Vec::with_capacity(dims.k);
        for a in 0..dims.k {
            let mut v = TangentVector::zero(dims);
            v.vt[a] = 1.0;
            for i in 0..dims.n {
                v.vq[i] = grad.ap[(a, i)];
            }
            match self.gauge {
                HdwGauge::Symmetric => {
                    for i in 0..dims.n {
                        v.vp[(a, i)] = -grad.aq[i] / dims.k as f64;
                    }
                }
                HdwGauge::Concentrated(a0) if a0 == a => {
                    for i in 0..dims.n {
                        v.vp[(a, i)] = -grad.aq[i];
                    }
                }
                HdwGauge::Concentrated(_) => {}
            }
            vectors.push(v);
        }
        KTangent::new(vectors).expect("construction is shape-correct")
    }

    /// Residual of the defining equations at x; see [`hdw_residual`].
    pub fn residual(&self, x: &ChartPoint) -> (DMatrix<f64>, Covector) {
        hdw_residual(self.hamiltonian.as_ref(), &self.eval(x), x)
            .expect("field evaluation is shape-correct")
    }
}

/// Residual of the geometric Hamiltonian equations for an arbitrary k-tangent
/// tuple: the matrix eta^A(X_B) - delta^A_B and the covector
/// sum_A i(X_A) omega^A - dH + sum_A R_A(H) eta^A.
pub fn hdw_residual(
    hamiltonian: &dyn Hamiltonian,
    tuple: &KTangent,
    x: &ChartPoint,
) -> Result<(DMatrix<f64>, Covector)> {
    let dims = hamiltonian.dims();
    if tuple.dims() != dims || x.dims() != dims {
        return Err(Error::Shape(
            "tuple, point and Hamiltonian dimensions differ".into(),
        ));
    }
    let mut eta_res = DMatrix::zeros(dims.k, dims.k);
    for a in 0..dims.k {
        for b in 0..dims.k {
            let delta = if a == b { 1.0 } else { 0.0 };
            eta_res[(a, b)] = chart::contract_eta(a, &tuple.vectors[b])? - delta;
        }
    }
    let grad = hamiltonian.gradient(x);
    let mut cov = Covector::zero(dims);
    for a in 0..dims.k {
        let ca = chart::contract_omega(a, &tuple.vectors[a])?;
        cov.at += &ca.at;
        cov.aq += &ca.aq;
        cov.ap += &ca.ap;
    }
    cov.at -= &grad.at;
    cov.aq -= &grad.aq;
    cov.ap -= &grad.ap;
    for a in 0..dims.k {
        // + R_A(H) eta^A
        cov.at[a] += grad.at[a];
    }
    Ok((eta_res, cov))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::SampleBox;

    fn wave_metrics(sigma: f64, tau: f64, d: usize) -> Vec<DMatrix<f64>> {
        let mut ms = vec![DMatrix::from_element(1, 1, sigma)];
        for _ in 0..d {
            ms.push(DMatrix::from_element(1, 1, -tau));
        }
        ms
    }

    fn wave_hamiltonian(sigma: f64, tau: f64, d: usize) -> QuadraticHamiltonian {
        let dims = Dimensions::new(d + 1, 1).unwrap();
        QuadraticHamiltonian::new(
            dims,
            MetricFamily::constant(wave_metrics(sigma, tau, d)),
            Potential::zero(),
        )
        .unwrap()
    }

    #[test]
    fn dual_metric_inverts_and_validates() {
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let dual = dual_metric(&g).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]) / 3.0;
        assert!((dual.clone() - expected).amax() < 1e-14);
        assert!((g * dual - DMatrix::identity(2, 2)).amax() <= 1e-10);

        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 1.0]);
        assert!(matches!(
            dual_metric(&asym),
            Err(Error::NotSymmetric { .. })
        ));

        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(dual_metric(&singular), Err(Error::Singular(_))));
    }

    #[test]
    fn fd_gradient_matches_hand_derivative_of_product() {
        // H = t q p on k = n = 1 has gradient (qp, tp, tq).
        let dims = Dimensions::new(1, 1).unwrap();
        let h = HamiltonianFunction::new(dims, |x| x.t[0] * x.q[0] * x.p[(0, 0)]);
        let mut x = ChartPoint::zero(dims);
        x.t[0] = 1.2;
        x.q[0] = -0.7;
        x.p[(0, 0)] = 0.9;
        let g = h.gradient(&x);
        let step = h.fd_step();
        let band = 10.0 * (step * (1.0 + 1.2)).powi(2);
        assert!((g.at[0] - x.q[0] * x.p[(0, 0)]).abs() <= band);
        assert!((g.aq[0] - x.t[0] * x.p[(0, 0)]).abs() <= band);
        assert!((g.ap[(0, 0)] - x.t[0] * x.q[0]).abs() <= band);
    }

    #[test]
    fn wave_value_matches_hand_formula() {
        let (sigma, tau) = (2.0, 0.5);
        let h = wave_hamiltonian(sigma, tau, 3);
        let dims = h.dims();
        let mut x = ChartPoint::zero(dims);
        for a in 0..4 {
            x.p[(a, 0)] = (a + 1) as f64;
        }
        let expected = 0.5 * (1.0 / sigma * 1.0 - 1.0 / tau * (4.0 + 9.0 + 16.0));
        assert!((h.value(&x) - expected).abs() < 1e-14);
    }

    #[test]
    fn quadratic_gradient_matches_finite_differences() {
        let dims = Dimensions::new(2, 2).unwrap();
        let g1 = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.5]);
        let g2 = DMatrix::from_row_slice(2, 2, &[-1.0, 0.1, 0.1, -2.0]);
        let potential =
            Potential::new(|t: &DVector<f64>, q: &DVector<f64>| t[0] * q[1] + 0.5 * q[0] * q[0]);
        let h = QuadraticHamiltonian::new(dims, MetricFamily::constant(vec![g1, g2]), potential)
            .unwrap();
        let x = chart::sample_points(dims, &SampleBox::centered(dims, 1.0, 1.0, 1.0), 1, 3)
            .pop()
            .unwrap();
        let analytic = h.gradient(&x);
        let numeric = fd::gradient(|y| h.value(y), &x, h.fd_step());
        let band = 10.0 * (h.fd_step() * 2.0).powi(2);
        let diff = (analytic.flatten() - numeric.flatten()).amax();
        assert!(diff <= band, "analytic vs FD gradient differ by {diff:e}");
    }

    #[test]
    fn variable_metric_gradient_matches_closed_form() {
        // k = n = 1, g(q) = e^{2q}: H = 1/2 e^{-2q} p^2, so
        // dH/dq = -e^{-2q} p^2 and dH/dp = e^{-2q} p.
        let dims = Dimensions::new(1, 1).unwrap();
        let family = MetricFamily::variable(1, 1, |q: &DVector<f64>| {
            vec![DMatrix::from_element(1, 1, (2.0 * q[0]).exp())]
        });
        let h = QuadraticHamiltonian::new(dims, family, Potential::zero()).unwrap();
        let mut x = ChartPoint::zero(dims);
        x.q[0] = 0.3;
        x.p[(0, 0)] = 1.4;
        let g = h.gradient(&x);
        let e = (-2.0 * x.q[0]).exp();
        let p = x.p[(0, 0)];
        assert!(
            (g.aq[0] + e * p * p).abs() < 1e-6,
            "dq residual {:e}",
            g.aq[0] + e * p * p
        );
        assert!((g.ap[(0, 0)] - e * p).abs() < 1e-12);

        // Analytic metric partials tighten the q derivative to rounding.
        let family = MetricFamily::variable(1, 1, |q: &DVector<f64>| {
            vec![DMatrix::from_element(1, 1, (2.0 * q[0]).exp())]
        })
        .with_partials(|q: &DVector<f64>| {
            vec![vec![DMatrix::from_element(1, 1, 2.0 * (2.0 * q[0]).exp())]]
        });
        let h = QuadraticHamiltonian::new(dims, family, Potential::zero()).unwrap();
        let g = h.gradient(&x);
        assert!((g.aq[0] + e * p * p).abs() < 1e-13);
    }

    #[test]
    fn hdw_field_solves_the_local_equations() {
        let h = Arc::new(wave_hamiltonian(1.0, 1.0, 2));
        let dims = h.dims();
        let field = build_hdw(h.clone(), HdwGauge::Symmetric).unwrap();
        for x in chart::sample_points(dims, &SampleBox::centered(dims, 1.0, 1.0, 2.0), 32, 4) {
            let tuple = field.eval(&x);
            // (X_A)^B = delta and (X_A)^i = dH/dp^A_i.
            let grad = h.gradient(&x);
            for a in 0..dims.k {
                for b in 0..dims.k {
                    let expected = if a == b { 1.0 } else { 0.0 };
                    assert_eq!(tuple.vectors[a].vt[b], expected);
                }
                assert_eq!(tuple.vectors[a].vq[0], grad.ap[(a, 0)]);
            }
            let (eta_res, cov) = field.residual(&x);
            assert!(eta_res.amax() <= 1e-12);
            assert!(cov.norm_inf() <= 1e-12);
        }
    }

    #[test]
    fn gauge_choices_satisfy_trace_condition_and_differ_by_kernel_element() {
        let dims = Dimensions::new(3, 2).unwrap();
        let potential =
            Potential::new(|_t: &DVector<f64>, q: &DVector<f64>| q[0] * q[0] + 0.5 * q[0] * q[1]);
        let g = vec![
            DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 2.0]),
            DMatrix::from_row_slice(2, 2, &[-1.5, 0.0, 0.0, -1.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, -0.3, -0.3, 1.0]),
        ];
        let h: Arc<dyn Hamiltonian> = Arc::new(
            QuadraticHamiltonian::new(dims, MetricFamily::constant(g), potential).unwrap(),
        );
        let symmetric = build_hdw(h.clone(), HdwGauge::Symmetric).unwrap();
        let concentrated = build_hdw(h.clone(), HdwGauge::Concentrated(1)).unwrap();
        for x in chart::sample_points(dims, &SampleBox::centered(dims, 1.0, 1.0, 1.0), 16, 11) {
            let grad = h.gradient(&x);
            for field in [&symmetric, &concentrated] {
                let tuple = field.eval(&x);
                for i in 0..dims.n {
                    let trace: f64 = (0..dims.k).map(|a| tuple.vectors[a].vp[(a, i)]).sum();
                    assert!(
                        (trace + grad.aq[i]).abs() <= 1e-12,
                        "trace condition violated by {:e}",
                        trace + grad.aq[i]
                    );
                }
                let (eta_res, cov) = field.residual(&x);
                assert!(eta_res.amax() <= 1e-12);
                assert!(cov.norm_inf() <= 1e-12);
            }
            let diff = symmetric
                .eval(&x)
                .difference(&concentrated.eval(&x))
                .unwrap();
            assert!(
                chart::kernel_membership_residual(&diff) <= 1e-10,
                "gauge difference must lie in the solution kernel"
            );
        }
    }

    #[test]
    fn concentrated_gauge_index_is_validated() {
        let h: Arc<dyn Hamiltonian> = Arc::new(wave_hamiltonian(1.0, 1.0, 1));
        assert!(build_hdw(h.clone(), HdwGauge::Concentrated(2)).is_err());
        assert!(build_hdw(h, HdwGauge::Concentrated(1)).is_ok());
    }

    #[test]
    fn hdw_residual_flags_wrong_tuples() {
        let h = wave_hamiltonian(1.0, 1.0, 1);
        let dims = h.dims();
        let x = ChartPoint::zero(dims);
        let zero_tuple = KTangent::new(vec![TangentVector::zero(dims); 2]).unwrap();
        let (eta_res, _) = hdw_residual(&h, &zero_tuple, &x).unwrap();
        assert!(
            (eta_res.amax() - 1.0).abs() < 1e-15,
            "missing eta normalization must show up"
        );
    }
}
