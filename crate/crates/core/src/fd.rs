//! Central finite differences on chart coordinates.
//!
//! The step along coordinate x_mu is `step * (1 + |x_mu|)`, with
//! `default_step()` = cbrt(machine epsilon), which balances truncation against
//! cancellation for second-order central stencils.

use nalgebra::{DMatrix, DVector};

use crate::chart::{ChartPoint, Covector, TangentVector};

/// cbrt(machine epsilon), about 6.06e-6.
pub fn default_step() -> f64 {
    f64::EPSILON.cbrt()
}

/// Per-coordinate step scaling.
pub fn scaled_step(step: f64, coord: f64) -> f64 {
    step * (1.0 + coord.abs())
}

/// Gradient of a scalar on the phase space by central differences.
pub fn gradient<F: Fn(&ChartPoint) -> f64>(f: F, x: &ChartPoint, step: f64) -> Covector {
    let dims = x.dims();
    let flat = x.flatten();
    let mut out = DVector::zeros(dims.phase_dim());
    for mu in 0..dims.phase_dim() {
        let h = scaled_step(step, flat[mu]);
        let mut plus = flat.clone();
        plus[mu] += h;
        let mut minus = flat.clone();
        minus[mu] -= h;
        let fp = f(&ChartPoint::from_flat(dims, &plus).expect("flat length fixed"));
        let fm = f(&ChartPoint::from_flat(dims, &minus).expect("flat length fixed"));
        out[mu] = (fp - fm) / (2.0 * h);
    }
    Covector::from_flat(dims, &out).expect("flat length fixed")
}

/// Jacobian J[r][c] = d f_r / d x_c of a flattened vector-valued map.
pub fn jacobian_flat<F: Fn(&ChartPoint) -> DVector<f64>>(
    f: F,
    x: &ChartPoint,
    step: f64,
) -> DMatrix<f64> {
    let dims = x.dims();
    let nn = dims.phase_dim();
    let flat = x.flatten();
    let mut jac = DMatrix::zeros(nn, nn);
    for mu in 0..nn {
        let h = scaled_step(step, flat[mu]);
        let mut plus = flat.clone();
        plus[mu] += h;
        let mut minus = flat.clone();
        minus[mu] -= h;
        let fp = f(&ChartPoint::from_flat(dims, &plus).expect("flat length fixed"));
        let fm = f(&ChartPoint::from_flat(dims, &minus).expect("flat length fixed"));
        let col = (fp - fm) / (2.0 * h);
        jac.set_column(mu, &col);
    }
    jac
}

/// Jacobian of a tangent-vector field, rows and columns in flat order.
pub fn jacobian_vector_field<F: Fn(&ChartPoint) -> TangentVector>(
    f: F,
    x: &ChartPoint,
    step: f64,
) -> DMatrix<f64> {
    jacobian_flat(|y| f(y).flatten(), x, step)
}

/// Directional derivative of f along v at x, differencing along the straight
/// line x + s v.  Returns 0 for a vanishing direction.
pub fn directional<F: Fn(&ChartPoint) -> f64>(
    f: F,
    x: &ChartPoint,
    v: &TangentVector,
    step: f64,
) -> f64 {
    let scale = v.norm_inf();
    if scale == 0.0 {
        return 0.0;
    }
    let flat = x.flatten();
    let h = scaled_step(step, flat.amax()) / scale;
    (f(&x.offset(v, h)) - f(&x.offset(v, -h))) / (2.0 * h)
}
