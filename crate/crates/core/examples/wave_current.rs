//! Integrates the 1+1-dimensional wave system and reports the conservation
//! defect of the time-translation current on the grid interior.

use kcosym::chart::Dimensions;
use kcosym::fields::{divergence, integrate_wave, AxisSpec, BaseGrid, Boundary, WaveParams};
use kcosym::symmetry::{conserved_from_killing, BaseVectorField};
use nalgebra::DVector;

fn main() -> kcosym::Result<()> {
    // sigma psi_tt = tau psi_xx with a right-moving initial profile.
    let params = WaveParams::new(1.0, 1.0, 1, |x| x[0].sin(), |x| -x[0].cos())?;
    let grid = BaseGrid::new(vec![
        AxisSpec::new(0.0, 1.0, 65, Boundary::Dirichlet)?,
        AxisSpec::new(0.0, std::f64::consts::TAU, 128, Boundary::Periodic)?,
    ])?;
    let section = integrate_wave(&params, &grid)?;

    // The time-translation current is conserved: its discrete divergence
    // shrinks as O(h^2).
    let translation =
        BaseVectorField::translation(Dimensions::new(2, 1)?, DVector::from_element(1, 1.0))?;
    let current = conserved_from_killing(&translation);
    println!(
        "max |Div F| = {:e}",
        divergence(&current, &section)?.max_abs()
    );
    Ok(())
}
