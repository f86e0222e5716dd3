//! C ABI over the kcosym core: solve the wave system, inspect conservation
//! and residual diagnostics, and query the solution-kernel dimension.
//!
//! Conventions:
//! - Every fallible entry point returns a [`KcStatus`]; `KC_STATUS_OK` is 0.
//! - On failure, a thread-local message is available through
//!   [`kc_last_error_message`] until the next failing call on that thread.
//! - Results are produced through `out` pointers, written only on success.
//! - Handles returned through `out` pointers are owned by the caller and
//!   must be released with the matching `_free` function.
//! - No call panics across the boundary; unexpected panics are reported as
//!   `KC_STATUS_PANIC`.
#![deny(unsafe_op_in_unsafe_fn)]

use std::cell::RefCell;
use std::ffi::{c_char, c_void, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use kcosym::chart::{kernel_dimension, sample_points, Dimensions, SampleBox};
use kcosym::fields::{
    divergence, hdw_residual_on_section, integrate_wave, write_csv, AxisSpec, BaseGrid, Boundary,
    SectionGrid, WaveParams,
};
use kcosym::symmetry::{complete_lift, conserved_from_killing, noether_check, BaseVectorField};
use kcosym::Error;

use nalgebra::DVector;

/// Outcome of a call across the C boundary.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum KcStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument or configuration was rejected; see the error message.
    InvalidArgument = 2,
    /// The requested time step violates the stability bound.
    Unstable = 3,
    /// A matrix was singular or lacked the required definiteness.
    Singular = 4,
    /// A file could not be read or written.
    Io = 5,
    /// An internal invariant failed; see the error message.
    Panic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn clear_error() {
    LAST_ERROR.with(|slot| slot.borrow_mut().take());
}

fn fail(status: KcStatus, message: impl AsRef<str>) -> KcStatus {
    let text = message.as_ref().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = Some(CString::new(text).expect("nul bytes replaced"));
    });
    status
}

fn fail_error(error: &Error) -> KcStatus {
    let status = match error {
        Error::Cfl(_) => KcStatus::Unstable,
        Error::Singular(_) | Error::NotSymmetric { .. } => KcStatus::Singular,
        Error::Io(_) => KcStatus::Io,
        _ => KcStatus::InvalidArgument,
    };
    fail(status, error.to_string())
}

/// Runs `body` with panic isolation, translating errors and panics into
/// status codes.
fn guarded(body: impl FnOnce() -> Result<KcStatus, Error>) -> KcStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(status)) => status,
        Ok(Err(error)) => fail_error(&error),
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            fail(KcStatus::Panic, format!("internal panic: {message}"))
        }
    }
}

/// One axis of the integration grid.
#[repr(C)]
#[derive(Clone, Copy)]
pub struct KcAxisSpec {
    /// Coordinate of the first node.
    pub start: f64,
    /// End of the axis range.  Periodic axes cover [start, stop) and wrap;
    /// bounded axes include both endpoints.
    pub stop: f64,
    /// Number of nodes (at least 3).
    pub nodes: usize,
    /// Nonzero for a periodic axis, zero for held (Dirichlet) boundaries.
    pub periodic: bool,
}

/// Scalar callback over base coordinates: receives `num_coords` doubles and
/// the opaque `user_data` pointer passed to the solver.  May be null where a
/// default is documented.
pub type KcScalarFn = Option<
    unsafe extern "C" fn(coords: *const f64, num_coords: usize, user_data: *mut c_void) -> f64,
>;

/// An integrated wave field on its grid.  Opaque; release with
/// [`kc_wave_solution_free`].
pub struct KcWaveSolution {
    section: SectionGrid,
    sigma: f64,
    tau: f64,
    spatial_dims: usize,
}

/// A callback plus its context, shareable with the solver's closures.  The
/// caller is responsible for the callback being safe to invoke from the
/// calling thread for the duration of `kc_wave_solve`.
#[derive(Clone, Copy)]
struct UserCallback {
    f: unsafe extern "C" fn(*const f64, usize, *mut c_void) -> f64,
    user_data: *mut c_void,
}

unsafe impl Send for UserCallback {}
unsafe impl Sync for UserCallback {}

impl UserCallback {
    fn eval(&self, coords: &DVector<f64>) -> f64 {
        unsafe { (self.f)(coords.as_ptr(), coords.len(), self.user_data) }
    }
}

/// Version of the library as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn kc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Static name of a status code (e.g. "ok", "unstable").
#[no_mangle]
pub extern "C" fn kc_status_name(status: KcStatus) -> *const c_char {
    let name: &'static str = match status {
        KcStatus::Ok => "ok\0",
        KcStatus::NullPointer => "null pointer\0",
        KcStatus::InvalidArgument => "invalid argument\0",
        KcStatus::Unstable => "unstable\0",
        KcStatus::Singular => "singular\0",
        KcStatus::Io => "io error\0",
        KcStatus::Panic => "panic\0",
    };
    name.as_ptr() as *const c_char
}

/// Message of the last failure on this thread, or null when the last call
/// succeeded.  The pointer stays valid until the next failing call on the
/// same thread.
#[no_mangle]
pub extern "C" fn kc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(std::ptr::null(), |msg| msg.as_ptr())
    })
}

/// Writes the solution-kernel dimension for `k` base directions and `n`
/// field components into `out_dimension`.  The numerical rank computation
/// uses tolerance 1e-9 and always matches the closed form (k-1)(kn+n).
///
/// # Safety
/// `out_dimension` must be null or valid for writing one `size_t`.
#[no_mangle]
pub unsafe extern "C" fn kc_kernel_dimension(
    k: usize,
    n: usize,
    out_dimension: *mut usize,
) -> KcStatus {
    guarded(|| {
        if out_dimension.is_null() {
            return Ok(fail(KcStatus::NullPointer, "out_dimension is null"));
        }
        let dims = Dimensions::new(k, n)?;
        let value = kernel_dimension(dims, 1e-9)?;
        unsafe { *out_dimension = value };
        Ok(KcStatus::Ok)
    })
}

/// Integrates the wave system sigma d^2 psi/dt^2 = tau laplacian(psi).
///
/// `axes` describes the grid: axis 0 is the evolution direction and must not
/// be periodic; the remaining `num_axes - 1` axes are spatial (1 to 3 of
/// them).  `displacement` and `velocity` give the initial field and its time
/// derivative over the spatial coordinates; passing null selects the plane
/// profile sin(x_1) with velocity -c cos(x_1), c = sqrt(tau/sigma).  On
/// success `*out_solution` owns the integrated field.
///
/// # Safety
/// `axes` must be null or point to `num_axes` readable `KcAxisSpec` values,
/// `out_solution` must be null or valid for writing one pointer, and any
/// non-null callbacks must be safe to invoke with `user_data` for the
/// duration of the call.
#[no_mangle]
pub unsafe extern "C" fn kc_wave_solve(
    sigma: f64,
    tau: f64,
    axes: *const KcAxisSpec,
    num_axes: usize,
    displacement: KcScalarFn,
    velocity: KcScalarFn,
    user_data: *mut c_void,
    out_solution: *mut *mut KcWaveSolution,
) -> KcStatus {
    guarded(|| {
        if out_solution.is_null() {
            return Ok(fail(KcStatus::NullPointer, "out_solution is null"));
        }
        if axes.is_null() {
            return Ok(fail(KcStatus::NullPointer, "axes is null"));
        }
        if num_axes < 2 {
            return Ok(fail(
                KcStatus::InvalidArgument,
                format!("need an evolution axis plus spatial axes, got {num_axes} axes"),
            ));
        }
        let spatial_dims = num_axes - 1;
        let axes = unsafe { std::slice::from_raw_parts(axes, num_axes) };
        let specs = axes
            .iter()
            .map(|axis| {
                AxisSpec::new(
                    axis.start,
                    axis.stop,
                    axis.nodes,
                    if axis.periodic {
                        Boundary::Periodic
                    } else {
                        Boundary::Dirichlet
                    },
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        let grid = BaseGrid::new(specs)?;

        let speed = (tau / sigma).sqrt();
        let params = match (displacement, velocity) {
            (Some(d), Some(v)) => {
                let d = UserCallback { f: d, user_data };
                let v = UserCallback { f: v, user_data };
                WaveParams::new(
                    sigma,
                    tau,
                    spatial_dims,
                    move |x| d.eval(x),
                    move |x| v.eval(x),
                )?
            }
            (None, None) => WaveParams::new(
                sigma,
                tau,
                spatial_dims,
                |x: &DVector<f64>| x[0].sin(),
                move |x: &DVector<f64>| -speed * x[0].cos(),
            )?,
            _ => {
                return Ok(fail(
                    KcStatus::InvalidArgument,
                    "displacement and velocity callbacks must be both set or both null",
                ))
            }
        };
        let section = integrate_wave(&params, &grid)?;
        let handle = Box::new(KcWaveSolution {
            section,
            sigma,
            tau,
            spatial_dims,
        });
        unsafe { *out_solution = Box::into_raw(handle) };
        Ok(KcStatus::Ok)
    })
}

fn borrow_solution<'a>(solution: *const KcWaveSolution) -> Option<&'a KcWaveSolution> {
    unsafe { solution.as_ref() }
}

/// Writes the total number of grid nodes into `out_count`.
///
/// # Safety
/// `solution` must be null or a live handle from [`kc_wave_solve`], and
/// `out_count` must be null or valid for writing one `size_t`.
#[no_mangle]
pub unsafe extern "C" fn kc_wave_solution_node_count(
    solution: *const KcWaveSolution,
    out_count: *mut usize,
) -> KcStatus {
    guarded(|| {
        let Some(solution) = borrow_solution(solution) else {
            return Ok(fail(KcStatus::NullPointer, "solution is null"));
        };
        if out_count.is_null() {
            return Ok(fail(KcStatus::NullPointer, "out_count is null"));
        }
        unsafe { *out_count = solution.section.grid().node_count() };
        Ok(KcStatus::Ok)
    })
}

/// Copies the field values in node order (evolution axis slowest) into
/// `out_values`, which must hold exactly `capacity` doubles equal to the
/// node count.
///
/// # Safety
/// `solution` must be null or a live handle from [`kc_wave_solve`], and
/// `out_values` must be null or valid for writing `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn kc_wave_solution_copy_psi(
    solution: *const KcWaveSolution,
    out_values: *mut f64,
    capacity: usize,
) -> KcStatus {
    guarded(|| {
        let Some(solution) = borrow_solution(solution) else {
            return Ok(fail(KcStatus::NullPointer, "solution is null"));
        };
        if out_values.is_null() {
            return Ok(fail(KcStatus::NullPointer, "out_values is null"));
        }
        let nodes = solution.section.grid().node_count();
        if capacity != nodes {
            return Ok(fail(
                KcStatus::InvalidArgument,
                format!("capacity {capacity} does not match node count {nodes}"),
            ));
        }
        let out = unsafe { std::slice::from_raw_parts_mut(out_values, capacity) };
        out.copy_from_slice(solution.section.psi_raw());
        Ok(KcStatus::Ok)
    })
}

/// Writes the maximum interior magnitude of the divergence of the momentum
/// current (the discrete conservation defect) into `out_value`.
///
/// # Safety
/// `solution` must be null or a live handle from [`kc_wave_solve`], and
/// `out_value` must be null or valid for writing one double.
#[no_mangle]
pub unsafe extern "C" fn kc_wave_solution_max_divergence(
    solution: *const KcWaveSolution,
    out_value: *mut f64,
) -> KcStatus {
    guarded(|| {
        let Some(solution) = borrow_solution(solution) else {
            return Ok(fail(KcStatus::NullPointer, "solution is null"));
        };
        if out_value.is_null() {
            return Ok(fail(KcStatus::NullPointer, "out_value is null"));
        }
        let dims = Dimensions::new(solution.spatial_dims + 1, 1)?;
        let translation = BaseVectorField::translation(dims, DVector::from_element(1, 1.0))?;
        let current = conserved_from_killing(&translation);
        let field = divergence(&current, &solution.section)?;
        unsafe { *out_value = field.max_abs() };
        Ok(KcStatus::Ok)
    })
}

/// Writes the maximum interior magnitudes of the first-order field-equation
/// residuals: the force (momentum-evolution) part into `out_force` and the
/// velocity (constitutive) part into `out_velocity`.
///
/// # Safety
/// `solution` must be null or a live handle from [`kc_wave_solve`], and each
/// out pointer must be null or valid for writing one double.
#[no_mangle]
pub unsafe extern "C" fn kc_wave_solution_hdw_residual(
    solution: *const KcWaveSolution,
    out_force: *mut f64,
    out_velocity: *mut f64,
) -> KcStatus {
    guarded(|| {
        let Some(solution) = borrow_solution(solution) else {
            return Ok(fail(KcStatus::NullPointer, "solution is null"));
        };
        if out_force.is_null() || out_velocity.is_null() {
            return Ok(fail(KcStatus::NullPointer, "residual out pointer is null"));
        }
        let params = WaveParams::new(
            solution.sigma,
            solution.tau,
            solution.spatial_dims,
            |_x| 0.0,
            |_x| 0.0,
        )?;
        let (force, velocity) = hdw_residual_on_section(&params.hamiltonian()?, &solution.section)?;
        unsafe {
            *out_force = force.max_abs();
            *out_velocity = velocity.max_abs();
        }
        Ok(KcStatus::Ok)
    })
}

/// Writes the field and its momenta to `path` as CSV (one row per node:
/// coordinates, field components, momenta).
///
/// # Safety
/// `solution` must be null or a live handle from [`kc_wave_solve`], and
/// `path` must be null or a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn kc_wave_solution_write_csv(
    solution: *const KcWaveSolution,
    path: *const c_char,
) -> KcStatus {
    guarded(|| {
        let Some(solution) = borrow_solution(solution) else {
            return Ok(fail(KcStatus::NullPointer, "solution is null"));
        };
        if path.is_null() {
            return Ok(fail(KcStatus::NullPointer, "path is null"));
        }
        let raw = unsafe { CStr::from_ptr(path) };
        let Ok(path) = raw.to_str() else {
            return Ok(fail(KcStatus::InvalidArgument, "path is not valid UTF-8"));
        };
        write_csv(&solution.section, Path::new(path))?;
        Ok(KcStatus::Ok)
    })
}

/// Releases a solution handle.  Null is accepted and ignored.
///
/// # Safety
/// `solution` must be null or a handle from [`kc_wave_solve`] that has not
/// already been freed.
#[no_mangle]
pub unsafe extern "C" fn kc_wave_solution_free(solution: *mut KcWaveSolution) {
    if !solution.is_null() {
        drop(unsafe { Box::from_raw(solution) });
    }
}

/// Runs the symmetry check for the lifted configuration translation on the
/// wave system and writes the largest of the three condition residuals into
/// `out_residual` (expected to be at rounding level).  Sampling uses
/// `samples` points drawn deterministically from `seed`.
///
/// # Safety
/// `out_residual` must be null or valid for writing one double.
#[no_mangle]
pub unsafe extern "C" fn kc_noether_translation_residual(
    sigma: f64,
    tau: f64,
    spatial_dims: usize,
    samples: usize,
    seed: u64,
    out_residual: *mut f64,
) -> KcStatus {
    guarded(|| {
        if out_residual.is_null() {
            return Ok(fail(KcStatus::NullPointer, "out_residual is null"));
        }
        if samples == 0 {
            return Ok(fail(KcStatus::InvalidArgument, "samples must be positive"));
        }
        let params = WaveParams::new(sigma, tau, spatial_dims, |_x| 0.0, |_x| 0.0)?;
        let dims = params.dims();
        let hamiltonian = params.hamiltonian()?;
        let translation = BaseVectorField::translation(dims, DVector::from_element(1, 1.0))?;
        let lift = complete_lift(&translation);
        let points = sample_points(
            dims,
            &SampleBox::centered(dims, 1.0, 1.0, 1.0),
            samples,
            seed,
        );
        let report = noether_check(&lift, &hamiltonian, &points, 1.0)?;
        let residual = report
            .residual_omega
            .max(report.residual_eta)
            .max(report.residual_hamiltonian);
        unsafe { *out_residual = residual };
        Ok(KcStatus::Ok)
    })
}
