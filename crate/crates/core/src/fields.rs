//! Grids on the base space, sampled sections, finite-difference integration
//! of the field equations for quadratic Hamiltonians (wave equation as the
//! flagship), momenta reconstruction, current divergences and residual
//! diagnostics, and CSV serialization.
//!
//! Axis 0 of every grid is the evolution ("time") direction; the remaining
//! axes are treated spatially.  Nodes are enumerated row-major with axis 0
//! slowest, so one time level occupies a contiguous block.  All derivatives
//! are second-order central differences, with one-sided second-order stencils
//! at non-periodic boundaries.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write as IoWrite};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::chart::{ChartPoint, ConfigFn, Dimensions, KTangent, TangentVector};
use crate::hamiltonian::{Hamiltonian, QuadraticHamiltonian};
use crate::symmetry::ConservedCurrent;
use crate::{Error, Result};

/// Slack allowed on the stability bound, so that runs at the exact limit are
/// not rejected for rounding.
const CFL_SLACK: f64 = 1e-9;

/// Boundary treatment of one grid axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    /// The axis wraps; the node after the last is the first.  The `stop`
    /// coordinate is excluded from the nodes.
    Periodic,
    /// The axis ends at its extremes; both endpoints carry nodes.
    Dirichlet,
}

/// One uniformly spaced grid axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisSpec {
    pub start: f64,
    pub stop: f64,
    pub nodes: usize,
    pub boundary: Boundary,
}

impl AxisSpec {
    pub fn new(start: f64, stop: f64, nodes: usize, boundary: Boundary) -> Result<Self> {
        let ordered = start.is_finite() && stop.is_finite() && start < stop;
        if !ordered {
            return Err(Error::Shape(format!(
                "axis needs finite start < stop, got [{start}, {stop}]"
            )));
        }
        if nodes < 3 {
            return Err(Error::Shape(format!(
                "axis needs at least 3 nodes, got {nodes}"
            )));
        }
        Ok(Self {
            start,
            stop,
            nodes,
            boundary,
        })
    }

    /// Node spacing implied by the boundary treatment: periodic axes exclude
    /// the endpoint, so they divide the span into `nodes` cells.
    pub fn spacing(&self) -> f64 {
        match self.boundary {
            Boundary::Periodic => (self.stop - self.start) / self.nodes as f64,
            Boundary::Dirichlet => (self.stop - self.start) / (self.nodes - 1) as f64,
        }
    }
}

/// A uniform product grid over the base coordinates, axis 0 slowest.
///
/// Node coordinates are computed once at construction and stored verbatim;
/// every later query (including CSV output) reads the stored values, so a
/// write–read cycle reproduces them bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseGrid {
    axes: Vec<AxisSpec>,
    coords: Vec<Vec<f64>>,
    spacings: Vec<f64>,
    strides: Vec<usize>,
    node_count: usize,
}

impl BaseGrid {
    pub fn new(axes: Vec<AxisSpec>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::Shape("grid needs at least one axis".into()));
        }
        for axis in &axes {
            // Re-validate in case the struct was built literally.
            AxisSpec::new(axis.start, axis.stop, axis.nodes, axis.boundary)?;
        }
        let coords = axes
            .iter()
            .map(|axis| {
                let h = axis.spacing();
                (0..axis.nodes).map(|i| axis.start + i as f64 * h).collect()
            })
            .collect();
        let spacings = axes.iter().map(AxisSpec::spacing).collect();
        Ok(Self::assemble(axes, coords, spacings))
    }

    /// Builds a grid that adopts externally supplied node coordinates
    /// verbatim, validating monotonicity and uniform spacing.
    pub fn from_coords(coords: Vec<Vec<f64>>, boundaries: &[Boundary]) -> Result<Self> {
        if coords.is_empty() || coords.len() != boundaries.len() {
            return Err(Error::Shape(format!(
                "need one boundary per axis, got {} axes and {} boundaries",
                coords.len(),
                boundaries.len()
            )));
        }
        let mut axes = Vec::with_capacity(coords.len());
        let mut spacings = Vec::with_capacity(coords.len());
        for (axis_coords, &boundary) in coords.iter().zip(boundaries) {
            let m = axis_coords.len();
            if m < 3 {
                return Err(Error::Shape(format!(
                    "axis needs at least 3 nodes, got {m}"
                )));
            }
            if axis_coords.iter().any(|c| !c.is_finite()) {
                return Err(Error::Parse("non-finite axis coordinate".into()));
            }
            let first = axis_coords[0];
            let last = axis_coords[m - 1];
            if first >= last {
                return Err(Error::Shape("axis coordinates must increase".into()));
            }
            let h = (last - first) / (m - 1) as f64;
            let tol = (1e-8 * h).max(1e-12);
            for pair in axis_coords.windows(2) {
                let gap = pair[1] - pair[0];
                if (gap - h).abs() > tol {
                    return Err(Error::Shape(format!(
                        "axis spacing is not uniform: gap {gap:e} vs {h:e}"
                    )));
                }
            }
            let stop = match boundary {
                Boundary::Periodic => last + h,
                Boundary::Dirichlet => last,
            };
            axes.push(AxisSpec {
                start: first,
                stop,
                nodes: m,
                boundary,
            });
            spacings.push(h);
        }
        Ok(Self::assemble(axes, coords, spacings))
    }

    fn assemble(axes: Vec<AxisSpec>, coords: Vec<Vec<f64>>, spacings: Vec<f64>) -> Self {
        let k = axes.len();
        let mut strides = vec![1usize; k];
        for a in (0..k.saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * axes[a + 1].nodes;
        }
        let node_count = axes.iter().map(|a| a.nodes).product();
        Self {
            axes,
            coords,
            spacings,
            strides,
            node_count,
        }
    }

    /// Number of axes.
    pub fn k(&self) -> usize {
        self.axes.len()
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn axis(&self, axis: usize) -> &AxisSpec {
        &self.axes[axis]
    }

    pub fn nodes(&self, axis: usize) -> usize {
        self.axes[axis].nodes
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.spacings[axis]
    }

    pub fn boundary(&self, axis: usize) -> Boundary {
        self.axes[axis].boundary
    }

    /// The stored coordinates of one axis.
    pub fn axis_coords(&self, axis: usize) -> &[f64] {
        &self.coords[axis]
    }

    pub fn coord(&self, axis: usize, index: usize) -> f64 {
        self.coords[axis][index]
    }

    pub fn multi_index(&self, node: usize) -> Vec<usize> {
        let mut rest = node;
        self.strides
            .iter()
            .map(|&s| {
                let i = rest / s;
                rest %= s;
                i
            })
            .collect()
    }

    pub fn node_from_multi(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(&i, &s)| i * s).sum()
    }

    /// Coordinates of a node as a vector over the axes.
    pub fn node_coords(&self, node: usize) -> DVector<f64> {
        let multi = self.multi_index(node);
        DVector::from_iterator(
            self.k(),
            multi.iter().enumerate().map(|(a, &i)| self.coords[a][i]),
        )
    }

    /// Interior means at least one node away from every non-periodic edge;
    /// periodic axes have no edges.
    pub fn is_interior(&self, node: usize) -> bool {
        let multi = self.multi_index(node);
        self.axes.iter().enumerate().all(|(a, axis)| {
            axis.boundary == Boundary::Periodic || (multi[a] >= 1 && multi[a] + 1 < axis.nodes)
        })
    }

    /// Neighbor `step` nodes along an axis; periodic axes wrap, others return
    /// `None` past the edge.
    pub fn neighbor(&self, node: usize, axis: usize, step: isize) -> Option<usize> {
        let mut multi = self.multi_index(node);
        let m = self.axes[axis].nodes as isize;
        let moved = multi[axis] as isize + step;
        let idx = match self.axes[axis].boundary {
            Boundary::Periodic => moved.rem_euclid(m),
            Boundary::Dirichlet => {
                if moved < 0 || moved >= m {
                    return None;
                }
                moved
            }
        };
        multi[axis] = idx as usize;
        Some(self.node_from_multi(&multi))
    }
}

/// Second-order derivative sample of a per-node scalar along one axis:
/// central differences in the interior and at periodic edges, one-sided
/// stencils at non-periodic edges.
///
/// The 4-point edge stencils are chosen with the same leading error term as
/// the interior central stencil (+h^2/6 f'''), so the sampled derivative's
/// error varies smoothly across the grid and composite stencils built on top
/// of it (current divergences, nested residuals) stay uniformly second-order
/// even next to a boundary.  Axes with only 3 nodes fall back to the plain
/// one-sided 3-point formula.
fn derivative_along<F: Fn(usize) -> f64>(
    grid: &BaseGrid,
    axis: usize,
    node: usize,
    value: F,
) -> f64 {
    let h = grid.spacing(axis);
    let idx = grid.multi_index(node)[axis];
    let m = grid.nodes(axis);
    match grid.boundary(axis) {
        Boundary::Periodic => {
            let next = grid.neighbor(node, axis, 1).expect("periodic axes wrap");
            let prev = grid.neighbor(node, axis, -1).expect("periodic axes wrap");
            (value(next) - value(prev)) / (2.0 * h)
        }
        // Difference form (sums of f_k - f_0) so constant data cancels
        // exactly in floating point.
        Boundary::Dirichlet if idx == 0 => {
            let f0 = value(node);
            let d1 = value(grid.neighbor(node, axis, 1).expect("3 nodes minimum")) - f0;
            let d2 = value(grid.neighbor(node, axis, 2).expect("3 nodes minimum")) - f0;
            match grid.neighbor(node, axis, 3) {
                Some(n3) => (3.5 * d1 - 2.0 * d2 + 0.5 * (value(n3) - f0)) / h,
                None => (4.0 * d1 - d2) / (2.0 * h),
            }
        }
        Boundary::Dirichlet if idx + 1 == m => {
            let f0 = value(node);
            let d1 = value(grid.neighbor(node, axis, -1).expect("3 nodes minimum")) - f0;
            let d2 = value(grid.neighbor(node, axis, -2).expect("3 nodes minimum")) - f0;
            match grid.neighbor(node, axis, -3) {
                Some(n3) => -(3.5 * d1 - 2.0 * d2 + 0.5 * (value(n3) - f0)) / h,
                None => -(4.0 * d1 - d2) / (2.0 * h),
            }
        }
        Boundary::Dirichlet => {
            let next = grid.neighbor(node, axis, 1).expect("interior");
            let prev = grid.neighbor(node, axis, -1).expect("interior");
            (value(next) - value(prev)) / (2.0 * h)
        }
    }
}

/// A sampled section: field values psi^i and momenta psi^A_i at every grid
/// node.  Immutable once constructed.
#[derive(Clone, Debug, PartialEq)]
pub struct SectionGrid {
    grid: BaseGrid,
    dims: Dimensions,
    /// psi[node * n + i]
    psi: Vec<f64>,
    /// momenta[node * k * n + a * n + i]
    momenta: Vec<f64>,
}

impl SectionGrid {
    pub fn from_values(grid: BaseGrid, n: usize, psi: Vec<f64>, momenta: Vec<f64>) -> Result<Self> {
        let dims = Dimensions::new(grid.k(), n)?;
        let nodes = grid.node_count();
        if psi.len() != nodes * n {
            return Err(Error::Shape(format!(
                "psi needs {} values, got {}",
                nodes * n,
                psi.len()
            )));
        }
        if momenta.len() != nodes * dims.k * n {
            return Err(Error::Shape(format!(
                "momenta need {} values, got {}",
                nodes * dims.k * n,
                momenta.len()
            )));
        }
        Ok(Self {
            grid,
            dims,
            psi,
            momenta,
        })
    }

    /// Samples psi from a function of the base coordinates; momenta zeroed.
    pub fn from_psi(
        grid: BaseGrid,
        n: usize,
        psi_fn: impl Fn(&DVector<f64>) -> DVector<f64>,
    ) -> Result<Self> {
        let nodes = grid.node_count();
        let k = grid.k();
        let mut psi = vec![0.0; nodes * n];
        for node in 0..nodes {
            let value = psi_fn(&grid.node_coords(node));
            if value.len() != n {
                return Err(Error::Shape(format!(
                    "psi function returned {} components, expected {n}",
                    value.len()
                )));
            }
            psi[node * n..(node + 1) * n].copy_from_slice(value.as_slice());
        }
        Self::from_values(grid, n, psi, vec![0.0; nodes * k * n])
    }

    /// Samples both psi and momenta from functions of the base coordinates.
    pub fn from_functions(
        grid: BaseGrid,
        n: usize,
        psi_fn: impl Fn(&DVector<f64>) -> DVector<f64>,
        momenta_fn: impl Fn(&DVector<f64>) -> DMatrix<f64>,
    ) -> Result<Self> {
        let k = grid.k();
        let mut section = Self::from_psi(grid, n, psi_fn)?;
        for node in 0..section.grid.node_count() {
            let p = momenta_fn(&section.grid.node_coords(node));
            if p.nrows() != k || p.ncols() != n {
                return Err(Error::Shape(format!(
                    "momenta function returned {}x{}, expected {k}x{n}",
                    p.nrows(),
                    p.ncols()
                )));
            }
            for a in 0..k {
                for i in 0..n {
                    section.momenta[node * k * n + a * n + i] = p[(a, i)];
                }
            }
        }
        Ok(section)
    }

    pub fn grid(&self) -> &BaseGrid {
        &self.grid
    }

    pub fn dims(&self) -> Dimensions {
        self.dims
    }

    pub fn n(&self) -> usize {
        self.dims.n
    }

    pub fn psi_component(&self, node: usize, i: usize) -> f64 {
        self.psi[node * self.dims.n + i]
    }

    pub fn psi_at(&self, node: usize) -> DVector<f64> {
        let n = self.dims.n;
        DVector::from_column_slice(&self.psi[node * n..(node + 1) * n])
    }

    pub fn momentum_component(&self, node: usize, a: usize, i: usize) -> f64 {
        let (k, n) = (self.dims.k, self.dims.n);
        self.momenta[node * k * n + a * n + i]
    }

    pub fn momenta_at(&self, node: usize) -> DMatrix<f64> {
        let (k, n) = (self.dims.k, self.dims.n);
        DMatrix::from_row_slice(k, n, &self.momenta[node * k * n..(node + 1) * k * n])
    }

    /// The phase-space point over a node: t from the grid, q = psi, p =
    /// momenta.
    pub fn chart_point(&self, node: usize) -> ChartPoint {
        ChartPoint {
            t: self.grid.node_coords(node),
            q: self.psi_at(node),
            p: self.momenta_at(node),
        }
    }

    pub fn psi_raw(&self) -> &[f64] {
        &self.psi
    }

    pub fn momenta_raw(&self) -> &[f64] {
        &self.momenta
    }
}

/// Fills momenta from the constitutive relation psi^A_i = (g_A)_{ij} times
/// the grid derivative of psi^j along axis A, with the metric evaluated at
/// each node's q.
pub fn momenta_from_section(
    section: &SectionGrid,
    hamiltonian: &QuadraticHamiltonian,
) -> Result<SectionGrid> {
    let dims = section.dims();
    if hamiltonian.dims() != dims {
        return Err(Error::Shape(
            "section and Hamiltonian dimensions differ".into(),
        ));
    }
    let (k, n) = (dims.k, dims.n);
    let grid = section.grid();
    let mut momenta = vec![0.0; grid.node_count() * k * n];
    for node in 0..grid.node_count() {
        let g = hamiltonian.metrics_at(&section.psi_at(node));
        for a in 0..k {
            let mut dpsi = DVector::zeros(n);
            for j in 0..n {
                dpsi[j] = derivative_along(grid, a, node, |m| section.psi_component(m, j));
            }
            let pa = &g[a] * &dpsi;
            for i in 0..n {
                momenta[node * k * n + a * n + i] = pa[i];
            }
        }
    }
    SectionGrid::from_values(grid.clone(), n, section.psi_raw().to_vec(), momenta)
}

/// Initial data for the second-order evolution.
#[derive(Clone)]
pub enum InitialData {
    /// psi and its time derivative at the initial level, as functions of the
    /// spatial coordinates.
    ValueAndVelocity {
        value: ConfigFn<DVector<f64>>,
        velocity: ConfigFn<DVector<f64>>,
    },
    /// Explicit node values on the first two time levels (spatial-node major,
    /// component minor).  The second level seeds the scheme directly, which
    /// makes runs exactly restartable and time-reversible.
    TwoLevels { first: Vec<f64>, second: Vec<f64> },
}

impl InitialData {
    pub fn from_functions(
        value: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        velocity: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        Self::ValueAndVelocity {
            value: Arc::new(value),
            velocity: Arc::new(velocity),
        }
    }

    pub fn two_levels(first: Vec<f64>, second: Vec<f64>) -> Self {
        Self::TwoLevels { first, second }
    }
}

/// Spatial bookkeeping for the march: the sub-grid over axes 1..k.
struct SpatialLayout {
    total: usize,
    coords: Vec<DVector<f64>>,
    /// neighbors[axis][node] = (previous, next); `None` past a hard edge.
    neighbors: Vec<Vec<(Option<usize>, Option<usize>)>>,
    /// Nodes on a non-periodic spatial edge are held fixed by the march.
    held: Vec<bool>,
    spacings: Vec<f64>,
}

impl SpatialLayout {
    fn build(grid: &BaseGrid) -> Self {
        let spatial_axes = grid.k() - 1;
        let counts: Vec<usize> = (1..grid.k()).map(|a| grid.nodes(a)).collect();
        let total = counts.iter().product::<usize>().max(1);
        let mut strides = vec![1usize; spatial_axes];
        for a in (0..spatial_axes.saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * counts[a + 1];
        }
        let multi = |s: usize| -> Vec<usize> {
            let mut rest = s;
            strides
                .iter()
                .map(|&st| {
                    let i = rest / st;
                    rest %= st;
                    i
                })
                .collect()
        };
        let mut coords = Vec::with_capacity(total);
        let mut held = vec![false; total];
        for (s, held_here) in held.iter_mut().enumerate() {
            let mi = multi(s);
            coords.push(DVector::from_iterator(
                spatial_axes,
                mi.iter().enumerate().map(|(a, &i)| grid.coord(a + 1, i)),
            ));
            *held_here = mi.iter().enumerate().any(|(a, &i)| {
                grid.boundary(a + 1) == Boundary::Dirichlet && (i == 0 || i + 1 == counts[a])
            });
        }
        let mut neighbors = Vec::with_capacity(spatial_axes);
        for a in 0..spatial_axes {
            let mut per_axis = Vec::with_capacity(total);
            for s in 0..total {
                let mi = multi(s);
                let shift = |step: isize| -> Option<usize> {
                    let m = counts[a] as isize;
                    let moved = mi[a] as isize + step;
                    let idx = match grid.boundary(a + 1) {
                        Boundary::Periodic => moved.rem_euclid(m),
                        Boundary::Dirichlet => {
                            if moved < 0 || moved >= m {
                                return None;
                            }
                            moved
                        }
                    };
                    let mut shifted = mi.clone();
                    shifted[a] = idx as usize;
                    Some(shifted.iter().zip(&strides).map(|(&i, &st)| i * st).sum())
                };
                per_axis.push((shift(-1), shift(1)));
            }
            neighbors.push(per_axis);
        }
        let spacings = (1..grid.k()).map(|a| grid.spacing(a)).collect();
        Self {
            total,
            coords,
            neighbors,
            held,
            spacings,
        }
    }
}

/// Integrates the second-order field equations of a constant-metric quadratic
/// Hamiltonian by explicit leapfrog along axis 0:
/// g_1 d^2 psi/dt^2 = -dV/dq - sum_a g_{1+a} d^2 psi/dx_a^2.
///
/// The evolution metric g_1 must be positive-definite and every -g_{1+a}
/// positive-semidefinite (the hyperbolic sign pattern); other families are
/// refused.  Spatial Dirichlet boundary nodes are held at their initial
/// values.  The time step must satisfy the von Neumann bound
/// dt^2 sum_a lambda_max(g_1^{-1}(-g_{1+a})) / dx_a^2 <= 1.
pub fn integrate_quadratic(
    hamiltonian: &QuadraticHamiltonian,
    grid: &BaseGrid,
    initial: &InitialData,
) -> Result<SectionGrid> {
    let dims = hamiltonian.dims();
    if grid.k() != dims.k {
        return Err(Error::Shape(format!(
            "grid has {} axes but the Hamiltonian needs k = {}",
            grid.k(),
            dims.k
        )));
    }
    if !hamiltonian.metrics().is_constant() {
        return Err(Error::Unsupported(
            "integration supports constant metric families only; use the residual \
             diagnostics for q-dependent metrics"
                .into(),
        ));
    }
    if grid.boundary(0) != Boundary::Dirichlet {
        return Err(Error::Unsupported(
            "the evolution axis (axis 0) cannot be periodic".into(),
        ));
    }
    let n = dims.n;
    let metrics = hamiltonian.metrics_at(&DVector::zeros(n));
    let g1 = metrics[0].clone();
    let chol = Cholesky::new(g1).ok_or_else(|| {
        Error::Unsupported("the evolution metric g_1 must be positive-definite".into())
    })?;
    let g1_inv = chol.inverse();
    let l = chol.l();
    let mut cfl_sum = 0.0;
    for (a, metric) in metrics.iter().enumerate().skip(1) {
        let s = -metric;
        let y = l
            .solve_lower_triangular(&s)
            .ok_or_else(|| Error::Singular("triangular solve failed".into()))?;
        let m = l
            .solve_lower_triangular(&y.transpose())
            .ok_or_else(|| Error::Singular("triangular solve failed".into()))?;
        let eigenvalues = m.symmetric_eigen().eigenvalues;
        let scale = s.amax().max(1.0);
        if eigenvalues.min() < -1e-10 * scale {
            return Err(Error::Unsupported(format!(
                "spatial metric block {a} must make -g_{{1+a}} positive-semidefinite \
                 (found eigenvalue {:e})",
                eigenvalues.min()
            )));
        }
        cfl_sum += eigenvalues.max().max(0.0) / (grid.spacing(a) * grid.spacing(a));
    }
    let dt = grid.spacing(0);
    if dt * dt * cfl_sum > 1.0 + CFL_SLACK {
        return Err(Error::Cfl(format!(
            "time step {dt:e} violates the stability bound {:e}",
            (1.0 / cfl_sum).sqrt()
        )));
    }

    let spatial = SpatialLayout::build(grid);
    let nt = grid.nodes(0);
    let total = spatial.total;
    let mut psi = vec![0.0; grid.node_count() * n];

    // Acceleration g_1^{-1}(-dV/dq - sum_a g_{1+a} D^2_a psi) at marched
    // nodes of one level; held nodes get zero.
    let acceleration = |level: &[f64], t_value: f64, out: &mut [f64]| {
        for s in 0..total {
            if spatial.held[s] {
                out[s * n..(s + 1) * n].fill(0.0);
                continue;
            }
            let q = DVector::from_column_slice(&level[s * n..(s + 1) * n]);
            let mut t_full = DVector::zeros(dims.k);
            t_full[0] = t_value;
            for (a, c) in spatial.coords[s].iter().enumerate() {
                t_full[a + 1] = *c;
            }
            let (_, dv_dq) =
                hamiltonian
                    .potential()
                    .partials_at(&t_full, &q, hamiltonian.fd_step());
            let mut rhs = -dv_dq;
            for a in 0..dims.k - 1 {
                let (prev, next) = spatial.neighbors[a][s];
                let (prev, next) = (
                    prev.expect("marched nodes have neighbors"),
                    next.expect("marched nodes have neighbors"),
                );
                let h2 = spatial.spacings[a] * spatial.spacings[a];
                let mut d2 = DVector::zeros(n);
                for j in 0..n {
                    d2[j] =
                        (level[next * n + j] - 2.0 * level[s * n + j] + level[prev * n + j]) / h2;
                }
                rhs -= &metrics[a + 1] * d2;
            }
            let acc = &g1_inv * rhs;
            out[s * n..(s + 1) * n].copy_from_slice(acc.as_slice());
        }
    };

    match initial {
        InitialData::ValueAndVelocity { value, velocity } => {
            let mut velocities = vec![0.0; total * n];
            for s in 0..total {
                let v = value(&spatial.coords[s]);
                let w = velocity(&spatial.coords[s]);
                if v.len() != n || w.len() != n {
                    return Err(Error::Shape(format!(
                        "initial data functions must return {n} components"
                    )));
                }
                psi[s * n..(s + 1) * n].copy_from_slice(v.as_slice());
                velocities[s * n..(s + 1) * n].copy_from_slice(w.as_slice());
            }
            // Second-order accurate start: psi^1 = psi^0 + dt v + dt^2/2 a^0.
            let mut acc = vec![0.0; total * n];
            let (level0, later) = psi.split_at_mut(total * n);
            acceleration(level0, grid.coord(0, 0), &mut acc);
            for s in 0..total {
                for i in 0..n {
                    later[s * n + i] = if spatial.held[s] {
                        level0[s * n + i]
                    } else {
                        level0[s * n + i]
                            + dt * velocities[s * n + i]
                            + 0.5 * dt * dt * acc[s * n + i]
                    };
                }
            }
        }
        InitialData::TwoLevels { first, second } => {
            if first.len() != total * n || second.len() != total * n {
                return Err(Error::Shape(format!(
                    "two-level initial data needs {} values per level, got {} and {}",
                    total * n,
                    first.len(),
                    second.len()
                )));
            }
            psi[..total * n].copy_from_slice(first);
            psi[total * n..2 * total * n].copy_from_slice(second);
        }
    }

    let mut acc = vec![0.0; total * n];
    for m in 1..nt - 1 {
        let (done, rest) = psi.split_at_mut((m + 1) * total * n);
        let current = &done[m * total * n..];
        let previous = &done[(m - 1) * total * n..m * total * n];
        acceleration(current, grid.coord(0, m), &mut acc);
        let next = &mut rest[..total * n];
        for s in 0..total {
            for i in 0..n {
                next[s * n + i] = if spatial.held[s] {
                    current[s * n + i]
                } else {
                    2.0 * current[s * n + i] - previous[s * n + i] + dt * dt * acc[s * n + i]
                };
            }
        }
    }

    let section = SectionGrid::from_values(
        grid.clone(),
        n,
        psi,
        vec![0.0; grid.node_count() * dims.k * n],
    )?;
    momenta_from_section(&section, hamiltonian)
}

/// Parameters of the scalar wave system: evolution metric [sigma], spatial
/// metric blocks [-tau], no potential, so the field equation is
/// sigma d^2 psi/dt^2 = tau sum_a d^2 psi/dx_a^2 with speed sqrt(tau/sigma).
#[derive(Clone)]
pub struct WaveParams {
    sigma: f64,
    tau: f64,
    spatial_dims: usize,
    initial_displacement: ConfigFn<f64>,
    initial_velocity: ConfigFn<f64>,
}

impl WaveParams {
    pub fn new(
        sigma: f64,
        tau: f64,
        spatial_dims: usize,
        initial_displacement: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        initial_velocity: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let coefficients_ok = sigma.is_finite() && tau.is_finite() && sigma > 0.0 && tau > 0.0;
        if !coefficients_ok {
            return Err(Error::Shape(format!(
                "wave coefficients must be positive, got sigma={sigma}, tau={tau}"
            )));
        }
        if spatial_dims == 0 || spatial_dims > 3 {
            return Err(Error::Dimension(format!(
                "spatial dimension must be 1, 2 or 3, got {spatial_dims}"
            )));
        }
        Ok(Self {
            sigma,
            tau,
            spatial_dims,
            initial_displacement: Arc::new(initial_displacement),
            initial_velocity: Arc::new(initial_velocity),
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn spatial_dims(&self) -> usize {
        self.spatial_dims
    }

    /// Propagation speed sqrt(tau/sigma).
    pub fn speed(&self) -> f64 {
        (self.tau / self.sigma).sqrt()
    }

    pub fn dims(&self) -> Dimensions {
        Dimensions {
            k: self.spatial_dims + 1,
            n: 1,
        }
    }

    /// The quadratic Hamiltonian whose field equations are this wave system.
    pub fn hamiltonian(&self) -> Result<QuadraticHamiltonian> {
        let mut metrics = vec![DMatrix::from_element(1, 1, self.sigma)];
        for _ in 0..self.spatial_dims {
            metrics.push(DMatrix::from_element(1, 1, -self.tau));
        }
        QuadraticHamiltonian::new(
            self.dims(),
            crate::hamiltonian::MetricFamily::constant(metrics),
            crate::hamiltonian::Potential::zero(),
        )
    }
}

/// Integrates the wave system on the grid.  Checks the wave Courant number
/// speed * dt / min(dx) <= 1 before delegating to the generic quadratic
/// integrator (which enforces its own, equivalent-in-1+1D, bound).
pub fn integrate_wave(params: &WaveParams, grid: &BaseGrid) -> Result<SectionGrid> {
    let dims = params.dims();
    if grid.k() != dims.k {
        return Err(Error::Shape(format!(
            "grid has {} axes but {} spatial dimensions need {}",
            grid.k(),
            params.spatial_dims,
            dims.k
        )));
    }
    let dt = grid.spacing(0);
    let min_dx = (1..grid.k())
        .map(|a| grid.spacing(a))
        .fold(f64::INFINITY, f64::min);
    let courant = params.speed() * dt / min_dx;
    if courant > 1.0 + CFL_SLACK {
        return Err(Error::Cfl(format!(
            "Courant number {courant:.6} exceeds 1 (speed {:.6}, dt {dt:e}, min dx {min_dx:e})",
            params.speed()
        )));
    }
    let hamiltonian = params.hamiltonian()?;
    let displacement = self_clone(&params.initial_displacement);
    let velocity = self_clone(&params.initial_velocity);
    let initial = InitialData::from_functions(
        move |x| DVector::from_element(1, displacement(x)),
        move |x| DVector::from_element(1, velocity(x)),
    );
    integrate_quadratic(&hamiltonian, grid, &initial)
}

fn self_clone(f: &ConfigFn<f64>) -> ConfigFn<f64> {
    Arc::clone(f)
}

/// Smallest time-axis node count that keeps speed * dt / dx at or below the
/// requested Courant number over a span.
pub fn cfl_time_nodes(span: f64, courant: f64, speed: f64, dx: f64) -> usize {
    ((span * speed / (courant * dx)).ceil() as usize + 1).max(3)
}

/// A scalar field defined on the interior nodes of a grid.
#[derive(Clone, Debug)]
pub struct InteriorField {
    values: Vec<Option<f64>>,
}

impl InteriorField {
    fn new(values: Vec<Option<f64>>) -> Self {
        Self { values }
    }

    pub fn node_count(&self) -> usize {
        self.values.len()
    }

    pub fn value(&self, node: usize) -> Option<f64> {
        self.values[node]
    }

    pub fn interior_count(&self) -> usize {
        self.values.iter().flatten().count()
    }

    pub fn iter_interior(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(node, v)| v.map(|value| (node, value)))
    }

    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Discrete divergence of a current along the section: evaluates F at every
/// node's phase-space point and sums central differences of F^A along axis A
/// over the interior.
pub fn divergence(current: &ConservedCurrent, section: &SectionGrid) -> Result<InteriorField> {
    let dims = section.dims();
    if current.dims() != dims {
        return Err(Error::Shape("current and section dimensions differ".into()));
    }
    let grid = section.grid();
    let nodes = grid.node_count();
    let mut f_values = vec![0.0; nodes * dims.k];
    for node in 0..nodes {
        let f = current.components(&section.chart_point(node))?;
        if f.len() != dims.k {
            return Err(Error::Shape(format!(
                "current returned {} components, expected {}",
                f.len(),
                dims.k
            )));
        }
        f_values[node * dims.k..(node + 1) * dims.k].copy_from_slice(f.as_slice());
    }
    let mut out = vec![None; nodes];
    for (node, slot) in out.iter_mut().enumerate() {
        if !grid.is_interior(node) {
            continue;
        }
        let mut div = 0.0;
        for a in 0..dims.k {
            div += derivative_along(grid, a, node, |m| f_values[m * dims.k + a]);
        }
        *slot = Some(div);
    }
    Ok(InteriorField::new(out))
}

/// Residuals of the first-order field equations on the section's interior:
/// the force balance max_i |dH/dq^i + sum_A D_A psi^A_i| and the velocity
/// relation max_{A,i} |dH/dp^A_i - D_A psi^i|.
pub fn hdw_residual_on_section(
    hamiltonian: &dyn Hamiltonian,
    section: &SectionGrid,
) -> Result<(InteriorField, InteriorField)> {
    let dims = section.dims();
    if hamiltonian.dims() != dims {
        return Err(Error::Shape(
            "section and Hamiltonian dimensions differ".into(),
        ));
    }
    let grid = section.grid();
    let nodes = grid.node_count();
    let mut force = vec![None; nodes];
    let mut velocity = vec![None; nodes];
    for node in 0..nodes {
        if !grid.is_interior(node) {
            continue;
        }
        let grad = hamiltonian.gradient(&section.chart_point(node));
        let mut worst_force = 0.0_f64;
        for i in 0..dims.n {
            let mut acc = grad.aq[i];
            for a in 0..dims.k {
                acc += derivative_along(grid, a, node, |m| section.momentum_component(m, a, i));
            }
            worst_force = worst_force.max(acc.abs());
        }
        let mut worst_velocity = 0.0_f64;
        for a in 0..dims.k {
            for i in 0..dims.n {
                let d = derivative_along(grid, a, node, |m| section.psi_component(m, i));
                worst_velocity = worst_velocity.max((grad.ap[(a, i)] - d).abs());
            }
        }
        force[node] = Some(worst_force);
        velocity[node] = Some(worst_velocity);
    }
    Ok((InteriorField::new(force), InteriorField::new(velocity)))
}

/// The k-tangent tuple a section induces at an interior node: the A-th vector
/// has unit t^A component and carries the grid derivatives of psi and of the
/// momenta along axis A.
pub fn reconstruct_from_section(section: &SectionGrid, node: usize) -> Result<KTangent> {
    let dims = section.dims();
    let grid = section.grid();
    if node >= grid.node_count() {
        return Err(Error::Index {
            what: "grid node",
            index: node,
            size: grid.node_count(),
        });
    }
    if !grid.is_interior(node) {
        return Err(Error::BoundaryNode(format!(
            "node {node} touches a non-periodic boundary; the central stencil needs interior nodes"
        )));
    }
    let mut vectors = Vec::with_capacity(dims.k);
    for a in 0..dims.k {
        let mut v = TangentVector::zero(dims);
        v.vt[a] = 1.0;
        for i in 0..dims.n {
            v.vq[i] = derivative_along(grid, a, node, |m| section.psi_component(m, i));
            for b in 0..dims.k {
                v.vp[(b, i)] =
                    derivative_along(grid, a, node, |m| section.momentum_component(m, b, i));
            }
        }
        vectors.push(v);
    }
    KTangent::new(vectors)
}

fn expect_scalar_wave(section: &SectionGrid) -> Result<()> {
    if section.n() != 1 {
        return Err(Error::Shape(format!(
            "wave residuals need a scalar field, got n = {}",
            section.n()
        )));
    }
    Ok(())
}

/// Wave-operator residual built from nested first differences:
/// sigma D_t(D_t psi) - tau sum_a D_a(D_a psi), with the same one-sided
/// boundary policy as [`momenta_from_section`].  On a section whose momenta
/// come from that routine with wave metrics, this equals the divergence of
/// the current (p^1, ..., p^k) up to rounding.
pub fn wave_residual_nested(section: &SectionGrid, sigma: f64, tau: f64) -> Result<InteriorField> {
    expect_scalar_wave(section)?;
    let grid = section.grid();
    let nodes = grid.node_count();
    let k = grid.k();
    let mut first = vec![0.0; nodes * k];
    for node in 0..nodes {
        for a in 0..k {
            first[node * k + a] = derivative_along(grid, a, node, |m| section.psi_component(m, 0));
        }
    }
    let mut out = vec![None; nodes];
    for (node, slot) in out.iter_mut().enumerate() {
        if !grid.is_interior(node) {
            continue;
        }
        let mut r = sigma * derivative_along(grid, 0, node, |m| first[m * k]);
        for a in 1..k {
            r -= tau * derivative_along(grid, a, node, |m| first[m * k + a]);
        }
        *slot = Some(r);
    }
    Ok(InteriorField::new(out))
}

/// Wave-operator residual built from compact three-point second differences:
/// sigma D^2_t psi - tau sum_a D^2_a psi on interior nodes.  The leapfrog
/// update satisfies this identity by construction, so on scheme output it
/// vanishes to rounding; use [`wave_residual_nested`] for a nondegenerate
/// accuracy gauge there.
pub fn wave_residual_compact(section: &SectionGrid, sigma: f64, tau: f64) -> Result<InteriorField> {
    expect_scalar_wave(section)?;
    let grid = section.grid();
    let nodes = grid.node_count();
    let mut out = vec![None; nodes];
    for (node, slot) in out.iter_mut().enumerate() {
        if !grid.is_interior(node) {
            continue;
        }
        let centre = section.psi_component(node, 0);
        let second = |axis: usize| -> f64 {
            let next = grid.neighbor(node, axis, 1).expect("interior node");
            let prev = grid.neighbor(node, axis, -1).expect("interior node");
            let h = grid.spacing(axis);
            (section.psi_component(next, 0) - 2.0 * centre + section.psi_component(prev, 0))
                / (h * h)
        };
        let mut r = sigma * second(0);
        for a in 1..grid.k() {
            r -= tau * second(a);
        }
        *slot = Some(r);
    }
    Ok(InteriorField::new(out))
}

/// Writes the section as CSV: header t1..tk,q1..qn,p{A}_{i}, one row per node
/// in storage order, values in shortest round-trip decimal form.
pub fn write_csv(section: &SectionGrid, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(csv_header(section.dims()).as_bytes())?;
    w.write_all(b"\n")?;
    let dims = section.dims();
    let grid = section.grid();
    let mut row = String::new();
    for node in 0..grid.node_count() {
        row.clear();
        let coords = grid.node_coords(node);
        for a in 0..dims.k {
            push_value(&mut row, coords[a]);
        }
        for i in 0..dims.n {
            push_value(&mut row, section.psi_component(node, i));
        }
        for a in 0..dims.k {
            for i in 0..dims.n {
                push_value(&mut row, section.momentum_component(node, a, i));
            }
        }
        row.push('\n');
        w.write_all(row.as_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn csv_header(dims: Dimensions) -> String {
    let mut names = Vec::with_capacity(dims.phase_dim());
    for a in 1..=dims.k {
        names.push(format!("t{a}"));
    }
    for i in 1..=dims.n {
        names.push(format!("q{i}"));
    }
    for a in 1..=dims.k {
        for i in 1..=dims.n {
            names.push(format!("p{a}_{i}"));
        }
    }
    names.join(",")
}

fn push_value(row: &mut String, value: f64) {
    use std::fmt::Write;
    if !row.is_empty() {
        row.push(',');
    }
    write!(row, "{value}").expect("writing to a String cannot fail");
}

/// Reads a section written by [`write_csv`].  Axis coordinates are adopted
/// verbatim (validated monotone and uniformly spaced), so writing the result
/// again reproduces the file byte for byte.  Boundary kinds are not recorded
/// in the file and must be supplied.
pub fn read_csv(path: &Path, boundaries: &[Boundary]) -> Result<SectionGrid> {
    let file = File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty CSV file".into()))??;
    let (k, n) = parse_header(&header)?;
    if boundaries.len() != k {
        return Err(Error::Shape(format!(
            "need {k} boundary kinds, got {}",
            boundaries.len()
        )));
    }
    let width = k + n + k * n;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line_no, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(Error::Parse(format!(
                "row {} has {} fields, expected {width}",
                line_no + 2,
                fields.len()
            )));
        }
        let mut row = Vec::with_capacity(width);
        for field in fields {
            let v: f64 = field.parse().map_err(|_| {
                Error::Parse(format!("row {}: invalid number {field:?}", line_no + 2))
            })?;
            if !v.is_finite() {
                return Err(Error::Parse(format!(
                    "row {}: non-finite value {field:?}",
                    line_no + 2
                )));
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse("CSV contains no data rows".into()));
    }

    // Recover per-axis coordinates as the sorted distinct values per column.
    let mut coords: Vec<Vec<f64>> = Vec::with_capacity(k);
    for a in 0..k {
        let mut values: Vec<f64> = rows.iter().map(|r| r[a]).collect();
        values.sort_by(|x, y| x.partial_cmp(y).expect("values are finite"));
        values.dedup();
        coords.push(values);
    }
    let expected: usize = coords.iter().map(Vec::len).product();
    if expected != rows.len() {
        return Err(Error::Parse(format!(
            "{} rows do not tile the {} grid nodes implied by the coordinates",
            rows.len(),
            expected
        )));
    }
    let grid = BaseGrid::from_coords(coords, boundaries)?;
    let mut psi = vec![0.0; rows.len() * n];
    let mut momenta = vec![0.0; rows.len() * k * n];
    for (node, row) in rows.iter().enumerate() {
        let reference = grid.node_coords(node);
        for a in 0..k {
            if row[a] != reference[a] {
                return Err(Error::Parse(format!(
                    "row {} is out of node order: axis {a} coordinate {} where the \
                     row-major layout expects {}",
                    node + 2,
                    row[a],
                    reference[a]
                )));
            }
        }
        psi[node * n..(node + 1) * n].copy_from_slice(&row[k..k + n]);
        momenta[node * k * n..(node + 1) * k * n].copy_from_slice(&row[k + n..]);
    }
    SectionGrid::from_values(grid, n, psi, momenta)
}

fn parse_header(header: &str) -> Result<(usize, usize)> {
    let names: Vec<&str> = header.split(',').collect();
    let k = names.iter().take_while(|s| s.starts_with('t')).count();
    let n = names
        .iter()
        .skip(k)
        .take_while(|s| s.starts_with('q'))
        .count();
    if k == 0 || n == 0 {
        return Err(Error::Parse(format!("unrecognized CSV header {header:?}")));
    }
    let dims = Dimensions::new(k, n)?;
    let expected = csv_header(dims);
    if header != expected {
        return Err(Error::Parse(format!(
            "CSV header {header:?} does not match the expected layout {expected:?}"
        )));
    }
    Ok((k, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{MetricFamily, Potential};

    fn grid_1p1(t_stop: f64, nt: usize, x_stop: f64, nx: usize, spatial: Boundary) -> BaseGrid {
        BaseGrid::new(vec![
            AxisSpec::new(0.0, t_stop, nt, Boundary::Dirichlet).unwrap(),
            AxisSpec::new(0.0, x_stop, nx, spatial).unwrap(),
        ])
        .unwrap()
    }

    fn unit_metrics_2() -> QuadraticHamiltonian {
        QuadraticHamiltonian::new(
            Dimensions::new(2, 1).unwrap(),
            MetricFamily::constant(vec![
                DMatrix::from_element(1, 1, 1.0),
                DMatrix::from_element(1, 1, 1.0),
            ]),
            Potential::zero(),
        )
        .unwrap()
    }

    #[test]
    fn axis_and_grid_validation() {
        assert!(AxisSpec::new(0.0, 1.0, 2, Boundary::Periodic).is_err());
        assert!(AxisSpec::new(1.0, 1.0, 5, Boundary::Periodic).is_err());
        assert!(AxisSpec::new(0.0, f64::NAN, 5, Boundary::Periodic).is_err());
        let periodic = AxisSpec::new(0.0, 1.0, 4, Boundary::Periodic).unwrap();
        assert_eq!(periodic.spacing(), 0.25);
        let dirichlet = AxisSpec::new(0.0, 1.0, 5, Boundary::Dirichlet).unwrap();
        assert_eq!(dirichlet.spacing(), 0.25);

        assert!(BaseGrid::from_coords(vec![vec![0.0, 0.1, 0.3]], &[Boundary::Dirichlet]).is_err());
        assert!(BaseGrid::from_coords(
            vec![vec![0.0, 0.1, 0.2]],
            &[Boundary::Dirichlet, Boundary::Dirichlet]
        )
        .is_err());
        let adopted =
            BaseGrid::from_coords(vec![vec![0.5, 1.0, 1.5, 2.0]], &[Boundary::Periodic]).unwrap();
        assert_eq!(adopted.axis(0).stop, 2.5);
        assert_eq!(adopted.axis_coords(0), &[0.5, 1.0, 1.5, 2.0]);
    }

    #[test]
    fn node_indexing_round_trips_and_boundary_logic() {
        let grid = BaseGrid::new(vec![
            AxisSpec::new(0.0, 1.0, 3, Boundary::Dirichlet).unwrap(),
            AxisSpec::new(0.0, 1.0, 4, Boundary::Periodic).unwrap(),
            AxisSpec::new(0.0, 1.0, 5, Boundary::Dirichlet).unwrap(),
        ])
        .unwrap();
        assert_eq!(grid.node_count(), 60);
        for node in 0..grid.node_count() {
            assert_eq!(grid.node_from_multi(&grid.multi_index(node)), node);
        }
        // Axis 0 slowest: one time level is contiguous.
        assert_eq!(grid.multi_index(20), vec![1, 0, 0]);
        // Periodic wrap and hard edges.
        let node = grid.node_from_multi(&[1, 3, 2]);
        let wrapped = grid.neighbor(node, 1, 1).unwrap();
        assert_eq!(grid.multi_index(wrapped), vec![1, 0, 2]);
        assert!(grid
            .neighbor(grid.node_from_multi(&[0, 0, 0]), 0, -1)
            .is_none());
        assert!(grid
            .neighbor(grid.node_from_multi(&[2, 0, 4]), 2, 1)
            .is_none());
        // Interior requires distance from every non-periodic edge only.
        assert!(grid.is_interior(grid.node_from_multi(&[1, 0, 2])));
        assert!(!grid.is_interior(grid.node_from_multi(&[0, 1, 2])));
        assert!(!grid.is_interior(grid.node_from_multi(&[1, 1, 4])));
    }

    #[test]
    fn momenta_are_exact_on_bilinear_data() {
        let grid = grid_1p1(1.0, 5, 2.0, 5, Boundary::Dirichlet);
        let h = unit_metrics_2();
        let section = SectionGrid::from_psi(grid, 1, |t: &DVector<f64>| {
            DVector::from_element(1, t[0] * t[1])
        })
        .unwrap();
        let filled = momenta_from_section(&section, &h).unwrap();
        for node in 0..filled.grid().node_count() {
            let coords = filled.grid().node_coords(node);
            assert!(
                (filled.momentum_component(node, 0, 0) - coords[1]).abs() <= 1e-12,
                "time momentum of t*x must be x everywhere, including one-sided edges"
            );
            assert!((filled.momentum_component(node, 1, 0) - coords[0]).abs() <= 1e-12);
        }
    }

    #[test]
    fn momenta_of_constant_section_vanish_exactly() {
        let grid = grid_1p1(1.0, 4, 1.0, 6, Boundary::Periodic);
        let h = unit_metrics_2();
        let section =
            SectionGrid::from_psi(grid, 1, |_t: &DVector<f64>| DVector::from_element(1, 2.75))
                .unwrap();
        let filled = momenta_from_section(&section, &h).unwrap();
        assert!(filled.momenta_raw().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wave_momenta_follow_constitutive_relations() {
        let (sigma, tau) = (2.0, 0.5);
        let params = WaveParams::new(sigma, tau, 1, |_x| 0.0, |_x| 0.0).unwrap();
        let h = params.hamiltonian().unwrap();
        let grid = grid_1p1(1.0, 21, std::f64::consts::TAU, 64, Boundary::Periodic);
        let section = SectionGrid::from_psi(grid, 1, |t: &DVector<f64>| {
            DVector::from_element(1, (t[1] - t[0]).sin())
        })
        .unwrap();
        let filled = momenta_from_section(&section, &h).unwrap();
        let band = 1e-2; // second-order stencils on these spacings
        for node in 0..filled.grid().node_count() {
            let c = filled.grid().node_coords(node);
            let psi_t = -(c[1] - c[0]).cos();
            let psi_x = (c[1] - c[0]).cos();
            assert!((filled.momentum_component(node, 0, 0) - sigma * psi_t).abs() < band);
            assert!((filled.momentum_component(node, 1, 0) + tau * psi_x).abs() < band);
        }
    }

    #[test]
    fn zero_initial_data_stays_identically_zero() {
        let params = WaveParams::new(1.0, 1.0, 1, |_x| 0.0, |_x| 0.0).unwrap();
        let grid = grid_1p1(1.0, 12, 1.0, 8, Boundary::Periodic);
        let section = integrate_wave(&params, &grid).unwrap();
        assert!(section.psi_raw().iter().all(|&v| v == 0.0));
        assert!(section.momenta_raw().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn free_motion_is_linear_in_time() {
        // k = 1: no spatial axes, no potential, so psi(t) = a + b t.
        let dims = Dimensions::new(1, 2).unwrap();
        let h = QuadraticHamiltonian::new(
            dims,
            MetricFamily::constant(vec![DMatrix::identity(2, 2)]),
            Potential::zero(),
        )
        .unwrap();
        let grid = BaseGrid::new(vec![
            AxisSpec::new(0.0, 1.0, 11, Boundary::Dirichlet).unwrap()
        ])
        .unwrap();
        let (a, b) = (
            DVector::from_vec(vec![0.3, -1.1]),
            DVector::from_vec(vec![2.0, 0.5]),
        );
        let (a2, b2) = (a.clone(), b.clone());
        let initial = InitialData::from_functions(move |_x| a2.clone(), move |_x| b2.clone());
        let section = integrate_quadratic(&h, &grid, &initial).unwrap();
        for node in 0..grid.node_count() {
            let t = grid.coord(0, node);
            for i in 0..2 {
                let expected = a[i] + b[i] * t;
                assert!(
                    (section.psi_component(node, i) - expected).abs() <= 1e-12,
                    "free motion must stay linear"
                );
            }
        }
    }

    #[test]
    fn harmonic_oscillator_tracks_closed_form_with_bounded_energy() {
        let dims = Dimensions::new(1, 1).unwrap();
        let h = QuadraticHamiltonian::new(
            dims,
            MetricFamily::constant(vec![DMatrix::from_element(1, 1, 1.0)]),
            Potential::new(|_t: &DVector<f64>, q: &DVector<f64>| 0.5 * q[0] * q[0]).with_partials(
                |t: &DVector<f64>, q: &DVector<f64>| (DVector::zeros(t.len()), q.clone()),
            ),
        )
        .unwrap();
        let nt = 629;
        let grid = BaseGrid::new(vec![AxisSpec::new(
            0.0,
            std::f64::consts::TAU,
            nt,
            Boundary::Dirichlet,
        )
        .unwrap()])
        .unwrap();
        let initial = InitialData::from_functions(
            |_x: &DVector<f64>| DVector::from_element(1, 1.0),
            |_x: &DVector<f64>| DVector::zeros(1),
        );
        let section = integrate_quadratic(&h, &grid, &initial).unwrap();
        let mut worst = 0.0_f64;
        for node in 0..nt {
            let t = grid.coord(0, node);
            worst = worst.max((section.psi_component(node, 0) - t.cos()).abs());
        }
        assert!(worst <= 1e-3, "oscillator error {worst:e}");
        // Discrete energy with the reconstructed momentum stays near 1/2.
        let mut drift = 0.0_f64;
        for node in 1..nt - 1 {
            let p = section.momentum_component(node, 0, 0);
            let q = section.psi_component(node, 0);
            drift = drift.max((0.5 * p * p + 0.5 * q * q - 0.5).abs());
        }
        assert!(drift <= 1e-3, "energy drift {drift:e}");
    }

    #[test]
    fn integrator_rejects_invalid_setups() {
        let dims = Dimensions::new(2, 1).unwrap();
        let initial = InitialData::from_functions(
            |_x: &DVector<f64>| DVector::zeros(1),
            |_x: &DVector<f64>| DVector::zeros(1),
        );

        // q-dependent metric family.
        let variable = QuadraticHamiltonian::new(
            dims,
            MetricFamily::variable(2, 1, |q: &DVector<f64>| {
                vec![
                    DMatrix::from_element(1, 1, 1.0 + q[0] * q[0]),
                    DMatrix::from_element(1, 1, -1.0),
                ]
            }),
            Potential::zero(),
        )
        .unwrap();
        let grid = grid_1p1(1.0, 8, 1.0, 8, Boundary::Periodic);
        assert!(matches!(
            integrate_quadratic(&variable, &grid, &initial),
            Err(Error::Unsupported(_))
        ));

        // Periodic evolution axis.
        let h = QuadraticHamiltonian::new(
            dims,
            MetricFamily::constant(vec![
                DMatrix::from_element(1, 1, 1.0),
                DMatrix::from_element(1, 1, -1.0),
            ]),
            Potential::zero(),
        )
        .unwrap();
        let periodic_time = BaseGrid::new(vec![
            AxisSpec::new(0.0, 1.0, 8, Boundary::Periodic).unwrap(),
            AxisSpec::new(0.0, 1.0, 8, Boundary::Periodic).unwrap(),
        ])
        .unwrap();
        assert!(matches!(
            integrate_quadratic(&h, &periodic_time, &initial),
            Err(Error::Unsupported(_))
        ));

        // Wrong sign pattern: -g_2 negative-definite.
        let elliptic = QuadraticHamiltonian::new(
            dims,
            MetricFamily::constant(vec![
                DMatrix::from_element(1, 1, 1.0),
                DMatrix::from_element(1, 1, 1.0),
            ]),
            Potential::zero(),
        )
        .unwrap();
        assert!(matches!(
            integrate_quadratic(&elliptic, &grid, &initial),
            Err(Error::Unsupported(_))
        ));

        // Indefinite evolution metric.
        let backwards = QuadraticHamiltonian::new(
            dims,
            MetricFamily::constant(vec![
                DMatrix::from_element(1, 1, -1.0),
                DMatrix::from_element(1, 1, -1.0),
            ]),
            Potential::zero(),
        )
        .unwrap();
        assert!(matches!(
            integrate_quadratic(&backwards, &grid, &initial),
            Err(Error::Unsupported(_))
        ));

        // CFL violation: dt = 0.25 > dx = 1/8 at speed 1.
        let coarse_time = grid_1p1(1.0, 5, 1.0, 8, Boundary::Periodic);
        assert!(matches!(
            integrate_quadratic(&h, &coarse_time, &initial),
            Err(Error::Cfl(_))
        ));
        let params = WaveParams::new(1.0, 1.0, 1, |_x| 0.0, |_x| 0.0).unwrap();
        assert!(matches!(
            integrate_wave(&params, &coarse_time),
            Err(Error::Cfl(_))
        ));

        // Mis-shaped two-level data (on a CFL-safe grid so the shape check is
        // what fires).
        let fine_time = grid_1p1(1.0, 12, 1.0, 8, Boundary::Periodic);
        let bad = InitialData::two_levels(vec![0.0; 3], vec![0.0; 8]);
        assert!(matches!(
            integrate_quadratic(&h, &fine_time, &bad),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn wave_params_validation() {
        assert!(WaveParams::new(0.0, 1.0, 1, |_x| 0.0, |_x| 0.0).is_err());
        assert!(WaveParams::new(1.0, -1.0, 1, |_x| 0.0, |_x| 0.0).is_err());
        assert!(WaveParams::new(1.0, 1.0, 0, |_x| 0.0, |_x| 0.0).is_err());
        assert!(WaveParams::new(1.0, 1.0, 4, |_x| 0.0, |_x| 0.0).is_err());
        let p = WaveParams::new(4.0, 1.0, 2, |_x| 0.0, |_x| 0.0).unwrap();
        assert_eq!(p.speed(), 0.5);
        assert_eq!(p.dims(), Dimensions::new(3, 1).unwrap());
    }

    #[test]
    fn cfl_time_nodes_respects_the_bound() {
        let (span, courant, speed, dx) = (1.0, 0.5, 2.0, 0.1);
        let nt = cfl_time_nodes(span, courant, speed, dx);
        let dt = span / (nt - 1) as f64;
        assert!(speed * dt / dx <= courant + 1e-12);
        assert!(nt >= 3);
    }

    #[test]
    fn divergence_of_trivial_currents() {
        let grid = grid_1p1(1.0, 6, 1.0, 8, Boundary::Periodic);
        let dims = Dimensions::new(2, 1).unwrap();
        let section = SectionGrid::from_psi(grid, 1, |t: &DVector<f64>| {
            DVector::from_element(1, (t[0] + t[1]).sin())
        })
        .unwrap();

        let constant = ConservedCurrent::user(dims, |_x| Ok(DVector::from_vec(vec![3.0, -1.0])));
        let field = divergence(&constant, &section).unwrap();
        assert!(field.interior_count() > 0);
        assert!(field.iter_interior().all(|(_, v)| v == 0.0));

        let coordinate = ConservedCurrent::user(dims, |x: &ChartPoint| {
            Ok(DVector::from_vec(vec![x.t[0], 0.0]))
        });
        let field = divergence(&coordinate, &section).unwrap();
        for (_, v) in field.iter_interior() {
            assert!((v - 1.0).abs() <= 1e-12, "Div(t^1 e_1) must be 1, got {v}");
        }
    }

    #[test]
    fn hdw_residual_vanishes_on_zero_section() {
        let params = WaveParams::new(1.0, 1.0, 1, |_x| 0.0, |_x| 0.0).unwrap();
        let h = params.hamiltonian().unwrap();
        let grid = grid_1p1(1.0, 5, 1.0, 6, Boundary::Periodic);
        let section = SectionGrid::from_psi(grid, 1, |_t| DVector::zeros(1)).unwrap();
        let (force, velocity) = hdw_residual_on_section(&h, &section).unwrap();
        assert!(force.iter_interior().all(|(_, v)| v == 0.0));
        assert!(velocity.iter_interior().all(|(_, v)| v == 0.0));
        assert_eq!(force.interior_count(), 3 * 6);
    }

    #[test]
    fn reconstruction_on_simple_sections() {
        let grid = grid_1p1(1.0, 5, 1.0, 5, Boundary::Dirichlet);
        let h = unit_metrics_2();

        let constant =
            SectionGrid::from_psi(grid.clone(), 1, |_t| DVector::from_element(1, 4.0)).unwrap();
        let node = grid.node_from_multi(&[2, 2]);
        let kt = reconstruct_from_section(&constant, node).unwrap();
        for (a, v) in kt.vectors.iter().enumerate() {
            assert_eq!(v.vt[a], 1.0);
            assert_eq!(v.vq.amax(), 0.0);
            assert_eq!(v.vp.amax(), 0.0);
        }

        // psi = 2 t - 3 x: central differences are exact on affine data.
        let linear = SectionGrid::from_psi(grid.clone(), 1, |t: &DVector<f64>| {
            DVector::from_element(1, 2.0 * t[0] - 3.0 * t[1])
        })
        .unwrap();
        let linear = momenta_from_section(&linear, &h).unwrap();
        let kt = reconstruct_from_section(&linear, node).unwrap();
        assert!((kt.vectors[0].vq[0] - 2.0).abs() <= 1e-12);
        assert!((kt.vectors[1].vq[0] + 3.0).abs() <= 1e-12);

        let edge = grid.node_from_multi(&[0, 2]);
        assert!(matches!(
            reconstruct_from_section(&linear, edge),
            Err(Error::BoundaryNode(_))
        ));
    }

    #[test]
    fn compact_residual_vanishes_on_scheme_output() {
        let params = WaveParams::new(1.0, 1.0, 1, |x: &DVector<f64>| x[0].sin(), |_x| 0.0).unwrap();
        let grid = grid_1p1(0.5, 33, std::f64::consts::TAU, 32, Boundary::Periodic);
        let section = integrate_wave(&params, &grid).unwrap();
        let compact = wave_residual_compact(&section, 1.0, 1.0).unwrap();
        let nested = wave_residual_nested(&section, 1.0, 1.0).unwrap();
        assert!(
            compact.max_abs() <= 1e-9,
            "leapfrog satisfies its own stencil: {:e}",
            compact.max_abs()
        );
        assert!(
            nested.max_abs() > 100.0 * compact.max_abs(),
            "nested differences must act as a nondegenerate gauge"
        );
    }

    #[test]
    fn csv_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let grid = BaseGrid::new(vec![
            AxisSpec::new(0.0, 1.0, 4, Boundary::Dirichlet).unwrap(),
            AxisSpec::new(-1.0, 2.0, 6, Boundary::Periodic).unwrap(),
        ])
        .unwrap();
        let section = SectionGrid::from_functions(
            grid,
            2,
            |t: &DVector<f64>| DVector::from_vec(vec![t[0] / 3.0, (t[1] * 7.0).sin()]),
            |t: &DVector<f64>| {
                DMatrix::from_fn(2, 2, |a, i| (t[0] + 1.0) / (a as f64 + i as f64 + 3.0))
            },
        )
        .unwrap();
        let path1 = dir.path().join("section.csv");
        let path2 = dir.path().join("again.csv");
        write_csv(&section, &path1).unwrap();
        let reread = read_csv(&path1, &[Boundary::Dirichlet, Boundary::Periodic]).unwrap();
        assert_eq!(reread, section, "values and coordinates adopt verbatim");
        write_csv(&reread, &path2).unwrap();
        let bytes1 = std::fs::read(&path1).unwrap();
        let bytes2 = std::fs::read(&path2).unwrap();
        assert_eq!(bytes1, bytes2, "write-read-write must be byte-identical");
        assert!(String::from_utf8(bytes1)
            .unwrap()
            .starts_with("t1,t2,q1,q2,p1_1,p1_2,p2_1,p2_2\n"));
    }

    #[test]
    fn csv_reader_rejects_malformed_input() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        let both = [Boundary::Dirichlet, Boundary::Dirichlet];

        std::fs::write(&path, "").unwrap();
        assert!(matches!(read_csv(&path, &both), Err(Error::Parse(_))));

        std::fs::write(&path, "x1,q1,p1_1\n0,0,0\n").unwrap();
        assert!(matches!(read_csv(&path, &both[..1]), Err(Error::Parse(_))));

        std::fs::write(&path, "t1,q1,p1_1\n0.0,oops,0.0\n").unwrap();
        assert!(matches!(read_csv(&path, &both[..1]), Err(Error::Parse(_))));

        std::fs::write(&path, "t1,q1,p1_1\n0.0,1.0\n").unwrap();
        assert!(matches!(read_csv(&path, &both[..1]), Err(Error::Parse(_))));

        // Rows present but not forming a full product grid.
        std::fs::write(
            &path,
            "t1,q1,p1_1\n0.0,0.0,0.0\n0.5,0.0,0.0\n1.0,0.0,0.0\n1.5,0.0,0.0\n2.5,0.0,0.0\n",
        )
        .unwrap();
        assert!(matches!(read_csv(&path, &both[..1]), Err(Error::Shape(_))));
    }

    #[test]
    fn section_shape_validation() {
        let grid = grid_1p1(1.0, 3, 1.0, 3, Boundary::Periodic);
        assert!(SectionGrid::from_values(grid.clone(), 1, vec![0.0; 5], vec![0.0; 18]).is_err());
        assert!(SectionGrid::from_values(grid.clone(), 1, vec![0.0; 9], vec![0.0; 17]).is_err());
        let ok = SectionGrid::from_values(grid, 1, vec![0.0; 9], vec![0.0; 18]).unwrap();
        assert_eq!(ok.dims(), Dimensions::new(2, 1).unwrap());
    }
}
