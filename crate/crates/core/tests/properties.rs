//! Randomized properties: exact CSV round trips, grid index algebra, and
//! algebraic identities of the canonical structure pairings.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use kcosym::chart::{
    contract_eta, contract_omega, contract_theta, reeb, ChartPoint, Dimensions, TangentVector,
};
use kcosym::fields::{
    cfl_time_nodes, read_csv, write_csv, AxisSpec, BaseGrid, Boundary, SectionGrid,
};
use kcosym::symmetry::{complete_lift, conserved_from_killing, BaseVectorField};

fn boundary_strategy() -> impl Strategy<Value = Boundary> {
    prop_oneof![Just(Boundary::Periodic), Just(Boundary::Dirichlet)]
}

fn axis_strategy() -> impl Strategy<Value = (f64, f64, usize, Boundary)> {
    (-2.0..2.0f64, 0.5..3.0f64, 3..6usize, boundary_strategy())
        .prop_map(|(start, span, nodes, boundary)| (start, start + span, nodes, boundary))
}

fn grid_strategy() -> impl Strategy<Value = BaseGrid> {
    prop::collection::vec(axis_strategy(), 1..=3).prop_map(|axes| {
        BaseGrid::new(
            axes.into_iter()
                .map(|(start, stop, nodes, boundary)| {
                    AxisSpec::new(start, stop, nodes, boundary).expect("valid axis")
                })
                .collect(),
        )
        .expect("valid grid")
    })
}

fn finite_f64() -> impl Strategy<Value = f64> {
    any::<f64>().prop_filter("finite", |v| v.is_finite())
}

/// A section with arbitrary finite values, including extreme magnitudes and
/// subnormals, on a random grid.
fn section_strategy() -> impl Strategy<Value = SectionGrid> {
    (grid_strategy(), 1..=3usize)
        .prop_flat_map(|(grid, n)| {
            let nodes = grid.node_count();
            let k = grid.k();
            (
                Just(grid),
                Just(n),
                prop::collection::vec(finite_f64(), nodes * n),
                prop::collection::vec(finite_f64(), nodes * k * n),
            )
        })
        .prop_map(|(grid, n, psi, momenta)| {
            SectionGrid::from_values(grid, n, psi, momenta).expect("consistent shapes")
        })
}

fn dims_strategy() -> impl Strategy<Value = Dimensions> {
    (1..=4usize, 1..=4usize).prop_map(|(k, n)| Dimensions::new(k, n).expect("valid dims"))
}

fn point_strategy(dims: Dimensions) -> impl Strategy<Value = ChartPoint> {
    prop::collection::vec(-3.0..3.0f64, dims.phase_dim()).prop_map(move |values| {
        ChartPoint::from_flat(dims, &DVector::from_vec(values)).expect("full-length vector")
    })
}

fn tangent_strategy(dims: Dimensions) -> impl Strategy<Value = TangentVector> {
    prop::collection::vec(-3.0..3.0f64, dims.phase_dim()).prop_map(move |values| {
        TangentVector::from_flat(dims, &DVector::from_vec(values)).expect("full-length vector")
    })
}

proptest! {
    /// Writing a field, reading it back, and writing it again produces
    /// byte-identical files, and the parsed section equals the original.
    #[test]
    fn csv_round_trip_is_bit_exact(section in section_strategy()) {
        let dir = tempfile::tempdir().expect("tempdir");
        let first = dir.path().join("first.csv");
        let second = dir.path().join("second.csv");
        write_csv(&section, &first).expect("write");
        let boundaries: Vec<Boundary> = (0..section.grid().k())
            .map(|axis| section.grid().boundary(axis))
            .collect();
        let parsed = read_csv(&first, &boundaries).expect("read back");
        // The format preserves values exactly: node coordinates, psi and
        // momenta all come back bit-for-bit.  (Derived caches such as the
        // stored spacing may be reconstructed to within one ulp, so whole-
        // struct equality is deliberately not asserted.)
        prop_assert_eq!(parsed.psi_raw(), section.psi_raw());
        prop_assert_eq!(parsed.momenta_raw(), section.momenta_raw());
        for axis in 0..section.grid().k() {
            prop_assert_eq!(
                parsed.grid().axis_coords(axis),
                section.grid().axis_coords(axis)
            );
            prop_assert_eq!(parsed.grid().boundary(axis), section.grid().boundary(axis));
        }
        write_csv(&parsed, &second).expect("rewrite");
        prop_assert_eq!(
            std::fs::read(&first).expect("bytes"),
            std::fs::read(&second).expect("bytes")
        );
    }

    /// Flat node ids and multi-indices are inverse to each other, and
    /// stepping to a neighbor and back returns to the start.
    #[test]
    fn grid_index_algebra_round_trips(grid in grid_strategy()) {
        for node in 0..grid.node_count() {
            let multi = grid.multi_index(node);
            prop_assert_eq!(grid.node_from_multi(&multi), node);
            for (axis, &index) in multi.iter().enumerate() {
                prop_assert!(index < grid.nodes(axis));
                let forward = grid.neighbor(node, axis, 1);
                match grid.boundary(axis) {
                    Boundary::Periodic => {
                        let forward = forward.expect("periodic axes always wrap");
                        prop_assert_eq!(
                            grid.neighbor(forward, axis, -1).expect("wrap back"),
                            node
                        );
                    }
                    Boundary::Dirichlet => {
                        if index + 1 < grid.nodes(axis) {
                            let forward = forward.expect("interior step");
                            prop_assert_eq!(
                                grid.neighbor(forward, axis, -1).expect("step back"),
                                node
                            );
                        } else {
                            prop_assert!(forward.is_none());
                        }
                    }
                }
            }
        }
    }

    /// The two-form pairings are antisymmetric, the base-direction pairings
    /// of the distinguished fields are exact, and the Liouville pairing of a
    /// lifted base field reproduces the momentum current.
    #[test]
    fn structure_pairings_satisfy_their_algebra(
        (dims, v, w, x) in dims_strategy().prop_flat_map(|dims| {
            (
                Just(dims),
                tangent_strategy(dims),
                tangent_strategy(dims),
                point_strategy(dims),
            )
        }),
    ) {

        for a in 0..dims.k {
            // Antisymmetry is exact in floating point: the same products are
            // subtracted in the opposite order.
            let vw = contract_omega(a, &v).unwrap().pairing(&w);
            let wv = contract_omega(a, &w).unwrap().pairing(&v);
            prop_assert_eq!(vw, -wv);

            // i(R_B) annihilates omega^A and pairs with eta^A to delta.
            for b in 0..dims.k {
                let r = reeb(dims, b).unwrap();
                prop_assert_eq!(contract_omega(a, &r).unwrap().norm_inf(), 0.0);
                prop_assert_eq!(contract_eta(a, &r).unwrap(), if a == b { 1.0 } else { 0.0 });
            }
        }

        // theta^A(lift Z) at x equals the momentum current F^A = p^A_i Z^i.
        let matrix = DMatrix::from_fn(dims.n, dims.n, |r, c| ((r * 3 + c) as f64).sin());
        let offset = DVector::from_fn(dims.n, |r, _| (r as f64 * 0.7).cos());
        let base = BaseVectorField::linear(dims, matrix, offset).unwrap();
        let lift = complete_lift(&base);
        let current = conserved_from_killing(&base);
        let lifted = lift.eval(&x);
        let f = current.components(&x).unwrap();
        for a in 0..dims.k {
            let theta = contract_theta(a, &lifted, &x).unwrap();
            prop_assert!(
                (theta - f[a]).abs() <= 1e-12 * (1.0 + f[a].abs()),
                "theta pairing {} vs current {}",
                theta,
                f[a]
            );
        }
    }

    /// The time-node count chosen for a Courant target is feasible and
    /// minimal: the produced step obeys the bound, one step fewer violates
    /// it.
    #[test]
    fn cfl_node_count_is_feasible_and_tight(
        span in 0.1..5.0f64,
        courant in 0.05..1.0f64,
        speed in 0.1..4.0f64,
        dx in 0.01..0.5f64,
    ) {
        let nodes = cfl_time_nodes(span, courant, speed, dx);
        prop_assert!(nodes >= 3);
        let dt = span / (nodes - 1) as f64;
        let bound = courant * dx / speed;
        prop_assert!(dt <= bound * (1.0 + 1e-12));
        if nodes > 3 {
            let coarser = span / (nodes - 2) as f64;
            prop_assert!(coarser > bound * (1.0 - 1e-12));
        }
    }
}
