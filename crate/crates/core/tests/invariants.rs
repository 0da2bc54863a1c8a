use std::sync::Arc;

use proptest::prelude::*;

use pmhdg_core::condense::{back_substitute, condense, monolithic_oracle_solve};
use pmhdg_core::hdg::{
    divergence_infnorm, normal_jump_infnorm, DiffusionSolver, ProblemSpec, StokesSolver,
};
use pmhdg_core::mesh::{generate_disk, generate_periodic_rectangle, generate_rectangle};
use pmhdg_core::particles::{relocate, seed, SeedingConfig, SeedingMode};
use pmhdg_core::projection::{
    constrained_project_scalar, l2_project, Advection, ProjectionBc, ProjectionSpaces, TimeScheme,
};
use pmhdg_core::{BoundaryMarker, Diagonal, DiscreteField, DofLayout, Point, Triangulation};

fn unit_square(n: usize) -> Triangulation {
    generate_rectangle(
        n,
        n,
        Point::new(0.0, 0.0),
        Point::new(1.0, 1.0),
        Diagonal::Right,
    )
    .unwrap()
}

fn seeding(n: usize, rng_seed: u64) -> SeedingConfig {
    SeedingConfig {
        mode: SeedingMode::Random,
        target_per_cell: n,
        rng_seed,
    }
}

/// Polynomial of total degree `k` with coefficients drawn from `coeffs`.
fn polynomial(k: usize, coeffs: &[f64]) -> impl Fn(&Point) -> f64 + Sync + '_ {
    move |p: &Point| {
        let mut c = coeffs.iter();
        let mut sum = 0.0;
        for i in 0..=k as i32 {
            for j in 0..=k as i32 - i {
                sum += c.next().unwrap() * p.x.powi(i) * p.y.powi(j);
            }
        }
        sum
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn projection_round_trip_keeps_polynomials(
        k in 1usize..=3,
        coeffs in prop::collection::vec(-1.0f64..1.0, 10),
        rng_seed in 0u64..1000,
        dt in 0.01f64..0.5,
    ) {
        let m = unit_square(3);
        let poly = polynomial(k, &coeffs);
        let spaces = ProjectionSpaces::new(&m, k, 0, 1).unwrap();
        let exact = DiscreteField::interpolate(spaces.state.clone(), &m, |p| [poly(p), 0.0]).unwrap();
        let s = seed(&m, &seeding(2 * spaces.state.scalar_dofs_per_entity(), rng_seed), Some(&poly), None).unwrap();
        let bc = ProjectionBc { g: &|p| [poly(p), 0.0], h_a: &|_, _| [0.0; 2] };
        let zero = |_: &Point| Point::zeros();
        let r = constrained_project_scalar(&m, &s, &spaces, &exact, &Advection::Analytic(&zero), &bc, &TimeScheme::new(dt)).unwrap();
        prop_assert!(r.multiplier.coefficients.iter().all(|v| v.abs() < 1e-12));
        for (a, b) in r.state.coefficients.iter().zip(&exact.coefficients) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn l2_projection_reproduces_linear_data(
        a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0, rng_seed in 0u64..1000,
    ) {
        let m = unit_square(2);
        let f = move |p: &Point| a + b * p.x + c * p.y;
        let s = seed(&m, &seeding(6, rng_seed), Some(&f), None).unwrap();
        let layout = Arc::new(DofLayout::cell(&m, 1, 1).unwrap());
        let got = l2_project(&m, &s, layout.clone()).unwrap();
        let exact = DiscreteField::interpolate(layout, &m, |p| [f(p), 0.0]).unwrap();
        for (x, y) in got.coefficients.iter().zip(&exact.coefficients) {
            prop_assert!((x - y).abs() < 1e-11);
        }
    }

    #[test]
    fn diffusion_condensation_matches_monolithic(kappa in 1e-3f64..1.0, dt in 1e-3f64..1.0, k in 1usize..=3) {
        let m = unit_square(2)
            .with_boundary_markers(|mid, _| if mid.x < 1e-12 { BoundaryMarker::Neumann } else { BoundaryMarker::DirichletFull });
        let layout = Arc::new(DofLayout::cell(&m, k, 1).unwrap());
        let spec = ProblemSpec::diffusion(kappa)
            .with_source(|p, _| [p.x - p.y, 0.0])
            .with_dirichlet(|p, _| [p.y * p.y, 0.0])
            .with_neumann(|_, _, _| [0.5, 0.0]);
        let star = DiscreteField::interpolate(layout.clone(), &m, |p| [(3.0 * p.x).sin(), 0.0]).unwrap();
        let solver = DiffusionSolver::new(&m, layout, spec, dt).unwrap();
        let (locals, constraints, nl, nf) = solver.local_systems(&m, &star, dt).unwrap();
        let (lo, fo) = monolithic_oracle_solve(&locals, nl, nf, &constraints).unwrap();
        let c = condense(locals, nl, nf, &constraints).unwrap();
        let a = c.matrix_dense();
        prop_assert!((&a - a.transpose()).amax() <= 1e-12 * a.amax());
        let facet = c.solve_with(&c.factor().unwrap()).unwrap();
        let local = back_substitute(&c, &facet).unwrap();
        prop_assert!((facet - fo).amax() < 1e-9);
        prop_assert!((local - lo).amax() < 1e-9);
    }

    #[test]
    fn stokes_velocity_is_solenoidal_for_any_data(
        nu in 1e-4f64..0.1, dt in 1e-3f64..0.5, a in -1.0f64..1.0, b in -1.0f64..1.0,
    ) {
        let m = generate_periodic_rectangle(4, 4, Point::new(-1.0, -1.0), Point::new(1.0, 1.0), Diagonal::Right, [true, true]).unwrap();
        let mut solver = StokesSolver::new(&m, 2, ProblemSpec::stokes(nu), dt).unwrap();
        let star = DiscreteField::interpolate(solver.spaces().u.clone(), &m, |p| [a * p.y.sin() + p.x * p.y, b * (2.0 * p.x).cos()]).unwrap();
        let s = solver.step(&m, &star, dt).unwrap();
        prop_assert!(divergence_infnorm(&m, &s.u).unwrap() < 1e-10);
        prop_assert!(normal_jump_infnorm(&m, &s.u).unwrap() < 1e-10);
    }

    #[test]
    fn located_particles_lie_in_their_host(x in -0.7f64..0.7, y in -0.7f64..0.7, hint in 0usize..96) {
        let m = generate_disk(0.5f64.sqrt(), 4).unwrap();
        let p = Point::new(x, y);
        match m.locate_cell(&p, Some(hint % m.n_cells())) {
            Some(loc) => prop_assert!(m.barycentric(loc.cell, &p).iter().all(|&l| l > -1e-10)),
            None => prop_assert!(x * x + y * y > 0.45),
        }
    }

    #[test]
    fn periodic_wrap_is_idempotent_and_relocates(dx in -5.0f64..5.0, dy in -5.0f64..5.0, rng_seed in 0u64..100) {
        let m = generate_periodic_rectangle(3, 3, Point::new(-1.0, -1.0), Point::new(1.0, 1.0), Diagonal::Right, [true, true]).unwrap();
        let w = m.wrap_periodic(&Point::new(dx, dy));
        prop_assert!((-1.0..=1.0).contains(&w.x) && (-1.0..=1.0).contains(&w.y));
        let again = m.wrap_periodic(&w);
        prop_assert!((again - w).norm() < 1e-14);

        let mut s = seed(&m, &seeding(4, rng_seed), None, None).unwrap();
        let shift = Point::new(dx, dy);
        s.positions.iter_mut().for_each(|p| *p += shift);
        prop_assert_eq!(relocate(&mut s, &m), 0);
        for (p, &c) in s.positions.iter().zip(&s.host) {
            prop_assert!(m.barycentric(c, p).iter().all(|&l| l > -1e-10));
        }
    }
}
