//! Operator-splitting loops: particle advection, particle-to-mesh
//! projection, Eulerian step and mesh-to-particle update.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use pmhdg_core::hdg::{
    divergence_infnorm, normal_jump_infnorm, DiffusionSolver, ProblemSpec, StokesSolver,
};
use pmhdg_core::particles::{
    advect_mesh_ab2, advect_prescribed_rk3, inflow_rng, manage_inflow, seed, InflowFacet,
    ParticleSet, SeedingConfig,
};
use pmhdg_core::projection::{
    conservation_residuals, constrained_project_scalar, constrained_project_vector, facet_roles,
    field_increment, intermediate_field, l2_project, mesh_particle_update, Advection, FacetRole,
    ProjectionBc, ProjectionSpaces, TimeScheme,
};
use pmhdg_core::spaces::{l2_error, l2_error_vector};
use pmhdg_core::{BoundaryMarker, DiscreteField, Point, Triangulation};

use crate::cases;
use crate::config::{BenchmarkConfig, ProjectionKind};
use crate::diagnostics::{
    boundary_flux, local_mass_error, momentum_error, particle_stats, DiagnosticsReport, MassLedger,
    ReportRow,
};
use crate::export::{write_particles, write_report, write_vtk_file, PointData};
use crate::BenchError;

/// Final state and summary measures of a run.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: DiagnosticsReport,
    pub tri: Triangulation,
    /// Final scalar field, or final velocity of the flow cases.
    pub field: DiscreteField,
    pub pressure: Option<DiscreteField>,
    pub particles: ParticleSet,
    /// Largest divergence and normal jump of any Stokes output.
    pub max_divergence: f64,
    pub max_normal_jump: f64,
    /// Largest local and global conservation errors over all steps.
    pub max_local_residual: f64,
    pub max_global_error: f64,
    /// `max|u| dt / h_min` at the start of the run.
    pub cfl: f64,
}

fn stamp(step: usize, time: f64) -> impl Fn(pmhdg_core::Error) -> BenchError {
    move |source| BenchError::Step { step, time, source }
}

/// Blowup guard: non-finite values or growth far beyond the initial scale.
fn check_finite(
    field: &DiscreteField,
    bound: f64,
    step: usize,
    time: f64,
) -> Result<(), BenchError> {
    if field
        .coefficients
        .iter()
        .all(|v| v.is_finite() && v.abs() <= bound)
    {
        Ok(())
    } else {
        Err(BenchError::Step {
            step,
            time,
            source: pmhdg_core::Error::Parameter("solution diverged".into()),
        })
    }
}

struct Schedule {
    times: Vec<f64>,
    dt: f64,
    n_steps: usize,
}

impl Schedule {
    fn new(cfg: &BenchmarkConfig) -> Self {
        Self {
            times: cfg.report_times.clone(),
            dt: cfg.dt,
            n_steps: cfg.n_steps(),
        }
    }

    fn due(&self, step: usize, t: f64) -> bool {
        step + 1 == self.n_steps || self.times.iter().any(|&r| (r - t).abs() < 0.5 * self.dt)
    }
}

/// Output files of a run, when an output directory is configured.
struct Writer {
    dir: Option<PathBuf>,
    fields: bool,
    name: &'static str,
    count: usize,
}

impl Writer {
    fn new(cfg: &BenchmarkConfig) -> Self {
        Self {
            dir: cfg.output_dir.clone(),
            fields: cfg.write_fields,
            name: cfg.case.name(),
            count: 0,
        }
    }

    fn snapshot(
        &mut self,
        tri: &Triangulation,
        fields: &[(&str, &DiscreteField)],
        set: &ParticleSet,
    ) -> Result<(), BenchError> {
        if let (Some(dir), true) = (&self.dir, self.fields) {
            let i = self.count;
            write_vtk_file(
                &dir.join(format!("{}_{i:04}.vtk", self.name)),
                tri,
                fields,
                PointData::Broken,
            )?;
            write_particles(
                &dir.join(format!("{}_particles_{i:04}.txt", self.name)),
                set,
            )?;
        }
        self.count += 1;
        Ok(())
    }

    fn finish(&self, report: &DiagnosticsReport) -> Result<(), BenchError> {
        if let Some(dir) = &self.dir {
            write_report(&dir.join(format!("{}_report.csv", self.name)), report)?;
        }
        Ok(())
    }
}

/// Runs one benchmark to its end time.
pub fn run_case(cfg: &BenchmarkConfig) -> Result<RunOutput, BenchError> {
    cfg.validate()?;
    let tri = cases::mesh(cfg)?;
    if cfg.case.is_flow() {
        run_flow(cfg, tri)
    } else {
        run_scalar(cfg, tri)
    }
}

/// θ_L of the particle update at `step`; the first update has no older increment.
fn update_theta(cfg: &BenchmarkConfig, step: usize) -> f64 {
    if step == 0 {
        1.0
    } else {
        cfg.theta_l
    }
}

fn seeding(cfg: &BenchmarkConfig) -> SeedingConfig {
    SeedingConfig {
        mode: cfg.seeding,
        target_per_cell: cfg.particles_per_cell,
        rng_seed: cfg.rng_seed,
    }
}

fn run_scalar(cfg: &BenchmarkConfig, tri: Triangulation) -> Result<RunOutput, BenchError> {
    let start = Instant::now();
    let ts = cfg.time_scheme();
    let dt = cfg.dt;
    let velocity = cases::transport(cfg);
    let exact = cases::exact_scalar(cfg);
    let init = cases::initial_scalar(cfg);
    let inflow_value = cases::inflow_scalar(cfg);
    let spaces = ProjectionSpaces::new(&tri, cfg.k, cfg.l, 1)?;
    let quad = 2 * cfg.k + 4;

    let mut set = seed(&tri, &seeding(cfg), Some(&|x: &Point| init(x)), None)?;
    let phi0 = DiscreteField::project(spaces.state.clone(), &tri, |x| [init(x), 0.0], quad)?;
    let zero = DiscreteField::zeros(spaces.state.clone());
    let (mut psi, mut phi) = (phi0.clone(), phi0.clone());
    let (mut incr_prev, mut incr) = (zero.clone(), zero);
    let mut ledger = MassLedger::new(&phi0, &tri)?;

    let mut diffusion = if cfg.kappa > 0.0 {
        let g = cases::exact_scalar(cfg);
        let mut spec = ProblemSpec::diffusion(cfg.kappa).with_dirichlet(move |x, t| [g(x, t), 0.0]);
        if let Some(a) = cfg.alpha {
            spec = spec.with_alpha(a);
        }
        Some(DiffusionSolver::new(&tri, spaces.state.clone(), spec, dt)?)
    } else {
        None
    };

    let roles = facet_roles(&tri, &Advection::Analytic(&*velocity))?;
    let inflow: Vec<InflowFacet> = (0..tri.n_facets())
        .filter(|&f| {
            roles[f] == FacetRole::Dirichlet
                && tri.boundary_marker(f) == Some(BoundaryMarker::DirichletInflowOnly)
        })
        .map(|f| InflowFacet {
            facet: f,
            shift: velocity(&tri.facet_point(f, 0.5)) * dt,
        })
        .collect();
    let speed = tri
        .vertices()
        .iter()
        .map(|x| velocity(x).norm())
        .fold(0.0, f64::max);
    let cfl = speed * dt / tri.h_min();
    let bound = 1e3 * phi0.coefficients.iter().fold(1.0f64, |m, v| m.max(v.abs()));

    let schedule = Schedule::new(cfg);
    let mut writer = Writer::new(cfg);
    let mut report = DiagnosticsReport::default();
    let (mut max_local, mut max_global) = (0.0f64, 0.0f64);
    let h_a = |_: &Point, _: &Point| [0.0; 2];

    for step in 0..schedule.n_steps {
        let (t0, t1) = (step as f64 * dt, (step + 1) as f64 * dt);
        let err = stamp(step, t1);

        advect_prescribed_rk3(&mut set, &tri, &|x, _| velocity(x), t0, dt);
        set.compact();
        if !inflow.is_empty() {
            let mut rng = inflow_rng(cfg.rng_seed, step);
            manage_inflow(
                &mut set,
                &tri,
                &inflow,
                cfg.particles_per_cell,
                &mut rng,
                Some(&inflow_value),
                None,
            );
        }

        let theta_prev = if step == 0 {
            1.0
        } else {
            update_theta(cfg, step - 1)
        };
        let psi_star = intermediate_field(
            &psi,
            &incr_prev,
            &incr,
            &TimeScheme {
                theta_l: theta_prev,
                ..ts
            },
        )
        .map_err(&err)?;

        let g = |x: &Point| [exact(x, t1), 0.0];
        let bc = ProjectionBc { g: &g, h_a: &h_a };
        let advection = Advection::Analytic(&*velocity);
        let (psi_new, eps_local) = match cfg.projection {
            ProjectionKind::Constrained => {
                let r = constrained_project_scalar(
                    &tri, &set, &spaces, &psi_star, &advection, &bc, &ts,
                )
                .map_err(&err)?;
                let residuals = conservation_residuals(&tri, &r, &psi_star, &advection, &bc, &ts)
                    .map_err(&err)?;
                ledger.record_step(
                    boundary_flux(&tri, &r, &psi_star, &*velocity, &bc, &ts)?,
                    dt,
                );
                (r.state, local_mass_error(&residuals))
            }
            ProjectionKind::L2 => (
                l2_project(&tri, &set, spaces.state.clone()).map_err(&err)?,
                f64::NAN,
            ),
        };

        let phi_new = match diffusion.as_mut() {
            Some(d) => d.step(&tri, &psi_new, t1).map_err(&err)?.0,
            None => psi_new.clone(),
        };
        check_finite(&phi_new, bound, step, t1)?;
        let incr_new = field_increment(&phi_new, &psi_new, dt).map_err(&err)?;
        if diffusion.is_some() {
            mesh_particle_update(
                &mut set,
                &tri,
                &incr,
                &incr_new,
                dt,
                update_theta(cfg, step),
            )
            .map_err(&err)?;
        }
        incr_prev = std::mem::replace(&mut incr, incr_new);
        psi = psi_new;
        phi = phi_new;

        let eps_global = ledger.error(&phi, &tri)?;
        if eps_local.is_finite() {
            max_local = max_local.max(eps_local);
            max_global = max_global.max(eps_global.abs());
        }
        if schedule.due(step, t1) {
            let (particles, min_ppc, mean_ppc) = particle_stats(&set, &tri);
            report.rows.push(ReportRow {
                time: t1,
                err_u: l2_error(&phi, &tri, |x| exact(x, t1), quad)?,
                err_p: f64::NAN,
                eps_mass_global: if eps_local.is_finite() {
                    eps_global
                } else {
                    f64::NAN
                },
                eps_mass_local: eps_local,
                eps_momentum: f64::NAN,
                particles,
                min_ppc,
                mean_ppc,
                wall_time: start.elapsed().as_secs_f64(),
            });
            writer.snapshot(&tri, &[("phi", &phi)], &set)?;
        }
    }
    writer.finish(&report)?;
    Ok(RunOutput {
        report,
        tri,
        field: phi,
        pressure: None,
        particles: set,
        max_divergence: 0.0,
        max_normal_jump: 0.0,
        max_local_residual: max_local,
        max_global_error: max_global,
        cfl,
    })
}

fn stokes_spec(cfg: &BenchmarkConfig, force: f64) -> ProblemSpec {
    let spec = ProblemSpec::stokes(cfg.nu).with_source(move |_, _| [force, 0.0]);
    match cfg.alpha {
        Some(a) => spec.with_alpha(a),
        None => spec,
    }
}

fn run_flow(cfg: &BenchmarkConfig, tri: Triangulation) -> Result<RunOutput, BenchError> {
    let start = Instant::now();
    let ts = cfg.time_scheme();
    let dt = cfg.dt;
    let (exact_u, exact_p) = cases::exact_flow(cfg);
    let init = cases::initial_velocity(cfg);
    let quad = 2 * cfg.k + 4;
    let mut stokes = StokesSolver::new(&tri, cfg.k, stokes_spec(cfg, cases::body_force(cfg)), dt)?;
    let spaces = ProjectionSpaces::new(&tri, cfg.k, cfg.l, 2)?;
    let sp = stokes.spaces().clone();

    let mut set = seed(&tri, &seeding(cfg), None, Some(&|x: &Point| init(x)))?;
    // Divergence-free start: a Stokes step with a negligible time step acts
    // as a projection of the initial data onto the discrete solenoidal fields.
    let v0 = DiscreteField::project(spaces.state.clone(), &tri, |x| init(x), quad)?;
    let (mut u, mut ubar) = if v0.coefficients.iter().all(|&c| c == 0.0) {
        (v0.clone(), DiscreteField::zeros(sp.ubar.clone()))
    } else {
        let s = StokesSolver::new(&tri, cfg.k, stokes_spec(cfg, 0.0), 1e-6 * dt)?
            .step(&tri, &v0, 0.0)?;
        (s.u, s.ubar)
    };
    let u0 = u.clone();
    let mut p = DiscreteField::zeros(sp.p.clone());
    let mut u_prev: Option<DiscreteField> = None;
    let zero = DiscreteField::zeros(spaces.state.clone());
    let mut psi = u.clone();
    let (mut incr_prev, mut incr) = (zero.clone(), zero);

    let speed = u.coefficients.iter().fold(0.0f64, |m, v| m.max(v.abs())) * 2f64.sqrt();
    let peak = speed.max(cfg.amplitude.abs()).max(f64::MIN_POSITIVE);
    let cfl = peak * dt / tri.h_min();
    let bound = 1e3 * peak;

    let schedule = Schedule::new(cfg);
    let mut writer = Writer::new(cfg);
    let mut report = DiagnosticsReport::default();
    let (mut max_div, mut max_jump, mut max_local, mut max_momentum) =
        (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let g = |_: &Point| [0.0; 2];
    let h_a = |_: &Point, _: &Point| [0.0; 2];
    let bc = ProjectionBc { g: &g, h_a: &h_a };

    for step in 0..schedule.n_steps {
        let t1 = (step + 1) as f64 * dt;
        let err = stamp(step, t1);

        advect_mesh_ab2(&mut set, &tri, &u, u_prev.as_ref(), dt).map_err(&err)?;
        set.compact();

        let theta_prev = if step == 0 {
            1.0
        } else {
            update_theta(cfg, step - 1)
        };
        let v_star = intermediate_field(
            &psi,
            &incr_prev,
            &incr,
            &TimeScheme {
                theta_l: theta_prev,
                ..ts
            },
        )
        .map_err(&err)?;
        let (v_new, eps_local) = match cfg.projection {
            ProjectionKind::Constrained => {
                let r =
                    constrained_project_vector(&tri, &set, &spaces, &v_star, &u, &ubar, &bc, &ts)
                        .map_err(&err)?;
                let advection = Advection::Mesh { u: &u, ubar: &ubar };
                let residuals = conservation_residuals(&tri, &r, &v_star, &advection, &bc, &ts)
                    .map_err(&err)?;
                (r.state, local_mass_error(&residuals))
            }
            ProjectionKind::L2 => (
                l2_project(&tri, &set, spaces.state.clone()).map_err(&err)?,
                f64::NAN,
            ),
        };

        let sol = stokes.step(&tri, &v_new, t1).map_err(&err)?;
        check_finite(&sol.u, bound, step, t1)?;
        max_div = max_div.max(divergence_infnorm(&tri, &sol.u)?);
        max_jump = max_jump.max(normal_jump_infnorm(&tri, &sol.u)?);
        let incr_new = field_increment(&sol.u, &v_new, dt).map_err(&err)?;
        mesh_particle_update(
            &mut set,
            &tri,
            &incr,
            &incr_new,
            dt,
            update_theta(cfg, step),
        )
        .map_err(&err)?;
        incr_prev = std::mem::replace(&mut incr, incr_new);
        psi = v_new;
        u_prev = Some(std::mem::replace(&mut u, sol.u));
        ubar = sol.ubar;
        p = sol.p;

        let eps_m = momentum_error(&u, &u0, &tri)?;
        if eps_local.is_finite() {
            max_local = max_local.max(eps_local);
        }
        max_momentum = max_momentum.max(eps_m);
        if schedule.due(step, t1) {
            let (particles, min_ppc, mean_ppc) = particle_stats(&set, &tri);
            report.rows.push(ReportRow {
                time: t1,
                err_u: l2_error_vector(&u, &tri, |x| exact_u(x, t1), quad)?,
                err_p: l2_error(&p, &tri, |x| exact_p(x, t1), quad)?,
                eps_mass_global: f64::NAN,
                eps_mass_local: eps_local,
                eps_momentum: eps_m,
                particles,
                min_ppc,
                mean_ppc,
                wall_time: start.elapsed().as_secs_f64(),
            });
            writer.snapshot(&tri, &[("u", &u), ("p", &p)], &set)?;
        }
    }
    writer.finish(&report)?;
    Ok(RunOutput {
        report,
        tri,
        field: u,
        pressure: Some(p),
        particles: set,
        max_divergence: max_div,
        max_normal_jump: max_jump,
        max_local_residual: max_local,
        max_global_error: max_momentum,
        cfl,
    })
}

/// One refinement level of a convergence study.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub cells: usize,
    pub dt: f64,
    pub h_max: f64,
    pub err_u: f64,
    pub rate_u: Option<f64>,
    pub err_p: f64,
    pub rate_p: Option<f64>,
    /// Global conservation error: mass for scalar cases, momentum for flows.
    pub conservation: f64,
}

fn rate(e0: f64, e1: f64, h0: f64, h1: f64) -> Option<f64> {
    (e0 > 0.0 && e1 > 0.0).then(|| (e0 / e1).ln() / (h0 / h1).ln())
}

/// Runs `levels` successive refinements of `cfg`, halving mesh size and time step.
pub fn convergence_study(
    cfg: &BenchmarkConfig,
    levels: usize,
) -> Result<Vec<ConvergenceRow>, BenchError> {
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(levels);
    for level in 0..levels {
        let c = BenchmarkConfig {
            output_dir: None,
            ..cfg.refined(level)
        };
        let out = run_case(&c)?;
        let last = out
            .report
            .last()
            .cloned()
            .ok_or_else(|| BenchError::Config("run produced no report".into()))?;
        let h_max = out.tri.h_max();
        let conservation = if c.case.is_flow() {
            last.eps_momentum
        } else {
            last.eps_mass_global
        };
        let (rate_u, rate_p) = match rows.last() {
            Some(prev) => (
                rate(prev.err_u, last.err_u, prev.h_max, h_max),
                rate(prev.err_p, last.err_p, prev.h_max, h_max),
            ),
            None => (None, None),
        };
        rows.push(ConvergenceRow {
            cells: out.tri.n_cells(),
            dt: c.dt,
            h_max,
            err_u: last.err_u,
            rate_u,
            err_p: last.err_p,
            rate_p,
            conservation,
        });
    }
    Ok(rows)
}

pub fn write_convergence_csv(mut w: impl Write, rows: &[ConvergenceRow]) -> std::io::Result<()> {
    writeln!(
        w,
        "cells,dt,h_max,err_u,rate_u,err_p,rate_p,eps_conservation"
    )?;
    let opt = |r: Option<f64>| r.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
    for r in rows {
        writeln!(
            w,
            "{},{},{:.3e},{:.3e},{},{:.3e},{},{:.3e}",
            r.cells,
            r.dt,
            r.h_max,
            r.err_u,
            opt(r.rate_u),
            r.err_p,
            opt(r.rate_p),
            r.conservation
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Case;

    fn small(case: Case) -> BenchmarkConfig {
        let mut cfg = BenchmarkConfig::preset(case);
        cfg.mesh_n = 4;
        cfg.end_time = 4.0 * cfg.dt;
        cfg
    }

    #[test]
    fn scalar_run_conserves_and_reports_end_time() {
        let out = run_case(&small(Case::RigidRotation)).unwrap();
        let last = out.report.last().unwrap();
        assert!((last.time - 0.04).abs() < 1e-12);
        assert!(last.eps_mass_global.abs() < 1e-12 && last.eps_mass_local < 1e-12);
        assert!(last.err_p.is_nan());
        assert_eq!(out.report.rows.len(), 1);
    }

    #[test]
    fn flow_run_is_solenoidal_and_conserves_momentum() {
        let out = run_case(&small(Case::TaylorGreen)).unwrap();
        assert!(out.max_divergence < 1e-10 && out.max_normal_jump < 1e-10);
        let last = out.report.last().unwrap();
        assert!(last.eps_momentum < 1e-12, "{}", last.eps_momentum);
        assert!(last.err_u < 0.2);
    }

    #[test]
    fn starved_cells_abort_with_step_stamp() {
        let mut cfg = small(Case::Poiseuille);
        cfg.particles_per_cell = 3;
        match run_case(&cfg) {
            Err(BenchError::Step {
                step: 0, source, ..
            }) => {
                assert!(matches!(source, pmhdg_core::Error::Unisolvency { .. }))
            }
            other => panic!("expected unisolvency failure, got {other:?}"),
        }
    }

    #[test]
    fn rates_from_halving() {
        assert!((rate(4e-2, 1e-2, 0.2, 0.1).unwrap() - 2.0).abs() < 1e-12);
        assert!(rate(0.0, 1.0, 0.2, 0.1).is_none());
        let mut buf = Vec::new();
        write_convergence_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
    }
}
