//! Error norms, conservation measures and the per-output-time report.

use std::io::Write;

use pmhdg_core::particles::ParticleSet;
use pmhdg_core::projection::{
    facet_roles, Advection, FacetRole, ProjectionBc, ProjectionResult, TimeScheme,
};
use pmhdg_core::spaces::{gauss_legendre, integrate};
use pmhdg_core::{CellLocation, DiscreteField, Point, Triangulation};

use crate::BenchError;

pub const CSV_HEADER: &str =
    "time,err_u,err_p,eps_mass_global,eps_mass_local,eps_momentum,particles";

/// Diagnostics at one output time. Entries that do not apply to a case are NaN.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub time: f64,
    /// L² error of the primary field (scalar or velocity).
    pub err_u: f64,
    pub err_p: f64,
    pub eps_mass_global: f64,
    pub eps_mass_local: f64,
    pub eps_momentum: f64,
    pub particles: usize,
    pub min_ppc: usize,
    pub mean_ppc: f64,
    /// Seconds since the start of the run; excluded from the CSV.
    pub wall_time: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DiagnosticsReport {
    pub rows: Vec<ReportRow>,
}

impl DiagnosticsReport {
    pub fn last(&self) -> Option<&ReportRow> {
        self.rows.last()
    }

    /// Row whose time is within `tol` of `t`.
    pub fn at(&self, t: f64, tol: f64) -> Option<&ReportRow> {
        self.rows.iter().find(|r| (r.time - t).abs() <= tol)
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{}",
                r.time,
                r.err_u,
                r.err_p,
                r.eps_mass_global,
                r.eps_mass_local,
                r.eps_momentum,
                r.particles
            )?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }
}

/// Particle count, minimum and mean particles per cell.
pub fn particle_stats(set: &ParticleSet, tri: &Triangulation) -> (usize, usize, f64) {
    let bins = set.bins(tri.n_cells());
    let n = set.n_alive();
    (n, bins.min_count(), n as f64 / tri.n_cells() as f64)
}

/// Cellwise local conservation norm: root of the summed squared cell residuals.
pub fn local_mass_error(residuals: &[[f64; 2]]) -> f64 {
    residuals
        .iter()
        .map(|r| r[0] * r[0] + r[1] * r[1])
        .sum::<f64>()
        .sqrt()
}

/// Relative global balance error: change of the total amount plus what left
/// through the boundary, over the initial amount (absolute when that is zero).
pub fn global_mass_error(current: f64, initial: f64, net_outflow: f64) -> f64 {
    let scale = if initial.abs() > f64::MIN_POSITIVE {
        initial.abs()
    } else {
        1.0
    };
    (current - initial + net_outflow) / scale
}

/// Euclidean norm of the change in total momentum.
pub fn momentum_error(
    u: &DiscreteField,
    u0: &DiscreteField,
    tri: &Triangulation,
) -> Result<f64, BenchError> {
    let a = integrate(u, tri)?;
    let b = integrate(u0, tri)?;
    Ok(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
}

/// Net rate at which the projected scalar leaves through the boundary:
/// the control value on Dirichlet facets, the inflow flux `h_a` where the
/// velocity enters a free facet and the θ-weighted state where it leaves.
pub fn boundary_flux(
    tri: &Triangulation,
    result: &ProjectionResult,
    psi_star: &DiscreteField,
    velocity: &(dyn Fn(&Point) -> Point + Sync),
    bc: &ProjectionBc,
    ts: &TimeScheme,
) -> Result<f64, BenchError> {
    let roles = facet_roles(tri, &Advection::Analytic(velocity))?;
    let (s_pts, s_wts) = gauss_legendre(result.state.layout().degree() + 3);
    let mut flux = 0.0;
    for f in (0..tri.n_facets()).filter(|&f| tri.is_boundary(f)) {
        let (c, i) = tri.facet_adjacency(f)[0];
        let (n, len) = tri.facet_normal(c, i);
        for (&s, &w) in s_pts.iter().zip(&s_wts) {
            let x = tri.facet_point(f, s);
            let an = velocity(&x).dot(&n);
            let value = match roles[f] {
                FacetRole::Interior => continue,
                FacetRole::Dirichlet => an * result.control.evaluate_facet(f, s)?[0],
                FacetRole::Neumann if an < 0.0 => (bc.h_a)(&x, &n)[0],
                FacetRole::Neumann => {
                    let loc = CellLocation {
                        cell: c,
                        barycentric: tri.barycentric(c, &x),
                    };
                    let new = result.state.evaluate(&loc)?[0];
                    let old = psi_star.evaluate(&loc)?[0];
                    an * (ts.theta * new + (1.0 - ts.theta) * old)
                }
            };
            flux += w * len * value;
        }
    }
    Ok(flux)
}

/// Running account of the global balance of a scalar run.
#[derive(Clone, Copy, Debug, Default)]
pub struct MassLedger {
    pub initial: f64,
    /// Time-integrated boundary outflow.
    pub outflow: f64,
}

impl MassLedger {
    pub fn new(phi0: &DiscreteField, tri: &Triangulation) -> Result<Self, BenchError> {
        Ok(Self {
            initial: integrate(phi0, tri)?[0],
            outflow: 0.0,
        })
    }

    pub fn record_step(&mut self, flux: f64, dt: f64) {
        self.outflow += dt * flux;
    }

    pub fn error(&self, phi: &DiscreteField, tri: &Triangulation) -> Result<f64, BenchError> {
        Ok(global_mass_error(
            integrate(phi, tri)?[0],
            self.initial,
            self.outflow,
        ))
    }
}
