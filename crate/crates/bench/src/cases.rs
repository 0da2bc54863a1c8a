//! Geometry, velocity fields, initial data and exact solutions of the cases.

use std::f64::consts::PI;

use pmhdg_core::mesh::{generate_disk, generate_periodic_rectangle, generate_rectangle};
use pmhdg_core::{BoundaryMarker, Diagonal, Point, Triangulation};

use crate::config::{BenchmarkConfig, Case};
use crate::poiseuille::PoiseuilleSeries;
use crate::BenchError;

pub const DISK_RADIUS_SQ: f64 = 0.5;
pub const HUMP_SIGMA: f64 = 0.1;
pub const HUMP_CENTRE: [f64; 2] = [-0.15, 0.0];
pub const CHANNEL_HALF_WIDTH: f64 = 0.25;

/// Shape radius and slot width of the rigid-rotation bodies.
pub const BODY_RADIUS: f64 = 0.15;
pub const SLOT_WIDTH: f64 = 0.05;

pub fn mesh(cfg: &BenchmarkConfig) -> Result<Triangulation, BenchError> {
    let n = cfg.mesh_n;
    let tri = match cfg.case {
        Case::GaussianHump | Case::RigidRotation => generate_disk(DISK_RADIUS_SQ.sqrt(), n)?,
        Case::SkewAdvection => generate_rectangle(
            n,
            n,
            Point::new(0.0, 0.0),
            Point::new(1.0, 1.0),
            Diagonal::Right,
        )?
        .with_boundary_markers(|_, _| BoundaryMarker::DirichletInflowOnly),
        Case::Poiseuille => generate_periodic_rectangle(
            2 * n,
            n,
            Point::new(0.0, -CHANNEL_HALF_WIDTH),
            Point::new(1.0, CHANNEL_HALF_WIDTH),
            Diagonal::Right,
            [true, false],
        )?,
        Case::TaylorGreen => {
            let [lx, ly] = cfg.domain();
            generate_periodic_rectangle(
                n,
                n,
                Point::new(-lx / 2.0, -ly / 2.0),
                Point::new(lx / 2.0, ly / 2.0),
                Diagonal::Right,
                [true, true],
            )?
        }
    };
    Ok(tri)
}

/// Solid-body rotation with angular velocity π; the amplitude scales it.
pub fn rotation(x: &Point) -> Point {
    Point::new(-PI * x.y, PI * x.x)
}

/// Position in the frame rotating with the flow: `x` rotated back by `π t`.
fn rotate_back(x: &Point, t: f64) -> Point {
    let (s, c) = (PI * t).sin_cos();
    Point::new(x.x * c + x.y * s, -x.x * s + x.y * c)
}

fn skew_direction(cfg: &BenchmarkConfig) -> Point {
    let a = cfg.skew_angle.to_radians();
    Point::new(a.cos(), a.sin())
}

/// Transport velocity of the scalar cases.
pub fn transport(cfg: &BenchmarkConfig) -> Box<dyn Fn(&Point) -> Point + Send + Sync> {
    match cfg.case {
        Case::GaussianHump | Case::RigidRotation => {
            let w = cfg.amplitude;
            Box::new(move |x| w * rotation(x))
        }
        _ => {
            let d = skew_direction(cfg);
            Box::new(move |_| d)
        }
    }
}

/// Spreading Gaussian pulse rotated by the angle `π turns`.
pub fn gaussian_hump(x: &Point, t: f64, turns: f64, kappa: f64) -> f64 {
    let xb = rotate_back(x, turns);
    let s2 = 2.0 * HUMP_SIGMA * HUMP_SIGMA;
    let spread = s2 + 4.0 * kappa * t;
    let r2 = (xb.x - HUMP_CENTRE[0]).powi(2) + (xb.y - HUMP_CENTRE[1]).powi(2);
    s2 / spread * (-r2 / spread).exp()
}

/// Cone, slotted disk and smooth hump of unit height.
pub fn rigid_bodies(x: &Point) -> f64 {
    let r = |c: [f64; 2]| ((x.x - c[0]).powi(2) + (x.y - c[1]).powi(2)).sqrt() / BODY_RADIUS;
    let cone = r([-0.3, 0.0]);
    if cone <= 1.0 {
        return 1.0 - cone;
    }
    let disk = [0.0, -0.3];
    if r(disk) <= 1.0 {
        let in_slot =
            (x.x - disk[0]).abs() < 0.5 * SLOT_WIDTH && x.y < disk[1] + 2.0 * BODY_RADIUS / 3.0;
        return if in_slot { 0.0 } else { 1.0 };
    }
    let hump = r([0.15, 0.15]);
    if hump <= 1.0 {
        return 0.25 * (1.0 + (PI * hump).cos());
    }
    0.0
}

/// Steady skew solution: unity above the line through the origin along
/// the transport direction.
pub fn skew_front(x: &Point, angle_deg: f64) -> f64 {
    if x.y > x.x * angle_deg.to_radians().tan() {
        1.0
    } else {
        0.0
    }
}

/// Exact scalar solution of the scalar cases.
pub fn exact_scalar(cfg: &BenchmarkConfig) -> Box<dyn Fn(&Point, f64) -> f64 + Send + Sync> {
    let kappa = cfg.kappa;
    let angle = cfg.skew_angle;
    match cfg.case {
        Case::GaussianHump => {
            let w = cfg.amplitude;
            Box::new(move |x, t| gaussian_hump(x, t, w * t, kappa))
        }
        Case::RigidRotation => {
            let w = cfg.amplitude;
            Box::new(move |x, t| rigid_bodies(&rotate_back(x, w * t)))
        }
        Case::SkewAdvection => Box::new(move |x, _| skew_front(x, angle)),
        _ => Box::new(|_, _| 0.0),
    }
}

/// Initial particle data of the scalar cases.
pub fn initial_scalar(cfg: &BenchmarkConfig) -> Box<dyn Fn(&Point) -> f64 + Send + Sync> {
    let exact = exact_scalar(cfg);
    Box::new(move |x| exact(x, 0.0))
}

/// Value assigned to particles entering the skew domain.
pub fn inflow_scalar(cfg: &BenchmarkConfig) -> impl Fn(&Point) -> f64 + Send + Sync {
    let angle = cfg.skew_angle;
    move |x| skew_front(x, angle)
}

/// Taylor–Green vortex array; reduces to the classical form for equal wavelengths.
#[derive(Clone, Copy, Debug)]
pub struct TaylorGreen {
    pub amplitude: f64,
    pub nu: f64,
    pub k: [f64; 2],
}

impl TaylorGreen {
    pub fn new(cfg: &BenchmarkConfig) -> Self {
        Self {
            amplitude: cfg.amplitude,
            nu: cfg.nu,
            k: [2.0 * PI / cfg.wavelength[0], 2.0 * PI / cfg.wavelength[1]],
        }
    }

    fn decay(&self, t: f64) -> f64 {
        (-self.nu * (self.k[0].powi(2) + self.k[1].powi(2)) * t).exp()
    }

    pub fn velocity(&self, x: &Point, t: f64) -> [f64; 2] {
        let [a, b] = self.k;
        let u = self.amplitude * self.decay(t);
        [
            -u * (a * x.x).cos() * (b * x.y).sin(),
            u * a / b * (a * x.x).sin() * (b * x.y).cos(),
        ]
    }

    pub fn pressure(&self, x: &Point, t: f64) -> f64 {
        let [a, b] = self.k;
        let e = self.amplitude.powi(2) * self.decay(t).powi(2);
        -0.25 * e * ((2.0 * a * x.x).cos() + (a / b).powi(2) * (2.0 * b * x.y).cos())
    }
}

/// Divergence-free multi-mode perturbation of unit peak size, periodic on a
/// box of side lengths `domain`. Modes with 2..=5 periods along each axis get
/// fixed pseudo-random phases.
pub fn perturbation(x: &Point, domain: [f64; 2]) -> [f64; 2] {
    let k0 = [2.0 * PI / domain[0], 2.0 * PI / domain[1]];
    let mut u = [0.0; 2];
    let mut norm = 0.0;
    for m in 2..=5 {
        for n in 2..=5 {
            let phase = (0.7 * (m * 7 + n * 13) as f64).sin() * PI;
            let (a, b) = (m as f64 * k0[0], n as f64 * k0[1]);
            let w = 1.0 / (m * m + n * n) as f64;
            // Velocity of the stream function w sin(a x + phase) sin(b y).
            let arg = a * x.x + phase;
            u[0] += w * b * arg.sin() * (b * x.y).cos();
            u[1] -= w * a * arg.cos() * (b * x.y).sin();
            norm += w * (a + b);
        }
    }
    [u[0] / norm, u[1] / norm]
}

/// Exact velocity and pressure of the flow cases.
pub fn exact_flow(
    cfg: &BenchmarkConfig,
) -> (
    Box<dyn Fn(&Point, f64) -> [f64; 2] + Send + Sync>,
    Box<dyn Fn(&Point, f64) -> f64 + Send + Sync>,
) {
    match cfg.case {
        Case::Poiseuille => {
            let series = PoiseuilleSeries::new(cfg.nu, body_force(cfg), CHANNEL_HALF_WIDTH);
            (
                Box::new(move |x, t| [series.velocity(x.y, t), 0.0]),
                Box::new(|_, _| 0.0),
            )
        }
        _ => {
            let tg = TaylorGreen::new(cfg);
            (
                Box::new(move |x, t| tg.velocity(x, t)),
                Box::new(move |x, t| tg.pressure(x, t)),
            )
        }
    }
}

/// Initial particle velocity of the flow cases.
pub fn initial_velocity(cfg: &BenchmarkConfig) -> Box<dyn Fn(&Point) -> [f64; 2] + Send + Sync> {
    match cfg.case {
        Case::Poiseuille => Box::new(|_| [0.0; 2]),
        _ => {
            let tg = TaylorGreen::new(cfg);
            let (eps, wl) = (cfg.perturbation * cfg.amplitude, cfg.domain());
            Box::new(move |x| {
                let u = tg.velocity(x, 0.0);
                let d = perturbation(x, wl);
                [u[0] + eps * d[0], u[1] + eps * d[1]]
            })
        }
    }
}

/// Axial body force driving the channel flow to centreline velocity `amplitude`.
pub fn body_force(cfg: &BenchmarkConfig) -> f64 {
    match cfg.case {
        Case::Poiseuille => 2.0 * cfg.nu * cfg.amplitude / CHANNEL_HALF_WIDTH.powi(2),
        _ => 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grad(f: impl Fn(&Point) -> f64, x: &Point) -> [f64; 2] {
        let e = 1e-6;
        [
            (f(&(x + Point::new(e, 0.0))) - f(&(x - Point::new(e, 0.0)))) / (2.0 * e),
            (f(&(x + Point::new(0.0, e))) - f(&(x - Point::new(0.0, e)))) / (2.0 * e),
        ]
    }

    #[test]
    fn gaussian_solves_advection_diffusion() {
        let (kappa, t, e) = (0.01, 0.3, 1e-5);
        let x = Point::new(-0.1, 0.05);
        let f = |p: &Point, t: f64| gaussian_hump(p, t, t, kappa);
        let dt = (f(&x, t + e) - f(&x, t - e)) / (2.0 * e);
        let g = grad(|p| f(p, t), &x);
        let a = rotation(&x);
        let lap = {
            let h = 1e-4;
            let c = f(&x, t);
            (f(&(x + Point::new(h, 0.0)), t)
                + f(&(x - Point::new(h, 0.0)), t)
                + f(&(x + Point::new(0.0, h)), t)
                + f(&(x - Point::new(0.0, h)), t)
                - 4.0 * c)
                / (h * h)
        };
        let residual = dt + a.x * g[0] + a.y * g[1] - kappa * lap;
        assert!(residual.abs() < 1e-5, "residual {residual}");
    }

    #[test]
    fn half_rotation_moves_hump_to_opposite_side() {
        let v = gaussian_hump(&Point::new(0.15, 0.0), 1.0, 1.0, 0.0);
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rigid_bodies_shapes() {
        assert_eq!(rigid_bodies(&Point::new(-0.3, 0.0)), 1.0);
        assert_eq!(rigid_bodies(&Point::new(0.0, -0.25)), 0.0);
        assert_eq!(rigid_bodies(&Point::new(0.1, -0.3)), 1.0);
        assert!((rigid_bodies(&Point::new(0.15, 0.15)) - 0.5).abs() < 1e-15);
        assert_eq!(rigid_bodies(&Point::new(0.5, 0.5)), 0.0);
    }

    #[test]
    fn taylor_green_satisfies_navier_stokes() {
        let tg = TaylorGreen {
            amplitude: 1.0,
            nu: 0.02,
            k: [PI, 2.0 * PI],
        };
        let (x, t, e) = (Point::new(0.3, -0.2), 0.4, 1e-4);
        for comp in 0..2 {
            let u = |p: &Point, s: f64| tg.velocity(p, s)[comp];
            let dudt = (u(&x, t + e) - u(&x, t - e)) / (2.0 * e);
            let g = grad(|p| u(p, t), &x);
            let gp = grad(|p| tg.pressure(p, t), &x);
            let lap = (u(&(x + Point::new(e, 0.0)), t)
                + u(&(x - Point::new(e, 0.0)), t)
                + u(&(x + Point::new(0.0, e)), t)
                + u(&(x - Point::new(0.0, e)), t)
                - 4.0 * u(&x, t))
                / (e * e);
            let v = tg.velocity(&x, t);
            let r = dudt + v[0] * g[0] + v[1] * g[1] + gp[comp] - tg.nu * lap;
            assert!(r.abs() < 1e-5, "component {comp}: {r}");
        }
        let div = grad(|p| tg.velocity(p, t)[0], &x)[0] + grad(|p| tg.velocity(p, t)[1], &x)[1];
        assert!(div.abs() < 1e-8);
    }

    #[test]
    fn perturbation_is_divergence_free_and_periodic() {
        let wl = [2.0, 2.0];
        let x = Point::new(0.37, -0.61);
        let div = grad(|p| perturbation(p, wl)[0], &x)[0] + grad(|p| perturbation(p, wl)[1], &x)[1];
        assert!(div.abs() < 1e-7);
        let a = perturbation(&x, wl);
        let b = perturbation(&(x + Point::new(2.0, -2.0)), wl);
        assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
    }

    #[test]
    fn meshes_match_requested_sizes() {
        let cfg = BenchmarkConfig::preset(Case::Poiseuille);
        assert_eq!(mesh(&cfg).unwrap().n_cells(), 64);
        assert_eq!(mesh(&cfg.refined(1)).unwrap().n_cells(), 256);
        let cfg = BenchmarkConfig::preset(Case::TaylorGreen);
        assert_eq!(mesh(&cfg).unwrap().n_cells(), 128);
        let cfg = BenchmarkConfig::preset(Case::RigidRotation);
        assert!(mesh(&cfg).unwrap().n_cells() >= 4000);
    }
}
