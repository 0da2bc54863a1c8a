//! Hybridized DG solvers for the Eulerian stages: an interior-penalty
//! diffusion step and an H(div)-conforming unsteady Stokes step. Both are
//! backward Euler in time and solved by static condensation.

mod diffusion;
mod stokes;

use std::sync::Arc;

pub use diffusion::{diffusion_step, DiffusionSolver};
pub use stokes::{
    divergence_infnorm, normal_jump_infnorm, stokes_step, StokesSolution, StokesSolver,
    StokesSpaces,
};

use crate::error::{Error, Result};
use crate::mesh::{BoundaryMarker, CellGeometry, Point};
use crate::spaces::LagrangeBasis;

/// Source or boundary data as a function of position and time.
pub type Data = Arc<dyn Fn(&Point, f64) -> [f64; 2] + Send + Sync>;
/// Boundary flux data as a function of position, outward normal and time.
pub type FluxData = Arc<dyn Fn(&Point, &Point, f64) -> [f64; 2] + Send + Sync>;

/// Physical parameters and data of a diffusion or Stokes stage. Scalar
/// problems read the first component of the data functions.
#[derive(Clone)]
pub struct ProblemSpec {
    /// Diffusivity of scalar problems.
    pub kappa: f64,
    /// Kinematic viscosity of flow problems.
    pub nu: f64,
    /// Interior penalty constant; `None` selects 12k² (diffusion) or 6k² (Stokes).
    pub alpha: Option<f64>,
    pub source: Data,
    /// Dirichlet data on DirichletFull and DirichletInflowOnly facets.
    pub dirichlet: Data,
    /// Diffusive flux `h_d` on Neumann facets.
    pub neumann: FluxData,
}

impl ProblemSpec {
    fn zero() -> Self {
        Self {
            kappa: 0.0,
            nu: 0.0,
            alpha: None,
            source: Arc::new(|_, _| [0.0; 2]),
            dirichlet: Arc::new(|_, _| [0.0; 2]),
            neumann: Arc::new(|_, _, _| [0.0; 2]),
        }
    }

    pub fn diffusion(kappa: f64) -> Self {
        Self {
            kappa,
            ..Self::zero()
        }
    }

    pub fn stokes(nu: f64) -> Self {
        Self { nu, ..Self::zero() }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = Some(alpha);
        self
    }

    pub fn with_source(
        mut self,
        f: impl Fn(&Point, f64) -> [f64; 2] + Send + Sync + 'static,
    ) -> Self {
        self.source = Arc::new(f);
        self
    }

    pub fn with_dirichlet(
        mut self,
        g: impl Fn(&Point, f64) -> [f64; 2] + Send + Sync + 'static,
    ) -> Self {
        self.dirichlet = Arc::new(g);
        self
    }

    pub fn with_neumann(
        mut self,
        h: impl Fn(&Point, &Point, f64) -> [f64; 2] + Send + Sync + 'static,
    ) -> Self {
        self.neumann = Arc::new(h);
        self
    }

    fn diffusion_alpha(&self, k: usize) -> Result<f64> {
        let a = self.alpha.unwrap_or(12.0 * (k * k) as f64);
        if !(a > 0.0) {
            return Err(Error::Parameter(format!("alpha = {a} must be positive")));
        }
        Ok(a)
    }

    fn stokes_alpha(&self, k: usize) -> Result<f64> {
        let a = self.alpha.unwrap_or(6.0 * (k * k) as f64);
        if !(a > 0.0) {
            return Err(Error::Parameter(format!("alpha = {a} must be positive")));
        }
        Ok(a)
    }
}

/// Markers whose facets carry strongly imposed data in the Eulerian stages.
pub const DIRICHLET_MARKERS: [BoundaryMarker; 2] = [
    BoundaryMarker::DirichletFull,
    BoundaryMarker::DirichletInflowOnly,
];

/// Values and physical gradients of `basis` at reference point `xi`.
fn eval_physical(
    basis: &LagrangeBasis,
    geo: &CellGeometry,
    xi: [f64; 2],
    n: &mut [f64],
    g: &mut [[f64; 2]],
) {
    basis.eval(xi, n);
    basis.eval_grad(xi, g);
    let inv = geo.inverse;
    for v in g.iter_mut() {
        *v = [
            inv[(0, 0)] * v[0] + inv[(1, 0)] * v[1],
            inv[(0, 1)] * v[0] + inv[(1, 1)] * v[1],
        ];
    }
}
