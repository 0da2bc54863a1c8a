//! Lagrangian particle sets: seeding, host-cell tracking, advection through
//! prescribed or mesh velocity fields, inflow insertion and outflow removal.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{Point, Triangulation};
use crate::spaces::DiscreteField;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeedingMode {
    /// `target_per_cell` uniformly random points in every cell.
    Random,
    /// The same rank-1 lattice mapped into every cell.
    Lattice,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedingConfig {
    pub mode: SeedingMode,
    pub target_per_cell: usize,
    pub rng_seed: u64,
}

#[derive(Clone, Debug, Default)]
pub struct ParticleSet {
    pub positions: Vec<Point>,
    /// Position at the start of the last advection step.
    pub previous_positions: Vec<Point>,
    pub host: Vec<usize>,
    pub previous_host: Vec<usize>,
    pub scalar: Option<Vec<f64>>,
    pub vector: Option<Vec<[f64; 2]>>,
    pub alive: Vec<bool>,
    /// False until the particle has completed one advection step; such
    /// particles have no valid previous position for multistep schemes.
    pub has_history: Vec<bool>,
}

/// Particle indices grouped by host cell (CSR layout).
#[derive(Clone, Debug)]
pub struct CellBins {
    pub offsets: Vec<usize>,
    pub particles: Vec<usize>,
}

impl CellBins {
    pub fn cell(&self, c: usize) -> &[usize] {
        &self.particles[self.offsets[c]..self.offsets[c + 1]]
    }

    pub fn count(&self, c: usize) -> usize {
        self.offsets[c + 1] - self.offsets[c]
    }

    pub fn min_count(&self) -> usize {
        self.offsets
            .windows(2)
            .map(|w| w[1] - w[0])
            .min()
            .unwrap_or(0)
    }
}

fn sample_in_cell(tri: &Triangulation, c: usize, rng: &mut impl Rng) -> Point {
    let (mut u, mut v): (f64, f64) = (rng.gen(), rng.gen());
    if u + v > 1.0 {
        u = 1.0 - u;
        v = 1.0 - v;
    }
    tri.geometry(c).to_physical([u, v])
}

/// Interior points of the reference triangle from a folded rank-1 lattice.
pub fn lattice_points(n: usize) -> Vec<[f64; 2]> {
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    (0..n)
        .map(|i| {
            let u = (i as f64 + 0.5) / n as f64;
            let v = ((i as f64 + 0.5) * phi).fract();
            if u + v > 1.0 {
                [1.0 - u, 1.0 - v]
            } else {
                [u, v]
            }
        })
        .collect()
}

impl ParticleSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    fn push(&mut self, x: Point, cell: usize, scalar: Option<f64>, vector: Option<[f64; 2]>) {
        self.positions.push(x);
        self.previous_positions.push(x);
        self.host.push(cell);
        self.previous_host.push(cell);
        self.alive.push(true);
        self.has_history.push(false);
        if let (Some(s), Some(v)) = (self.scalar.as_mut(), scalar) {
            s.push(v);
        }
        if let (Some(s), Some(v)) = (self.vector.as_mut(), vector) {
            s.push(v);
        }
    }

    pub fn bins(&self, n_cells: usize) -> CellBins {
        let mut offsets = vec![0; n_cells + 1];
        for (p, &c) in self.host.iter().enumerate() {
            if self.alive[p] {
                offsets[c + 1] += 1;
            }
        }
        for c in 0..n_cells {
            offsets[c + 1] += offsets[c];
        }
        let mut fill = offsets.clone();
        let mut particles = vec![0; offsets[n_cells]];
        for (p, &c) in self.host.iter().enumerate() {
            if self.alive[p] {
                particles[fill[c]] = p;
                fill[c] += 1;
            }
        }
        CellBins { offsets, particles }
    }

    pub fn n_alive(&self) -> usize {
        self.alive.iter().filter(|&&a| a).count()
    }

    /// Removes dead particles by swap-remove.
    pub fn compact(&mut self) {
        let mut p = 0;
        while p < self.positions.len() {
            if self.alive[p] {
                p += 1;
                continue;
            }
            self.positions.swap_remove(p);
            self.previous_positions.swap_remove(p);
            self.host.swap_remove(p);
            self.previous_host.swap_remove(p);
            self.alive.swap_remove(p);
            self.has_history.swap_remove(p);
            if let Some(s) = self.scalar.as_mut() {
                s.swap_remove(p);
            }
            if let Some(v) = self.vector.as_mut() {
                v.swap_remove(p);
            }
        }
    }

    /// Writes `x y [psi] [vx vy]` rows under a header line.
    pub fn write_dump(&self, mut w: impl Write) -> std::io::Result<()> {
        let mut header = String::from("x y");
        if self.scalar.is_some() {
            header.push_str(" psi");
        }
        if self.vector.is_some() {
            header.push_str(" vx vy");
        }
        writeln!(w, "{header}")?;
        for p in (0..self.len()).filter(|&p| self.alive[p]) {
            let x = self.positions[p];
            write!(w, "{:.17e} {:.17e}", x.x, x.y)?;
            if let Some(s) = &self.scalar {
                write!(w, " {:.17e}", s[p])?;
            }
            if let Some(v) = &self.vector {
                write!(w, " {:.17e} {:.17e}", v[p][0], v[p][1])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

pub fn seed(
    tri: &Triangulation,
    cfg: &SeedingConfig,
    init_scalar: Option<&dyn Fn(&Point) -> f64>,
    init_vector: Option<&dyn Fn(&Point) -> [f64; 2]>,
) -> Result<ParticleSet> {
    if cfg.target_per_cell == 0 {
        return Err(Error::Parameter(
            "target_per_cell must be at least 1".into(),
        ));
    }
    let mut set = ParticleSet {
        scalar: init_scalar.map(|_| Vec::new()),
        vector: init_vector.map(|_| Vec::new()),
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let lattice = lattice_points(cfg.target_per_cell);
    for c in 0..tri.n_cells() {
        for i in 0..cfg.target_per_cell {
            let x = match cfg.mode {
                SeedingMode::Random => sample_in_cell(tri, c, &mut rng),
                SeedingMode::Lattice => tri.geometry(c).to_physical(lattice[i]),
            };
            set.push(x, c, init_scalar.map(|f| f(&x)), init_vector.map(|f| f(&x)));
        }
    }
    Ok(set)
}

/// Re-locates every alive particle, wrapping periodic coordinates. Particles
/// that left a non-periodic domain are marked dead; returns how many.
pub fn relocate(set: &mut ParticleSet, tri: &Triangulation) -> usize {
    let found: Vec<Option<(Point, usize)>> = (0..set.len())
        .into_par_iter()
        .map(|p| {
            if !set.alive[p] {
                return None;
            }
            let x = tri.wrap_periodic(&set.positions[p]);
            tri.locate_cell(&x, Some(set.host[p]))
                .map(|loc| (x, loc.cell))
        })
        .collect();
    let mut lost = 0;
    for (p, f) in found.into_iter().enumerate() {
        if !set.alive[p] {
            continue;
        }
        match f {
            Some((x, c)) => {
                set.positions[p] = x;
                set.host[p] = c;
            }
            None => {
                set.alive[p] = false;
                lost += 1;
            }
        }
    }
    lost
}

fn begin_step(set: &mut ParticleSet) {
    set.previous_positions.clone_from(&set.positions);
    set.previous_host.clone_from(&set.host);
}

/// Three-stage strong-stability-preserving Runge–Kutta step through an
/// analytic velocity `a(x, t)`. Returns the number of particles lost.
pub fn advect_prescribed_rk3(
    set: &mut ParticleSet,
    tri: &Triangulation,
    a: &(dyn Fn(&Point, f64) -> Point + Sync),
    t: f64,
    dt: f64,
) -> usize {
    begin_step(set);
    set.positions
        .par_iter_mut()
        .zip(&set.alive)
        .for_each(|(x, &alive)| {
            if !alive {
                return;
            }
            let x0 = *x;
            let k1 = a(&x0, t);
            let k2 = a(&(x0 + dt * k1), t + dt);
            let k3 = a(&(x0 + 0.25 * dt * (k1 + k2)), t + 0.5 * dt);
            *x = x0 + dt * ((k1 + k2) / 6.0 + k3 * (2.0 / 3.0));
        });
    let lost = relocate(set, tri);
    set.has_history.fill(true);
    lost
}

/// Second-order Adams–Bashforth step through mesh velocity fields,
/// `x += dt (3/2 u_n(x^n) - 1/2 u_nm1(x^{n-1}))`, with both velocities taken
/// in the cells hosting `x^n` and `x^{n-1}`. Falls back to forward Euler
/// without `u_nm1` or for particles lacking history.
pub fn advect_mesh_ab2(
    set: &mut ParticleSet,
    tri: &Triangulation,
    u_n: &DiscreteField,
    u_nm1: Option<&DiscreteField>,
    dt: f64,
) -> Result<usize> {
    if u_n.components() != 2 || u_nm1.is_some_and(|u| u.components() != 2) {
        return Err(Error::Layout(
            "advecting velocity must be a vector field".into(),
        ));
    }
    let moved: Vec<Result<Option<Point>>> = (0..set.len())
        .into_par_iter()
        .map(|p| {
            if !set.alive[p] {
                return Ok(None);
            }
            let old = match u_nm1 {
                Some(u) if set.has_history[p] => {
                    let xo = set.previous_positions[p];
                    let loc = tri
                        .locate_cell(&xo, Some(set.previous_host[p]))
                        .ok_or(Error::Lost(p))?;
                    Some(u.evaluate(&loc)?)
                }
                _ => None,
            };
            let loc = crate::mesh::CellLocation {
                cell: set.host[p],
                barycentric: tri.barycentric(set.host[p], &set.positions[p]),
            };
            let v = u_n.evaluate(&loc)?;
            let v = match old {
                Some(o) => Point::new(1.5 * v[0] - 0.5 * o[0], 1.5 * v[1] - 0.5 * o[1]),
                None => Point::new(v[0], v[1]),
            };
            Ok(Some(set.positions[p] + dt * v))
        })
        .collect();
    begin_step(set);
    for (p, m) in moved.into_iter().enumerate() {
        if let Some(x) = m? {
            set.positions[p] = x;
        }
    }
    let lost = relocate(set, tri);
    set.has_history.fill(true);
    Ok(lost)
}

/// Inflow boundary facet with the displacement `dt a` of the flow across
/// it during one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InflowFacet {
    pub facet: usize,
    pub shift: Point,
}

/// Attempts per missing particle before falling back to uniform sampling
/// of the inflow cell.
const ENTRY_ATTEMPTS: usize = 64;

/// Tops up the cells behind the listed inflow facets to `target` particles
/// each. New particles are sampled in the region swept across the facet
/// during the step, so samples landing in neighbouring cells are kept too
/// and refill the corners the flow vacated there. Payloads take the
/// boundary data at their positions. Returns the number inserted.
pub fn manage_inflow(
    set: &mut ParticleSet,
    tri: &Triangulation,
    inflow: &[InflowFacet],
    target: usize,
    rng: &mut impl Rng,
    g_scalar: Option<&dyn Fn(&Point) -> f64>,
    g_vector: Option<&dyn Fn(&Point) -> [f64; 2]>,
) -> usize {
    let bins = set.bins(tri.n_cells());
    let mut cells: Vec<(usize, Vec<(InflowFacet, f64)>)> = Vec::new();
    for fi in inflow {
        let (c, i) = tri.facet_adjacency(fi.facet)[0];
        let (n, _) = tri.facet_normal(c, i);
        let weight = tri.facet_length(fi.facet) * (-fi.shift.dot(&n)).max(0.0);
        match cells.iter_mut().find(|(d, _)| *d == c) {
            Some((_, facets)) => facets.push((*fi, weight)),
            None => cells.push((c, vec![(*fi, weight)])),
        }
    }
    let mut inserted = 0;
    let mut push = |set: &mut ParticleSet, x: Point, c: usize| {
        set.push(x, c, g_scalar.map(|g| g(&x)), g_vector.map(|g| g(&x)));
        inserted += 1;
    };
    for (c, facets) in &cells {
        let mut missing = target.saturating_sub(bins.count(*c));
        let total: f64 = facets.iter().map(|(_, w)| w).sum();
        let mut attempts = ENTRY_ATTEMPTS * missing;
        while missing > 0 && total > 0.0 && attempts > 0 {
            attempts -= 1;
            let mut pick = rng.gen::<f64>() * total;
            let (fi, _) = facets
                .iter()
                .find(|(_, w)| {
                    pick -= w;
                    pick < 0.0
                })
                .unwrap_or(&facets[0]);
            let x = tri.facet_point(fi.facet, rng.gen()) + fi.shift * rng.gen::<f64>();
            if let Some(loc) = tri.locate_cell(&x, Some(*c)) {
                if loc.cell == *c {
                    missing -= 1;
                }
                push(set, x, loc.cell);
            }
        }
        for _ in 0..missing {
            let x = sample_in_cell(tri, *c, rng);
            push(set, x, *c);
        }
    }
    inserted
}

/// Rng for inflow insertion at `step`: the seeding stream, offset by step.
pub fn inflow_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64 + 1);
    rng
}
