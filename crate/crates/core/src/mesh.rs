//! Conforming triangulations with facet topology, boundary markers and
//! periodic facet identification.
//!
//! Local facet `i` of a cell is the edge opposite its vertex `i`. Every facet
//! carries a global orientation `[a, b]`; facet quadrature is parameterised
//! along it so both incident cells see identical physical points.

use std::collections::HashMap;
use std::str::FromStr;

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};

pub type Point = Vector2<f64>;

/// Tolerance on barycentric coordinates for an inside verdict.
pub const LOCATE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoundaryMarker {
    DirichletFull,
    /// Dirichlet where the transport velocity enters, free outflow elsewhere.
    DirichletInflowOnly,
    Neumann,
    Periodic,
}

impl FromStr for BoundaryMarker {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "DirichletFull" | "dirichlet" => Ok(Self::DirichletFull),
            "DirichletInflowOnly" | "inflow" => Ok(Self::DirichletInflowOnly),
            "Neumann" | "neumann" => Ok(Self::Neumann),
            "Periodic" | "periodic" => Ok(Self::Periodic),
            other => Err(Error::Mesh(format!("unknown boundary marker '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Diagonal {
    Left,
    Right,
    Crossed,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellLocation {
    pub cell: usize,
    pub barycentric: [f64; 3],
}

impl CellLocation {
    /// Reference coordinates on the unit triangle (0,0), (1,0), (0,1).
    pub fn reference(&self) -> [f64; 2] {
        [self.barycentric[1], self.barycentric[2]]
    }
}

/// Image of a periodic facet: `x_image = x + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PeriodicImage {
    pub facet: usize,
    pub translation: Point,
}

/// Affine map `x = origin + jacobian * xi` from the reference triangle.
#[derive(Clone, Copy, Debug)]
pub struct CellGeometry {
    pub origin: Point,
    pub jacobian: Matrix2<f64>,
    pub inverse: Matrix2<f64>,
    pub det: f64,
}

impl CellGeometry {
    pub fn area(&self) -> f64 {
        0.5 * self.det
    }

    pub fn to_physical(&self, xi: [f64; 2]) -> Point {
        self.origin + self.jacobian * Vector2::new(xi[0], xi[1])
    }

    pub fn to_reference(&self, x: &Point) -> [f64; 2] {
        let xi = self.inverse * (x - self.origin);
        [xi.x, xi.y]
    }
}

#[derive(Clone, Debug)]
pub struct Triangulation {
    vertices: Vec<Point>,
    cells: Vec<[usize; 3]>,
    facets: Vec<[usize; 2]>,
    facet_cells: Vec<Vec<(usize, usize)>>,
    cell_facets: Vec<[usize; 3]>,
    markers: Vec<Option<BoundaryMarker>>,
    periodic: Vec<Option<PeriodicImage>>,
    geometry: Vec<CellGeometry>,
    h: Vec<f64>,
    vertex_cells: Vec<Vec<usize>>,
    period: [Option<(f64, f64)>; 2],
}

impl Triangulation {
    /// Builds topology from raw vertices and cells. Clockwise cells are
    /// reoriented; degenerate cells are rejected. Boundary facets receive the
    /// marker returned by `marker(midpoint, outward_normal)`. Facets marked
    /// `Periodic` are paired across the axes listed in `period`.
    pub fn from_cells(
        vertices: Vec<Point>,
        mut cells: Vec<[usize; 3]>,
        period: [Option<(f64, f64)>; 2],
        marker: impl Fn(&Point, &Point) -> BoundaryMarker,
    ) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::Mesh("no cells".into()));
        }
        let mut geometry = Vec::with_capacity(cells.len());
        let mut h = Vec::with_capacity(cells.len());
        for (c, cell) in cells.iter_mut().enumerate() {
            if cell.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::Mesh(format!("cell {c} references a missing vertex")));
            }
            let [p0, p1, p2] = cell.map(|v| vertices[v]);
            let det = (p1 - p0).perp(&(p2 - p0));
            let scale = (p1 - p0).norm_squared().max((p2 - p0).norm_squared());
            if det.abs() <= 1e-14 * scale {
                return Err(Error::Mesh(format!("cell {c} is degenerate")));
            }
            if det < 0.0 {
                cell.swap(1, 2);
            }
            let [p0, p1, p2] = cell.map(|v| vertices[v]);
            let jacobian = Matrix2::from_columns(&[p1 - p0, p2 - p0]);
            let inverse = jacobian
                .try_inverse()
                .ok_or_else(|| Error::Mesh(format!("cell {c} is degenerate")))?;
            geometry.push(CellGeometry {
                origin: p0,
                jacobian,
                inverse,
                det: jacobian.determinant(),
            });
            h.push((p1 - p0).norm().max((p2 - p1).norm()).max((p0 - p2).norm()));
        }

        let mut facet_index: HashMap<(usize, usize), usize> = HashMap::new();
        let mut facets = Vec::new();
        let mut facet_cells: Vec<Vec<(usize, usize)>> = Vec::new();
        let mut cell_facets = Vec::with_capacity(cells.len());
        for (c, cell) in cells.iter().enumerate() {
            let mut local = [0; 3];
            for (i, slot) in local.iter_mut().enumerate() {
                let a = cell[(i + 1) % 3];
                let b = cell[(i + 2) % 3];
                let key = (a.min(b), a.max(b));
                let f = *facet_index.entry(key).or_insert_with(|| {
                    facets.push([key.0, key.1]);
                    facet_cells.push(Vec::with_capacity(2));
                    facets.len() - 1
                });
                if facet_cells[f].len() == 2 {
                    return Err(Error::Mesh(format!(
                        "facet ({}, {}) shared by more than two cells",
                        key.0, key.1
                    )));
                }
                facet_cells[f].push((c, i));
                *slot = f;
            }
            cell_facets.push(local);
        }

        let mut vertex_cells = vec![Vec::new(); vertices.len()];
        for (c, cell) in cells.iter().enumerate() {
            for &v in cell {
                vertex_cells[v].push(c);
            }
        }

        let mut mesh = Self {
            vertices,
            cells,
            facets,
            facet_cells,
            cell_facets,
            markers: Vec::new(),
            periodic: Vec::new(),
            geometry,
            h,
            vertex_cells,
            period,
        };
        mesh.markers = vec![None; mesh.facets.len()];
        mesh.periodic = vec![None; mesh.facets.len()];
        for f in 0..mesh.facets.len() {
            if mesh.facet_cells[f].len() == 1 {
                let (c, i) = mesh.facet_cells[f][0];
                let (n, _) = mesh.facet_normal(c, i);
                mesh.markers[f] = Some(marker(&mesh.facet_midpoint(f), &n));
            }
        }
        mesh.pair_periodic()?;
        Ok(mesh)
    }

    fn pair_periodic(&mut self) -> Result<()> {
        for axis in 0..2 {
            let Some((lo, hi)) = self.period[axis] else {
                continue;
            };
            let len = hi - lo;
            let other = 1 - axis;
            let tol = 1e-9 * len.abs().max(1.0);
            let mut low = Vec::new();
            let mut high = Vec::new();
            for f in 0..self.facets.len() {
                if self.markers[f] != Some(BoundaryMarker::Periodic) {
                    continue;
                }
                let [a, b] = self.facets[f];
                let (pa, pb) = (self.vertices[a], self.vertices[b]);
                if (pa[axis] - lo).abs() < tol && (pb[axis] - lo).abs() < tol {
                    low.push(f);
                } else if (pa[axis] - hi).abs() < tol && (pb[axis] - hi).abs() < tol {
                    high.push(f);
                }
            }
            if low.len() != high.len() {
                return Err(Error::Mesh(format!(
                    "periodic sides along axis {axis} have {} and {} facets",
                    low.len(),
                    high.len()
                )));
            }
            let key = |m: &Self, f: usize| m.facet_midpoint(f)[other];
            low.sort_by(|&x, &y| key(self, x).total_cmp(&key(self, y)));
            high.sort_by(|&x, &y| key(self, x).total_cmp(&key(self, y)));
            let mut shift = Point::zeros();
            shift[axis] = len;
            for (&fl, &fh) in low.iter().zip(&high) {
                let [a, b] = self.facets[fl];
                let [c, d] = self.facets[fh];
                let pa = self.vertices[a] + shift;
                if (self.vertices[c] - pa).norm() < tol
                    && (self.vertices[d] - self.vertices[b] - shift).norm() < tol
                {
                } else if (self.vertices[d] - pa).norm() < tol
                    && (self.vertices[c] - self.vertices[b] - shift).norm() < tol
                {
                    self.facets[fh] = [d, c];
                } else {
                    return Err(Error::Mesh(format!(
                        "facets {fl} and {fh} do not match under periodic translation"
                    )));
                }
                self.periodic[fl] = Some(PeriodicImage {
                    facet: fh,
                    translation: shift,
                });
                self.periodic[fh] = Some(PeriodicImage {
                    facet: fl,
                    translation: -shift,
                });
            }
        }
        if let Some(f) = (0..self.facets.len()).find(|&f| {
            self.markers[f] == Some(BoundaryMarker::Periodic) && self.periodic[f].is_none()
        }) {
            return Err(Error::Mesh(format!("periodic facet {f} has no image")));
        }
        Ok(())
    }

    /// Reassigns markers of all non-periodic boundary facets.
    pub fn with_boundary_markers(
        mut self,
        marker: impl Fn(&Point, &Point) -> BoundaryMarker,
    ) -> Self {
        for f in 0..self.facets.len() {
            if self.facet_cells[f].len() == 1 && self.periodic[f].is_none() {
                let (c, i) = self.facet_cells[f][0];
                let (n, _) = self.facet_normal(c, i);
                self.markers[f] = Some(marker(&self.facet_midpoint(f), &n));
            }
        }
        self
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_facets(&self) -> usize {
        self.facets.len()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn cells(&self) -> &[[usize; 3]] {
        &self.cells
    }

    pub fn facet(&self, f: usize) -> [usize; 2] {
        self.facets[f]
    }

    pub fn cell_facets(&self, c: usize) -> [usize; 3] {
        self.cell_facets[c]
    }

    /// `(cell, local facet)` pairs incident to facet `f`.
    pub fn facet_adjacency(&self, f: usize) -> &[(usize, usize)] {
        &self.facet_cells[f]
    }

    pub fn boundary_marker(&self, f: usize) -> Option<BoundaryMarker> {
        self.markers[f]
    }

    pub fn periodic_image(&self, f: usize) -> Option<PeriodicImage> {
        self.periodic[f]
    }

    /// True for facets on the physical (non-periodic) boundary.
    pub fn is_boundary(&self, f: usize) -> bool {
        self.facet_cells[f].len() == 1 && self.periodic[f].is_none()
    }

    pub fn geometry(&self, c: usize) -> &CellGeometry {
        &self.geometry[c]
    }

    pub fn h(&self, c: usize) -> f64 {
        self.h[c]
    }

    pub fn h_max(&self) -> f64 {
        self.h.iter().copied().fold(0.0, f64::max)
    }

    pub fn h_min(&self) -> f64 {
        self.h.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn area(&self, c: usize) -> f64 {
        self.geometry[c].area()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_cells()).map(|c| self.area(c)).sum()
    }

    pub fn centroid(&self, c: usize) -> Point {
        self.cells[c]
            .iter()
            .map(|&v| self.vertices[v])
            .sum::<Point>()
            / 3.0
    }

    pub fn facet_midpoint(&self, f: usize) -> Point {
        let [a, b] = self.facets[f];
        0.5 * (self.vertices[a] + self.vertices[b])
    }

    pub fn facet_length(&self, f: usize) -> f64 {
        let [a, b] = self.facets[f];
        (self.vertices[b] - self.vertices[a]).norm()
    }

    /// Point at parameter `s` in [0, 1] along the facet's global orientation.
    pub fn facet_point(&self, f: usize, s: f64) -> Point {
        let [a, b] = self.facets[f];
        self.vertices[a] + s * (self.vertices[b] - self.vertices[a])
    }

    /// Unit outward normal of local facet `i` of cell `c`, and facet length.
    /// Derived from the facet's global orientation, so the two sides of an
    /// interior facet get exactly opposite normals.
    pub fn facet_normal(&self, c: usize, i: usize) -> (Point, f64) {
        let f = self.cell_facets[c][i];
        let [a, b] = self.facets[f];
        let e = self.vertices[b] - self.vertices[a];
        let len = e.norm();
        let n = Point::new(e.y, -e.x) / len;
        if a == self.cells[c][(i + 1) % 3] {
            (n, len)
        } else {
            (-n, len)
        }
    }

    /// Cell on the other side of local facet `i`, ignoring periodic images.
    pub fn neighbor(&self, c: usize, i: usize) -> Option<(usize, usize)> {
        let f = self.cell_facets[c][i];
        self.facet_cells[f].iter().copied().find(|&(n, _)| n != c)
    }

    pub fn is_periodic(&self) -> bool {
        self.period.iter().any(Option::is_some)
    }

    pub fn period(&self) -> [Option<(f64, f64)>; 2] {
        self.period
    }

    /// Maps a point into the fundamental periodic box; identity on
    /// non-periodic axes.
    pub fn wrap_periodic(&self, p: &Point) -> Point {
        let mut q = *p;
        for axis in 0..2 {
            if let Some((lo, hi)) = self.period[axis] {
                let len = hi - lo;
                if q[axis] < lo || q[axis] >= hi {
                    q[axis] = lo + (q[axis] - lo).rem_euclid(len);
                }
            }
        }
        q
    }

    pub fn barycentric(&self, c: usize, p: &Point) -> [f64; 3] {
        let [x, y] = self.geometry[c].to_reference(p);
        [1.0 - x - y, x, y]
    }

    fn contains(&self, c: usize, p: &Point) -> Option<[f64; 3]> {
        let b = self.barycentric(c, p);
        b.iter().all(|&v| v >= -LOCATE_TOL).then_some(b)
    }

    /// Finds the cell containing `p` (after periodic wrapping) by a
    /// visibility walk from `hint`, falling back to an exhaustive scan.
    /// Points on shared facets or vertices go to the lowest-index cell.
    pub fn locate_cell(&self, p: &Point, hint: Option<usize>) -> Option<CellLocation> {
        let p = self.wrap_periodic(p);
        let mut c = hint.filter(|&c| c < self.n_cells()).unwrap_or(0);
        let mut prev = usize::MAX;
        for _ in 0..self.n_cells() {
            let b = self.barycentric(c, &p);
            let mut order = [0, 1, 2];
            order.sort_by(|&i, &j| b[i].total_cmp(&b[j]));
            if b[order[0]] >= -LOCATE_TOL {
                return Some(self.resolve_ties(c, b, &p));
            }
            let next = order
                .iter()
                .take_while(|&&i| b[i] < -LOCATE_TOL)
                .filter_map(|&i| self.neighbor(c, i))
                .map(|(n, _)| n)
                .find(|&n| n != prev);
            match next {
                Some(n) => {
                    prev = c;
                    c = n;
                }
                None => break,
            }
        }
        self.locate_exhaustive(&p)
    }

    /// Reference search over all cells; lowest containing index wins.
    pub fn locate_exhaustive(&self, p: &Point) -> Option<CellLocation> {
        let p = self.wrap_periodic(p);
        (0..self.n_cells()).find_map(|c| {
            self.contains(c, &p).map(|barycentric| CellLocation {
                cell: c,
                barycentric,
            })
        })
    }

    fn resolve_ties(&self, c: usize, b: [f64; 3], p: &Point) -> CellLocation {
        let mut best = CellLocation {
            cell: c,
            barycentric: b,
        };
        if b.iter().all(|&v| v > LOCATE_TOL) {
            return best;
        }
        for &v in &self.cells[c] {
            for &n in &self.vertex_cells[v] {
                if n < best.cell {
                    if let Some(bn) = self.contains(n, p) {
                        best = CellLocation {
                            cell: n,
                            barycentric: bn,
                        };
                    }
                }
            }
        }
        best
    }

    /// Reads the plain-text mesh format:
    ///
    /// ```text
    /// vertices N / cells M
    /// x y            (N lines)
    /// i j k          (M lines)
    /// facet i j MARKER
    /// ```
    ///
    /// Boundary facets without a marker line default to `DirichletFull`.
    /// `Periodic` facets are paired across the bounding box.
    pub fn from_ascii(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (ln, header) = lines.next().ok_or(Error::MeshParse {
            line: 0,
            msg: "empty mesh file".into(),
        })?;
        let tokens: Vec<&str> = header.split_whitespace().filter(|t| *t != "/").collect();
        let (nv, nc) = match tokens.as_slice() {
            ["vertices", n, "cells", m] => (parse_num::<usize>(n, ln)?, parse_num::<usize>(m, ln)?),
            _ => {
                return Err(Error::MeshParse {
                    line: ln,
                    msg: "expected 'vertices N / cells M'".into(),
                })
            }
        };
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (ln, l) = lines.next().ok_or(Error::MeshParse {
                line: 0,
                msg: "missing vertex lines".into(),
            })?;
            let t: Vec<&str> = l.split_whitespace().collect();
            if t.len() != 2 {
                return Err(Error::MeshParse {
                    line: ln,
                    msg: "expected 'x y'".into(),
                });
            }
            vertices.push(Point::new(parse_num(t[0], ln)?, parse_num(t[1], ln)?));
        }
        let mut cells = Vec::with_capacity(nc);
        for _ in 0..nc {
            let (ln, l) = lines.next().ok_or(Error::MeshParse {
                line: 0,
                msg: "missing cell lines".into(),
            })?;
            let t: Vec<&str> = l.split_whitespace().collect();
            if t.len() != 3 {
                return Err(Error::MeshParse {
                    line: ln,
                    msg: "expected 'i j k'".into(),
                });
            }
            cells.push([
                parse_num(t[0], ln)?,
                parse_num(t[1], ln)?,
                parse_num(t[2], ln)?,
            ]);
        }
        let mut marks = HashMap::new();
        for (ln, l) in lines {
            let t: Vec<&str> = l.split_whitespace().collect();
            match t.as_slice() {
                ["facet", i, j, m] => {
                    let i: usize = parse_num(i, ln)?;
                    let j: usize = parse_num(j, ln)?;
                    let marker = m.parse::<BoundaryMarker>().map_err(|e| Error::MeshParse {
                        line: ln,
                        msg: e.to_string(),
                    })?;
                    marks.insert((i.min(j), i.max(j)), marker);
                }
                _ => {
                    return Err(Error::MeshParse {
                        line: ln,
                        msg: "expected 'facet i j MARKER'".into(),
                    })
                }
            }
        }
        let periodic_used = marks.values().any(|m| *m == BoundaryMarker::Periodic);
        let period = if periodic_used {
            let (lo, hi) = bounding_box(&vertices);
            [Some((lo.x, hi.x)), Some((lo.y, hi.y))]
        } else {
            [None, None]
        };
        let mut mesh = Self::from_cells(vertices, cells, [None, None], |_, _| {
            BoundaryMarker::DirichletFull
        })?;
        for f in 0..mesh.n_facets() {
            let [a, b] = mesh.facets[f];
            if let Some(&m) = marks.get(&(a, b)) {
                if mesh.facet_cells[f].len() != 1 {
                    return Err(Error::Mesh(format!("marker on interior facet ({a}, {b})")));
                }
                mesh.markers[f] = Some(m);
            }
        }
        if periodic_used {
            // Only axes with facets on both sides of the box become periodic.
            mesh.period = period;
            for axis in 0..2 {
                let (lo, hi) = period[axis].unwrap_or_default();
                let on_side = |m: &Self, x: f64| {
                    (0..m.n_facets()).any(|f| {
                        m.markers[f] == Some(BoundaryMarker::Periodic)
                            && m.facets[f]
                                .iter()
                                .all(|&v| (m.vertices[v][axis] - x).abs() < 1e-9)
                    })
                };
                if !(on_side(&mesh, lo) && on_side(&mesh, hi)) {
                    mesh.period[axis] = None;
                }
            }
            mesh.pair_periodic()?;
        }
        Ok(mesh)
    }
}

fn parse_num<T: FromStr>(s: &str, line: usize) -> Result<T> {
    s.parse().map_err(|_| Error::MeshParse {
        line,
        msg: format!("cannot parse '{s}'"),
    })
}

fn bounding_box(points: &[Point]) -> (Point, Point) {
    points.iter().fold(
        (
            Point::repeat(f64::INFINITY),
            Point::repeat(f64::NEG_INFINITY),
        ),
        |(lo, hi), p| (lo.inf(p), hi.sup(p)),
    )
}

/// Structured `nx × ny` rectangle split into triangles; all boundary facets
/// are `DirichletFull`.
pub fn generate_rectangle(
    nx: usize,
    ny: usize,
    lo: Point,
    hi: Point,
    diagonal: Diagonal,
) -> Result<Triangulation> {
    generate_periodic_rectangle(nx, ny, lo, hi, diagonal, [false, false])
}

/// Rectangle with optional periodicity in x and/or y.
pub fn generate_periodic_rectangle(
    nx: usize,
    ny: usize,
    lo: Point,
    hi: Point,
    diagonal: Diagonal,
    periodic: [bool; 2],
) -> Result<Triangulation> {
    if nx == 0 || ny == 0 {
        return Err(Error::Mesh(
            "rectangle needs at least one cell per direction".into(),
        ));
    }
    if !(hi.x > lo.x && hi.y > lo.y) {
        return Err(Error::Mesh("degenerate bounding box".into()));
    }
    let dx = (hi.x - lo.x) / nx as f64;
    let dy = (hi.y - lo.y) / ny as f64;
    let node = |i: usize, j: usize| j * (nx + 1) + i;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            // Pin the last row/column to the bounds exactly.
            let x = if i == nx { hi.x } else { lo.x + i as f64 * dx };
            let y = if j == ny { hi.y } else { lo.y + j as f64 * dy };
            vertices.push(Point::new(x, y));
        }
    }
    let mut cells = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let (v00, v10, v01, v11) = (
                node(i, j),
                node(i + 1, j),
                node(i, j + 1),
                node(i + 1, j + 1),
            );
            match diagonal {
                Diagonal::Right => {
                    cells.push([v00, v10, v11]);
                    cells.push([v00, v11, v01]);
                }
                Diagonal::Left => {
                    cells.push([v00, v10, v01]);
                    cells.push([v10, v11, v01]);
                }
                Diagonal::Crossed => {
                    let m = vertices.len();
                    vertices.push(Point::new(
                        lo.x + (i as f64 + 0.5) * dx,
                        lo.y + (j as f64 + 0.5) * dy,
                    ));
                    cells.push([v00, v10, m]);
                    cells.push([v10, v11, m]);
                    cells.push([v11, v01, m]);
                    cells.push([v01, v00, m]);
                }
            }
        }
    }
    let period = [
        periodic[0].then_some((lo.x, hi.x)),
        periodic[1].then_some((lo.y, hi.y)),
    ];
    let tol = 1e-9 * (hi - lo).norm();
    Triangulation::from_cells(vertices, cells, period, |m, _| {
        let on_x = (m.x - lo.x).abs() < tol || (m.x - hi.x).abs() < tol;
        let on_y = (m.y - lo.y).abs() < tol || (m.y - hi.y).abs() < tol;
        if (on_x && periodic[0]) || (on_y && periodic[1]) {
            BoundaryMarker::Periodic
        } else {
            BoundaryMarker::DirichletFull
        }
    })
}

/// Disk of the given radius centred at the origin. Ring `r` carries `6r`
/// vertices, giving `6 n²` cells of nearly uniform size. Boundary facets are
/// `DirichletFull`.
pub fn generate_disk(radius: f64, n_rings: usize) -> Result<Triangulation> {
    if n_rings == 0 || radius <= 0.0 {
        return Err(Error::Mesh(
            "disk needs positive radius and at least one ring".into(),
        ));
    }
    let mut vertices = vec![Point::zeros()];
    let ring_start = |r: usize| if r == 0 { 0 } else { 1 + 3 * r * (r - 1) };
    for r in 1..=n_rings {
        let rad = radius * r as f64 / n_rings as f64;
        let count = 6 * r;
        for j in 0..count {
            let angle = 2.0 * std::f64::consts::PI * j as f64 / count as f64;
            vertices.push(Point::new(rad * angle.cos(), rad * angle.sin()));
        }
    }
    let ring_vertex = |r: usize, j: usize| {
        if r == 0 {
            0
        } else {
            ring_start(r) + j % (6 * r)
        }
    };
    let mut cells = Vec::with_capacity(6 * n_rings * n_rings);
    for r in 1..=n_rings {
        for s in 0..6 {
            for j in 0..r {
                let inner = ring_vertex(r - 1, s * (r - 1) + j);
                let o0 = ring_vertex(r, s * r + j);
                let o1 = ring_vertex(r, s * r + j + 1);
                cells.push([inner, o0, o1]);
                if j + 1 < r {
                    let inner_next = ring_vertex(r - 1, s * (r - 1) + j + 1);
                    cells.push([inner, o1, inner_next]);
                }
            }
        }
    }
    Triangulation::from_cells(vertices, cells, [None, None], |_, _| {
        BoundaryMarker::DirichletFull
    })
}
