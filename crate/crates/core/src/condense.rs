//! Static condensation: eliminate cell-local unknowns, solve the global facet
//! system with a sparse direct factorization, back-substitute.
//!
//! Right-hand sides are matrices so several loads sharing one operator (the
//! components of a vector projection) go through a single factorization.

use std::collections::BTreeMap;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use nalgebra::{DMatrix, Dyn, LU};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Element contribution in block form. `local_dofs` index the global local
/// vector, `facet_dofs` the global facet vector.
#[derive(Clone, Debug)]
pub struct LocalSystem {
    pub cell: usize,
    pub a_ll: DMatrix<f64>,
    pub a_lg: DMatrix<f64>,
    pub a_gl: DMatrix<f64>,
    pub a_gg: DMatrix<f64>,
    pub b_l: DMatrix<f64>,
    pub b_g: DMatrix<f64>,
    pub local_dofs: Vec<usize>,
    pub facet_dofs: Vec<usize>,
}

impl LocalSystem {
    fn check(&self) -> Result<()> {
        let (nl, ng) = (self.local_dofs.len(), self.facet_dofs.len());
        let ok = self.a_ll.shape() == (nl, nl)
            && self.a_lg.shape() == (nl, ng)
            && self.a_gl.shape() == (ng, nl)
            && self.a_gg.shape() == (ng, ng)
            && self.b_l.nrows() == nl
            && self.b_g.nrows() == ng
            && self.b_l.ncols() == self.b_g.ncols();
        if ok {
            Ok(())
        } else {
            Err(Error::Layout(format!(
                "cell {}: inconsistent block shapes",
                self.cell
            )))
        }
    }
}

/// Strongly imposed facet values, keyed by facet dof. A value applies to all
/// right-hand sides unless set per column with [`Constraints::insert_columns`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Constraints {
    values: BTreeMap<usize, Vec<f64>>,
}

impl Constraints {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, dof: usize, value: f64) {
        self.values.insert(dof, vec![value]);
    }

    pub fn insert_columns(&mut self, dof: usize, values: Vec<f64>) {
        self.values.insert(dof, values);
    }

    pub fn contains(&self, dof: usize) -> bool {
        self.values.contains_key(&dof)
    }

    /// Value for right-hand side `column`.
    pub fn get(&self, dof: usize, column: usize) -> Option<f64> {
        self.values
            .get(&dof)
            .map(|v| if v.len() == 1 { v[0] } else { v[column] })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dofs(&self) -> impl Iterator<Item = usize> + '_ {
        self.values.keys().copied()
    }
}

struct Elimination {
    lu: LU<f64, Dyn, Dyn>,
    a_lg: DMatrix<f64>,
    a_gl: DMatrix<f64>,
    /// A_gg − A_gl A_ll⁻¹ A_lg
    schur: DMatrix<f64>,
    local_dofs: Vec<usize>,
    facet_dofs: Vec<usize>,
    a_ll: DMatrix<f64>,
}

/// Global facet system plus everything needed to recover local unknowns.
pub struct CondensedSystem {
    n_local: usize,
    n_facet: usize,
    free: Vec<Option<usize>>,
    free_dofs: Vec<usize>,
    triplets: Vec<(usize, usize, f64)>,
    rhs: DMatrix<f64>,
    b_l: Vec<DMatrix<f64>>,
    /// Full facet-sized matrix of imposed values (zero on free dofs).
    constrained_values: DMatrix<f64>,
    cells: Vec<Elimination>,
}

/// Sparse LU of a condensed matrix, reusable across right-hand sides.
pub struct Factorization {
    lu: Lu<usize, f64>,
}

pub fn condense(
    locals: Vec<LocalSystem>,
    n_local: usize,
    n_facet: usize,
    constraints: &Constraints,
) -> Result<CondensedSystem> {
    let nrhs = locals.first().map_or(1, |l| l.b_l.ncols());
    for l in &locals {
        l.check()?;
        if l.b_l.ncols() != nrhs {
            return Err(Error::Layout(
                "cells disagree on the number of right-hand sides".into(),
            ));
        }
    }
    let mut free = vec![None; n_facet];
    let mut free_dofs = Vec::new();
    let mut constrained_values = DMatrix::zeros(n_facet, nrhs);
    for d in constraints.dofs() {
        if d >= n_facet {
            return Err(Error::Layout(format!(
                "constraint on missing facet dof {d}"
            )));
        }
        for k in 0..nrhs {
            constrained_values[(d, k)] = constraints.get(d, k).unwrap_or(0.0);
        }
    }
    for (d, slot) in free.iter_mut().enumerate() {
        if !constraints.contains(d) {
            *slot = Some(free_dofs.len());
            free_dofs.push(d);
        }
    }

    let parts: Vec<(Elimination, DMatrix<f64>, DMatrix<f64>)> = locals
        .into_par_iter()
        .map(|l| {
            let lu = l.a_ll.clone().lu();
            let x = lu
                .solve(&l.a_lg)
                .filter(|x| x.iter().all(|v| v.is_finite()))
                .ok_or(Error::SingularLocal { cell: l.cell })?;
            let schur = &l.a_gg - &l.a_gl * &x;
            let y = lu
                .solve(&l.b_l)
                .ok_or(Error::SingularLocal { cell: l.cell })?;
            let r = &l.b_g - &l.a_gl * y;
            Ok((
                Elimination {
                    lu,
                    a_lg: l.a_lg,
                    a_gl: l.a_gl,
                    schur,
                    local_dofs: l.local_dofs,
                    facet_dofs: l.facet_dofs,
                    a_ll: l.a_ll,
                },
                r,
                l.b_l,
            ))
        })
        .collect::<Result<_>>()?;

    let mut triplets = Vec::new();
    let mut cells = Vec::with_capacity(parts.len());
    let mut reduced = Vec::with_capacity(parts.len());
    let mut b_l = Vec::with_capacity(parts.len());
    for (elim, r, bl) in parts {
        for (a, &ga) in elim.facet_dofs.iter().enumerate() {
            let Some(ia) = free[ga] else { continue };
            for (b, &gb) in elim.facet_dofs.iter().enumerate() {
                if let Some(ib) = free[gb] {
                    triplets.push((ia, ib, elim.schur[(a, b)]));
                }
            }
        }
        cells.push(elim);
        reduced.push(r);
        b_l.push(bl);
    }
    let rhs = assemble_rhs(
        &cells,
        &reduced,
        &free,
        &constrained_values,
        free_dofs.len(),
        nrhs,
    );
    Ok(CondensedSystem {
        n_local,
        n_facet,
        free,
        free_dofs,
        triplets,
        rhs,
        b_l,
        constrained_values,
        cells,
    })
}

impl CondensedSystem {
    pub fn n_free(&self) -> usize {
        self.free_dofs.len()
    }

    pub fn n_rhs(&self) -> usize {
        self.rhs.ncols()
    }

    pub fn rhs(&self) -> &DMatrix<f64> {
        &self.rhs
    }

    /// Reduced matrix as a dense array (tests and small diagnostics).
    pub fn matrix_dense(&self) -> DMatrix<f64> {
        let n = self.n_free();
        let mut m = DMatrix::zeros(n, n);
        for &(i, j, v) in &self.triplets {
            m[(i, j)] += v;
        }
        m
    }

    fn sparse(&self) -> Result<SparseColMat<usize, f64>> {
        let t: Vec<Triplet<usize, usize, f64>> = self
            .triplets
            .iter()
            .map(|&(i, j, v)| Triplet::new(i, j, v))
            .collect();
        SparseColMat::try_new_from_triplets(self.n_free(), self.n_free(), &t)
            .map_err(|e| Error::Layout(format!("sparse assembly failed: {e:?}")))
    }

    pub fn factor(&self) -> Result<Factorization> {
        let a = self.sparse()?;
        let lu = a.sp_lu().map_err(|e| match e {
            faer::sparse::linalg::LuError::SymbolicSingular { index } => Error::Singular {
                dof: self.free_dofs.get(index).copied().unwrap_or(index),
            },
            other => Error::Layout(format!("sparse LU failed: {other:?}")),
        })?;
        Ok(Factorization { lu })
    }

    fn matvec(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = DMatrix::zeros(self.n_free(), x.ncols());
        for &(i, j, v) in &self.triplets {
            for k in 0..x.ncols() {
                y[(i, k)] += v * x[(j, k)];
            }
        }
        y
    }

    /// Solves the reduced system with one step of iterative refinement and
    /// returns full facet vectors (constrained values included), one column
    /// per right-hand side.
    pub fn solve_with(&self, factor: &Factorization) -> Result<DMatrix<f64>> {
        let apply = |b: &DMatrix<f64>| -> DMatrix<f64> {
            let mut rhs = Mat::<f64>::zeros(b.nrows(), b.ncols());
            for k in 0..b.ncols() {
                for i in 0..b.nrows() {
                    rhs[(i, k)] = b[(i, k)];
                }
            }
            let x = factor.lu.solve(&rhs);
            DMatrix::from_fn(b.nrows(), b.ncols(), |i, k| x[(i, k)])
        };
        let mut x = apply(&self.rhs);
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Singular {
                dof: self.free_dofs[i % self.n_free().max(1)],
            });
        }
        let r = &self.rhs - self.matvec(&x);
        x += apply(&r);
        let r = &self.rhs - self.matvec(&x);
        let a_norm = self.row_sum_norm();
        let scale = a_norm * x.amax() + self.rhs.amax();
        if scale > 0.0 && r.amax() > 1e-10 * scale {
            return Err(Error::Residual(r.amax() / scale));
        }
        let mut full = DMatrix::zeros(self.n_facet, self.n_rhs());
        for d in 0..self.n_facet {
            for k in 0..self.n_rhs() {
                full[(d, k)] = match self.free[d] {
                    Some(i) => x[(i, k)],
                    None => self.constrained_values[(d, k)],
                };
            }
        }
        Ok(full)
    }

    fn row_sum_norm(&self) -> f64 {
        let mut rows = vec![0.0; self.n_free()];
        for &(i, _, v) in &self.triplets {
            rows[i] += v.abs();
        }
        rows.into_iter().fold(0.0, f64::max)
    }

    /// Updates the imposed values of an unchanged constrained dof set. Takes
    /// effect on the next [`CondensedSystem::set_loads`].
    pub fn set_constraint_values(&mut self, constraints: &Constraints) -> Result<()> {
        let same = constraints.len() == self.n_facet - self.n_free()
            && constraints
                .dofs()
                .all(|d| d < self.n_facet && self.free[d].is_none());
        if !same {
            return Err(Error::Layout(
                "constrained dof set differs from the condensed one".into(),
            ));
        }
        let nrhs = self.n_rhs();
        for d in constraints.dofs() {
            for k in 0..nrhs {
                self.constrained_values[(d, k)] = constraints.get(d, k).unwrap_or(0.0);
            }
        }
        Ok(())
    }

    /// Replaces the loads while keeping the operator (and any factorization
    /// of it) valid. `loads[c]` is `(b_l, b_g)` for the `c`-th local system.
    pub fn set_loads(&mut self, loads: Vec<(DMatrix<f64>, DMatrix<f64>)>) -> Result<()> {
        if loads.len() != self.cells.len() {
            return Err(Error::Layout("one load per cell expected".into()));
        }
        let nrhs = loads.first().map_or(1, |l| l.0.ncols());
        let reduced: Vec<DMatrix<f64>> = self
            .cells
            .par_iter()
            .zip(&loads)
            .map(|(e, (bl, bg))| {
                let y = e.lu.solve(bl).expect("factorization checked in condense");
                bg - &e.a_gl * y
            })
            .collect();
        let rhs = assemble_rhs(
            &self.cells,
            &reduced,
            &self.free,
            &self.constrained_values,
            self.n_free(),
            nrhs,
        );
        self.rhs = rhs;
        self.b_l = loads.into_iter().map(|(bl, _)| bl).collect();
        Ok(())
    }
}

fn assemble_rhs(
    cells: &[Elimination],
    reduced: &[DMatrix<f64>],
    free: &[Option<usize>],
    constrained_values: &DMatrix<f64>,
    n_free: usize,
    nrhs: usize,
) -> DMatrix<f64> {
    let mut rhs = DMatrix::zeros(n_free, nrhs);
    for (e, r) in cells.iter().zip(reduced) {
        for (a, &ga) in e.facet_dofs.iter().enumerate() {
            let Some(ia) = free[ga] else { continue };
            for k in 0..nrhs {
                rhs[(ia, k)] += r[(a, k)];
            }
            for (b, &gb) in e.facet_dofs.iter().enumerate() {
                if free[gb].is_none() {
                    for k in 0..nrhs {
                        rhs[(ia, k)] -= e.schur[(a, b)] * constrained_values[(gb, k)];
                    }
                }
            }
        }
    }
    rhs
}

pub fn solve_global(sys: &CondensedSystem) -> Result<DMatrix<f64>> {
    let factor = sys.factor()?;
    sys.solve_with(&factor)
}

/// Recovers local unknowns, `x_l = A_ll⁻¹ (b_l − A_lg x_g)`, scattered into
/// a global local vector (one column per right-hand side).
pub fn back_substitute(sys: &CondensedSystem, facet: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if facet.nrows() != sys.n_facet {
        return Err(Error::Layout("facet solution has the wrong length".into()));
    }
    let nrhs = facet.ncols();
    let blocks: Vec<DMatrix<f64>> = sys
        .cells
        .par_iter()
        .zip(&sys.b_l)
        .map(|(e, bl)| {
            let xg = DMatrix::from_fn(e.facet_dofs.len(), nrhs, |a, k| facet[(e.facet_dofs[a], k)]);
            let rhs = bl - &e.a_lg * &xg;
            let mut xl = e.lu.solve(&rhs).expect("factorization checked in condense");
            // One refinement sweep keeps the local residual at round-off.
            let r = &rhs - &e.a_ll * &xl;
            xl += e.lu.solve(&r).expect("factorization checked in condense");
            xl
        })
        .collect();
    let mut out = DMatrix::zeros(sys.n_local, nrhs);
    for (e, xl) in sys.cells.iter().zip(blocks) {
        for (a, &d) in e.local_dofs.iter().enumerate() {
            for k in 0..nrhs {
                out[(d, k)] = xl[(a, k)];
            }
        }
    }
    Ok(out)
}

/// Dense solve of the unreduced system. Test oracle only.
pub fn monolithic_oracle_solve(
    locals: &[LocalSystem],
    n_local: usize,
    n_facet: usize,
    constraints: &Constraints,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let nrhs = locals.first().map_or(1, |l| l.b_l.ncols());
    let n = n_local + n_facet;
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, nrhs);
    for l in locals {
        l.check()?;
        let rows: Vec<usize> = l
            .local_dofs
            .iter()
            .copied()
            .chain(l.facet_dofs.iter().map(|d| n_local + d))
            .collect();
        let nl = l.local_dofs.len();
        for (i, &gi) in rows.iter().enumerate() {
            for (j, &gj) in rows.iter().enumerate() {
                a[(gi, gj)] += match (i < nl, j < nl) {
                    (true, true) => l.a_ll[(i, j)],
                    (true, false) => l.a_lg[(i, j - nl)],
                    (false, true) => l.a_gl[(i - nl, j)],
                    (false, false) => l.a_gg[(i - nl, j - nl)],
                };
            }
            for k in 0..nrhs {
                b[(gi, k)] += if i < nl {
                    l.b_l[(i, k)]
                } else {
                    l.b_g[(i - nl, k)]
                };
            }
        }
    }
    for d in constraints.dofs() {
        let row = n_local + d;
        let v: Vec<f64> = (0..nrhs)
            .map(|k| constraints.get(d, k).unwrap_or(0.0))
            .collect();
        for i in 0..n {
            for k in 0..nrhs {
                b[(i, k)] -= a[(i, row)] * v[k];
            }
            a[(i, row)] = 0.0;
            a[(row, i)] = 0.0;
        }
        a[(row, row)] = 1.0;
        for k in 0..nrhs {
            b[(row, k)] = v[k];
        }
    }
    let x = a.lu().solve(&b).ok_or(Error::Singular { dof: 0 })?;
    Ok((
        x.rows(0, n_local).into_owned(),
        x.rows(n_local, n_facet).into_owned(),
    ))
}
