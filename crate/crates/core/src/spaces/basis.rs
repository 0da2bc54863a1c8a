use nalgebra::DMatrix;

use super::quadrature::gauss_legendre;
use super::{triangle_dim, MAX_DEGREE};
use crate::error::{Error, Result};

/// Nodal P_k basis on the reference triangle, stored as monomial
/// coefficients. Nodes lie on the equispaced barycentric lattice; the
/// degree-0 node is the centroid.
#[derive(Clone, Debug)]
pub struct LagrangeBasis {
    degree: usize,
    nodes: Vec<[f64; 2]>,
    exponents: Vec<(usize, usize)>,
    /// Row `i` holds the monomial coefficients of basis function `i`.
    coeffs: DMatrix<f64>,
}

impl LagrangeBasis {
    pub fn new(degree: usize) -> Result<Self> {
        if degree > MAX_DEGREE {
            return Err(Error::Degree(degree));
        }
        let nodes: Vec<[f64; 2]> = if degree == 0 {
            vec![[1.0 / 3.0, 1.0 / 3.0]]
        } else {
            let p = degree as f64;
            (0..=degree)
                .flat_map(|j| (0..=degree - j).map(move |i| [i as f64 / p, j as f64 / p]))
                .collect()
        };
        let exponents: Vec<(usize, usize)> = (0..=degree)
            .flat_map(|t| (0..=t).map(move |b| (t - b, b)))
            .collect();
        let n = nodes.len();
        let vandermonde = DMatrix::from_fn(n, n, |r, m| {
            let (a, b) = exponents[m];
            nodes[r][0].powi(a as i32) * nodes[r][1].powi(b as i32)
        });
        // N_i(node_r) = sum_m C[i,m] V[r,m] = delta_ir, so C = V^{-T}.
        let coeffs = vandermonde
            .transpose()
            .try_inverse()
            .ok_or(Error::Degree(degree))?;
        Ok(Self {
            degree,
            nodes,
            exponents,
            coeffs,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    fn powers(&self, xi: [f64; 2]) -> [[f64; MAX_DEGREE + 1]; 2] {
        let mut pw = [[1.0; MAX_DEGREE + 1]; 2];
        for d in 0..2 {
            for e in 1..=self.degree {
                pw[d][e] = pw[d][e - 1] * xi[d];
            }
        }
        pw
    }

    /// Basis values at reference point `xi`.
    pub fn eval(&self, xi: [f64; 2], out: &mut [f64]) {
        let pw = self.powers(xi);
        out.fill(0.0);
        for (m, &(a, b)) in self.exponents.iter().enumerate() {
            let mono = pw[0][a] * pw[1][b];
            for (i, o) in out.iter_mut().enumerate() {
                *o += self.coeffs[(i, m)] * mono;
            }
        }
    }

    /// Reference-coordinate gradients at `xi`.
    pub fn eval_grad(&self, xi: [f64; 2], out: &mut [[f64; 2]]) {
        let pw = self.powers(xi);
        out.fill([0.0; 2]);
        for (m, &(a, b)) in self.exponents.iter().enumerate() {
            let dx = if a > 0 {
                a as f64 * pw[0][a - 1] * pw[1][b]
            } else {
                0.0
            };
            let dy = if b > 0 {
                b as f64 * pw[0][a] * pw[1][b - 1]
            } else {
                0.0
            };
            for (i, o) in out.iter_mut().enumerate() {
                let c = self.coeffs[(i, m)];
                o[0] += c * dx;
                o[1] += c * dy;
            }
        }
    }
}

/// Tabulated basis values and reference gradients, one row per point.
#[derive(Clone, Debug)]
pub struct BasisTable {
    pub values: DMatrix<f64>,
    pub grad_x: DMatrix<f64>,
    pub grad_y: DMatrix<f64>,
}

pub fn reference_basis(degree: usize, points: &[[f64; 2]]) -> Result<BasisTable> {
    let basis = LagrangeBasis::new(degree)?;
    let n = triangle_dim(degree);
    let mut values = DMatrix::zeros(points.len(), n);
    let mut grad_x = DMatrix::zeros(points.len(), n);
    let mut grad_y = DMatrix::zeros(points.len(), n);
    let mut v = vec![0.0; n];
    let mut g = vec![[0.0; 2]; n];
    for (q, &xi) in points.iter().enumerate() {
        basis.eval(xi, &mut v);
        basis.eval_grad(xi, &mut g);
        for i in 0..n {
            values[(q, i)] = v[i];
            grad_x[(q, i)] = g[i][0];
            grad_y[(q, i)] = g[i][1];
        }
    }
    Ok(BasisTable {
        values,
        grad_x,
        grad_y,
    })
}

/// Nodal P_k basis on [0, 1] with equispaced nodes (midpoint for k = 0).
#[derive(Clone, Debug)]
pub struct SegmentBasis {
    nodes: Vec<f64>,
}

impl SegmentBasis {
    pub fn new(degree: usize) -> Result<Self> {
        if degree > MAX_DEGREE {
            return Err(Error::Degree(degree));
        }
        let nodes = if degree == 0 {
            vec![0.5]
        } else {
            (0..=degree).map(|j| j as f64 / degree as f64).collect()
        };
        Ok(Self { nodes })
    }

    pub fn dim(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn eval(&self, s: f64, out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self
                .nodes
                .iter()
                .enumerate()
                .filter(|&(m, _)| m != j)
                .map(|(_, &sm)| (s - sm) / (self.nodes[j] - sm))
                .product();
        }
    }

    /// Coefficients of the L2-orthogonal projection of `f` onto the basis.
    /// Unlike nodal interpolation this ignores values at the end points, so
    /// data that jumps at a vertex is fitted from the facet interior.
    pub fn l2_fit(&self, f: impl Fn(f64) -> [f64; 2]) -> Result<Vec<[f64; 2]>> {
        let n = self.dim();
        let (points, weights) = gauss_legendre(2 * n + 6);
        let mut mass = DMatrix::zeros(n, n);
        let mut rhs = DMatrix::zeros(n, 2);
        let mut v = vec![0.0; n];
        for (&s, &w) in points.iter().zip(&weights) {
            self.eval(s, &mut v);
            let fs = f(s);
            for i in 0..n {
                for j in 0..n {
                    mass[(i, j)] += w * v[i] * v[j];
                }
                for c in 0..2 {
                    rhs[(i, c)] += w * v[i] * fs[c];
                }
            }
        }
        let x = mass
            .cholesky()
            .ok_or_else(|| Error::Layout("singular facet mass matrix".into()))?
            .solve(&rhs);
        Ok((0..n).map(|i| [x[(i, 0)], x[(i, 1)]]).collect())
    }
}
