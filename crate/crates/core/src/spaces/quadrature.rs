use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Triangle,
    Segment,
}

/// Points on the reference triangle (0,0), (1,0), (0,1) or the segment
/// [0, 1]; segment rules use only the first coordinate.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// `n`-point Gauss-Legendre rule mapped to [0, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * z * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = 0.5 * (1.0 - z);
        w[i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// Rule integrating polynomials up to `degree` exactly. Triangle rules are
/// collapsed tensor Gauss-Legendre rules.
pub fn quadrature_rule(domain: Domain, degree: usize) -> Result<QuadratureRule> {
    if degree > 40 {
        return Err(Error::Degree(degree));
    }
    match domain {
        Domain::Segment => {
            let (x, w) = gauss_legendre(degree / 2 + 1);
            Ok(QuadratureRule {
                points: x.into_iter().map(|s| [s, 0.0]).collect(),
                weights: w,
            })
        }
        Domain::Triangle => {
            let n = (degree + 3) / 2;
            let (x, w) = gauss_legendre(n);
            let mut points = Vec::with_capacity(n * n);
            let mut weights = Vec::with_capacity(n * n);
            for (u, wu) in x.iter().zip(&w) {
                for (v, wv) in x.iter().zip(&w) {
                    points.push([*u, (1.0 - u) * v]);
                    weights.push(wu * wv * (1.0 - u));
                }
            }
            Ok(QuadratureRule { points, weights })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    fn moment(rule: &QuadratureRule, a: i32, b: i32) -> f64 {
        rule.points
            .iter()
            .zip(&rule.weights)
            .map(|(p, w)| w * p[0].powi(a) * p[1].powi(b))
            .sum()
    }

    #[test]
    fn weights_sum_to_measure() {
        for d in 0..12 {
            let t = quadrature_rule(Domain::Triangle, d).unwrap();
            assert!((t.weights.iter().sum::<f64>() - 0.5).abs() < 1e-14);
            let s = quadrature_rule(Domain::Segment, d).unwrap();
            assert!((s.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn analytic_moments() {
        let t = quadrature_rule(Domain::Triangle, 2).unwrap();
        assert!((moment(&t, 2, 0) - 1.0 / 12.0).abs() < 1e-15);
        let s = quadrature_rule(Domain::Segment, 3).unwrap();
        assert!((moment(&s, 3, 0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn all_monomials_exact() {
        for d in 0..=10u32 {
            let t = quadrature_rule(Domain::Triangle, d as usize).unwrap();
            let s = quadrature_rule(Domain::Segment, d as usize).unwrap();
            for a in 0..=d {
                for b in 0..=d - a {
                    let exact = factorial(a) * factorial(b) / factorial(a + b + 2);
                    assert!(
                        (moment(&t, a as i32, b as i32) - exact).abs() < 1e-13,
                        "{d} {a} {b}"
                    );
                }
                assert!((moment(&s, a as i32, 0) - 1.0 / (a as f64 + 1.0)).abs() < 1e-13);
            }
        }
    }
}
