//! Start-up channel flow between no-slip plates at `y = ±d` driven by a
//! constant axial body force.

use std::f64::consts::PI;

/// Series solution of `u_t = ν u_yy + f` with `u(±d) = 0` and `u(y, 0) = 0`.
#[derive(Clone, Copy, Debug)]
pub struct PoiseuilleSeries {
    pub nu: f64,
    pub force: f64,
    pub half_width: f64,
}

/// Terms retained in the series; the decay factor of the last one is far
/// below round-off for any positive time of interest.
const TERMS: usize = 200;

impl PoiseuilleSeries {
    pub fn new(nu: f64, force: f64, half_width: f64) -> Self {
        Self {
            nu,
            force,
            half_width,
        }
    }

    pub fn steady(&self, y: f64) -> f64 {
        self.force / (2.0 * self.nu) * (self.half_width.powi(2) - y * y)
    }

    pub fn velocity(&self, y: f64, t: f64) -> f64 {
        let d = self.half_width;
        let mut u = self.steady(y);
        for n in 0..TERMS {
            let m = (2 * n + 1) as f64;
            let decay = (-m * m * PI * PI * self.nu * t / (4.0 * d * d)).exp();
            if decay == 0.0 {
                break;
            }
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            let coef = 16.0 * self.force * d * d / (self.nu * PI.powi(3) * m.powi(3));
            u -= sign * coef * (m * PI * y / (2.0 * d)).cos() * decay;
        }
        u
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Crank–Nicolson finite differences on a uniform grid, tridiagonal solve.
    fn finite_difference(
        s: &PoiseuilleSeries,
        n: usize,
        steps: usize,
        t_end: f64,
    ) -> Vec<(f64, f64)> {
        let h = 2.0 * s.half_width / n as f64;
        let dt = t_end / steps as f64;
        let r = s.nu * dt / (h * h);
        let m = n - 1;
        let mut u = vec![0.0; m];
        let (a, b) = (-0.5 * r, 1.0 + r);
        for _ in 0..steps {
            let rhs: Vec<f64> = (0..m)
                .map(|i| {
                    let l = if i > 0 { u[i - 1] } else { 0.0 };
                    let rr = if i + 1 < m { u[i + 1] } else { 0.0 };
                    u[i] + 0.5 * r * (l - 2.0 * u[i] + rr) + dt * s.force
                })
                .collect();
            let mut c = vec![0.0; m];
            let mut d = vec![0.0; m];
            c[0] = a / b;
            d[0] = rhs[0] / b;
            for i in 1..m {
                let den = b - a * c[i - 1];
                c[i] = a / den;
                d[i] = (rhs[i] - a * d[i - 1]) / den;
            }
            u[m - 1] = d[m - 1];
            for i in (0..m - 1).rev() {
                u[i] = d[i] - c[i] * u[i + 1];
            }
        }
        (0..m)
            .map(|i| (-s.half_width + (i + 1) as f64 * h, u[i]))
            .collect()
    }

    #[test]
    fn series_matches_finite_difference_oracle() {
        let s = PoiseuilleSeries::new(1e-3, 0.0128, 0.25);
        for t in [5.0, 40.0, 125.0] {
            let fd = finite_difference(&s, 400, 4000, t);
            let peak = s.steady(0.0);
            let err = fd
                .iter()
                .map(|&(y, v)| (v - s.velocity(y, t)).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-5 * peak, "t = {t}: {err}");
        }
    }

    #[test]
    fn starts_from_rest_and_approaches_parabola() {
        let s = PoiseuilleSeries::new(1e-3, 0.0128, 0.25);
        for y in [-0.2, 0.0, 0.1] {
            assert!(s.velocity(y, 0.0).abs() < 1e-4);
        }
        assert!((s.steady(0.0) - 0.4).abs() < 1e-14);
        let gap = |t: f64| (s.steady(0.0) - s.velocity(0.0, t)).abs();
        assert!(gap(125.0) < gap(50.0) && gap(1e4) < 1e-12);
        // At the benchmark time the flow is still about 1% short of steady.
        assert!(gap(125.0) > 1e-3);
    }
}
