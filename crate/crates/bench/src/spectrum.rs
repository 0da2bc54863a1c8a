//! Radially binned kinetic energy spectra of velocity fields on bi-periodic
//! domains.

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use pmhdg_core::{DiscreteField, Point, Triangulation};

use crate::BenchError;

#[derive(Clone, Debug)]
pub struct Spectrum {
    /// Shell index `k`: modes with `round(|(m, n)|) = k`, where `(m, n)` counts
    /// periods across the domain.
    pub shells: Vec<usize>,
    /// Kinetic energy per shell (unit shell width).
    pub energy: Vec<f64>,
    /// Mean of `|u|²/2` over the sampling lattice.
    pub grid_energy: f64,
}

impl Spectrum {
    pub fn total(&self) -> f64 {
        self.energy.iter().sum()
    }

    /// Relative mismatch between the spectral and the lattice energy.
    pub fn parseval_error(&self) -> f64 {
        (self.total() - self.grid_energy).abs() / self.grid_energy.max(f64::MIN_POSITIVE)
    }

    /// Least-squares slope of `log E` against `log k` over shells `lo..=hi`.
    pub fn slope(&self, lo: usize, hi: usize) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .shells
            .iter()
            .zip(&self.energy)
            .filter(|(&k, &e)| k >= lo.max(1) && k <= hi && e > 0.0)
            .map(|(&k, &e)| ((k as f64).ln(), e.ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let (mx, my) = pts
            .iter()
            .fold((0.0, 0.0), |a, p| (a.0 + p.0 / n, a.1 + p.1 / n));
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Some(sxy / sxx)
    }
}

/// Samples `u` on a `grid_n × grid_n` lattice over the periodic cell, takes
/// the discrete Fourier transform (normalised by `grid_n²`) and sums modal
/// energies into integer shells.
pub fn energy_spectrum(
    u: &DiscreteField,
    tri: &Triangulation,
    grid_n: usize,
) -> Result<Spectrum, BenchError> {
    let [Some((x0, x1)), Some((y0, y1))] = tri.period() else {
        return Err(BenchError::Spectrum("domain is not bi-periodic".into()));
    };
    if u.components() != 2 {
        return Err(BenchError::Spectrum(
            "velocity must have two components".into(),
        ));
    }
    if grid_n < 2 {
        return Err(BenchError::Spectrum(
            "grid needs at least two points per side".into(),
        ));
    }
    let n = grid_n;
    let rows: Vec<Vec<[f64; 2]>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let y = y0 + (y1 - y0) * j as f64 / n as f64;
            let mut hint = None;
            (0..n)
                .map(|i| {
                    let p = Point::new(x0 + (x1 - x0) * i as f64 / n as f64, y);
                    let loc = tri
                        .locate_cell(&p, hint)
                        .ok_or(pmhdg_core::Error::Outside(p.x, p.y))?;
                    hint = Some(loc.cell);
                    Ok(u.evaluate(&loc)?)
                })
                .collect::<Result<Vec<_>, BenchError>>()
        })
        .collect::<Result<_, _>>()?;

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let transform = |comp: usize| {
        let mut data: Vec<Complex<f64>> = rows
            .iter()
            .flatten()
            .map(|v| Complex::new(v[comp], 0.0))
            .collect();
        for row in data.chunks_mut(n) {
            fft.process(row);
        }
        let mut col = vec![Complex::default(); n];
        for i in 0..n {
            for j in 0..n {
                col[j] = data[j * n + i];
            }
            fft.process(&mut col);
            for j in 0..n {
                data[j * n + i] = col[j] / (n * n) as f64;
            }
        }
        data
    };
    let (uh, vh) = (transform(0), transform(1));

    let wave = |i: usize| {
        if i <= n / 2 {
            i as f64
        } else {
            i as f64 - n as f64
        }
    };
    let max_shell = ((2.0f64).sqrt() * (n / 2) as f64).round() as usize;
    let mut energy = vec![0.0; max_shell + 1];
    for j in 0..n {
        for i in 0..n {
            let shell = wave(i).hypot(wave(j)).round() as usize;
            let idx = j * n + i;
            energy[shell] += 0.5 * (uh[idx].norm_sqr() + vh[idx].norm_sqr());
        }
    }
    let grid_energy = rows
        .iter()
        .flatten()
        .map(|v| 0.5 * (v[0] * v[0] + v[1] * v[1]))
        .sum::<f64>()
        / (n * n) as f64;
    Ok(Spectrum {
        shells: (0..=max_shell).collect(),
        energy,
        grid_energy,
    })
}
