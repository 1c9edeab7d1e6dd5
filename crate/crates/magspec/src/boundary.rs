//! Fractional Sobolev norms on the boundary circle and on the space-time
//! cylinder, computed spectrally.
//!
//! The mesh places boundary nodes at uniform angles, so boundary traces are
//! periodic sequences and `H^s` norms are Fourier multiplier sums: the
//! squared norm is `length * sum_l (1 + l^2)^s |c_l|^2` with `c_l` the
//! discrete Fourier coefficients in the angle parametrization. For a
//! non-constant boundary metric this is an equivalent norm (the arc length
//! enters only through the total length factor), which is all the distance
//! functionals require.

use num_complex::Complex64 as C64;
use rustfft::FftPlanner;

use crate::fields::Domain;
use crate::mesh::DiskMesh;

/// Uniform angular sampling of a boundary circle.
#[derive(Debug, Clone)]
pub struct CircleSampling {
    /// Number of boundary nodes.
    pub n: usize,
    /// Riemannian length of the circle.
    pub length: f64,
}

impl CircleSampling {
    pub fn for_mesh(mesh: &DiskMesh, domain: Domain) -> Self {
        let (idx, w): (&[usize], &[f64]) = match domain {
            Domain::M => (&mesh.boundary_m, &mesh.boundary_weight_m),
            Domain::M1 => (&mesh.boundary_m1, &mesh.boundary_weight_m1),
        };
        CircleSampling {
            n: idx.len(),
            length: w.iter().sum(),
        }
    }

    /// Forward DFT coefficients `c_l = (1/n) sum_k v_k e^{-2 pi i k l / n}`.
    pub fn fourier_coeffs(&self, values: &[C64]) -> Vec<C64> {
        assert_eq!(values.len(), self.n);
        let mut buf = values.to_vec();
        FftPlanner::new().plan_fft_forward(self.n).process(&mut buf);
        let scale = 1.0 / self.n as f64;
        for c in &mut buf {
            *c *= scale;
        }
        buf
    }

    /// Signed frequency for FFT bin `k`.
    pub fn frequency(&self, k: usize) -> i64 {
        if 2 * k <= self.n {
            k as i64
        } else {
            k as i64 - self.n as i64
        }
    }

    /// `H^s` norm of a boundary trace.
    pub fn hs_norm(&self, values: &[C64], s: f64) -> f64 {
        let coeffs = self.fourier_coeffs(values);
        let mut total = 0.0;
        for (k, c) in coeffs.iter().enumerate() {
            let l = self.frequency(k) as f64;
            total += (1.0 + l * l).powf(s) * c.norm_sqr();
        }
        (self.length * total).sqrt()
    }

    /// `H^s` distance between two traces.
    pub fn hs_distance(&self, a: &[C64], b: &[C64], s: f64) -> f64 {
        let diff: Vec<C64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        self.hs_norm(&diff, s)
    }
}

/// `H^s` norm on the cylinder `boundary x (0, T)` for data sampled on a
/// uniform `(time, angle)` grid, by a 2-d DFT with the mixed multiplier
/// `(1 + l^2 + omega^2)^s`. Data should vanish (to high order) at `t = 0`
/// and `t = T` so the periodic extension in time is smooth; the probe
/// functions used throughout satisfy this by construction.
pub fn cylinder_hs_norm(values: &[Vec<C64>], dt: f64, circle: &CircleSampling, s: f64) -> f64 {
    let nt = values.len();
    assert!(nt > 1);
    let n = circle.n;
    let t_total = nt as f64 * dt;
    // DFT in angle for each time slice, then in time for each mode.
    let mut planner = FftPlanner::new();
    let fft_angle = planner.plan_fft_forward(n);
    let fft_time = planner.plan_fft_forward(nt);
    let mut modes: Vec<Vec<C64>> = Vec::with_capacity(nt);
    for row in values {
        assert_eq!(row.len(), n);
        let mut buf = row.clone();
        fft_angle.process(&mut buf);
        let scale = 1.0 / n as f64;
        for c in &mut buf {
            *c *= scale;
        }
        modes.push(buf);
    }
    let mut total = 0.0;
    let mut column = vec![C64::new(0.0, 0.0); nt];
    for k in 0..n {
        for (t, m) in modes.iter().enumerate() {
            column[t] = m[k];
        }
        fft_time.process(&mut column);
        let scale = 1.0 / nt as f64;
        let l = circle.frequency(k) as f64;
        for (j, c) in column.iter().enumerate() {
            let jj = if 2 * j <= nt { j as i64 } else { j as i64 - nt as i64 };
            let omega = 2.0 * std::f64::consts::PI * jj as f64 / t_total;
            total += (1.0 + l * l + omega * omega).powf(s) * (c * scale).norm_sqr();
        }
    }
    (circle.length * t_total * total).sqrt()
}
