//! Geometric-optics probe solutions of the magnetic wave operator.
//!
//! The ansatz is `u0 = exp(i(psi - t)/h) * alpha * beta` in geodesic polar
//! coordinates around a base point `y` on the outer boundary: `psi = d_g(., y)`
//! solves the eikonal equation, `alpha = J^{-1/2} phi_w(t - r) Psi(theta)`
//! solves the free transport equation exactly (`J` the Jacobi density,
//! `phi_w` a compactly supported window), and
//! `beta = exp(-i (S(r) - S(r - t)))` with `S` the running chord integral of
//! the radial component of `A` absorbs the magnetic transport term.
//!
//! Applying the wave operator and factoring the phase leaves
//! `h^-1` brackets that the transport amplitudes cancel plus an O(1) term;
//! both are evaluated on the chart by finite differences of the assembled
//! amplitude, so the cancellation is checked numerically rather than
//! imposed. The remainder is the solution of the wave IBVP driven by the
//! negative of that defect, computed with the time-domain solver.

use std::sync::Arc;

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::fields::{Discretization, MagneticOperator, ScalarField};
use crate::geometry::{
    distance, polar_chart, shoot, Metric, Point, PolarChart,
};
use crate::mesh::DiskMesh;

/// Minimum phase sample density (points per wavelength) before a solve or
/// residual evaluation is refused.
pub const MIN_POINTS_PER_WAVELENGTH: f64 = 8.0;

/// Time window `phi_w` supported in `(eps, 2 eps)`, L2-normalized.
#[derive(Debug, Clone, Copy)]
pub struct Window {
    pub eps: f64,
    scale: f64,
}

impl Window {
    pub fn new(eps: f64) -> Result<Self> {
        if eps <= 0.0 {
            return Err(Error::Input(format!("window half-width {eps} must be positive")));
        }
        // phi(s) = c * (s - eps)^4 (2 eps - s)^4 on (eps, 2 eps);
        // ||phi||_{L2}^2 = c^2 eps^17 B(9, 9) with B the Beta function.
        let fact = |n: u64| (1..=n).map(|k| k as f64).product::<f64>();
        let beta99 = fact(8) * fact(8) / fact(17);
        let scale = 1.0 / (eps.powi(17) * beta99).sqrt();
        Ok(Window { eps, scale })
    }

    pub fn value(&self, s: f64) -> f64 {
        if s <= self.eps || s >= 2.0 * self.eps {
            return 0.0;
        }
        self.scale * (s - self.eps).powi(4) * (2.0 * self.eps - s).powi(4)
    }
}

/// Per-ray sampled data along the geodesic fan from the base point.
struct RayTable {
    step: f64,
    exit: f64,
    pos: Vec<Point>,
    jacobi: Vec<f64>,
    jacobi_slope: Vec<f64>,
    /// Radial component of A: `sigma(r) = A(gamma(r)) . gamma'(r)`.
    sigma: Vec<f64>,
    /// Running integral of sigma from the base point.
    s_cum: Vec<f64>,
    /// Potential, |A|^2_g and d*A at the ray nodes.
    q: Vec<f64>,
    a_sq: Vec<f64>,
    dstar_a: Vec<f64>,
    a_form: Vec<[f64; 2]>,
    in_m: Vec<bool>,
}

fn interp(step: f64, exit: f64, table: &[f64], r: f64) -> f64 {
    let n = table.len();
    let r = r.clamp(0.0, exit);
    let last_start = (n - 2) as f64 * step;
    let (i, seg, t0) = if r >= last_start {
        (n - 2, (exit - last_start).max(1e-15), last_start)
    } else {
        ((r / step) as usize, step, ((r / step) as usize) as f64 * step)
    };
    let s = ((r - t0) / seg).clamp(0.0, 1.0);
    table[i] * (1.0 - s) + table[i + 1] * s
}

/// C1 cubic Hermite interpolation; the smoothness matters because the
/// wave-operator defect takes second differences of the interpolant, and
/// piecewise-linear kinks would dominate them.
fn interp_hermite(step: f64, exit: f64, table: &[f64], slopes: &[f64], r: f64) -> f64 {
    let n = table.len();
    let r = r.clamp(0.0, exit);
    let last_start = (n - 2) as f64 * step;
    let (i, seg, t0) = if r >= last_start {
        (n - 2, (exit - last_start).max(1e-15), last_start)
    } else {
        ((r / step) as usize, step, ((r / step) as usize) as f64 * step)
    };
    let s = ((r - t0) / seg).clamp(0.0, 1.0);
    let (h00, h10, h01, h11) = (
        (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s),
        s * (1.0 - s) * (1.0 - s),
        s * s * (3.0 - 2.0 * s),
        s * s * (s - 1.0),
    );
    h00 * table[i] + h10 * seg * slopes[i] + h01 * table[i + 1] + h11 * seg * slopes[i + 1]
}

/// Chart-level data shared across semiclassical parameters: the polar
/// geodesic fan plus coefficient tables of the pair `(A, q)` along it.
pub struct GoChart {
    pub metric: Metric,
    pub chart: PolarChart,
    pub dtheta: f64,
    rays: Vec<RayTable>,
}

impl GoChart {
    pub fn new(
        metric: &Metric,
        y: Point,
        n_dirs: usize,
        a: Option<&(dyn Fn(Point) -> [f64; 2] + Sync)>,
        q: Option<&(dyn Fn(Point) -> f64 + Sync)>,
    ) -> Result<Self> {
        let chart = polar_chart(metric, y, n_dirs)?;
        let dtheta = std::f64::consts::PI / n_dirs as f64;
        let mut rays = Vec::with_capacity(n_dirs);
        for (path, jacobi) in chart.rays.iter().zip(&chart.jacobi) {
            let n = path.nodes.len();
            let mut pos = Vec::with_capacity(n);
            let mut sigma = Vec::with_capacity(n);
            let mut qv = Vec::with_capacity(n);
            let mut a_sq = Vec::with_capacity(n);
            let mut dstar = Vec::with_capacity(n);
            let mut a_form = Vec::with_capacity(n);
            let mut in_m = Vec::with_capacity(n);
            for (p, v) in &path.nodes {
                pos.push(*p);
                let af = a.map_or([0.0, 0.0], |f| f(*p));
                sigma.push(af[0] * v[0] + af[1] * v[1]);
                qv.push(q.map_or(0.0, |f| f(*p)));
                a_sq.push(metric.inner_form(*p, af, af));
                dstar.push(a.map_or(0.0, |f| codifferential_fd(metric, f, *p)));
                a_form.push(af);
                in_m.push((p[0] * p[0] + p[1] * p[1]).sqrt() <= metric.radius_m + 1e-12);
            }
            // Trapezoid accumulation of sigma, honoring the short last segment.
            let mut s_cum = Vec::with_capacity(n);
            let mut acc = 0.0;
            s_cum.push(0.0);
            for i in 0..n - 1 {
                let seg = if i == n - 2 {
                    (path.exit_time - (n - 2) as f64 * path.step).max(0.0)
                } else {
                    path.step
                };
                acc += 0.5 * seg * (sigma[i] + sigma[i + 1]);
                s_cum.push(acc);
            }
            // Slopes for the C1 interpolants: centered differences for J
            // (uneven last segment handled one-sided).
            let last_seg = (path.exit_time - (n - 2) as f64 * path.step).max(1e-15);
            let mut jacobi_slope = vec![0.0; n];
            for i in 0..n {
                jacobi_slope[i] = if i == 0 {
                    (jacobi[1] - jacobi[0]) / path.step
                } else if i == n - 1 {
                    (jacobi[n - 1] - jacobi[n - 2]) / last_seg
                } else if i == n - 2 {
                    (jacobi[n - 1] - jacobi[n - 3]) / (path.step + last_seg)
                } else {
                    (jacobi[i + 1] - jacobi[i - 1]) / (2.0 * path.step)
                };
            }
            rays.push(RayTable {
                step: path.step,
                exit: path.exit_time,
                pos,
                jacobi: jacobi.clone(),
                jacobi_slope,
                sigma,
                s_cum,
                q: qv,
                a_sq,
                dstar_a: dstar,
                a_form,
                in_m,
            });
        }
        Ok(GoChart {
            metric: metric.clone(),
            chart,
            dtheta,
            rays,
        })
    }

    pub fn n_dirs(&self) -> usize {
        self.rays.len()
    }

    pub fn jacobi_at(&self, ray: usize, r: f64) -> f64 {
        let t = &self.rays[ray];
        if r < 1e-3 {
            return r.max(0.0);
        }
        interp_hermite(t.step, t.exit, &t.jacobi, &t.jacobi_slope, r)
    }

    pub fn chord_integral_at(&self, ray: usize, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        let t = &self.rays[ray];
        // The chord integral is interpolated with its exact nodal
        // derivative sigma, keeping S' = sigma to interpolation order.
        interp_hermite(t.step, t.exit, &t.s_cum, &t.sigma, r)
    }

    pub fn sigma_at(&self, ray: usize, r: f64) -> f64 {
        let t = &self.rays[ray];
        interp(t.step, t.exit, &t.sigma, r)
    }

    /// Coordinate components of the one-form along a ray.
    pub fn a_form_at(&self, ray: usize, r: f64) -> [f64; 2] {
        interp2(&self.rays[ray], r)
    }

    pub fn position_at(&self, ray: usize, r: f64) -> Point {
        self.chart.rays[ray].at(r).0
    }

    pub fn exit_time(&self, ray: usize) -> f64 {
        self.rays[ray].exit
    }

    /// Longest chord of the fan (lower bound for the time horizon).
    pub fn max_exit(&self) -> f64 {
        self.rays.iter().map(|r| r.exit).fold(0.0, f64::max)
    }
}

/// `d*A` at a point by central finite differences of the coordinate
/// divergence formula.
fn codifferential_fd(metric: &Metric, a: &(dyn Fn(Point) -> [f64; 2] + Sync), p: Point) -> f64 {
    let e = 1e-4;
    let flux = |x: Point, i: usize| -> f64 {
        let g = metric.g(x);
        let det = (g[0][0] * g[1][1] - g[0][1] * g[0][1]).sqrt();
        let gi = metric.g_inv(x);
        let av = a(x);
        det * (gi[i][0] * av[0] + gi[i][1] * av[1])
    };
    let g = metric.g(p);
    let det = (g[0][0] * g[1][1] - g[0][1] * g[0][1]).sqrt();
    let mut div = 0.0;
    for i in 0..2 {
        let mut pp = p;
        let mut pm = p;
        pp[i] += e;
        pm[i] -= e;
        div += (flux(pp, i) - flux(pm, i)) / (2.0 * e);
    }
    -div / det
}

/// A geometric-optics probe at one semiclassical parameter.
#[derive(Clone)]
pub struct GoAnsatz {
    pub chart: Arc<GoChart>,
    pub window: Window,
    pub h: f64,
    /// Fan weight per ray direction.
    pub psi: Vec<f64>,
    /// Replace `beta` by 1 while keeping `A` in the operator (control
    /// experiment that breaks the first-order cancellation).
    pub beta_one: bool,
    pub t_final: f64,
}

impl GoAnsatz {
    pub fn new(chart: Arc<GoChart>, h: f64, eps: f64, t_final: f64) -> Result<Self> {
        if h <= 0.0 {
            return Err(Error::Input(format!("semiclassical parameter h = {h} must be positive")));
        }
        let window = Window::new(eps)?;
        if t_final < chart.max_exit() + 3.0 * eps {
            return Err(Error::Input(format!(
                "time horizon {t_final} below longest chord {:.3} + 3 eps",
                chart.max_exit()
            )));
        }
        let psi = vec![1.0; chart.n_dirs()];
        Ok(GoAnsatz {
            chart,
            window,
            h,
            psi,
            beta_one: false,
            t_final,
        })
    }

    pub fn with_fan_weight(mut self, f: impl Fn(f64) -> f64) -> Self {
        let n = self.chart.n_dirs();
        for (j, w) in self.psi.iter_mut().enumerate() {
            // Fan coordinate measured from the inward normal at the base.
            let beta = -std::f64::consts::FRAC_PI_2
                + std::f64::consts::PI * (j as f64 + 0.5) / n as f64;
            *w = f(beta);
        }
        self
    }

    pub fn with_beta_one(mut self) -> Self {
        self.beta_one = true;
        self
    }

    /// Transport amplitude `alpha = J^{-1/2} phi_w(t - r) Psi`.
    pub fn alpha(&self, ray: usize, r: f64, t: f64) -> f64 {
        let w = self.window.value(t - r);
        if w == 0.0 {
            return 0.0;
        }
        let j = self.chart.jacobi_at(ray, r);
        w * self.psi[ray] / j.sqrt()
    }

    /// Magnetic amplitude `beta = exp(-i (S(r) - S(r - t)))`, unimodular.
    pub fn beta(&self, ray: usize, r: f64, t: f64) -> C64 {
        if self.beta_one {
            return C64::new(1.0, 0.0);
        }
        let s = self.chart.chord_integral_at(ray, r) - self.chart.chord_integral_at(ray, r - t);
        C64::new(0.0, -s).exp()
    }

    /// Phase-stripped amplitude `w = alpha * beta`.
    pub fn amplitude(&self, ray: usize, r: f64, t: f64) -> C64 {
        let a = self.alpha(ray, r, t);
        if a == 0.0 {
            return C64::new(0.0, 0.0);
        }
        a * self.beta(ray, r, t)
    }

    /// Full probe value at a chart point.
    pub fn u0(&self, ray: usize, r: f64, t: f64) -> C64 {
        let w = self.amplitude(ray, r, t);
        if w == C64::new(0.0, 0.0) {
            return w;
        }
        C64::new(0.0, (r - t) / self.h).exp() * w
    }

    /// The phase-factored wave-operator defect at a chart point:
    /// `H u0 = exp(i (r - t)/h) * bracket`. Needs interior rays
    /// (`1 <= ray <= n_dirs - 2`) for the angular differences.
    pub fn bracket(&self, ray: usize, r: f64, t: f64) -> C64 {
        let ch = &self.chart;
        // Equal steps: the amplitude is driven by the window in (t - r),
        // so matched truncation errors cancel inside `w_t + w_r` and
        // `w_tt - w_rr` exactly where the analytic cancellations happen.
        let dr = 2.5e-4;
        let dt = 2.5e-4;
        let w = |rr: f64, tt: f64| self.amplitude(ray, rr, tt);
        let w00 = w(r, t);
        // Time and radial derivatives by central differences.
        let w_t = (w(r, t + dt) - w(r, t - dt)) / (2.0 * dt);
        let w_tt = (w(r, t + dt) - 2.0 * w00 + w(r, t - dt)) / (dt * dt);
        let w_r = (w(r + dr, t) - w(r - dr, t)) / (2.0 * dr);
        let w_rr = (w(r + dr, t) - 2.0 * w00 + w(r - dr, t)) / (dr * dr);
        let j0 = ch.jacobi_at(ray, r);
        let j_r = (ch.jacobi_at(ray, r + dr) - ch.jacobi_at(ray, r - dr)) / (2.0 * dr);
        // Angular part of the Laplace-Beltrami operator in polar form,
        // staggered over the neighbor rays.
        let wm = self.amplitude(ray - 1, r, t);
        let wp = self.amplitude(ray + 1, r, t);
        let jm = ch.jacobi_at(ray - 1, r);
        let jp = ch.jacobi_at(ray + 1, r);
        let dth = ch.dtheta;
        let ang = ((wp - w00) / (0.5 * (jp + j0)) - (w00 - wm) / (0.5 * (j0 + jm)))
            / (dth * dth)
            / j0;
        let w_theta = (wp - wm) / (2.0 * dth);
        let lap = w_rr + (j_r / j0) * w_r + ang;
        // Coefficients at the chart point. The radial component of A is
        // taken as the matched difference quotient of the chord integral,
        // the same object the beta factor differentiates.
        let tab = &ch.rays[ray];
        let sig = (ch.chord_integral_at(ray, r + dr) - ch.chord_integral_at(ray, r - dr))
            / (2.0 * dr);
        let qv = interp(tab.step, tab.exit, &tab.q, r);
        let asq = interp(tab.step, tab.exit, &tab.a_sq, r);
        let dstar = interp(tab.step, tab.exit, &tab.dstar_a, r);
        // A applied to the angular coordinate vector d x / d theta.
        let pm = ch.position_at(ray - 1, r);
        let pp = ch.position_at(ray + 1, r);
        let x_th = [(pp[0] - pm[0]) / (2.0 * dth), (pp[1] - pm[1]) / (2.0 * dth)];
        let p0 = ch.position_at(ray, r);
        let af = interp2(tab, r);
        let _ = p0;
        let a_th = af[0] * x_th[0] + af[1] * x_th[1];
        let a_dw = sig * w_r + a_th * w_theta / (j0 * j0);
        let i = C64::new(0.0, 1.0);
        let first_order =
            -(i / self.h) * (2.0 * w_t + 2.0 * w_r + w00 * (j_r / j0) + 2.0 * i * sig * w00);
        let zeroth = w_tt - lap - 2.0 * i * a_dw + (i * dstar + asq + qv) * w00;
        first_order + zeroth
    }
}

fn interp2(tab: &RayTable, r: f64) -> [f64; 2] {
    let n = tab.a_form.len();
    let r = r.clamp(0.0, tab.exit);
    let last_start = (n - 2) as f64 * tab.step;
    let (i, seg, t0) = if r >= last_start {
        (n - 2, (tab.exit - last_start).max(1e-15), last_start)
    } else {
        (
            (r / tab.step) as usize,
            tab.step,
            ((r / tab.step) as usize) as f64 * tab.step,
        )
    };
    let s = ((r - t0) / seg).clamp(0.0, 1.0);
    [
        tab.a_form[i][0] * (1.0 - s) + tab.a_form[i + 1][0] * s,
        tab.a_form[i][1] * (1.0 - s) + tab.a_form[i + 1][1] * s,
    ]
}

/// Eikonal phase `psi(x) = d_g(x, y)` on the mesh nodes.
pub fn eikonal_phase(metric: &Metric, mesh: Arc<DiskMesh>, y: Point) -> Result<ScalarField> {
    let r_y = (y[0] * y[0] + y[1] * y[1]).sqrt();
    if r_y <= metric.radius_m {
        return Err(Error::Input(
            "eikonal base point must lie outside the closed inner disk".into(),
        ));
    }
    let n = mesh.num_nodes();
    let mut values = vec![0.0; n];
    for i in 0..n {
        values[i] = distance(metric, mesh.nodes[i], y)?;
    }
    Ok(ScalarField::from_nodal(mesh, values.into_iter().map(|v| C64::new(v, 0.0)).collect()))
}

/// `L2((0,T) x M)` norm of the wave-operator defect of the ansatz,
/// integrated on the chart.
pub fn residual_l2(ansatz: &GoAnsatz) -> Result<f64> {
    let ch = &ansatz.chart;
    let step0 = ch.rays[0].step;
    if 2.0 * std::f64::consts::PI * ansatz.h / step0 < MIN_POINTS_PER_WAVELENGTH {
        return Err(Error::Resolution(format!(
            "chart step {step0} too coarse for h = {}",
            ansatz.h
        )));
    }
    let eps = ansatz.window.eps;
    let dt = eps / 25.0;
    let nt = (ansatz.t_final / dt).ceil() as usize;
    let n_rays = ch.n_dirs();
    let mut acc = 0.0;
    for it in 0..=nt {
        let t = it as f64 * dt;
        let wt = if it == 0 || it == nt { 0.5 } else { 1.0 };
        for ray in 1..n_rays - 1 {
            let tab = &ch.rays[ray];
            let lo = ((t - 2.0 * eps) / tab.step).floor().max(0.0) as usize;
            if lo >= tab.pos.len() {
                continue;
            }
            let hi = (((t - eps) / tab.step).ceil() as usize).min(tab.pos.len() - 1);
            for idx in lo..=hi.max(lo) {
                if !tab.in_m[idx] {
                    continue;
                }
                let r = (idx as f64 * tab.step).min(tab.exit);
                let b = ansatz.bracket(ray, r, t);
                let j = ch.jacobi_at(ray, r);
                acc += wt * b.norm_sqr() * j * tab.step * ch.dtheta * dt;
            }
        }
    }
    Ok(acc.sqrt())
}

/// Residual scaling across a list of semiclassical parameters, with the
/// broken-cancellation control (`beta = 1`, same `A`).
#[derive(Debug, Clone, serde::Serialize)]
pub struct ResidualReport {
    pub rows: Vec<(f64, f64)>,
    pub slope: f64,
    pub control_rows: Vec<(f64, f64)>,
    pub control_slope: f64,
}

pub fn residual_scaling_check(
    chart: Arc<GoChart>,
    h_list: &[f64],
    eps: f64,
    t_final: f64,
) -> Result<ResidualReport> {
    let mut rows = Vec::new();
    let mut control_rows = Vec::new();
    for &h in h_list {
        let ansatz = GoAnsatz::new(chart.clone(), h, eps, t_final)?;
        rows.push((h, residual_l2(&ansatz)?));
        control_rows.push((h, residual_l2(&ansatz.clone().with_beta_one())?));
    }
    let hs: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let vs: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let cs: Vec<f64> = control_rows.iter().map(|r| r.1).collect();
    Ok(ResidualReport {
        slope: crate::stats::loglog_slope(&hs, &vs),
        control_slope: crate::stats::loglog_slope(&hs, &cs),
        rows,
        control_rows,
    })
}

/// Chart coordinates of the mesh nodes of `M`: geodesic distance to the
/// base point and fractional ray index in the fan.
pub struct ChartMap {
    /// Per mesh node: `(r, fractional ray index)`; `None` outside the fan
    /// interior or outside `M`.
    pub coords: Vec<Option<(f64, f64)>>,
}

impl ChartMap {
    pub fn new(metric: &Metric, mesh: &DiskMesh, chart: &GoChart) -> Result<Self> {
        let y = chart.chart.base_point;
        let n_rays = chart.n_dirs();
        let a0 = chart.chart.angles[0];
        let dth = chart.dtheta;
        let mut coords = vec![None; mesh.num_nodes()];
        for &i in &mesh.nodes_m {
            let shot = shoot(metric, mesh.nodes[i], y)?;
            let mut rel = (shot.angle - a0) % std::f64::consts::TAU;
            if rel > std::f64::consts::PI {
                rel -= std::f64::consts::TAU;
            }
            if rel < -std::f64::consts::PI {
                rel += std::f64::consts::TAU;
            }
            let jf = rel / dth;
            if jf >= 1.0 && jf <= (n_rays - 2) as f64 {
                coords[i] = Some((shot.arc_length, jf));
            }
        }
        Ok(ChartMap { coords })
    }

    /// Minimal chart radius over mapped nodes (singularity guard).
    pub fn min_radius(&self) -> f64 {
        self.coords
            .iter()
            .flatten()
            .map(|&(r, _)| r)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Probe and defect values on the mesh: `u0` via the exact per-node phase
/// and angular interpolation of the amplitude; `H u0` via interpolation of
/// the chart bracket.
pub fn u0_on_mesh(ansatz: &GoAnsatz, map: &ChartMap, t: f64) -> Vec<C64> {
    map.coords
        .iter()
        .map(|c| match *c {
            Some((r, jf)) => {
                let j0 = (jf.floor() as usize).min(ansatz.chart.n_dirs() - 2);
                let s = jf - j0 as f64;
                let w = ansatz.amplitude(j0, r, t) * (1.0 - s) + ansatz.amplitude(j0 + 1, r, t) * s;
                if w == C64::new(0.0, 0.0) {
                    w
                } else {
                    C64::new(0.0, (r - t) / ansatz.h).exp() * w
                }
            }
            None => C64::new(0.0, 0.0),
        })
        .collect()
}

fn defect_on_mesh(ansatz: &GoAnsatz, map: &ChartMap, t: f64) -> Vec<C64> {
    let n_rays = ansatz.chart.n_dirs();
    let eps = ansatz.window.eps;
    map.coords
        .iter()
        .map(|c| match *c {
            Some((r, jf)) => {
                if t - r <= eps || t - r >= 2.0 * eps {
                    return C64::new(0.0, 0.0);
                }
                let j0 = (jf.floor() as usize).clamp(1, n_rays - 3);
                let s = (jf - j0 as f64).clamp(0.0, 1.0);
                let b = ansatz.bracket(j0, r, t) * (1.0 - s) + ansatz.bracket(j0 + 1, r, t) * s;
                C64::new(0.0, (r - t) / ansatz.h).exp() * b
            }
            None => C64::new(0.0, 0.0),
        })
        .collect()
}

/// Remainder of the ansatz: the wave IBVP driven by the negative defect,
/// with zero initial and boundary data.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RemainderReport {
    pub h: f64,
    /// `h^-1 max_t ||r(t)||_{L2(M)}`.
    pub scaled_max_l2: f64,
    pub max_l2: f64,
    pub max_dt_l2: f64,
    pub max_grad_l2: f64,
}

pub fn remainder_solve(
    disc: &Discretization,
    op: &MagneticOperator,
    ansatz: &GoAnsatz,
    map: &ChartMap,
    n_steps: usize,
    terminal: bool,
) -> Result<(crate::dtn::WaveState, RemainderReport)> {
    let mesh = &disc.mesh;
    if 2.0 * std::f64::consts::PI * ansatz.h / mesh.h() < MIN_POINTS_PER_WAVELENGTH {
        return Err(Error::Resolution(format!(
            "mesh spacing {:.4} too coarse for h = {} (needs {} points per wavelength)",
            mesh.h(),
            ansatz.h,
            MIN_POINTS_PER_WAVELENGTH
        )));
    }
    let params = crate::dtn::WaveParams {
        t_final: ansatz.t_final,
        n_steps,
    };
    let src = |t: f64| -> Vec<C64> {
        defect_on_mesh(ansatz, map, t)
            .into_iter()
            .map(|v| -v)
            .collect()
    };
    let state = crate::dtn::solve_wave(disc, op, &params, None, Some(&src), None, terminal)?;
    let l2 = |v: &[C64]| -> f64 {
        mesh.nodes_m
            .iter()
            .map(|&i| v[i].norm_sqr() * mesh.lumped_m[i])
            .sum::<f64>()
            .sqrt()
    };
    let mut max_l2 = 0.0f64;
    let mut max_dt = 0.0f64;
    let mut max_grad = 0.0f64;
    for (u, v) in state.u.iter().zip(&state.v) {
        max_l2 = max_l2.max(l2(u));
        max_dt = max_dt.max(l2(v));
        let ku = disc.stiff_m.matvec(u);
        let e: f64 = u.iter().zip(&ku).map(|(a, b)| (a.conj() * b).re).sum();
        max_grad = max_grad.max(e.max(0.0).sqrt());
    }
    let report = RemainderReport {
        h: ansatz.h,
        scaled_max_l2: max_l2 / ansatz.h,
        max_l2,
        max_dt_l2: max_dt,
        max_grad_l2: max_grad,
    };
    Ok((state, report))
}
