//! Geometry of the extended disk: metric tensors, geodesics, distances,
//! geodesic polar coordinates and simplicity diagnostics.
//!
//! The manifold is a disk `M` of radius `radius_m` sitting inside a strictly
//! larger disk `M1` of radius `radius_m1` (the simple extension). Metrics are
//! Euclidean, conformally Euclidean `g = e^{2 lambda} delta`, or sampled on a
//! Cartesian grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];
pub type Vector = [f64; 2];

/// Default fixed integrator step for geodesic tracing.
pub const GEO_STEP: f64 = 5.0e-3;
/// Tolerance on the boundary level set `|x|^2 - R^2` for exit-point bisection.
pub const EXIT_TOL: f64 = 1.0e-10;

/// Conformal factor profiles with analytic first and second derivatives.
///
/// The conformal metric is `g = e^{2 lambda(x)} delta`. Restricting lambda to
/// a parametric family keeps Christoffel symbols and Gauss curvature exact;
/// free-form metrics go through [`MetricKind::Grid`] with finite differences.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(tag = "profile", rename_all = "kebab-case")]
pub enum ConformalProfile {
    /// lambda = value (rescales the disk; geodesics stay straight).
    Constant { value: f64 },
    /// lambda = amp * x1.
    LinearX { amp: f64 },
    /// lambda = amp * (x1^2 + x2^2).
    RadialQuadratic { amp: f64 },
    /// lambda = amp * exp(-|x - c|^2 / width^2).
    Gaussian {
        amp: f64,
        width: f64,
        cx: f64,
        cy: f64,
    },
}

impl ConformalProfile {
    pub fn value(&self, x: Point) -> f64 {
        match *self {
            ConformalProfile::Constant { value } => value,
            ConformalProfile::LinearX { amp } => amp * x[0],
            ConformalProfile::RadialQuadratic { amp } => amp * (x[0] * x[0] + x[1] * x[1]),
            ConformalProfile::Gaussian { amp, width, cx, cy } => {
                let dx = x[0] - cx;
                let dy = x[1] - cy;
                amp * (-(dx * dx + dy * dy) / (width * width)).exp()
            }
        }
    }

    pub fn gradient(&self, x: Point) -> Vector {
        match *self {
            ConformalProfile::Constant { .. } => [0.0, 0.0],
            ConformalProfile::LinearX { amp } => [amp, 0.0],
            ConformalProfile::RadialQuadratic { amp } => [2.0 * amp * x[0], 2.0 * amp * x[1]],
            ConformalProfile::Gaussian { width, cx, cy, .. } => {
                let v = self.value(x);
                let w2 = width * width;
                [-2.0 * (x[0] - cx) / w2 * v, -2.0 * (x[1] - cy) / w2 * v]
            }
        }
    }

    /// Hessian entries (d11, d12, d22).
    pub fn hessian(&self, x: Point) -> [f64; 3] {
        match *self {
            ConformalProfile::Constant { .. } | ConformalProfile::LinearX { .. } => [0.0; 3],
            ConformalProfile::RadialQuadratic { amp } => [2.0 * amp, 0.0, 2.0 * amp],
            ConformalProfile::Gaussian { width, cx, cy, .. } => {
                let v = self.value(x);
                let w2 = width * width;
                let dx = x[0] - cx;
                let dy = x[1] - cy;
                [
                    (-2.0 / w2 + 4.0 * dx * dx / (w2 * w2)) * v,
                    4.0 * dx * dy / (w2 * w2) * v,
                    (-2.0 / w2 + 4.0 * dy * dy / (w2 * w2)) * v,
                ]
            }
        }
    }

    /// Laplacian of lambda (Euclidean), needed for the Gauss curvature.
    pub fn laplacian(&self, x: Point) -> f64 {
        let h = self.hessian(x);
        h[0] + h[2]
    }
}

/// Metric components sampled on a uniform Cartesian grid, used for the
/// `general` kind. Derivatives come from 4th-order central differences.
#[derive(Debug, Clone)]
pub struct GridMetric {
    pub nx: usize,
    pub ny: usize,
    pub spacing: f64,
    /// Lower-left corner of the grid.
    pub origin: Point,
    /// Row-major `g11, g12, g22` triples.
    pub data: Vec<[f64; 3]>,
}

impl GridMetric {
    fn sample(&self, i: i64, j: i64) -> [f64; 3] {
        let i = i.clamp(0, self.nx as i64 - 1) as usize;
        let j = j.clamp(0, self.ny as i64 - 1) as usize;
        self.data[j * self.nx + i]
    }

    fn interp(&self, x: Point, f: impl Fn(i64, i64) -> [f64; 3]) -> [f64; 3] {
        let u = (x[0] - self.origin[0]) / self.spacing;
        let v = (x[1] - self.origin[1]) / self.spacing;
        let i0 = u.floor() as i64;
        let j0 = v.floor() as i64;
        let fu = u - i0 as f64;
        let fv = v - j0 as f64;
        let mut out = [0.0; 3];
        for k in 0..3 {
            let a = f(i0, j0)[k] * (1.0 - fu) + f(i0 + 1, j0)[k] * fu;
            let b = f(i0, j0 + 1)[k] * (1.0 - fu) + f(i0 + 1, j0 + 1)[k] * fu;
            out[k] = a * (1.0 - fv) + b * fv;
        }
        out
    }

    fn components(&self, x: Point) -> [f64; 3] {
        self.interp(x, |i, j| self.sample(i, j))
    }

    /// 4th-order central difference of the components in direction `dir`.
    fn derivative(&self, x: Point, dir: usize) -> [f64; 3] {
        let h = self.spacing;
        let d = |i: i64, j: i64| -> [f64; 3] {
            let (di, dj) = if dir == 0 { (1i64, 0i64) } else { (0, 1) };
            let mut out = [0.0; 3];
            for k in 0..3 {
                out[k] = (-self.sample(i + 2 * di, j + 2 * dj)[k]
                    + 8.0 * self.sample(i + di, j + dj)[k]
                    - 8.0 * self.sample(i - di, j - dj)[k]
                    + self.sample(i - 2 * di, j - 2 * dj)[k])
                    / (12.0 * h);
            }
            out
        };
        self.interp(x, d)
    }
}

#[derive(Debug, Clone)]
pub enum MetricKind {
    Euclidean,
    Conformal(ConformalProfile),
    Grid(GridMetric),
}

/// A 2D Riemannian metric on the extended disk `M1`, with the inner manifold
/// `M` of radius `radius_m` and the simple extension of radius `radius_m1`.
#[derive(Debug, Clone)]
pub struct Metric {
    pub kind: MetricKind,
    pub radius_m: f64,
    pub radius_m1: f64,
}

impl Metric {
    pub fn euclidean(radius_m: f64, radius_m1: f64) -> Self {
        assert!(radius_m1 > radius_m && radius_m > 0.0);
        Metric {
            kind: MetricKind::Euclidean,
            radius_m,
            radius_m1,
        }
    }

    pub fn conformal(profile: ConformalProfile, radius_m: f64, radius_m1: f64) -> Self {
        assert!(radius_m1 > radius_m && radius_m > 0.0);
        Metric {
            kind: MetricKind::Conformal(profile),
            radius_m,
            radius_m1,
        }
    }

    /// Unit disk with the default 1.2x simple extension.
    pub fn unit_disk() -> Self {
        Metric::euclidean(1.0, 1.2)
    }

    pub fn is_euclidean(&self) -> bool {
        matches!(self.kind, MetricKind::Euclidean)
    }

    pub fn contains_m1(&self, x: Point) -> bool {
        x[0] * x[0] + x[1] * x[1] <= self.radius_m1 * self.radius_m1 + 1e-9
    }

    pub fn contains_m(&self, x: Point) -> bool {
        x[0] * x[0] + x[1] * x[1] <= self.radius_m * self.radius_m + 1e-12
    }

    /// Metric components `[[g11, g12], [g12, g22]]` at `x`.
    pub fn g(&self, x: Point) -> [[f64; 2]; 2] {
        match &self.kind {
            MetricKind::Euclidean => [[1.0, 0.0], [0.0, 1.0]],
            MetricKind::Conformal(p) => {
                let e = (2.0 * p.value(x)).exp();
                [[e, 0.0], [0.0, e]]
            }
            MetricKind::Grid(grid) => {
                let c = grid.components(x);
                [[c[0], c[1]], [c[1], c[2]]]
            }
        }
    }

    pub fn det_g(&self, x: Point) -> f64 {
        let g = self.g(x);
        g[0][0] * g[1][1] - g[0][1] * g[0][1]
    }

    pub fn sqrt_det_g(&self, x: Point) -> f64 {
        self.det_g(x).sqrt()
    }

    /// Inverse metric components.
    pub fn g_inv(&self, x: Point) -> [[f64; 2]; 2] {
        let g = self.g(x);
        let det = g[0][0] * g[1][1] - g[0][1] * g[0][1];
        [
            [g[1][1] / det, -g[0][1] / det],
            [-g[0][1] / det, g[0][0] / det],
        ]
    }

    /// Partial derivatives `dg[k][i][j] = d_k g_ij`.
    pub fn dg(&self, x: Point) -> [[[f64; 2]; 2]; 2] {
        match &self.kind {
            MetricKind::Euclidean => [[[0.0; 2]; 2]; 2],
            MetricKind::Conformal(p) => {
                let e = (2.0 * p.value(x)).exp();
                let grad = p.gradient(x);
                let mut out = [[[0.0; 2]; 2]; 2];
                for k in 0..2 {
                    let d = 2.0 * grad[k] * e;
                    out[k][0][0] = d;
                    out[k][1][1] = d;
                }
                out
            }
            MetricKind::Grid(grid) => {
                let mut out = [[[0.0; 2]; 2]; 2];
                for k in 0..2 {
                    let d = grid.derivative(x, k);
                    out[k][0][0] = d[0];
                    out[k][0][1] = d[1];
                    out[k][1][0] = d[1];
                    out[k][1][1] = d[2];
                }
                out
            }
        }
    }

    /// Riemannian inner product of two vectors at `x`.
    pub fn inner(&self, x: Point, u: Vector, v: Vector) -> f64 {
        let g = self.g(x);
        g[0][0] * u[0] * v[0] + g[0][1] * (u[0] * v[1] + u[1] * v[0]) + g[1][1] * u[1] * v[1]
    }

    pub fn norm(&self, x: Point, v: Vector) -> f64 {
        self.inner(x, v, v).sqrt()
    }

    /// Inner product of two one-forms (covectors) via the inverse metric.
    pub fn inner_form(&self, x: Point, a: [f64; 2], b: [f64; 2]) -> f64 {
        let gi = self.g_inv(x);
        gi[0][0] * a[0] * b[0] + gi[0][1] * (a[0] * b[1] + a[1] * b[0]) + gi[1][1] * a[1] * b[1]
    }

    /// Normalize `v` to unit g-length at `x`.
    pub fn normalize(&self, x: Point, v: Vector) -> Vector {
        let n = self.norm(x, v);
        [v[0] / n, v[1] / n]
    }

    /// Gauss curvature; analytic for euclidean/conformal, finite differences
    /// on the Christoffel symbols otherwise.
    pub fn gauss_curvature(&self, x: Point) -> f64 {
        match &self.kind {
            MetricKind::Euclidean => 0.0,
            MetricKind::Conformal(p) => -(-2.0 * p.value(x)).exp() * p.laplacian(x),
            MetricKind::Grid(_) => {
                // K = (d1 G2 - d2 G1 + ...) via R^1_{212}; use FD of Christoffels.
                let h = 1e-4;
                let gamma = |y: Point| self.christoffel_unchecked(y);
                let gp1 = gamma([x[0] + h, x[1]]);
                let gm1 = gamma([x[0] - h, x[1]]);
                let gp2 = gamma([x[0], x[1] + h]);
                let gm2 = gamma([x[0], x[1] - h]);
                let g0 = gamma(x);
                // R^1_{212} = d_1 G^1_{22} - d_2 G^1_{12} + G^1_{1m} G^m_{22} - G^1_{2m} G^m_{12}
                let d1 = (gp1[0][1][1] - gm1[0][1][1]) / (2.0 * h);
                let d2 = (gp2[0][0][1] - gm2[0][0][1]) / (2.0 * h);
                let mut r = d1 - d2;
                for m in 0..2 {
                    r += g0[0][0][m] * g0[m][1][1] - g0[0][1][m] * g0[m][0][1];
                }
                let g = self.g(x);
                let det = g[0][0] * g[1][1] - g[0][1] * g[0][1];
                // K = g_{1m} R^m_{212} / det g; here only R^1 and R^2 components
                let d1_2 = {
                    let d1b = (gp1[1][1][1] - gm1[1][1][1]) / (2.0 * h);
                    let d2b = (gp2[1][0][1] - gm2[1][0][1]) / (2.0 * h);
                    let mut rb = d1b - d2b;
                    for m in 0..2 {
                        rb += g0[1][0][m] * g0[m][1][1] - g0[1][1][m] * g0[m][0][1];
                    }
                    rb
                };
                (g[0][0] * r + g[0][1] * d1_2) / det
            }
        }
    }

    fn christoffel_unchecked(&self, x: Point) -> [[[f64; 2]; 2]; 2] {
        let gi = self.g_inv(x);
        let dg = self.dg(x);
        let mut gamma = [[[0.0; 2]; 2]; 2];
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let mut s = 0.0;
                    for l in 0..2 {
                        s += gi[k][l] * (dg[i][l][j] + dg[j][l][i] - dg[l][i][j]);
                    }
                    gamma[k][i][j] = 0.5 * s;
                }
            }
        }
        gamma
    }
}

/// Levi-Civita Christoffel symbols `Gamma^k_{ij}` at `x`.
pub fn christoffel(metric: &Metric, x: Point) -> Result<[[[f64; 2]; 2]; 2]> {
    if !metric.contains_m1(x) {
        return Err(Error::Domain(format!(
            "christoffel: point ({:.4}, {:.4}) outside M1",
            x[0], x[1]
        )));
    }
    Ok(metric.christoffel_unchecked(x))
}

/// A traced unit-speed geodesic from a point to its exit through the boundary
/// of `M1`, sampled at the fixed integrator step.
#[derive(Debug, Clone)]
pub struct GeodesicPath {
    pub start: Point,
    pub direction: Vector,
    /// `(position, velocity)` at `t = i * step` for `i < nodes.len() - 1`;
    /// the last node sits on the boundary at `t = exit_time`.
    pub nodes: Vec<(Point, Vector)>,
    pub step: f64,
    pub exit_time: f64,
}

impl GeodesicPath {
    /// Position and velocity at parameter `t` (cubic Hermite between nodes).
    pub fn at(&self, t: f64) -> (Point, Vector) {
        let t = t.clamp(0.0, self.exit_time);
        let n = self.nodes.len();
        if n == 1 {
            return self.nodes[0];
        }
        let last_seg_start = (n - 2) as f64 * self.step;
        let (i, h, s) = if t >= last_seg_start {
            let h = self.exit_time - last_seg_start;
            if h <= 1e-14 {
                return self.nodes[n - 1];
            }
            (n - 2, h, (t - last_seg_start) / h)
        } else {
            let i = (t / self.step).floor() as usize;
            (i, self.step, t / self.step - i as f64)
        };
        let (p0, v0) = self.nodes[i];
        let (p1, v1) = self.nodes[i + 1];
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let mut pos = [0.0; 2];
        let mut vel = [0.0; 2];
        let d00 = 6.0 * s2 - 6.0 * s;
        let d10 = 3.0 * s2 - 4.0 * s + 1.0;
        let d01 = -6.0 * s2 + 6.0 * s;
        let d11 = 3.0 * s2 - 2.0 * s;
        for k in 0..2 {
            pos[k] = h00 * p0[k] + h10 * h * v0[k] + h01 * p1[k] + h11 * h * v1[k];
            vel[k] = (d00 * p0[k] + d01 * p1[k]) / h + d10 * v0[k] + d11 * v1[k];
        }
        (pos, vel)
    }

    pub fn exit_point(&self) -> Point {
        self.nodes.last().unwrap().0
    }

    pub fn exit_velocity(&self) -> Vector {
        self.nodes.last().unwrap().1
    }
}

fn geodesic_rhs(metric: &Metric, pos: Point, vel: Vector) -> (Vector, Vector) {
    let gamma = metric.christoffel_unchecked(pos);
    let mut acc = [0.0; 2];
    for k in 0..2 {
        let mut s = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                s += gamma[k][i][j] * vel[i] * vel[j];
            }
        }
        acc[k] = -s;
    }
    (vel, acc)
}

fn rk4_step(metric: &Metric, pos: Point, vel: Vector, h: f64) -> (Point, Vector) {
    let (k1p, k1v) = geodesic_rhs(metric, pos, vel);
    let (k2p, k2v) = geodesic_rhs(
        metric,
        [pos[0] + 0.5 * h * k1p[0], pos[1] + 0.5 * h * k1p[1]],
        [vel[0] + 0.5 * h * k1v[0], vel[1] + 0.5 * h * k1v[1]],
    );
    let (k3p, k3v) = geodesic_rhs(
        metric,
        [pos[0] + 0.5 * h * k2p[0], pos[1] + 0.5 * h * k2p[1]],
        [vel[0] + 0.5 * h * k2v[0], vel[1] + 0.5 * h * k2v[1]],
    );
    let (k4p, k4v) = geodesic_rhs(
        metric,
        [pos[0] + h * k3p[0], pos[1] + h * k3p[1]],
        [vel[0] + h * k3v[0], vel[1] + h * k3v[1]],
    );
    (
        [
            pos[0] + h / 6.0 * (k1p[0] + 2.0 * k2p[0] + 2.0 * k3p[0] + k4p[0]),
            pos[1] + h / 6.0 * (k1p[1] + 2.0 * k2p[1] + 2.0 * k3p[1] + k4p[1]),
        ],
        [
            vel[0] + h / 6.0 * (k1v[0] + 2.0 * k2v[0] + 2.0 * k3v[0] + k4v[0]),
            vel[1] + h / 6.0 * (k1v[1] + 2.0 * k2v[1] + 2.0 * k3v[1] + k4v[1]),
        ],
    )
}

fn level(metric: &Metric, x: Point) -> f64 {
    x[0] * x[0] + x[1] * x[1] - metric.radius_m1 * metric.radius_m1
}

/// Trace the unit-speed geodesic from `x` with initial direction `xi` until
/// it leaves `M1`. `xi` must have unit g-norm within 1e-10.
pub fn trace_geodesic(metric: &Metric, x: Point, xi: Vector) -> Result<GeodesicPath> {
    let n = metric.norm(x, xi);
    if (n - 1.0).abs() > 1e-10 {
        return Err(Error::Input(format!(
            "trace_geodesic: |xi|_g = {n} is not unit within 1e-10"
        )));
    }
    if !metric.contains_m1(x) {
        return Err(Error::Domain(format!(
            "trace_geodesic: start ({:.4}, {:.4}) outside M1",
            x[0], x[1]
        )));
    }
    let h = GEO_STEP;
    let max_steps = (20.0 * metric.radius_m1 / h).ceil() as usize;
    let mut nodes = vec![(x, xi)];
    let mut pos = x;
    let mut vel = xi;
    let mut t = 0.0;
    for step_count in 0.. {
        if step_count > max_steps {
            return Err(Error::Trapping {
                x: x[0],
                y: x[1],
                steps: max_steps,
            });
        }
        let (npos, nvel) = rk4_step(metric, pos, vel, h);
        if level(metric, npos) > 0.0 && t + h > 1e-12 {
            // Bisect the crossing inside (t, t + h].
            let mut lo = 0.0;
            let mut hi = h;
            let mut bpos = npos;
            let mut bvel = nvel;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let (mpos, mvel) = rk4_step(metric, pos, vel, mid);
                if level(metric, mpos) > 0.0 {
                    hi = mid;
                    bpos = mpos;
                    bvel = mvel;
                } else {
                    lo = mid;
                }
                if level(metric, bpos).abs() < EXIT_TOL || hi - lo < 1e-15 {
                    break;
                }
            }
            let exit_time = t + hi;
            nodes.push((bpos, bvel));
            return Ok(GeodesicPath {
                start: x,
                direction: xi,
                nodes,
                step: h,
                exit_time,
            });
        }
        pos = npos;
        vel = nvel;
        t += h;
        nodes.push((pos, vel));
    }
    unreachable!()
}

/// Scalar Jacobi field along a geodesic: `J'' + K J = 0`, `J(0) = 0`,
/// `J'(0) = 1`. Returns samples at the path nodes. `J^2` is the polar volume
/// density `rho`.
pub fn jacobi_along(metric: &Metric, path: &GeodesicPath) -> Vec<f64> {
    let h = path.step;
    let n = path.nodes.len();
    let mut out = Vec::with_capacity(n);
    let mut j = 0.0;
    let mut dj = 1.0;
    out.push(j);
    for i in 0..n - 1 {
        let seg = if i == n - 2 {
            (path.exit_time - (n - 2) as f64 * h).max(1e-15)
        } else {
            h
        };
        let t0 = i as f64 * h;
        let k_at = |t: f64| {
            let (p, _) = path.at(t);
            metric.gauss_curvature(p)
        };
        // RK4 on (J, J').
        let f = |j: f64, dj: f64, t: f64| (dj, -k_at(t) * j);
        let (a1, b1) = f(j, dj, t0);
        let (a2, b2) = f(j + 0.5 * seg * a1, dj + 0.5 * seg * b1, t0 + 0.5 * seg);
        let (a3, b3) = f(j + 0.5 * seg * a2, dj + 0.5 * seg * b2, t0 + 0.5 * seg);
        let (a4, b4) = f(j + seg * a3, dj + seg * b3, t0 + seg);
        j += seg / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
        dj += seg / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
        out.push(j);
    }
    out
}

/// Result of a two-point geodesic shooting solve.
pub struct Shot {
    pub path: GeodesicPath,
    /// Arc length from the base point to the target.
    pub arc_length: f64,
    /// Initial direction angle at the base point.
    pub angle: f64,
}

/// Solve the two-point problem: find the geodesic from `y` through `x`.
/// Newton/secant on the initial angle, seeded from the Euclidean chord.
pub fn shoot(metric: &Metric, x: Point, y: Point) -> Result<Shot> {
    let seed = (x[1] - y[1]).atan2(x[0] - y[0]);
    let miss = |angle: f64| -> Result<(f64, f64, GeodesicPath)> {
        let dir0 = [angle.cos(), angle.sin()];
        let dir = metric.normalize(y, dir0);
        let path = trace_geodesic(metric, y, dir)?;
        // Closest approach along the path; then the signed lateral miss.
        let mut best_t = 0.0;
        let mut best_d2 = f64::INFINITY;
        let samples = 4 * path.nodes.len();
        for i in 0..=samples {
            let t = path.exit_time * i as f64 / samples as f64;
            let (p, _) = path.at(t);
            let d2 = (p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2);
            if d2 < best_d2 {
                best_d2 = d2;
                best_t = t;
            }
        }
        // Golden-section polish of the closest-approach parameter.
        let mut lo = (best_t - path.exit_time / samples as f64).max(0.0);
        let mut hi = (best_t + path.exit_time / samples as f64).min(path.exit_time);
        for _ in 0..60 {
            let m1 = lo + 0.381966 * (hi - lo);
            let m2 = hi - 0.381966 * (hi - lo);
            let d = |t: f64| {
                let (p, _) = path.at(t);
                (p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2)
            };
            if d(m1) < d(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        best_t = 0.5 * (lo + hi);
        let (p, v) = path.at(best_t);
        // Signed miss: component of (x - p) along the leftward normal of v.
        let nrm = [-v[1], v[0]];
        let miss = (x[0] - p[0]) * nrm[0] + (x[1] - p[1]) * nrm[1];
        Ok((miss, best_t, path))
    };

    let mut a0 = seed;
    let (mut m0, mut t0, mut path0) = miss(a0)?;
    if m0.abs() < 1e-12 {
        return Ok(Shot {
            path: path0,
            arc_length: t0,
            angle: a0,
        });
    }
    let mut a1 = seed + 1e-4;
    let (mut m1, mut t1, mut path1) = miss(a1)?;
    for _ in 0..80 {
        if (m1 - m0).abs() < 1e-16 {
            break;
        }
        let a2 = a1 - m1 * (a1 - a0) / (m1 - m0);
        let (m2, t2, path2) = miss(a2)?;
        a0 = a1;
        m0 = m1;
        a1 = a2;
        m1 = m2;
        t1 = t2;
        path1 = path2;
        let _ = (t0, &path0);
        t0 = t1;
        path0 = path1.clone();
        if m1.abs() < 1e-11 {
            break;
        }
    }
    if m1.abs() > 1e-8 {
        return Err(Error::Geometry(format!(
            "shooting solve failed: residual miss {m1:.3e} for target ({:.4}, {:.4})",
            x[0], x[1]
        )));
    }
    Ok(Shot {
        path: path1,
        arc_length: t1,
        angle: a1,
    })
}

/// Geodesic distance `d_g(x, y)` from an interior point to a base point on or
/// outside the boundary of `M`. This is the eikonal solution `psi(x)`.
pub fn distance(metric: &Metric, x: Point, y: Point) -> Result<f64> {
    if metric.is_euclidean() {
        return Ok(((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt());
    }
    Ok(shoot(metric, x, y)?.arc_length)
}

/// Geodesic polar chart around a base point `y` on the boundary of `M1`:
/// radial geodesics over a fan of directions with the Jacobi density
/// `rho = J^2` along each ray.
#[derive(Debug, Clone)]
pub struct PolarChart {
    pub base_point: Point,
    /// Direction angles (global, at `y`).
    pub angles: Vec<f64>,
    pub rays: Vec<GeodesicPath>,
    /// `jacobi[j][i]` = J at node `i` of ray `j`; `rho = J^2`.
    pub jacobi: Vec<Vec<f64>>,
}

impl PolarChart {
    /// Density `rho(r)` on ray `j`, with the quadratic Taylor guard near
    /// `r = 0` (`rho ~ r^2` in normal coordinates).
    pub fn rho(&self, ray: usize, r: f64) -> f64 {
        if r < 1e-3 {
            return r * r;
        }
        let path = &self.rays[ray];
        let js = &self.jacobi[ray];
        let h = path.step;
        let n = js.len();
        let i = ((r / h).floor() as usize).min(n - 2);
        let t0 = i as f64 * h;
        let seg = if i == n - 2 {
            (path.exit_time - t0).max(1e-15)
        } else {
            h
        };
        let s = ((r - t0) / seg).clamp(0.0, 1.0);
        let j = js[i] * (1.0 - s) + js[i + 1] * s;
        j * j
    }
}

/// Build the polar chart at `y` over `n_dir` directions covering the inward
/// half-circle. Errors if a conjugate point is met (Jacobi sign change).
pub fn polar_chart(metric: &Metric, y: Point, n_dir: usize) -> Result<PolarChart> {
    let r2 = y[0] * y[0] + y[1] * y[1];
    if (r2.sqrt() - metric.radius_m1).abs() > 1e-8 {
        return Err(Error::Input(format!(
            "polar_chart: base point ({:.4}, {:.4}) not on boundary of M1",
            y[0], y[1]
        )));
    }
    let inward = (-y[1]).atan2(-y[0]).rem_euclid(2.0 * std::f64::consts::PI);
    let inward = [inward.cos(), inward.sin()];
    let base_angle = inward[1].atan2(inward[0]);
    let mut angles = Vec::with_capacity(n_dir);
    let mut rays = Vec::with_capacity(n_dir);
    let mut jacobi = Vec::with_capacity(n_dir);
    for j in 0..n_dir {
        // Midpoint grid over the open inward half-circle.
        let beta = -std::f64::consts::FRAC_PI_2
            + std::f64::consts::PI * (j as f64 + 0.5) / n_dir as f64;
        let angle = base_angle + beta;
        let dir = metric.normalize(y, [angle.cos(), angle.sin()]);
        let path = trace_geodesic(metric, y, dir)?;
        let js = jacobi_along(metric, &path);
        if js.iter().skip(1).any(|&v| v <= 0.0) {
            return Err(Error::Geometry(format!(
                "conjugate point on ray {j} from ({:.3}, {:.3})",
                y[0], y[1]
            )));
        }
        angles.push(angle);
        rays.push(path);
        jacobi.push(js);
    }
    Ok(PolarChart {
        base_point: y,
        angles,
        rays,
        jacobi,
    })
}

/// Simplicity diagnostics for a metric: convexity of the outer boundary,
/// minimal Jacobi determinant over a geodesic fan, and the longest exit time.
#[derive(Debug, Clone, Serialize)]
pub struct SimplicityReport {
    pub convexity_margin: f64,
    pub min_jacobi_det: f64,
    pub max_exit_time: f64,
    pub trapped: bool,
    pub pass: bool,
}

/// Scan a fan of geodesics from boundary points of `M1` and check strict
/// convexity, absence of conjugate points, and absence of trapping.
pub fn check_simplicity(metric: &Metric) -> SimplicityReport {
    let n_y = 16;
    let n_dir = 17;
    let r1 = metric.radius_m1;
    let mut min_j = f64::INFINITY;
    let mut max_exit: f64 = 0.0;
    let mut trapped = false;
    for iy in 0..n_y {
        let phi = 2.0 * std::f64::consts::PI * iy as f64 / n_y as f64;
        let y = [r1 * phi.cos(), r1 * phi.sin()];
        let base_angle = (-y[1]).atan2(-y[0]);
        for j in 0..n_dir {
            let beta = -std::f64::consts::FRAC_PI_2 * 0.98
                + 0.98 * std::f64::consts::PI * j as f64 / (n_dir - 1) as f64;
            let dir = metric.normalize(y, [(base_angle + beta).cos(), (base_angle + beta).sin()]);
            match trace_geodesic(metric, y, dir) {
                Ok(path) => {
                    max_exit = max_exit.max(path.exit_time);
                    let js = jacobi_along(metric, &path);
                    for &v in js.iter().skip(1) {
                        min_j = min_j.min(v);
                    }
                }
                Err(Error::Trapping { .. }) => trapped = true,
                Err(_) => {}
            }
        }
    }
    // Geodesic curvature of the boundary circle of M1, sampled.
    let mut margin = f64::INFINITY;
    for iy in 0..(4 * n_y) {
        let phi = 2.0 * std::f64::consts::PI * iy as f64 / (4 * n_y) as f64;
        let y = [r1 * phi.cos(), r1 * phi.sin()];
        let tangent = [-phi.sin(), phi.cos()];
        let tn = metric.norm(y, tangent);
        let t_unit = [tangent[0] / tn, tangent[1] / tn];
        // Acceleration of the boundary curve in unit-speed parametrization:
        // a = c'' + Gamma(c', c'), with c'' = -y / r1 / |c'|_g^2 scaled.
        let gamma = metric.christoffel_unchecked(y);
        let mut acc = [
            -y[0] / (r1 * r1) / (tn * tn) * 1.0,
            -y[1] / (r1 * r1) / (tn * tn) * 1.0,
        ];
        for k in 0..2 {
            let mut s = 0.0;
            for i in 0..2 {
                for jj in 0..2 {
                    s += gamma[k][i][jj] * t_unit[i] * t_unit[jj];
                }
            }
            acc[k] += s;
        }
        // Inward normal (unit in g).
        let n_in = metric.normalize(y, [-y[0] / r1, -y[1] / r1]);
        // Project out the tangential part in g before pairing.
        let kappa = metric.inner(y, acc, n_in);
        margin = margin.min(kappa);
    }
    let pass = !trapped && min_j > 0.0 && margin > 0.0;
    SimplicityReport {
        convexity_margin: margin,
        min_jacobi_det: min_j,
        max_exit_time: max_exit,
        trapped,
        pass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn christoffel_euclidean_zero() {
        let m = Metric::unit_disk();
        let g = christoffel(&m, [0.3, -0.2]).unwrap();
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    assert_eq!(g[k][i][j], 0.0);
                }
            }
        }
    }

    #[test]
    fn christoffel_constant_conformal_zero() {
        let m = Metric::conformal(ConformalProfile::Constant { value: 0.3 }, 1.0, 1.2);
        let g = christoffel(&m, [0.1, 0.5]).unwrap();
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    assert!(g[k][i][j].abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn christoffel_outside_domain_errors() {
        let m = Metric::unit_disk();
        assert!(christoffel(&m, [2.0, 0.0]).is_err());
    }

    #[test]
    fn christoffel_matches_finite_differences() {
        // Oracle: central finite differences of g_ij feed the Levi-Civita
        // formula directly.
        let m = Metric::conformal(ConformalProfile::LinearX { amp: 0.1 }, 1.0, 1.2);
        let x = [0.0, 0.0];
        let gamma = christoffel(&m, x).unwrap();
        let h = 1e-6;
        let mut dg = [[[0.0; 2]; 2]; 2];
        for k in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let gp = m.g(xp);
            let gm = m.g(xm);
            for i in 0..2 {
                for j in 0..2 {
                    dg[k][i][j] = (gp[i][j] - gm[i][j]) / (2.0 * h);
                }
            }
        }
        let gi = m.g_inv(x);
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let mut s = 0.0;
                    for l in 0..2 {
                        s += gi[k][l] * (dg[i][l][j] + dg[j][l][i] - dg[l][i][j]);
                    }
                    assert!(
                        (gamma[k][i][j] - 0.5 * s).abs() < 1e-6,
                        "Gamma^{k}_{i}{j}: analytic {} vs FD {}",
                        gamma[k][i][j],
                        0.5 * s
                    );
                }
            }
        }
    }

    #[test]
    fn christoffel_symmetric_lower_indices() {
        let m = Metric::conformal(
            ConformalProfile::Gaussian {
                amp: 0.05,
                width: 0.7,
                cx: 0.2,
                cy: -0.1,
            },
            1.0,
            1.2,
        );
        let g = christoffel(&m, [0.4, 0.3]).unwrap();
        for k in 0..2 {
            assert!((g[k][0][1] - g[k][1][0]).abs() < 1e-15);
        }
    }

    #[test]
    fn diameter_chord_exit_time() {
        let m = Metric::euclidean(0.5, 1.0);
        let path = trace_geodesic(&m, [-1.0, 0.0], [1.0, 0.0]).unwrap();
        assert!((path.exit_time - 2.0).abs() < 1e-8, "{}", path.exit_time);
        let exit = path.exit_point();
        assert!((exit[0] - 1.0).abs() < 1e-7 && exit[1].abs() < 1e-7);
    }

    #[test]
    fn radius_exit_time_from_center() {
        let m = Metric::euclidean(0.5, 1.0);
        for angle in [0.0f64, 0.7, 2.1, -1.3] {
            let path = trace_geodesic(&m, [0.0, 0.0], [angle.cos(), angle.sin()]).unwrap();
            assert!((path.exit_time - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn unit_speed_preserved() {
        let m = Metric::conformal(ConformalProfile::RadialQuadratic { amp: 0.05 }, 1.0, 1.2);
        let dir = m.normalize([-1.2, 0.0], [1.0, 0.1]);
        let path = trace_geodesic(&m, [-1.2, 0.0], dir).unwrap();
        for (p, v) in &path.nodes {
            assert!((m.norm(*p, *v) - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn conformal_exit_time_matches_fine_rk_oracle() {
        // Oracle: the same chord traced by RK4 at 1/40 of the step.
        let m = Metric::conformal(ConformalProfile::RadialQuadratic { amp: 0.05 }, 1.0, 1.2);
        let dir = m.normalize([-1.2, 0.0], [1.0, 0.0]);
        let path = trace_geodesic(&m, [-1.2, 0.0], dir).unwrap();

        let h = GEO_STEP / 40.0;
        let mut pos = [-1.2, 0.0];
        let mut vel = dir;
        let mut t = 0.0;
        loop {
            let (np, nv) = rk4_step(&m, pos, vel, h);
            if level(&m, np) > 0.0 {
                let mut lo = 0.0;
                let mut hi = h;
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    let (mp, _) = rk4_step(&m, pos, vel, mid);
                    if level(&m, mp) > 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                t += hi;
                break;
            }
            pos = np;
            vel = nv;
            t += h;
        }
        assert!(
            (path.exit_time - t).abs() < 1e-6,
            "coarse {} vs fine oracle {}",
            path.exit_time,
            t
        );
    }

    #[test]
    fn euclidean_distances() {
        let m = Metric::unit_disk();
        assert!((distance(&m, [0.0, 0.0], [1.0, 0.0]).unwrap() - 1.0).abs() < 1e-12);
        let d = distance(&m, [0.3, 0.4], [-1.0, 0.0]).unwrap();
        assert!((d - 1.3601470508735443).abs() < 1e-12);
    }

    #[test]
    fn conformal_distance_matches_arc_length_oracle() {
        // Oracle: arc length read off the shooting solve's traced path.
        let m = Metric::conformal(ConformalProfile::RadialQuadratic { amp: 0.05 }, 1.0, 1.2);
        let x = [0.3, 0.2];
        let y = [-1.2, 0.0];
        let shot = shoot(&m, x, y).unwrap();
        let d = distance(&m, x, y).unwrap();
        assert!((d - shot.arc_length).abs() < 1e-6);
        // The path really passes through x.
        let (p, _) = shot.path.at(shot.arc_length);
        let miss = ((p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2)).sqrt();
        assert!(miss < 1e-7, "miss {miss}");
    }

    #[test]
    fn boundary_distance_symmetry() {
        let m = Metric::conformal(ConformalProfile::LinearX { amp: 0.08 }, 1.0, 1.2);
        let x = [1.2 * 0.6f64.cos(), 1.2 * 0.6f64.sin()];
        let y = [-1.2, 0.0];
        let dxy = distance(&m, x, y).unwrap();
        let dyx = distance(&m, y, x).unwrap();
        assert!((dxy - dyx).abs() < 1e-6, "{dxy} vs {dyx}");
    }

    #[test]
    fn euclidean_polar_density_is_r_squared() {
        let m = Metric::euclidean(1.0, 1.2);
        let chart = polar_chart(&m, [-1.2, 0.0], 9).unwrap();
        for j in 0..chart.rays.len() {
            let rmax = chart.rays[j].exit_time;
            for frac in [0.1, 0.4, 0.8] {
                let r = frac * rmax;
                let rho = chart.rho(j, r);
                assert!(
                    (rho / (r * r) - 1.0).abs() < 1e-6,
                    "rho {} at r {}",
                    rho,
                    r
                );
            }
        }
    }

    #[test]
    fn polar_density_normal_coordinate_limit() {
        let m = Metric::conformal(ConformalProfile::RadialQuadratic { amp: 0.05 }, 1.0, 1.2);
        let chart = polar_chart(&m, [0.0, 1.2], 5).unwrap();
        for j in 0..chart.rays.len() {
            for r in [2e-3, 5e-3, 1e-2] {
                let ratio = chart.rho(j, r) / (r * r);
                assert!((ratio - 1.0).abs() < 1e-3, "ratio {ratio} at r {r}");
            }
        }
    }

    #[test]
    fn polar_density_matches_metric_pullback_oracle() {
        // Oracle: rho = |d x / d theta|_g^2 via central differences of
        // neighboring radial geodesics (Gauss lemma kills the cross term).
        let m = Metric::conformal(ConformalProfile::RadialQuadratic { amp: 0.05 }, 1.0, 1.2);
        let y = [-1.2, 0.0];
        let chart = polar_chart(&m, y, 513).unwrap();
        let dtheta = chart.angles[1] - chart.angles[0];
        for j in (30..chart.rays.len() - 30).step_by(100) {
            let rmax = chart.rays[j]
                .exit_time
                .min(chart.rays[j - 1].exit_time)
                .min(chart.rays[j + 1].exit_time);
            for frac in [0.3, 0.6, 0.9] {
                let r = frac * rmax;
                let (pm, _) = chart.rays[j - 1].at(r);
                let (pp, _) = chart.rays[j + 1].at(r);
                let (p0, _) = chart.rays[j].at(r);
                let dxdtheta = [
                    (pp[0] - pm[0]) / (2.0 * dtheta),
                    (pp[1] - pm[1]) / (2.0 * dtheta),
                ];
                let rho_fd = m.inner(p0, dxdtheta, dxdtheta);
                let rho = chart.rho(j, r);
                assert!(
                    (rho - rho_fd).abs() < 1e-4 * rho.max(1.0),
                    "ray {j} r {r}: jacobi {rho} vs pullback {rho_fd}"
                );
            }
        }
    }

    #[test]
    fn simplicity_euclidean_passes() {
        let m = Metric::euclidean(0.5, 1.0);
        let rep = check_simplicity(&m);
        assert!(rep.pass, "{rep:?}");
        assert!((rep.max_exit_time - 2.0).abs() < 1e-4);
    }

    #[test]
    fn simplicity_small_conformal_passes() {
        let m = Metric::conformal(ConformalProfile::RadialQuadratic { amp: 0.05 }, 1.0, 1.2);
        let rep = check_simplicity(&m);
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn simplicity_focusing_lens_fails() {
        let m = Metric::conformal(ConformalProfile::RadialQuadratic { amp: -2.0 }, 1.0, 1.2);
        let rep = check_simplicity(&m);
        assert!(!rep.pass, "{rep:?}");
        assert!(rep.min_jacobi_det <= 0.0 || rep.trapped, "{rep:?}");
    }

    #[test]
    fn exit_time_consistency_with_reverse_trace() {
        let m = Metric::conformal(ConformalProfile::LinearX { amp: 0.08 }, 1.0, 1.2);
        let y = [-1.2, 0.0];
        let dir = m.normalize(y, [1.0, 0.3]);
        let path = trace_geodesic(&m, y, dir).unwrap();
        let exit = path.exit_point();
        let back = m.normalize(exit, [-path.exit_velocity()[0], -path.exit_velocity()[1]]);
        let rev = trace_geodesic(&m, exit, back).unwrap();
        assert!(
            (rev.exit_time - path.exit_time).abs() < 1e-6,
            "{} vs {}",
            rev.exit_time,
            path.exit_time
        );
    }
}
