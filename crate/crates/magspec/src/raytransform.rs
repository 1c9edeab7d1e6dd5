//! Geodesic ray transforms over the influx boundary of the extended disk:
//! the scalar transform, the one-form transform, their exact discrete
//! adjoints, normal operators, and regularized inversion.
//!
//! Rays are parametrized by a fan: uniform boundary points on the outer
//! circle crossed with uniform direction angles in the inward half-circle,
//! weighted by the standard influx measure (cosine of the angle to the
//! normal times boundary arc length). The discrete forward maps are
//! assembled as sparse matrices acting on nodal values, so the adjoints are
//! literal weighted transposes and the normal operators are symmetric by
//! construction. Closure-based forward evaluation is available separately
//! for generating data without interpolation error; for exact gradients the
//! one-form integral reduces to a potential difference at the ray
//! endpoints, which makes the kernel annihilation exact.

use std::sync::Arc;

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::Result;
use crate::fields::{Discretization, OneFormField, ScalarField};
use crate::geometry::{trace_geodesic, GeodesicPath, Metric, Point, Vector};
use crate::linalg::{cg, Csr};
use crate::mesh::DiskMesh;

/// Maximum integration step along a ray when assembling quadratures.
pub const RAY_STEP: f64 = 5e-3;

/// Fan sampling of the influx boundary: `n_points` boundary positions times
/// `n_angles` inward directions.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct FanSampling {
    pub n_points: usize,
    pub n_angles: usize,
}

impl FanSampling {
    pub fn len(&self) -> usize {
        self.n_points * self.n_angles
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A single influx ray with its quadrature weight in the fan measure.
pub struct Ray {
    pub start: Point,
    pub direction: Vector,
    pub path: GeodesicPath,
    /// Influx measure weight: `mu * ds * dtheta`.
    pub weight: f64,
}

/// All rays of a fan over a fixed geometry.
pub struct RayFamily {
    pub sampling: FanSampling,
    pub rays: Vec<Ray>,
}

/// Trace every geodesic of the fan. Fails if any ray traps or exits
/// abnormally (non-simple geometry).
pub fn shoot_fan(metric: &Metric, sampling: FanSampling) -> Result<RayFamily> {
    let r1 = metric.radius_m1;
    let n_p = sampling.n_points;
    let n_a = sampling.n_angles;
    let rays: Result<Vec<Ray>> = (0..n_p * n_a)
        .into_par_iter()
        .map(|idx| {
            let i = idx / n_a;
            let j = idx % n_a;
            let beta = 2.0 * std::f64::consts::PI * (i as f64 + 0.5) / n_p as f64;
            let start = [r1 * beta.cos(), r1 * beta.sin()];
            // Direction angle relative to the inward normal, midpoint rule
            // over (-pi/2, pi/2).
            let alpha =
                std::f64::consts::PI * ((j as f64 + 0.5) / n_a as f64 - 0.5);
            let phi = beta + std::f64::consts::PI + alpha;
            let dir = metric.normalize(start, [phi.cos(), phi.sin()]);
            let nu_out = metric.normalize(start, [beta.cos(), beta.sin()]);
            let mu = -metric.inner(start, dir, nu_out);
            // Riemannian arc element along the outer circle.
            let tangent = [-beta.sin(), beta.cos()];
            let ds = metric.norm(start, tangent) * r1 * 2.0 * std::f64::consts::PI
                / n_p as f64;
            let dtheta = std::f64::consts::PI / n_a as f64;
            let path = trace_geodesic(metric, start, dir)?;
            Ok(Ray {
                start,
                direction: dir,
                path,
                weight: mu * ds * dtheta,
            })
        })
        .collect();
    Ok(RayFamily {
        sampling,
        rays: rays?,
    })
}

/// Simpson quadrature nodes `(t, weight)` along a path.
fn quad_nodes(path: &GeodesicPath) -> Vec<(f64, f64)> {
    let total = path.exit_time;
    let mut n_seg = (total / RAY_STEP).ceil() as usize;
    if n_seg < 2 {
        n_seg = 2;
    }
    if n_seg % 2 == 1 {
        n_seg += 1;
    }
    let dt = total / n_seg as f64;
    (0..=n_seg)
        .map(|k| {
            let w = if k == 0 || k == n_seg {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            (k as f64 * dt, w * dt / 3.0)
        })
        .collect()
}

/// Scalar transform evaluated with the field's own point evaluation
/// (closure-accurate when available).
pub fn i0_exact(family: &RayFamily, f: &ScalarField) -> Vec<C64> {
    family
        .rays
        .par_iter()
        .map(|ray| {
            let mut s = C64::new(0.0, 0.0);
            for &(t, w) in &quad_nodes(&ray.path) {
                let (x, _) = ray.path.at(t);
                s += w * f.eval(x);
            }
            s
        })
        .collect()
}

/// One-form transform evaluated pointwise; the exact-gradient part of the
/// field integrates to a potential difference at the endpoints.
pub fn i1_exact(family: &RayFamily, a: &OneFormField) -> Vec<C64> {
    family
        .rays
        .par_iter()
        .map(|ray| {
            let mut s = C64::new(0.0, 0.0);
            for &(t, w) in &quad_nodes(&ray.path) {
                let (x, v) = ray.path.at(t);
                let av = a.eval_base_only(x);
                s += w * (av[0] * v[0] + av[1] * v[1]);
            }
            s + a.gauge_endpoint_difference(ray.start, ray.path.exit_point())
        })
        .collect()
}

/// Discrete ray operators: sparse quadrature matrices from nodal values to
/// per-ray integrals, plus the fan weights.
pub struct RayOperator {
    pub sampling: FanSampling,
    pub r0: Csr,
    pub r1: [Csr; 2],
    pub ray_weights: Vec<f64>,
    pub mesh: Arc<DiskMesh>,
}

impl RayOperator {
    pub fn build(mesh: Arc<DiskMesh>, family: &RayFamily) -> Self {
        let n_rays = family.rays.len();
        let n = mesh.num_nodes();
        let per_ray: Vec<(Vec<(usize, usize, C64)>, [Vec<(usize, usize, C64)>; 2])> = family
            .rays
            .par_iter()
            .enumerate()
            .map(|(r, ray)| {
                let mut t0 = Vec::new();
                let mut t1: [Vec<(usize, usize, C64)>; 2] = [Vec::new(), Vec::new()];
                for &(t, w) in &quad_nodes(&ray.path) {
                    let (x, v) = ray.path.at(t);
                    if let Some((tri, bary)) = mesh.locate(x) {
                        let tri = &mesh.triangles[tri];
                        for (c, &node) in tri.v.iter().enumerate() {
                            let base = C64::new(w * bary[c], 0.0);
                            t0.push((r, node, base));
                            t1[0].push((r, node, base * v[0]));
                            t1[1].push((r, node, base * v[1]));
                        }
                    }
                }
                (t0, t1)
            })
            .collect();
        let mut t0 = Vec::new();
        let mut t1a = Vec::new();
        let mut t1b = Vec::new();
        for (a, [b, c]) in per_ray {
            t0.extend(a);
            t1a.extend(b);
            t1b.extend(c);
        }
        RayOperator {
            sampling: family.sampling,
            r0: Csr::from_triplets(n_rays, n, &t0),
            r1: [
                Csr::from_triplets(n_rays, n, &t1a),
                Csr::from_triplets(n_rays, n, &t1b),
            ],
            ray_weights: family.rays.iter().map(|r| r.weight).collect(),
            mesh,
        }
    }

    pub fn i0(&self, f: &[C64]) -> Vec<C64> {
        self.r0.matvec(f)
    }

    pub fn i1(&self, comp: &[Vec<C64>; 2]) -> Vec<C64> {
        let mut out = self.r1[0].matvec(&comp[0]);
        for (o, v) in out.iter_mut().zip(self.r1[1].matvec(&comp[1])) {
            *o += v;
        }
        out
    }

    /// Adjoint of `i0` for the fan measure on data and the lumped measure on
    /// nodal fields over the extended disk.
    pub fn i0_adjoint(&self, data: &[C64]) -> Vec<C64> {
        let weighted: Vec<C64> = data
            .iter()
            .zip(&self.ray_weights)
            .map(|(d, &w)| d * w)
            .collect();
        let mut out = vec![C64::new(0.0, 0.0); self.mesh.num_nodes()];
        self.r0.tr_matvec_accumulate(&weighted, &mut out);
        for (o, &m) in out.iter_mut().zip(&self.mesh.lumped_m1) {
            *o /= m;
        }
        out
    }

    pub fn i1_adjoint(&self, data: &[C64]) -> [Vec<C64>; 2] {
        let weighted: Vec<C64> = data
            .iter()
            .zip(&self.ray_weights)
            .map(|(d, &w)| d * w)
            .collect();
        let n = self.mesh.num_nodes();
        let mut out = [vec![C64::new(0.0, 0.0); n], vec![C64::new(0.0, 0.0); n]];
        for j in 0..2 {
            self.r1[j].tr_matvec_accumulate(&weighted, &mut out[j]);
            for (o, &m) in out[j].iter_mut().zip(&self.mesh.lumped_m1) {
                *o /= m;
            }
        }
        out
    }

    /// Normal operator of the scalar transform.
    pub fn normal0(&self, f: &[C64]) -> Vec<C64> {
        self.i0_adjoint(&self.i0(f))
    }

    /// Normal operator of the one-form transform.
    pub fn normal1(&self, comp: &[Vec<C64>; 2]) -> [Vec<C64>; 2] {
        self.i1_adjoint(&self.i1(comp))
    }

    /// Recover a scalar field from ray data by solving the normal equations
    /// with an H^1 Tikhonov term, via CG in the lumped inner product.
    pub fn invert_i0(
        &self,
        disc: &Discretization,
        data: &[C64],
        reg: f64,
    ) -> Result<ScalarField> {
        let n = self.mesh.num_nodes();
        let d_half: Vec<f64> = self.mesh.lumped_m1.iter().map(|m| m.sqrt()).collect();
        let stiff = &disc.stiff_m1;
        let apply = |u: &[C64], y: &mut [C64]| {
            // y = D^{1/2} (N + reg (D^{-1} K + I)) D^{-1/2} u, symmetric.
            let f: Vec<C64> = u.iter().zip(&d_half).map(|(v, &d)| v / d).collect();
            let nf = self.normal0(&f);
            let kf = stiff.matvec(&f);
            for i in 0..n {
                y[i] = d_half[i]
                    * (nf[i] + reg * (kf[i] / self.mesh.lumped_m1[i] + f[i]));
            }
        };
        let rhs_full = self.i0_adjoint(data);
        let b: Vec<C64> = rhs_full
            .iter()
            .zip(&d_half)
            .map(|(v, &d)| v * d)
            .collect();
        let u = cg(&apply, &b, 1e-10, 4000, None, "ray transform inversion")?;
        let f: Vec<C64> = u.iter().zip(&d_half).map(|(v, &d)| v / d).collect();
        Ok(ScalarField::from_nodal(self.mesh.clone(), f))
    }

    /// Recover a one-form from ray data: regularized normal equations on the
    /// Cartesian components. The normal operator annihilates exact
    /// gradients, so the minimizer approximates the solenoidal part.
    pub fn invert_i1(
        &self,
        disc: &Discretization,
        data: &[C64],
        reg: f64,
    ) -> Result<OneFormField> {
        let n = self.mesh.num_nodes();
        let d_half: Vec<f64> = self.mesh.lumped_m1.iter().map(|m| m.sqrt()).collect();
        let stiff = &disc.stiff_m1;
        let apply = |u: &[C64], y: &mut [C64]| {
            let mut comp = [vec![C64::new(0.0, 0.0); n], vec![C64::new(0.0, 0.0); n]];
            for j in 0..2 {
                for i in 0..n {
                    comp[j][i] = u[j * n + i] / d_half[i];
                }
            }
            let nf = self.normal1(&comp);
            for j in 0..2 {
                let kf = stiff.matvec(&comp[j]);
                for i in 0..n {
                    y[j * n + i] = d_half[i]
                        * (nf[j][i] + reg * (kf[i] / self.mesh.lumped_m1[i] + comp[j][i]));
                }
            }
        };
        let rhs = self.i1_adjoint(data);
        let mut b = vec![C64::new(0.0, 0.0); 2 * n];
        for j in 0..2 {
            for i in 0..n {
                b[j * n + i] = rhs[j][i] * d_half[i];
            }
        }
        let u = cg(&apply, &b, 1e-10, 4000, None, "one-form transform inversion")?;
        let mut comp = [vec![C64::new(0.0, 0.0); n], vec![C64::new(0.0, 0.0); n]];
        for j in 0..2 {
            for i in 0..n {
                comp[j][i] = u[j * n + i] / d_half[i];
            }
        }
        Ok(OneFormField::from_nodal(self.mesh.clone(), comp))
    }
}
