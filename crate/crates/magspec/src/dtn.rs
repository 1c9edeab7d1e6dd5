//! Hyperbolic and elliptic Dirichlet-to-Neumann maps and the spectral
//! bridge between them.
//!
//! The wave solver is a Newmark average-acceleration scheme (trapezoidal,
//! unconditionally stable, second order) on the lumped-mass magnetic
//! operator, with Dirichlet data enforced at the boundary nodes and Neumann
//! traces recovered variationally from the boundary rows of the weak form.
//! The elliptic family solves `(op - z m) u = 0` directly at each spectral
//! parameter. The bridge evaluates the restricted hyperbolic map as a z=0
//! Taylor polynomial of the elliptic family (derivatives given by spectral
//! series over the eigenvalue/trace data) plus a sine-kernel convolution
//! remainder, and compares against the time-domain solver.

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::boundary::{cylinder_hs_norm, CircleSampling};
use crate::error::{Error, Result};
use crate::fields::{Discretization, MagneticOperator};
use crate::linalg::cg;
use crate::spectral::SpectralData;

/// Uniform time grid for the hyperbolic solves.
#[derive(Debug, Clone, Copy)]
pub struct WaveParams {
    pub t_final: f64,
    pub n_steps: usize,
}

impl WaveParams {
    pub fn dt(&self) -> f64 {
        self.t_final / self.n_steps as f64
    }
}

/// Discrete wave solution with its variational boundary flux.
pub struct WaveState {
    pub times: Vec<f64>,
    /// Nodal values per step (all mesh nodes; only nodes of `M` are used).
    pub u: Vec<Vec<C64>>,
    /// Nodal time derivative per step.
    pub v: Vec<Vec<C64>>,
    /// Boundary flux per step (ordered boundary nodes of `M`).
    pub trace: Vec<Vec<C64>>,
}

/// Solve the initial (or terminal) boundary value problem for
/// `d_tt u + op u = source` on `M` with Dirichlet data on the boundary.
///
/// `boundary(t)` returns values at the ordered boundary nodes; `source(t)`
/// returns full nodal values; `initial` is Cauchy data at `t = 0` (or at
/// `t = T` when `terminal` is set, in which case the problem is solved by
/// time reflection).
pub fn solve_wave(
    disc: &Discretization,
    op: &MagneticOperator,
    params: &WaveParams,
    boundary: Option<&(dyn Fn(f64) -> Vec<C64> + Sync)>,
    source: Option<&(dyn Fn(f64) -> Vec<C64> + Sync)>,
    initial: Option<(&[C64], &[C64])>,
    terminal: bool,
) -> Result<WaveState> {
    if terminal {
        let t_final = params.t_final;
        let bc_r = boundary.map(|f| move |t: f64| f(t_final - t));
        let src_r = source.map(|f| move |t: f64| f(t_final - t));
        let neg_v: Option<Vec<C64>> = initial.map(|(_, v)| v.iter().map(|x| -x).collect());
        let init_r = initial.map(|(u, _)| (u, neg_v.as_deref().unwrap()));
        let mut st = solve_wave(
            disc,
            op,
            params,
            bc_r.as_ref().map(|f| f as &(dyn Fn(f64) -> Vec<C64> + Sync)),
            src_r.as_ref().map(|f| f as &(dyn Fn(f64) -> Vec<C64> + Sync)),
            init_r,
            false,
        )?;
        st.u.reverse();
        st.v.reverse();
        for v in &mut st.v {
            for x in v.iter_mut() {
                *x = -*x;
            }
        }
        st.trace.reverse();
        return Ok(st);
    }

    let mesh = &disc.mesh;
    let n = mesh.num_nodes();
    let nb = mesh.boundary_m.len();
    let dt = params.dt();
    let zeros_b = vec![C64::new(0.0, 0.0); nb];
    let bc = |t: f64| -> Vec<C64> {
        match boundary {
            Some(f) => {
                if t < 0.0 {
                    zeros_b.clone()
                } else {
                    f(t)
                }
            }
            None => zeros_b.clone(),
        }
    };
    let src = |t: f64| -> Option<Vec<C64>> { source.map(|f| f(t)) };

    let mut u = vec![C64::new(0.0, 0.0); n];
    let mut v = vec![C64::new(0.0, 0.0); n];
    if let Some((u0, v0)) = initial {
        u.copy_from_slice(u0);
        v.copy_from_slice(v0);
    }
    // Initial acceleration: M a = F - H u at interior, FD of the boundary
    // data at the boundary.
    let mut a = vec![C64::new(0.0, 0.0); n];
    {
        let hu = op.matrix.matvec(&u);
        let f0 = src(0.0);
        for &i in &mesh.interior_m {
            let fi = f0.as_ref().map_or(C64::new(0.0, 0.0), |f| f[i]);
            a[i] = fi - hu[i] / op.mass[i];
        }
        let (bm, bp) = (bc(-dt), bc(dt));
        let b0 = bc(0.0);
        for (bi, &node) in mesh.boundary_m.iter().enumerate() {
            a[node] = (bm[bi] - 2.0 * b0[bi] + bp[bi]) / (dt * dt);
        }
    }

    // Preconditioner diagonal of S = M + dt^2/4 H at interior nodes.
    let h_diag = op.matrix.diagonal();
    let mut precond = vec![1.0; n];
    for &i in &mesh.interior_m {
        precond[i] = op.mass[i] + 0.25 * dt * dt * h_diag[i].re;
    }

    let quarter = 0.25 * dt * dt;
    let interior = &mesh.interior_m;
    let apply = |x: &[C64], y: &mut [C64]| {
        // x lives on interior nodes (packed); y = (M + dt^2/4 H)_II x.
        let mut full = vec![C64::new(0.0, 0.0); n];
        for (r, &i) in interior.iter().enumerate() {
            full[i] = x[r];
        }
        let hf = op.matrix.matvec(&full);
        for (r, &i) in interior.iter().enumerate() {
            y[r] = op.mass[i] * x[r] + quarter * hf[i];
        }
    };
    let precond_int: Vec<f64> = interior.iter().map(|&i| precond[i]).collect();

    let mut times = Vec::with_capacity(params.n_steps + 1);
    let mut us = Vec::with_capacity(params.n_steps + 1);
    let mut vs = Vec::with_capacity(params.n_steps + 1);
    let mut traces = Vec::with_capacity(params.n_steps + 1);

    let push_state = |t: f64,
                      u: &[C64],
                      a: &[C64],
                      times: &mut Vec<f64>,
                      traces: &mut Vec<Vec<C64>>| {
        let hu = op.matrix.matvec(u);
        let f = src(t);
        let tr: Vec<C64> = mesh
            .boundary_m
            .iter()
            .zip(&mesh.boundary_weight_m)
            .map(|(&bnode, &w)| {
                let fi = f.as_ref().map_or(C64::new(0.0, 0.0), |f| f[bnode]);
                (hu[bnode] + op.mass[bnode] * (a[bnode] - fi)) / w
            })
            .collect();
        times.push(t);
        traces.push(tr);
    };

    push_state(0.0, &u, &a, &mut times, &mut traces);
    us.push(u.clone());
    vs.push(v.clone());

    for step in 1..=params.n_steps {
        let t1 = step as f64 * dt;
        // Predictor and new boundary accelerations.
        let mut pred = vec![C64::new(0.0, 0.0); n];
        for i in 0..n {
            pred[i] = u[i] + dt * v[i] + quarter * a[i];
        }
        let b1 = bc(t1);
        let mut a_new = vec![C64::new(0.0, 0.0); n];
        for (bi, &node) in mesh.boundary_m.iter().enumerate() {
            a_new[node] = (b1[bi] - pred[node]) / quarter;
        }
        // rhs_I = (M F)_I - [H (pred + quarter * a_bnd)]_I
        let mut carrier = pred.clone();
        for &node in &mesh.boundary_m {
            carrier[node] += quarter * a_new[node];
        }
        let hc = op.matrix.matvec(&carrier);
        let f1 = src(t1);
        let b_int: Vec<C64> = interior
            .iter()
            .map(|&i| {
                let fi = f1.as_ref().map_or(C64::new(0.0, 0.0), |f| f[i]);
                op.mass[i] * fi - hc[i]
            })
            .collect();
        let x = cg(&apply, &b_int, 1e-10, 2000, Some(&precond_int), "wave step")?;
        for (r, &i) in interior.iter().enumerate() {
            a_new[i] = x[r];
        }
        for i in 0..n {
            let unew = pred[i] + quarter * a_new[i];
            v[i] += 0.5 * dt * (a[i] + a_new[i]);
            u[i] = unew;
        }
        for (bi, &node) in mesh.boundary_m.iter().enumerate() {
            u[node] = b1[bi];
        }
        a = a_new;
        push_state(t1, &u, &a, &mut times, &mut traces);
        us.push(u.clone());
        vs.push(v.clone());
    }

    Ok(WaveState {
        times,
        u: us,
        v: vs,
        trace: traces,
    })
}

/// Hyperbolic Dirichlet-to-Neumann map applied to boundary data: returns
/// the flux on the lateral cylinder, one row per time step.
pub fn hyperbolic_dtn(
    disc: &Discretization,
    op: &MagneticOperator,
    params: &WaveParams,
    boundary: &(dyn Fn(f64) -> Vec<C64> + Sync),
) -> Result<Vec<Vec<C64>>> {
    let st = solve_wave(disc, op, params, Some(boundary), None, None, false)?;
    Ok(st.trace)
}

/// Boundary probe on the cylinder: sampled values per (time step, boundary
/// node).
#[derive(Clone)]
pub struct Probe {
    pub values: Vec<Vec<C64>>,
}

impl Probe {
    /// Closure view for the wave solver (nearest-sample in time is not
    /// enough for a second-order scheme, so interpolate linearly).
    pub fn interp(&self, params: &WaveParams) -> impl Fn(f64) -> Vec<C64> + Sync + '_ {
        let dt = params.dt();
        move |t: f64| {
            let nt = self.values.len() - 1;
            let s = (t / dt).clamp(0.0, nt as f64);
            let k = (s.floor() as usize).min(nt - 1);
            let w = s - k as f64;
            self.values[k]
                .iter()
                .zip(&self.values[k + 1])
                .map(|(a, b)| a * (1.0 - w) + b * w)
                .collect()
        }
    }
}

/// Random band-limited probes vanishing to high order at both ends of the
/// time interval.
pub fn band_limited_probes(
    circle: &CircleSampling,
    params: &WaveParams,
    count: usize,
    max_mode: i64,
    seed: u64,
) -> Vec<Probe> {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nb = circle.n;
    let nt = params.n_steps;
    let t_final = params.t_final;
    (0..count)
        .map(|_| {
            let modes: Vec<(i64, C64, f64, f64)> = (-max_mode..=max_mode)
                .map(|l| {
                    let c = C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
                    let omega = 4.0 * rng.gen::<f64>();
                    let phase = std::f64::consts::TAU * rng.gen::<f64>();
                    (l, c, omega, phase)
                })
                .collect();
            let values: Vec<Vec<C64>> = (0..=nt)
                .map(|it| {
                    let t = it as f64 * t_final / nt as f64;
                    let s = t / t_final;
                    let env = (s * (1.0 - s) * 4.0).powi(8);
                    (0..nb)
                        .map(|b| {
                            let theta = std::f64::consts::TAU * b as f64 / nb as f64;
                            let mut val = C64::new(0.0, 0.0);
                            for &(l, c, omega, phase) in &modes {
                                val += c
                                    * C64::new(0.0, l as f64 * theta).exp()
                                    * (omega * t + phase).cos();
                            }
                            env * val
                        })
                        .collect()
                })
                .collect();
            Probe { values }
        })
        .collect()
}

/// Empirical lower bound for the operator distance between two DtN maps in
/// `L(L^2(Sigma), H^{-1}(Sigma))`: the max over probes of the response
/// ratio. `responses_i[p]` is `Lambda_i` applied to probe `p`.
pub fn dtn_operator_distance(
    responses_1: &[Vec<Vec<C64>>],
    responses_2: &[Vec<Vec<C64>>],
    probes: &[Probe],
    params: &WaveParams,
    circle: &CircleSampling,
) -> Result<f64> {
    if probes.is_empty() {
        return Err(Error::Input("dtn_operator_distance: empty probe set".into()));
    }
    let dt = params.dt();
    let mut best = 0.0f64;
    for ((r1, r2), p) in responses_1.iter().zip(responses_2).zip(probes) {
        let diff: Vec<Vec<C64>> = r1
            .iter()
            .zip(r2)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect();
        let num = cylinder_hs_norm(&diff, dt, circle, -1.0);
        let den = cylinder_hs_norm(&p.values, dt, circle, 0.0);
        if den > 0.0 {
            best = best.max(num / den);
        }
    }
    Ok(best)
}

/// Direct solve of `(op - z m) u = source` in `M` with Dirichlet boundary
/// values; returns the full nodal solution and the variational flux.
pub fn elliptic_solve(
    disc: &Discretization,
    op: &MagneticOperator,
    z: f64,
    f_b: &[C64],
    source: Option<&[C64]>,
) -> Result<(Vec<C64>, Vec<C64>)> {
    let mesh = &disc.mesh;
    let n = mesh.num_nodes();
    let interior = &mesh.interior_m;
    let shifted = |x: &[C64], y: &mut [C64]| {
        op.matrix.matvec_into(x, y);
        for i in 0..n {
            y[i] -= z * op.mass[i] * x[i];
        }
    };
    let mut ext = vec![C64::new(0.0, 0.0); n];
    for (bi, &node) in mesh.boundary_m.iter().enumerate() {
        ext[node] = f_b[bi];
    }
    let mut sx = vec![C64::new(0.0, 0.0); n];
    shifted(&ext, &mut sx);
    let b: Vec<C64> = interior
        .iter()
        .map(|&i| {
            let src = source.map_or(C64::new(0.0, 0.0), |s| s[i]);
            op.mass[i] * src - sx[i]
        })
        .collect();
    let h_diag = op.matrix.diagonal();
    let precond: Vec<f64> = interior
        .iter()
        .map(|&i| (h_diag[i].re - z * op.mass[i]).max(1e-12))
        .collect();
    let apply = |x: &[C64], y: &mut [C64]| {
        let mut full = vec![C64::new(0.0, 0.0); n];
        for (r, &i) in interior.iter().enumerate() {
            full[i] = x[r];
        }
        let mut out = vec![C64::new(0.0, 0.0); n];
        shifted(&full, &mut out);
        for (r, &i) in interior.iter().enumerate() {
            y[r] = out[i];
        }
    };
    let x = cg(&apply, &b, 1e-11, 20000, Some(&precond), "elliptic solve")?;
    let mut u = ext;
    for (r, &i) in interior.iter().enumerate() {
        u[i] = x[r];
    }
    let mut su = vec![C64::new(0.0, 0.0); n];
    shifted(&u, &mut su);
    let flux: Vec<C64> = mesh
        .boundary_m
        .iter()
        .zip(&mesh.boundary_weight_m)
        .map(|(&node, &w)| {
            let src = source.map_or(C64::new(0.0, 0.0), |s| s[node]);
            (su[node] - op.mass[node] * src) / w
        })
        .collect();
    Ok((u, flux))
}

/// Elliptic Dirichlet-to-Neumann map at spectral parameter `z`. When
/// spectral data is supplied, `z` within 1e-6 of an eigenvalue is rejected.
pub fn elliptic_dtn(
    disc: &Discretization,
    op: &MagneticOperator,
    z: f64,
    f_b: &[C64],
    guard: Option<&SpectralData>,
) -> Result<Vec<C64>> {
    if let Some(s) = guard {
        for &l in &s.eigenvalues {
            if (l - z).abs() < 1e-6 {
                return Err(Error::Resolvent {
                    z,
                    lambda: l,
                    gap: (l - z).abs(),
                });
            }
        }
    }
    Ok(elliptic_solve(disc, op, z, f_b, None)?.1)
}

/// Boundary inner product `(f, g) = sum w_b f_b conj(g_b)`.
pub fn boundary_inner(mesh: &crate::mesh::DiskMesh, f: &[C64], g: &[C64]) -> C64 {
    f.iter()
        .zip(g)
        .zip(&mesh.boundary_weight_m)
        .map(|((a, b), &w)| a * b.conj() * w)
        .sum()
}

/// The m-th z-derivative of the elliptic DtN map via the spectral series
/// `-m! sum_k (f, psi_k) psi_k / (lambda_k - z)^{m+1}`.
pub fn dtn_z_derivative_series(
    mesh: &crate::mesh::DiskMesh,
    s: &SpectralData,
    m: usize,
    z: f64,
    f_b: &[C64],
) -> Result<Vec<C64>> {
    if m < 3 {
        return Err(Error::Input(format!(
            "dtn_z_derivative_series: m = {m} below the convergence threshold (need m >= 3 in dimension 2)"
        )));
    }
    if z >= s.eigenvalues[0] {
        return Err(Error::Input(format!(
            "dtn_z_derivative_series: z = {z} not below the spectrum (lambda_1 = {})",
            s.eigenvalues[0]
        )));
    }
    let nb = f_b.len();
    let k = s.eigenvalues.len();
    let fact: f64 = (1..=m).map(|i| i as f64).product();
    let mut out = vec![C64::new(0.0, 0.0); nb];
    let mut tail_norm2 = 0.0;
    let tail_start = 3 * k / 4;
    for ki in 0..k {
        let c = boundary_inner(mesh, f_b, &s.traces[ki]);
        let denom = (s.eigenvalues[ki] - z).powi(m as i32 + 1);
        let coeff = -fact * c / denom;
        let mut term2 = 0.0;
        for (o, t) in out.iter_mut().zip(&s.traces[ki]) {
            let inc = coeff * t;
            *o += inc;
            term2 += inc.norm_sqr();
        }
        if ki >= tail_start {
            tail_norm2 += term2;
        }
    }
    let total2: f64 = out.iter().map(|c| c.norm_sqr()).sum();
    if total2 > 0.0 && (tail_norm2 / total2).sqrt() > 0.1 {
        return Err(Error::Resolution(format!(
            "dtn_z_derivative_series: truncation tail {:.1}% of value; increase K",
            100.0 * (tail_norm2 / total2).sqrt()
        )));
    }
    Ok(out)
}

/// Compare the resolvent spectral series against the direct interior solve
/// for each truncation level; returns `(K, relative L2 error)` pairs.
pub fn resolvent_series_check(
    disc: &Discretization,
    op: &MagneticOperator,
    s: &SpectralData,
    z: f64,
    h: &[C64],
    k_list: &[usize],
) -> Result<Vec<(usize, f64)>> {
    let mesh = &disc.mesh;
    let n = mesh.num_nodes();
    let zeros = vec![C64::new(0.0, 0.0); mesh.boundary_m.len()];
    let (v_direct, _) = elliptic_solve(disc, op, z, &zeros, Some(h))?;
    let inner_m = |a: &[C64], b: &[C64]| -> C64 {
        mesh.nodes_m
            .iter()
            .map(|&i| a[i] * b[i].conj() * mesh.lumped_m[i])
            .sum()
    };
    let den = inner_m(&v_direct, &v_direct).re.sqrt();
    let mut out = Vec::new();
    for &kk in k_list {
        let kk = kk.min(s.eigenvalues.len());
        let mut v = vec![C64::new(0.0, 0.0); n];
        for ki in 0..kk {
            let c = inner_m(h, &s.eigenfunctions[ki]) / (s.eigenvalues[ki] - z);
            for (vi, &pi) in v.iter_mut().zip(&s.eigenfunctions[ki]) {
                *vi += c * pi;
            }
        }
        let mut diff2 = 0.0;
        for &i in &mesh.nodes_m {
            diff2 += (v[i] - v_direct[i]).norm_sqr() * mesh.lumped_m[i];
        }
        out.push((kk, diff2.sqrt() / den));
    }
    Ok(out)
}

/// Polynomial in `t` with analytic derivatives of any order.
#[derive(Debug, Clone)]
pub struct TimeProfile {
    /// `derivs[j]` holds the coefficients of the j-th derivative.
    derivs: Vec<Vec<f64>>,
}

impl TimeProfile {
    pub fn from_coeffs(coeffs: Vec<f64>, max_order: usize) -> Self {
        let mut derivs = vec![coeffs];
        for j in 1..=max_order {
            let prev = &derivs[j - 1];
            let next: Vec<f64> = prev
                .iter()
                .enumerate()
                .skip(1)
                .map(|(p, &c)| c * p as f64)
                .collect();
            derivs.push(next);
        }
        TimeProfile { derivs }
    }

    /// The standard probe window `c * t^8 (T - t)^8`, scaled to peak 1.
    pub fn probe_window(t_final: f64) -> Self {
        // (T - t)^8 expanded; product with t^8 shifts powers up by 8.
        let mut coeffs = vec![0.0; 17];
        for i in 0..=8u32 {
            let binom = (0..i).fold(1.0, |acc, j| acc * (8 - j) as f64 / (j + 1) as f64);
            coeffs[8 + i as usize] =
                binom * t_final.powi(8 - i as i32) * (-1.0f64).powi(i as i32);
        }
        let peak = (t_final / 2.0).powi(8) * (t_final / 2.0).powi(8);
        for c in &mut coeffs {
            *c /= peak;
        }
        TimeProfile::from_coeffs(coeffs, 8)
    }

    pub fn value(&self, order: usize, t: f64) -> f64 {
        self.derivs[order]
            .iter()
            .rev()
            .fold(0.0, |acc, &c| acc * t + c)
    }

    pub fn max_order(&self) -> usize {
        self.derivs.len() - 1
    }
}

/// Result of the spectral-to-hyperbolic bridge comparison.
#[derive(Debug, Clone, serde::Serialize)]
pub struct BridgeReport {
    /// Relative error of series + remainder vs the time-domain map, in
    /// `L2(0,T; H^{-3/4})` on the cylinder.
    pub relative_error: f64,
    /// Same with the sine-kernel remainder ablated.
    pub relative_error_no_remainder: f64,
    /// Norm of the remainder contribution alone (diagnostic).
    pub remainder_share: f64,
}

/// Evaluate the restricted hyperbolic DtN on a separable probe
/// `f(t, x) = w(t) g(x)` through the z=0 elliptic Taylor terms plus the
/// sine-kernel remainder, and compare with the time-domain solver.
pub fn spectral_to_hyperbolic_bridge(
    disc: &Discretization,
    op: &MagneticOperator,
    s: &SpectralData,
    profile: &TimeProfile,
    g_b: &[C64],
    params: &WaveParams,
    circle: &CircleSampling,
) -> Result<BridgeReport> {
    if (op.shift - s.shift).abs() > 1e-12 {
        return Err(Error::Input(
            "bridge: operator and spectral data use different shifts".into(),
        ));
    }
    if profile.max_order() < 8 {
        return Err(Error::Input("bridge: probe profile needs 8 derivatives".into()));
    }
    for j in 0..=7 {
        if profile.value(j, 0.0).abs() > 1e-10 {
            return Err(Error::Input(format!(
                "bridge: probe time profile must vanish to order 8 at t = 0 (derivative {j} nonzero)"
            )));
        }
    }
    let mesh = &disc.mesh;
    let nb = g_b.len();
    let nt = params.n_steps;
    let dt = params.dt();

    // j = 0 term: one direct elliptic solve at z = 0.
    let pi0 = elliptic_dtn(disc, op, 0.0, g_b, Some(s))?;
    // j = 1..3 series bases: -sum_k (g, psi_k) psi_k / lambda_k^{j+1}.
    let k = s.eigenvalues.len();
    let coeffs: Vec<C64> = (0..k)
        .map(|ki| boundary_inner(mesh, g_b, &s.traces[ki]))
        .collect();
    let mut base_j = vec![vec![C64::new(0.0, 0.0); nb]; 4];
    for j in 1..=3usize {
        for ki in 0..k {
            let c = -coeffs[ki] / s.eigenvalues[ki].powi(j as i32 + 1);
            for (o, t) in base_j[j].iter_mut().zip(&s.traces[ki]) {
                *o += c * t;
            }
        }
    }
    // Sine-kernel convolutions of the 8th time derivative, per mode.
    let w8: Vec<f64> = (0..=nt).map(|it| profile.value(8, it as f64 * dt)).collect();
    let convs: Vec<Vec<f64>> = (0..k)
        .into_par_iter()
        .map(|ki| {
            let sq = s.eigenvalues[ki].sqrt();
            let mut out = vec![0.0; nt + 1];
            for it in 1..=nt {
                let t = it as f64 * dt;
                let mut acc = 0.0;
                for is in 0..=it {
                    let w = if is == 0 || is == it { 0.5 } else { 1.0 };
                    let sfrac = is as f64 * dt;
                    acc += w * (sq * (t - sfrac)).sin() / sq * w8[is];
                }
                out[it] = acc * dt;
            }
            out
        })
        .collect();

    // Assemble both series predictions and the time-domain reference.
    let g_owned = g_b.to_vec();
    let bc = move |t: f64| -> Vec<C64> {
        let w = profile.value(0, t);
        g_owned.iter().map(|&g| g * w).collect()
    };
    let reference = hyperbolic_dtn(disc, op, params, &bc)?;

    let mut diff_full = Vec::with_capacity(nt + 1);
    let mut diff_abl = Vec::with_capacity(nt + 1);
    let mut remainder_rows = Vec::with_capacity(nt + 1);
    for it in 0..=nt {
        let t = it as f64 * dt;
        let mut series = vec![C64::new(0.0, 0.0); nb];
        let w0 = profile.value(0, t);
        for (o, p) in series.iter_mut().zip(&pi0) {
            *o += w0 * p;
        }
        for j in 1..=3usize {
            let wj = profile.value(2 * j, t) * if j % 2 == 0 { 1.0 } else { -1.0 };
            for (o, bsv) in series.iter_mut().zip(&base_j[j]) {
                *o += wj * bsv;
            }
        }
        let mut rem = vec![C64::new(0.0, 0.0); nb];
        for ki in 0..k {
            let c = -coeffs[ki] * convs[ki][it] / s.eigenvalues[ki].powi(4);
            for (o, tr) in rem.iter_mut().zip(&s.traces[ki]) {
                *o += c * tr;
            }
        }
        let row_full: Vec<C64> = series
            .iter()
            .zip(&rem)
            .zip(&reference[it])
            .map(|((a, r), b)| a + r - b)
            .collect();
        let row_abl: Vec<C64> = series
            .iter()
            .zip(&reference[it])
            .map(|(a, b)| a - b)
            .collect();
        diff_full.push(row_full);
        diff_abl.push(row_abl);
        remainder_rows.push(rem);
    }
    let s_exp = -0.75;
    let den = cylinder_hs_norm(&reference, dt, circle, s_exp);
    Ok(BridgeReport {
        relative_error: cylinder_hs_norm(&diff_full, dt, circle, s_exp) / den,
        relative_error_no_remainder: cylinder_hs_norm(&diff_abl, dt, circle, s_exp) / den,
        remainder_share: cylinder_hs_norm(&remainder_rows, dt, circle, s_exp) / den,
    })
}

/// One row of the `P^(j)(z)` operator-norm table.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PjRow {
    pub j: usize,
    pub z: f64,
    pub norm: f64,
}

/// Probe-max operator-norm surrogates of the z-derivatives of the elliptic
/// DtN difference, evaluated from the two spectral datasets through the
/// truncated series difference (`H^{1/2} -> H^{-3/4}`).
pub fn p_operator_norms(
    mesh: &crate::mesh::DiskMesh,
    circle: &CircleSampling,
    s1: &SpectralData,
    s2: &SpectralData,
    j_list: &[usize],
    z_list: &[f64],
    probes: &[Vec<C64>],
) -> Result<Vec<PjRow>> {
    if (s1.shift - s2.shift).abs() > 1e-12 {
        return Err(Error::Input("p_operator_norms: mismatched shifts".into()));
    }
    let k = s1.eigenvalues.len().min(s2.eigenvalues.len());
    let mut rows = Vec::new();
    for &j in j_list {
        let fact: f64 = (1..=j).map(|i| i as f64).product();
        for &z in z_list {
            if z >= 0.0 {
                return Err(Error::Input("p_operator_norms: need z < 0".into()));
            }
            let mut best = 0.0f64;
            for g in probes {
                let mut out = vec![C64::new(0.0, 0.0); g.len()];
                for ki in 0..k {
                    let c1 = boundary_inner(mesh, g, &s1.traces[ki]);
                    let c2 = boundary_inner(mesh, g, &s2.traces[ki]);
                    let d1 = (s1.eigenvalues[ki] - z).powi(j as i32 + 1);
                    let d2 = (s2.eigenvalues[ki] - z).powi(j as i32 + 1);
                    for ((o, t1), t2) in out.iter_mut().zip(&s1.traces[ki]).zip(&s2.traces[ki]) {
                        *o += -fact * (c1 * t1 / d1 - c2 * t2 / d2);
                    }
                }
                let num = circle.hs_norm(&out, -0.75);
                let den = circle.hs_norm(g, 0.5);
                if den > 0.0 {
                    best = best.max(num / den);
                }
            }
            rows.push(PjRow { j, z, norm: best });
        }
    }
    Ok(rows)
}

/// Fitted |z|-exponent per j from a norm table.
pub fn p_norm_slopes(rows: &[PjRow]) -> Vec<(usize, f64)> {
    let mut js: Vec<usize> = rows.iter().map(|r| r.j).collect();
    js.sort_unstable();
    js.dedup();
    js.into_iter()
        .map(|j| {
            let xs: Vec<f64> = rows.iter().filter(|r| r.j == j).map(|r| r.z.abs()).collect();
            let ys: Vec<f64> = rows.iter().filter(|r| r.j == j).map(|r| r.norm).collect();
            (j, crate::stats::loglog_slope(&xs, &ys))
        })
        .collect()
}

/// Ratio table for the interior resolvent bounds: average
/// `|v|_{H^sigma} / |f|_{L2}` over oscillatory sources per z, with the
/// fitted |z|-exponent per sigma.
///
/// The bound saturates on sources oscillating at spatial frequency of
/// order sqrt(|z|) (the regime in which the estimate is applied), so each
/// z gets its own source family: a fixed smooth envelope times plane waves
/// `exp(i k omega . x)` with `k = 2 sqrt(|z|)` in random directions.
pub fn resolvent_smoothing_sweep(
    disc: &Discretization,
    op: &MagneticOperator,
    z_list: &[f64],
    n_fields: usize,
    seed: u64,
) -> Result<Vec<(usize, f64, Vec<f64>)>> {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    let mesh = &disc.mesh;
    let n = mesh.num_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs: Vec<f64> = (0..n_fields)
        .map(|_| std::f64::consts::TAU * rng.gen::<f64>())
        .collect();
    let envelope = |p: crate::geometry::Point| -> f64 {
        let r2 = p[0] * p[0] + p[1] * p[1];
        (1.0 - r2).max(0.0).powi(3)
    };
    let make_field = |z: f64, theta: f64| -> Result<Vec<C64>> {
        let k = 2.0 * z.abs().sqrt();
        if k * mesh.h() > 1.0 {
            return Err(Error::Resolution(format!(
                "resolvent_smoothing_sweep: source frequency {k:.1} unresolved at mesh spacing {:.3}",
                mesh.h()
            )));
        }
        let (c, s) = (theta.cos(), theta.sin());
        Ok((0..n)
            .map(|i| {
                let p = mesh.nodes[i];
                let phase = k * (c * p[0] + s * p[1]);
                envelope(p) * C64::new(0.0, phase).exp()
            })
            .collect())
    };
    let zeros = vec![C64::new(0.0, 0.0); mesh.boundary_m.len()];
    let mut out = Vec::new();
    for sigma in 0..=2usize {
        let mut ratios = Vec::new();
        for &z in z_list {
            let mut acc = 0.0;
            for &theta in &dirs {
                let f = make_field(z, theta)?;
                let (v, _) = elliptic_solve(disc, op, z, &zeros, Some(&f))?;
                let vf = crate::fields::ScalarField::from_nodal(mesh.clone(), v);
                let num = disc.sobolev_norm_scalar(&vf, sigma, crate::fields::Domain::M);
                let den = {
                    let mut d2 = 0.0;
                    for &i in &mesh.nodes_m {
                        d2 += f[i].norm_sqr() * mesh.lumped_m[i];
                    }
                    d2.sqrt()
                };
                acc += num / den;
            }
            ratios.push(acc / dirs.len() as f64);
        }
        let xs: Vec<f64> = z_list.iter().map(|z| z.abs()).collect();
        let slope = crate::stats::loglog_slope(&xs, &ratios);
        out.push((sigma, slope, ratios));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{build_magnetic_operator, OneFormField, ScalarField};
    use crate::geometry::{Metric, Point};
    use crate::mesh::DiskMesh;
    use crate::spectral::compute_spectral_data;
    use std::sync::Arc;

    fn unit_disc() -> Discretization {
        let metric = Metric::unit_disk();
        let mesh = Arc::new(DiskMesh::standard(24, &metric));
        Discretization::new(mesh, metric)
    }

    fn free_op(d: &Discretization) -> MagneticOperator {
        let a = OneFormField::zero(d.mesh.clone());
        let q = ScalarField::zero(d.mesh.clone());
        build_magnetic_operator(d, &a, &q, 0.0).unwrap()
    }

    #[test]
    fn zero_data_stays_zero() {
        let d = unit_disc();
        let op = free_op(&d);
        let params = WaveParams { t_final: 1.0, n_steps: 40 };
        let st = solve_wave(&d, &op, &params, None, None, None, false).unwrap();
        for u in &st.u {
            for x in u {
                assert_eq!(*x, C64::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn free_evolution_conserves_energy() {
        let d = unit_disc();
        let op = free_op(&d);
        let n = d.mesh.num_nodes();
        let u0: Vec<C64> = (0..n)
            .map(|i| {
                let p = d.mesh.nodes[i];
                let r2 = p[0] * p[0] + p[1] * p[1];
                if r2 < 1.0 && d.mesh.ring_of[i] < d.mesh.ring_m {
                    C64::new((1.0 - r2).powi(3), 0.0)
                } else {
                    C64::new(0.0, 0.0)
                }
            })
            .collect();
        let v0 = vec![C64::new(0.0, 0.0); n];
        let params = WaveParams { t_final: 1.5, n_steps: 150 };
        let st = solve_wave(&d, &op, &params, None, None, Some((&u0, &v0)), false).unwrap();
        let energy = |u: &[C64], v: &[C64]| -> f64 {
            let hu = op.matrix.matvec(u);
            let mut e = 0.0;
            for i in 0..n {
                e += 0.5 * op.mass[i] * v[i].norm_sqr() + 0.5 * (u[i].conj() * hu[i]).re;
            }
            e
        };
        let e0 = energy(&st.u[0], &st.v[0]);
        for it in (0..st.u.len()).step_by(25) {
            let e = energy(&st.u[it], &st.v[it]);
            assert!((e - e0).abs() < 1e-6 * e0, "step {it}: {e} vs {e0}");
        }
    }

    #[test]
    fn eigenmode_evolution_matches_manufactured_solution() {
        let d = unit_disc();
        let op = free_op(&d);
        let s = {
            let a = OneFormField::zero(d.mesh.clone());
            let q = ScalarField::zero(d.mesh.clone());
            compute_spectral_data(&d, &a, &q, 0.0, 1, 11).unwrap()
        };
        let lam = s.eigenvalues[0];
        let phi = &s.eigenfunctions[0];
        let v0: Vec<C64> = phi.iter().map(|&p| p * lam.sqrt()).collect();
        let n = d.mesh.num_nodes();
        let u0 = vec![C64::new(0.0, 0.0); n];
        let params = WaveParams { t_final: 1.0, n_steps: 400 };
        let st = solve_wave(&d, &op, &params, None, None, Some((&u0, &v0)), false).unwrap();
        // u(t) = sin(sqrt(lam) t) phi
        let t = params.t_final;
        let expect_coeff = (lam.sqrt() * t).sin();
        let mut num = 0.0;
        let mut den = 0.0;
        let last = st.u.last().unwrap();
        for &i in &d.mesh.nodes_m {
            let e = expect_coeff * phi[i];
            num += (last[i] - e).norm_sqr() * d.mesh.lumped_m[i];
            den += e.norm_sqr() * d.mesh.lumped_m[i];
        }
        let rel = (num / den).sqrt();
        assert!(rel < 0.01, "relative error {rel}");
    }

    #[test]
    fn dtn_linear_and_zero() {
        let d = unit_disc();
        let op = free_op(&d);
        let params = WaveParams { t_final: 1.0, n_steps: 50 };
        let nb = d.mesh.boundary_m.len();
        let probe = |t: f64, c: f64| -> Vec<C64> {
            let s = (t / params.t_final).clamp(0.0, 1.0);
            let env = (s * (1.0 - s) * 4.0).powi(8);
            (0..nb)
                .map(|b| {
                    let th = std::f64::consts::TAU * b as f64 / nb as f64;
                    C64::new(c * env * th.cos(), 0.0)
                })
                .collect()
        };
        let f1 = |t: f64| probe(t, 1.0);
        let f2 = |t: f64| probe(t, -2.5);
        let l1 = hyperbolic_dtn(&d, &op, &params, &f1).unwrap();
        let l2 = hyperbolic_dtn(&d, &op, &params, &f2).unwrap();
        let scale: f64 = l1
            .iter()
            .flatten()
            .map(|c| c.norm())
            .fold(0.0, f64::max);
        for (r1, r2) in l1.iter().zip(&l2) {
            for (a, b) in r1.iter().zip(r2) {
                assert!((b - a * -2.5).norm() < 1e-9 * scale.max(1.0));
            }
        }
    }

    #[test]
    fn hyperbolic_dtn_gauge_invariant() {
        let d = unit_disc();
        let a = OneFormField::from_fn(d.mesh.clone(), |p: Point| [0.3 * p[1], -0.2 * p[0]]);
        let q = ScalarField::from_fn(d.mesh.clone(), |_| 0.5);
        let phi = |p: Point| {
            let r2 = p[0] * p[0] + p[1] * p[1];
            0.8 * (1.0 - r2).max(0.0).powi(2) * p[1]
        };
        let grad_phi = |p: Point| {
            let r2 = p[0] * p[0] + p[1] * p[1];
            if r2 >= 1.0 {
                return [0.0, 0.0];
            }
            let w = (1.0 - r2).powi(2);
            let dw = -4.0 * (1.0 - r2);
            [0.8 * p[0] * p[1] * dw, 0.8 * (w + p[1] * p[1] * dw)]
        };
        let a2 = a.with_gauge(phi, grad_phi);
        let op1 = build_magnetic_operator(&d, &a, &q, 0.0).unwrap();
        let op2 = build_magnetic_operator(&d, &a2, &q, 0.0).unwrap();
        let params = WaveParams { t_final: 1.0, n_steps: 60 };
        let nb = d.mesh.boundary_m.len();
        let f = |t: f64| -> Vec<C64> {
            let s = (t / params.t_final).clamp(0.0, 1.0);
            let env = (s * (1.0 - s) * 4.0).powi(8);
            (0..nb)
                .map(|b| {
                    let th = std::f64::consts::TAU * b as f64 / nb as f64;
                    C64::new(env * (2.0 * th).cos(), env * th.sin())
                })
                .collect()
        };
        let l1 = hyperbolic_dtn(&d, &op1, &params, &f).unwrap();
        let l2 = hyperbolic_dtn(&d, &op2, &params, &f).unwrap();
        let scale: f64 = l1.iter().flatten().map(|c| c.norm()).fold(0.0, f64::max);
        let mut worst = 0.0f64;
        for (r1, r2) in l1.iter().zip(&l2) {
            for (x, y) in r1.iter().zip(r2) {
                worst = worst.max((x - y).norm());
            }
        }
        assert!(worst < 1e-6 * scale, "{worst} vs scale {scale}");
    }

    #[test]
    fn terminal_solve_reflects_initial_solve() {
        let d = unit_disc();
        let op = free_op(&d);
        let params = WaveParams { t_final: 1.0, n_steps: 50 };
        let nb = d.mesh.boundary_m.len();
        let f = |t: f64| -> Vec<C64> {
            let s = (t / 1.0).clamp(0.0, 1.0);
            let env = (s * (1.0 - s) * 4.0).powi(8);
            (0..nb)
                .map(|b| C64::new(env * (b as f64 * 0.1).sin(), 0.0))
                .collect()
        };
        let fwd = solve_wave(&d, &op, &params, Some(&f), None, None, false).unwrap();
        let t_final = params.t_final;
        let f_rev = move |t: f64| f(t_final - t);
        let bwd = solve_wave(&d, &op, &params, Some(&f_rev), None, None, true).unwrap();
        let steps = fwd.u.len();
        let scale: f64 = fwd
            .u
            .iter()
            .flatten()
            .map(|c| c.norm())
            .fold(0.0, f64::max);
        for it in 0..steps {
            for (a, b) in fwd.u[it].iter().zip(&bwd.u[steps - 1 - it]) {
                assert!((a - b).norm() < 1e-8 * scale.max(1.0));
            }
        }
    }

    #[test]
    fn elliptic_dtn_is_fourier_multiplier_on_disk() {
        let d = unit_disc();
        let op = free_op(&d);
        let nb = d.mesh.boundary_m.len();
        let f: Vec<C64> = (0..nb)
            .map(|b| {
                let th = std::f64::consts::TAU * b as f64 / nb as f64;
                C64::new((3.0 * th).cos(), 0.0)
            })
            .collect();
        let flux = elliptic_dtn(&d, &op, 0.0, &f, None).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for (b, x) in flux.iter().enumerate() {
            let th = std::f64::consts::TAU * b as f64 / nb as f64;
            let expect = 3.0 * (3.0 * th).cos();
            num += (x.re - expect).powi(2);
            den += expect.powi(2);
        }
        let rel = (num / den).sqrt();
        assert!(rel < 0.01, "relative multiplier error {rel}");

        let one = vec![C64::new(1.0, 0.0); nb];
        let flux0 = elliptic_dtn(&d, &op, 0.0, &one, None).unwrap();
        let worst = flux0.iter().map(|c| c.norm()).fold(0.0, f64::max);
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn elliptic_dtn_is_hermitian_form() {
        let d = unit_disc();
        let a = OneFormField::from_fn(d.mesh.clone(), |p: Point| [0.2 * p[1], 0.3 * p[0]]);
        let q = ScalarField::from_fn(d.mesh.clone(), |p: Point| 0.4 + 0.1 * p[0]);
        let op = build_magnetic_operator(&d, &a, &q, 1.0).unwrap();
        let nb = d.mesh.boundary_m.len();
        let mk = |k: f64, ph: f64| -> Vec<C64> {
            (0..nb)
                .map(|b| {
                    let th = std::f64::consts::TAU * b as f64 / nb as f64;
                    C64::new((k * th + ph).cos(), (0.5 * k * th).sin())
                })
                .collect()
        };
        let f = mk(2.0, 0.3);
        let g = mk(3.0, 1.1);
        let z = -2.0;
        let pf = elliptic_dtn(&d, &op, z, &f, None).unwrap();
        let pg = elliptic_dtn(&d, &op, z, &g, None).unwrap();
        let lhs = boundary_inner(&d.mesh, &pf, &g);
        let rhs = boundary_inner(&d.mesh, &f, &pg);
        assert!(
            (lhs - rhs).norm() < 1e-8 * lhs.norm().max(1.0),
            "{lhs} vs {rhs}"
        );
    }

    #[test]
    fn resolvent_series_exact_on_single_mode_and_accurate_on_random() {
        let d = unit_disc();
        let a = OneFormField::zero(d.mesh.clone());
        let q = ScalarField::zero(d.mesh.clone());
        let op = build_magnetic_operator(&d, &a, &q, 0.0).unwrap();
        let s = compute_spectral_data(&d, &a, &q, 0.0, 64, 13).unwrap();
        // Single eigenmode: one exact term.
        let h1 = s.eigenfunctions[0].clone();
        let r1 = resolvent_series_check(&d, &op, &s, -5.0, &h1, &[1]).unwrap();
        assert!(r1[0].1 < 1e-4, "single-mode error {}", r1[0].1);
        // Random smooth source: error < 2% at K = 64 and nonincreasing in K.
        let h: Vec<C64> = d
            .mesh
            .nodes
            .iter()
            .enumerate()
            .map(|(i, p)| {
                if d.mesh.ring_of[i] < d.mesh.ring_m {
                    C64::new((3.0 * p[0]).sin() + (2.0 * p[1]).cos() - 0.4, 0.0)
                } else {
                    C64::new(0.0, 0.0)
                }
            })
            .collect();
        let r = resolvent_series_check(&d, &op, &s, -5.0, &h, &[16, 32, 64]).unwrap();
        assert!(r[2].1 < 0.02, "K=64 error {}", r[2].1);
        assert!(r[0].1 >= r[1].1 - 1e-12 && r[1].1 >= r[2].1 - 1e-12, "{r:?}");
    }

    #[test]
    fn z_derivative_series_matches_finite_difference() {
        let d = unit_disc();
        let a = OneFormField::zero(d.mesh.clone());
        let q = ScalarField::zero(d.mesh.clone());
        let op = build_magnetic_operator(&d, &a, &q, 0.0).unwrap();
        let s = compute_spectral_data(&d, &a, &q, 0.0, 48, 17).unwrap();
        let nb = d.mesh.boundary_m.len();
        let f: Vec<C64> = (0..nb)
            .map(|b| {
                let th = std::f64::consts::TAU * b as f64 / nb as f64;
                C64::new((2.0 * th).cos() + 0.5, 0.3 * th.sin())
            })
            .collect();
        let z = -10.0;
        let series = dtn_z_derivative_series(&d.mesh, &s, 3, z, &f).unwrap();
        // 5-point central third difference of the direct elliptic family.
        let dz = 0.5;
        let mut vals = Vec::new();
        for off in [-2.0, -1.0, 1.0, 2.0] {
            vals.push(elliptic_dtn(&d, &op, z + off * dz, &f, None).unwrap());
        }
        let fd: Vec<C64> = (0..nb)
            .map(|b| {
                (-vals[0][b] + 2.0 * vals[1][b] - 2.0 * vals[2][b] + vals[3][b])
                    / (2.0 * dz * dz * dz)
            })
            .collect();
        let mut num = 0.0;
        let mut den = 0.0;
        for b in 0..nb {
            num += (series[b] - fd[b]).norm_sqr();
            den += fd[b].norm_sqr();
        }
        let rel = (num / den).sqrt();
        assert!(rel < 0.02, "relative error {rel}");

        // Homogeneity: doubling all traces multiplies the output by 4.
        let mut s2 = s.clone();
        for t in &mut s2.traces {
            for x in t.iter_mut() {
                *x *= 2.0;
            }
        }
        let series2 = dtn_z_derivative_series(&d.mesh, &s2, 3, z, &f).unwrap();
        for b in 0..nb {
            assert!((series2[b] - 4.0 * series[b]).norm() < 1e-10 * series[b].norm().max(1e-12));
        }
    }

    #[test]
    fn probe_window_vanishes_to_high_order() {
        let w = TimeProfile::probe_window(2.0);
        for j in 0..=7 {
            assert!(w.value(j, 0.0).abs() < 1e-12);
            assert!(w.value(j, 2.0).abs() < 1e-6, "order {j}: {}", w.value(j, 2.0));
        }
        assert!((w.value(0, 1.0) - 1.0).abs() < 1e-12);
        // Derivative consistency by finite differences.
        let t = 0.7;
        let e = 1e-5;
        for j in 0..=6 {
            let fd = (w.value(j, t + e) - w.value(j, t - e)) / (2.0 * e);
            assert!(
                (fd - w.value(j + 1, t)).abs() < 1e-4 * (1.0 + w.value(j + 1, t).abs()),
                "order {j}"
            );
        }
    }

    #[test]
    fn resolvent_l2_bound_scales_like_inverse_z() {
        let d = unit_disc();
        let q = ScalarField::from_fn(d.mesh.clone(), |p: Point| 0.3 + 0.2 * p[1]);
        let a = OneFormField::zero(d.mesh.clone());
        let op = build_magnetic_operator(&d, &a, &q, 0.0).unwrap();
        let rep = resolvent_smoothing_sweep(&d, &op, &[-4.0, -16.0, -64.0], 3, 23).unwrap();
        let (sigma, slope, _) = &rep[0];
        assert_eq!(*sigma, 0);
        assert!((slope + 1.0).abs() < 0.2, "sigma=0 slope {slope}");
    }
}
