//! Dirichlet spectral data of the magnetic Schrodinger operator and the
//! weighted spectral distance.
//!
//! The data attached to a potential pair `(A, q)` is the list of Dirichlet
//! eigenvalues of the shifted operator together with the boundary traces of
//! the covariant normal derivatives of the eigenfunctions. The traces are
//! recovered variationally: for an eigenpair extended by zero to the
//! boundary, the boundary rows of the full stiffness application equal the
//! weak flux integrals, and dividing by the boundary lumped weights gives
//! nodal flux values.
//!
//! Eigenfunctions are only defined up to a unitary mixing inside each
//! eigenvalue cluster (and a phase for simple eigenvalues), so the distance
//! functional aligns clusters with an orthogonal Procrustes rotation before
//! comparing traces.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::boundary::CircleSampling;
use crate::error::{Error, Result};
use crate::fields::{build_magnetic_operator, Discretization, OneFormField, ScalarField};
use crate::linalg::lowest_eigenpairs;

/// Relative gap below which consecutive eigenvalues are treated as one
/// cluster for trace alignment.
pub const CLUSTER_REL_GAP: f64 = 5e-3;

/// Dirichlet spectral data: eigenvalues of the shifted operator and boundary
/// traces of the covariant normal derivatives, sampled at the uniform
/// boundary nodes of `M`.
#[derive(Debug, Clone)]
pub struct SpectralData {
    pub eigenvalues: Vec<f64>,
    /// `traces[k][b]`: flux of eigenfunction `k` at boundary node `b`.
    pub traces: Vec<Vec<C64>>,
    /// Full-node eigenfunction values (zero on and outside the boundary of
    /// `M`), L2-normalized, phase-locked to the traces.
    pub eigenfunctions: Vec<Vec<C64>>,
    pub shift: f64,
    /// Relative eigen-residuals, for diagnostics.
    pub residuals: Vec<f64>,
}

/// Compute the first `k` Dirichlet eigenpairs of `-Lap_{g,A} + q + shift`
/// on `M` and their boundary flux traces.
pub fn compute_spectral_data(
    disc: &Discretization,
    a: &OneFormField,
    q: &ScalarField,
    shift: f64,
    k: usize,
    seed: u64,
) -> Result<SpectralData> {
    let mesh = &disc.mesh;
    let op = build_magnetic_operator(disc, a, q, shift)?;
    let ni = mesh.interior_m.len();
    let h_int = op.matrix.submatrix(&mesh.interior_index, &mesh.interior_index, ni, ni);
    let m_int: Vec<f64> = mesh.interior_m.iter().map(|&i| mesh.lumped_m[i]).collect();
    let eig = lowest_eigenpairs(&h_int, &m_int, k, seed)?;
    if eig.eigenvalues[0] <= 0.0 {
        return Err(Error::Input(format!(
            "operator not positive (lowest eigenvalue {}); increase the shift",
            eig.eigenvalues[0]
        )));
    }
    let n = mesh.num_nodes();
    let mut traces = Vec::with_capacity(k);
    let mut eigenfunctions = Vec::with_capacity(k);
    for vec in &eig.eigenvectors {
        let mut full = vec![C64::new(0.0, 0.0); n];
        for (r, &i) in mesh.interior_m.iter().enumerate() {
            full[i] = vec[r];
        }
        let hv = op.matrix.matvec(&full);
        let mut trace: Vec<C64> = mesh
            .boundary_m
            .iter()
            .zip(&mesh.boundary_weight_m)
            .map(|(&b, &w)| hv[b] / w)
            .collect();
        // Fix the free phase deterministically: make the largest Fourier
        // coefficient of the trace real positive.
        let circle = CircleSampling::for_mesh(mesh, crate::fields::Domain::M);
        let coeffs = circle.fourier_coeffs(&trace);
        let lead = coeffs
            .iter()
            .max_by(|a, b| a.norm_sqr().total_cmp(&b.norm_sqr()))
            .copied()
            .unwrap_or(C64::new(1.0, 0.0));
        if lead.norm() > 0.0 {
            let phase = lead / lead.norm();
            for t in &mut trace {
                *t /= phase;
            }
            for v in &mut full {
                *v /= phase;
            }
        }
        traces.push(trace);
        eigenfunctions.push(full);
    }
    Ok(SpectralData {
        eigenvalues: eig.eigenvalues,
        traces,
        eigenfunctions,
        shift,
        residuals: eig.residuals,
    })
}

/// Polynomial decay weights `w_k = k^{-exponent}` for the distance sums.
pub fn distance_weights(k: usize, exponent: f64) -> Vec<f64> {
    (1..=k).map(|i| (i as f64).powf(-exponent)).collect()
}

fn clusters(eigenvalues: &[f64]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=eigenvalues.len() {
        let split = i == eigenvalues.len()
            || (eigenvalues[i] - eigenvalues[i - 1]).abs()
                > CLUSTER_REL_GAP * eigenvalues[i].abs().max(1.0);
        if split {
            out.push((start, i));
            start = i;
        }
    }
    out
}

/// Align the traces of `b` to those of `a` cluster by cluster with a unitary
/// Procrustes rotation in the boundary inner product, then return the
/// aligned copies of `b`'s traces. Clusters are taken from `a`'s
/// eigenvalues; mismatched cluster structure simply yields a larger
/// distance, never an error.
pub fn align_traces(a: &SpectralData, b: &SpectralData, circle: &CircleSampling) -> Vec<Vec<C64>> {
    let k = a.traces.len().min(b.traces.len());
    let nb = circle.n;
    let mut out = b.traces[..k].to_vec();
    for &(lo, hi) in &clusters(&a.eigenvalues[..k]) {
        let dim = hi - lo;
        // Gram matrix G[i][j] = <b_trace[lo+i], a_trace[lo+j]> in L2(boundary).
        let mut g = DMatrix::<C64>::zeros(dim, dim);
        let w = circle.length / nb as f64;
        for i in 0..dim {
            for j in 0..dim {
                let mut s = C64::new(0.0, 0.0);
                for p in 0..nb {
                    s += b.traces[lo + i][p].conj() * a.traces[lo + j][p];
                }
                g[(i, j)] = s * w;
            }
        }
        let svd = g.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        // Unitary factor of G; b_aligned[j] = sum_i conj(Q[i][j]) b[i] makes
        // <b_aligned[j], a[j]> maximal.
        let qm = u * vt;
        for j in 0..dim {
            let mut col = vec![C64::new(0.0, 0.0); nb];
            for i in 0..dim {
                let c = qm[(i, j)];
                for p in 0..nb {
                    col[p] += c * b.traces[lo + i][p];
                }
            }
            out[lo + j] = col;
        }
    }
    out
}

/// Weighted spectral distance: `sum_k w_k |lambda_k^1 - lambda_k^2| +
/// sum_k w_k |psi_k^1 - psi_k^2|_{H^{1/2}}` after cluster alignment.
pub fn delta(
    a: &SpectralData,
    b: &SpectralData,
    circle: &CircleSampling,
    weight_exponent: f64,
) -> f64 {
    let k = a.eigenvalues.len().min(b.eigenvalues.len());
    let w = distance_weights(k, weight_exponent);
    let aligned = align_traces(a, b, circle);
    let mut total = 0.0;
    for i in 0..k {
        total += w[i] * (a.eigenvalues[i] - b.eigenvalues[i]).abs();
        total += w[i] * circle.hs_distance(&a.traces[i], &aligned[i], 0.5);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::Domain;
    use crate::geometry::{Metric, Point};
    use crate::mesh::DiskMesh;
    use std::sync::Arc;

    fn unit_disc() -> Discretization {
        let metric = Metric::unit_disk();
        let mesh = Arc::new(DiskMesh::standard(24, &metric));
        Discretization::new(mesh, metric)
    }

    // Squares of Bessel zeros, in order with multiplicity: the Dirichlet
    // spectrum of the flat unit disk.
    const DISK_EIGS: [f64; 12] = [
        5.783185963,
        14.681970642,
        14.681970642,
        26.374616427,
        26.374616427,
        30.471262344,
        40.706465818,
        40.706465818,
        49.218456322,
        49.218456322,
        57.582940903,
        57.582940903,
    ];

    #[test]
    fn flat_disk_eigenvalues_match_bessel_zeros() {
        let d = unit_disc();
        let a = OneFormField::zero(d.mesh.clone());
        let q = ScalarField::zero(d.mesh.clone());
        let data = compute_spectral_data(&d, &a, &q, 0.0, 12, 7).unwrap();
        assert!(
            (data.eigenvalues[0] - DISK_EIGS[0]).abs() / DISK_EIGS[0] < 0.01,
            "lambda_1 = {}",
            data.eigenvalues[0]
        );
        for (i, (&got, &expect)) in data.eigenvalues.iter().zip(&DISK_EIGS).enumerate() {
            assert!(
                (got - expect).abs() / expect < 0.02,
                "eigenvalue {i}: {got} vs {expect}"
            );
        }
    }

    #[test]
    fn ground_state_trace_is_constant_bessel_flux() {
        // First eigenfunction of the flat disk is radial; its normal
        // derivative trace has constant magnitude j_{0,1} / sqrt(pi).
        let d = unit_disc();
        let a = OneFormField::zero(d.mesh.clone());
        let q = ScalarField::zero(d.mesh.clone());
        let data = compute_spectral_data(&d, &a, &q, 0.0, 1, 7).unwrap();
        let expect = 1.3567775299;
        for t in &data.traces[0] {
            assert!((t.norm() - expect).abs() / expect < 0.03, "{}", t.norm());
        }
    }

    #[test]
    fn gauge_pair_has_tiny_distance() {
        let d = unit_disc();
        let a = OneFormField::from_fn(d.mesh.clone(), |p: Point| {
            [0.4 * p[1], -0.3 * p[0] * p[0]]
        });
        let q = ScalarField::from_fn(d.mesh.clone(), |p: Point| 0.2 * p[0] * p[1]);
        let phi = |p: Point| {
            let r2 = p[0] * p[0] + p[1] * p[1];
            0.6 * (1.0 - r2).max(0.0).powi(2)
        };
        let grad_phi = |p: Point| {
            let r2 = p[0] * p[0] + p[1] * p[1];
            if r2 >= 1.0 {
                return [0.0, 0.0];
            }
            let dw = -4.0 * (1.0 - r2) * 0.6;
            [p[0] * dw, p[1] * dw]
        };
        let a2 = a.with_gauge(phi, grad_phi);
        let k = 12;
        let s1 = compute_spectral_data(&d, &a, &q, 1.0, k, 3).unwrap();
        let s2 = compute_spectral_data(&d, &a2, &q, 1.0, k, 4).unwrap();
        for i in 0..k {
            let rel = (s1.eigenvalues[i] - s2.eigenvalues[i]).abs() / s1.eigenvalues[i];
            assert!(rel < 1e-6, "eigenvalue {i} relative gap {rel}");
        }
        let circle = CircleSampling::for_mesh(&d.mesh, Domain::M);
        let dist = delta(&s1, &s2, &circle, 2.0);
        let scale = delta_scale(&s1, &circle);
        assert!(dist / scale < 1e-5, "delta = {dist}, scale = {scale}");
    }

    fn delta_scale(s: &SpectralData, circle: &CircleSampling) -> f64 {
        let w = distance_weights(s.eigenvalues.len(), 2.0);
        s.eigenvalues
            .iter()
            .zip(&s.traces)
            .zip(&w)
            .map(|((l, t), wk)| wk * (l.abs() + circle.hs_norm(t, 0.5)))
            .sum()
    }

    #[test]
    fn distance_is_zero_on_itself_and_sensitive_to_q() {
        let d = unit_disc();
        let a = OneFormField::zero(d.mesh.clone());
        let q0 = ScalarField::zero(d.mesh.clone());
        let s0 = compute_spectral_data(&d, &a, &q0, 1.0, 8, 5).unwrap();
        let circle = CircleSampling::for_mesh(&d.mesh, Domain::M);
        assert!(delta(&s0, &s0, &circle, 2.0) < 1e-12);

        let mut prev = 0.0;
        for eps in [0.05, 0.1, 0.2] {
            let q = ScalarField::from_fn(d.mesh.clone(), move |p: Point| {
                eps * (1.0 + p[0])
            });
            let s = compute_spectral_data(&d, &a, &q, 1.0, 8, 5).unwrap();
            let dist = delta(&s0, &s, &circle, 2.0);
            assert!(dist > prev, "distance not increasing at eps = {eps}");
            prev = dist;
        }
        // A 20% potential perturbation stays well below the data's own scale.
        assert!(
            prev < 0.5 * delta_scale(&s0, &circle),
            "unexpectedly large distance {prev}"
        );
    }

    #[test]
    fn residuals_are_small() {
        let d = unit_disc();
        let a = OneFormField::from_fn(d.mesh.clone(), |p: Point| [0.2 * p[1], 0.1]);
        let q = ScalarField::from_fn(d.mesh.clone(), |p: Point| 0.5 + 0.3 * p[1]);
        let data = compute_spectral_data(&d, &a, &q, 0.5, 10, 9).unwrap();
        for (i, r) in data.residuals.iter().enumerate() {
            assert!(*r < 1e-8, "residual {i} = {r}");
        }
    }
}
