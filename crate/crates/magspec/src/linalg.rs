//! Sparse linear algebra: CSR matrices, conjugate gradients, and a
//! shift-invert Lanczos eigensolver for the generalized Hermitian pencil
//! (stiffness, lumped mass).

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Compressed sparse row matrix with complex entries.
#[derive(Debug, Clone)]
pub struct Csr {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<C64>,
}

impl Csr {
    /// Build from unsorted triplets, summing duplicates.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, C64)]) -> Self {
        let mut per_row: Vec<Vec<(usize, C64)>> = vec![Vec::new(); n_rows];
        for &(r, c, v) in triplets {
            per_row[r].push((c, v));
        }
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in &mut per_row {
            row.sort_by_key(|e| e.0);
            let mut i = 0;
            while i < row.len() {
                let c = row[i].0;
                let mut v = row[i].1;
                let mut j = i + 1;
                while j < row.len() && row[j].0 == c {
                    v += row[j].1;
                    j += 1;
                }
                if v.norm_sqr() > 0.0 {
                    col_idx.push(c);
                    values.push(v);
                }
                i = j;
            }
            row_ptr.push(col_idx.len());
        }
        Csr {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![C64::new(0.0, 0.0); self.n_rows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[C64], y: &mut [C64]) {
        for r in 0..self.n_rows {
            let mut s = C64::new(0.0, 0.0);
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            y[r] = s;
        }
    }

    /// `y += A^T x` (plain transpose, no conjugation).
    pub fn tr_matvec_accumulate(&self, x: &[C64], y: &mut [C64]) {
        for r in 0..self.n_rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                y[self.col_idx[k]] += self.values[k] * x[r];
            }
        }
    }

    /// Maximum absolute deviation from Hermitian symmetry.
    pub fn hermitian_defect(&self) -> f64 {
        use std::collections::HashMap;
        let mut map: HashMap<(usize, usize), C64> = HashMap::new();
        for r in 0..self.n_rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                map.insert((r, self.col_idx[k]), self.values[k]);
            }
        }
        let mut defect = 0.0f64;
        for (&(r, c), &v) in &map {
            let vt = map.get(&(c, r)).copied().unwrap_or(C64::new(0.0, 0.0));
            defect = defect.max((v - vt.conj()).norm());
        }
        defect
    }

    pub fn diagonal(&self) -> Vec<C64> {
        let mut d = vec![C64::new(0.0, 0.0); self.n_rows];
        for r in 0..self.n_rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.col_idx[k] == r {
                    d[r] = self.values[k];
                }
            }
        }
        d
    }

    /// Extract the submatrix on `rows x cols` given index maps (usize::MAX =
    /// excluded).
    pub fn submatrix(&self, row_map: &[usize], col_map: &[usize], n_rows: usize, n_cols: usize) -> Csr {
        let mut triplets = Vec::new();
        for r in 0..self.n_rows {
            let rr = row_map[r];
            if rr == usize::MAX {
                continue;
            }
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let cc = col_map[self.col_idx[k]];
                if cc == usize::MAX {
                    continue;
                }
                triplets.push((rr, cc, self.values[k]));
            }
        }
        Csr::from_triplets(n_rows, n_cols, &triplets)
    }
}

pub fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(a: &[C64]) -> f64 {
    dot(a, a).re.sqrt()
}

pub fn axpy(y: &mut [C64], alpha: C64, x: &[C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Weighted inner product `sum conj(a_i) b_i w_i`.
pub fn dot_weighted(a: &[C64], b: &[C64], w: &[f64]) -> C64 {
    a.iter()
        .zip(b)
        .zip(w)
        .map(|((x, y), &wi)| x.conj() * y * wi)
        .sum()
}

/// Conjugate gradients for a Hermitian positive definite operator, with an
/// optional diagonal preconditioner (real positive entries).
pub fn cg(
    apply: &dyn Fn(&[C64], &mut [C64]),
    b: &[C64],
    tol_rel: f64,
    max_iter: usize,
    precond_diag: Option<&[f64]>,
    context: &str,
) -> Result<Vec<C64>> {
    let n = b.len();
    let mut x = vec![C64::new(0.0, 0.0); n];
    let mut r = b.to_vec();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(x);
    }
    let prec = |r: &[C64]| -> Vec<C64> {
        match precond_diag {
            Some(d) => r.iter().zip(d).map(|(ri, &di)| ri / di).collect(),
            None => r.to_vec(),
        }
    };
    let mut z = prec(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z).re;
    let mut ap = vec![C64::new(0.0, 0.0); n];
    for it in 0..max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap).re;
        if pap <= 0.0 {
            return Err(Error::solver(
                format!("{context}: CG lost positive definiteness"),
                norm(&r) / bnorm,
                it,
            ));
        }
        let alpha = rz / pap;
        axpy(&mut x, C64::new(alpha, 0.0), &p);
        axpy(&mut r, C64::new(-alpha, 0.0), &ap);
        let rnorm = norm(&r);
        if rnorm <= tol_rel * bnorm {
            return Ok(x);
        }
        z = prec(&r);
        let rz_new = dot(&r, &z).re;
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rnorm = norm(&r) / bnorm;
    if rnorm < tol_rel * 100.0 {
        // Accept mildly short of tolerance; callers asked for very tight tol.
        return Ok(x);
    }
    Err(Error::solver(context.to_string(), rnorm, max_iter))
}

/// Real symmetric positive definite CG (used for Poisson-type solves).
pub fn cg_real(
    apply: &dyn Fn(&[f64], &mut [f64]),
    b: &[f64],
    tol_rel: f64,
    max_iter: usize,
    precond_diag: Option<&[f64]>,
    context: &str,
) -> Result<Vec<f64>> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let bnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    if bnorm == 0.0 {
        return Ok(x);
    }
    let prec = |r: &[f64]| -> Vec<f64> {
        match precond_diag {
            Some(d) => r.iter().zip(d).map(|(ri, di)| ri / di).collect(),
            None => r.to_vec(),
        }
    };
    let mut z = prec(&r);
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            return Err(Error::solver(
                format!("{context}: CG lost positive definiteness"),
                r.iter().map(|v| v * v).sum::<f64>().sqrt() / bnorm,
                it,
            ));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm <= tol_rel * bnorm {
            return Ok(x);
        }
        z = prec(&r);
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt() / bnorm;
    if rnorm < tol_rel * 100.0 {
        return Ok(x);
    }
    Err(Error::solver(context.to_string(), rnorm, max_iter))
}

/// Lowest-`k` eigenpairs of the generalized Hermitian pencil `H x = lambda M x`
/// with `M` a positive diagonal (lumped mass), via shift-invert Lanczos at
/// shift zero: Lanczos on `H^{-1} M` in the `M`-inner product with full
/// reorthogonalization.
///
/// `H` must be positive definite (apply the positivity shift first).
pub struct EigenResult {
    pub eigenvalues: Vec<f64>,
    /// Column eigenvectors, `M`-orthonormal.
    pub eigenvectors: Vec<Vec<C64>>,
    /// Relative residuals `|H x - lambda M x| / lambda |M x|`.
    pub residuals: Vec<f64>,
}

pub fn lowest_eigenpairs(h: &Csr, m_diag: &[f64], k: usize, seed: u64) -> Result<EigenResult> {
    // Tightly split clusters (near-degenerate pairs under a small
    // perturbation) may need a deeper Krylov basis than the default; retry
    // with more steps until every requested pair is converged.
    let mut depth = 2 * k + 40;
    let mut last = lanczos_shift_invert(h, m_diag, k, seed, depth)?;
    for extra in 1..=2u32 {
        let worst = last.residuals.iter().cloned().fold(0.0f64, f64::max);
        if worst < 1e-7 {
            break;
        }
        depth = (2 * k + 40) << extra;
        last = lanczos_shift_invert(h, m_diag, k, seed + extra as u64, depth)?;
    }
    Ok(last)
}

fn lanczos_shift_invert(
    h: &Csr,
    m_diag: &[f64],
    k: usize,
    seed: u64,
    steps: usize,
) -> Result<EigenResult> {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    let n = h.n_rows;
    assert_eq!(m_diag.len(), n);
    if k == 0 || k > n / 2 {
        return Err(Error::Input(format!(
            "lowest_eigenpairs: k = {k} out of range for n = {n}"
        )));
    }
    let m_steps = steps.min(n);
    let h_diag: Vec<f64> = h
        .diagonal()
        .iter()
        .map(|d| d.re.max(1e-30))
        .collect();
    let apply_h = |x: &[C64], y: &mut [C64]| h.matvec_into(x, y);
    let solve_h = |b: &[C64]| -> Result<Vec<C64>> {
        cg(&apply_h, b, 1e-12, 20 * n, Some(&h_diag), "shift-invert inner solve")
    };

    let m_dot = |a: &[C64], b: &[C64]| dot_weighted(a, b, m_diag);
    let m_norm = |a: &[C64]| m_dot(a, a).re.sqrt();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<C64> = (0..n)
        .map(|_| C64::new(rng.gen::<f64>() - 0.5, 0.0))
        .collect();
    let nv = m_norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);

    let mut basis: Vec<Vec<C64>> = vec![v.clone()];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    for j in 0..m_steps {
        // w = H^{-1} (M v_j)
        let mv: Vec<C64> = basis[j]
            .iter()
            .zip(m_diag)
            .map(|(x, &mi)| x * mi)
            .collect();
        let mut w = solve_h(&mv)?;
        let alpha = m_dot(&w, &basis[j]).re;
        alphas.push(alpha);
        // Full reorthogonalization in the M inner product (twice).
        for _ in 0..2 {
            for b in &basis {
                let c = m_dot(b, &w);
                axpy(&mut w, -c, b);
            }
        }
        let beta = m_norm(&w);
        if beta < 1e-13 || j == m_steps - 1 {
            break;
        }
        betas.push(beta);
        w.iter_mut().for_each(|x| *x /= beta);
        basis.push(w);
    }

    // Dense symmetric tridiagonal eigendecomposition (small).
    let m = alphas.len();
    let mut t = nalgebra::DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alphas[i];
        if i + 1 < m {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let eig = nalgebra::SymmetricEigen::new(t);
    // Largest mu correspond to smallest lambda = 1/mu.
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());

    let mut eigenvalues = Vec::with_capacity(k);
    let mut eigenvectors = Vec::with_capacity(k);
    let mut residuals = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let mu = eig.eigenvalues[idx];
        if mu <= 0.0 {
            return Err(Error::solver(
                "shift-invert Lanczos produced nonpositive Ritz value",
                mu,
                m,
            ));
        }
        let lambda = 1.0 / mu;
        let mut x = vec![C64::new(0.0, 0.0); n];
        for (j, b) in basis.iter().enumerate().take(m) {
            let c = C64::new(eig.eigenvectors[(j, idx)], 0.0);
            axpy(&mut x, c, b);
        }
        let nx = m_norm(&x);
        x.iter_mut().for_each(|v| *v /= nx);
        let mut hx = vec![C64::new(0.0, 0.0); n];
        h.matvec_into(&x, &mut hx);
        let mut rnorm2 = 0.0;
        let mut mx2 = 0.0;
        for i in 0..n {
            let r = hx[i] - C64::new(lambda * m_diag[i], 0.0) * x[i];
            rnorm2 += r.norm_sqr();
            mx2 += (m_diag[i] * x[i].norm()).powi(2);
        }
        residuals.push(rnorm2.sqrt() / (lambda * mx2.sqrt()));
        eigenvalues.push(lambda);
        eigenvectors.push(x);
    }
    // Ensure increasing order (they should already be).
    let mut idx: Vec<usize> = (0..k).collect();
    idx.sort_by(|&a, &b| eigenvalues[a].partial_cmp(&eigenvalues[b]).unwrap());
    Ok(EigenResult {
        eigenvalues: idx.iter().map(|&i| eigenvalues[i]).collect(),
        eigenvectors: idx.iter().map(|&i| eigenvectors[i].clone()).collect(),
        residuals: idx.iter().map(|&i| residuals[i]).collect(),
    })
}
