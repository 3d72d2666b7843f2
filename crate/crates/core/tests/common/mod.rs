//! Independent reference implementations used only by the integration and
//! acceptance tests. None of these share code paths with the library's
//! integrators or eigensolvers beyond the energy table.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

/// Dense real symmetric `s·diag(E) - (1 - s)·Σσx`.
pub fn dense_hamiltonian(energies: &[f64], n: usize, s: f64) -> DMatrix<f64> {
    let dim = 1 << n;
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    for k in 0..dim {
        h[(k, k)] = s * energies[k];
        for bit in 0..n {
            h[(k, k ^ (1 << bit))] -= 1.0 - s;
        }
    }
    h
}

/// `exp(-i H t) ψ` by eigendecomposition of the real symmetric `H`.
pub fn expm_apply(h: &DMatrix<f64>, t: f64, psi: &[Complex64]) -> Vec<Complex64> {
    let dim = h.nrows();
    let eig = SymmetricEigen::new(h.clone());
    let v = &eig.eigenvectors;
    // coefficients c_k = v_k^T ψ
    let mut out = vec![Complex64::new(0.0, 0.0); dim];
    for k in 0..dim {
        let mut c = Complex64::new(0.0, 0.0);
        for j in 0..dim {
            c += psi[j] * v[(j, k)];
        }
        c *= Complex64::from_polar(1.0, -eig.eigenvalues[k] * t);
        for j in 0..dim {
            out[j] += c * v[(j, k)];
        }
    }
    out
}

/// Linear-schedule anneal by a product of exact propagators frozen at each
/// step midpoint.
pub fn anneal_oracle(energies: &[f64], n: usize, tau: f64, dt: f64) -> Vec<Complex64> {
    let dim = 1 << n;
    let steps = (tau / dt).round() as usize;
    let dt = tau / steps as f64;
    let mut psi = vec![Complex64::new((dim as f64).sqrt().recip(), 0.0); dim];
    for k in 0..steps {
        let s = (k as f64 + 0.5) * dt / tau;
        psi = expm_apply(&dense_hamiltonian(energies, n, s), dt, &psi);
    }
    psi
}

pub fn born(psi: &[Complex64]) -> Vec<f64> {
    psi.iter().map(|a| a.norm_sqr()).collect()
}

pub fn tv(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Ground state of the dense `H0` from a full eigensolve.
pub fn dense_ground_state(energies: &[f64]) -> usize {
    let dim = energies.len();
    let h = DMatrix::from_diagonal(&DVector::from_column_slice(energies));
    let eig = SymmetricEigen::new(h);
    let k = eig.eigenvalues.argmin().0;
    eig.eigenvectors.column(k).iamax()
        .min(dim - 1)
}

/// Absolute spectral gap by power iteration on the deflated operator
/// `P - 1 μ^T`, run on `(P - 1μ^T)^2` to separate ±λ pairs.
pub fn power_iteration_gap(p: &[f64], mu: &[f64], iters: usize) -> f64 {
    let dim = mu.len();
    let apply = |x: &[f64]| -> Vec<f64> {
        // y = (P - 1 μ^T) x
        let mx: f64 = mu.iter().zip(x).map(|(a, b)| a * b).sum();
        (0..dim)
            .map(|i| (0..dim).map(|j| p[i * dim + j] * x[j]).sum::<f64>() - mx)
            .collect()
    };
    let mut x: Vec<f64> = (0..dim).map(|k| ((k * 7919 % 104_729) as f64).sin() + 0.1).collect();
    let mut lambda_sq = 0.0;
    for _ in 0..iters {
        let y = apply(&apply(&x));
        // μ-weighted norm makes the deflated operator self-adjoint.
        let norm = |v: &[f64]| v.iter().zip(mu).map(|(a, m)| a * a * m).sum::<f64>().sqrt();
        lambda_sq = norm(&y) / norm(&x);
        let ny = norm(&y);
        x = y.iter().map(|v| v / ny).collect();
    }
    1.0 - lambda_sq.sqrt()
}

/// Compensated log-sum-exp free route to μ.
pub fn gibbs_oracle(energies: &[f64], beta: f64) -> Vec<f64> {
    let min = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = energies.iter().map(|e| (-beta * (e - min)).exp()).collect();
    let z: f64 = w.iter().sum();
    w.iter().map(|x| x / z).collect()
}

/// Smallest gap between the two lowest levels of `H(s)` on a uniform grid of `s`.
pub fn min_anneal_gap(energies: &[f64], n: usize, grid: usize) -> f64 {
    (0..=grid)
        .map(|k| {
            let s = k as f64 / grid as f64;
            let mut ev: Vec<f64> = SymmetricEigen::new(dense_hamiltonian(energies, n, s))
                .eigenvalues
                .iter()
                .copied()
                .collect();
            ev.sort_by(|a, b| a.total_cmp(b));
            ev[1] - ev[0]
        })
        .fold(f64::INFINITY, f64::min)
}
