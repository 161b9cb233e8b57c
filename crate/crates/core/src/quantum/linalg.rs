//! Small dense complex kernels for state vectors over a few tensor factors.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

/// Entrywise max absolute value, used as the residual norm everywhere.
pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0f64, |acc, z| acc.max(z.norm()))
}

pub fn hermitize(m: &CMat) -> CMat {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues descending. The
/// returned column matrix holds the matching orthonormal eigenvectors.
///
/// Implemented with cyclic Jacobi rotations rather than tridiagonalization:
/// the ascent steps built on top of this compare objective values across
/// iterations with slack near 1e-10, so the eigenpairs must reconstruct the
/// input to machine precision even when the spectrum is tightly clustered.
/// Jacobi guarantees that; QL-style solvers can lose five or six digits on
/// near-degenerate clusters. The matrices here are small, so the extra
/// sweeps cost little.
pub fn hermitian_eigen_desc(m: &CMat) -> (Vec<f64>, CMat) {
    let dim = m.nrows();
    assert_eq!(dim, m.ncols(), "eigendecomposition needs a square matrix");
    let mut a = hermitize(m);
    let mut vectors = CMat::identity(dim, dim);
    if dim > 1 {
        let frob = a.norm();
        let tol = frob * f64::EPSILON * dim as f64;
        for _sweep in 0..60 {
            let mut off = 0.0f64;
            for p in 0..dim {
                for q in (p + 1)..dim {
                    off += a[(p, q)].norm_sqr();
                }
            }
            if (2.0 * off).sqrt() <= tol {
                break;
            }
            for p in 0..dim {
                for q in (p + 1)..dim {
                    let apq = a[(p, q)];
                    let abs = apq.norm();
                    if abs == 0.0 {
                        continue;
                    }
                    let phase = apq / Complex64::new(abs, 0.0);
                    let tau = (a[(q, q)].re - a[(p, p)].re) / (2.0 * abs);
                    let t = if tau.is_infinite() {
                        0.0
                    } else {
                        tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt())
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    // The plane rotation J has entries J[p,p] = c,
                    // J[p,q] = s*phase, J[q,p] = -s*conj(phase), J[q,q] = c;
                    // apply a <- J† a J and accumulate vectors <- vectors J.
                    for k in 0..dim {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * phase.conj() * akq;
                        a[(k, q)] = s * phase * akp + c * akq;
                    }
                    for k in 0..dim {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * phase * aqk;
                        a[(q, k)] = s * phase.conj() * apk + c * aqk;
                    }
                    a[(p, q)] = Complex64::new(0.0, 0.0);
                    a[(q, p)] = Complex64::new(0.0, 0.0);
                    a[(p, p)] = Complex64::new(a[(p, p)].re, 0.0);
                    a[(q, q)] = Complex64::new(a[(q, q)].re, 0.0);
                    for k in 0..dim {
                        let vkp = vectors[(k, p)];
                        let vkq = vectors[(k, q)];
                        vectors[(k, p)] = c * vkp - s * phase.conj() * vkq;
                        vectors[(k, q)] = s * phase * vkp + c * vkq;
                    }
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&x, &y| {
        a[(y, y)]
            .re
            .partial_cmp(&a[(x, x)].re)
            .expect("hermitian eigenvalues are finite")
    });
    let values: Vec<f64> = order.iter().map(|&k| a[(k, k)].re).collect();
    let mut sorted = CMat::zeros(dim, dim);
    for (slot, &k) in order.iter().enumerate() {
        sorted.set_column(slot, &vectors.column(k));
    }
    (values, sorted)
}

/// Rotates a unit vector so its largest-magnitude entry is real positive,
/// fixing the free global phase for reproducible output.
pub fn canonical_phase(v: &mut CVec) {
    let mut lead = 0usize;
    let mut best = 0.0f64;
    for (k, z) in v.iter().enumerate() {
        if z.norm() > best {
            best = z.norm();
            lead = k;
        }
    }
    if best > 0.0 {
        let phase = v[lead] / Complex64::new(best, 0.0);
        let correction = phase.conj();
        for z in v.iter_mut() {
            *z *= correction;
        }
    }
}

/// Normalized vector of independent complex Gaussians.
pub fn random_state(rng: &mut impl Rng, dim: usize) -> CVec {
    loop {
        let v = CVec::from_fn(dim, |_, _| {
            Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        });
        let norm = v.norm();
        if norm > 1e-6 {
            return v / Complex64::new(norm, 0.0);
        }
    }
}

/// Haar-ish random unitary: QR of a complex Gaussian matrix with the R
/// diagonal's phases folded into the columns.
pub fn random_unitary(rng: &mut impl Rng, dim: usize) -> CMat {
    let gaussian = CMat::from_fn(dim, dim, |_, _| {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    let qr = gaussian.qr();
    let r = qr.r();
    let mut q = qr.q();
    for col in 0..dim {
        let d = r[(col, col)];
        let phase = if d.norm() > 0.0 {
            d / Complex64::new(d.norm(), 0.0)
        } else {
            Complex64::new(1.0, 0.0)
        };
        for row in 0..dim {
            q[(row, col)] *= phase;
        }
    }
    q
}

/// Applies a `d x d` operator to tensor factor `party` of a state over
/// `dims`, leaving the other factors alone.
pub fn apply_local(state: &CVec, dims: &[usize], party: usize, op: &CMat) -> CVec {
    let n = state.len();
    let d = dims[party];
    debug_assert_eq!(op.nrows(), d);
    debug_assert_eq!(op.ncols(), d);
    let stride: usize = dims[party + 1..].iter().product();
    let block = stride * d;
    let mut out = CVec::zeros(n);
    let src = state.as_slice();
    let dst = out.as_mut_slice();
    let mut base = 0;
    while base < n {
        for s in 0..stride {
            for a in 0..d {
                let mut acc = Complex64::new(0.0, 0.0);
                for b in 0..d {
                    acc += op[(a, b)] * src[base + b * stride + s];
                }
                dst[base + a * stride + s] = acc;
            }
        }
        base += block;
    }
    out
}

/// Contraction of everything but factor `party` between two states:
/// `out[b, a] = sum over rest of psi[rest; b] * conj(chi[rest; a])`.
///
/// For `chi` equal to the other parties' projectors applied to `psi`, the
/// trace of a candidate projector against this matrix is that projector's
/// contribution to the objective.
pub fn partial_outer(psi: &CVec, chi: &CVec, dims: &[usize], party: usize) -> CMat {
    let n = psi.len();
    let d = dims[party];
    let stride: usize = dims[party + 1..].iter().product();
    let block = stride * d;
    let mut m = CMat::zeros(d, d);
    let psi = psi.as_slice();
    let chi = chi.as_slice();
    let mut base = 0;
    while base < n {
        for s in 0..stride {
            for b in 0..d {
                let pb = psi[base + b * stride + s];
                for a in 0..d {
                    m[(b, a)] += pb * chi[base + a * stride + s].conj();
                }
            }
        }
        base += block;
    }
    m
}

/// Kronecker product chain in party order.
pub fn kron_chain(factors: &[&CMat]) -> CMat {
    let mut acc = factors[0].clone();
    for f in &factors[1..] {
        acc = acc.kronecker(f);
    }
    acc
}
