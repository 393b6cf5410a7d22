//! Small dense-vector helpers and preconditioned conjugate gradients.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `y += s * x`
pub fn axpy(s: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

pub fn remove_mean(a: &mut [f64]) {
    if a.is_empty() {
        return;
    }
    let m = a.iter().sum::<f64>() / a.len() as f64;
    a.iter_mut().for_each(|v| *v -= m);
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Solves `A x = b` for symmetric positive (semi)definite `A` given as a
/// closure, with diagonal preconditioner `inv_diag` (may be empty).
///
/// With `zero_mean`, iterates are kept orthogonal to the constant vector,
/// which makes singular graph Laplacians solvable for zero-mean `b`.
/// Stops when `‖b − A x‖₂ ≤ tol`.
pub fn pcg(
    apply: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    inv_diag: &[f64],
    tol: f64,
    max_iter: usize,
    zero_mean: bool,
) -> CgOutcome {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    if zero_mean {
        remove_mean(&mut r);
    }
    let precond = |r: &[f64], z: &mut Vec<f64>| {
        z.clear();
        if inv_diag.is_empty() {
            z.extend_from_slice(r);
        } else {
            z.extend(r.iter().zip(inv_diag).map(|(a, d)| a * d));
        }
        if zero_mean {
            remove_mean(z);
        }
    };
    let mut rn = norm2(&r);
    if rn <= tol {
        return CgOutcome {
            x,
            iterations: 0,
            residual: rn,
            converged: true,
        };
    }
    let mut z = Vec::with_capacity(n);
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) || !pap.is_finite() {
            return CgOutcome {
                x,
                iterations: it,
                residual: rn,
                converged: false,
            };
        }
        let alpha = rz / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        rn = norm2(&r);
        if rn <= tol {
            if zero_mean {
                remove_mean(&mut x);
            }
            return CgOutcome {
                x,
                iterations: it,
                residual: rn,
                converged: true,
            };
        }
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    if zero_mean {
        remove_mean(&mut x);
    }
    CgOutcome {
        x,
        iterations: max_iter,
        residual: rn,
        converged: false,
    }
}

/// Cholesky factor of a symmetric positive definite band matrix.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    /// Row `i` holds `L[i][i − bw ..= i]`.
    l: Vec<f64>,
}

impl BandCholesky {
    /// Factors the matrix whose lower band is given by `entry(i, j)` for
    /// `i − bw ≤ j ≤ i`. Returns `None` if it is not positive definite.
    pub fn factor(n: usize, bw: usize, entry: impl Fn(usize, usize) -> f64) -> Option<Self> {
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut s = entry(i, j);
                for k in lo.max(j.saturating_sub(bw))..j {
                    s -= l[i * w + k + bw - i] * l[j * w + k + bw - j];
                }
                if i == j {
                    if !(s > 0.0) {
                        return None;
                    }
                    l[i * w + bw] = s.sqrt();
                } else {
                    l[i * w + j + bw - i] = s / l[j * w + bw];
                }
            }
        }
        Some(Self { n, bw, l })
    }

    /// Overwrites `b` with `A⁻¹ b`.
    pub fn solve(&self, b: &mut [f64]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut s = b[i];
            for k in lo..i {
                s -= self.l[i * w + k + bw - i] * b[k];
            }
            b[i] = s / self.l[i * w + bw];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..(i + bw + 1).min(n) {
                s -= self.l[k * w + i + bw - k] * b[k];
            }
            b[i] = s / self.l[i * w + bw];
        }
    }
}
