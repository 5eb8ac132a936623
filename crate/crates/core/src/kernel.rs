//! The isotropic RBF kernel K(x, y) = exp(-|x - y|^2 / (2 l^2)) and its
//! analytic derivative family, up to the mixed orders needed to assemble the
//! gradient linear system and to evaluate the empirical objective.
//!
//! Notation used throughout: delta = x - y, q = K(x, y). Every operation is a
//! closed form in (delta, q, l) and is checked against central finite
//! differences in the test suite. All operations are pure; [`KernelModel`] is
//! immutable and freely shared across threads.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum KernelError {
    #[error("length scale must be positive and finite, got {0}")]
    InvalidLengthScale(f64),
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("point has dimension {found}, kernel expects {dim}")]
    DimensionMismatch { found: usize, dim: usize },
    #[error("diffusion matrix must be {dim}x{dim} symmetric positive-definite")]
    InvalidDiffusion { dim: usize },
    #[error("median heuristic needs at least 2 points, got {0}")]
    TooFewPoints(usize),
}

/// Constant diffusion matrix D = sigma sigma^T with cached aggregates used by
/// the kernel derivative formulas.
#[derive(Debug, Clone, PartialEq)]
pub struct Diffusion {
    /// Row-major d x d entries.
    mat: Vec<f64>,
    dim: usize,
    trace: f64,
    /// tr(D^2), needed by the fourth-order mixed derivative.
    trace_sq: f64,
}

impl Diffusion {
    /// Isotropic diffusion sigma^2 I.
    pub fn isotropic(sigma_sq: f64, dim: usize) -> Result<Diffusion, KernelError> {
        if dim == 0 {
            return Err(KernelError::ZeroDimension);
        }
        if !(sigma_sq > 0.0) || !sigma_sq.is_finite() {
            return Err(KernelError::InvalidDiffusion { dim });
        }
        let mut mat = vec![0.0; dim * dim];
        for i in 0..dim {
            mat[i * dim + i] = sigma_sq;
        }
        Ok(Diffusion {
            mat,
            dim,
            trace: sigma_sq * dim as f64,
            trace_sq: sigma_sq * sigma_sq * dim as f64,
        })
    }

    /// General constant diffusion from row-major entries; must be symmetric
    /// with positive eigenvalues.
    pub fn from_matrix(mat: Vec<f64>, dim: usize) -> Result<Diffusion, KernelError> {
        if dim == 0 {
            return Err(KernelError::ZeroDimension);
        }
        if mat.len() != dim * dim {
            return Err(KernelError::InvalidDiffusion { dim });
        }
        for i in 0..dim {
            for j in 0..i {
                if (mat[i * dim + j] - mat[j * dim + i]).abs() > 1e-12 {
                    return Err(KernelError::InvalidDiffusion { dim });
                }
            }
        }
        let m = nalgebra::DMatrix::from_row_slice(dim, dim, &mat);
        let eig = m.clone().symmetric_eigen();
        if eig.eigenvalues.iter().any(|&e| e <= 0.0) {
            return Err(KernelError::InvalidDiffusion { dim });
        }
        let trace = (0..dim).map(|i| mat[i * dim + i]).sum();
        let trace_sq = (&m * &m).trace();
        Ok(Diffusion {
            mat,
            dim,
            trace,
            trace_sq,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn trace(&self) -> f64 {
        self.trace
    }

    /// Entry D[i, j].
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.mat[i * self.dim + j]
    }

    /// Row-major entries.
    pub fn entries(&self) -> &[f64] {
        &self.mat
    }

    /// out = D v.
    pub fn mul_vec(&self, v: &[f64], out: &mut [f64]) {
        for i in 0..self.dim {
            let row = &self.mat[i * self.dim..(i + 1) * self.dim];
            out[i] = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
    }

    /// v^T D w.
    pub fn quad_form(&self, v: &[f64], w: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.dim {
            let row = &self.mat[i * self.dim..(i + 1) * self.dim];
            let dv: f64 = row.iter().zip(w).map(|(a, b)| a * b).sum();
            acc += v[i] * dv;
        }
        acc
    }

    /// v^T D^2 v = |D v|^2 for symmetric D.
    fn quad_form_sq(&self, v: &[f64], scratch: &mut [f64]) -> f64 {
        self.mul_vec(v, scratch);
        scratch.iter().map(|a| a * a).sum()
    }
}

/// RBF kernel with a single isotropic length scale.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelModel {
    length_scale: f64,
    dim: usize,
}

impl KernelModel {
    pub fn new(length_scale: f64, dim: usize) -> Result<KernelModel, KernelError> {
        if dim == 0 {
            return Err(KernelError::ZeroDimension);
        }
        if !(length_scale > 0.0) || !length_scale.is_finite() {
            return Err(KernelError::InvalidLengthScale(length_scale));
        }
        Ok(KernelModel { length_scale, dim })
    }

    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check(&self, x: &[f64], y: &[f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(y.len(), self.dim);
    }

    /// q = exp(-|x - y|^2 / (2 l^2)).
    pub fn k(&self, x: &[f64], y: &[f64]) -> f64 {
        self.check(x, y);
        let s2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        (-s2 / (2.0 * self.length_scale * self.length_scale)).exp()
    }

    /// grad_x K = -(delta / l^2) q.
    pub fn grad_x(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.grad_y_into(x, y, &mut out);
        for v in &mut out {
            *v = -*v;
        }
        out
    }

    /// grad_y K = (delta / l^2) q.
    pub fn grad_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.grad_y_into(x, y, &mut out);
        out
    }

    pub fn grad_y_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        self.check(x, y);
        let l2 = self.length_scale * self.length_scale;
        let q = self.k(x, y);
        for i in 0..self.dim {
            out[i] = (x[i] - y[i]) / l2 * q;
        }
    }

    /// G = grad_x grad_y^T K = q (I / l^2 - delta delta^T / l^4), row-major.
    pub fn grad_x_grad_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim * self.dim];
        self.grad_x_grad_y_into(x, y, &mut out);
        out
    }

    pub fn grad_x_grad_y_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        self.check(x, y);
        let d = self.dim;
        let l2 = self.length_scale * self.length_scale;
        let l4 = l2 * l2;
        let q = self.k(x, y);
        for i in 0..d {
            let di = x[i] - y[i];
            for j in 0..d {
                let dj = x[j] - y[j];
                let mut v = -di * dj / l4;
                if i == j {
                    v += 1.0 / l2;
                }
                out[i * d + j] = v * q;
            }
        }
    }

    /// tr[D grad_y grad_y^T K] = q (delta^T D delta / l^4 - tr D / l^2).
    pub fn lap_y(&self, x: &[f64], y: &[f64], diff: &Diffusion) -> f64 {
        self.check(x, y);
        let l2 = self.length_scale * self.length_scale;
        let q = self.k(x, y);
        let mut delta = [0.0; 8];
        let delta = Self::delta_buf(x, y, &mut delta);
        let dd = diff.quad_form(delta, delta);
        q * (dd / (l2 * l2) - diff.trace / l2)
    }

    /// h = grad_x lap_y K
    ///   = q (2 D delta / l^4 + (tr D / l^2 - delta^T D delta / l^4) delta / l^2).
    pub fn grad_x_lap_y(&self, x: &[f64], y: &[f64], diff: &Diffusion) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.grad_x_lap_y_into(x, y, diff, &mut out);
        out
    }

    pub fn grad_x_lap_y_into(&self, x: &[f64], y: &[f64], diff: &Diffusion, out: &mut [f64]) {
        self.check(x, y);
        let d = self.dim;
        let l2 = self.length_scale * self.length_scale;
        let l4 = l2 * l2;
        let q = self.k(x, y);
        let mut delta = [0.0; 8];
        let delta = Self::delta_buf(x, y, &mut delta);
        diff.mul_vec(delta, out);
        let dd = diff.quad_form(delta, delta);
        let scal = (diff.trace / l2 - dd / l4) / l2;
        for i in 0..d {
            out[i] = q * (2.0 * out[i] / l4 + scal * delta[i]);
        }
    }

    /// tr(D grad_x grad_x^T [c . grad_y K]): the Hessian-trace of the scalar
    /// map x -> c . grad_y K(x, y). Closed form:
    /// q (-2 delta^T D c / l^4 + (delta^T D delta)(delta . c) / l^6
    ///    - tr D (delta . c) / l^4).
    pub fn lap_x_grad_y_dot(&self, x: &[f64], y: &[f64], diff: &Diffusion, c: &[f64]) -> f64 {
        self.check(x, y);
        debug_assert_eq!(c.len(), self.dim);
        let l2 = self.length_scale * self.length_scale;
        let l4 = l2 * l2;
        let q = self.k(x, y);
        let mut delta = [0.0; 8];
        let delta = Self::delta_buf(x, y, &mut delta);
        let ddc = diff.quad_form(delta, c);
        let dd = diff.quad_form(delta, delta);
        let dc: f64 = delta.iter().zip(c).map(|(a, b)| a * b).sum();
        q * (-2.0 * ddc / l4 + dd * dc / (l4 * l2) - diff.trace * dc / l4)
    }

    /// lap_x lap_y K = tr(D grad_x grad_x^T [tr(D grad_y grad_y^T K)]),
    /// the fully mixed fourth-order term. With P = tr D / l^2 - delta^T D
    /// delta / l^4:
    /// q (2 tr(D^2) / l^4 - 4 delta^T D^2 delta / l^6
    ///    - P delta^T D delta / l^4 + P tr D / l^2).
    pub fn lap_x_lap_y(&self, x: &[f64], y: &[f64], diff: &Diffusion) -> f64 {
        self.check(x, y);
        let l2 = self.length_scale * self.length_scale;
        let l4 = l2 * l2;
        let q = self.k(x, y);
        let mut delta = [0.0; 8];
        let delta = Self::delta_buf(x, y, &mut delta);
        let mut scratch = [0.0; 8];
        let dd = diff.quad_form(delta, delta);
        let dd2 = diff.quad_form_sq(delta, &mut scratch[..self.dim.min(8)]);
        let p = diff.trace / l2 - dd / l4;
        q * (2.0 * diff.trace_sq / l4 - 4.0 * dd2 / (l4 * l2) - p * dd / l4 + p * diff.trace / l2)
    }

    /// Stack-allocate delta for the common small dimensions.
    fn delta_buf<'a>(x: &[f64], y: &[f64], buf: &'a mut [f64; 8]) -> &'a [f64] {
        assert!(x.len() <= 8, "state dimension above 8 is not supported");
        for i in 0..x.len() {
            buf[i] = x[i] - y[i];
        }
        &buf[..x.len()]
    }
}

/// Median pairwise distance of (a subsample of) the points, the default
/// length-scale choice. `points` is row-major n x dim; at most `cap` points
/// are used, chosen by a seeded draw when n exceeds the cap.
pub fn median_heuristic(
    points: &[f64],
    n: usize,
    dim: usize,
    cap: usize,
    seed: u64,
) -> Result<f64, KernelError> {
    if dim == 0 {
        return Err(KernelError::ZeroDimension);
    }
    if n < 2 {
        return Err(KernelError::TooFewPoints(n));
    }
    let cap = cap.max(2);
    let indices: Vec<usize> = if n <= cap {
        (0..n).collect()
    } else {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, n, cap).into_vec();
        idx.sort_unstable();
        idx
    };
    let m = indices.len();
    let mut dists = Vec::with_capacity(m * (m - 1) / 2);
    for a in 0..m {
        let pa = &points[indices[a] * dim..(indices[a] + 1) * dim];
        for b in (a + 1)..m {
            let pb = &points[indices[b] * dim..(indices[b] + 1) * dim];
            let s2: f64 = pa.iter().zip(pb).map(|(u, v)| (u - v) * (u - v)).sum();
            dists.push(s2.sqrt());
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let mid = dists.len() / 2;
    let med = if dists.len() % 2 == 1 {
        dists[mid]
    } else {
        0.5 * (dists[mid - 1] + dists[mid])
    };
    if !(med > 0.0) {
        // all subsampled points identical; fall back to any positive scale
        return Err(KernelError::TooFewPoints(1));
    }
    Ok(med)
}
