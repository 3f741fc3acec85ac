//! Collocation grid, wavenumber bookkeeping and FFT plans.

use crate::{Error, Result};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::fmt;
use std::sync::Arc;

/// Highest spatial dimension supported by the solver.
pub const MAX_DIM: usize = 3;

/// Partial-derivative multi-index over the spatial axes.  Entries past the
/// grid dimension must stay zero.
pub type MultiIndex = [usize; MAX_DIM];

/// Uniform collocation grid on the flat torus `(-pi, pi]^N` with `m` points
/// per axis, nodes `x_j = -pi + 2 pi j / m`, together with shared FFT plans.
///
/// Cloning is cheap; the plans are reference counted.
#[derive(Clone)]
pub struct TorusGrid {
    dim: usize,
    m: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl PartialEq for TorusGrid {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.m == other.m
    }
}
impl Eq for TorusGrid {}

impl fmt::Debug for TorusGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TorusGrid(dim={}, m={})", self.dim, self.m)
    }
}

impl TorusGrid {
    /// New grid with `m` collocation points per axis (`m` even, at least 8).
    pub fn new(dim: usize, m: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::Parameter {
                name: "dim",
                message: format!("must be 1..={MAX_DIM}, got {dim}"),
            });
        }
        if m < 8 || m % 2 != 0 {
            return Err(Error::Parameter {
                name: "m",
                message: format!("points per axis must be even and >= 8, got {m}"),
            });
        }
        let mut planner = FftPlanner::<f64>::new();
        Ok(Self {
            dim,
            m,
            fwd: planner.plan_fft_forward(m),
            inv: planner.plan_fft_inverse(m),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Points per axis.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Total number of collocation nodes, `m^dim`.
    pub fn len(&self) -> usize {
        self.m.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Grid spacing `2 pi / m`.
    pub fn dx(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.m as f64
    }

    /// Largest wavenumber magnitude kept by the 2/3 dealiasing rule.
    pub fn dealias_cutoff(&self) -> usize {
        self.m / 3
    }

    /// Largest wavenumber representable per axis, `m/2` (the last plane is
    /// the unpaired Nyquist mode `k = -m/2`).
    pub fn max_mode(&self) -> usize {
        self.m / 2
    }

    /// Coordinate of node index `j` along one axis.
    pub fn axis_coord(&self, j: usize) -> f64 {
        -std::f64::consts::PI + 2.0 * std::f64::consts::PI * j as f64 / self.m as f64
    }

    /// Signed wavenumber for FFT bin `i` along one axis: `0..m/2` then the
    /// negative half, with bin `m/2` mapped to `-m/2`.
    pub fn wavenumber(&self, i: usize) -> i64 {
        if i < self.m / 2 {
            i as i64
        } else {
            i as i64 - self.m as i64
        }
    }

    /// Decompose a linear node (or mode) index into per-axis indices.
    pub fn decompose(&self, idx: usize) -> [usize; MAX_DIM] {
        let mut out = [0usize; MAX_DIM];
        let mut rest = idx;
        for axis in (0..self.dim).rev() {
            out[axis] = rest % self.m;
            rest /= self.m;
        }
        out
    }

    /// Inverse of [`decompose`](Self::decompose).
    pub fn compose(&self, coords: &[usize; MAX_DIM]) -> usize {
        let mut idx = 0usize;
        for axis in 0..self.dim {
            idx = idx * self.m + coords[axis];
        }
        idx
    }

    /// Physical coordinates of a node.
    pub fn node(&self, idx: usize) -> [f64; MAX_DIM] {
        let c = self.decompose(idx);
        let mut x = [0.0; MAX_DIM];
        for axis in 0..self.dim {
            x[axis] = self.axis_coord(c[axis]);
        }
        x
    }

    /// Signed wavevector of a linear mode index.
    pub fn wavevector(&self, idx: usize) -> [i64; MAX_DIM] {
        let c = self.decompose(idx);
        let mut k = [0i64; MAX_DIM];
        for axis in 0..self.dim {
            k[axis] = self.wavenumber(c[axis]);
        }
        k
    }

    /// Squared Euclidean length of the wavevector at a linear mode index.
    pub fn k_norm_sq(&self, idx: usize) -> f64 {
        let k = self.wavevector(idx);
        let mut s = 0.0;
        for axis in 0..self.dim {
            s += (k[axis] * k[axis]) as f64;
        }
        s
    }

    /// Max-norm of the wavevector at a linear mode index.
    pub fn k_inf(&self, idx: usize) -> i64 {
        let k = self.wavevector(idx);
        let mut s = 0i64;
        for axis in 0..self.dim {
            s = s.max(k[axis].abs());
        }
        s
    }

    /// Linear index of the mode `-k` (Hermitian partner).
    pub fn conj_index(&self, idx: usize) -> usize {
        let c = self.decompose(idx);
        let mut n = [0usize; MAX_DIM];
        for axis in 0..self.dim {
            n[axis] = (self.m - c[axis]) % self.m;
        }
        self.compose(&n)
    }

    /// Whether any axis of the mode sits on the unpaired Nyquist plane.
    pub fn on_nyquist(&self, idx: usize) -> bool {
        let c = self.decompose(idx);
        (0..self.dim).any(|axis| c[axis] == self.m / 2)
    }

    /// In-place unnormalized DFT along every axis (`inverse = false` maps
    /// nodes to raw bins, `true` maps raw bins back to nodes).
    pub(crate) fn fft_nd(&self, data: &mut [Complex64], inverse: bool) {
        debug_assert_eq!(data.len(), self.len());
        let plan = if inverse { &self.inv } else { &self.fwd };
        let mut line = vec![Complex64::default(); self.m];
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        for axis in 0..self.dim {
            let post: usize = self.m.pow((self.dim - 1 - axis) as u32);
            let pre: usize = self.len() / (self.m * post);
            for p in 0..pre {
                for q in 0..post {
                    let base = p * self.m * post + q;
                    for i in 0..self.m {
                        line[i] = data[base + i * post];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for i in 0..self.m {
                        data[base + i * post] = line[i];
                    }
                }
            }
        }
    }

    /// Phase factor `prod_i (-1)^{k_i}` relating DFT bins on the shifted
    /// node set `x_j = -pi + 2 pi j / m` to true Fourier coefficients.
    pub(crate) fn phase(&self, idx: usize) -> f64 {
        let k = self.wavevector(idx);
        let mut odd = false;
        for axis in 0..self.dim {
            if k[axis] & 1 != 0 {
                odd = !odd;
            }
        }
        if odd {
            -1.0
        } else {
            1.0
        }
    }
}

/// All multi-indices over `dim` axes with total order exactly `order`.
pub fn multi_indices_of_order(dim: usize, order: usize) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    let mut cur = [0usize; MAX_DIM];
    fill(dim, 0, order, &mut cur, &mut out);
    out
}

/// All multi-indices over `dim` axes with total order at most `order`.
pub fn multi_indices_up_to(dim: usize, order: usize) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    for o in 0..=order {
        out.extend(multi_indices_of_order(dim, o));
    }
    out
}

fn fill(dim: usize, axis: usize, left: usize, cur: &mut MultiIndex, out: &mut Vec<MultiIndex>) {
    if axis == dim - 1 {
        cur[axis] = left;
        out.push(*cur);
        cur[axis] = 0;
        return;
    }
    for take in 0..=left {
        cur[axis] = take;
        fill(dim, axis + 1, left - take, cur, out);
    }
    cur[axis] = 0;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_sizes() {
        assert!(TorusGrid::new(0, 16).is_err());
        assert!(TorusGrid::new(4, 16).is_err());
        assert!(TorusGrid::new(1, 6).is_err());
        assert!(TorusGrid::new(1, 9).is_err());
        assert!(TorusGrid::new(3, 8).is_ok());
    }

    #[test]
    fn wavenumber_layout() {
        let g = TorusGrid::new(1, 8).unwrap();
        let ks: Vec<i64> = (0..8).map(|i| g.wavenumber(i)).collect();
        assert_eq!(ks, vec![0, 1, 2, 3, -4, -3, -2, -1]);
    }

    #[test]
    fn compose_decompose_roundtrip() {
        let g = TorusGrid::new(3, 8).unwrap();
        for idx in [0usize, 1, 7, 8, 64, 100, 511] {
            assert_eq!(g.compose(&g.decompose(idx)), idx);
        }
    }

    #[test]
    fn conj_index_pairs_modes() {
        let g = TorusGrid::new(2, 8).unwrap();
        for idx in 0..g.len() {
            let pair = g.conj_index(idx);
            let k = g.wavevector(idx);
            let kp = g.wavevector(pair);
            for axis in 0..2 {
                // Nyquist is its own partner.
                if k[axis] == -4 {
                    assert_eq!(kp[axis], -4);
                } else {
                    assert_eq!(kp[axis], -k[axis]);
                }
            }
        }
    }

    #[test]
    fn multi_index_counts() {
        // order 2 in 3 axes: 6 indices; up to order 2: 1 + 3 + 6 = 10.
        assert_eq!(multi_indices_of_order(3, 2).len(), 6);
        assert_eq!(multi_indices_up_to(3, 2).len(), 10);
        assert_eq!(multi_indices_of_order(1, 4), vec![[4, 0, 0]]);
    }
}
