//! Real trigonometric fields with synchronized collocation values and
//! Fourier coefficients.
//!
//! Coefficients follow the normalization `c_k = (2 pi)^{-N} \int f e^{-ik.x}`,
//! so `c_0` is the spatial mean and Parseval reads
//! `sum_k |c_k|^2 = (2 pi)^{-N} \int |f|^2`.  All L2-type norms and inner
//! products below use this volume-normalized convention.

use super::grid::{multi_indices_of_order, multi_indices_up_to, MultiIndex, TorusGrid, MAX_DIM};
use crate::{Error, Result};
use rustfft::num_complex::Complex64;

/// A real scalar or vector field on a [`TorusGrid`], kept simultaneously as
/// collocation values and Fourier coefficients.
///
/// Values are authoritative: constructors from nodal data never truncate,
/// so pointwise-produced fields (compositions, transported densities) keep
/// their nodal values exactly while norms read the aliased coefficients.
#[derive(Clone, Debug)]
pub struct SpectralField {
    grid: TorusGrid,
    ncomp: usize,
    values: Vec<f64>,
    coeffs: Vec<Complex64>,
}

/// Absolute Hermitian-symmetry slack accepted by validating constructors,
/// scaled by the coefficient magnitude.
const HERMITIAN_TOL: f64 = 1e-10;

impl SpectralField {
    /// Zero field with `ncomp` components.
    pub fn zeros(grid: &TorusGrid, ncomp: usize) -> Self {
        let n = grid.len() * ncomp;
        Self {
            grid: grid.clone(),
            ncomp,
            values: vec![0.0; n],
            coeffs: vec![Complex64::default(); n],
        }
    }

    /// Constant scalar field.
    pub fn constant(grid: &TorusGrid, value: f64) -> Self {
        let mut f = Self::zeros(grid, 1);
        f.values.iter_mut().for_each(|v| *v = value);
        f.coeffs[0] = Complex64::new(value, 0.0);
        f
    }

    /// Field from nodal values (row-major per component).  Coefficients are
    /// the plain discrete transform of the data; nothing is truncated.
    pub fn from_values(grid: &TorusGrid, ncomp: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() * ncomp {
            return Err(Error::InvalidField(format!(
                "expected {} values, got {}",
                grid.len() * ncomp,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidField("non-finite nodal value".into()));
        }
        let mut coeffs = vec![Complex64::default(); values.len()];
        let len = grid.len();
        let scale = 1.0 / len as f64;
        let mut buf = vec![Complex64::default(); len];
        for c in 0..ncomp {
            for (i, v) in values[c * len..(c + 1) * len].iter().enumerate() {
                buf[i] = Complex64::new(*v, 0.0);
            }
            grid.fft_nd(&mut buf, false);
            for i in 0..len {
                coeffs[c * len + i] = buf[i] * (grid.phase(i) * scale);
            }
        }
        Ok(Self {
            grid: grid.clone(),
            ncomp,
            values,
            coeffs,
        })
    }

    /// Field from Fourier coefficients.  Rejects coefficient sets that are
    /// not Hermitian-symmetric (the field would not be real).
    pub fn from_coeffs(grid: &TorusGrid, ncomp: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.len() * ncomp {
            return Err(Error::InvalidField(format!(
                "expected {} coefficients, got {}",
                grid.len() * ncomp,
                coeffs.len()
            )));
        }
        let len = grid.len();
        let mut scale: f64 = 0.0;
        for c in coeffs.iter() {
            scale = scale.max(c.norm_sqr());
        }
        let tol = HERMITIAN_TOL * (1.0 + scale.sqrt());
        for c in 0..ncomp {
            let block = &coeffs[c * len..(c + 1) * len];
            for i in 0..len {
                let j = grid.conj_index(i);
                let dev = (block[j] - block[i].conj()).norm();
                if dev > tol {
                    return Err(Error::InvalidField(format!(
                        "coefficients are not Hermitian-symmetric (deviation {dev:e} at mode {i})"
                    )));
                }
            }
        }
        Ok(Self::from_coeffs_unchecked(grid, ncomp, coeffs))
    }

    /// Internal constructor for coefficient sets that are Hermitian by
    /// construction (derivatives, projections, linear combinations).
    pub(crate) fn from_coeffs_unchecked(
        grid: &TorusGrid,
        ncomp: usize,
        coeffs: Vec<Complex64>,
    ) -> Self {
        let len = grid.len();
        let mut values = vec![0.0; coeffs.len()];
        let mut buf = vec![Complex64::default(); len];
        for c in 0..ncomp {
            for i in 0..len {
                buf[i] = coeffs[c * len + i] * grid.phase(i);
            }
            grid.fft_nd(&mut buf, true);
            for i in 0..len {
                values[c * len + i] = buf[i].re;
            }
        }
        Self {
            grid: grid.clone(),
            ncomp,
            values,
            coeffs,
        }
    }

    /// Scalar field sampled from a function of the node coordinates.
    pub fn from_fn(grid: &TorusGrid, f: impl Fn(&[f64; MAX_DIM]) -> f64) -> Self {
        let values: Vec<f64> = (0..grid.len()).map(|i| f(&grid.node(i))).collect();
        Self::from_values(grid, 1, values).expect("finite samples")
    }

    /// Vector field sampled componentwise from the node coordinates.
    pub fn from_fn_vec(
        grid: &TorusGrid,
        ncomp: usize,
        f: impl Fn(usize, &[f64; MAX_DIM]) -> f64,
    ) -> Self {
        let len = grid.len();
        let mut values = vec![0.0; len * ncomp];
        for c in 0..ncomp {
            for i in 0..len {
                values[c * len + i] = f(c, &grid.node(i));
            }
        }
        Self::from_values(grid, ncomp, values).expect("finite samples")
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn ncomp(&self) -> usize {
        self.ncomp
    }

    /// All nodal values, row-major per component.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Nodal values of one component.
    pub fn comp_values(&self, comp: usize) -> &[f64] {
        let len = self.grid.len();
        &self.values[comp * len..(comp + 1) * len]
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn comp_coeffs(&self, comp: usize) -> &[Complex64] {
        let len = self.grid.len();
        &self.coeffs[comp * len..(comp + 1) * len]
    }

    /// Extract one component as a scalar field (cheap copy of slices).
    pub fn component(&self, comp: usize) -> Self {
        Self {
            grid: self.grid.clone(),
            ncomp: 1,
            values: self.comp_values(comp).to_vec(),
            coeffs: self.comp_coeffs(comp).to_vec(),
        }
    }

    /// Assemble a vector field from scalar components on a shared grid.
    pub fn from_components(parts: &[Self]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| {
            Error::InvalidField("cannot assemble a field from zero components".into())
        })?;
        let mut values = Vec::with_capacity(first.values.len() * parts.len());
        let mut coeffs = Vec::with_capacity(values.capacity());
        for p in parts {
            if p.grid != first.grid || p.ncomp != 1 {
                return Err(Error::GridMismatch(
                    "component fields must be scalars on one grid".into(),
                ));
            }
            values.extend_from_slice(&p.values);
            coeffs.extend_from_slice(&p.coeffs);
        }
        Ok(Self {
            grid: first.grid.clone(),
            ncomp: parts.len(),
            values,
            coeffs,
        })
    }

    /// Spatial mean of a component (the `k = 0` coefficient).
    pub fn mean(&self, comp: usize) -> f64 {
        self.comp_coeffs(comp)[0].re
    }

    /// Minimum nodal value across all components.
    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Maximum nodal value across all components.
    pub fn max_value(&self) -> f64 {
        self.values
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest Hermitian-symmetry deviation of the coefficient set.
    pub fn hermitian_deviation(&self) -> f64 {
        let len = self.grid.len();
        let mut dev: f64 = 0.0;
        for c in 0..self.ncomp {
            let block = self.comp_coeffs(c);
            for i in 0..len {
                let j = self.grid.conj_index(i);
                dev = dev.max((block[j] - block[i].conj()).norm());
            }
        }
        dev
    }

    /// Fraction of spectral energy in the top third of the wavenumber band
    /// (`|k|_inf > m/3`), used to flag under-resolved inputs.
    pub fn top_band_energy_fraction(&self) -> f64 {
        let kc = self.grid.dealias_cutoff() as i64;
        let mut top = 0.0;
        let mut total = 0.0;
        for c in 0..self.ncomp {
            for (i, v) in self.comp_coeffs(c).iter().enumerate() {
                let e = v.norm_sqr();
                total += e;
                if self.grid.k_inf(i) > kc {
                    top += e;
                }
            }
            let _ = c;
        }
        if total == 0.0 {
            0.0
        } else {
            top / total
        }
    }

    /// Sobolev norm `( sum_k (1 + |k|^s)^2 |c_k|^2 )^{1/2}` with Euclidean
    /// `|k|`; vector fields sum over components.  At `s = 0` the weight is
    /// identically one so the norm coincides with the volume-normalized L2
    /// norm (Parseval).
    pub fn sobolev_norm(&self, s: f64) -> Result<f64> {
        if !(s >= 0.0) {
            return Err(Error::Parameter {
                name: "s",
                message: format!("Sobolev order must be nonnegative, got {s}"),
            });
        }
        let len = self.grid.len();
        let mut acc = 0.0;
        for i in 0..len {
            let w = if s == 0.0 {
                1.0
            } else {
                let kk = self.grid.k_norm_sq(i).sqrt();
                let t = if kk == 0.0 { 0.0 } else { kk.powf(s) };
                (1.0 + t) * (1.0 + t)
            };
            for c in 0..self.ncomp {
                acc += w * self.coeffs[c * len + i].norm_sqr();
            }
        }
        Ok(acc.sqrt())
    }

    /// Volume-normalized L2 norm, `sobolev_norm(0)` without the validation.
    pub fn l2_norm(&self) -> f64 {
        self.coeffs
            .iter()
            .map(|c| c.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Volume-normalized L2 inner product (components contracted).
    pub fn l2_inner(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.coeffs.len(), other.coeffs.len());
        self.coeffs
            .iter()
            .zip(other.coeffs.iter())
            .map(|(a, b)| (a.conj() * b).re)
            .sum()
    }

    /// `sum_{|beta| = order} |d^beta self|_2^2` over plain multi-indices,
    /// all components contracted.  Nyquist planes carry no derivative
    /// energy, matching [`derivative`](Self::derivative).
    pub fn grad_norm_sq(&self, order: usize) -> f64 {
        if order == 0 {
            return self.l2_norm().powi(2);
        }
        let betas = multi_indices_of_order(self.grid.dim(), order);
        let len = self.grid.len();
        let mut acc = 0.0;
        for i in 0..len {
            if self.grid.on_nyquist(i) {
                continue;
            }
            let k = self.grid.wavevector(i);
            let mut sym = 0.0;
            for beta in &betas {
                let mut t = 1.0;
                for axis in 0..self.grid.dim() {
                    for _ in 0..beta[axis] {
                        t *= (k[axis] * k[axis]) as f64;
                    }
                }
                sym += t;
            }
            for c in 0..self.ncomp {
                acc += sym * self.coeffs[c * len + i].norm_sqr();
            }
        }
        acc
    }

    /// Spectral partial derivative `d^alpha` (coefficients multiplied by
    /// `(ik)^alpha`).  `alpha = 0` returns the field unchanged.  Unpaired
    /// Nyquist modes are zeroed along differentiated axes.
    pub fn derivative(&self, alpha: &MultiIndex) -> Result<Self> {
        let order: usize = alpha.iter().sum();
        for (axis, a) in alpha.iter().enumerate() {
            if *a > 0 && axis >= self.grid.dim() {
                return Err(Error::Parameter {
                    name: "alpha",
                    message: format!("axis {axis} exceeds grid dimension {}", self.grid.dim()),
                });
            }
        }
        if order > self.grid.max_mode() - 1 {
            return Err(Error::Parameter {
                name: "alpha",
                message: format!(
                    "derivative order {order} too high for {} modes per axis",
                    self.grid.m()
                ),
            });
        }
        if order == 0 {
            return Ok(self.clone());
        }
        let len = self.grid.len();
        let mut coeffs = self.coeffs.clone();
        let m2 = self.grid.max_mode() as i64;
        for i in 0..len {
            let k = self.grid.wavevector(i);
            let mut mult = Complex64::new(1.0, 0.0);
            let mut kill = false;
            for axis in 0..self.grid.dim() {
                if alpha[axis] == 0 {
                    continue;
                }
                if k[axis] == -m2 {
                    kill = true;
                    break;
                }
                let ik = Complex64::new(0.0, k[axis] as f64);
                for _ in 0..alpha[axis] {
                    mult *= ik;
                }
            }
            for c in 0..self.ncomp {
                let idx = c * len + i;
                coeffs[idx] = if kill {
                    Complex64::default()
                } else {
                    coeffs[idx] * mult
                };
            }
        }
        Ok(Self::from_coeffs_unchecked(&self.grid, self.ncomp, coeffs))
    }

    /// Convenience single-axis derivative of given order.
    pub fn partial(&self, axis: usize, order: usize) -> Result<Self> {
        let mut alpha = [0usize; MAX_DIM];
        alpha[axis] = order;
        self.derivative(&alpha)
    }

    /// Divergence of a vector field with one component per axis.
    pub fn divergence(&self) -> Result<Self> {
        let dim = self.grid.dim();
        if self.ncomp != dim {
            return Err(Error::InvalidField(format!(
                "divergence needs {dim} components, got {}",
                self.ncomp
            )));
        }
        let mut out = Self::zeros(&self.grid, 1);
        for axis in 0..dim {
            out = out.add(&self.component(axis).partial(axis, 1)?);
        }
        Ok(out)
    }

    /// Galerkin projection: zero every coefficient with `|k|_inf > level`.
    /// Idempotent and L2 self-adjoint.
    pub fn galerkin_project(&self, level: usize) -> Result<Self> {
        if level > self.grid.max_mode() {
            return Err(Error::Parameter {
                name: "level",
                message: format!(
                    "projection level {level} exceeds representable band {}",
                    self.grid.max_mode()
                ),
            });
        }
        Ok(self.truncate_band(level as i64))
    }

    /// Zero all modes with `|k|_inf` above `kc` (no validation).
    pub(crate) fn truncate_band(&self, kc: i64) -> Self {
        let len = self.grid.len();
        let mut coeffs = self.coeffs.clone();
        let mut changed = false;
        for i in 0..len {
            if self.grid.k_inf(i) > kc {
                for c in 0..self.ncomp {
                    if coeffs[c * len + i] != Complex64::default() {
                        changed = true;
                    }
                    coeffs[c * len + i] = Complex64::default();
                }
            }
        }
        if !changed {
            return self.clone();
        }
        Self::from_coeffs_unchecked(&self.grid, self.ncomp, coeffs)
    }

    /// Dealiased pointwise product by the 2/3 rule: both factors are
    /// truncated to `|k|_inf <= m/3`, multiplied at the nodes, and the
    /// product is truncated to the same band, which removes every aliased
    /// image.  `self` must be scalar; the product distributes over the
    /// components of `other`.
    pub fn dealias_product(&self, other: &Self) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(format!(
                "{:?} vs {:?}",
                self.grid, other.grid
            )));
        }
        if self.ncomp != 1 {
            return Err(Error::InvalidField(
                "dealiased product takes a scalar left factor".into(),
            ));
        }
        let kc = self.grid.dealias_cutoff() as i64;
        let a = self.truncate_band(kc);
        let b = other.truncate_band(kc);
        let len = self.grid.len();
        let mut values = vec![0.0; len * other.ncomp];
        for c in 0..other.ncomp {
            for i in 0..len {
                values[c * len + i] = a.values[i] * b.values[c * len + i];
            }
        }
        Ok(Self::from_values(&self.grid, other.ncomp, values)?.truncate_band(kc))
    }

    /// Exact band-limited product: both factors are lifted to a twice-finer
    /// grid, multiplied there (no aliasing up to `|k|_inf < m`), and the
    /// result is projected back onto this grid's band.  Serves as the
    /// oversampled oracle for [`dealias_product`](Self::dealias_product)
    /// and for inequality checks that need true products.
    pub fn product_oversampled(&self, other: &Self) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(format!(
                "{:?} vs {:?}",
                self.grid, other.grid
            )));
        }
        if self.ncomp != 1 {
            return Err(Error::InvalidField(
                "oversampled product takes a scalar left factor".into(),
            ));
        }
        let fine = TorusGrid::new(self.grid.dim(), 2 * self.grid.m())?;
        let a = self.lift_to(&fine);
        let b = other.lift_to(&fine);
        let flen = fine.len();
        let mut values = vec![0.0; flen * other.ncomp];
        for c in 0..other.ncomp {
            for i in 0..flen {
                values[c * flen + i] = a.values[i] * b.values[c * flen + i];
            }
        }
        let prod = Self::from_values(&fine, other.ncomp, values)?;
        Ok(prod.restrict_to(&self.grid))
    }

    /// Spectral interpolation onto a finer grid (zero padding).  The coarse
    /// Nyquist plane is split evenly between `+m/2` and `-m/2`.
    pub(crate) fn lift_to(&self, fine: &TorusGrid) -> Self {
        assert_eq!(fine.dim(), self.grid.dim());
        assert!(fine.m() >= self.grid.m());
        let len = self.grid.len();
        let flen = fine.len();
        let m2 = self.grid.max_mode() as i64;
        let mut coeffs = vec![Complex64::default(); flen * self.ncomp];
        for i in 0..len {
            let k = self.grid.wavevector(i);
            // Enumerate the fine-grid images of this coarse mode: the
            // Nyquist plane k_a = -m/2 maps to both +-m/2 with weight 1/2.
            let mut images: Vec<([i64; MAX_DIM], f64)> = vec![(k, 1.0)];
            for axis in 0..self.grid.dim() {
                if k[axis] == -m2 {
                    let mut next = Vec::with_capacity(images.len() * 2);
                    for (kv, w) in images {
                        let mut plus = kv;
                        plus[axis] = m2;
                        next.push((kv, w * 0.5));
                        next.push((plus, w * 0.5));
                    }
                    images = next;
                }
            }
            for (kv, w) in images {
                let mut idx = [0usize; MAX_DIM];
                for axis in 0..fine.dim() {
                    idx[axis] = kv[axis].rem_euclid(fine.m() as i64) as usize;
                }
                let lin = fine.compose(&idx);
                for c in 0..self.ncomp {
                    coeffs[c * flen + lin] += self.coeffs[c * len + i] * w;
                }
            }
        }
        Self::from_coeffs_unchecked(fine, self.ncomp, coeffs)
    }

    /// L2 projection onto a coarser grid's band: coefficients outside the
    /// coarse band are dropped, and the two fine modes that alias onto the
    /// coarse Nyquist plane are summed.
    pub(crate) fn restrict_to(&self, coarse: &TorusGrid) -> Self {
        assert_eq!(coarse.dim(), self.grid.dim());
        assert!(coarse.m() <= self.grid.m());
        let len = self.grid.len();
        let clen = coarse.len();
        let m2 = coarse.max_mode() as i64;
        let mut coeffs = vec![Complex64::default(); clen * self.ncomp];
        for i in 0..len {
            let k = self.grid.wavevector(i);
            let mut inside = true;
            for axis in 0..self.grid.dim() {
                if k[axis] > m2 || k[axis] < -m2 {
                    inside = false;
                    break;
                }
            }
            if !inside {
                continue;
            }
            let mut idx = [0usize; MAX_DIM];
            for axis in 0..coarse.dim() {
                idx[axis] = k[axis].rem_euclid(coarse.m() as i64) as usize;
            }
            let lin = coarse.compose(&idx);
            for c in 0..self.ncomp {
                coeffs[c * clen + lin] += self.coeffs[c * len + i];
            }
        }
        Self::from_coeffs_unchecked(coarse, self.ncomp, coeffs)
    }

    /// `W^{k,inf}` norm: max over all multi-indices `|alpha| <= k` and all
    /// components of the nodal sup norm of `d^alpha f`.
    pub fn wkinf_norm(&self, k: usize) -> Result<f64> {
        if k > 4 {
            return Err(Error::Parameter {
                name: "k",
                message: format!("sup-norm derivative order capped at 4, got {k}"),
            });
        }
        let mut best: f64 = 0.0;
        for alpha in multi_indices_up_to(self.grid.dim(), k) {
            let d = if alpha.iter().sum::<usize>() == 0 {
                None
            } else {
                Some(self.derivative(&alpha)?)
            };
            let f = d.as_ref().unwrap_or(self);
            for v in f.values.iter() {
                best = best.max(v.abs());
            }
        }
        Ok(best)
    }

    /// Homogeneous gradient sup norm `max_axis sup |d_axis f|` over all
    /// components.
    pub fn grad_sup_norm(&self) -> Result<f64> {
        let mut best: f64 = 0.0;
        for axis in 0..self.grid.dim() {
            let d = self.partial(axis, 1)?;
            for v in d.values.iter() {
                best = best.max(v.abs());
            }
        }
        Ok(best)
    }

    /// Evaluate one component of the trigonometric interpolant at an
    /// arbitrary point of the torus (exact at collocation nodes).
    pub fn eval_comp_at(&self, comp: usize, x: &[f64; MAX_DIM]) -> f64 {
        let m = self.grid.m();
        let dim = self.grid.dim();
        let half = m / 2;
        // Per-axis tables of e^{i k x_a} indexed by FFT bin.
        let mut tables: Vec<Vec<Complex64>> = Vec::with_capacity(dim);
        for axis in 0..dim {
            let step = Complex64::from_polar(1.0, x[axis]);
            let mut pos = Vec::with_capacity(half + 1);
            let mut cur = Complex64::new(1.0, 0.0);
            for _ in 0..=half {
                pos.push(cur);
                cur *= step;
            }
            let mut table = vec![Complex64::default(); m];
            for (i, t) in table.iter_mut().enumerate() {
                *t = if i < half {
                    pos[i]
                } else {
                    // negative wavenumbers, Nyquist read as e^{-i (m/2) x}
                    pos[m - i].conj()
                };
            }
            tables.push(table);
        }
        let block = self.comp_coeffs(comp);
        let mut acc = Complex64::default();
        match dim {
            1 => {
                for (i, c) in block.iter().enumerate() {
                    acc += c * tables[0][i];
                }
            }
            2 => {
                let mut idx = 0;
                for t0 in tables[0].iter() {
                    for t1 in tables[1].iter() {
                        acc += block[idx] * (t0 * t1);
                        idx += 1;
                    }
                }
            }
            _ => {
                let mut idx = 0;
                for t0 in tables[0].iter() {
                    for t1 in tables[1].iter() {
                        let t01 = t0 * t1;
                        for t2 in tables[2].iter() {
                            acc += block[idx] * (t01 * t2);
                            idx += 1;
                        }
                    }
                }
            }
        }
        acc.re
    }

    /// Evaluate a scalar field at an arbitrary point.
    pub fn eval_at(&self, x: &[f64; MAX_DIM]) -> f64 {
        self.eval_comp_at(0, x)
    }

    /// Pointwise map of the nodal values (coefficients recomputed).
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values: Vec<f64> = self.values.iter().map(|v| f(*v)).collect();
        Self::from_values(&self.grid, self.ncomp, values)
    }

    /// `self + other` (both representations updated together).
    pub fn add(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a + b)
    }

    /// `self - other`.
    pub fn sub(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a - b)
    }

    /// `self * t`.
    pub fn scale(&self, t: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= t);
        out.coeffs.iter_mut().for_each(|c| *c *= t);
        out
    }

    /// `self + t * other`.
    pub fn axpy(&self, t: f64, other: &Self) -> Self {
        self.zip(other, |a, b| a + t * b)
    }

    fn zip(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.grid, other.grid, "field grids differ");
        assert_eq!(self.ncomp, other.ncomp, "field component counts differ");
        let values: Vec<f64> = self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| f(*a, *b))
            .collect();
        let coeffs: Vec<Complex64> = self
            .coeffs
            .iter()
            .zip(other.coeffs.iter())
            .map(|(a, b)| {
                Complex64::new(f(a.re, b.re), f(a.im, b.im))
            })
            .collect();
        Self {
            grid: self.grid.clone(),
            ncomp: self.ncomp,
            values,
            coeffs,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid1(m: usize) -> TorusGrid {
        TorusGrid::new(1, m).unwrap()
    }

    /// Independent quadrature oracle: trapezoid integration of the defining
    /// coefficient integral on a fine auxiliary mesh (no FFT involved).
    fn oracle_coeff_1d(f: impl Fn(f64) -> f64, k: i64, n: usize) -> Complex64 {
        let mut acc = Complex64::default();
        for j in 0..n {
            let x = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * j as f64 / n as f64;
            acc += Complex64::from_polar(f(x), -(k as f64) * x);
        }
        acc / n as f64
    }

    #[test]
    fn roundtrip_values_coeffs_values() {
        let g = TorusGrid::new(2, 16).unwrap();
        // Deterministic pseudo-random nodal data, including Nyquist content.
        let values: Vec<f64> = (0..g.len())
            .map(|i| ((i * 2654435761) % 1000) as f64 / 500.0 - 1.0)
            .collect();
        let f = SpectralField::from_values(&g, 1, values.clone()).unwrap();
        let back = SpectralField::from_coeffs(&g, 1, f.coeffs().to_vec()).unwrap();
        let scale = f.max_value().abs().max(1.0);
        for (a, b) in values.iter().zip(back.values().iter()) {
            assert!((a - b).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn sobolev_norm_zero_field() {
        let g = grid1(16);
        let z = SpectralField::zeros(&g, 1);
        for s in [0.0, 1.0, 2.5, 4.0] {
            assert_eq!(z.sobolev_norm(s).unwrap(), 0.0);
        }
    }

    #[test]
    fn sobolev_norm_constant_field() {
        let g = grid1(16);
        let f = SpectralField::constant(&g, 1.0);
        // only the k = 0 term contributes, weight (1 + 0)^2 = 1
        assert_relative_eq!(f.sobolev_norm(2.0).unwrap(), 1.0, max_relative = 1e-14);
    }

    #[test]
    fn sobolev_norm_cos_matches_quadrature_oracle() {
        let g = grid1(64);
        let f = SpectralField::from_fn(&g, |x| x[0].cos());
        // Oracle: c_{+-1} from trapezoid quadrature, then the defining sum.
        let cp = oracle_coeff_1d(|x| x.cos(), 1, 4096);
        let cm = oracle_coeff_1d(|x| x.cos(), -1, 4096);
        let w = (1.0 + 1.0f64) * (1.0 + 1.0);
        let expect = (w * cp.norm_sqr() + w * cm.norm_sqr()).sqrt();
        assert_relative_eq!(expect, 2.0f64.sqrt(), max_relative = 1e-10);
        assert_relative_eq!(
            f.sobolev_norm(1.0).unwrap(),
            2.0f64.sqrt(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn sobolev_norm_rejects_negative_order() {
        let g = grid1(16);
        let f = SpectralField::constant(&g, 1.0);
        assert!(f.sobolev_norm(-1.0).is_err());
    }

    #[test]
    fn parseval_at_s_zero() {
        let g = grid1(32);
        let f = SpectralField::from_fn(&g, |x| 0.3 + x[0].cos() + 0.2 * (3.0 * x[0]).sin());
        let quad: f64 =
            f.values().iter().map(|v| v * v).sum::<f64>() / g.len() as f64;
        let n = f.sobolev_norm(0.0).unwrap();
        assert_relative_eq!(n * n, quad, max_relative = 1e-10);
    }

    #[test]
    fn derivative_zero_alpha_is_identity() {
        let g = grid1(16);
        let f = SpectralField::from_fn(&g, |x| x[0].sin());
        let d = f.derivative(&[0, 0, 0]).unwrap();
        assert_eq!(f.values(), d.values());
    }

    #[test]
    fn derivative_sin_is_cos() {
        let g = grid1(32);
        let f = SpectralField::from_fn(&g, |x| x[0].sin());
        let d = f.partial(0, 1).unwrap();
        for (i, v) in d.values().iter().enumerate() {
            assert!((v - g.node(i)[0].cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn derivative_mixed_2d() {
        let g = TorusGrid::new(2, 32).unwrap();
        let f = SpectralField::from_fn(&g, |x| (3.0 * x[0]).sin() * (2.0 * x[1]).cos());
        let d = f.derivative(&[1, 1, 0]).unwrap();
        for i in 0..g.len() {
            let x = g.node(i);
            let expect = -6.0 * (3.0 * x[0]).cos() * (2.0 * x[1]).sin();
            assert!((d.values()[i] - expect).abs() < 1e-11);
        }
    }

    #[test]
    fn derivative_rejects_excessive_order() {
        let g = grid1(8);
        let f = SpectralField::constant(&g, 1.0);
        assert!(f.derivative(&[4, 0, 0]).is_err());
        assert!(f.derivative(&[3, 0, 0]).is_ok());
    }

    #[test]
    fn galerkin_removes_high_modes_exactly() {
        let g = grid1(32);
        let f = SpectralField::from_fn(&g, |x| x[0].cos() + (5.0 * x[0]).cos());
        let p = f.galerkin_project(2).unwrap();
        for i in 0..g.len() {
            assert!((p.values()[i] - g.node(i)[0].cos()).abs() < 1e-14);
        }
    }

    #[test]
    fn galerkin_idempotent_and_self_adjoint() {
        let g = grid1(32);
        let f = SpectralField::from_fn(&g, |x| (0.7 + x[0]).sin() + (4.0 * x[0]).cos());
        let h = SpectralField::from_fn(&g, |x| (2.0 * x[0]).sin() - 0.4 * (6.0 * x[0]).cos());
        for level in [0usize, 1, 3, 8] {
            let pf = f.galerkin_project(level).unwrap();
            let ppf = pf.galerkin_project(level).unwrap();
            assert_eq!(pf.coeffs(), ppf.coeffs());
            let ph = h.galerkin_project(level).unwrap();
            assert_relative_eq!(pf.l2_inner(&h), f.l2_inner(&ph), max_relative = 1e-12);
        }
        assert!(f.galerkin_project(17).is_err());
    }

    #[test]
    fn dealias_square_of_sine() {
        // sin^2 x = (1 - cos 2x) / 2; for m >= 8 both modes sit inside the band.
        let g = grid1(8);
        let f = SpectralField::from_fn(&g, |x| x[0].sin());
        let p = f.dealias_product(&f).unwrap();
        for i in 0..g.len() {
            let expect = (1.0 - (2.0 * g.node(i)[0]).cos()) / 2.0;
            assert!((p.values()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn dealias_matches_oversampled_oracle_in_lower_third() {
        let g = grid1(48);
        let kc = g.dealias_cutoff();
        let f = SpectralField::from_fn(&g, |x| {
            (1.0 * x[0]).sin() + 0.5 * (5.0 * x[0]).cos() + 0.25 * ((kc as f64) * x[0]).sin()
        });
        let h = SpectralField::from_fn(&g, |x| 0.8 * (2.0 * x[0]).cos() + 0.3 * (7.0 * x[0]).sin());
        let de = f.dealias_product(&h).unwrap();
        let oracle = f
            .product_oversampled(&h)
            .unwrap()
            .truncate_band(kc as i64);
        for (a, b) in de.values().iter().zip(oracle.values().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn aliasing_visible_without_dealiasing() {
        // Energy in the top third aliases under a plain nodal product; the
        // dealiased product must differ from the naive one there.
        let g = grid1(24);
        let hi = (g.m() / 2 - 1) as f64;
        let f = SpectralField::from_fn(&g, |x| (hi * x[0]).cos());
        let naive = SpectralField::from_values(
            &g,
            1,
            f.values().iter().map(|v| v * v).collect(),
        )
        .unwrap();
        let de = f.dealias_product(&f).unwrap();
        let diff: f64 = naive
            .values()
            .iter()
            .zip(de.values().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff > 0.4, "aliased energy should be visible, diff = {diff}");
    }

    #[test]
    fn wkinf_norm_examples() {
        let g = grid1(32);
        let c = SpectralField::constant(&g, -3.0);
        assert_relative_eq!(c.wkinf_norm(2).unwrap(), 3.0, max_relative = 1e-14);
        let f = SpectralField::from_fn(&g, |x| 2.0 * (3.0 * x[0]).sin());
        // max(2, 6, 18) = 18; sup of 18 sin(3x) over the nodes is attained
        // close to but not exactly at 18 on a 32-point grid, so allow the
        // nodal sup slack.
        let n = f.wkinf_norm(2).unwrap();
        assert!(n <= 18.0 + 1e-12 && n > 17.5, "n = {n}");
    }

    #[test]
    fn wkinf_vector_takes_component_max() {
        let g = TorusGrid::new(2, 16).unwrap();
        let u = SpectralField::from_fn_vec(&g, 2, |c, x| {
            if c == 0 {
                x[1].sin()
            } else {
                4.0 * x[0].cos()
            }
        });
        let n = u.wkinf_norm(1).unwrap();
        assert_relative_eq!(n, 4.0, max_relative = 1e-12);
    }

    #[test]
    fn eval_at_reproduces_nodes() {
        let g = TorusGrid::new(2, 16).unwrap();
        let f = SpectralField::from_fn(&g, |x| (2.0 * x[0]).sin() * x[1].cos() + 0.5);
        for idx in [0usize, 3, 17, 100, 255] {
            let x = g.node(idx);
            assert!((f.eval_at(&x) - f.values()[idx]).abs() < 1e-12);
        }
        // And off-node evaluation agrees with the analytic band-limited field.
        let x = [0.3, -1.1, 0.0];
        assert!((f.eval_at(&x) - ((2.0 * x[0]).sin() * x[1].cos() + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn from_coeffs_rejects_non_hermitian() {
        let g = grid1(16);
        let mut coeffs = vec![Complex64::default(); g.len()];
        coeffs[1] = Complex64::new(1.0, 0.5);
        // partner bin left at zero -> not a real field
        assert!(SpectralField::from_coeffs(&g, 1, coeffs).is_err());
    }

    #[test]
    fn top_band_fraction_flags_rough_fields() {
        let g = grid1(24);
        let smooth = SpectralField::from_fn(&g, |x| x[0].cos());
        assert!(smooth.top_band_energy_fraction() < 1e-12);
        let rough = SpectralField::from_fn(&g, |x| (11.0 * x[0]).cos());
        assert!(rough.top_band_energy_fraction() > 0.99);
    }

    #[test]
    fn sobolev_weight_monotone_in_s() {
        let g = grid1(32);
        let f = SpectralField::from_fn(&g, |x| x[0].sin() + 0.1 * (6.0 * x[0]).cos());
        let mut prev = f.sobolev_norm(0.0).unwrap();
        for s in [1.0, 2.0, 3.0, 4.5] {
            let n = f.sobolev_norm(s).unwrap();
            assert!(n >= prev - 1e-13);
            prev = n;
        }
    }
}
