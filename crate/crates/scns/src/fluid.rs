//! Barotropic model data: symmetrizing density transforms, pressure and
//! viscous stress terms, and the smooth velocity cut-off.
//!
//! The physical density `rho` with pressure `p = a rho^gamma` is carried in
//! the symmetrized variable `r = sqrt(2 a gamma / (gamma - 1)) rho^{(gamma-1)/2}`,
//! which turns the pressure gradient into `r grad r` and the viscous
//! prefactor into `D(r) = 1 / rho(r)`.

use crate::spectral::SpectralField;
use crate::{Error, Result};
use rustfft::num_complex::Complex64;

/// Barotropic and viscous parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FluidParams {
    /// Adiabatic exponent, `gamma > 1`.
    pub gamma: f64,
    /// Pressure scale, `a > 0`.
    pub a: f64,
    /// Shear viscosity, `mu > 0`.
    pub mu: f64,
    /// Bulk viscosity, `lambda >= 0`.
    pub lambda: f64,
}

impl FluidParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 1.0) {
            return Err(Error::Parameter {
                name: "gamma",
                message: format!("need gamma > 1, got {}", self.gamma),
            });
        }
        if !(self.a > 0.0) {
            return Err(Error::Parameter {
                name: "a",
                message: format!("need a > 0, got {}", self.a),
            });
        }
        if !(self.mu > 0.0) {
            return Err(Error::Parameter {
                name: "mu",
                message: format!("need mu > 0, got {}", self.mu),
            });
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Parameter {
                name: "lambda",
                message: format!("need lambda >= 0, got {}", self.lambda),
            });
        }
        Ok(())
    }

    /// `sqrt(2 a gamma / (gamma - 1))`, the scale of the r-variable.
    pub fn r_scale(&self) -> f64 {
        (2.0 * self.a * self.gamma / (self.gamma - 1.0)).sqrt()
    }

    /// Scalar transform `rho -> r`.
    pub fn r_of_rho(&self, rho: f64) -> f64 {
        self.r_scale() * rho.powf((self.gamma - 1.0) / 2.0)
    }

    /// Scalar transform `r -> rho`.
    pub fn rho_of_r(&self, r: f64) -> f64 {
        ((self.gamma - 1.0) / (2.0 * self.a * self.gamma)).powf(1.0 / (self.gamma - 1.0))
            * r.powf(2.0 / (self.gamma - 1.0))
    }

    /// Viscous prefactor `D(r) = 1 / rho(r)`.
    pub fn coeff_d_scalar(&self, r: f64) -> f64 {
        1.0 / self.rho_of_r(r)
    }

    /// Combined coefficient `lambda + mu/3` of the `grad div` part of the
    /// stress divergence.
    pub fn grad_div_coeff(&self) -> f64 {
        self.lambda + self.mu / 3.0
    }

    /// Total one-dimensional viscosity `mu + lambda + mu/3`, the prefactor
    /// entering the parabolic step restriction.
    pub fn total_viscosity(&self) -> f64 {
        self.mu + self.lambda + self.mu / 3.0
    }
}

/// Smooth velocity cut-off: `phi_R(y) = 1` for `y <= R`, `0` for
/// `y >= R + 1`, glued by the quintic smoothstep on `[R, R+1]`.
/// `C^2`, nonincreasing, Lipschitz constant `15/8`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CutoffSpec {
    pub radius: f64,
}

impl CutoffSpec {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Parameter {
                name: "R",
                message: format!("cut-off radius must be positive, got {radius}"),
            });
        }
        Ok(Self { radius })
    }

    /// Evaluate `phi_R`.
    pub fn phi(&self, y: f64) -> f64 {
        let t = y - self.radius;
        if t <= 0.0 {
            1.0
        } else if t >= 1.0 {
            0.0
        } else {
            1.0 - t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
        }
    }

    /// Supremum of `|phi'|`, attained at the midpoint of the ramp.
    pub fn lipschitz_bound(&self) -> f64 {
        15.0 / 8.0
    }

    /// Cut-off that is identically one (infinite radius).
    pub fn inactive() -> Self {
        Self {
            radius: f64::INFINITY,
        }
    }
}

/// Pointwise transform of a positive density field to the symmetrized
/// variable.  Values are mapped at the nodes; coefficients are recomputed
/// from the mapped values (nothing is truncated, so the inverse transform
/// recovers the input nodal values to round-off).
pub fn rho_to_r(params: &FluidParams, rho: &SpectralField) -> Result<SpectralField> {
    params.validate()?;
    ensure_positive(rho)?;
    rho.map_values(|v| params.r_of_rho(v))
}

/// Pointwise inverse transform back to the physical density.
pub fn r_to_rho(params: &FluidParams, r: &SpectralField) -> Result<SpectralField> {
    params.validate()?;
    ensure_positive(r)?;
    r.map_values(|v| params.rho_of_r(v))
}

/// Viscous prefactor field `D(r) = 1 / rho(r)`.  Rejects fields whose
/// minimum does not clear `floor`.
pub fn coeff_d(params: &FluidParams, r: &SpectralField, floor: f64) -> Result<SpectralField> {
    params.validate()?;
    let min = r.min_value();
    if !(min > floor) {
        return Err(Error::SingularCoefficient {
            min_r: min,
            floor,
        });
    }
    r.map_values(|v| params.coeff_d_scalar(v))
}

fn ensure_positive(f: &SpectralField) -> Result<()> {
    let mut min = f64::INFINITY;
    let mut node = 0;
    for (i, v) in f.values().iter().enumerate() {
        if *v < min {
            min = *v;
            node = i;
        }
    }
    if !(min > 0.0) {
        return Err(Error::Vacuum { node, min });
    }
    Ok(())
}

/// Divergence of the Newtonian stress in closed form,
/// `div S(grad u) = mu Lap u + (lambda + mu/3) grad div u`,
/// evaluated diagonally in Fourier space.
pub fn stress_divergence(params: &FluidParams, u: &SpectralField) -> Result<SpectralField> {
    params.validate()?;
    let grid = u.grid().clone();
    let dim = grid.dim();
    if u.ncomp() != dim {
        return Err(Error::InvalidField(format!(
            "velocity must have {dim} components, got {}",
            u.ncomp()
        )));
    }
    let len = grid.len();
    let gd = params.grad_div_coeff();
    let mut coeffs = vec![Complex64::default(); len * dim];
    let m2 = grid.max_mode() as i64;
    for i in 0..len {
        let k = grid.wavevector(i);
        // Unpaired Nyquist planes carry no derivative.
        let nyq = (0..dim).any(|a| k[a] == -m2);
        if nyq {
            continue;
        }
        let ksq = grid.k_norm_sq(i);
        let mut div = Complex64::default();
        for a in 0..dim {
            div += Complex64::new(0.0, k[a] as f64) * u.comp_coeffs(a)[i];
        }
        for a in 0..dim {
            let lap = -params.mu * ksq * u.comp_coeffs(a)[i];
            let gdk = Complex64::new(0.0, k[a] as f64) * div * gd;
            coeffs[a * len + i] = lap + gdk;
        }
    }
    Ok(SpectralField::from_coeffs_unchecked(&grid, dim, coeffs))
}

/// Full Newtonian stress tensor
/// `S = mu (grad u + grad^T u - (2/3) div u I) + lambda div u I`,
/// assembled componentwise (row-major `dim x dim`).  Used as the
/// independent oracle for [`stress_divergence`] and by diagnostics that
/// need `S` itself.
pub fn stress_tensor(params: &FluidParams, u: &SpectralField) -> Result<Vec<SpectralField>> {
    params.validate()?;
    let dim = u.grid().dim();
    if u.ncomp() != dim {
        return Err(Error::InvalidField(format!(
            "velocity must have {dim} components, got {}",
            u.ncomp()
        )));
    }
    let mut grads = Vec::with_capacity(dim * dim);
    for i in 0..dim {
        for j in 0..dim {
            // d_j u_i
            grads.push(u.component(i).partial(j, 1)?);
        }
    }
    let mut div = grads[0].clone();
    for a in 1..dim {
        div = div.add(&grads[a * dim + a]);
    }
    let mut out = Vec::with_capacity(dim * dim);
    for i in 0..dim {
        for j in 0..dim {
            let sym = grads[i * dim + j].add(&grads[j * dim + i]).scale(params.mu);
            let mut entry = sym;
            if i == j {
                entry = entry.axpy(params.lambda - 2.0 * params.mu / 3.0, &div);
            }
            out.push(entry);
        }
    }
    Ok(out)
}

/// Row-wise divergence of an assembled `dim x dim` tensor field,
/// `(div T)_i = sum_j d_j T_ij`.  Test oracle for the closed form.
pub fn tensor_divergence(tensor: &[SpectralField], dim: usize) -> Result<SpectralField> {
    let mut comps = Vec::with_capacity(dim);
    for i in 0..dim {
        let mut acc = tensor[i * dim].partial(0, 1)?;
        for j in 1..dim {
            acc = acc.add(&tensor[i * dim + j].partial(j, 1)?);
        }
        comps.push(acc);
    }
    SpectralField::from_components(&comps)
}

/// Dealiased pressure term in the symmetric variables, `r grad r`
/// componentwise.
pub fn pressure_gradient_term(r: &SpectralField) -> Result<SpectralField> {
    if r.ncomp() != 1 {
        return Err(Error::InvalidField("pressure term takes a scalar".into()));
    }
    let dim = r.grid().dim();
    let mut comps = Vec::with_capacity(dim);
    for j in 0..dim {
        comps.push(r.dealias_product(&r.partial(j, 1)?)?);
    }
    SpectralField::from_components(&comps)
}
