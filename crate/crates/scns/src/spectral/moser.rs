//! Empirical checks of Moser-type product, commutator and composition
//! inequalities, and fitted Sobolev-to-sup embedding constants.
//!
//! The inequalities carry dimension-dependent constants that the solver
//! never needs in closed form: they are fitted as the largest observed
//! ratio over a deterministic ensemble of band-limited random fields and
//! then validated for zero violations (with headroom) on a disjoint
//! ensemble.

use super::field::SpectralField;
use super::grid::{MultiIndex, TorusGrid};
use crate::streams::{standard_normal, sub_rng};
use crate::{Error, Result};
use rand_core::RngCore;
use rustfft::num_complex::Complex64;
use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

/// Which inequality a [`MoserReport`] refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MoserKind {
    /// `|d^a(uv)|_2 <= c (|u|_inf |grad^s v|_2 + |v|_inf |grad^s u|_2)`
    Product,
    /// `|d^a(uv) - u d^a v|_2 <= c (|grad u|_inf |grad^{s-1} v|_2 + |grad^s u|_2 |v|_inf)`
    Commutator,
    /// `|d^a F(u)|_2 <= c |F'|_{C^{s-1}(ran u)} |u|_inf^{|a|-1} |d^a u|_2`
    Composition,
}

/// A scalar map with evaluable derivatives, used by composition checks and
/// by the barotropic coefficient bounds.
pub trait SmoothMap {
    /// Value of the `order`-th derivative at `y` (`order = 0` is the map).
    fn eval(&self, order: usize, y: f64) -> f64;
}

/// The identity map.
pub struct IdentityMap;

impl SmoothMap for IdentityMap {
    fn eval(&self, order: usize, y: f64) -> f64 {
        match order {
            0 => y,
            1 => 1.0,
            _ => 0.0,
        }
    }
}

/// `y -> sin y`, all derivatives bounded by one.
pub struct SinMap;

impl SmoothMap for SinMap {
    fn eval(&self, order: usize, y: f64) -> f64 {
        (y + order as f64 * std::f64::consts::FRAC_PI_2).sin()
    }
}

/// `y -> c y^p` for positive `y` (fractional powers allowed).
pub struct PowerMap {
    pub scale: f64,
    pub exponent: f64,
}

impl SmoothMap for PowerMap {
    fn eval(&self, order: usize, y: f64) -> f64 {
        let mut c = self.scale;
        let mut p = self.exponent;
        for _ in 0..order {
            c *= p;
            p -= 1.0;
        }
        c * y.powf(p)
    }
}

/// Outcome of one inequality check.
#[derive(Clone, Debug)]
pub struct MoserReport {
    pub kind: MoserKind,
    pub lhs: f64,
    pub rhs_factors: Vec<f64>,
    /// `lhs / sum(rhs_factors)`; zero when both sides vanish.
    pub ratio: f64,
    /// Set when an input carries more than 1% of its energy in the top
    /// third of the wavenumber band.
    pub resolution_warning: bool,
}

impl MoserReport {
    fn new(kind: MoserKind, lhs: f64, rhs_factors: Vec<f64>, warn: bool) -> Self {
        let denom: f64 = rhs_factors.iter().sum();
        let ratio = if denom > 0.0 {
            lhs / denom
        } else if lhs == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        Self {
            kind,
            lhs,
            rhs_factors,
            ratio,
            resolution_warning: warn,
        }
    }
}

fn check_pair_inputs(u: &SpectralField, v: &SpectralField, s: usize) -> Result<()> {
    if u.grid() != v.grid() {
        return Err(Error::GridMismatch("Moser check inputs".into()));
    }
    if u.ncomp() != 1 || v.ncomp() != 1 {
        return Err(Error::InvalidField("Moser checks take scalar fields".into()));
    }
    if s == 0 {
        return Err(Error::Parameter {
            name: "s",
            message: "inequality order must be at least 1".into(),
        });
    }
    Ok(())
}

fn order_of(alpha: &MultiIndex) -> usize {
    alpha.iter().sum()
}

/// Product or commutator inequality check for a pair of scalar fields.
/// Products are evaluated exactly on an oversampled grid; derivatives and
/// norms are spectral.
pub fn moser_check(
    kind: MoserKind,
    u: &SpectralField,
    v: &SpectralField,
    s: usize,
    alpha: &MultiIndex,
) -> Result<MoserReport> {
    check_pair_inputs(u, v, s)?;
    let a = order_of(alpha);
    if a > s {
        return Err(Error::Parameter {
            name: "alpha",
            message: format!("|alpha| = {a} exceeds inequality order s = {s}"),
        });
    }
    let warn = u.top_band_energy_fraction() > 0.01 || v.top_band_energy_fraction() > 0.01;
    match kind {
        MoserKind::Product => {
            let uv = u.product_oversampled(v)?;
            let lhs = uv.derivative(alpha)?.l2_norm();
            let f1 = u.wkinf_norm(0)? * v.grad_norm_sq(s).sqrt();
            let f2 = v.wkinf_norm(0)? * u.grad_norm_sq(s).sqrt();
            Ok(MoserReport::new(kind, lhs, vec![f1, f2], warn))
        }
        MoserKind::Commutator => {
            if a == 0 {
                return Err(Error::Parameter {
                    name: "alpha",
                    message: "commutator check needs |alpha| >= 1".into(),
                });
            }
            let full = u.product_oversampled(v)?.derivative(alpha)?;
            let partial = u.product_oversampled(&v.derivative(alpha)?)?;
            let lhs = full.sub(&partial).l2_norm();
            let f1 = u.grad_sup_norm()? * v.grad_norm_sq(s - 1).sqrt();
            let f2 = u.grad_norm_sq(s).sqrt() * v.wkinf_norm(0)?;
            Ok(MoserReport::new(kind, lhs, vec![f1, f2], warn))
        }
        MoserKind::Composition => Err(Error::Parameter {
            name: "kind",
            message: "use moser_composition_check for composition".into(),
        }),
    }
}

/// Composition inequality check `|d^a F(u)|_2` against the single factor
/// `|F'|_{C^{s-1}(ran u)} |u|_inf^{|a|-1} |d^a u|_2`.
pub fn moser_composition_check(
    map: &dyn SmoothMap,
    u: &SpectralField,
    s: usize,
    alpha: &MultiIndex,
) -> Result<MoserReport> {
    if u.ncomp() != 1 {
        return Err(Error::InvalidField("composition check takes a scalar".into()));
    }
    let a = order_of(alpha);
    if s == 0 || a == 0 || a > s {
        return Err(Error::Parameter {
            name: "alpha",
            message: format!("need 1 <= |alpha| <= s, got |alpha| = {a}, s = {s}"),
        });
    }
    let fu = u.map_values(|y| map.eval(0, y))?;
    let lhs = fu.derivative(alpha)?.l2_norm();
    // |F'|_{C^{s-1}} over the sampled range of u.
    let (lo, hi) = (u.min_value(), u.max_value());
    let mut sup: f64 = 0.0;
    let samples = 1024;
    for j in 0..=samples {
        let y = lo + (hi - lo) * j as f64 / samples as f64;
        for order in 1..=s {
            sup = sup.max(map.eval(order, y).abs());
        }
    }
    let uinf = u.wkinf_norm(0)?;
    let factor = sup * uinf.powi(a as i32 - 1) * u.derivative(alpha)?.l2_norm();
    let warn = u.top_band_energy_fraction() > 0.01 || fu.top_band_energy_fraction() > 0.01;
    Ok(MoserReport::new(
        MoserKind::Composition,
        lhs,
        vec![factor],
        warn,
    ))
}

/// Random real band-limited field: coefficients i.i.d. complex Gaussian
/// with decay `|k|^{-(smoothness+1)}`, supported on `|k|_inf <= kmax`
/// (Nyquist excluded), Hermitian-symmetrized.
pub fn random_field(
    grid: &TorusGrid,
    ncomp: usize,
    smoothness: f64,
    kmax: usize,
    rng: &mut impl RngCore,
) -> SpectralField {
    let len = grid.len();
    let mut coeffs = vec![Complex64::default(); len * ncomp];
    for c in 0..ncomp {
        for i in 0..len {
            if grid.on_nyquist(i) || grid.k_inf(i) > kmax as i64 {
                continue;
            }
            let j = grid.conj_index(i);
            if j < i {
                continue; // handled from the partner
            }
            let amp = (1.0 + grid.k_norm_sq(i)).powf(-(smoothness + 1.0) / 2.0);
            if j == i {
                coeffs[c * len + i] = Complex64::new(amp * standard_normal(rng), 0.0);
            } else {
                let z = Complex64::new(standard_normal(rng), standard_normal(rng))
                    * std::f64::consts::FRAC_1_SQRT_2;
                coeffs[c * len + i] = amp * z;
                coeffs[c * len + j] = amp * z.conj();
            }
        }
    }
    SpectralField::from_coeffs_unchecked(grid, ncomp, coeffs)
}

/// Random strictly positive scalar field `base + perturbation`, with the
/// perturbation rescaled to sup norm `amp_rel * base`.
pub fn random_positive_field(
    grid: &TorusGrid,
    base: f64,
    amp_rel: f64,
    smoothness: f64,
    kmax: usize,
    rng: &mut impl RngCore,
) -> SpectralField {
    assert!(base > 0.0 && amp_rel >= 0.0 && amp_rel < 1.0);
    let mut w = random_field(grid, 1, smoothness, kmax, rng);
    let sup = w.max_value().abs().max(w.min_value().abs());
    if sup > 0.0 {
        w = w.scale(amp_rel * base / sup);
    }
    w.map_values(|v| base + v).expect("finite")
}

/// Result of the fit/validate protocol for an empirical constant.
#[derive(Clone, Debug)]
pub struct EnsembleFit {
    /// Largest ratio over the fitting ensemble.
    pub fitted: f64,
    pub fit_samples: usize,
    pub validation_samples: usize,
    /// Validation ratios exceeding `fitted * (1 + headroom)`.
    pub violations: usize,
    pub max_validation_ratio: f64,
}

/// Fit a constant as the max ratio over `n_fit` samples and validate it on
/// the next `n_val` samples of the same deterministic family.
pub fn fit_and_validate(
    n_fit: usize,
    n_val: usize,
    headroom: f64,
    mut sample: impl FnMut(usize) -> f64,
) -> EnsembleFit {
    let mut fitted: f64 = 0.0;
    for i in 0..n_fit {
        fitted = fitted.max(sample(i));
    }
    let mut violations = 0;
    let mut max_val: f64 = 0.0;
    for i in 0..n_val {
        let r = sample(n_fit + i);
        max_val = max_val.max(r);
        if r > fitted * (1.0 + headroom) {
            violations += 1;
        }
    }
    EnsembleFit {
        fitted,
        fit_samples: n_fit,
        validation_samples: n_val,
        violations,
        max_validation_ratio: max_val,
    }
}

/// Empirical embedding constant `sup |f|_{W^{k,inf}} / |f|_{W^{s,2}}` over
/// `trials` random band-limited fields (plus the constant field, whose
/// ratio is exactly one).  Deterministic in `seed`; results are memoized
/// per `(s, k, grid, trials, seed)`.
pub fn embedding_constant(
    s: f64,
    k: usize,
    grid: &TorusGrid,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if !(s > grid.dim() as f64 / 2.0 + k as f64) {
        return Err(Error::Parameter {
            name: "s",
            message: format!(
                "embedding needs s > N/2 + k = {}, got s = {s}",
                grid.dim() as f64 / 2.0 + k as f64
            ),
        });
    }
    static CACHE: OnceLock<Mutex<HashMap<(u64, usize, usize, usize, usize, u64), f64>>> =
        OnceLock::new();
    let key = (s.to_bits(), k, grid.dim(), grid.m(), trials, seed);
    if let Some(hit) = CACHE
        .get_or_init(|| Mutex::new(HashMap::new()))
        .lock()
        .unwrap()
        .get(&key)
    {
        return Ok(*hit);
    }
    let mut rng = sub_rng(seed, &[0xe0bed, s.to_bits(), k as u64, grid.m() as u64]);
    let mut best: f64 = 1.0; // the constant field realizes ratio 1
    let kmax = grid.dealias_cutoff();
    for _ in 0..trials {
        let f = random_field(grid, 1, s, kmax, &mut rng);
        let denom = f.sobolev_norm(s)?;
        if denom == 0.0 {
            continue;
        }
        best = best.max(f.wkinf_norm(k)? / denom);
    }
    CACHE
        .get_or_init(|| Mutex::new(HashMap::new()))
        .lock()
        .unwrap()
        .insert(key, best);
    Ok(best)
}
