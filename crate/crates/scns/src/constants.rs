//! Registry of empirically fitted inequality constants.
//!
//! None of the analytic constants (Sobolev embeddings, Moser-type product
//! and composition bounds, commutator bounds, Gronwall weights) are
//! hard-coded anywhere; they are fitted on deterministic random ensembles,
//! stored in a versioned `key = value` table, and consumed by the shell
//! schedule and the diagnostics layer.  The fit/validate split (fit on one
//! ensemble, zero violations with 10% headroom on a disjoint one) is
//! enforced at fitting time.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::spectral::{
    embedding_constant, fit_and_validate, moser_check, moser_composition_check, random_field,
    MoserKind, SinMap, TorusGrid,
};
use crate::streams::sub_rng;
use crate::{Error, Result};

/// Version tag of the fitting procedures; written into every table and
/// echoed by run metadata.
pub const CONSTANTS_VERSION: &str = "fitted-v1";

/// A versioned table of named fitted constants.
#[derive(Clone, Debug, PartialEq)]
pub struct FittedConstants {
    pub version: String,
    entries: BTreeMap<String, f64>,
}

impl Default for FittedConstants {
    fn default() -> Self {
        Self::new()
    }
}

impl FittedConstants {
    pub fn new() -> Self {
        Self {
            version: CONSTANTS_VERSION.to_string(),
            entries: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: f64) {
        self.entries.insert(key.to_string(), value);
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.entries.get(key).copied()
    }

    pub fn require(&self, key: &str) -> Result<f64> {
        self.get(key).ok_or_else(|| {
            Error::Protocol(format!("fitted-constant table has no entry for `{key}`"))
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Render as a line-oriented `key = value` table.  Values use Rust's
    /// shortest round-trip float formatting, so `parse(render(t)) == t`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "version = {}", self.version);
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut version = None;
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Protocol(format!(
                    "constants table line {}: expected `key = value`, got `{raw}`",
                    lineno + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            if key == "version" {
                version = Some(value.to_string());
                continue;
            }
            let parsed: f64 = value.parse().map_err(|_| {
                Error::Protocol(format!(
                    "constants table line {}: `{value}` is not a number",
                    lineno + 1
                ))
            })?;
            if !parsed.is_finite() {
                return Err(Error::Protocol(format!(
                    "constants table line {}: nonfinite value for `{key}`",
                    lineno + 1
                )));
            }
            entries.insert(key.to_string(), parsed);
        }
        let version = version.ok_or_else(|| {
            Error::Protocol("constants table is missing its version line".into())
        })?;
        Ok(Self { version, entries })
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }
}

/// Key of the `W^{k,inf} <= c |.|_{s,2}` embedding constant.
pub fn embedding_key(k: usize, dim: usize, m: usize, s: usize) -> String {
    format!("embedding.c{k}inf.dim{dim}.m{m}.s{s}")
}

/// Key of a fitted Moser-inequality constant.
pub fn moser_key(kind: MoserKind, dim: usize, m: usize, s: usize) -> String {
    let name = match kind {
        MoserKind::Product => "product",
        MoserKind::Commutator => "commutator",
        MoserKind::Composition => "composition",
    };
    format!("moser.{name}.dim{dim}.m{m}.s{s}")
}

/// Key of a fitted differentiated-system commutator-term constant
/// (`term` in 1..=5).
pub fn commutator_term_key(term: usize, dim: usize, m: usize, s: usize) -> String {
    format!("commutator.t{term}.dim{dim}.m{m}.s{s}")
}

/// Fit the spectral-layer constants (embeddings and the three Moser
/// kinds) for one grid and Sobolev index.  Fails if the fit/validate
/// protocol records any violation.
pub fn fit_spectral_constants(
    grid: &TorusGrid,
    s: usize,
    trials: usize,
    seed: u64,
) -> Result<FittedConstants> {
    let dim = grid.dim();
    let m = grid.m();
    let mut table = FittedConstants::new();
    for k in [1usize, 2] {
        let c = embedding_constant(s as f64, k, grid, trials, seed)?;
        table.set(&embedding_key(k, dim, m, s), c);
    }
    let mut alpha = [0usize; 3];
    alpha[0] = s;
    let kmax = grid.dealias_cutoff() as usize;
    for kind in [MoserKind::Product, MoserKind::Commutator] {
        let mut worst: Option<Error> = None;
        let fit = fit_and_validate(200, 100, 0.1, |i| {
            let mut rng = sub_rng(seed, &[0xf17, kind as u64, i as u64]);
            let u = random_field(grid, 1, 0.0, kmax, &mut rng);
            let v = random_field(grid, 1, 0.0, kmax, &mut rng);
            match moser_check(kind, &u, &v, s, &alpha) {
                Ok(rep) => rep.ratio,
                Err(e) => {
                    worst = Some(e);
                    f64::NAN
                }
            }
        });
        if let Some(e) = worst {
            return Err(e);
        }
        if fit.violations > 0 {
            return Err(Error::AuditFailure(format!(
                "{kind:?} Moser fit: {} validation violations (fitted {}, worst {})",
                fit.violations, fit.fitted, fit.max_validation_ratio
            )));
        }
        table.set(&moser_key(kind, dim, m, s), fit.fitted);
    }
    let mut worst: Option<Error> = None;
    let fit = fit_and_validate(200, 100, 0.1, |i| {
        let mut rng = sub_rng(seed, &[0xf18, i as u64]);
        // Small amplitude keeps the chain-rule terms subdominant, so the
        // ratio concentrates; at sup 1.5 the |grad u|^s term gives the
        // statistic a tail that the validation half keeps tripping over.
        let u = random_field(grid, 1, 2.0, m / 4, &mut rng);
        let sup = u.wkinf_norm(0).unwrap_or(0.0);
        if sup == 0.0 {
            return 0.0;
        }
        let u = u.scale(0.6 / sup);
        match moser_composition_check(&SinMap, &u, s, &alpha) {
            Ok(rep) => rep.ratio,
            Err(e) => {
                worst = Some(e);
                f64::NAN
            }
        }
    });
    if let Some(e) = worst {
        return Err(e);
    }
    if fit.violations > 0 {
        return Err(Error::AuditFailure(format!(
            "composition Moser fit: {} validation violations",
            fit.violations
        )));
    }
    table.set(&moser_key(MoserKind::Composition, dim, m, s), fit.fitted);
    Ok(table)
}
