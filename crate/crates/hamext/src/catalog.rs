//! Library of natural Hamiltonian systems with ladder-extension data.
//!
//! The library is a TOML document: each `[[system]]` places one potential on
//! a registered chart and records its named parameters, shorthand
//! definitions, singular sets, known first integrals (with the parameter
//! pins under which they hold), and constraint rows — parameter loci on
//! which the compatibility equation `grad V . grad G = 2m (cV + L0) G`
//! acquires nonzero solutions `G`, together with the expected solution.
//!
//! Loading a catalog always runs the structural self-check: every expression
//! must parse, charts must exist, constraint relations must vanish
//! symbolically under their own assignments, and expected solutions may use
//! only the coefficient names of the chart's Hessian ansatz. The numeric
//! check that every shipped integral Poisson-commutes with its Hamiltonian
//! is exposed separately as [`Catalog::check_integrals`] because it costs
//! seconds, not microseconds; the test suite runs it over the whole shipped
//! catalog.
//!
//! [`Catalog::scan_tables`] re-derives the constraint tables numerically:
//! for every entry of a chart family it samples the compatibility equation
//! at generic parameters (expecting no solutions off the constraint loci)
//! and on each constraint row (expecting the recorded solution space), then
//! certifies one representative extension per nonempty solution space by a
//! seeded Poisson-bracket residual.

use crate::expr::{
    normalize, parse_expression, Binding, Expr, ExprError, Symbol,
};
use crate::extension::{
    compatibility_nullspace, extend, g_basis, ExtensionError, ExtensionSpec, GAnsatz,
};
use crate::phasepoly::{Chart, ChartFamily, MomentumPolynomial, PhaseError};
use crate::sample::{Domain, Sampler};
use crate::tol;
use crate::verify::{bracket_residual_max, VerifyError};
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

/// The catalog shipped with the crate, embedded at compile time.
pub const DEFAULT_TOML: &str = include_str!("../data/catalog.toml");

/// Sample count for [`Catalog::check_integrals`] when callers have no
/// preference.
pub const INTEGRAL_CHECK_SAMPLES: usize = 100;

/// Errors from catalog loading, validation, instantiation, or scanning.
#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("TOML syntax: {0}")]
    Toml(#[from] Box<toml::de::Error>),
    #[error("entry `{entry}`: {detail}")]
    Entry { entry: String, detail: String },
    #[error("unknown system `{0}`")]
    UnknownSystem(String),
    #[error("entry `{entry}`: parameter `{param}` is not bound")]
    UnboundParam { entry: String, param: String },
    #[error("entry `{entry}`: parameter values lie on the singular set `{expr}`")]
    SingularValues { entry: String, expr: String },
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error(transparent)]
    Extension(#[from] ExtensionError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
}

/// Registered chart names a catalog entry may reference.
pub fn chart_by_name(name: &str) -> Option<Chart> {
    match name {
        "euclid1" => Some(Chart::euclidean(1)),
        "euclid2" => Some(Chart::euclidean(2)),
        "euclid3" => Some(Chart::euclidean(3)),
        "sphere2" => Some(Chart::sphere()),
        "ttw2" => Some(Chart::ttw()),
        _ => None,
    }
}

/// A first integral known in closed form, valid under its parameter pins.
#[derive(Clone, Debug)]
pub struct KnownIntegral {
    pub name: String,
    /// Raw expression; shorthand definitions are not yet substituted.
    pub expr: Expr,
    /// Parameter values required for the integral to commute, applied in
    /// order. An empty list means the integral holds for all parameters.
    pub pins: Vec<(Symbol, Expr)>,
}

/// One locus in parameter space on which an extension exists.
#[derive(Clone, Debug)]
pub struct ConstraintRow {
    pub name: String,
    /// Scalar relation that vanishes on the locus; `0` when the locus is a
    /// pure pin set with no relation among the remaining parameters.
    pub relation: Expr,
    /// Parameter assignments that put a sample on the locus, applied in
    /// order; right-hand sides may use `m`, `L0`, and other parameters.
    pub assign: Vec<(Symbol, Expr)>,
    /// The solution of the compatibility equation recorded for this locus,
    /// written in the coefficient names of the chart's Hessian ansatz.
    pub expected_g: Option<Expr>,
    pub notes: String,
}

/// One system of the catalog.
#[derive(Clone, Debug)]
pub struct SystemEntry {
    pub id: String,
    pub chart_name: String,
    pub description: String,
    /// Whether the potential is real-valued on the real chart domain;
    /// complex-valued entries keep their algebraic checks but are never
    /// integrated along trajectories.
    pub real_domain: bool,
    pub params: Vec<Symbol>,
    /// Shorthand definitions, in order; later definitions may use earlier
    /// ones.
    pub defs: Vec<(Symbol, Expr)>,
    /// Raw potential; shorthand definitions are not yet substituted.
    pub potential: Expr,
    /// System-level singular sets (raw), avoided by every sampler draw.
    pub singular: Vec<Expr>,
    pub notes: String,
    pub integrals: Vec<KnownIntegral>,
    pub constraints: Vec<ConstraintRow>,
}

impl SystemEntry {
    /// The chart this entry lives on. Chart names are validated at load.
    pub fn chart(&self) -> Chart {
        chart_by_name(&self.chart_name).expect("chart names are validated at load")
    }

    /// Shorthand definitions with earlier ones substituted into later ones,
    /// ready for one-shot substitution.
    pub fn def_closure(&self) -> BTreeMap<Symbol, Expr> {
        let mut map = BTreeMap::new();
        for (name, rhs) in &self.defs {
            let expanded = rhs.subst(&map);
            map.insert(name.clone(), expanded);
        }
        map
    }

    /// Substitute the shorthand definitions into an expression.
    pub fn expand(&self, e: &Expr) -> Expr {
        e.subst(&self.def_closure())
    }

    pub fn potential_expanded(&self) -> Expr {
        self.expand(&self.potential)
    }

    pub fn singular_expanded(&self) -> Vec<Expr> {
        let map = self.def_closure();
        self.singular.iter().map(|s| s.subst(&map)).collect()
    }

    /// Sampling domain implied by [`SystemEntry::real_domain`].
    pub fn domain(&self) -> Domain {
        if self.real_domain {
            Domain::Real
        } else {
            Domain::Complex
        }
    }

    /// Look up a constraint row by name.
    pub fn constraint(&self, name: &str) -> Option<&ConstraintRow> {
        self.constraints.iter().find(|c| c.name == name)
    }
}

/// A system with every parameter bound to a number, ready for evaluation.
#[derive(Clone, Debug)]
pub struct Instance {
    pub entry: SystemEntry,
    pub chart: Chart,
    /// The natural Hamiltonian of the entry over the chart momenta.
    pub l: MomentumPolynomial,
    /// Expanded potential (shorthand substituted, parameters symbolic).
    pub potential: Expr,
    /// Parameter values, including `m` and `L0`.
    pub params: Binding,
    pub m: u32,
    pub l0: f64,
    /// Complex-valued entries support algebraic checks only, never
    /// trajectory integration.
    pub trajectory_ok: bool,
}

/// Family selector for [`Catalog::scan_tables`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanFamily {
    /// Flat entries (charts `euclid1`, `euclid2`, `euclid3`); the scan runs
    /// the `c = 0` branch with a random nonzero `L0`.
    Flat,
    /// Entries on `sphere2`; the scan runs the curved branch `c = 1/m`.
    Sphere,
    /// Entries on `ttw2`; the scan runs the curved branch `c = chi/m` at
    /// random `chi`, `zeta`.
    Ttw,
}

impl std::str::FromStr for ScanFamily {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "E2" | "FLAT" => Ok(ScanFamily::Flat),
            "S2" | "SPHERE" => Ok(ScanFamily::Sphere),
            "TTW" => Ok(ScanFamily::Ttw),
            _ => Err(format!(
                "unknown family `{s}` (expected E2, S2, or TTW)"
            )),
        }
    }
}

/// One line of scanner output.
#[derive(Clone, Debug, Serialize)]
pub struct ScanRow {
    /// System id.
    pub entry: String,
    /// Constraint row name, or `generic` for the off-locus control run.
    pub constraint: String,
    /// Dimension of the numerically found solution space.
    pub dim: usize,
    /// Dimension recorded in the catalog (0 for the generic run).
    pub expected_dim: usize,
    /// First solution-space vector, human-readable, when `dim >= 1`.
    pub representative_g: Option<String>,
    /// Whether the found space has the recorded dimension and span.
    pub matched: bool,
    /// Poisson residual of the representative extension when `dim >= 1`.
    pub bracket_residual: Option<f64>,
    /// `extensible` when a solution exists and its extension commutes.
    pub verdict: String,
}

/// Result of one shipped-integral bracket check.
#[derive(Clone, Debug, Serialize)]
pub struct IntegralCheck {
    pub entry: String,
    pub integral: String,
    pub residual: f64,
    pub pass: bool,
}

/// The system library.
#[derive(Clone, Debug)]
pub struct Catalog {
    pub systems: Vec<SystemEntry>,
}

// ---------------------------------------------------------------------------
// loading and validation

/// Raw TOML shape, converted into [`SystemEntry`] with parsed expressions.
#[derive(Deserialize)]
struct RawCatalog {
    #[serde(default)]
    system: Vec<RawSystem>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    id: String,
    chart: String,
    #[serde(default)]
    description: String,
    real_domain: bool,
    #[serde(default)]
    params: Vec<String>,
    #[serde(default)]
    defs: Vec<[String; 2]>,
    potential: String,
    #[serde(default)]
    singular: Vec<String>,
    #[serde(default)]
    notes: String,
    #[serde(default)]
    integrals: Vec<RawIntegral>,
    #[serde(default)]
    constraints: Vec<RawConstraint>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIntegral {
    name: String,
    expr: String,
    #[serde(default)]
    pins: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConstraint {
    name: String,
    #[serde(default = "zero_text")]
    relation: String,
    #[serde(default)]
    assign: Vec<String>,
    #[serde(default)]
    expected_g: Option<String>,
    #[serde(default)]
    notes: String,
}

fn zero_text() -> String {
    "0".to_string()
}

fn entry_error(entry: &str, detail: impl Into<String>) -> CatalogError {
    CatalogError::Entry {
        entry: entry.to_string(),
        detail: detail.into(),
    }
}

fn parse_field(entry: &str, field: &str, text: &str) -> Result<Expr, CatalogError> {
    parse_expression(text).map_err(|e| entry_error(entry, format!("{field}: {e}")))
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Ids are labels, not symbols, so hyphens are allowed.
fn valid_id(name: &str) -> bool {
    !name.is_empty()
        && name.chars().next().is_some_and(|c| c.is_ascii_alphanumeric())
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// Parse one `name = expr` item from a pin or assignment list.
fn parse_binding_item(
    entry: &str,
    field: &str,
    text: &str,
) -> Result<(Symbol, Expr), CatalogError> {
    let Some((lhs, rhs)) = text.split_once('=') else {
        return Err(entry_error(entry, format!("{field}: missing `=` in `{text}`")));
    };
    let name = lhs.trim();
    if !valid_name(name) {
        return Err(entry_error(
            entry,
            format!("{field}: `{name}` is not a parameter name"),
        ));
    }
    Ok((Symbol::new(name), parse_field(entry, field, rhs)?))
}

/// Text fields are emitted verbatim by the canonical printer, so they must
/// not need escaping.
fn check_printable(entry: &str, field: &str, text: &str) -> Result<(), CatalogError> {
    if text.chars().any(|c| c == '"' || c == '\\' || c.is_control()) {
        return Err(entry_error(
            entry,
            format!("{field}: quotes, backslashes, and control characters are not supported"),
        ));
    }
    Ok(())
}

fn convert_entry(raw: RawSystem) -> Result<SystemEntry, CatalogError> {
    let id = raw.id.clone();
    if !valid_id(&id) {
        return Err(entry_error(&id, "id must be alphanumeric with `-` or `_`"));
    }
    for (field, text) in [
        ("description", &raw.description),
        ("notes", &raw.notes),
        ("chart", &raw.chart),
    ] {
        check_printable(&id, field, text)?;
    }
    let params: Vec<Symbol> = raw
        .params
        .iter()
        .map(|p| {
            if valid_name(p) {
                Ok(Symbol::new(p))
            } else {
                Err(entry_error(&id, format!("params: `{p}` is not an identifier")))
            }
        })
        .collect::<Result<_, _>>()?;
    let defs: Vec<(Symbol, Expr)> = raw
        .defs
        .iter()
        .map(|[name, rhs]| {
            if !valid_name(name) {
                return Err(entry_error(&id, format!("defs: `{name}` is not an identifier")));
            }
            Ok((Symbol::new(name), parse_field(&id, "defs", rhs)?))
        })
        .collect::<Result<_, _>>()?;
    let potential = parse_field(&id, "potential", &raw.potential)?;
    let singular = raw
        .singular
        .iter()
        .map(|s| parse_field(&id, "singular", s))
        .collect::<Result<_, _>>()?;
    let integrals = raw
        .integrals
        .into_iter()
        .map(|ri| {
            check_printable(&id, "integral name", &ri.name)?;
            Ok(KnownIntegral {
                expr: parse_field(&id, &format!("integral `{}`", ri.name), &ri.expr)?,
                pins: ri
                    .pins
                    .iter()
                    .map(|p| parse_binding_item(&id, "pins", p))
                    .collect::<Result<_, _>>()?,
                name: ri.name,
            })
        })
        .collect::<Result<Vec<_>, CatalogError>>()?;
    let constraints = raw
        .constraints
        .into_iter()
        .map(|rc| {
            check_printable(&id, "constraint name", &rc.name)?;
            check_printable(&id, "constraint notes", &rc.notes)?;
            Ok(ConstraintRow {
                relation: parse_field(&id, &format!("constraint `{}` relation", rc.name), &rc.relation)?,
                assign: rc
                    .assign
                    .iter()
                    .map(|a| parse_binding_item(&id, "assign", a))
                    .collect::<Result<_, _>>()?,
                expected_g: rc
                    .expected_g
                    .as_deref()
                    .map(|g| parse_field(&id, "expected_g", g))
                    .transpose()?,
                name: rc.name,
                notes: rc.notes,
            })
        })
        .collect::<Result<Vec<_>, CatalogError>>()?;
    Ok(SystemEntry {
        id,
        chart_name: raw.chart,
        description: raw.description,
        real_domain: raw.real_domain,
        params,
        defs,
        potential,
        singular,
        notes: raw.notes,
        integrals,
        constraints,
    })
}

fn free_symbols(e: &Expr) -> BTreeSet<Symbol> {
    let mut out = BTreeSet::new();
    e.free_symbols(&mut out);
    out
}

impl Catalog {
    /// Parse a catalog document and run the structural self-check.
    pub fn parse(text: &str) -> Result<Catalog, CatalogError> {
        let raw: RawCatalog = toml::from_str(text).map_err(Box::new)?;
        let systems = raw
            .system
            .into_iter()
            .map(convert_entry)
            .collect::<Result<Vec<_>, _>>()?;
        let catalog = Catalog { systems };
        catalog.self_check()?;
        Ok(catalog)
    }

    /// Load a catalog document from disk.
    pub fn load(path: &Path) -> Result<Catalog, CatalogError> {
        let text = std::fs::read_to_string(path).map_err(|source| CatalogError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Catalog::parse(&text)
    }

    /// The catalog shipped with the crate.
    pub fn load_default() -> Result<Catalog, CatalogError> {
        Catalog::parse(DEFAULT_TOML)
    }

    pub fn get(&self, id: &str) -> Option<&SystemEntry> {
        self.systems.iter().find(|s| s.id == id)
    }

    pub fn require(&self, id: &str) -> Result<&SystemEntry, CatalogError> {
        self.get(id)
            .ok_or_else(|| CatalogError::UnknownSystem(id.to_string()))
    }

    /// Structural and symbolic validation of every entry; runs at load.
    fn self_check(&self) -> Result<(), CatalogError> {
        let mut seen = BTreeSet::new();
        for entry in &self.systems {
            if !seen.insert(entry.id.clone()) {
                return Err(entry_error(&entry.id, "duplicate system id"));
            }
            self.check_entry(entry)?;
        }
        Ok(())
    }

    fn check_entry(&self, entry: &SystemEntry) -> Result<(), CatalogError> {
        let id = &entry.id;
        let chart = chart_by_name(&entry.chart_name)
            .ok_or_else(|| entry_error(id, format!("unknown chart `{}`", entry.chart_name)))?;

        // name scopes: coordinates, momenta, chart parameters, entry
        // parameters, shorthand names — all pairwise disjoint
        let mut scope: BTreeSet<Symbol> = BTreeSet::new();
        let mut claim = |sym: &Symbol, what: &str| -> Result<(), CatalogError> {
            if scope.insert(sym.clone()) {
                Ok(())
            } else {
                Err(entry_error(id, format!("{what} `{sym}` collides with another name")))
            }
        };
        for c in chart.coords.iter().chain(&chart.momenta) {
            claim(c, "chart name")?;
        }
        for p in &chart.params {
            claim(p, "chart parameter")?;
        }
        for p in &entry.params {
            claim(p, "parameter")?;
        }
        for (d, _) in &entry.defs {
            claim(d, "shorthand")?;
        }
        for reserved in [m_sym(), l0_sym()] {
            if entry.params.contains(&reserved) || entry.defs.iter().any(|(d, _)| *d == reserved) {
                return Err(entry_error(id, format!("`{reserved}` is reserved")));
            }
        }

        // defs may use coordinates, momenta, chart params, and earlier defs
        let mut allowed: BTreeSet<Symbol> = chart
            .coords
            .iter()
            .chain(&chart.momenta)
            .chain(&chart.params)
            .chain(&entry.params)
            .cloned()
            .collect();
        for (name, rhs) in &entry.defs {
            for sym in free_symbols(rhs) {
                if !allowed.contains(&sym) {
                    return Err(entry_error(
                        id,
                        format!("defs: `{name}` uses unknown symbol `{sym}`"),
                    ));
                }
            }
            allowed.insert(name.clone());
        }

        // the potential and singular sets: configuration quantities only
        let config_scope: BTreeSet<Symbol> = chart
            .coords
            .iter()
            .chain(&chart.params)
            .chain(&entry.params)
            .cloned()
            .collect();
        for (field, expr) in std::iter::once(("potential", &entry.potential))
            .chain(entry.singular.iter().map(|s| ("singular", s)))
        {
            for sym in free_symbols(&entry.expand(expr)) {
                if !config_scope.contains(&sym) {
                    return Err(entry_error(
                        id,
                        format!("{field} uses unknown symbol `{sym}`"),
                    ));
                }
            }
        }

        // integrals: full phase-space scope
        let phase_scope: BTreeSet<Symbol> = config_scope
            .iter()
            .chain(&chart.momenta)
            .cloned()
            .collect();
        for integral in &entry.integrals {
            for sym in free_symbols(&entry.expand(&integral.expr)) {
                if !phase_scope.contains(&sym) {
                    return Err(entry_error(
                        id,
                        format!("integral `{}` uses unknown symbol `{sym}`", integral.name),
                    ));
                }
            }
            for (lhs, rhs) in &integral.pins {
                if !entry.params.contains(lhs) {
                    return Err(entry_error(
                        id,
                        format!("integral `{}` pins unknown parameter `{lhs}`", integral.name),
                    ));
                }
                for sym in free_symbols(rhs) {
                    if !entry.params.contains(&sym) {
                        return Err(entry_error(
                            id,
                            format!("integral `{}` pin uses unknown symbol `{sym}`", integral.name),
                        ));
                    }
                }
            }
        }

        // constraints
        let ansatz = g_basis(&chart)?;
        let mut row_names = BTreeSet::new();
        let mut relation_scope = config_scope.clone();
        relation_scope.insert(m_sym());
        relation_scope.insert(l0_sym());
        for row in &entry.constraints {
            if !row_names.insert(row.name.clone()) {
                return Err(entry_error(id, format!("duplicate constraint name `{}`", row.name)));
            }
            for sym in free_symbols(&row.relation) {
                if !relation_scope.contains(&sym) {
                    return Err(entry_error(
                        id,
                        format!("constraint `{}` relation uses unknown symbol `{sym}`", row.name),
                    ));
                }
            }
            let mut subst = BTreeMap::new();
            for (lhs, rhs) in &row.assign {
                if !entry.params.contains(lhs) {
                    return Err(entry_error(
                        id,
                        format!("constraint `{}` assigns unknown parameter `{lhs}`", row.name),
                    ));
                }
                for sym in free_symbols(rhs) {
                    if !relation_scope.contains(&sym) {
                        return Err(entry_error(
                            id,
                            format!("constraint `{}` assignment uses unknown symbol `{sym}`", row.name),
                        ));
                    }
                }
                subst.insert(lhs.clone(), rhs.clone());
            }
            // the relation must vanish identically once the assignments are
            // substituted — this catches mistyped loci at load time
            let on_locus = row.relation.subst(&subst);
            let vanishes = normalize(&on_locus)
                .map(|n| n.is_zero_literal())
                .map_err(|e| entry_error(id, format!("constraint `{}` relation: {e}", row.name)))?;
            if !vanishes {
                return Err(entry_error(
                    id,
                    format!(
                        "constraint `{}`: relation `{}` does not vanish under its assignments",
                        row.name, row.relation
                    ),
                ));
            }
            if let Some(g) = &row.expected_g {
                let mut n_coeffs = 0usize;
                for sym in free_symbols(&entry.expand(g)) {
                    if ansatz.coeffs.contains(&sym) {
                        n_coeffs += 1;
                    } else if !relation_scope.contains(&sym) {
                        return Err(entry_error(
                            id,
                            format!("constraint `{}` expected_g uses unknown symbol `{sym}`", row.name),
                        ));
                    }
                }
                if n_coeffs == 0 {
                    return Err(entry_error(
                        id,
                        format!("constraint `{}` expected_g has no free coefficients", row.name),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Numeric check that every shipped integral Poisson-commutes with its
    /// entry's Hamiltonian, honoring the integral's parameter pins. Returns
    /// one record per integral; `pass` compares the residual against
    /// [`tol::BRACKET_RESIDUAL`].
    pub fn check_integrals(
        &self,
        samples: usize,
        seed: u64,
    ) -> Result<Vec<IntegralCheck>, CatalogError> {
        let mut out = Vec::new();
        for entry in &self.systems {
            out.extend(self.check_entry_integrals(entry, samples, seed)?);
        }
        Ok(out)
    }

    /// [`Catalog::check_integrals`] for a single entry.
    pub fn check_entry_integrals(
        &self,
        entry: &SystemEntry,
        samples: usize,
        seed: u64,
    ) -> Result<Vec<IntegralCheck>, CatalogError> {
        let chart = entry.chart();
        let domain = entry.domain();
        let avoid = entry.singular_expanded();
        let v = entry.potential_expanded();
        let l = chart.natural_hamiltonian(&v);
        let mut out = Vec::new();
        for (idx, integral) in entry.integrals.iter().enumerate() {
            let run_seed = mix_seed(seed, idx as u64 + 1);
            let mut sampler = Sampler::new(run_seed);
            let mut params = Binding::new();
            let free: Vec<Symbol> = entry
                .params
                .iter()
                .chain(&chart.params)
                .filter(|p| !integral.pins.iter().any(|(lhs, _)| lhs == *p))
                .cloned()
                .collect();
            params = sampler.bind_params(&params, &free);
            for (lhs, rhs) in &integral.pins {
                let value = params.eval(&entry.expand(rhs))?;
                params.set_sym(lhs, value);
            }
            let f = MomentumPolynomial::from_expr(&entry.expand(&integral.expr), &chart.momenta)?;
            let residual =
                bracket_residual_max(&chart, &l, &f, &params, &avoid, domain, samples, run_seed)?;
            out.push(IntegralCheck {
                entry: entry.id.clone(),
                integral: integral.name.clone(),
                residual,
                pass: residual < tol::BRACKET_RESIDUAL,
            });
        }
        Ok(out)
    }

    /// Bind every parameter of a system to a number.
    ///
    /// `values` must cover exactly the entry's parameters (chart parameters
    /// included); `m` and `L0` are bound from the dedicated arguments.
    /// Coordinate-free singular expressions are evaluated to reject values
    /// on a singular set (for example a branch parameter pinned to zero).
    pub fn instantiate(
        &self,
        id: &str,
        values: &BTreeMap<String, f64>,
        m: u32,
        l0: f64,
    ) -> Result<Instance, CatalogError> {
        let entry = self.require(id)?.clone();
        let chart = entry.chart();
        let mut params = Binding::new();
        params.set_real("m", m as f64);
        params.set_real("L0", l0);
        let known: BTreeSet<&str> = entry
            .params
            .iter()
            .chain(&chart.params)
            .map(|p| p.name())
            .collect();
        for (name, value) in values {
            if !known.contains(name.as_str()) {
                return Err(entry_error(
                    &entry.id,
                    format!("unknown parameter `{name}`"),
                ));
            }
            params.set_real(name, *value);
        }
        for p in entry.params.iter().chain(&chart.params) {
            if params.get(p).is_none() {
                return Err(CatalogError::UnboundParam {
                    entry: entry.id.clone(),
                    param: p.name().to_string(),
                });
            }
        }
        for s in entry.singular_expanded() {
            let syms = free_symbols(&s);
            if syms.iter().all(|q| params.get(q).is_some()) {
                let value = params.eval(&s)?;
                if value.norm() < tol::SINGULAR_MARGIN {
                    return Err(CatalogError::SingularValues {
                        entry: entry.id.clone(),
                        expr: s.to_string(),
                    });
                }
            }
        }
        let potential = entry.potential_expanded();
        let l = chart.natural_hamiltonian(&potential);
        let trajectory_ok = entry.real_domain;
        Ok(Instance {
            entry,
            chart,
            l,
            potential,
            params,
            m,
            l0,
            trajectory_ok,
        })
    }

    /// Re-derive the constraint tables of a chart family numerically.
    ///
    /// For each entry the scan runs one `generic` row at random parameters
    /// (skipped when a constraint holds unconditionally, because then no
    /// off-locus parameters exist) and one row per recorded constraint with
    /// its assignments applied. Every row solves the compatibility equation
    /// by seeded sampling; rows with solutions build the extension of the
    /// first solution vector and measure its Poisson residual.
    pub fn scan_tables(
        &self,
        family: ScanFamily,
        m: u32,
        samples: usize,
        seed: u64,
    ) -> Result<Vec<ScanRow>, CatalogError> {
        let mut rows = Vec::new();
        for (idx, entry) in self.systems.iter().enumerate() {
            let wanted = match family {
                ScanFamily::Flat => entry.chart().family == ChartFamily::Euclidean,
                ScanFamily::Sphere => entry.chart().family == ChartFamily::Sphere,
                ScanFamily::Ttw => entry.chart().family == ChartFamily::Ttw,
            };
            if !wanted {
                continue;
            }
            rows.extend(self.scan_entry(entry, m, samples, mix_seed(seed, idx as u64))?);
        }
        Ok(rows)
    }

    /// Scan a single entry; see [`Catalog::scan_tables`].
    pub fn scan_entry(
        &self,
        entry: &SystemEntry,
        m: u32,
        samples: usize,
        seed: u64,
    ) -> Result<Vec<ScanRow>, CatalogError> {
        let chart = entry.chart();
        let ansatz = g_basis(&chart)?;
        let v = entry.potential_expanded();
        let avoid = entry.singular_expanded();
        let domain = entry.domain();

        // branch data: flat runs c = 0 with L0 random nonzero, curved runs
        // c = K/m with L0 = 0
        let (c_expr, l0_expr) = match chart.family {
            ChartFamily::Euclidean => (Expr::zero(), Expr::sym(&l0_sym())),
            ChartFamily::Sphere => (Expr::ratio(1, m as i64), Expr::zero()),
            ChartFamily::Ttw => (
                Expr::mul(vec![Expr::ratio(1, m as i64), Expr::var("chi")]),
                Expr::zero(),
            ),
            ChartFamily::Extended => {
                return Err(entry_error(&entry.id, "extended charts cannot be scanned"))
            }
        };

        let mut out = Vec::new();
        let unconditional = entry.constraints.iter().any(|c| c.assign.is_empty());
        if !unconditional {
            out.push(self.scan_row(
                entry, &chart, &ansatz, &v, &avoid, domain, m, &c_expr, &l0_expr,
                "generic", &[], None, samples, mix_seed(seed, 0),
            )?);
        }
        for (j, row) in entry.constraints.iter().enumerate() {
            out.push(self.scan_row(
                entry, &chart, &ansatz, &v, &avoid, domain, m, &c_expr, &l0_expr,
                &row.name, &row.assign, row.expected_g.as_ref(), samples,
                mix_seed(seed, j as u64 + 1),
            )?);
        }
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn scan_row(
        &self,
        entry: &SystemEntry,
        chart: &Chart,
        ansatz: &GAnsatz,
        v: &Expr,
        avoid: &[Expr],
        domain: Domain,
        m: u32,
        c_expr: &Expr,
        l0_expr: &Expr,
        row_name: &str,
        assign: &[(Symbol, Expr)],
        expected_g: Option<&Expr>,
        samples: usize,
        seed: u64,
    ) -> Result<ScanRow, CatalogError> {
        let mut sampler = Sampler::new(seed);

        // parameter values: m always; L0 nonzero on the flat branch (the
        // generic run must exercise the L0 != 0 sink); chart parameters in
        // their own range; everything else a moderate random value
        let mut params = Binding::new();
        params.set_real("m", m as f64);
        match chart.family {
            ChartFamily::Euclidean => {
                params.set_real("L0", sampler.nonzero(0.4, 1.6));
            }
            _ => {
                params.set_real("L0", 0.0);
            }
        }
        for p in &chart.params {
            params.set_sym(p, Complex64::new(sampler.uniform(0.4, 2.0), 0.0));
        }
        params = sampler.bind_params(&params, &entry.params);
        for (lhs, rhs) in assign {
            let value = params.eval(&entry.expand(rhs))?;
            params.set_sym(lhs, value);
        }

        // Apply the assignments to the potential symbolically as well (with
        // the ladder count as a literal, matching how the extension is
        // built). A commuting ladder bracket then cancels in the normal
        // form; substituting only numerically leaves near-cancelling
        // rational terms whose float noise can swamp the residual gate.
        let literal_m: BTreeMap<Symbol, Expr> =
            [(m_sym(), Expr::int(m as i64))].into_iter().collect();
        let assign_map: BTreeMap<Symbol, Expr> = assign
            .iter()
            .map(|(lhs, rhs)| (lhs.clone(), entry.expand(rhs).subst(&literal_m)))
            .collect();
        let v_row = v.subst(&assign_map);

        let nullspace = compatibility_nullspace(
            &v_row, ansatz, m, c_expr, l0_expr, &params, avoid, domain, samples,
            mix_seed(seed, 1),
        )?;
        let dim = nullspace.vectors.len();

        let (expected_dim, matched) = match expected_g {
            None => (0, dim == 0),
            Some(g) => {
                let dirs = expected_directions(entry, ansatz, g);
                let ok = dim == dirs.len()
                    && span_matches(
                        chart,
                        ansatz,
                        &nullspace.vectors,
                        &dirs,
                        &params,
                        avoid,
                        domain,
                        &mut sampler,
                    )?;
                (dirs.len(), ok)
            }
        };

        let (representative_g, bracket_residual) = if dim >= 1 {
            let coeffs = canonical_phase(&nullspace.vectors[0]);
            // When the measured span agrees with the recorded one, extend
            // the recorded element itself (unit coefficients): its bracket
            // is decided symbolically. The numeric solution vector only
            // serves as the fallback for unexpected solution spaces.
            let g0 = match expected_g {
                Some(g) if matched => {
                    let ones: BTreeMap<Symbol, Expr> = ansatz
                        .coeffs
                        .iter()
                        .map(|a| (a.clone(), Expr::int(1)))
                        .collect();
                    entry
                        .expand(g)
                        .subst(&ones)
                        .subst(&assign_map)
                        .subst(&literal_m)
                }
                _ => ansatz.instantiate(&coeffs),
            };
            let spec = match chart.family {
                ChartFamily::Euclidean => ExtensionSpec::flat(m, l0_expr.clone()),
                _ => ExtensionSpec::curved(m, c_expr.clone(), Expr::int((m * m) as i64)),
            };
            let sys = extend(chart, &v_row, &g0, &spec)?;
            let f = sys
                .integrals
                .iter()
                .find(|(name, _)| name.starts_with("F="))
                .map(|(_, f)| f)
                .expect("extend always records the ladder integral");
            let residual = bracket_residual_max(
                &sys.chart,
                &sys.h,
                f,
                &params,
                avoid,
                domain,
                BRACKET_SAMPLES,
                mix_seed(seed, 2),
            )?;
            (
                Some(format_representative(ansatz, &coeffs)),
                Some(residual),
            )
        } else {
            (None, None)
        };

        let extensible =
            dim >= 1 && bracket_residual.is_some_and(|r| r < tol::BRACKET_RESIDUAL);
        Ok(ScanRow {
            entry: entry.id.clone(),
            constraint: row_name.to_string(),
            dim,
            expected_dim,
            representative_g,
            matched,
            bracket_residual,
            verdict: if extensible { "extensible" } else { "not-extensible" }.to_string(),
        })
    }

    /// Render the catalog in its canonical TOML layout. Loading the output
    /// reproduces the catalog, and printing again is byte-stable.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(
            "# Library of natural Hamiltonians with ladder-extension data.\n\
             # Canonical layout: regenerate with `Catalog::to_text`.\n",
        );
        for entry in &self.systems {
            let _ = write!(out, "\n[[system]]\nid = \"{}\"\n", entry.id);
            let _ = write!(out, "chart = \"{}\"\n", entry.chart_name);
            if !entry.description.is_empty() {
                let _ = write!(out, "description = \"{}\"\n", entry.description);
            }
            let _ = write!(out, "real_domain = {}\n", entry.real_domain);
            let names: Vec<String> =
                entry.params.iter().map(|p| format!("\"{p}\"")).collect();
            let _ = write!(out, "params = [{}]\n", names.join(", "));
            if !entry.defs.is_empty() {
                let items: Vec<String> = entry
                    .defs
                    .iter()
                    .map(|(n, e)| format!("[\"{n}\", \"{e}\"]"))
                    .collect();
                let _ = write!(out, "defs = [{}]\n", items.join(", "));
            }
            let _ = write!(out, "potential = \"{}\"\n", entry.potential);
            if !entry.singular.is_empty() {
                let items: Vec<String> =
                    entry.singular.iter().map(|s| format!("\"{s}\"")).collect();
                let _ = write!(out, "singular = [{}]\n", items.join(", "));
            }
            if !entry.notes.is_empty() {
                let _ = write!(out, "notes = \"{}\"\n", entry.notes);
            }
            for integral in &entry.integrals {
                let _ = write!(
                    out,
                    "\n[[system.integrals]]\nname = \"{}\"\nexpr = \"{}\"\n",
                    integral.name, integral.expr
                );
                if !integral.pins.is_empty() {
                    let items: Vec<String> = integral
                        .pins
                        .iter()
                        .map(|(l, r)| format!("\"{l} = {r}\""))
                        .collect();
                    let _ = write!(out, "pins = [{}]\n", items.join(", "));
                }
            }
            for row in &entry.constraints {
                let _ = write!(
                    out,
                    "\n[[system.constraints]]\nname = \"{}\"\nrelation = \"{}\"\n",
                    row.name, row.relation
                );
                if !row.assign.is_empty() {
                    let items: Vec<String> = row
                        .assign
                        .iter()
                        .map(|(l, r)| format!("\"{l} = {r}\""))
                        .collect();
                    let _ = write!(out, "assign = [{}]\n", items.join(", "));
                }
                if let Some(g) = &row.expected_g {
                    let _ = write!(out, "expected_g = \"{g}\"\n");
                }
                if !row.notes.is_empty() {
                    let _ = write!(out, "notes = \"{}\"\n", row.notes);
                }
            }
        }
        out
    }

    /// Write the canonical layout to disk.
    pub fn save(&self, path: &Path) -> Result<(), CatalogError> {
        std::fs::write(path, self.to_text()).map_err(|source| CatalogError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Sample count for the per-row extension bracket in the scanner; the
/// residual of a genuinely commuting pair is exactly zero after symbolic
/// normalization, so a moderate count only guards the evaluation itself.
const BRACKET_SAMPLES: usize = 40;

fn m_sym() -> Symbol {
    Symbol::new("m")
}

fn l0_sym() -> Symbol {
    Symbol::new("L0")
}

/// SplitMix64 step, used to derive independent per-row seeds.
fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Directions `d(expected_g)/d(a_i)` for the ansatz coefficients that appear
/// in the recorded solution; the recorded solutions are linear in the
/// coefficients, so these span the recorded space.
fn expected_directions(entry: &SystemEntry, ansatz: &GAnsatz, g: &Expr) -> Vec<Expr> {
    let expanded = entry.expand(g);
    let present = free_symbols(&expanded);
    ansatz
        .coeffs
        .iter()
        .filter(|a| present.contains(a))
        .map(|a| expanded.diff(a))
        .collect()
}

/// Rotate a coefficient vector so its largest component is positive real;
/// solution vectors come out of an SVD with arbitrary phase.
fn canonical_phase(v: &[Complex64]) -> Vec<Complex64> {
    let lead = v
        .iter()
        .cloned()
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
        .unwrap_or_default();
    if lead.norm() <= tol::IMAG_DUST {
        return v.to_vec();
    }
    let phase = lead / lead.norm();
    v.iter().map(|c| c / phase).collect()
}

/// Whether the numerically found solution space equals the recorded one.
///
/// Both spaces are compared as function spaces: the recorded directions are
/// projected onto the ansatz by least squares over sampled configuration
/// points (they must lie in the ansatz span within
/// [`tol::PROJECTION_RESIDUAL`]), then the principal angles between the two
/// coefficient subspaces must all have cosine at least
/// `1 - `[`tol::TABLE_COSINE`].
#[allow(clippy::too_many_arguments)]
fn span_matches(
    chart: &Chart,
    ansatz: &GAnsatz,
    vectors: &[Vec<Complex64>],
    dirs: &[Expr],
    params: &Binding,
    avoid: &[Expr],
    domain: Domain,
    sampler: &mut Sampler,
) -> Result<bool, CatalogError> {
    let k = ansatz.basis.len();
    let d = dirs.len();
    if vectors.len() != d || d == 0 {
        return Ok(false);
    }
    let points = (3 * k).max(24);
    let mut basis_rows = Vec::with_capacity(points);
    let mut dir_rows = Vec::with_capacity(points);
    for _ in 0..points {
        let bind = sampler.config_binding(chart, avoid, params, domain);
        basis_rows.push(
            ansatz
                .basis
                .iter()
                .map(|e| bind.eval(e))
                .collect::<Result<Vec<_>, _>>()?,
        );
        dir_rows.push(
            dirs.iter()
                .map(|e| bind.eval(e))
                .collect::<Result<Vec<_>, _>>()?,
        );
    }
    let basis_mat = DMatrix::from_fn(points, k, |i, j| basis_rows[i][j]);
    let dir_mat = DMatrix::from_fn(points, d, |i, j| dir_rows[i][j]);

    // least-squares coefficients of each direction in the ansatz basis
    let svd = basis_mat.clone().svd(true, true);
    let coeff = match svd.solve(&dir_mat, 1e-13) {
        Ok(c) => c,
        Err(_) => return Ok(false),
    };
    let residual = &basis_mat * &coeff - &dir_mat;
    for j in 0..d {
        let target = dir_mat.column(j).norm().max(1e-9);
        if residual.column(j).norm() > tol::PROJECTION_RESIDUAL * target {
            return Ok(false);
        }
    }

    let found = DMatrix::from_fn(k, vectors.len(), |i, j| vectors[j][i]);
    let (q_found, r1) = orthonormal_columns(&found);
    let (q_expected, r2) = orthonormal_columns(&coeff);
    if r1 != d || r2 != d {
        return Ok(false);
    }
    let overlap = q_found.adjoint() * q_expected;
    let gram = overlap.svd(false, false);
    let smallest = gram
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    Ok(smallest >= 1.0 - tol::TABLE_COSINE)
}

/// Orthonormal basis of the column space and its rank.
fn orthonormal_columns(m: &DMatrix<Complex64>) -> (DMatrix<Complex64>, usize) {
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("svd built with u");
    let largest = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let rank = svd
        .singular_values
        .iter()
        .filter(|s| **s > largest * 1e-10)
        .count();
    (u.columns(0, rank).into(), rank)
}

/// Human-readable rendering of a solution vector over the ansatz basis.
fn format_representative(ansatz: &GAnsatz, coeffs: &[Complex64]) -> String {
    let mut parts = Vec::new();
    for (c, b) in coeffs.iter().zip(&ansatz.basis) {
        if c.norm() <= 1e-9 {
            continue;
        }
        let coeff = if c.im.abs() <= 1e-9 {
            format!("{:.4}", c.re)
        } else if c.re.abs() <= 1e-9 {
            format!("{:.4}i", c.im)
        } else {
            format!("({:.4}{:+.4}i)", c.re, c.im)
        };
        if matches!(b, Expr::Num(_)) {
            parts.push(coeff);
        } else {
            parts.push(format!("{coeff}*{b}"));
        }
    }
    if parts.is_empty() {
        "0".to_string()
    } else {
        parts.join(" + ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_catalog_loads_and_self_checks() {
        let catalog = Catalog::load_default().unwrap();
        assert_eq!(catalog.systems.len(), 34);
        let e1 = catalog.get("E1").unwrap();
        assert_eq!(e1.constraints.len(), 3);
        assert_eq!(e1.params.len(), 3);
        let s9 = catalog.get("S9").unwrap();
        assert_eq!(s9.integrals.len(), 3);
        assert!(catalog.get("calogero3").unwrap().integrals.len() >= 5);
    }

    #[test]
    fn canonical_printing_is_a_fixed_point() {
        let catalog = Catalog::load_default().unwrap();
        let once = catalog.to_text();
        let reloaded = Catalog::parse(&once).unwrap();
        assert_eq!(once, reloaded.to_text());
        assert_eq!(catalog.systems.len(), reloaded.systems.len());
    }

    #[test]
    fn bad_documents_are_rejected_with_the_entry_named() {
        let no_chart = r#"
            [[system]]
            id = "bad"
            chart = "nowhere"
            real_domain = true
            potential = "x"
        "#;
        let err = Catalog::parse(no_chart).unwrap_err().to_string();
        assert!(err.contains("bad") && err.contains("nowhere"), "{err}");

        let bad_expr = r#"
            [[system]]
            id = "oops"
            chart = "euclid2"
            real_domain = true
            potential = "x +* y"
        "#;
        let err = Catalog::parse(bad_expr).unwrap_err().to_string();
        assert!(err.contains("oops") && err.contains("potential"), "{err}");

        let bad_relation = r#"
            [[system]]
            id = "wrong"
            chart = "euclid2"
            real_domain = true
            params = ["alpha"]
            potential = "alpha*(x^2 + y^2)"

            [[system.constraints]]
            name = "row"
            relation = "alpha - 2*m*L0"
            assign = ["alpha = m*L0"]
            expected_g = "a1*x"
        "#;
        let err = Catalog::parse(bad_relation).unwrap_err().to_string();
        assert!(err.contains("does not vanish"), "{err}");

        let stray_symbol = r#"
            [[system]]
            id = "stray"
            chart = "euclid2"
            real_domain = true
            potential = "x + beta"
        "#;
        let err = Catalog::parse(stray_symbol).unwrap_err().to_string();
        assert!(err.contains("beta"), "{err}");
    }

    #[test]
    fn instantiation_binds_checks_and_rejects() {
        let catalog = Catalog::load_default().unwrap();
        let mut values = BTreeMap::new();
        values.insert("alpha1".to_string(), 1.0);
        values.insert("alpha2".to_string(), 0.5);
        values.insert("alpha3".to_string(), 2.0);
        let inst = catalog.instantiate("E1", &values, 2, 1.0).unwrap();
        assert!(inst.trajectory_ok);
        assert_eq!(inst.params.eval(&Expr::var("m")).unwrap().re, 2.0);

        values.remove("alpha2");
        let err = catalog.instantiate("E1", &values, 2, 1.0).unwrap_err();
        assert!(matches!(err, CatalogError::UnboundParam { ref param, .. } if param == "alpha2"));

        assert!(matches!(
            catalog.instantiate("E99", &values, 2, 1.0),
            Err(CatalogError::UnknownSystem(_))
        ));

        // a zero branch parameter lies on E7's singular set
        let mut e7 = BTreeMap::new();
        e7.insert("alpha1".to_string(), 1.0);
        e7.insert("alpha2".to_string(), 1.0);
        e7.insert("alpha3".to_string(), 1.0);
        e7.insert("k".to_string(), 0.0);
        assert!(matches!(
            catalog.instantiate("E7", &e7, 2, 1.0),
            Err(CatalogError::SingularValues { .. })
        ));
    }

    #[test]
    fn quadratic_integral_checks_pass() {
        let catalog = Catalog::load_default().unwrap();
        for id in ["E3", "S9"] {
            let entry = catalog.get(id).unwrap();
            for check in catalog.check_entry_integrals(entry, 60, 11).unwrap() {
                assert!(
                    check.pass,
                    "{}/{} residual {:.3e}",
                    check.entry, check.integral, check.residual
                );
            }
        }
    }

    #[test]
    fn oscillator_scan_finds_the_well_and_rejects_generic_parameters() {
        let catalog = Catalog::load_default().unwrap();
        let entry = catalog.get("oscillator1").unwrap();
        let rows = catalog.scan_entry(entry, 2, 30, 5).unwrap();
        assert_eq!(rows.len(), 2);
        let generic = &rows[0];
        assert_eq!(generic.constraint, "generic");
        assert_eq!(generic.dim, 0);
        assert!(generic.matched);
        assert_eq!(generic.verdict, "not-extensible");
        let row = &rows[1];
        assert_eq!(row.dim, 1);
        assert_eq!(row.expected_dim, 1);
        assert!(row.matched, "representative {:?}", row.representative_g);
        assert_eq!(row.verdict, "extensible");
        assert!(row.bracket_residual.unwrap() < tol::BRACKET_RESIDUAL);
    }
}
