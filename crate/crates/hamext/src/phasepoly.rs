//! Coordinate charts and polynomials in the momenta.
//!
//! A [`Chart`] fixes coordinate names, their conjugate momenta (`p_` plus
//! the coordinate name), the inverse metric `g^{ij}` as symbolic entries,
//! expressions that cut out the singular set, and per-coordinate sampling
//! boxes. A [`MomentumPolynomial`] is a finite sum `sum_a f_a(q) p^a` with
//! symbolic coefficients; all phase-space observables handled by this crate
//! (Hamiltonians, first integrals, intermediate results of the ladder
//! operator) live in this class.
//!
//! The Poisson bracket uses the convention
//!
//! ```text
//! {F, G} = sum_i dF/dp_i * dG/dq^i  -  dF/dq^i * dG/dp_i
//! ```
//!
//! so that `{L, G} = X_L(G)` is the action of the geodesic/natural flow on a
//! configuration function: for `L = 1/2 (p_1^2 + p_2^2 + p_3^2)` and
//! `G = x_1 + x_2 + x_3` it gives `p_1 + p_2 + p_3`.

use crate::expr::{equiv, normalize, parse_expression, Binding, Expr, ExprError, Symbol};
use num_complex::Complex64;
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

/// Errors from chart or momentum-polynomial operations.
#[derive(Debug, Error)]
pub enum PhaseError {
    #[error("momentum variables do not match: {0}")]
    VarMismatch(String),
    #[error("not polynomial in the momenta: {0}")]
    NonPolynomial(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid payload: {0}")]
    Payload(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Which family a chart belongs to; drives the choice of the complete
/// solution basis for the extension equations and the scan drivers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChartFamily {
    /// Flat chart with identity inverse metric.
    Euclidean,
    /// Unit two-sphere, coordinates `(theta, phi)`.
    Sphere,
    /// Curvature-tagged polar chart with `g^{22} = zeta / Sk(chi, x1)^2`.
    Ttw,
    /// A chart produced by the extension construction (`u` prepended).
    Extended,
}

/// A coordinate chart with symbolic inverse metric.
#[derive(Clone, Debug)]
pub struct Chart {
    pub name: String,
    pub family: ChartFamily,
    pub coords: Vec<Symbol>,
    pub momenta: Vec<Symbol>,
    /// Chart-level parameter symbols (e.g. `chi`, `zeta`).
    pub params: Vec<Symbol>,
    /// Inverse metric entries `g^{ij}`, row-major, symmetric.
    metric_inv: Vec<Expr>,
    /// Expressions that must stay away from zero when sampling points.
    pub singular: Vec<Expr>,
    /// Per-coordinate sampling intervals.
    pub boxes: Vec<(f64, f64)>,
    /// Claimed constant sectional curvature, if any (checked numerically
    /// by the geometry layer, not assumed).
    pub curvature: Option<Expr>,
}

fn momentum_of(c: &Symbol) -> Symbol {
    Symbol::new(&format!("p_{}", c.name()))
}

impl Chart {
    /// Flat chart; coordinates are `x, y` in two dimensions and `x1..xn`
    /// otherwise.
    pub fn euclidean(n: usize) -> Chart {
        let coords: Vec<Symbol> = if n == 2 {
            vec![Symbol::new("x"), Symbol::new("y")]
        } else {
            (1..=n).map(|i| Symbol::new(&format!("x{i}"))).collect()
        };
        let momenta = coords.iter().map(momentum_of).collect();
        let mut metric_inv = vec![Expr::zero(); n * n];
        for i in 0..n {
            metric_inv[i * n + i] = Expr::one();
        }
        Chart {
            name: format!("E{n}"),
            family: ChartFamily::Euclidean,
            coords,
            momenta,
            params: Vec::new(),
            metric_inv,
            singular: Vec::new(),
            boxes: vec![(-1.4, 1.4); n],
            curvature: Some(Expr::zero()),
        }
    }

    /// Unit sphere chart `(theta, phi)` with `g^{phi phi} = 1/sin^2 theta`.
    pub fn sphere() -> Chart {
        let theta = Symbol::new("theta");
        let phi = Symbol::new("phi");
        let momenta = vec![momentum_of(&theta), momentum_of(&phi)];
        let sin_theta = Expr::sin(Expr::sym(&theta));
        let metric_inv = vec![
            Expr::one(),
            Expr::zero(),
            Expr::zero(),
            Expr::powi(sin_theta.clone(), -2),
        ];
        Chart {
            name: "S2".into(),
            family: ChartFamily::Sphere,
            coords: vec![theta, phi],
            momenta,
            params: Vec::new(),
            metric_inv,
            singular: vec![sin_theta],
            boxes: vec![(0.4, 2.7), (-2.9, 2.9)],
            curvature: Some(Expr::one()),
        }
    }

    /// The curvature-tagged polar chart underlying the
    /// Tremblay–Turbiner–Winternitz family: coordinates `(x1, x2)`,
    /// parameters `chi` (curvature) and `zeta`, inverse metric
    /// `diag(1, 1 / (zeta * Sk(chi, x1)^2))`. This is the variant on which
    /// the tagged functions `Sk(zeta, x2)`, `Ck(zeta, x2)` span the angular
    /// part of the concircular solutions.
    pub fn ttw() -> Chart {
        let x1 = Symbol::new("x1");
        let x2 = Symbol::new("x2");
        let chi = Symbol::new("chi");
        let zeta = Symbol::new("zeta");
        let momenta = vec![momentum_of(&x1), momentum_of(&x2)];
        let sk = Expr::sk(Expr::sym(&chi), Expr::sym(&x1));
        let metric_inv = vec![
            Expr::one(),
            Expr::zero(),
            Expr::zero(),
            Expr::mul(vec![
                Expr::powi(Expr::sym(&zeta), -1),
                Expr::powi(sk.clone(), -2),
            ]),
        ];
        Chart {
            name: "TTW".into(),
            family: ChartFamily::Ttw,
            coords: vec![x1, x2],
            momenta,
            params: vec![chi.clone(), zeta],
            metric_inv,
            singular: vec![sk],
            boxes: vec![(0.35, 1.25), (0.35, 1.25)],
            curvature: Some(Expr::sym(&chi)),
        }
    }

    /// Warped product `du^2 + scale(u)^{-1} g`: prepends coordinate `u`
    /// with `g~^{uu} = 1` and multiplies the base inverse metric by
    /// `scale`. Used by the extension construction.
    pub fn warped(base: &Chart, u_name: &str, scale: &Expr, u_box: (f64, f64)) -> Chart {
        let u = Symbol::new(u_name);
        let n = base.dim() + 1;
        let mut coords = vec![u.clone()];
        coords.extend(base.coords.iter().cloned());
        let momenta = coords.iter().map(momentum_of).collect();
        let mut metric_inv = vec![Expr::zero(); n * n];
        metric_inv[0] = Expr::one();
        for i in 0..base.dim() {
            for j in 0..base.dim() {
                let entry = base.metric_inv(i, j).clone();
                if entry.is_zero_literal() {
                    continue;
                }
                metric_inv[(i + 1) * n + (j + 1)] = Expr::mul(vec![scale.clone(), entry]);
            }
        }
        let mut boxes = vec![u_box];
        boxes.extend(base.boxes.iter().copied());
        Chart {
            name: format!("{}+{}", base.name, u_name),
            family: ChartFamily::Extended,
            coords,
            momenta,
            params: base.params.clone(),
            metric_inv,
            singular: base.singular.clone(),
            boxes,
            curvature: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn metric_inv(&self, i: usize, j: usize) -> &Expr {
        &self.metric_inv[i * self.dim() + j]
    }

    /// Geodesic kinetic term `1/2 g^{ij} p_i p_j`.
    pub fn kinetic(&self) -> MomentumPolynomial {
        let n = self.dim();
        let mut poly = MomentumPolynomial::zero(self.momenta.clone());
        for i in 0..n {
            for j in 0..n {
                let g = self.metric_inv(i, j);
                if g.is_zero_literal() {
                    continue;
                }
                let mut powers = vec![0u16; n];
                powers[i] += 1;
                powers[j] += 1;
                poly.add_term(powers, Expr::mul(vec![Expr::ratio(1, 2), g.clone()]));
            }
        }
        poly
    }

    /// Natural Hamiltonian `kinetic + V`.
    pub fn natural_hamiltonian(&self, v: &Expr) -> MomentumPolynomial {
        let mut h = self.kinetic();
        if !v.is_zero_literal() {
            h.add_term(vec![0; self.dim()], v.clone());
        }
        h
    }

    /// Bind coordinates and momenta of a phase point on top of `params`.
    pub fn bind_point(&self, pt: &PhasePoint, params: &Binding) -> Result<Binding, PhaseError> {
        if pt.q.len() != self.dim() || pt.p.len() != self.dim() {
            return Err(PhaseError::Dimension {
                expected: self.dim(),
                got: pt.q.len().max(pt.p.len()),
            });
        }
        let mut b = params.clone();
        for (c, v) in self.coords.iter().zip(&pt.q) {
            b.set_sym(c, Complex64::new(*v, 0.0));
        }
        for (m, v) in self.momenta.iter().zip(&pt.p) {
            b.set_sym(m, Complex64::new(*v, 0.0));
        }
        Ok(b)
    }

    /// All phase variables in integration order: coordinates then momenta.
    pub fn phase_vars(&self) -> Vec<Symbol> {
        let mut v = self.coords.clone();
        v.extend(self.momenta.iter().cloned());
        v
    }
}

/// A point of phase space in chart order.
#[derive(Clone, Debug, PartialEq)]
pub struct PhasePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhasePoint {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Self {
        PhasePoint { q, p }
    }

    /// Flat layout `[q.., p..]`.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.q.clone();
        v.extend_from_slice(&self.p);
        v
    }
}

/// Polynomial in the momenta with symbolic coefficients.
#[derive(Clone, Debug)]
pub struct MomentumPolynomial {
    vars: Vec<Symbol>,
    terms: BTreeMap<Vec<u16>, Expr>,
}

impl MomentumPolynomial {
    pub fn zero(vars: Vec<Symbol>) -> Self {
        MomentumPolynomial {
            vars,
            terms: BTreeMap::new(),
        }
    }

    /// Degree-zero polynomial (a configuration function).
    pub fn scalar(vars: Vec<Symbol>, coeff: Expr) -> Self {
        let mut p = MomentumPolynomial::zero(vars);
        if !coeff.is_zero_literal() {
            let n = p.vars.len();
            p.terms.insert(vec![0; n], coeff);
        }
        p
    }

    pub fn vars(&self) -> &[Symbol] {
        &self.vars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<u16>, &Expr)> {
        self.terms.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree in the momenta.
    pub fn degree(&self) -> usize {
        self.terms
            .keys()
            .map(|k| k.iter().map(|&e| e as usize).sum())
            .max()
            .unwrap_or(0)
    }

    pub fn add_term(&mut self, powers: Vec<u16>, coeff: Expr) {
        assert_eq!(powers.len(), self.vars.len(), "exponent layout mismatch");
        if coeff.is_zero_literal() {
            return;
        }
        match self.terms.remove(&powers) {
            None => {
                self.terms.insert(powers, coeff);
            }
            Some(prev) => {
                let sum = Expr::add(vec![prev, coeff]);
                self.terms.insert(powers, sum);
            }
        }
    }

    fn check_vars(&self, other: &Self) -> Result<(), PhaseError> {
        if self.vars != other.vars {
            return Err(PhaseError::VarMismatch(format!(
                "{:?} vs {:?}",
                self.vars, other.vars
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self, PhaseError> {
        self.check_vars(other)?;
        let mut out = self.clone();
        for (k, c) in &other.terms {
            out.add_term(k.clone(), c.clone());
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, PhaseError> {
        self.add(&other.scale(&Expr::int(-1)))
    }

    pub fn scale(&self, factor: &Expr) -> Self {
        if factor.is_zero_literal() {
            return MomentumPolynomial::zero(self.vars.clone());
        }
        let mut out = MomentumPolynomial::zero(self.vars.clone());
        for (k, c) in &self.terms {
            out.terms.insert(
                k.clone(),
                Expr::mul(vec![factor.clone(), c.clone()]),
            );
        }
        out
    }

    /// Multiply by the `idx`-th momentum.
    pub fn mul_momentum(&self, idx: usize) -> Self {
        let mut out = MomentumPolynomial::zero(self.vars.clone());
        for (k, c) in &self.terms {
            let mut k2 = k.clone();
            k2[idx] += 1;
            out.terms.insert(k2, c.clone());
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Result<Self, PhaseError> {
        self.check_vars(other)?;
        let mut out = MomentumPolynomial::zero(self.vars.clone());
        for (ka, ca) in &self.terms {
            for (kb, cb) in &other.terms {
                let k: Vec<u16> = ka.iter().zip(kb).map(|(a, b)| a + b).collect();
                out.add_term(k, Expr::mul(vec![ca.clone(), cb.clone()]));
            }
        }
        Ok(out)
    }

    /// Canonicalize every coefficient; terms that normalize to zero drop.
    pub fn normalized(&self) -> Result<Self, ExprError> {
        let mut out = MomentumPolynomial::zero(self.vars.clone());
        for (k, c) in &self.terms {
            let n = normalize(c)?;
            if !n.is_zero_literal() {
                out.terms.insert(k.clone(), n);
            }
        }
        Ok(out)
    }

    /// Coefficient-wise symbolic equality.
    pub fn equivalent(&self, other: &Self) -> bool {
        if self.vars != other.vars {
            return false;
        }
        let keys: std::collections::BTreeSet<&Vec<u16>> =
            self.terms.keys().chain(other.terms.keys()).collect();
        let zero = Expr::zero();
        keys.into_iter().all(|k| {
            let a = self.terms.get(k).unwrap_or(&zero);
            let b = other.terms.get(k).unwrap_or(&zero);
            equiv(a, b)
        })
    }

    /// Rebuild as a plain expression with momenta as symbols.
    pub fn to_expr(&self) -> Expr {
        let terms: Vec<Expr> = self
            .terms
            .iter()
            .map(|(k, c)| {
                let mut factors = vec![c.clone()];
                for (i, &e) in k.iter().enumerate() {
                    if e > 0 {
                        factors.push(Expr::powi(Expr::sym(&self.vars[i]), e as i64));
                    }
                }
                Expr::mul(factors)
            })
            .collect();
        Expr::add(terms)
    }

    /// Collect a symbolic expression into momentum-polynomial form. Fails
    /// when a momentum appears inside a function, a non-integer power, or a
    /// denominator.
    pub fn from_expr(e: &Expr, vars: &[Symbol]) -> Result<Self, PhaseError> {
        let has_momentum = |x: &Expr| x.symbols().iter().any(|s| vars.contains(s));
        let poly = match e {
            Expr::Add(ts) => {
                let mut acc = MomentumPolynomial::zero(vars.to_vec());
                for t in ts {
                    acc = acc.add(&MomentumPolynomial::from_expr(t, vars)?)?;
                }
                acc
            }
            Expr::Mul(fs) => {
                let mut acc =
                    MomentumPolynomial::scalar(vars.to_vec(), Expr::one());
                for f in fs {
                    acc = acc.mul(&MomentumPolynomial::from_expr(f, vars)?)?;
                }
                acc
            }
            Expr::Pow(b, r) => {
                if !has_momentum(b) {
                    MomentumPolynomial::scalar(vars.to_vec(), e.clone())
                } else if r.is_integer() && !num_traits::Signed::is_negative(r) {
                    use num_traits::ToPrimitive;
                    let n = r
                        .to_integer()
                        .to_u32()
                        .ok_or_else(|| PhaseError::NonPolynomial(e.to_string()))?;
                    let base = MomentumPolynomial::from_expr(b, vars)?;
                    let mut acc =
                        MomentumPolynomial::scalar(vars.to_vec(), Expr::one());
                    for _ in 0..n {
                        acc = acc.mul(&base)?;
                    }
                    acc
                } else {
                    return Err(PhaseError::NonPolynomial(e.to_string()));
                }
            }
            Expr::Sym(s) if vars.contains(s) => {
                let mut powers = vec![0u16; vars.len()];
                powers[vars.iter().position(|v| v == s).unwrap()] = 1;
                let mut p = MomentumPolynomial::zero(vars.to_vec());
                p.terms.insert(powers, Expr::one());
                p
            }
            Expr::Fun(_, args) => {
                if args.iter().any(has_momentum) {
                    return Err(PhaseError::NonPolynomial(e.to_string()));
                }
                MomentumPolynomial::scalar(vars.to_vec(), e.clone())
            }
            _ => MomentumPolynomial::scalar(vars.to_vec(), e.clone()),
        };
        Ok(poly)
    }

    /// Canonical Poisson bracket over the chart's coordinates.
    pub fn poisson(&self, other: &Self, chart: &Chart) -> Result<Self, PhaseError> {
        self.check_vars(other)?;
        if self.vars != chart.momenta {
            return Err(PhaseError::VarMismatch(
                "polynomial momenta do not match chart".into(),
            ));
        }
        let mut out = MomentumPolynomial::zero(self.vars.clone());
        for i in 0..chart.dim() {
            let q = &chart.coords[i];
            // dF/dp_i dG/dq_i
            let df_dp = self.diff_momentum(i);
            let dg_dq = other.diff_coord(q);
            out = out.add(&df_dp.mul(&dg_dq)?)?;
            // - dF/dq_i dG/dp_i
            let df_dq = self.diff_coord(q);
            let dg_dp = other.diff_momentum(i);
            out = out.sub(&df_dq.mul(&dg_dp)?)?;
        }
        Ok(out)
    }

    /// Partial derivative in the `idx`-th momentum.
    pub fn diff_momentum(&self, idx: usize) -> Self {
        let mut out = MomentumPolynomial::zero(self.vars.clone());
        for (k, c) in &self.terms {
            if k[idx] == 0 {
                continue;
            }
            let mut k2 = k.clone();
            k2[idx] -= 1;
            out.add_term(
                k2,
                Expr::mul(vec![Expr::int(k[idx] as i64), c.clone()]),
            );
        }
        out
    }

    /// Coefficient-wise derivative in a coordinate (or parameter).
    pub fn diff_coord(&self, coord: &Symbol) -> Self {
        let mut out = MomentumPolynomial::zero(self.vars.clone());
        for (k, c) in &self.terms {
            let d = c.diff(coord);
            if !d.is_zero_literal() {
                out.add_term(k.clone(), d);
            }
        }
        out
    }

    /// Evaluate at a phase point (parameters from `params`).
    pub fn eval(
        &self,
        chart: &Chart,
        pt: &PhasePoint,
        params: &Binding,
    ) -> Result<Complex64, PhaseError> {
        let bind = chart.bind_point(pt, params)?;
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, c) in &self.terms {
            let mut v = bind.eval(c)?;
            for (i, &e) in k.iter().enumerate() {
                if e > 0 {
                    let p = bind
                        .get(&self.vars[i])
                        .ok_or_else(|| PhaseError::Payload("unbound momentum".into()))?;
                    v *= p.powi(e as i32);
                }
            }
            acc += v;
        }
        Ok(acc)
    }

    /// Serialize as `{"vars": [...], "terms": [{"powers": [...],
    /// "coeff": "..."}]}` with terms sorted by exponent vector.
    pub fn to_json(&self) -> Value {
        let terms: Vec<Value> = self
            .terms
            .iter()
            .map(|(k, c)| {
                json!({
                    "powers": k,
                    "coeff": c.to_string(),
                })
            })
            .collect();
        json!({
            "vars": self.vars.iter().map(|v| v.name()).collect::<Vec<_>>(),
            "terms": terms,
        })
    }

    pub fn from_json(v: &Value) -> Result<Self, PhaseError> {
        let vars: Vec<Symbol> = v
            .get("vars")
            .and_then(Value::as_array)
            .ok_or_else(|| PhaseError::Payload("missing vars".into()))?
            .iter()
            .map(|x| {
                x.as_str()
                    .map(Symbol::new)
                    .ok_or_else(|| PhaseError::Payload("vars must be strings".into()))
            })
            .collect::<Result<_, _>>()?;
        let mut poly = MomentumPolynomial::zero(vars);
        let terms = v
            .get("terms")
            .and_then(Value::as_array)
            .ok_or_else(|| PhaseError::Payload("missing terms".into()))?;
        for t in terms {
            let powers: Vec<u16> = t
                .get("powers")
                .and_then(Value::as_array)
                .ok_or_else(|| PhaseError::Payload("term missing powers".into()))?
                .iter()
                .map(|x| {
                    x.as_u64()
                        .and_then(|u| u16::try_from(u).ok())
                        .ok_or_else(|| PhaseError::Payload("bad power".into()))
                })
                .collect::<Result<_, _>>()?;
            if powers.len() != poly.vars.len() {
                return Err(PhaseError::Payload("power vector length".into()));
            }
            let coeff = t
                .get("coeff")
                .and_then(Value::as_str)
                .ok_or_else(|| PhaseError::Payload("term missing coeff".into()))?;
            poly.add_term(powers, parse_expression(coeff)?);
        }
        Ok(poly)
    }
}

impl fmt::Display for MomentumPolynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_expr())
    }
}

/// Poisson bracket of two plain expressions over explicit conjugate pairs.
/// Same convention as [`MomentumPolynomial::poisson`].
pub fn poisson_expr(f: &Expr, g: &Expr, coords: &[Symbol], momenta: &[Symbol]) -> Expr {
    let mut terms = Vec::new();
    for (q, p) in coords.iter().zip(momenta) {
        let a = Expr::mul(vec![f.diff(p), g.diff(q)]);
        let b = Expr::mul(vec![f.diff(q), g.diff(p)]);
        terms.push(Expr::sub(a, b));
    }
    Expr::add(terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expression as pe;

    fn e3_free() -> (Chart, MomentumPolynomial) {
        let chart = Chart::euclidean(3);
        let l = chart.kinetic();
        (chart, l)
    }

    #[test]
    fn geodesic_flow_action_matches_convention() {
        let (chart, l) = e3_free();
        let g = MomentumPolynomial::scalar(
            chart.momenta.clone(),
            pe("x1 + x2 + x3").unwrap(),
        );
        let xg = l.poisson(&g, &chart).unwrap().normalized().unwrap();
        let expected = MomentumPolynomial::from_expr(
            &pe("p_x1 + p_x2 + p_x3").unwrap(),
            &chart.momenta,
        )
        .unwrap();
        assert!(xg.equivalent(&expected));
    }

    #[test]
    fn sphere_flow_turns_height_into_momentum() {
        let chart = Chart::sphere();
        let l = chart.kinetic();
        let g = MomentumPolynomial::scalar(chart.momenta.clone(), pe("cos(theta)").unwrap());
        let xg = l.poisson(&g, &chart).unwrap().normalized().unwrap();
        let expected = MomentumPolynomial::from_expr(
            &pe("-sin(theta)*p_theta").unwrap(),
            &chart.momenta,
        )
        .unwrap();
        assert!(xg.equivalent(&expected));
    }

    #[test]
    fn bracket_is_antisymmetric_and_canonical() {
        let (chart, _) = e3_free();
        let f = MomentumPolynomial::from_expr(
            &pe("x1*p_x2^2 + x3^2*p_x1").unwrap(),
            &chart.momenta,
        )
        .unwrap();
        let g = MomentumPolynomial::from_expr(
            &pe("x2^2*p_x3 + p_x1*p_x2").unwrap(),
            &chart.momenta,
        )
        .unwrap();
        let fg = f.poisson(&g, &chart).unwrap().normalized().unwrap();
        let gf = g.poisson(&f, &chart).unwrap().normalized().unwrap();
        assert!(fg.equivalent(&gf.scale(&Expr::int(-1)).normalized().unwrap()));

        // {q_i, p_j} convention: {x1, p_x1} = -1 with this sign choice,
        // since the first slot differentiates by momentum first.
        let q1 = MomentumPolynomial::scalar(chart.momenta.clone(), pe("x1").unwrap());
        let p1 = MomentumPolynomial::from_expr(&pe("p_x1").unwrap(), &chart.momenta).unwrap();
        let b = q1.poisson(&p1, &chart).unwrap().normalized().unwrap();
        let minus_one =
            MomentumPolynomial::scalar(chart.momenta.clone(), Expr::int(-1));
        assert!(b.equivalent(&minus_one));
    }

    #[test]
    fn expression_round_trip_and_json() {
        let chart = Chart::euclidean(2);
        let src = "1/2*p_x^2 + 1/2*p_y^2 + a1*(x^2 + y^2)";
        let poly =
            MomentumPolynomial::from_expr(&pe(src).unwrap(), &chart.momenta).unwrap();
        assert_eq!(poly.degree(), 2);
        let back = MomentumPolynomial::from_expr(&poly.to_expr(), &chart.momenta).unwrap();
        assert!(poly.equivalent(&back));

        let j = poly.to_json();
        let restored = MomentumPolynomial::from_json(&j).unwrap();
        assert!(poly.equivalent(&restored));

        // momenta under functions are rejected
        let bad = pe("sin(p_x)").unwrap();
        assert!(MomentumPolynomial::from_expr(&bad, &chart.momenta).is_err());
        let bad = pe("1/p_x").unwrap();
        assert!(MomentumPolynomial::from_expr(&bad, &chart.momenta).is_err());
    }

    #[test]
    fn warped_chart_prepends_u() {
        let base = Chart::sphere();
        let scale = pe("m*Ck(1, u)").unwrap();
        let ext = Chart::warped(&base, "u", &scale, (0.3, 1.2));
        assert_eq!(ext.dim(), 3);
        assert_eq!(ext.coords[0].name(), "u");
        assert_eq!(ext.metric_inv(0, 0), &Expr::one());
        let g22 = ext.metric_inv(2, 2).to_string();
        assert!(g22.contains("m*Ck(1,u)"), "unexpected entry {g22}");
    }
}
