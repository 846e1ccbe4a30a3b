//! Building (n+1)-dimensional Hamiltonians with a polynomial first
//! integral out of n-dimensional natural Hamiltonians.
//!
//! Given a natural Hamiltonian `L = 1/2 g^{ij} p_i p_j + V(q)` on a
//! constant-curvature chart and a configuration function `G` satisfying
//!
//! ```text
//! (i)  d_i d_j G - Gamma^k_{ij} d_k G + mc g_{ij} G = 0,
//! (ii) grad V . grad G - 2m (cV + L0) G = 0,
//! ```
//!
//! the extended Hamiltonian
//!
//! ```text
//! H = 1/2 p_u^2 + mA (L + V0) + m L0 A^2 (u+u0)^2          (c = 0)
//! H = 1/2 p_u^2 + m (cL + L0) / Sk(kappa, cu+u0)^2 + W0    (c != 0)
//! ```
//!
//! admits the first integral `F = U^m G` where `U = p_u + gamma(u) X_L`
//! and `X_L` is the canonical action of `L` on configuration functions.
//! The exponent `m` shows up twice: in the eigenvalue `mc` of condition
//! (i) and as the power of the ladder operator.
//!
//! `F` can be produced two ways — literal m-fold application of `U`, or
//! the closed form
//!
//! ```text
//! U^m G = P_m G + D_m X_L(G),
//! P_m = sum_k  binom(m, 2k)   gamma^{2k}   p_u^{m-2k}   (-2m(cL+L0))^k
//! D_m = sum_k  binom(m, 2k+1) gamma^{2k+1} p_u^{m-2k-1} (-2m(cL+L0))^k
//! ```
//!
//! — and the two routes are kept separate on purpose: their agreement is a
//! strong end-to-end check and is asserted in the test suite rather than
//! assumed.

use crate::expr::{equiv, normalize, Binding, Expr, ExprError, Symbol};
use crate::geometry::{self, GeometryError};
use crate::phasepoly::{Chart, MomentumPolynomial, PhaseError};
use crate::sample::{Domain, Sampler};
use crate::tol;
use nalgebra::DMatrix;
use num_complex::Complex64;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExtensionError {
    #[error("no built-in complete solution for chart {0}")]
    UnsupportedChart(String),
    #[error("eigenvalue parameter c = {c} is not admissible on {chart} for m = {m}")]
    InadmissibleC { c: String, chart: String, m: u32 },
    #[error("the coefficient ansatz admits no compatible vector")]
    EmptyNullspace,
    #[error("flat-branch extension requires a nonzero scale A")]
    ZeroScale,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Complete solution space of the covariant-Hessian condition on a chart:
/// `G = sum_i a_i basis_i` with free coefficients `a_i`.
#[derive(Clone, Debug)]
pub struct GAnsatz {
    pub chart: Chart,
    pub basis: Vec<Expr>,
    pub coeffs: Vec<Symbol>,
}

impl GAnsatz {
    /// The generic combination `sum_i a_i basis_i`.
    pub fn generic(&self) -> Expr {
        Expr::add(
            self.coeffs
                .iter()
                .zip(&self.basis)
                .map(|(a, b)| Expr::mul(vec![Expr::sym(a), b.clone()]))
                .collect(),
        )
    }

    /// Instantiate with a numeric coefficient vector, dropping dust below
    /// [`tol::IMAG_DUST`].
    pub fn instantiate(&self, coeffs: &[Complex64]) -> Expr {
        let terms = self
            .basis
            .iter()
            .zip(coeffs)
            .filter(|(_, c)| c.norm() > tol::IMAG_DUST)
            .map(|(b, c)| {
                let lit = complex_literal(*c);
                Expr::mul(vec![lit, b.clone()])
            })
            .collect();
        Expr::add(terms)
    }
}

/// Render a complex double as an exact rational expression literal.
fn complex_literal(c: Complex64) -> Expr {
    let re = Expr::num_f64(c.re);
    if c.im.abs() <= tol::IMAG_DUST {
        return re;
    }
    let im = Expr::mul(vec![Expr::num_f64(c.im), Expr::imag()]);
    if c.re.abs() <= tol::IMAG_DUST {
        im
    } else {
        Expr::add(vec![re, im])
    }
}

/// Parameters of one extension step. `c = 0` selects the flat branch
/// (fields `a`, `v0` active, `kappa`/`w0` ignored); `c != 0` selects the
/// curved branch (fields `kappa`, `w0` active, `a`/`v0` ignored).
#[derive(Clone, Debug)]
pub struct ExtensionSpec {
    pub m: u32,
    pub c: Expr,
    pub kappa: Expr,
    pub u0: Expr,
    pub l0: Expr,
    pub v0: Expr,
    pub w0: Expr,
    /// Flat-branch scale `A`.
    pub a: Expr,
}

impl ExtensionSpec {
    /// Flat branch with the customary defaults `A = 1/m`, `u0 = V0 = 0`.
    pub fn flat(m: u32, l0: Expr) -> Self {
        ExtensionSpec {
            m,
            c: Expr::zero(),
            kappa: Expr::zero(),
            u0: Expr::zero(),
            l0,
            v0: Expr::zero(),
            w0: Expr::zero(),
            a: Expr::ratio(1, m as i64),
        }
    }

    /// Curved branch with `u0 = L0 = W0 = 0`.
    pub fn curved(m: u32, c: Expr, kappa: Expr) -> Self {
        ExtensionSpec {
            m,
            c,
            kappa,
            u0: Expr::zero(),
            l0: Expr::zero(),
            v0: Expr::zero(),
            w0: Expr::zero(),
            a: Expr::zero(),
        }
    }

    pub fn is_flat(&self) -> bool {
        self.c.is_zero_literal()
    }

    /// A flat-branch step with `L0 = 0` only rescales the base system; the
    /// generated integral factorizes through known ones.
    pub fn is_trivial(&self) -> bool {
        self.is_flat() && self.l0.is_zero_literal()
    }

    /// `u + u0`, the shifted extension coordinate.
    fn u_shifted(&self) -> Expr {
        Expr::add(vec![Expr::var("u"), self.u0.clone()])
    }

    /// `Sk(kappa, c u + u0)`, the curved-branch profile denominator.
    fn profile(&self) -> Expr {
        Expr::sk(
            self.kappa.clone(),
            Expr::add(vec![
                Expr::mul(vec![self.c.clone(), Expr::var("u")]),
                self.u0.clone(),
            ]),
        )
    }
}

/// The ladder coefficient `gamma(u)`: `-A(u+u0)` on the flat branch and
/// `Ck/Sk(kappa, cu+u0)` on the curved branch. On the curved branch it
/// solves `gamma' + c(gamma^2 + kappa) = 0` identically.
pub fn gamma_expr(spec: &ExtensionSpec) -> Expr {
    if spec.is_flat() {
        Expr::neg(Expr::mul(vec![spec.a.clone(), spec.u_shifted()]))
    } else {
        let arg = Expr::add(vec![
            Expr::mul(vec![spec.c.clone(), Expr::var("u")]),
            spec.u0.clone(),
        ]);
        Expr::div(
            Expr::ck(spec.kappa.clone(), arg.clone()),
            Expr::sk(spec.kappa.clone(), arg),
        )
    }
}

/// Tabulated complete solutions of the covariant-Hessian condition for the
/// built-in constant-curvature families.
pub fn g_basis(chart: &Chart) -> Result<GAnsatz, ExtensionError> {
    use crate::phasepoly::ChartFamily::*;
    let basis: Vec<Expr> = match chart.family {
        Euclidean => {
            let mut b = vec![Expr::one()];
            b.extend(chart.coords.iter().map(Expr::sym));
            b
        }
        Sphere => vec![
            Expr::parse_static("cos(theta)"),
            Expr::parse_static("sin(phi)*sin(theta)"),
            Expr::parse_static("cos(phi)*sin(theta)"),
        ],
        Ttw => vec![
            Expr::parse_static("Ck(chi,x1)"),
            Expr::parse_static("Sk(zeta,x2)*Sk(chi,x1)"),
            Expr::parse_static("Ck(zeta,x2)*Sk(chi,x1)"),
        ],
        Extended => return Err(ExtensionError::UnsupportedChart(chart.name.clone())),
    };
    let coeffs = (0..basis.len())
        .map(|i| Symbol::new(&format!("a{i}")))
        .collect();
    Ok(GAnsatz {
        chart: chart.clone(),
        basis,
        coeffs,
    })
}

/// Numerical nullspace of the compatibility condition, with the fresh-point
/// validation residual that certifies it.
#[derive(Clone, Debug)]
pub struct Nullspace {
    /// Orthonormal coefficient vectors, one per basis element of the
    /// solution space.
    pub vectors: Vec<Vec<Complex64>>,
    /// Max relative residual of the returned vectors at validation points
    /// that did not enter the matrix.
    pub fresh_residual: f64,
}

/// Solve `grad V . grad G = 2m (cV + L0) G` for the ansatz coefficients by
/// sampling: the residual is linear and homogeneous in the `a_i`, so its
/// values at random points stack into a matrix whose numerical nullspace
/// (relative singular-value cut [`tol::NULLSPACE_SV_REL`]) is the solution
/// space. Vectors are re-validated on fresh points and dropped unless the
/// residual stays below [`tol::NULLSPACE_FRESH_RESIDUAL`].
#[allow(clippy::too_many_arguments)]
pub fn compatibility_nullspace(
    v: &Expr,
    ansatz: &GAnsatz,
    m: u32,
    c: &Expr,
    l0: &Expr,
    params: &Binding,
    avoid: &[Expr],
    domain: Domain,
    samples: usize,
    seed: u64,
) -> Result<Nullspace, ExtensionError> {
    let chart = &ansatz.chart;
    let k = ansatz.basis.len();
    let rows = samples.max(3 * k);

    // residual generators r_i(q) for G = basis_i
    let residuals: Vec<Expr> = ansatz
        .basis
        .iter()
        .map(|phi| {
            let pairing = geometry::grad_dot(chart, v, phi);
            let sink = Expr::mul(vec![
                Expr::int(2 * m as i64),
                Expr::add(vec![Expr::mul(vec![c.clone(), v.clone()]), l0.clone()]),
                phi.clone(),
            ]);
            Expr::sub(pairing, sink)
        })
        .collect();

    let mut sampler = Sampler::new(seed);
    let eval_rows = |sampler: &mut Sampler, n: usize| -> Result<Vec<Vec<Complex64>>, ExtensionError> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let bind = sampler.config_binding(chart, avoid, params, domain);
            let row: Vec<Complex64> = residuals
                .iter()
                .map(|r| bind.eval(r))
                .collect::<Result<_, _>>()?;
            if row.iter().any(|z| !z.is_finite()) {
                continue;
            }
            out.push(row);
        }
        Ok(out)
    };

    let rows_data = eval_rows(&mut sampler, rows)?;
    let vectors = svd_nullspace(&rows_data, k);
    // a wide/degenerate matrix cannot happen (rows >= 3k), but keep the
    // contract honest if every row was rejected
    if vectors.is_empty() {
        return Ok(Nullspace {
            vectors,
            fresh_residual: 0.0,
        });
    }

    let fresh = eval_rows(&mut sampler, 200)?;
    let (kept, worst) = validate_vectors(vectors, &fresh);
    Ok(Nullspace {
        vectors: kept,
        fresh_residual: worst,
    })
}

/// Right-nullspace of a sampled residual matrix: rows are balanced to unit
/// max magnitude, and directions below [`tol::NULLSPACE_SV_REL`] relative to
/// the top singular value are returned as orthonormal vectors.
fn svd_nullspace(rows_data: &[Vec<Complex64>], k: usize) -> Vec<Vec<Complex64>> {
    let mut mat = DMatrix::<Complex64>::zeros(rows_data.len(), k);
    for (i, row) in rows_data.iter().enumerate() {
        // balance rows so large-magnitude sample points do not drown small ones
        let scale = row.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
        let s = if scale > 1.0 { scale } else { 1.0 };
        for (j, z) in row.iter().enumerate() {
            mat[(i, j)] = z / s;
        }
    }
    let svd = mat.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let cut = tol::NULLSPACE_SV_REL * smax.max(1.0);
    let mut vectors: Vec<Vec<Complex64>> = Vec::new();
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s < cut {
            vectors.push((0..k).map(|j| v_t[(i, j)].conj()).collect());
        }
    }
    vectors
}

/// Keep only vectors whose residual stays below
/// [`tol::NULLSPACE_FRESH_RESIDUAL`] on rows that did not enter the solve;
/// returns the survivors and the worst residual among them.
fn validate_vectors(
    vectors: Vec<Vec<Complex64>>,
    fresh: &[Vec<Complex64>],
) -> (Vec<Vec<Complex64>>, f64) {
    let mut kept = Vec::new();
    let mut worst: f64 = 0.0;
    for a in vectors {
        let mut max_rel: f64 = 0.0;
        for row in fresh {
            let mut acc = Complex64::new(0.0, 0.0);
            let mut scale = 1.0f64;
            for (ai, ri) in a.iter().zip(row) {
                acc += ai * ri;
                scale += (ai * ri).norm();
            }
            max_rel = max_rel.max(acc.norm() / scale);
        }
        if max_rel <= tol::NULLSPACE_FRESH_RESIDUAL {
            worst = worst.max(max_rel);
            kept.push(a);
        }
    }
    (kept, worst)
}

/// A generically independent probe family for sizing the solution space of
/// the covariant-Hessian condition by sampling — deliberately richer than
/// the tabulated complete bases, so that the computed dimension is a
/// finding rather than an assumption. Flat charts probe with coordinate
/// monomials up to total degree three; the sphere probes with restrictions
/// of ambient polynomials up to degree two (a function-space basis, so no
/// probe is a combination of the others).
pub fn probe_basis(chart: &Chart) -> Result<Vec<Expr>, ExtensionError> {
    use crate::phasepoly::ChartFamily::*;
    let basis = match chart.family {
        Euclidean => {
            let n = chart.dim();
            let mut out = Vec::new();
            let mut expo = vec![0u32; n];
            loop {
                if expo.iter().sum::<u32>() <= 3 {
                    let factors: Vec<Expr> = chart
                        .coords
                        .iter()
                        .zip(&expo)
                        .filter(|(_, &e)| e > 0)
                        .map(|(c, &e)| Expr::powi(Expr::sym(c), e as i64))
                        .collect();
                    out.push(Expr::mul(factors));
                }
                // odometer over {0..3}^n
                let mut i = 0;
                loop {
                    if i == n {
                        return Ok(out);
                    }
                    expo[i] += 1;
                    if expo[i] <= 3 {
                        break;
                    }
                    expo[i] = 0;
                    i += 1;
                }
            }
        }
        Sphere => vec![
            Expr::parse_static("1"),
            Expr::parse_static("cos(theta)"),
            Expr::parse_static("sin(theta)*sin(phi)"),
            Expr::parse_static("sin(theta)*cos(phi)"),
            Expr::parse_static("cos(theta)^2"),
            Expr::parse_static("sin(theta)*cos(theta)*sin(phi)"),
            Expr::parse_static("sin(theta)*cos(theta)*cos(phi)"),
            Expr::parse_static("sin(theta)^2*sin(phi)*cos(phi)"),
            Expr::parse_static("sin(theta)^2*(cos(phi)^2 - sin(phi)^2)"),
        ],
        Ttw | Extended => return Err(ExtensionError::UnsupportedChart(chart.name.clone())),
    };
    Ok(basis)
}

/// Solution space of the covariant-Hessian condition
/// `nabla_i nabla_j G + mc g_ij G = 0` over an explicit function basis, by
/// stacking all tensor components at sampled configuration points. The
/// returned dimension counts nonconstant directions only when the caller
/// excludes the constant probe; vectors are fresh-point validated exactly
/// like [`compatibility_nullspace`].
pub fn hessian_solution_space(
    chart: &Chart,
    mc: &Expr,
    basis: &[Expr],
    params: &Binding,
    samples: usize,
    seed: u64,
) -> Result<Nullspace, ExtensionError> {
    let md = geometry::metric_data(chart)?;
    let n = chart.dim();
    let k = basis.len();
    let comps: Vec<Vec<Expr>> = basis
        .iter()
        .map(|phi| geometry::hessian_residual(chart, &md, phi, mc))
        .collect::<Result<_, _>>()?;

    let points = samples.max(3 * k);
    let mut sampler = Sampler::new(seed);
    let eval_rows = |sampler: &mut Sampler,
                         count: usize|
     -> Result<Vec<Vec<Complex64>>, ExtensionError> {
        let mut rows = Vec::new();
        for _ in 0..count {
            let bind = sampler.config_binding(chart, &[], params, Domain::Real);
            // one row per independent tensor component (i <= j)
            for i in 0..n {
                for j in i..n {
                    let row: Vec<Complex64> = comps
                        .iter()
                        .map(|c| bind.eval(&c[i * n + j]))
                        .collect::<Result<_, _>>()?;
                    if row.iter().all(|z| z.is_finite()) {
                        rows.push(row);
                    }
                }
            }
        }
        Ok(rows)
    };

    let rows_data = eval_rows(&mut sampler, points)?;
    let vectors = svd_nullspace(&rows_data, k);
    if vectors.is_empty() {
        return Ok(Nullspace {
            vectors,
            fresh_residual: 0.0,
        });
    }
    let fresh = eval_rows(&mut sampler, 50)?;
    let (kept, worst) = validate_vectors(vectors, &fresh);
    Ok(Nullspace {
        vectors: kept,
        fresh_residual: worst,
    })
}

/// A produced extension: the enlarged chart, both Hamiltonians, and the
/// named integral list (`H`, `L`, then `F`).
#[derive(Clone, Debug)]
pub struct ExtendedSystem {
    pub base: Chart,
    pub chart: Chart,
    pub spec: ExtensionSpec,
    /// The base potential the construction started from.
    pub v: Expr,
    pub g: Expr,
    pub h: MomentumPolynomial,
    /// The base Hamiltonian over the extended variables.
    pub l: MomentumPolynomial,
    pub gamma: Expr,
    pub integrals: Vec<(String, MomentumPolynomial)>,
    /// Flat branch with `L0 = 0`: constructed, but the integral adds
    /// nothing new.
    pub trivial: bool,
}

/// Reindex a polynomial over the base momenta to the extended momenta
/// (`p_u` prepended).
pub fn lift_to_extended(poly: &MomentumPolynomial, extended: &Chart) -> MomentumPolynomial {
    let mut out = MomentumPolynomial::zero(extended.momenta.clone());
    for (k, coeff) in poly.terms() {
        let mut powers = vec![0u16];
        powers.extend_from_slice(k);
        out.add_term(powers, coeff.clone());
    }
    out
}

/// Build the extended system for a validated `(V, G, spec)` triple.
pub fn extend(
    base: &Chart,
    v: &Expr,
    g: &Expr,
    spec: &ExtensionSpec,
) -> Result<ExtendedSystem, ExtensionError> {
    // the eigenvalue parameter must match the chart curvature
    let allowed = geometry::admissible_c(base, spec.m)?;
    if !allowed.iter().any(|ok| equiv(ok, &spec.c)) {
        return Err(ExtensionError::InadmissibleC {
            c: spec.c.to_string(),
            chart: base.name.clone(),
            m: spec.m,
        });
    }
    if spec.is_flat() && spec.a.is_zero_literal() {
        return Err(ExtensionError::ZeroScale);
    }

    let m_lit = Expr::int(spec.m as i64);
    let (scale, extra_v, u_box) = if spec.is_flat() {
        // mA, and  mA V0 + m L0 A^2 (u+u0)^2
        let scale = Expr::mul(vec![m_lit.clone(), spec.a.clone()]);
        let well = Expr::mul(vec![
            m_lit.clone(),
            spec.l0.clone(),
            Expr::powi(spec.a.clone(), 2),
            Expr::powi(spec.u_shifted(), 2),
        ]);
        let shift = Expr::mul(vec![scale.clone(), spec.v0.clone()]);
        (scale, Expr::add(vec![shift, well]), (-1.2, 1.2))
    } else {
        // mc/Sk^2, and  m L0 / Sk^2 + W0
        let prof2 = Expr::powi(spec.profile(), 2);
        let scale = Expr::mul(vec![
            m_lit.clone(),
            spec.c.clone(),
            Expr::powi(spec.profile(), -2),
        ]);
        let well = Expr::div(Expr::mul(vec![m_lit, spec.l0.clone()]), prof2);
        (scale, Expr::add(vec![well, spec.w0.clone()]), (0.35, 1.25))
    };

    let mut chart = Chart::warped(base, "u", &scale, u_box);
    if !spec.is_flat() {
        chart.singular.push(spec.profile());
    }

    let l_base = base.natural_hamiltonian(v);
    let l = lift_to_extended(&l_base, &chart);
    let scaled_v = Expr::mul(vec![scale, v.clone()]);
    let mut h = chart.kinetic();
    h.add_term(vec![0; chart.dim()], Expr::add(vec![scaled_v, extra_v]));

    let gamma = gamma_expr(spec);
    let f = first_integral_iterative(&chart, &l, &gamma, g, spec.m)?;
    let integrals = vec![
        ("H".to_string(), h.clone()),
        ("L".to_string(), l.clone()),
        (format!("F=U^{}G", spec.m), f),
    ];
    Ok(ExtendedSystem {
        base: base.clone(),
        chart,
        spec: spec.clone(),
        v: v.clone(),
        g: g.clone(),
        h,
        l,
        gamma,
        integrals,
        trivial: spec.is_trivial(),
    })
}

/// One ladder step: `U F = p_u F + gamma {L, F}`.
pub fn u_apply(
    extended: &Chart,
    l: &MomentumPolynomial,
    gamma: &Expr,
    f: &MomentumPolynomial,
) -> Result<MomentumPolynomial, PhaseError> {
    let lifted = f.mul_momentum(0);
    let action = l.poisson(f, extended)?.scale(gamma);
    lifted.add(&action)
}

/// `U^m G` by literal m-fold application of the ladder step, with
/// coefficient normalization after every step.
pub fn first_integral_iterative(
    extended: &Chart,
    l: &MomentumPolynomial,
    gamma: &Expr,
    g: &Expr,
    m: u32,
) -> Result<MomentumPolynomial, ExtensionError> {
    let mut f = MomentumPolynomial::scalar(extended.momenta.clone(), g.clone());
    for _ in 0..m {
        f = u_apply(extended, l, gamma, &f)?.normalized()?;
    }
    Ok(f)
}

fn binom(n: u32, k: u32) -> i64 {
    if k > n {
        return 0;
    }
    let mut acc: i64 = 1;
    for i in 0..k {
        acc = acc * (n - i) as i64 / (i + 1) as i64;
    }
    acc
}

/// `U^m G` assembled from the closed form `P_m G + D_m X_L(G)`, without
/// iterating the ladder. Kept independent of
/// [`first_integral_iterative`] so the two can cross-check each other.
pub fn first_integral_closed(
    extended: &Chart,
    l: &MomentumPolynomial,
    gamma: &Expr,
    g: &Expr,
    m: u32,
    c: &Expr,
    l0: &Expr,
) -> Result<MomentumPolynomial, ExtensionError> {
    let vars = extended.momenta.clone();
    // B = -2m (cL + L0)
    let b = l
        .scale(c)
        .add(&MomentumPolynomial::scalar(vars.clone(), l0.clone()))?
        .scale(&Expr::int(-2 * m as i64));

    let mut b_pow = MomentumPolynomial::scalar(vars.clone(), Expr::one());
    let mut p_m = MomentumPolynomial::zero(vars.clone());
    let mut d_m = MomentumPolynomial::zero(vars.clone());
    for k in 0..=(m / 2) {
        if k > 0 {
            b_pow = b_pow.mul(&b)?;
        }
        // P_m term: binom(m,2k) gamma^{2k} p_u^{m-2k} B^k
        let coeff = Expr::mul(vec![
            Expr::int(binom(m, 2 * k)),
            Expr::powi(gamma.clone(), 2 * k as i64),
        ]);
        let mut term = b_pow.scale(&coeff);
        for _ in 0..(m - 2 * k) {
            term = term.mul_momentum(0);
        }
        p_m = p_m.add(&term)?;
        // D_m term: binom(m,2k+1) gamma^{2k+1} p_u^{m-2k-1} B^k
        if 2 * k + 1 <= m {
            let coeff = Expr::mul(vec![
                Expr::int(binom(m, 2 * k + 1)),
                Expr::powi(gamma.clone(), (2 * k + 1) as i64),
            ]);
            let mut term = b_pow.scale(&coeff);
            for _ in 0..(m - 2 * k - 1) {
                term = term.mul_momentum(0);
            }
            d_m = d_m.add(&term)?;
        }
    }

    let g_poly = MomentumPolynomial::scalar(vars.clone(), g.clone());
    let xg = l.poisson(&g_poly, extended)?;
    let f = p_m.mul(&g_poly)?.add(&d_m.mul(&xg)?)?;
    Ok(f.normalized()?)
}

/// An iterated chain of flat extensions starting from the one-dimensional
/// oscillator `1/2 p^2 + omega x^2`: each step appends an axis whose
/// quadratic coefficient is the previous one divided by the square of the
/// step order, so all frequencies stay commensurate.
#[derive(Clone, Debug)]
pub struct OscillatorChain {
    pub chart: Chart,
    pub h: MomentumPolynomial,
    /// Per-axis quadratic coefficients of the potential.
    pub weights: Vec<Expr>,
    /// `H_1..H_n` partial Hamiltonians and `F_1..F_{n-1}` ladder integrals.
    pub integrals: Vec<(String, MomentumPolynomial)>,
}

/// Run the flat-branch extension iteratively along `chain`, producing an
/// `n = chain.len() + 1` dimensional oscillator with `2n - 1` integrals.
pub fn iterate_extend(omega: &Expr, chain: &[u32]) -> Result<OscillatorChain, ExtensionError> {
    let mut weights = vec![omega.clone()];
    let mut integrals: Vec<(String, MomentumPolynomial)> = Vec::new();

    let potential = |w: &[Expr], coords: &[Symbol]| {
        Expr::add(
            w.iter()
                .zip(coords)
                .map(|(wk, x)| Expr::mul(vec![wk.clone(), Expr::powi(Expr::sym(x), 2)]))
                .collect(),
        )
    };

    for (step, &mk) in chain.iter().enumerate() {
        let dim = step + 1;
        let base = Chart::euclidean(dim);
        let v = potential(&weights, &base.coords);
        integrals.push((
            format!("H{}", dim),
            base.natural_hamiltonian(&v),
        ));

        // newest-axis branch: G = x_dim, L0 = w_last / m
        let l0 = normalize(&Expr::div(
            weights.last().unwrap().clone(),
            Expr::int(mk as i64),
        ))?;
        let spec = ExtensionSpec::flat(mk, l0);
        let g = Expr::sym(&base.coords[dim - 1]);
        let sys = extend(&base, &v, &g, &spec)?;

        // rename (u, x1..xd) -> (x1..x_{d+1}) with u as the new last axis
        let target = Chart::euclidean(dim + 1);
        let mut map = BTreeMap::new();
        map.insert(Symbol::new("u"), Expr::sym(&target.coords[dim]));
        for (i, c) in base.coords.iter().enumerate() {
            map.insert(c.clone(), Expr::sym(&target.coords[i]));
        }
        let perm: Vec<usize> = std::iter::once(dim).chain(0..dim).collect();
        let f = sys
            .integrals
            .iter()
            .find(|(n, _)| n.starts_with('F'))
            .expect("ladder integral present")
            .1
            .clone();
        let f = relabel(&f, &map, &perm, &target.momenta);

        // previously collected integrals keep their momentum layout (a
        // trailing zero exponent appears) but their coefficients must
        // follow the coordinate renames as well
        let perm_old: Vec<usize> = (0..dim).collect();
        integrals = integrals
            .into_iter()
            .map(|(n, p)| (n, relabel(&p, &map, &perm_old, &target.momenta)))
            .collect();
        integrals.push((format!("F{}", dim), f));

        let wnext = normalize(&Expr::div(
            weights.last().unwrap().clone(),
            Expr::int((mk * mk) as i64),
        ))?;
        weights.push(wnext);
    }

    let n = chain.len() + 1;
    let chart = Chart::euclidean(n);
    let v = potential(&weights, &chart.coords);
    let h = chart.natural_hamiltonian(&v);
    integrals.push((format!("H{}", n), h.clone()));
    Ok(OscillatorChain {
        chart,
        h,
        weights,
        integrals,
    })
}

/// Substitute coordinate symbols in coefficients and permute the exponent
/// layout: `new_powers[perm[i]] = old_powers[i]`.
fn relabel(
    poly: &MomentumPolynomial,
    map: &BTreeMap<Symbol, Expr>,
    perm: &[usize],
    vars: &[Symbol],
) -> MomentumPolynomial {
    let mut out = MomentumPolynomial::zero(vars.to_vec());
    for (k, c) in poly.terms() {
        let mut powers = vec![0u16; vars.len()];
        for (i, &e) in k.iter().enumerate() {
            powers[perm[i]] = e;
        }
        out.add_term(powers, c.subst(map));
    }
    out
}

/// Angular profile recovered on the curvature-tagged polar chart when the
/// ansatz coefficients `(a1, a2)` do not both vanish: the compatibility
/// condition forces `F = 1/(a1 Ck(zeta,x2) - a2 zeta Sk(zeta,x2))^2`,
/// which collapses to a single shifted cosine-like factor.
#[derive(Clone, Debug)]
pub struct RecoveredProfile {
    /// The profile as an expression in `x2` with literal coefficients.
    pub f: Expr,
    /// Amplitude of the collapsed form `1/(amp^2 Ck(zeta, x2+shift)^2)`.
    pub amplitude: Complex64,
    pub shift: Complex64,
}

/// Solve `a1 Sk(zeta,x) + a2 Ck(zeta,x) = amp * Sk(zeta, x + shift)` for
/// `(amp, shift)` and return the compatible angular profile.
pub fn ttw_recover_f(a1: f64, a2: f64, zeta: f64) -> RecoveredProfile {
    let z = Complex64::new(zeta, 0.0);
    let sq = z.sqrt();
    // a1 = amp Ck(shift), a2 = amp Sk(shift)
    let amp = (Complex64::new(a1 * a1, 0.0) + z * a2 * a2).sqrt();
    let shift = ((sq * a2) / amp).asin() / sq;
    let a1e = Expr::num_f64(a1);
    let a2e = Expr::num_f64(a2);
    let ze = Expr::num_f64(zeta);
    let x2 = Expr::var("x2");
    let denom = Expr::sub(
        Expr::mul(vec![a1e, Expr::ck(ze.clone(), x2.clone())]),
        Expr::mul(vec![a2e, ze.clone(), Expr::sk(ze, x2)]),
    );
    RecoveredProfile {
        f: Expr::powi(denom, -2),
        amplitude: amp,
        shift,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expression as pe;
    use crate::phasepoly::PhasePoint;

    #[test]
    fn gamma_solves_its_ode_on_the_curved_branch() {
        let u = Symbol::new("u");
        for (c, kappa, u0) in [
            ("1/3", "9", "0"),
            ("1/2", "-4", "1/5"),
            ("-2", "1", "1/3"),
            ("1/4", "0", "1/7"),
        ] {
            let spec = ExtensionSpec {
                m: 3,
                c: pe(c).unwrap(),
                kappa: pe(kappa).unwrap(),
                u0: pe(u0).unwrap(),
                l0: Expr::zero(),
                v0: Expr::zero(),
                w0: Expr::zero(),
                a: Expr::zero(),
            };
            let gamma = gamma_expr(&spec);
            let ode = Expr::add(vec![
                gamma.diff(&u),
                Expr::mul(vec![
                    spec.c.clone(),
                    Expr::add(vec![Expr::powi(gamma.clone(), 2), spec.kappa.clone()]),
                ]),
            ]);
            assert!(
                normalize(&ode).unwrap().is_zero_literal(),
                "gamma ODE failed for c={c}, kappa={kappa}, u0={u0}"
            );
        }
    }

    #[test]
    fn gamma_closed_forms() {
        let spec = ExtensionSpec::flat(4, Expr::zero());
        assert!(equiv(&gamma_expr(&spec), &pe("-u/4").unwrap()));

        let spec = ExtensionSpec::curved(2, pe("c").unwrap(), Expr::zero());
        assert!(equiv(&gamma_expr(&spec), &pe("1/(c*u)").unwrap()));

        let spec = ExtensionSpec::curved(3, pe("1/3").unwrap(), pe("9").unwrap());
        assert!(equiv(&gamma_expr(&spec), &pe("3*cos(u)/sin(u)").unwrap()));
    }

    #[test]
    fn ansatz_bases_per_family() {
        let e3 = g_basis(&Chart::euclidean(3)).unwrap();
        assert_eq!(e3.basis.len(), 4);
        assert!(e3.basis[0].is_one_literal());
        let s2 = g_basis(&Chart::sphere()).unwrap();
        assert_eq!(s2.basis.len(), 3);
        let generic = s2.generic().to_string();
        assert!(generic.contains("a0") && generic.contains("a2"));
        assert!(g_basis(&Chart::warped(
            &Chart::euclidean(2),
            "u",
            &Expr::one(),
            (0.0, 1.0)
        ))
        .is_err());
    }

    #[test]
    fn hessian_solution_dims_on_the_sphere() {
        // mc = K = 1 admits exactly the three height functions; mc = 0 only
        // constants; other eigenvalues nothing.
        let chart = Chart::sphere();
        let basis = probe_basis(&chart).unwrap();
        let dim = |mc: &str| {
            hessian_solution_space(&chart, &pe(mc).unwrap(), &basis, &Binding::new(), 30, 11)
                .unwrap()
                .vectors
                .len()
        };
        assert_eq!(dim("1"), 3);
        assert_eq!(dim("0"), 1);
        assert_eq!(dim("2"), 0);
    }

    #[test]
    fn oscillator_nullspace_matches_hand_analysis() {
        // V = m L0 (x^2 + y^2): both axes compatible, constants excluded
        let chart = Chart::euclidean(2);
        let ansatz = g_basis(&chart).unwrap();
        let m = 2u32;
        let l0 = pe("13/10").unwrap();
        let v = pe("2*13/10*(x^2+y^2)").unwrap();
        let ns = compatibility_nullspace(
            &v,
            &ansatz,
            m,
            &Expr::zero(),
            &l0,
            &Binding::new(),
            &[],
            Domain::Real,
            40,
            17,
        )
        .unwrap();
        assert_eq!(ns.vectors.len(), 2);
        for a in &ns.vectors {
            assert!(a[0].norm() < 1e-9, "constant component leaked: {a:?}");
        }

        // V = alpha/x^2 with L0 != 0: nothing survives
        let v = pe("7/5/x^2").unwrap();
        let ns = compatibility_nullspace(
            &v,
            &ansatz,
            m,
            &Expr::zero(),
            &l0,
            &Binding::new(),
            &[pe("x").unwrap()],
            Domain::Real,
            40,
            23,
        )
        .unwrap();
        assert!(ns.vectors.is_empty());
    }

    #[test]
    fn isotropic_oscillator_extension_shape() {
        // V = a3 (x^2+y^2), A = 1/m, L0 = a3/m
        let chart = Chart::euclidean(2);
        let m = 3u32;
        let v = pe("a3*(x^2+y^2)").unwrap();
        let spec = ExtensionSpec::flat(m, pe("a3/3").unwrap());
        let g = pe("x").unwrap();
        let sys = extend(&chart, &v, &g, &spec).unwrap();
        assert!(!sys.trivial);
        assert_eq!(sys.chart.coords[0].name(), "u");
        // H = 1/2(p_u^2+p_x^2+p_y^2) + a3(x^2+y^2) + a3 u^2/m^2
        let expected = MomentumPolynomial::from_expr(
            &pe("1/2*p_u^2 + 1/2*p_x^2 + 1/2*p_y^2 + a3*(x^2+y^2) + a3/9*u^2").unwrap(),
            &sys.chart.momenta,
        )
        .unwrap();
        assert!(sys.h.equivalent(&expected), "H = {}", sys.h);
        // p_u^m coefficient of F is G itself
        let f = &sys.integrals.last().unwrap().1;
        let top: Vec<_> = f
            .terms()
            .filter(|(k, _)| k[0] == m as u16)
            .collect();
        assert_eq!(top.len(), 1);
        assert!(equiv(top[0].1, &g));
        assert!(f.degree() <= m as usize + 1);
    }

    #[test]
    fn closed_and_iterative_ladders_agree() {
        // flat branch on E2 with symbolic a3
        let chart = Chart::euclidean(2);
        let v = pe("a3*(x^2+y^2)").unwrap();
        for m in 1..=5u32 {
            let spec = ExtensionSpec::flat(m, pe(&format!("a3/{m}")).unwrap());
            let g = pe("x - 2*y").unwrap();
            let sys = extend(&chart, &v, &g, &spec).unwrap();
            let it =
                first_integral_iterative(&sys.chart, &sys.l, &sys.gamma, &g, m).unwrap();
            let cl = first_integral_closed(
                &sys.chart,
                &sys.l,
                &sys.gamma,
                &g,
                m,
                &spec.c,
                &spec.l0,
            )
            .unwrap();
            assert!(it.equivalent(&cl), "flat branch mismatch at m={m}");
        }

        // curved branch on S2 with the squared-order profile parameter
        let s2 = Chart::sphere();
        let v = pe("a1/sin(theta)^2").unwrap();
        for m in 1..=3u32 {
            let spec = ExtensionSpec::curved(
                m,
                Expr::ratio(1, m as i64),
                Expr::int((m * m) as i64),
            );
            let g = pe("cos(theta)").unwrap();
            let sys = extend(&s2, &v, &g, &spec).unwrap();
            let it =
                first_integral_iterative(&sys.chart, &sys.l, &sys.gamma, &g, m).unwrap();
            let cl = first_integral_closed(
                &sys.chart,
                &sys.l,
                &sys.gamma,
                &g,
                m,
                &spec.c,
                &spec.l0,
            )
            .unwrap();
            assert!(it.equivalent(&cl), "curved branch mismatch at m={m}");
        }
    }

    #[test]
    fn chain_of_flat_steps_builds_commensurate_wells() {
        let chain = iterate_extend(&pe("w").unwrap(), &[2]).unwrap();
        assert_eq!(chain.chart.dim(), 2);
        let expected = MomentumPolynomial::from_expr(
            &pe("1/2*p_x^2 + 1/2*p_y^2 + w*x^2 + w/4*y^2").unwrap(),
            &chain.chart.momenta,
        )
        .unwrap();
        assert!(chain.h.equivalent(&expected), "H = {}", chain.h);
        assert_eq!(chain.integrals.len(), 3); // H1, F1, H2

        let chain = iterate_extend(&pe("w").unwrap(), &[2, 3, 4]).unwrap();
        assert_eq!(chain.chart.dim(), 4);
        assert_eq!(chain.integrals.len(), 7);
        assert!(equiv(&chain.weights[3], &pe("w/576").unwrap()));
    }

    #[test]
    fn chain_integrals_follow_the_coordinate_renames() {
        // the axis names change across the two-axis chart ((x, y) rather
        // than (x1, x2)); integrals collected before a rename must commute
        // with the full Hamiltonian afterwards, which fails if their
        // coefficients keep stale symbols
        for chain_spec in [&[2][..], &[2, 1][..]] {
            let chain = iterate_extend(&pe("w").unwrap(), chain_spec).unwrap();
            for (name, f) in &chain.integrals {
                let bracket = chain
                    .h
                    .poisson(f, &chain.chart)
                    .unwrap()
                    .normalized()
                    .unwrap();
                assert!(
                    bracket.is_zero(),
                    "chain {chain_spec:?}: {{H, {name}}} = {}",
                    bracket.to_expr()
                );
                for sym in f.to_expr().symbols() {
                    let known = chain.chart.phase_vars().contains(&sym)
                        || sym.name() == "w";
                    assert!(known, "chain {chain_spec:?}: {name} mentions `{sym:?}`");
                }
            }
        }
    }

    #[test]
    fn recovered_angular_profile_collapses_to_shifted_cosine() {
        let (a1, a2, zeta) = (0.8, -0.45, 1.7);
        let rec = ttw_recover_f(a1, a2, zeta);
        let sq = zeta.sqrt();
        for x in [-0.9, -0.3, 0.2, 0.7, 1.3] {
            // a1 Sk + a2 Ck == amp Sk(x + shift)
            let lhs = a1 * (sq * x).sin() / sq + a2 * (sq * x).cos();
            let arg = sq * (Complex64::new(x, 0.0) + rec.shift);
            let rhs = rec.amplitude * arg.sin() / sq;
            assert!((lhs - rhs).norm() < 1e-12);

            // direct profile equals the collapsed form
            let mut b = Binding::new();
            b.set_real("x2", x);
            let f_direct = b.eval(&rec.f).unwrap();
            let f_closed = 1.0
                / (rec.amplitude * rec.amplitude * arg.cos() * arg.cos());
            assert!((f_direct - f_closed).norm() < 1e-10 * f_closed.norm());
        }
    }

    #[test]
    fn extension_rejects_wrong_eigenvalue() {
        let chart = Chart::euclidean(2);
        let v = pe("x^2+y^2").unwrap();
        let bad = ExtensionSpec::curved(2, Expr::ratio(1, 2), Expr::one());
        assert!(matches!(
            extend(&chart, &v, &pe("x").unwrap(), &bad),
            Err(ExtensionError::InadmissibleC { .. })
        ));
        let trivial = ExtensionSpec::flat(2, Expr::zero());
        let sys = extend(&chart, &Expr::zero(), &pe("x").unwrap(), &trivial).unwrap();
        assert!(sys.trivial);
    }

    #[test]
    fn lifted_base_hamiltonian_commutes_with_extension() {
        // {H, L} = 0 numerically at a few points for a curved example
        let s2 = Chart::sphere();
        let v = pe("a1/sin(theta)^2").unwrap();
        let spec = ExtensionSpec::curved(2, Expr::ratio(1, 2), Expr::int(4));
        let sys = extend(&s2, &v, &pe("cos(theta)").unwrap(), &spec).unwrap();
        let bracket = sys
            .h
            .poisson(&sys.l, &sys.chart)
            .unwrap()
            .normalized()
            .unwrap();
        assert!(bracket.is_zero(), "{{H, L}} = {bracket}");

        let pt = PhasePoint::new(vec![0.7, 1.1, 0.4], vec![0.3, -0.2, 0.5]);
        let mut params = Binding::new();
        params.set_real("a1", 0.9);
        let hv = sys.h.eval(&sys.chart, &pt, &params).unwrap();
        assert!(hv.is_finite());
    }
}
