//! Numerical certification of first integrals and superintegrability.
//!
//! Three independent kinds of evidence are produced, none of which trusts
//! the symbolic construction that built the candidate:
//!
//! * **Bracket residuals** — `{H, F}` is expanded as a momentum polynomial
//!   and evaluated at seeded random phase points. The residual is measured
//!   against the summed magnitude of the bracket's individual terms, so a
//!   small value certifies genuine cancellation depth rather than a small
//!   bracket.
//! * **Independence rank** — phase-space gradients of the integrals are
//!   stacked at each sample point and ranked by SVD; the modal rank over
//!   points and the worst singular-value gap at the cut are reported.
//! * **Conservation drift** — Hamilton's equations are integrated with an
//!   adaptive embedded Runge–Kutta 5(4) pair (Dormand–Prince) and each
//!   integral's relative drift along the trajectory is tracked. The scheme
//!   is deliberately *not* symplectic: Hamiltonians with `Sk^-2` warping do
//!   not split into kick/drift form, and conservation here is a measurement,
//!   not something the integrator should impose.
//!
//! Everything is deterministic for a fixed seed, so a report can be
//! reproduced bit for bit.

use crate::expr::{Binding, Compiled, Expr, ExprError};
use crate::extension::{lift_to_extended, ExtendedSystem, ExtensionError};
use crate::geometry::{self, GeometryError};
use crate::phasepoly::{Chart, MomentumPolynomial, PhaseError, PhasePoint};
use crate::sample::{Domain, Sampler};
use crate::tol;
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("step size underflow at t = {t:.6}: {context}")]
    StepUnderflow { t: f64, context: String },
    #[error("state left the real domain at t = {t:.6} (imaginary magnitude {imag:.3e})")]
    LeftRealDomain { t: f64, imag: f64 },
    #[error("every sampled point was degenerate or non-finite")]
    Degenerate,
    #[error("need at least {need} integrals, got {got}")]
    TooFewIntegrals { need: usize, got: usize },
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Extension(#[from] ExtensionError),
}

/// Reproducible sampling and trajectory setup for a certification run.
///
/// Coordinate boxes and declared singular sets come from the chart itself;
/// the config adds everything that varies between runs.
#[derive(Clone, Debug, Serialize)]
pub struct SamplerConfig {
    /// Seed for every random draw in the run.
    pub seed: u64,
    /// Number of sample points per algebraic check.
    pub samples: usize,
    /// Sample on the real slice or with complex parts.
    pub domain: Domain,
    /// Trajectory horizon for the drift check; `None` skips trajectories.
    /// Complex-domain runs never integrate regardless of this value — the
    /// algebra extends to complex coefficients, the dynamics do not.
    pub horizon: Option<f64>,
    /// Local error tolerance handed to the adaptive integrator.
    pub tol: f64,
}

impl SamplerConfig {
    pub fn new(seed: u64) -> Self {
        SamplerConfig {
            seed,
            samples: 100,
            domain: Domain::Real,
            horizon: Some(10.0),
            tol: tol::INTEGRATOR_TOL,
        }
    }
}

/// Largest relative residual of the Poisson bracket `{h, f}` over seeded
/// sample points.
///
/// The bracket is expanded symbolically into a momentum polynomial first;
/// at each point the residual is `|sum of terms| / (1 + sum of |term|)`.
/// Scaling by the term magnitudes means catastrophic cancellation between
/// large terms cannot masquerade as a pass near large momenta. An exactly
/// vanishing bracket returns 0.
#[allow(clippy::too_many_arguments)]
pub fn bracket_residual_max(
    chart: &Chart,
    h: &MomentumPolynomial,
    f: &MomentumPolynomial,
    params: &Binding,
    avoid: &[Expr],
    domain: Domain,
    samples: usize,
    seed: u64,
) -> Result<f64, VerifyError> {
    // Canonicalizing the coefficients first drops every term that vanishes
    // symbolically; without this, coefficients that are provably zero but
    // written as near-cancelling differences of large quotients would be
    // measured at their floating-point noise level instead of at zero.
    let bracket = h.poisson(f, chart)?.normalized()?;
    residual_of_terms(chart, &bracket, params, avoid, domain, samples, seed)
}

/// Max over sample points of |sum of terms| / (1 + sum |term|) for the
/// terms of a momentum polynomial that is expected to vanish.
fn residual_of_terms(
    chart: &Chart,
    poly: &MomentumPolynomial,
    params: &Binding,
    avoid: &[Expr],
    domain: Domain,
    samples: usize,
    seed: u64,
) -> Result<f64, VerifyError> {
    let vars = chart.phase_vars();
    let compiled: Vec<Compiled> = poly
        .terms()
        .map(|(powers, coeff)| {
            let mut factors = vec![coeff.clone()];
            for (i, &e) in powers.iter().enumerate() {
                if e > 0 {
                    factors.push(Expr::powi(Expr::sym(&chart.momenta[i]), e as i64));
                }
            }
            Compiled::with_constants(&Expr::mul(factors), &vars, params.map())
        })
        .collect::<Result<_, _>>()?;
    if compiled.is_empty() {
        return Ok(0.0);
    }

    let mut sampler = Sampler::new(seed);
    let mut worst = 0.0f64;
    let mut used = 0usize;
    for _ in 0..samples {
        let bind = sampler.phase_binding(chart, avoid, params, domain);
        let vals: Vec<Complex64> = vars.iter().map(|v| bind.map()[v]).collect();
        let mut sum = Complex64::new(0.0, 0.0);
        let mut scale = 0.0f64;
        for c in &compiled {
            let z = c.eval(&vals);
            sum += z;
            scale += z.norm();
        }
        if !scale.is_finite() || scale > tol::SAMPLE_MAGNITUDE_CAP {
            continue;
        }
        worst = worst.max(sum.norm() / (1.0 + scale));
        used += 1;
    }
    if used == 0 {
        return Err(VerifyError::Degenerate);
    }
    Ok(worst)
}

/// Functional-independence rank of a set of integrals.
///
/// At each of `samples` seeded points the full phase-space gradients
/// `(dF/dq_1.., dF/dp_1..)` are stacked into a matrix and the singular
/// values counted above [`tol::RANK_SV_REL`] relative to the largest.
/// Returns the modal rank across points together with the worst separation
/// `sigma_rank / sigma_(rank+1)` among the points attaining that rank
/// (`f64::INFINITY` when the matrix has full rank, i.e. nothing was cut).
pub fn independence_rank(
    chart: &Chart,
    integrals: &[MomentumPolynomial],
    params: &Binding,
    avoid: &[Expr],
    samples: usize,
    seed: u64,
) -> Result<(usize, f64), VerifyError> {
    if integrals.len() < 2 {
        return Err(VerifyError::TooFewIntegrals {
            need: 2,
            got: integrals.len(),
        });
    }
    let vars = chart.phase_vars();
    let n = chart.dim();
    // gradient entries, compiled: one row of 2n functions per integral
    let mut rows: Vec<Vec<Compiled>> = Vec::with_capacity(integrals.len());
    for f in integrals {
        let mut row = Vec::with_capacity(2 * n);
        for c in &chart.coords {
            row.push(Compiled::with_constants(
                &f.diff_coord(c).to_expr(),
                &vars,
                params.map(),
            )?);
        }
        for i in 0..n {
            row.push(Compiled::with_constants(
                &f.diff_momentum(i).to_expr(),
                &vars,
                params.map(),
            )?);
        }
        rows.push(row);
    }

    let mut sampler = Sampler::new(seed);
    // rank -> (count, worst gap at that rank)
    let mut tally: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for _ in 0..samples {
        let bind = sampler.phase_binding(chart, avoid, params, Domain::Real);
        let vals: Vec<Complex64> = vars.iter().map(|v| bind.map()[v]).collect();
        let mut mat = DMatrix::<Complex64>::zeros(rows.len(), 2 * n);
        let mut ok = true;
        'fill: for (i, row) in rows.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                let z = c.eval(&vals);
                if !z.is_finite() || z.norm() > tol::SAMPLE_MAGNITUDE_CAP {
                    ok = false;
                    break 'fill;
                }
                mat[(i, j)] = z;
            }
        }
        if !ok {
            continue;
        }
        let sv = mat.singular_values();
        let smax = sv.iter().cloned().fold(0.0f64, f64::max);
        if smax == 0.0 {
            continue;
        }
        let cut = tol::RANK_SV_REL * smax;
        let rank = sv.iter().filter(|&&s| s > cut).count();
        let gap = if rank < sv.len() && sv[rank] > 0.0 {
            sv[rank - 1] / sv[rank]
        } else {
            f64::INFINITY
        };
        let e = tally.entry(rank).or_insert((0, f64::INFINITY));
        e.0 += 1;
        e.1 = e.1.min(gap);
    }
    tally
        .into_iter()
        .max_by_key(|(_, (count, _))| *count)
        .map(|(rank, (_, gap))| (rank, gap))
        .ok_or(VerifyError::Degenerate)
}

/// One adaptively integrated trajectory: accepted step times and the state
/// at each, coordinates first then momenta, in chart order.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

// Dormand–Prince 5(4) tableau. The pair is FSAL: stage 7 of an accepted
// step is stage 1 of the next.
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// 5th-order weights (also row 7 of A, hence FSAL).
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
// Embedded 4th-order weights for the error estimate.
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Compiled right-hand side of Hamilton's equations
/// `dq_i/dt = dH/dp_i`, `dp_i/dt = -dH/dq_i`.
struct HamiltonRhs {
    derivs: Vec<Compiled>,
    dim2: usize,
}

impl HamiltonRhs {
    fn build(chart: &Chart, h: &MomentumPolynomial, params: &Binding) -> Result<Self, VerifyError> {
        let vars = chart.phase_vars();
        let n = chart.dim();
        let mut derivs = Vec::with_capacity(2 * n);
        for i in 0..n {
            derivs.push(Compiled::with_constants(
                &h.diff_momentum(i).to_expr(),
                &vars,
                params.map(),
            )?);
        }
        for c in &chart.coords {
            let e = Expr::mul(vec![Expr::int(-1), h.diff_coord(c).to_expr()]);
            derivs.push(Compiled::with_constants(&e, &vars, params.map())?);
        }
        Ok(HamiltonRhs {
            derivs,
            dim2: 2 * n,
        })
    }

    /// Evaluate into `out`; errors when a derivative turns non-finite or
    /// grows an imaginary part (the state has left the real domain).
    fn eval(&self, t: f64, y: &[f64], out: &mut [f64]) -> Result<(), VerifyError> {
        let vals: Vec<Complex64> = y.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        for (i, d) in self.derivs.iter().enumerate() {
            let z = d.eval(&vals);
            if !z.is_finite() {
                return Err(VerifyError::StepUnderflow {
                    t,
                    context: "derivative became non-finite (singularity hit)".into(),
                });
            }
            if z.im.abs() > tol::IMAG_DUST * (1.0 + z.re.abs()) {
                return Err(VerifyError::LeftRealDomain { t, imag: z.im.abs() });
            }
            out[i] = z.re;
        }
        let _ = self.dim2;
        Ok(())
    }
}

/// Integrate Hamilton's equations for `h` from `initial` to time `t_end`
/// with the adaptive 5(4) pair, returning every accepted step.
///
/// `tol` is an error-per-unit-time budget, tightened internally to
/// `tol^(5/4)`: each decade of requested tolerance then buys more than a
/// decade of observed drift, so convergence studies have slack above the
/// guaranteed 10x per decade instead of sitting exactly on it.
pub fn integrate_hamiltonian(
    chart: &Chart,
    h: &MomentumPolynomial,
    params: &Binding,
    initial: &PhasePoint,
    t_end: f64,
    tol_req: f64,
) -> Result<Trajectory, VerifyError> {
    let rhs = HamiltonRhs::build(chart, h, params)?;
    let dim = 2 * chart.dim();
    let tau = tol_req.powf(1.25);

    let mut y: Vec<f64> = initial.q.iter().chain(initial.p.iter()).copied().collect();
    assert_eq!(y.len(), dim, "initial point does not match the chart");
    let mut t = 0.0f64;
    let mut hstep = (t_end / 100.0).min(1e-3).max(1e-6);
    let hmin = 1e-14 * t_end.max(1.0);

    let mut traj = Trajectory {
        t: vec![0.0],
        states: vec![y.clone()],
    };

    let mut k: Vec<Vec<f64>> = vec![vec![0.0; dim]; 7];
    rhs.eval(t, &y, &mut k[0])?;
    let mut ytmp = vec![0.0; dim];
    let mut y5 = vec![0.0; dim];

    while t < t_end {
        if hstep < hmin {
            return Err(VerifyError::StepUnderflow {
                t,
                context: format!("step fell below {hmin:.3e}"),
            });
        }
        if t + hstep > t_end {
            hstep = t_end - t;
        }

        // stages 2..7 (stage 1 is FSAL from the previous step)
        for s in 1..7 {
            for i in 0..dim {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += DP_A[s][j] * kj[i];
                }
                ytmp[i] = y[i] + hstep * acc;
            }
            let (head, tail) = k.split_at_mut(s);
            let _ = head;
            rhs.eval(t + DP_C[s] * hstep, &ytmp, &mut tail[0])?;
        }

        let mut err = 0.0f64;
        for i in 0..dim {
            let mut acc5 = 0.0;
            let mut acc4 = 0.0;
            for s in 0..7 {
                acc5 += DP_B5[s] * k[s][i];
                acc4 += DP_B4[s] * k[s][i];
            }
            y5[i] = y[i] + hstep * acc5;
            let e = hstep * (acc5 - acc4);
            let sc = 1.0 + y[i].abs().max(y5[i].abs());
            err += (e / sc) * (e / sc);
        }
        err = (err / dim as f64).sqrt();

        let budget = tau * hstep;
        if err <= budget {
            t += hstep;
            y.copy_from_slice(&y5);
            k.swap(0, 6); // FSAL
            traj.t.push(t);
            traj.states.push(y.clone());
        }
        // err ~ C h^5 and the budget scales with h, so the optimal next
        // step solves C h^5 = tau h: exponent 1/4.
        let ratio = if err > 0.0 { budget / err } else { 1e8 };
        let fac = (0.9 * ratio.powf(0.25)).clamp(0.2, 5.0);
        hstep *= fac;
    }
    Ok(traj)
}

/// Worst relative drift of each integral along one trajectory:
/// `max_t |I(t) - I(0)| / (1 + |I(0)|)`, evaluated at every accepted step.
#[allow(clippy::too_many_arguments)]
pub fn conservation_drift(
    chart: &Chart,
    h: &MomentumPolynomial,
    integrals: &[(String, MomentumPolynomial)],
    params: &Binding,
    initial: &PhasePoint,
    t_end: f64,
    tol_req: f64,
) -> Result<BTreeMap<String, f64>, VerifyError> {
    let traj = integrate_hamiltonian(chart, h, params, initial, t_end, tol_req)?;
    drift_along(chart, integrals, params, &traj)
}

/// Drift of each integral along an existing trajectory.
pub fn drift_along(
    chart: &Chart,
    integrals: &[(String, MomentumPolynomial)],
    params: &Binding,
    traj: &Trajectory,
) -> Result<BTreeMap<String, f64>, VerifyError> {
    let vars = chart.phase_vars();
    let mut out = BTreeMap::new();
    for (name, f) in integrals {
        let c = Compiled::with_constants(&f.to_expr(), &vars, params.map())?;
        let mut first = None;
        let mut worst = 0.0f64;
        for (idx, state) in traj.states.iter().enumerate() {
            let vals: Vec<Complex64> = state.iter().map(|&x| Complex64::new(x, 0.0)).collect();
            let z = c.eval(&vals);
            if z.im.abs() > tol::IMAG_DUST * (1.0 + z.re.abs()) {
                return Err(VerifyError::LeftRealDomain {
                    t: traj.t[idx],
                    imag: z.im.abs(),
                });
            }
            match first {
                None => first = Some(z.re),
                Some(i0) => worst = worst.max((z.re - i0).abs() / (1.0 + i0.abs())),
            }
        }
        out.insert(name.clone(), worst);
    }
    Ok(out)
}

/// Everything `certify` measured, in one serializable record.
///
/// The JSON layout is stable: `target`, `seed`, `bracket` (map of integral
/// name to residual), `drift` (map, empty when no trajectory ran), `rank`,
/// `verdict`, plus the residuals of the two defining conditions on `G` and
/// the rank metadata.
#[derive(Clone, Debug, Serialize)]
pub struct VerificationReport {
    pub target: String,
    pub seed: u64,
    pub samples: usize,
    /// Covariant-Hessian residual of `G` (max over points and components).
    pub hessian_residual: f64,
    /// Residual of `grad V . grad G = 2m (cV + L0) G`.
    pub compatibility_residual: f64,
    pub bracket: BTreeMap<String, f64>,
    pub drift: BTreeMap<String, f64>,
    pub rank: usize,
    pub rank_expected: usize,
    pub rank_gap: f64,
    pub verdict: String,
    /// Human-readable reasons when the verdict is not certified.
    pub failures: Vec<String>,
}

/// Certify a constructed extension end to end.
///
/// Runs, in order: the covariant-Hessian residual on `G`, the gradient
/// compatibility residual on `(V, G)`, bracket residuals of every integral
/// (the extension's own plus `base_integrals` lifted to the extended
/// chart) against the extended Hamiltonian, the functional-independence
/// rank of the whole set, and — for real-domain runs with a horizon — the
/// conservation drift along a sampled trajectory. The verdict is
/// `"superintegrable-certified"` only if every bound holds *and* the rank
/// reaches `2(n+1) - 1`; a trivial extension is labelled `"trivial"`; any
/// other outcome lists its failures.
pub fn certify(
    extended: &ExtendedSystem,
    base_integrals: &[(String, MomentumPolynomial)],
    params: &Binding,
    config: &SamplerConfig,
) -> Result<VerificationReport, VerifyError> {
    let base = &extended.base;
    let chart = &extended.chart;
    let spec = &extended.spec;
    let mut failures: Vec<String> = Vec::new();

    // 1. covariant-Hessian condition on G over the base chart
    let md = geometry::metric_data(base)?;
    let mc = Expr::mul(vec![Expr::int(spec.m as i64), spec.c.clone()]);
    let hess = geometry::hessian_residual(base, &md, &extended.g, &mc)?;
    let hessian_residual = max_abs_at_config(base, &hess, params, config)?;
    if hessian_residual > tol::BRACKET_RESIDUAL {
        failures.push(format!(
            "Hessian residual {hessian_residual:.3e} exceeds {:.1e}",
            tol::BRACKET_RESIDUAL
        ));
    }

    // 2. compatibility of (V, G): three terms that must cancel
    let pairing = geometry::grad_dot(base, &extended.v, &extended.g);
    let sink_v = Expr::mul(vec![
        Expr::int(-2 * spec.m as i64),
        spec.c.clone(),
        extended.v.clone(),
        extended.g.clone(),
    ]);
    let sink_l0 = Expr::mul(vec![
        Expr::int(-2 * spec.m as i64),
        spec.l0.clone(),
        extended.g.clone(),
    ]);
    let compatibility_residual =
        relative_residual_at_config(base, &[pairing, sink_v, sink_l0], params, config)?;
    if compatibility_residual > tol::BRACKET_RESIDUAL {
        failures.push(format!(
            "compatibility residual {compatibility_residual:.3e} exceeds {:.1e}",
            tol::BRACKET_RESIDUAL
        ));
    }

    // 3. brackets of every integral against H on the extended chart
    let mut all: Vec<(String, MomentumPolynomial)> = extended.integrals.clone();
    for (name, f) in base_integrals {
        all.push((name.clone(), lift_to_extended(f, chart)));
    }
    let mut bracket = BTreeMap::new();
    for (name, f) in &all {
        let r = bracket_residual_max(
            chart,
            &extended.h,
            f,
            params,
            &[],
            config.domain,
            config.samples,
            config.seed,
        )?;
        if r > tol::BRACKET_RESIDUAL {
            failures.push(format!(
                "bracket residual of {name} is {r:.3e}, exceeds {:.1e}",
                tol::BRACKET_RESIDUAL
            ));
        }
        bracket.insert(name.clone(), r);
    }

    // 4. functional independence of the full set
    let polys: Vec<MomentumPolynomial> = all.iter().map(|(_, f)| f.clone()).collect();
    let (rank, rank_gap) = independence_rank(
        chart,
        &polys,
        params,
        &[],
        config.samples.max(20),
        config.seed,
    )?;
    let rank_expected = 2 * chart.dim() - 1;
    if rank != rank_expected {
        failures.push(format!(
            "independence rank {rank} (expected {rank_expected})"
        ));
    } else if rank_gap < tol::RANK_GAP_REQUIRED {
        failures.push(format!(
            "rank separation {rank_gap:.3e} below {:.1e}",
            tol::RANK_GAP_REQUIRED
        ));
    }

    // 5. conservation drift along one sampled trajectory (real domain only)
    let mut drift = BTreeMap::new();
    if config.domain == Domain::Real {
        if let Some(horizon) = config.horizon {
            let mut sampler = Sampler::new(config.seed);
            let initial = sampler.phase_point(chart, &[], params);
            drift = conservation_drift(
                chart,
                &extended.h,
                &all,
                params,
                &initial,
                horizon,
                config.tol,
            )?;
            for (name, d) in &drift {
                if *d > tol::DRIFT_BOUND {
                    failures.push(format!(
                        "drift of {name} is {d:.3e}, exceeds {:.1e}",
                        tol::DRIFT_BOUND
                    ));
                }
            }
        }
    }

    let verdict = if extended.trivial {
        "trivial".to_string()
    } else if failures.is_empty() {
        "superintegrable-certified".to_string()
    } else {
        "not-certified".to_string()
    };

    Ok(VerificationReport {
        target: format!("{} extension of {}", chart.name, base.name),
        seed: config.seed,
        samples: config.samples,
        hessian_residual,
        compatibility_residual,
        bracket,
        drift,
        rank,
        rank_expected,
        rank_gap,
        verdict,
        failures,
    })
}

/// Max magnitude of a list of expressions over sampled configuration
/// points (used for residuals that should vanish identically).
fn max_abs_at_config(
    chart: &Chart,
    exprs: &[Expr],
    params: &Binding,
    config: &SamplerConfig,
) -> Result<f64, VerifyError> {
    let mut sampler = Sampler::new(config.seed);
    let mut worst = 0.0f64;
    let mut used = 0usize;
    for _ in 0..config.samples {
        let bind = sampler.config_binding(chart, &[], params, config.domain);
        let mut point_ok = true;
        let mut point_worst = 0.0f64;
        for e in exprs {
            match bind.eval(e) {
                Ok(z) if z.is_finite() && z.norm() <= tol::SAMPLE_MAGNITUDE_CAP => {
                    point_worst = point_worst.max(z.norm());
                }
                _ => {
                    point_ok = false;
                    break;
                }
            }
        }
        if point_ok {
            worst = worst.max(point_worst);
            used += 1;
        }
    }
    if used == 0 {
        return Err(VerifyError::Degenerate);
    }
    Ok(worst)
}

/// Max over sampled configuration points of |sum of terms| scaled by the
/// summed term magnitudes.
fn relative_residual_at_config(
    chart: &Chart,
    terms: &[Expr],
    params: &Binding,
    config: &SamplerConfig,
) -> Result<f64, VerifyError> {
    let mut sampler = Sampler::new(config.seed);
    let mut worst = 0.0f64;
    let mut used = 0usize;
    for _ in 0..config.samples {
        let bind = sampler.config_binding(chart, &[], params, config.domain);
        let mut sum = Complex64::new(0.0, 0.0);
        let mut scale = 0.0f64;
        let mut point_ok = true;
        for e in terms {
            match bind.eval(e) {
                Ok(z) if z.is_finite() && z.norm() <= tol::SAMPLE_MAGNITUDE_CAP => {
                    sum += z;
                    scale += z.norm();
                }
                _ => {
                    point_ok = false;
                    break;
                }
            }
        }
        if point_ok {
            worst = worst.max(sum.norm() / (1.0 + scale));
            used += 1;
        }
    }
    if used == 0 {
        return Err(VerifyError::Degenerate);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expression as pe;
    use crate::extension::{extend, ExtensionSpec};
    use crate::phasepoly::Chart;

    fn poly(src: &str, chart: &Chart) -> MomentumPolynomial {
        MomentumPolynomial::from_expr(&pe(src).unwrap(), &chart.momenta).unwrap()
    }

    #[test]
    fn bracket_of_h_with_itself_vanishes_identically() {
        let chart = Chart::euclidean(2);
        let h = chart
            .natural_hamiltonian(&pe("x^2 + y^2 + x*y").unwrap());
        let r =
            bracket_residual_max(&chart, &h, &h, &Binding::new(), &[], Domain::Real, 25, 3)
                .unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn perturbed_integral_fails_loudly() {
        // isotropic oscillator: L = x p_y - y p_x commutes; flipping one
        // sign must blow past any plausible tolerance
        let chart = Chart::euclidean(2);
        let h = chart
            .natural_hamiltonian(&pe("1/2*(x^2 + y^2)").unwrap());
        let good = poly("x*p_y - y*p_x", &chart);
        let bad = poly("x*p_y + y*p_x", &chart);
        let rg =
            bracket_residual_max(&chart, &h, &good, &Binding::new(), &[], Domain::Real, 50, 3)
                .unwrap();
        let rb =
            bracket_residual_max(&chart, &h, &bad, &Binding::new(), &[], Domain::Real, 50, 3)
                .unwrap();
        assert!(rg < tol::BRACKET_RESIDUAL, "good residual {rg}");
        assert!(rb > 1e-3, "bad residual {rb} should be large");
    }

    #[test]
    fn duplicated_integrals_rank_one_and_distinct_rank_two() {
        let chart = Chart::euclidean(2);
        let h = chart
            .natural_hamiltonian(&pe("1/2*(x^2 + y^2)").unwrap());
        let l = poly("x*p_y - y*p_x", &chart);
        let (r1, gap1) =
            independence_rank(&chart, &[h.clone(), h.clone()], &Binding::new(), &[], 15, 4)
                .unwrap();
        assert_eq!(r1, 1);
        assert!(gap1 > tol::RANK_GAP_REQUIRED);
        let (r2, _) =
            independence_rank(&chart, &[h, l], &Binding::new(), &[], 15, 4).unwrap();
        assert_eq!(r2, 2);
    }

    #[test]
    fn free_particle_momentum_is_exactly_conserved() {
        let chart = Chart::euclidean(1);
        let h = chart.natural_hamiltonian(&Expr::zero());
        let p = poly("p_x1", &chart);
        let drift = conservation_drift(
            &chart,
            &h,
            &[("p".into(), p)],
            &Binding::new(),
            &PhasePoint::new(vec![0.3], vec![0.7]),
            10.0,
            1e-8,
        )
        .unwrap();
        assert_eq!(drift["p"], 0.0);
    }

    #[test]
    fn oscillator_energy_drift_shrinks_with_tolerance() {
        // exact solution is smooth and bounded: drift must fall by at
        // least 10x per tolerance decade
        let chart = Chart::euclidean(1);
        let h = chart
            .natural_hamiltonian(&pe("1/2*x1^2").unwrap());
        let initial = PhasePoint::new(vec![0.9], vec![0.4]);
        let d = |tol_req: f64| {
            conservation_drift(
                &chart,
                &h,
                &[("H".into(), h.clone())],
                &Binding::new(),
                &initial,
                10.0,
                tol_req,
            )
            .unwrap()["H"]
        };
        let d6 = d(1e-6);
        let d7 = d(1e-7);
        let d8 = d(1e-8);
        assert!(d6 / d7 >= 10.0, "d6 = {d6:.3e}, d7 = {d7:.3e}");
        assert!(d7 / d8 >= 10.0, "d7 = {d7:.3e}, d8 = {d8:.3e}");
    }

    #[test]
    fn certify_oscillator_extension_end_to_end() {
        // V = m L0 (x^2 + y^2) with m = 2, L0 = 1: full certification
        let base = Chart::euclidean(2);
        let spec = ExtensionSpec::flat(2, pe("1").unwrap());
        let v = pe("2*(x^2+y^2)").unwrap();
        let g = pe("x + y").unwrap();
        let ext = extend(&base, &v, &g, &spec).unwrap();
        // L itself is the sum of the two axis energies, so pair one axis
        // energy with the angular momentum to keep the set independent
        let base_ints = vec![
            ("I1".into(), poly("1/2*p_x^2 + 2*x^2", &base)),
            ("J".into(), poly("x*p_y - y*p_x", &base)),
        ];
        let mut config = SamplerConfig::new(11);
        config.samples = 40;
        config.horizon = Some(5.0);
        let report = certify(&ext, &base_ints, &Binding::new(), &config).unwrap();
        assert_eq!(report.verdict, "superintegrable-certified", "{report:?}");
        assert_eq!(report.rank, 5);
        assert!(report.rank_gap > tol::RANK_GAP_REQUIRED);
        for (_, d) in &report.drift {
            assert!(*d < tol::DRIFT_BOUND);
        }
    }

    #[test]
    fn reports_are_bitwise_deterministic() {
        let base = Chart::euclidean(2);
        let spec = ExtensionSpec::flat(2, pe("1").unwrap());
        let v = pe("2*(x^2+y^2)").unwrap();
        let g = pe("x").unwrap();
        let ext = extend(&base, &v, &g, &spec).unwrap();
        let mut config = SamplerConfig::new(7);
        config.samples = 20;
        config.horizon = Some(2.0);
        let a = certify(&ext, &[], &Binding::new(), &config).unwrap();
        let b = certify(&ext, &[], &Binding::new(), &config).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }
}
