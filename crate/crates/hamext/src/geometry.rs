//! Metric geometry of a chart: lowered metric, Christoffel symbols,
//! curvature, and the second-order residuals used by the extension
//! construction.
//!
//! All tensor components are symbolic expressions over the chart
//! coordinates and parameters, normalized on construction. The
//! constant-curvature test is numerical: the claimed sectional curvature is
//! checked by sampling the full lowered curvature tensor against
//! `K (g_ki g_lj - g_kj g_li)` at seeded random points.

use crate::expr::{normalize, Binding, Expr, ExprError, Symbol};
use crate::phasepoly::{Chart, PhaseError};
use crate::sample::Sampler;
use crate::tol;
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error("chart {chart} is not of constant curvature {claimed}: max residual {max_residual:.3e}")]
    NotConstantCurvature {
        chart: String,
        claimed: String,
        max_residual: f64,
    },
}

/// Lowered metric and Christoffel symbols of a chart, normalized.
#[derive(Clone, Debug)]
pub struct MetricData {
    n: usize,
    lower: Vec<Expr>,
    gamma: Vec<Expr>,
}

impl MetricData {
    /// `g_{ij}`.
    pub fn lower(&self, i: usize, j: usize) -> &Expr {
        &self.lower[i * self.n + j]
    }

    /// `Gamma^k_{ij}`.
    pub fn gamma(&self, k: usize, i: usize, j: usize) -> &Expr {
        &self.gamma[(k * self.n + i) * self.n + j]
    }
}

fn minor(m: &[Expr], n: usize, row: usize, col: usize) -> Vec<Expr> {
    let mut out = Vec::with_capacity((n - 1) * (n - 1));
    for i in 0..n {
        if i == row {
            continue;
        }
        for j in 0..n {
            if j == col {
                continue;
            }
            out.push(m[i * n + j].clone());
        }
    }
    out
}

fn det(m: &[Expr], n: usize) -> Expr {
    if n == 1 {
        return m[0].clone();
    }
    let mut terms = Vec::new();
    for j in 0..n {
        if m[j].is_zero_literal() {
            continue;
        }
        let sub = det(&minor(m, n, 0, j), n - 1);
        let sign = if j % 2 == 0 { 1 } else { -1 };
        terms.push(Expr::mul(vec![Expr::int(sign), m[j].clone(), sub]));
    }
    Expr::add(terms)
}

/// Symbolic inverse of an `n x n` matrix via the adjugate; entries are
/// normalized. Fails if the determinant normalizes to zero.
pub fn invert_symbolic(m: &[Expr], n: usize) -> Result<Vec<Expr>, ExprError> {
    let d = normalize(&det(m, n))?;
    if d.is_zero_literal() {
        return Err(ExprError::DivisionByZero {
            context: "singular matrix".into(),
        });
    }
    let mut out = vec![Expr::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            // adj(A)_{ij} = (-1)^{i+j} det(minor_{ji})
            let entry = if n == 1 {
                Expr::div(Expr::one(), d.clone())
            } else {
                let cof = det(&minor(m, n, j, i), n - 1);
                let sign = if (i + j) % 2 == 0 { 1 } else { -1 };
                Expr::div(Expr::mul(vec![Expr::int(sign), cof]), d.clone())
            };
            out[i * n + j] = normalize(&entry)?;
        }
    }
    Ok(out)
}

/// Lowered metric and Christoffel symbols `Gamma^k_{ij} = 1/2 g^{kl}
/// (d_i g_{lj} + d_j g_{li} - d_l g_{ij})`.
pub fn metric_data(chart: &Chart) -> Result<MetricData, GeometryError> {
    let n = chart.dim();
    let upper: Vec<Expr> = (0..n * n)
        .map(|x| chart.metric_inv(x / n, x % n).clone())
        .collect();
    let lower = invert_symbolic(&upper, n)?;
    let mut gamma = vec![Expr::zero(); n * n * n];
    for k in 0..n {
        for i in 0..n {
            for j in 0..=i {
                let mut terms = Vec::new();
                for l in 0..n {
                    let gkl = &upper[k * n + l];
                    if gkl.is_zero_literal() {
                        continue;
                    }
                    let di = lower[l * n + j].diff(&chart.coords[i]);
                    let dj = lower[l * n + i].diff(&chart.coords[j]);
                    let dl = lower[i * n + j].diff(&chart.coords[l]);
                    let inner = Expr::add(vec![di, dj, Expr::neg(dl)]);
                    if inner.is_zero_literal() {
                        continue;
                    }
                    terms.push(Expr::mul(vec![gkl.clone(), inner]));
                }
                let g = normalize(&Expr::mul(vec![Expr::ratio(1, 2), Expr::add(terms)]))?;
                gamma[(k * n + i) * n + j] = g.clone();
                gamma[(k * n + j) * n + i] = g;
            }
        }
    }
    Ok(MetricData { n, lower, gamma })
}

/// Curvature tensor `R^k_{lij} = d_i Gamma^k_{jl} - d_j Gamma^k_{il}
/// + Gamma^m_{jl} Gamma^k_{im} - Gamma^m_{il} Gamma^k_{jm}`, flattened as
/// `[k][l][i][j]`. Entries are raw (not normalized); they are meant for
/// numerical evaluation.
pub fn riemann_up(chart: &Chart, md: &MetricData) -> Vec<Expr> {
    let n = chart.dim();
    let mut out = vec![Expr::zero(); n * n * n * n];
    for k in 0..n {
        for l in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mut terms = vec![
                        md.gamma(k, j, l).diff(&chart.coords[i]),
                        Expr::neg(md.gamma(k, i, l).diff(&chart.coords[j])),
                    ];
                    for m in 0..n {
                        terms.push(Expr::mul(vec![
                            md.gamma(m, j, l).clone(),
                            md.gamma(k, i, m).clone(),
                        ]));
                        terms.push(Expr::neg(Expr::mul(vec![
                            md.gamma(m, i, l).clone(),
                            md.gamma(k, j, m).clone(),
                        ])));
                    }
                    out[((k * n + l) * n + i) * n + j] = Expr::add(terms);
                }
            }
        }
    }
    out
}

/// Lowered curvature tensor `R_{klij} = g_{km} R^m_{lij}` (raw entries).
pub fn riemann_lower(chart: &Chart, md: &MetricData) -> Vec<Expr> {
    let n = chart.dim();
    let up = riemann_up(chart, md);
    let mut out = vec![Expr::zero(); n * n * n * n];
    for k in 0..n {
        for l in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mut terms = Vec::new();
                    for m in 0..n {
                        let g = md.lower(k, m);
                        if g.is_zero_literal() {
                            continue;
                        }
                        terms.push(Expr::mul(vec![
                            g.clone(),
                            up[((m * n + l) * n + i) * n + j].clone(),
                        ]));
                    }
                    out[((k * n + l) * n + i) * n + j] = Expr::add(terms);
                }
            }
        }
    }
    out
}

/// Maximum relative residual of `R_{klij} = K (g_ki g_lj - g_kj g_li)`
/// over seeded sample points (parameters bound to random generic values).
pub fn constant_curvature_residual(
    chart: &Chart,
    claimed: &Expr,
    seed: u64,
    points: usize,
) -> Result<f64, GeometryError> {
    let n = chart.dim();
    let md = metric_data(chart)?;
    let riem = riemann_lower(chart, &md);

    // model tensor K (g_ki g_lj - g_kj g_li)
    let mut model = vec![Expr::zero(); n * n * n * n];
    for k in 0..n {
        for l in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let a = Expr::mul(vec![md.lower(k, i).clone(), md.lower(l, j).clone()]);
                    let b = Expr::mul(vec![md.lower(k, j).clone(), md.lower(l, i).clone()]);
                    model[((k * n + l) * n + i) * n + j] =
                        Expr::mul(vec![claimed.clone(), Expr::sub(a, b)]);
                }
            }
        }
    }

    // parameters: free symbols of either side that are not coordinates
    let mut syms: BTreeSet<Symbol> = BTreeSet::new();
    for e in riem.iter().chain(model.iter()) {
        e.free_symbols(&mut syms);
    }
    for c in &chart.coords {
        syms.remove(c);
    }
    let syms: Vec<Symbol> = syms.into_iter().collect();

    let mut sampler = Sampler::new(seed);
    let params = sampler.bind_params(&Binding::new(), &syms);
    let mut max_resid: f64 = 0.0;
    for _ in 0..points {
        let pt = sampler.config_point(chart, &[], &params);
        let bind = chart.bind_point(&pt, &params)?;
        for (r, m) in riem.iter().zip(&model) {
            let lhs = bind.eval(r)?;
            let rhs = bind.eval(m)?;
            let scale = 1.0 + lhs.norm().max(rhs.norm());
            let resid = (lhs - rhs).norm() / scale;
            if resid.is_nan() || resid > max_resid {
                max_resid = resid;
            }
        }
    }
    Ok(max_resid)
}

/// Check the chart's claimed constant curvature within
/// [`tol::CURVATURE_REL`].
pub fn check_constant_curvature(
    chart: &Chart,
    claimed: &Expr,
    seed: u64,
    points: usize,
) -> Result<(), GeometryError> {
    let max_residual = constant_curvature_residual(chart, claimed, seed, points)?;
    if !max_residual.is_finite() || max_residual > tol::CURVATURE_REL {
        return Err(GeometryError::NotConstantCurvature {
            chart: chart.name.clone(),
            claimed: claimed.to_string(),
            max_residual,
        });
    }
    Ok(())
}

/// Normalized components of `d_i d_j G - Gamma^k_{ij} d_k G + mc g_{ij} G`
/// (the covariant Hessian of `G` plus the eigenvalue term), row-major.
pub fn hessian_residual(
    chart: &Chart,
    md: &MetricData,
    g: &Expr,
    mc: &Expr,
) -> Result<Vec<Expr>, GeometryError> {
    let n = chart.dim();
    let grads: Vec<Expr> = chart.coords.iter().map(|c| g.diff(c)).collect();
    let mut out = vec![Expr::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut terms = vec![grads[j].diff(&chart.coords[i])];
            for k in 0..n {
                let gam = md.gamma(k, i, j);
                if gam.is_zero_literal() || grads[k].is_zero_literal() {
                    continue;
                }
                terms.push(Expr::neg(Expr::mul(vec![gam.clone(), grads[k].clone()])));
            }
            if !mc.is_zero_literal() {
                terms.push(Expr::mul(vec![
                    mc.clone(),
                    md.lower(i, j).clone(),
                    g.clone(),
                ]));
            }
            let r = normalize(&Expr::add(terms))?;
            out[i * n + j] = r.clone();
            out[j * n + i] = r;
        }
    }
    Ok(out)
}

/// Eigenvalue parameters `c` for which the covariant-Hessian equation
/// `H(G) + mc gG = 0` admits nonconstant solutions on the chart: `{0}` on a
/// flat chart and `{K/m}` on a chart of constant curvature `K != 0` (the
/// `c = 0` eigenvalue then only carries constants and is excluded). The
/// chart's claimed curvature is re-verified numerically before use.
pub fn admissible_c(chart: &Chart, m: u32) -> Result<Vec<Expr>, GeometryError> {
    let claimed = chart.curvature.clone().ok_or_else(|| {
        GeometryError::NotConstantCurvature {
            chart: chart.name.clone(),
            claimed: "<none>".into(),
            max_residual: f64::NAN,
        }
    })?;
    check_constant_curvature(chart, &claimed, 0xadc, 5)?;
    let k = normalize(&claimed)?;
    if k.is_zero_literal() {
        Ok(vec![Expr::zero()])
    } else {
        Ok(vec![normalize(&Expr::mul(vec![
            Expr::ratio(1, m as i64),
            k,
        ]))?])
    }
}

/// Metric pairing of gradients `g^{ij} d_i a d_j b` (raw expression).
pub fn grad_dot(chart: &Chart, a: &Expr, b: &Expr) -> Expr {
    let n = chart.dim();
    let da: Vec<Expr> = chart.coords.iter().map(|c| a.diff(c)).collect();
    let db: Vec<Expr> = chart.coords.iter().map(|c| b.diff(c)).collect();
    let mut terms = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let g = chart.metric_inv(i, j);
            if g.is_zero_literal() || da[i].is_zero_literal() || db[j].is_zero_literal() {
                continue;
            }
            terms.push(Expr::mul(vec![g.clone(), da[i].clone(), db[j].clone()]));
        }
    }
    Expr::add(terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{equiv, parse_expression as pe};

    #[test]
    fn euclidean_is_flat_with_trivial_connection() {
        let chart = Chart::euclidean(3);
        let md = metric_data(&chart).unwrap();
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    assert!(md.gamma(k, i, j).is_zero_literal());
                }
            }
        }
        check_constant_curvature(&chart, &Expr::zero(), 3, 6).unwrap();
    }

    #[test]
    fn sphere_connection_curvature_and_gradients() {
        let chart = Chart::sphere();
        let md = metric_data(&chart).unwrap();
        assert!(equiv(md.lower(1, 1), &pe("sin(theta)^2").unwrap()));
        // theta, phi = coords 0, 1
        assert!(equiv(
            md.gamma(0, 1, 1),
            &pe("-sin(theta)*cos(theta)").unwrap()
        ));
        assert!(equiv(
            md.gamma(1, 0, 1),
            &pe("cos(theta)/sin(theta)").unwrap()
        ));
        check_constant_curvature(&chart, &Expr::one(), 5, 6).unwrap();
        // wrong claim must be rejected
        assert!(check_constant_curvature(&chart, &Expr::zero(), 5, 6).is_err());

        let gd = grad_dot(&chart, &pe("cos(theta)").unwrap(), &pe("cos(theta)").unwrap());
        assert!(equiv(&normalize(&gd).unwrap(), &pe("sin(theta)^2").unwrap()));
    }

    #[test]
    fn ttw_chart_connection_and_curvature() {
        let chart = Chart::ttw();
        let md = metric_data(&chart).unwrap();
        assert!(equiv(md.lower(1, 1), &pe("zeta*Sk(chi,x1)^2").unwrap()));
        assert!(equiv(
            md.gamma(0, 1, 1),
            &pe("-zeta*Sk(chi,x1)*Ck(chi,x1)").unwrap()
        ));
        assert!(equiv(
            md.gamma(1, 0, 1),
            &pe("Ck(chi,x1)/Sk(chi,x1)").unwrap()
        ));
        check_constant_curvature(&chart, &pe("chi").unwrap(), 7, 6).unwrap();
    }

    #[test]
    fn admissible_eigenvalues_follow_curvature() {
        for m in [1u32, 3, 5] {
            let cs = admissible_c(&Chart::euclidean(2), m).unwrap();
            assert_eq!(cs.len(), 1);
            assert!(cs[0].is_zero_literal());
        }
        let cs = admissible_c(&Chart::sphere(), 3).unwrap();
        assert!(equiv(&cs[0], &Expr::ratio(1, 3)));

        let cs = admissible_c(&Chart::ttw(), 4).unwrap();
        let mut at = std::collections::BTreeMap::new();
        at.insert(crate::expr::Symbol::new("chi"), Expr::int(-2));
        assert!(equiv(&cs[0].subst(&at), &Expr::ratio(-1, 2)));
    }

    #[test]
    fn concircular_bases_have_zero_residual() {
        // flat plane, eigenvalue 0: affine functions
        let e2 = Chart::euclidean(2);
        let md = metric_data(&e2).unwrap();
        for g in ["1", "x", "y"] {
            let res = hessian_residual(&e2, &md, &pe(g).unwrap(), &Expr::zero()).unwrap();
            assert!(res.iter().all(Expr::is_zero_literal), "failed for {g}");
        }

        // sphere, eigenvalue 1: restrictions of ambient linear functions
        let s2 = Chart::sphere();
        let md = metric_data(&s2).unwrap();
        for g in ["cos(theta)", "sin(phi)*sin(theta)", "cos(phi)*sin(theta)"] {
            let res = hessian_residual(&s2, &md, &pe(g).unwrap(), &Expr::one()).unwrap();
            assert!(res.iter().all(Expr::is_zero_literal), "failed for {g}");
        }

        // TTW chart, eigenvalue chi
        let ttw = Chart::ttw();
        let md = metric_data(&ttw).unwrap();
        for g in [
            "Ck(chi,x1)",
            "Sk(zeta,x2)*Sk(chi,x1)",
            "Ck(zeta,x2)*Sk(chi,x1)",
        ] {
            let res =
                hessian_residual(&ttw, &md, &pe(g).unwrap(), &pe("chi").unwrap()).unwrap();
            assert!(res.iter().all(Expr::is_zero_literal), "failed for {g}");
        }

        // non-solutions must not pass
        let res = hessian_residual(&s2, &md2_clone(&s2), &pe("theta").unwrap(), &Expr::one())
            .unwrap();
        assert!(!res.iter().all(Expr::is_zero_literal));
    }

    fn md2_clone(c: &Chart) -> MetricData {
        metric_data(c).unwrap()
    }
}
