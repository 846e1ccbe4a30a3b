//! Scratch probe (not part of the test suite).

use hamext::catalog::Catalog;
use hamext::expr::{Binding, Expr, Symbol};
use hamext::extension::{extend, first_integral_closed, ExtensionSpec};
use hamext::phasepoly::{Chart, MomentumPolynomial};
use hamext::sample::Sampler;
use num_complex::Complex64;
use num_traits::ToPrimitive;
use std::collections::{BTreeMap, BTreeSet};

fn eval_scale(e: &Expr, b: &Binding) -> f64 {
    match e {
        Expr::Num(q) => q.to_complex().norm(),
        Expr::Sym(_) | Expr::Fun(..) => b.eval(e).unwrap().norm(),
        Expr::Add(ts) => ts.iter().map(|t| eval_scale(t, b)).sum(),
        Expr::Mul(fs) => fs.iter().map(|f| eval_scale(f, b)).product(),
        Expr::Pow(base, r) => {
            let rf = r.to_f64().unwrap();
            if rf >= 0.0 {
                eval_scale(base, b).powf(rf)
            } else {
                b.eval(base).unwrap().norm().powf(rf)
            }
        }
    }
}

fn eval_terms(f: &MomentumPolynomial, chart: &Chart, b: &Binding) -> (Complex64, f64, f64) {
    let mut sum = Complex64::new(0.0, 0.0);
    let mut mag = 0.0f64;
    let mut scale = 0.0f64;
    for (powers, coeff) in f.terms() {
        let mut v = b.eval(coeff).unwrap();
        let mut m = eval_scale(coeff, b);
        for (i, &e) in powers.iter().enumerate() {
            if e > 0 {
                let p = b.get(&chart.momenta[i]).unwrap();
                let pw = p.powi(e as i32);
                v *= pw;
                m *= pw.norm();
            }
        }
        sum += v;
        mag += v.norm();
        scale += m;
    }
    (sum, mag, scale)
}

fn main() {
    let cat = Catalog::load_default().unwrap();
    let entry = cat.require("ttw-profile").unwrap().clone();
    let m = 7u32;
    let row = entry.constraint("radial-and-angular").unwrap();
    let literal_m: BTreeMap<Symbol, Expr> = [(Symbol::new("m"), Expr::int(m as i64))]
        .into_iter()
        .collect();
    let assign_map: BTreeMap<Symbol, Expr> = row
        .assign
        .iter()
        .map(|(lhs, rhs)| (lhs.clone(), entry.expand(rhs).subst(&literal_m)))
        .collect();
    let v_row = entry.potential_expanded().subst(&assign_map);
    let g_raw = row.expected_g.clone().unwrap();
    let ones: BTreeMap<Symbol, Expr> = g_raw
        .symbols()
        .into_iter()
        .filter(|sym| {
            let n = sym.name();
            n.len() >= 2 && n.starts_with('a') && n[1..].chars().all(|c| c.is_ascii_digit())
        })
        .map(|sym| (sym, Expr::int(1)))
        .collect();
    let g = entry
        .expand(&g_raw)
        .subst(&ones)
        .subst(&assign_map)
        .subst(&literal_m);
    let chart = entry.chart();
    let spec = ExtensionSpec::curved(
        m,
        Expr::mul(vec![Expr::ratio(1, m as i64), Expr::var("chi")]),
        Expr::int((m * m) as i64),
    );
    let sys = extend(&chart, &v_row, &g, &spec).unwrap();
    let iterative = &sys.integrals[2].1;
    let closed = first_integral_closed(
        &sys.chart,
        &sys.l,
        &sys.gamma,
        &sys.g,
        m,
        &sys.spec.c,
        &sys.spec.l0,
    )
    .unwrap();

    let avoid: Vec<Expr> = entry
        .singular_expanded()
        .into_iter()
        .map(|e| Expr::mul(vec![Expr::ratio(1, 4), e]))
        .collect();
    let domain = entry.domain();
    let closed_e = closed.to_expr();
    let iter_e = iterative.to_expr();
    let phase: BTreeSet<Symbol> = sys.chart.phase_vars().into_iter().collect();
    let mut free: BTreeSet<Symbol> = closed_e.symbols();
    free.extend(iter_e.symbols());
    free.extend(entry.params.iter().cloned());
    free.extend(sys.base.params.iter().cloned());
    let free: Vec<Symbol> = free.into_iter().filter(|q| !phase.contains(q)).collect();
    let mut sampler = Sampler::new(0x00AC_C397 ^ (m as u64) ^ 0x2000);
    let params = sampler.bind_params(&Binding::new(), &free);
    for sym in &free {
        println!("param {:?} = {:?}", sym, params.get(sym));
    }
    let mut ratios: Vec<f64> = Vec::new();
    for i in 0..60 {
        let b = sampler.phase_binding(&sys.chart, &avoid, &params, domain);
        let (a, mag_a, scale_a) = eval_terms(&closed, &sys.chart, &b);
        let (c, mag_c, scale_c) = eval_terms(iterative, &sys.chart, &b);
        let mag = mag_a.max(mag_c);
        let ratio = (scale_a + scale_c) / (1.0 + mag);
        let rel = (a - c).norm() / (1.0 + mag);
        ratios.push(ratio);
        if i < 12 {
            println!(
                "draw {i:2}: rel {rel:9.3e}  scale/mag {ratio:9.3e}  mag {mag:9.3e}  \
                 scale {:9.3e}",
                scale_a + scale_c
            );
        }
    }
    ratios.sort_by(|x, y| x.partial_cmp(y).unwrap());
    println!(
        "ratio min {:.3e}  p25 {:.3e}  median {:.3e}  max {:.3e}",
        ratios[0],
        ratios[15],
        ratios[30],
        ratios[59]
    );
}
