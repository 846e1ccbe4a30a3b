//! Seeded drawing of phase-space points.
//!
//! Every probabilistic check in the crate draws its points through this
//! module so that test runs are reproducible. Points are drawn uniformly
//! from the chart's per-coordinate boxes and rejected while any singular
//! expression (chart-level or system-level) evaluates within
//! [`crate::tol::SINGULAR_MARGIN`] of zero.

use crate::expr::{Binding, Expr};
use crate::phasepoly::{Chart, PhasePoint};
use crate::tol;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Default momentum interval when a caller has no better choice.
pub const MOMENTUM_BOX: (f64, f64) = (-1.3, 1.3);

/// Maximum rejection attempts per requested point.
const MAX_TRIES: usize = 400;

/// Whether coordinates (and free parameters) are drawn on the real line or
/// in a complex strip around it. Momenta stay real either way: integrals are
/// polynomial in the momenta, so real momentum draws already separate their
/// coefficient functions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Real,
    Complex,
}

impl serde::Serialize for Domain {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(match self {
            Domain::Real => "real",
            Domain::Complex => "complex",
        })
    }
}

/// Deterministic point source.
pub struct Sampler {
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(seed: u64) -> Self {
        Sampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.gen_range(lo..hi)
    }

    /// Uniform draw avoiding a neighborhood of zero; handy for parameters
    /// that must stay generic.
    pub fn nonzero(&mut self, lo: f64, hi: f64) -> f64 {
        loop {
            let v = self.uniform(lo, hi);
            if v.abs() > tol::SINGULAR_MARGIN {
                return v;
            }
        }
    }

    /// Draw a phase point inside the chart boxes, rejecting draws where any
    /// of the chart's singular expressions or `extra_singular` comes within
    /// the margin of zero. `params` must bind every non-coordinate symbol
    /// appearing in the singular expressions.
    pub fn phase_point(
        &mut self,
        chart: &Chart,
        extra_singular: &[Expr],
        params: &Binding,
    ) -> PhasePoint {
        't: for _ in 0..MAX_TRIES {
            let q: Vec<f64> = chart
                .boxes
                .iter()
                .map(|&(lo, hi)| self.uniform(lo, hi))
                .collect();
            let p: Vec<f64> = (0..chart.dim())
                .map(|_| self.uniform(MOMENTUM_BOX.0, MOMENTUM_BOX.1))
                .collect();
            let pt = PhasePoint::new(q, p);
            let bind = match chart.bind_point(&pt, params) {
                Ok(b) => b,
                Err(_) => continue,
            };
            for s in chart.singular.iter().chain(extra_singular) {
                match bind.eval(s) {
                    Ok(v) if v.norm() > tol::SINGULAR_MARGIN && v.norm().is_finite() => {}
                    _ => continue 't,
                }
            }
            return pt;
        }
        panic!(
            "could not draw a regular point on chart {} after {} tries",
            chart.name, MAX_TRIES
        );
    }

    /// Like [`Sampler::phase_point`] but with momenta set to zero; useful
    /// for configuration-only residuals.
    pub fn config_point(
        &mut self,
        chart: &Chart,
        extra_singular: &[Expr],
        params: &Binding,
    ) -> PhasePoint {
        let mut pt = self.phase_point(chart, extra_singular, params);
        pt.p.iter_mut().for_each(|x| *x = 0.0);
        pt
    }

    /// Bind chart coordinates (momenta left unbound) to a draw from the
    /// boxes, with an imaginary offset in the complex domain, rejecting
    /// draws near the singular sets. For configuration-only residuals.
    pub fn config_binding(
        &mut self,
        chart: &Chart,
        extra_singular: &[Expr],
        params: &Binding,
        domain: Domain,
    ) -> Binding {
        self.draw_binding(chart, extra_singular, params, domain, false)
    }

    /// Like [`Sampler::config_binding`] but with real momenta from
    /// [`MOMENTUM_BOX`] bound as well.
    pub fn phase_binding(
        &mut self,
        chart: &Chart,
        extra_singular: &[Expr],
        params: &Binding,
        domain: Domain,
    ) -> Binding {
        self.draw_binding(chart, extra_singular, params, domain, true)
    }

    fn draw_binding(
        &mut self,
        chart: &Chart,
        extra_singular: &[Expr],
        params: &Binding,
        domain: Domain,
        with_momenta: bool,
    ) -> Binding {
        't: for _ in 0..MAX_TRIES {
            let mut b = params.clone();
            for (c, &(lo, hi)) in chart.coords.iter().zip(&chart.boxes) {
                let re = self.uniform(lo, hi);
                let im = match domain {
                    Domain::Real => 0.0,
                    Domain::Complex => self.uniform(-0.5, 0.5),
                };
                b.set_sym(c, Complex64::new(re, im));
            }
            if with_momenta {
                for m in &chart.momenta {
                    b.set_sym(m, Complex64::new(self.uniform(MOMENTUM_BOX.0, MOMENTUM_BOX.1), 0.0));
                }
            }
            for s in chart.singular.iter().chain(extra_singular) {
                match b.eval(s) {
                    Ok(v) if v.norm() > tol::SINGULAR_MARGIN && v.norm().is_finite() => {}
                    _ => continue 't,
                }
            }
            return b;
        }
        panic!(
            "could not draw a regular point on chart {} after {} tries",
            chart.name, MAX_TRIES
        );
    }

    /// Bind each listed symbol to a fresh real value of moderate magnitude
    /// (0.4..1.6 with random sign), on top of `base`.
    pub fn bind_params(
        &mut self,
        base: &Binding,
        symbols: &[crate::expr::Symbol],
    ) -> Binding {
        self.bind_params_in(base, symbols, Domain::Real)
    }

    /// [`Sampler::bind_params`] with a domain choice: complex draws add an
    /// imaginary component of comparable magnitude.
    pub fn bind_params_in(
        &mut self,
        base: &Binding,
        symbols: &[crate::expr::Symbol],
        domain: Domain,
    ) -> Binding {
        let mut b = base.clone();
        for s in symbols {
            if b.get(s).is_some() {
                continue;
            }
            let mag = self.uniform(0.4, 1.6);
            let sign = if self.rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let im = match domain {
                Domain::Real => 0.0,
                Domain::Complex => self.uniform(-0.9, 0.9),
            };
            b.set_sym(s, Complex64::new(sign * mag, im));
        }
        b
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expression as pe;

    #[test]
    fn draws_are_reproducible_and_regular() {
        let chart = Chart::sphere();
        let params = Binding::new();
        let mut s1 = Sampler::new(7);
        let mut s2 = Sampler::new(7);
        for _ in 0..20 {
            let a = s1.phase_point(&chart, &[], &params);
            let b = s2.phase_point(&chart, &[], &params);
            assert_eq!(a, b);
            assert!(a.q[0].sin().abs() > tol::SINGULAR_MARGIN);
        }
    }

    #[test]
    fn extra_singular_sets_are_respected() {
        let chart = Chart::euclidean(2);
        let params = Binding::new();
        let avoid = [pe("x").unwrap(), pe("y").unwrap(), pe("x - y").unwrap()];
        let mut s = Sampler::new(11);
        for _ in 0..50 {
            let pt = s.phase_point(&chart, &avoid, &params);
            assert!(pt.q[0].abs() > tol::SINGULAR_MARGIN);
            assert!(pt.q[1].abs() > tol::SINGULAR_MARGIN);
            assert!((pt.q[0] - pt.q[1]).abs() > tol::SINGULAR_MARGIN);
        }
    }
}
