//! Symbolic and numerical workbench for building *extensions* of natural
//! Hamiltonian systems: given an n-degree-of-freedom Hamiltonian
//! `L = 1/2 g^{ij} p_i p_j + V(q)` on a (pseudo-)Riemannian manifold, the
//! crate constructs the (n+1)-degree-of-freedom Hamiltonian
//!
//! ```text
//! H = 1/2 p_u^2 + alpha(u) L + f(u)
//! ```
//!
//! together with a polynomial first integral `U^m(G)`, where
//! `U = p_u + gamma(u) X_L` and `G(q)` solves a metric Hessian equation plus a
//! compatibility equation against `V`. The construction turns superintegrable
//! systems into superintegrable systems with one extra degree of freedom.
//!
//! The crate is organised in layers:
//!
//! * [`expr`] — exact symbolic scalar expressions: Gaussian-rational
//!   constants, a small function set (`sin`, `cos`, `sinh`, `cosh`, `exp`,
//!   `sqrt`, and the curvature-parametrised pair `Sk`/`Ck`), parsing,
//!   deterministic printing, differentiation, complex evaluation and a
//!   canonical normal form strong enough to certify the operator identities
//!   used by the closed-form integrals.
//! * [`phasepoly`] — polynomials in the momenta with symbolic coefficients
//!   over a coordinate chart, Poisson brackets, and JSON serialization.
//! * [`geometry`] — Christoffel symbols, curvature, the Hessian-type
//!   equation for `G`, and the admissible eigenvalue constants on
//!   constant-curvature charts.
//! * [`extension`] — the extension construction itself: `gamma(u)`, both
//!   branches of `H`, the iterative and closed forms of `U^m(G)`, sampled
//!   nullspace solving of the compatibility equation, and iterated chains.
//! * [`catalog`] — the bundled library of two-dimensional superintegrable
//!   potentials (flat `E1`–`E20`, spherical `S1`–`S9`), the Calogero and
//!   Wolfes three-body systems, oscillator chains and the
//!   Tremblay–Turbiner–Winternitz family, plus scan drivers that recover
//!   which members admit extensions.
//! * [`verify`] — numerical certification: seeded Poisson-bracket residuals,
//!   functional-independence ranks, and conservation drift along adaptively
//!   integrated trajectories.
//!
//! Everything numerical is deterministic for a fixed seed: sampling uses a
//! counter-based ChaCha stream and all linear algebra is single-threaded.

pub mod catalog;
pub mod expr;
pub mod extension;
pub mod geometry;
pub mod phasepoly;
pub mod sample;
pub mod tol;
pub mod verify;

pub use expr::{Binding, Expr, ExprError, Func, Symbol};
pub use phasepoly::{Chart, ChartFamily, MomentumPolynomial, PhasePoint};
