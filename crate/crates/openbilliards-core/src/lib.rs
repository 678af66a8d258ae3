//! Open dispersing billiards at arbitrary precision.
//!
//! The crate implements both directions of a dynamical inverse problem for
//! planar billiards in the exterior of convex analytic obstacles:
//!
//! * **forward** — geometry → periodic orbits → marked length and Lyapunov
//!   spectra (`geometry`, `dynamics`, `coding`, `solver`, `spectra`), plus the
//!   Birkhoff normal form / gluing data that serve as ground truth
//!   (`normalform`);
//! * **inverse** — spectrum tables → base invariants, curvature radii,
//!   normal-form coefficients, and the homoclinic scale (`series`,
//!   `extraction`).
//!
//! All numerics run on MPFR floats ([`hp::Hp`]) at caller-chosen precision;
//! the formal-series engine also runs on exact rationals for identity checks.

pub mod coding;
pub mod dynamics;
pub mod geometry;
pub mod hp;
pub mod jets;
pub mod series;
pub mod solver;
pub mod spectra;

pub use coding::AdmissibleWord;
pub use dynamics::PhasePoint;
pub use geometry::{CurveSpec, Scatterer, Table};
pub use hp::{Hp, Mat2, Rat, Scalar};
