//! Malliavin calculus on Poisson random measures over `[0,T] × X`:
//! configurations, difference operators, multiple integrals, chaotic and
//! pseudo-chaotic expansions, Clark–Ocone representations, Hawkes processes
//! by thinning, and Monte Carlo verification of the classical identities.

pub mod configuration;
pub mod error;
pub mod expansions;
pub mod integrals;
pub mod library;
pub mod malliavin;
pub mod measure;
pub mod montecarlo;
pub mod processes;
pub mod quadrature;
pub mod stats;

pub use configuration::{Atom, Configuration, MarkSet, TimeInterval, Window};
pub use error::{Error, Result};
pub use malliavin::Functional;
pub use measure::{MarkSpace, ProductIntensity, Seed};
