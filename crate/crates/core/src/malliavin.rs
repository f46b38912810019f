//! Pathwise difference operators on Poisson functionals.
//!
//! * `D_a F(ω) = F(ω + δ_a) − F(ω)` (add-one cost),
//! * `Dⁿ_{a₁..aₙ} F(ω) = Σ_{J ⊆ {1..n}} (−1)^{n−|J|} F(ω + Σ_{j∈J} δ_{a_j})`,
//! * `𝒯ₙ F = Dⁿ F (ω_∅)`,
//! * `ℋ_{(t,x)} F(ω) = D_{(t,x)} F(τ_t ω)`, the integrand of the
//!   representation against the non-compensated measure.

use std::fmt;
use std::sync::Arc;

use crate::configuration::{Atom, Configuration};
use crate::error::{Error, Result};
use crate::integrals::KernelRef;
use crate::measure::{assemble, ProductIntensity, Seed};
use crate::montecarlo::replicate;
use crate::stats::{Accumulator, Estimate};

/// Default ceiling on the order of inclusion–exclusion sums (`2ⁿ` evaluations).
pub const DEFAULT_MAX_ORDER: usize = 12;

pub type EvalFn = Arc<dyn Fn(&Configuration) -> f64 + Send + Sync>;
pub type PseudoKernelFn = Arc<dyn Fn(&[Atom]) -> f64 + Send + Sync>;
pub type ProjectionFn = Arc<dyn Fn(&Configuration, &Atom) -> f64 + Send + Sync>;
pub type MarkIntegralFn = Arc<dyn Fn(&Configuration, f64) -> f64 + Send + Sync>;

/// Closed-form chaos kernels `T₁F, T₂F, …` of the compensated expansion.
#[derive(Clone, Debug)]
pub struct ChaosKernels {
    /// `kernels[n − 1]` is `TₙF`.
    pub kernels: Vec<KernelRef>,
    /// Whether `TₙF = 0` for every order beyond the listed ones.
    pub complete: bool,
}

/// Closed-form predictable projection `(D_{(t,x)} F)^p`.
#[derive(Clone)]
pub struct Projection {
    /// `(ω, (t, x)) ↦ Z^p(ω, t, x)`; must only look at atoms of `ω` before `t`.
    pub eval: ProjectionFn,
    /// `(ω, t) ↦ ∫_X Z^p(ω, t, x) π(dx)`.
    pub mark_integral: MarkIntegralFn,
    /// Times other than atom times where `t ↦ Z^p` may be non-smooth.
    pub breakpoints: Vec<f64>,
}

/// A Poisson functional `F: Ω → ℝ` with optional closed-form annotations.
#[derive(Clone)]
pub struct Functional {
    name: String,
    eval: EvalFn,
    mean: Option<f64>,
    pseudo_kernels: Option<PseudoKernelFn>,
    chaos: Option<ChaosKernels>,
    projection: Option<Projection>,
}

impl fmt::Debug for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Functional")
            .field("name", &self.name)
            .field("mean", &self.mean)
            .field("pseudo_kernels", &self.pseudo_kernels.is_some())
            .field("chaos", &self.chaos.as_ref().map(|c| c.kernels.len()))
            .field("projection", &self.projection.is_some())
            .finish()
    }
}

impl Functional {
    pub fn new(name: impl Into<String>, eval: impl Fn(&Configuration) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            eval: Arc::new(eval),
            mean: None,
            pseudo_kernels: None,
            chaos: None,
            projection: None,
        }
    }

    /// The constant functional.
    pub fn constant(c: f64) -> Self {
        let zero: PseudoKernelFn = Arc::new(|_: &[Atom]| 0.0);
        Self::new(format!("const:{c}"), move |_| c)
            .with_mean(c)
            .with_pseudo_kernels(move |args| if args.is_empty() { c } else { zero(args) })
            .with_chaos(Vec::new(), true)
    }

    pub fn with_mean(mut self, mean: f64) -> Self {
        self.mean = Some(mean);
        self
    }

    /// Closed form of `𝒯ₙF(a₁..aₙ)` for every `n`, including `n = 0`.
    pub fn with_pseudo_kernels(mut self, f: impl Fn(&[Atom]) -> f64 + Send + Sync + 'static) -> Self {
        self.pseudo_kernels = Some(Arc::new(f));
        self
    }

    pub fn with_chaos(mut self, kernels: Vec<KernelRef>, complete: bool) -> Self {
        self.chaos = Some(ChaosKernels { kernels, complete });
        self
    }

    pub fn with_projection(mut self, projection: Projection) -> Self {
        self.projection = Some(projection);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, omega: &Configuration) -> f64 {
        (self.eval)(omega)
    }

    pub fn mean(&self) -> Option<f64> {
        self.mean
    }

    pub fn pseudo_kernels(&self) -> Option<&PseudoKernelFn> {
        self.pseudo_kernels.as_ref()
    }

    pub fn chaos(&self) -> Option<&ChaosKernels> {
        self.chaos.as_ref()
    }

    pub fn projection(&self) -> Option<&Projection> {
        self.projection.as_ref()
    }

    /// The same evaluation map with every annotation dropped.
    pub fn bare(&self) -> Functional {
        Functional { name: self.name.clone(), eval: self.eval.clone(), mean: None, pseudo_kernels: None, chaos: None, projection: None }
    }

    /// `ω ↦ G(F(ω))`.
    pub fn map(&self, name: impl Into<String>, g: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Functional {
        let eval = self.eval.clone();
        Functional::new(name, move |w| g(eval(w)))
    }

    /// Cross-validates every annotation against brute force; see
    /// [`crate::expansions::validate_annotations`].
    pub fn validated(self, rho: &ProductIntensity) -> Result<Self> {
        crate::expansions::validate_annotations(&self, rho, Seed(0x00a1_1ce5))?;
        Ok(self)
    }
}

/// `D_a F(ω)`.
pub fn difference(f: &Functional, omega: &Configuration, a: Atom) -> Result<f64> {
    let plus = omega.with_atom(a)?;
    Ok(f.eval(&plus) - f.eval(omega))
}

/// `Dⁿ_{a₁..aₙ} F(ω)` with the default order ceiling.
pub fn iterated_difference(f: &Functional, omega: &Configuration, tuple: &[Atom]) -> Result<f64> {
    iterated_difference_with_max(f, omega, tuple, DEFAULT_MAX_ORDER)
}

/// Inclusion–exclusion over the `2ⁿ` subsets of the tuple, enumerated by a
/// binary counter and accumulated in counter order.
pub fn iterated_difference_with_max(
    f: &Functional,
    omega: &Configuration,
    tuple: &[Atom],
    max_order: usize,
) -> Result<f64> {
    let n = tuple.len();
    if n > max_order || n >= usize::BITS as usize {
        return Err(Error::OrderTooLarge { order: n, max: max_order });
    }
    let mut acc = Accumulator::default();
    let mut subset = Vec::with_capacity(n);
    for mask in 0usize..(1usize << n) {
        subset.clear();
        subset.extend((0..n).filter(|i| mask >> i & 1 == 1).map(|i| tuple[i]));
        let value = f.eval(&omega.add_points(&subset)?);
        if (n - subset.len()) % 2 == 0 {
            acc.add(value);
        } else {
            acc.add(-value);
        }
    }
    Ok(acc.sum())
}

/// `𝒯ₙF(a₁..aₙ) = DⁿF(ω_∅)`; `𝒯₀F = F(ω_∅)`.
pub fn deterministic_diff(f: &Functional, tuple: &[Atom], horizon: f64) -> Result<f64> {
    iterated_difference(f, &Configuration::empty(horizon), tuple)
}

/// `𝒯ₙF` from the closed-form annotation when present, by brute force otherwise.
pub fn pseudo_kernel(f: &Functional, tuple: &[Atom], horizon: f64) -> Result<f64> {
    match f.pseudo_kernels() {
        Some(k) => {
            if tuple.len() > DEFAULT_MAX_ORDER {
                return Err(Error::OrderTooLarge { order: tuple.len(), max: DEFAULT_MAX_ORDER });
            }
            Ok(k(tuple))
        }
        None => deterministic_diff(f, tuple, horizon),
    }
}

/// `ℋ_{(t,x)}F(ω) = F(τ_t ω + δ_{(t,x)}) − F(τ_t ω)`.
pub fn pco_integrand(f: &Functional, omega: &Configuration, a: Atom) -> Result<f64> {
    let past = omega.truncate_before(a.t)?;
    difference(f, &past, a)
}

/// `L^{T,t}(ω) = exp((T − t) π(X)) · 1{ω has no atom in [t, T] × X}`.
pub fn girsanov_weight(omega: &Configuration, t: f64, rho: &ProductIntensity) -> Result<f64> {
    let horizon = rho.horizon();
    if !(0.0..=horizon).contains(&t) {
        return Err(Error::AtomOutOfWindow { t, horizon });
    }
    if omega.atoms().iter().any(|a| a.t >= t) {
        Ok(0.0)
    } else {
        Ok(((horizon - t) * rho.marks().total_mass()).exp())
    }
}

/// `𝔼_{t−}[G](ω)` by nested resampling: `G(τ_t ω + N')` averaged over `m`
/// fresh Poisson samples `N'` on `[t, T] × X`. Exact in law because Poisson
/// increments on disjoint windows are independent.
pub fn conditional_expectation_of(
    g: impl Fn(&Configuration) -> f64 + Sync,
    omega: &Configuration,
    t: f64,
    rho: &ProductIntensity,
    m: usize,
    seed: Seed,
) -> Result<Estimate> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!("conditional expectation needs m ≥ 2 replications, got {m}")));
    }
    let past = omega.truncate_before(t)?;
    let values = replicate(m, seed, |_, rng| {
        let mut atoms = past.atoms().to_vec();
        atoms.extend(rho.sample_atoms_between(rng, t, rho.horizon()));
        g(&assemble(atoms, rho.horizon()))
    });
    Ok(Estimate::from_samples(&values))
}

/// `𝔼_{t−}[F](ω)`.
pub fn conditional_expectation(
    f: &Functional,
    omega: &Configuration,
    t: f64,
    rho: &ProductIntensity,
    m: usize,
    seed: Seed,
) -> Result<Estimate> {
    conditional_expectation_of(|w| f.eval(w), omega, t, rho, m, seed)
}

/// Nested Monte Carlo estimate of `𝔼_{t−}[L^{T,t} D_{(t,x)} F](ω)`, which
/// equals `ℋ_{(t,x)}F(ω)`.
pub fn girsanov_difference_estimate(
    f: &Functional,
    omega: &Configuration,
    a: Atom,
    rho: &ProductIntensity,
    m: usize,
    seed: Seed,
) -> Result<Estimate> {
    rho.check_atom(&a)?;
    conditional_expectation_of(
        |w| {
            let weight = girsanov_weight(w, a.t, rho).unwrap_or(0.0);
            if weight == 0.0 {
                0.0
            } else {
                weight * difference(f, w, a).unwrap_or(f64::NAN)
            }
        },
        omega,
        a.t,
        rho,
        m,
        seed,
    )
}

/// Nested Monte Carlo estimate of the predictable projection `𝔼_{t−}[D_{(t,x)}F](ω)`.
pub fn projection_estimate(
    f: &Functional,
    omega: &Configuration,
    a: Atom,
    rho: &ProductIntensity,
    m: usize,
    seed: Seed,
) -> Result<Estimate> {
    rho.check_atom(&a)?;
    conditional_expectation_of(|w| difference(f, w, a).unwrap_or(f64::NAN), omega, a.t, rho, m, seed)
}
