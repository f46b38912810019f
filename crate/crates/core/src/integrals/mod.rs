//! Factorial measures and iterated integrals.
//!
//! `𝓘ₙ(f)` sums `f` over ordered `n`-tuples of pairwise-distinct atoms (the
//! factorial measure `N⁽ⁿ⁾`). `Iₙ(f)` is its compensated counterpart, evaluated
//! pathwise through the alternating subset sum
//!
//! ```text
//! Iₙ(f) = Σ_{J ⊆ {1..n}} (−1)^{n−|J|} ∫∫ f  N^{(|J|)}(dx_J) ρ^{⊗(n−|J|)}(dx_{J^c})
//! ```
//!
//! with `∫ … N⁽⁰⁾ := 1`. Both evaluators use compensated summation.

mod kernel;

use std::sync::Arc;

use itertools::Itertools;
use rand::SeedableRng;
use serde::Serialize;

pub use kernel::{
    FnKernel, GaussKernel, Kernel, KernelRef, LinearCombination, Marginal, Monomial, Section, Squared, Symmetrized,
    TensorIndicator, MAX_SYMMETRIZE_ORDER,
};

use crate::configuration::{Atom, Configuration};
use crate::error::{Error, Result};
use crate::measure::{integrate_slots, IntegrationOptions, Method, ProductIntensity, Seed};
use crate::stats::Accumulator;

/// Default cap on the number of factorial tuples visited by one evaluation.
pub const DEFAULT_TERM_BUDGET: u128 = 10_000_000;

/// `k (k−1) ⋯ (k−n+1)`.
pub fn falling_factorial(k: usize, n: usize) -> u128 {
    if n > k {
        return 0;
    }
    ((k - n + 1)..=k).map(|v| v as u128).product()
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i as u128 + 1))
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).map(|v| v as f64).product()
}

/// All ordered `n`-tuples of pairwise-distinct atoms of `ω`.
pub fn factorial_tuples(omega: &Configuration, n: usize) -> impl Iterator<Item = Vec<Atom>> + '_ {
    let atoms = omega.atoms();
    (0..atoms.len()).permutations(n).map(move |idx| idx.iter().map(|&i| atoms[i]).collect())
}

/// All `n`-subsets of atoms of `ω` in lexicographic index order.
pub fn atom_subsets(omega: &Configuration, n: usize) -> impl Iterator<Item = Vec<Atom>> + '_ {
    let atoms = omega.atoms();
    (0..atoms.len()).combinations(n).map(move |idx| idx.iter().map(|&i| atoms[i]).collect())
}

/// `(1/n!) 𝓘ₙ(f)` for a symmetric `f`: one term per unordered subset.
pub(crate) fn subset_sum(f: &dyn Kernel, omega: &Configuration, budget: u128) -> Result<f64> {
    let n = f.order();
    let terms = binomial(omega.len(), n);
    if terms > budget {
        return Err(Error::BudgetExceeded { terms, budget });
    }
    Ok(atom_subsets(omega, n).map(|t| f.eval(&t)).collect::<Accumulator>().sum())
}

/// `𝓘ₙ(f)(ω)` with the default term budget.
pub fn eval_uncompensated(f: &dyn Kernel, omega: &Configuration) -> Result<f64> {
    eval_uncompensated_with_budget(f, omega, DEFAULT_TERM_BUDGET)
}

/// `𝓘ₙ(f)(ω) = ∫ f dN⁽ⁿ⁾`. Symmetric kernels are summed over subsets and
/// multiplied by `n!`; others over all ordered tuples.
pub fn eval_uncompensated_with_budget(f: &dyn Kernel, omega: &Configuration, budget: u128) -> Result<f64> {
    let n = f.order();
    if f.symmetric() {
        return Ok(factorial(n) * subset_sum(f, omega, budget)?);
    }
    let terms = falling_factorial(omega.len(), n);
    if terms > budget {
        return Err(Error::BudgetExceeded { terms, budget });
    }
    Ok(factorial_tuples(omega, n).map(|t| f.eval(&t)).collect::<Accumulator>().sum())
}

/// Value of a compensated integral with the error carried by Monte Carlo marginals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompensatedValue {
    pub value: f64,
    /// Sum of `|coefficient| × stderr` over Monte Carlo marginals; zero when
    /// every marginal was closed form or quadrature.
    pub stderr: f64,
    pub monte_carlo: bool,
}

/// `Iₙ(f)(ω)` using closed-form or quadrature marginals only.
pub fn eval_compensated(f: &dyn Kernel, omega: &Configuration, rho: &ProductIntensity) -> Result<f64> {
    let opts = IntegrationOptions::exact_only();
    Ok(eval_compensated_with(f, omega, rho, &opts, DEFAULT_TERM_BUDGET)?.value)
}

/// `Iₙ(f)(ω)` via the subset formula, with configurable marginal integration.
pub fn eval_compensated_with(
    f: &dyn Kernel,
    omega: &Configuration,
    rho: &ProductIntensity,
    opts: &IntegrationOptions,
    budget: u128,
) -> Result<CompensatedValue> {
    let n = f.order();
    let mut acc = Accumulator::default();
    let mut err = 0.0;
    let mut monte_carlo = false;
    let mut visited: u128 = 0;
    let mut add = |coef: f64, slots: &[Option<Atom>], acc: &mut Accumulator| -> Result<()> {
        let integral = integrate_slots(f, slots, rho, opts)?;
        if integral.method == Method::MonteCarlo {
            monte_carlo = true;
            err += coef.abs() * integral.stderr;
        }
        acc.add(coef * integral.value);
        Ok(())
    };
    if f.symmetric() {
        for j in 0..=n {
            let terms = binomial(omega.len(), j);
            visited += terms;
            if visited > budget {
                return Err(Error::BudgetExceeded { terms: visited, budget });
            }
            // C(n, j) placements of the N-slots times j! orderings of each subset
            let coef = sign(n - j) * binomial(n, j) as f64 * factorial(j);
            for tuple in atom_subsets(omega, j) {
                let slots: Vec<Option<Atom>> =
                    std::iter::repeat_n(None, n - j).chain(tuple.into_iter().map(Some)).collect();
                add(coef, &slots, &mut acc)?;
            }
        }
    } else {
        for mask in 0u32..(1u32 << n) {
            let positions: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
            let j = positions.len();
            visited += falling_factorial(omega.len(), j);
            if visited > budget {
                return Err(Error::BudgetExceeded { terms: visited, budget });
            }
            let coef = sign(n - j);
            for tuple in factorial_tuples(omega, j) {
                let mut slots = vec![None; n];
                for (&p, a) in positions.iter().zip(tuple) {
                    slots[p] = Some(a);
                }
                add(coef, &slots, &mut acc)?;
            }
        }
    }
    Ok(CompensatedValue { value: acc.sum(), stderr: err, monte_carlo })
}

fn sign(k: usize) -> f64 {
    if k % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// `f̃`.
pub fn symmetrize(f: KernelRef) -> Result<KernelRef> {
    Ok(Arc::new(Symmetrized::new(f)?))
}

/// Which family of iterated integrals a [`Decomposition`] is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegralKind {
    Compensated,
    Uncompensated,
}

/// `c + Σ_{j=1..n} J_j(g_j)` where `J` is `I` or `𝓘` according to `kind`.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub kind: IntegralKind,
    /// The order-0 term.
    pub constant: f64,
    /// `kernels[j − 1]` is `g_j`.
    pub kernels: Vec<KernelRef>,
}

impl Decomposition {
    pub fn order(&self) -> usize {
        self.kernels.len()
    }

    pub fn evaluate(&self, omega: &Configuration, rho: &ProductIntensity) -> Result<f64> {
        let mut acc = Accumulator::default();
        acc.add(self.constant);
        for g in &self.kernels {
            acc.add(match self.kind {
                IntegralKind::Compensated => eval_compensated(g.as_ref(), omega, rho)?,
                IntegralKind::Uncompensated => eval_uncompensated(g.as_ref(), omega)?,
            });
        }
        Ok(acc.sum())
    }
}

pub type CompensatedDecomposition = Decomposition;

fn closed_total(f: &dyn Kernel, rho: &ProductIntensity) -> Result<f64> {
    f.integrate_slots(&vec![None; f.order()], rho)
        .ok_or_else(|| Error::IntegrationUnavailable(format!("kernel `{}` has no closed-form integral", f.name())))
}

fn require_symmetric(f: &dyn Kernel) -> Result<()> {
    if f.symmetric() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("kernel `{}` must be symmetric; symmetrize it first", f.name())))
    }
}

/// `𝓘ₙ(f) = Σ_{j=0..n} I_j(g_j)` with `g_j = C(n,j) ∫ f(y₁..y_{n−j}, ·) dρ^{⊗(n−j)}`.
pub fn to_compensated(f: KernelRef, rho: &ProductIntensity) -> Result<Decomposition> {
    convert(f, rho, IntegralKind::Compensated)
}

/// `Iₙ(f) = Σ_{k=0..n} 𝓘_k(g_k)` with `g_k = C(n,k) (−1)^{n−k} ∫ f(y₁..y_{n−k}, ·) dρ^{⊗(n−k)}`.
pub fn to_uncompensated(f: KernelRef, rho: &ProductIntensity) -> Result<Decomposition> {
    convert(f, rho, IntegralKind::Uncompensated)
}

fn convert(f: KernelRef, rho: &ProductIntensity, target: IntegralKind) -> Result<Decomposition> {
    require_symmetric(f.as_ref())?;
    let n = f.order();
    let total = closed_total(f.as_ref(), rho)?;
    let coef = |j: usize| -> f64 {
        let c = binomial(n, j) as f64;
        match target {
            IntegralKind::Compensated => c,
            IntegralKind::Uncompensated => sign(n - j) * c,
        }
    };
    let mut kernels: Vec<KernelRef> = Vec::with_capacity(n);
    for j in 1..=n {
        if j == n {
            kernels.push(f.clone());
        } else {
            kernels.push(Arc::new(Marginal::new(f.clone(), n - j, coef(j), rho)?));
        }
    }
    Ok(Decomposition { kind: target, constant: coef(0) * total, kernels })
}

/// `‖f‖²_{L²(ρ^{⊗n})}`: closed form when the kernel has one, quadrature otherwise.
pub fn l2_norm_squared(f: KernelRef, rho: &ProductIntensity, opts: &IntegrationOptions) -> Result<f64> {
    if let Some(v) = f.squared_norm(rho) {
        return Ok(v);
    }
    crate::measure::rho_integral(&Squared(f), rho, opts).map(|i| i.value)
}

/// Spot-checks a kernel's declared properties on random tuples:
/// symmetry under all permutations, and agreement of closed-form partial
/// integrals with breakpoint-aware quadrature (orders ≤ 3, small grids only).
pub fn validate_kernel(f: &dyn Kernel, rho: &ProductIntensity, seed: Seed) -> Result<()> {
    let n = f.order();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed.0);
    let tuples: Vec<Vec<Atom>> =
        (0..16).map(|_| (0..n).map(|_| rho.sample_atom(&mut rng)).collect()).collect();
    if f.symmetric() && n <= MAX_SYMMETRIZE_ORDER {
        for t in &tuples {
            let base = f.eval(t);
            for p in (0..n).permutations(n) {
                let permuted: Vec<Atom> = p.iter().map(|&i| t[i]).collect();
                let v = f.eval(&permuted);
                if (v - base).abs() > 1e-12 * (1.0 + base.abs()) {
                    return Err(Error::AnnotationMismatch {
                        functional: f.name(),
                        annotation: "symmetric",
                        deviation: (v - base).abs(),
                    });
                }
            }
        }
    }
    if n > 3 || !f.smooth() {
        return Ok(());
    }
    let opts = IntegrationOptions {
        nodes_per_axis: 8,
        max_evaluations: 2_000_000,
        monte_carlo: None,
        ..IntegrationOptions::default()
    };
    let breaks = f.breakpoints();
    let axis = crate::measure::slot_nodes(rho, opts.nodes_per_axis, breaks.as_ref());
    for free in 1..=n {
        if (axis.len() as f64).powi(free as i32) > opts.max_evaluations as f64 {
            continue;
        }
        for t in tuples.iter().take(4) {
            let slots: Vec<Option<Atom>> =
                (0..n).map(|i| if i < free { None } else { Some(t[i]) }).collect();
            let Some(closed) = f.integrate_slots(&slots, rho) else {
                return Ok(());
            };
            let quad = quadrature_only(f, &slots, &axis);
            if (closed - quad).abs() > 1e-8 * (closed.abs().max(quad.abs()).max(1e-300)) && (closed - quad).abs() > 1e-12 {
                return Err(Error::AnnotationMismatch {
                    functional: f.name(),
                    annotation: "closed-form partial integral",
                    deviation: (closed - quad).abs(),
                });
            }
        }
    }
    Ok(())
}

fn quadrature_only(f: &dyn Kernel, slots: &[Option<Atom>], axis: &[(Atom, f64)]) -> f64 {
    let free: Vec<usize> = (0..slots.len()).filter(|&i| slots[i].is_none()).collect();
    let mut args: Vec<Atom> = slots.iter().map(|s| s.unwrap_or(Atom::new(0.0, 0.0))).collect();
    let mut acc = Accumulator::default();
    let mut idx = vec![0usize; free.len()];
    loop {
        let mut w = 1.0;
        for (k, &slot) in free.iter().enumerate() {
            args[slot] = axis[idx[k]].0;
            w *= axis[idx[k]].1;
        }
        acc.add(w * f.eval(&args));
        let mut k = 0;
        loop {
            if k == idx.len() {
                return acc.sum();
            }
            idx[k] += 1;
            if idx[k] < axis.len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}
