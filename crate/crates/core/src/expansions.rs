//! Executable forms of the representation theorems:
//!
//! * pseudo-chaotic expansion `F = F(ω_∅) + Σ_k (1/k!) 𝓘_k(𝒯_k F)`,
//! * chaotic expansion `F = 𝔼F + Σ_n (1/n!) Iₙ(TₙF)`,
//! * pseudo-Clark–Ocone `F = F(ω_∅) + ∫ ℋ_{(t,x)}F N(dt,dx)`,
//! * Clark–Ocone `F = 𝔼F + ∫ (D_{(t,x)}F)^p Ñ(dt,dx)`,
//! * the nested-window construction for intensities of infinite mass.
//!
//! The pseudo-Clark–Ocone sum telescopes atom by atom, so its residual is a
//! pure floating-point quantity on every path (ties in atom times excepted,
//! which have probability zero).

use rand::SeedableRng;
use rayon::prelude::*;
use serde::Serialize;

use crate::configuration::{Atom, Configuration, Window};
use crate::error::{Error, Result};
use crate::integrals::{atom_subsets, eval_compensated, factorial};
use crate::malliavin::{deterministic_diff, pco_integrand, pseudo_kernel, Functional, DEFAULT_MAX_ORDER};
use crate::measure::{ProductIntensity, Seed};
use crate::montecarlo::replicate;
use crate::quadrature::gauss_legendre_on;
use crate::stats::{Accumulator, Estimate};

/// Relative residual tolerance: `|r| < tol · (1 + |F(ω)|)`.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// Gauss–Legendre nodes per piece of the compensator integral.
pub const DEFAULT_PIECE_NODES: usize = 16;

pub fn within_tolerance(residual: f64, value: f64, tol: f64) -> bool {
    residual.abs() < tol * (1.0 + value.abs())
}

/// Partial sums of an expansion evaluated on one configuration.
#[derive(Debug, Clone, Serialize)]
pub struct ExpansionReport {
    pub functional: String,
    pub kind: &'static str,
    pub atoms: usize,
    pub value: f64,
    /// `terms[k]` is the order-`k` contribution; `terms[0]` the constant.
    pub terms: Vec<f64>,
    pub partial_sums: Vec<f64>,
    pub residuals: Vec<f64>,
    /// First order whose partial sum is within tolerance of `F(ω)`.
    pub exactness_order: Option<usize>,
    pub tolerance: f64,
}

impl ExpansionReport {
    fn assemble(functional: &str, kind: &'static str, omega: &Configuration, value: f64, terms: Vec<f64>, tol: f64) -> Self {
        let mut acc = Accumulator::default();
        let partial_sums: Vec<f64> = terms
            .iter()
            .map(|&t| {
                acc.add(t);
                acc.sum()
            })
            .collect();
        let residuals: Vec<f64> = partial_sums.iter().map(|s| value - s).collect();
        let exactness_order = residuals.iter().position(|&r| within_tolerance(r, value, tol));
        Self {
            functional: functional.to_owned(),
            kind,
            atoms: omega.len(),
            value,
            terms,
            partial_sums,
            residuals,
            exactness_order,
            tolerance: tol,
        }
    }

    pub fn final_residual(&self) -> f64 {
        *self.residuals.last().expect("at least the constant term")
    }
}

/// Partial sums of `F(ω_∅) + Σ_{k ≤ n_max} (1/k!) 𝓘_k(𝒯_k F)(ω)`.
///
/// `𝒯_k F` is symmetric, so `(1/k!) 𝓘_k` is a sum over `k`-subsets of atoms.
pub fn pseudo_chaotic_sum(f: &Functional, omega: &Configuration, n_max: usize, tol: f64) -> Result<ExpansionReport> {
    if n_max > DEFAULT_MAX_ORDER {
        return Err(Error::OrderTooLarge { order: n_max, max: DEFAULT_MAX_ORDER });
    }
    let horizon = omega.horizon();
    let mut terms = Vec::with_capacity(n_max + 1);
    terms.push(pseudo_kernel(f, &[], horizon)?);
    for k in 1..=n_max {
        let mut acc = Accumulator::default();
        for subset in atom_subsets(omega, k) {
            acc.add(pseudo_kernel(f, &subset, horizon)?);
        }
        terms.push(acc.sum());
    }
    Ok(ExpansionReport::assemble(f.name(), "pseudo_chaotic", omega, f.eval(omega), terms, tol))
}

/// Partial sums of `𝔼F + Σ_{n ≤ n_max} (1/n!) Iₙ(TₙF)(ω)` from closed-form kernels.
pub fn chaotic_sum(
    f: &Functional,
    omega: &Configuration,
    rho: &ProductIntensity,
    n_max: usize,
    tol: f64,
) -> Result<ExpansionReport> {
    let (Some(mean), Some(chaos)) = (f.mean(), f.chaos()) else {
        return Err(Error::KernelsUnavailable(f.name().to_owned()));
    };
    if n_max > chaos.kernels.len() && !chaos.complete {
        return Err(Error::KernelsUnavailable(format!(
            "{} beyond order {}",
            f.name(),
            chaos.kernels.len()
        )));
    }
    let mut terms = vec![mean];
    for n in 1..=n_max {
        let term = match chaos.kernels.get(n - 1) {
            Some(k) => eval_compensated(k.as_ref(), omega, rho)? / factorial(n),
            None => 0.0,
        };
        terms.push(term);
    }
    Ok(ExpansionReport::assemble(f.name(), "chaotic", omega, f.eval(omega), terms, tol))
}

/// Monte Carlo estimate of the chaos kernel `TₙF(tuple) = 𝔼[Dⁿ_{tuple} F]`.
/// Diagnostics only: the noise would mask identity violations in exact checks.
pub fn chaos_kernel_estimate(
    f: &Functional,
    tuple: &[Atom],
    rho: &ProductIntensity,
    samples: usize,
    seed: Seed,
) -> Result<Estimate> {
    for a in tuple {
        rho.check_atom(a)?;
    }
    let values = replicate(samples, seed, |_, rng| {
        let w = rho.sample_with(rng);
        crate::malliavin::iterated_difference(f, &w, tuple).unwrap_or(f64::NAN)
    });
    Ok(Estimate::from_samples(&values))
}

/// `F(ω) − F(ω_∅) − Σ_{(t,x) ∈ ω} ℋ_{(t,x)}F(ω)`.
pub fn pco_verify(f: &Functional, omega: &Configuration) -> Result<f64> {
    let empty = Configuration::empty(omega.horizon());
    let mut acc = Accumulator::default();
    acc.add(f.eval(omega));
    acc.add(-f.eval(&empty));
    for a in omega.atoms() {
        acc.add(-pco_integrand(f, omega, *a)?);
    }
    Ok(acc.sum())
}

/// Outcome of [`pco_uniqueness_probe`].
#[derive(Debug, Clone, Copy, Serialize)]
pub struct UniquenessProbe {
    pub paths: usize,
    pub atoms_checked: usize,
    /// `max |F(ω) − F(ω_∅) − Σ Z|` over the paths: whether `Z` represents `F` at all.
    pub max_representation_residual: f64,
    /// `max |Z − ℋF|` over every atom of every path.
    pub max_deviation: f64,
}

/// Compares a candidate integrand `Z` with `ℋF` at the atoms of sampled paths.
pub fn pco_uniqueness_probe(
    f: &Functional,
    z: impl Fn(&Configuration, &Atom) -> f64 + Sync,
    paths: &[Configuration],
) -> Result<UniquenessProbe> {
    let per_path: Vec<Result<(usize, f64, f64)>> = paths
        .par_iter()
        .map(|w| {
            let empty = Configuration::empty(w.horizon());
            let mut rep = Accumulator::default();
            rep.add(f.eval(w));
            rep.add(-f.eval(&empty));
            let mut dev = 0.0f64;
            for a in w.atoms() {
                let candidate = z(w, a);
                rep.add(-candidate);
                dev = dev.max((candidate - pco_integrand(f, w, *a)?).abs());
            }
            Ok((w.len(), rep.sum().abs(), dev))
        })
        .collect();
    let mut probe = UniquenessProbe { paths: paths.len(), atoms_checked: 0, max_representation_residual: 0.0, max_deviation: 0.0 };
    for r in per_path {
        let (n, rep, dev) = r?;
        probe.atoms_checked += n;
        probe.max_representation_residual = probe.max_representation_residual.max(rep);
        probe.max_deviation = probe.max_deviation.max(dev);
    }
    Ok(probe)
}

/// `F(ω) − 𝔼F − [Σ_{atoms} Z^p(ω, tᵢ, xᵢ) − ∫₀ᵀ ∫_X Z^p(ω, t, x) π(dx) dt]`.
///
/// The compensator is integrated piecewise between consecutive atom times
/// (and the projection's own breakpoints) with `piece_nodes` Gauss–Legendre
/// nodes per piece.
pub fn co_residual(f: &Functional, omega: &Configuration, rho: &ProductIntensity, piece_nodes: usize) -> Result<f64> {
    let (Some(proj), Some(mean)) = (f.projection(), f.mean()) else {
        return Err(Error::ProjectionUnavailable(f.name().to_owned()));
    };
    let horizon = rho.horizon();
    let mut cuts: Vec<f64> = omega.atoms().iter().map(|a| a.t).chain(proj.breakpoints.iter().copied()).collect();
    cuts.retain(|&c| c > 0.0 && c < horizon);
    cuts.push(0.0);
    cuts.push(horizon);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut compensator = Accumulator::default();
    for piece in cuts.windows(2) {
        for (t, w) in gauss_legendre_on(piece_nodes, piece[0], piece[1]) {
            compensator.add(w * (proj.mark_integral)(omega, t));
        }
    }
    let mut acc = Accumulator::default();
    acc.add(f.eval(omega));
    acc.add(-mean);
    for a in omega.atoms() {
        acc.add(-(proj.eval)(omega, a));
    }
    acc.add(compensator.sum());
    Ok(acc.sum())
}

/// Aggregate of a pathwise identity over many sampled configurations.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualReport {
    pub check: String,
    pub functional: String,
    pub samples: usize,
    /// Paths left out of the check (e.g. Hawkes paths whose intensity overflowed the cap).
    pub excluded: usize,
    pub mean_residual: f64,
    pub max_abs_residual: f64,
    /// `max |r| / (1 + |F(ω)|)`.
    pub max_scaled_residual: f64,
    pub stderr: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl ResidualReport {
    /// Summarises `(residual, F(ω))` pairs; passes iff every scaled residual is below `tol`.
    pub fn exact(check: &str, functional: &str, pairs: &[(f64, f64)], excluded: usize, tol: f64) -> Self {
        let residuals: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let est = Estimate::from_samples(&residuals);
        let max_abs_residual = residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        let max_scaled_residual = pairs.iter().fold(0.0f64, |m, (r, v)| m.max(r.abs() / (1.0 + v.abs())));
        let pass = pairs.iter().all(|(r, v)| within_tolerance(*r, *v, tol));
        Self {
            check: check.to_owned(),
            functional: functional.to_owned(),
            samples: pairs.len(),
            excluded,
            mean_residual: if pairs.is_empty() { 0.0 } else { est.mean },
            max_abs_residual,
            max_scaled_residual,
            stderr: if pairs.len() > 1 { est.stderr } else { 0.0 },
            tolerance: tol,
            pass,
        }
    }
}

/// `pco_verify` over `samples` Poisson paths.
pub fn pco_suite(f: &Functional, rho: &ProductIntensity, samples: usize, seed: Seed, tol: f64) -> Result<ResidualReport> {
    let pairs = replicate(samples, seed, |_, rng| {
        let w = rho.sample_with(rng);
        pco_verify(f, &w).map(|r| (r, f.eval(&w)))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(ResidualReport::exact("pco", f.name(), &pairs, 0, tol))
}

/// `co_residual` over `samples` Poisson paths.
pub fn co_suite(f: &Functional, rho: &ProductIntensity, samples: usize, seed: Seed, tol: f64) -> Result<ResidualReport> {
    let pairs = replicate(samples, seed, |_, rng| {
        let w = rho.sample_with(rng);
        co_residual(f, &w, rho, DEFAULT_PIECE_NODES).map(|r| (r, f.eval(&w)))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(ResidualReport::exact("co", f.name(), &pairs, 0, tol))
}

/// Which expansion [`expansion_suite`] checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionKind {
    PseudoChaotic,
    Chaotic,
}

/// Checks the full-order residual of an expansion over sampled paths with at
/// most `max_atoms` atoms (larger paths are excluded and counted).
/// Pseudo-chaotic sums run to order `|ω|`; chaotic sums to the highest
/// listed kernel order.
pub fn expansion_suite(
    f: &Functional,
    rho: &ProductIntensity,
    kind: ExpansionKind,
    samples: usize,
    max_atoms: usize,
    seed: Seed,
    tol: f64,
) -> Result<(ResidualReport, Vec<ExpansionReport>)> {
    let reports = replicate(samples, seed, |_, rng| {
        let w = rho.sample_with(rng);
        if w.len() > max_atoms {
            return Ok(None);
        }
        let report = match kind {
            ExpansionKind::PseudoChaotic => pseudo_chaotic_sum(f, &w, w.len(), tol)?,
            ExpansionKind::Chaotic => {
                let order = f.chaos().map(|c| c.kernels.len()).unwrap_or(0);
                chaotic_sum(f, &w, rho, order, tol)?
            }
        };
        Ok(Some(report))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let excluded = reports.iter().filter(|r| r.is_none()).count();
    let reports: Vec<ExpansionReport> = reports.into_iter().flatten().collect();
    let pairs: Vec<(f64, f64)> = reports.iter().map(|r| (r.final_residual(), r.value)).collect();
    let check = match kind {
        ExpansionKind::PseudoChaotic => "pseudo_chaotic",
        ExpansionKind::Chaotic => "chaotic",
    };
    Ok((ResidualReport::exact(check, f.name(), &pairs, excluded, tol), reports))
}

/// One row of the nested-window table.
#[derive(Debug, Clone, Serialize)]
pub struct WindowRow {
    pub window: usize,
    pub mass: f64,
    /// `ρ(X) − ρ(R_j)` of the sampled space.
    pub excluded_mass: f64,
    /// `𝔼|F − F_j|` with `F_j(ω) = F(ω ∩ R_j)`.
    pub restricted: Estimate,
    /// `𝔼|F − F·1_{Ω_j}|`, where `Ω_j` holds the configurations inside `R_j`.
    pub indicator: Estimate,
    /// Largest pseudo-Clark–Ocone residual of `F_j` against `N^j` over the samples.
    pub max_pco_residual: f64,
    /// `F(ω_∅)` as evaluated; the infinite-mass limit takes it to be 0 by convention.
    pub empty_value: f64,
}

/// For nested windows `R₁ ⊂ R₂ ⊂ …` of the sampled space, verifies the
/// finite-mass pseudo-Clark–Ocone identity of `F_j` under the projected
/// measure `N^j` and reports how `F_j` approaches `F`.
pub fn windowed_pco_convergence(
    f: &Functional,
    windows: &[Window],
    rho: &ProductIntensity,
    samples: usize,
    seed: Seed,
) -> Result<Vec<WindowRow>> {
    if windows.is_empty() {
        return Err(Error::InvalidArgument("at least one window is required".into()));
    }
    for pair in windows.windows(2) {
        if !pair[0].is_subset_of(&pair[1]) {
            return Err(Error::InvalidArgument("windows must be nested".into()));
        }
    }
    let per_sample = replicate(samples, seed, |_, rng| {
        let w = rho.sample_with(rng);
        let full = f.eval(&w);
        windows
            .iter()
            .map(|r| {
                let inside = w.restrict(r);
                let restricted = f.eval(&inside);
                let indicator = if inside.len() == w.len() { full } else { 0.0 };
                let residual = pco_verify(f, &inside)?;
                Ok(((full - restricted).abs(), (full - indicator).abs(), residual.abs()))
            })
            .collect::<Result<Vec<_>>>()
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let empty_value = f.eval(&Configuration::empty(rho.horizon()));
    let total = rho.total_mass();
    Ok(windows
        .iter()
        .enumerate()
        .map(|(j, r)| {
            let restricted: Vec<f64> = per_sample.iter().map(|s| s[j].0).collect();
            let indicator: Vec<f64> = per_sample.iter().map(|s| s[j].1).collect();
            let mass = rho.window_mass(r);
            WindowRow {
                window: j + 1,
                mass,
                excluded_mass: total - mass,
                restricted: Estimate::from_samples(&restricted),
                indicator: Estimate::from_samples(&indicator),
                max_pco_residual: per_sample.iter().fold(0.0f64, |m, s| m.max(s[j].2)),
                empty_value,
            }
        })
        .collect())
}

/// Cross-validates a functional's annotations against brute force on
/// configurations of at most three atoms:
///
/// * `𝒯ₙ` annotations against [`deterministic_diff`] (relative `1e-9`),
/// * complete chaos kernels and the mean through the pathwise chaotic sum,
/// * the predictable projection through [`co_residual`] (relative `1e-8`).
pub fn validate_annotations(f: &Functional, rho: &ProductIntensity, seed: Seed) -> Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed.0);
    let horizon = rho.horizon();
    let configs: Vec<Configuration> = (0..32)
        .map(|i| {
            let atoms = (0..i % 4).map(|_| rho.sample_atom(&mut rng)).collect();
            crate::measure::assemble(atoms, horizon)
        })
        .collect();
    let mismatch = |annotation: &'static str, deviation: f64| Error::AnnotationMismatch {
        functional: f.name().to_owned(),
        annotation,
        deviation,
    };
    if let Some(pk) = f.pseudo_kernels() {
        for w in &configs {
            let brute = deterministic_diff(f, w.atoms(), horizon)?;
            let closed = pk(w.atoms());
            if !within_tolerance(brute - closed, brute, DEFAULT_TOLERANCE) {
                return Err(mismatch("pseudo kernels", (brute - closed).abs()));
            }
        }
    }
    if let (Some(chaos), Some(_)) = (f.chaos(), f.mean()) {
        if chaos.complete {
            for w in &configs {
                let report = chaotic_sum(f, w, rho, chaos.kernels.len(), DEFAULT_TOLERANCE)?;
                if !within_tolerance(report.final_residual(), report.value, DEFAULT_TOLERANCE) {
                    return Err(mismatch("chaos kernels", report.final_residual().abs()));
                }
            }
        }
    }
    if f.projection().is_some() && f.mean().is_some() {
        for w in &configs {
            let r = co_residual(f, w, rho, DEFAULT_PIECE_NODES)?;
            if !within_tolerance(r, f.eval(w), 1e-8) {
                return Err(mismatch("predictable projection", r.abs()));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::configuration::{MarkSet, TimeInterval};
    use crate::library;
    use crate::malliavin::projection_estimate;
    use crate::measure::MarkSpace;
    use proptest::prelude::*;
    use rand::Rng;

    fn rho() -> ProductIntensity {
        ProductIntensity::new(1.0, MarkSpace::uniform(1.0, 5.0).unwrap()).unwrap()
    }

    fn a() -> Window {
        Window::new(TimeInterval::half_open(0.0, 0.6), MarkSet::Interval { lo: 0.0, hi: 0.5 })
    }

    fn strip() -> Window {
        Window::new(TimeInterval::closed(0.0, 1.0), MarkSet::Interval { lo: 0.2, hi: 0.7 })
    }

    fn conf(atoms: &[(f64, f64)]) -> Configuration {
        Configuration::new(atoms.iter().map(|&(t, x)| Atom::new(t, x)).collect(), 1.0).unwrap()
    }

    fn sample() -> Configuration {
        conf(&[(0.05, 0.3), (0.1, 0.1), (0.2, 0.9), (0.35, 0.45), (0.5, 0.2), (0.8, 0.3)])
    }

    #[test]
    fn pseudo_chaotic_examples() {
        let w = sample();
        let n = w.count(&a()) as f64;
        let r = pseudo_chaotic_sum(&library::count(a()), &w, w.len(), DEFAULT_TOLERANCE).unwrap();
        assert_eq!(r.exactness_order, Some(1));
        assert_eq!(r.terms[1], n);
        assert!(r.terms[2..].iter().all(|&t| t == 0.0));
        let r = pseudo_chaotic_sum(&library::count_squared(a()), &w, w.len(), DEFAULT_TOLERANCE).unwrap();
        assert_eq!((r.terms[1], r.terms[2]), (n, n * (n - 1.0)));
        assert_eq!(r.exactness_order, Some(2));
        let empty = Configuration::empty(1.0);
        let f = library::exp_count(a(), 0.3);
        let r = pseudo_chaotic_sum(&f, &empty, 3, DEFAULT_TOLERANCE).unwrap();
        assert_eq!(r.terms, vec![1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(pseudo_chaotic_sum(&f, &w, 13, 1e-9), Err(Error::OrderTooLarge { .. })));
    }

    #[test]
    fn pseudo_chaotic_brute_force_matches_annotation() {
        let w = sample();
        let f = library::exp_count(a(), 0.7);
        let annotated = pseudo_chaotic_sum(&f, &w, w.len(), DEFAULT_TOLERANCE).unwrap();
        let brute = pseudo_chaotic_sum(&f.bare(), &w, w.len(), DEFAULT_TOLERANCE).unwrap();
        for (x, y) in annotated.terms.iter().zip(&brute.terms) {
            assert!((x - y).abs() < 1e-12 * (1.0 + x.abs()));
        }
        assert!(within_tolerance(brute.final_residual(), brute.value, DEFAULT_TOLERANCE));
    }

    #[test]
    fn chaotic_examples() {
        let r = rho();
        let w = sample();
        let f = library::count_full(a(), &r).unwrap();
        let rep = chaotic_sum(&f, &w, &r, 1, DEFAULT_TOLERANCE).unwrap();
        assert_eq!(rep.terms[0], 1.5);
        assert!(rep.final_residual().abs() < 1e-12);
        let f = library::count_squared_full(a(), &r).unwrap();
        let rep = chaotic_sum(&f, &w, &r, 2, DEFAULT_TOLERANCE).unwrap();
        assert!((rep.terms[0] - 3.75).abs() < 1e-12);
        assert_eq!(rep.exactness_order, Some(2));
        let c = Functional::constant(2.5);
        let rep = chaotic_sum(&c, &w, &r, 2, DEFAULT_TOLERANCE).unwrap();
        assert_eq!(rep.terms, vec![2.5, 0.0, 0.0]);
        assert!(matches!(
            chaotic_sum(&library::count(a()), &w, &r, 1, 1e-9),
            Err(Error::KernelsUnavailable(_))
        ));
        let e = library::exp_count_full(a(), 0.2, &r).unwrap();
        assert!(matches!(chaotic_sum(&e, &w, &r, 13, 1e-9), Err(Error::KernelsUnavailable(_))));
    }

    #[test]
    fn exp_count_chaos_converges() {
        let r = rho();
        let e = library::exp_count_full(a(), 0.2, &r).unwrap();
        let rep = chaotic_sum(&e, &sample(), &r, 12, 1e-9).unwrap();
        let tail: Vec<f64> = rep.residuals.iter().map(|x| x.abs()).collect();
        assert!(tail[12] < 1e-9 * (1.0 + rep.value), "{tail:?}");
        assert!(tail[12] < tail[2]);
    }

    #[test]
    fn chaos_kernel_estimate_matches_closed_form() {
        let r = rho();
        let f = library::count_squared(a());
        let x = Atom::new(0.2, 0.1);
        let est = chaos_kernel_estimate(&f, &[x], &r, 20_000, Seed(5)).unwrap();
        assert!(est.z_score(2.0 * 1.5 + 1.0).abs() < 4.0, "{est:?}");
        let est = chaos_kernel_estimate(&f, &[x, Atom::new(0.3, 0.2)], &r, 100, Seed(5)).unwrap();
        assert_eq!((est.mean, est.stderr), (2.0, 0.0));
    }

    #[test]
    fn pco_examples() {
        let f = library::count_squared(a());
        assert_eq!(pco_verify(&f, &Configuration::empty(1.0)).unwrap(), 0.0);
        assert_eq!(pco_verify(&library::count(strip()), &sample()).unwrap(), 0.0);
        assert!(pco_verify(&f, &sample()).unwrap().abs() < 1e-12);
    }

    #[test]
    fn uniqueness_probe() {
        let r = rho();
        let f = library::count_squared(a());
        let paths: Vec<Configuration> = (0..200).map(|i| r.sample(Seed(100 + i))).collect();
        let probe = pco_uniqueness_probe(&f, |w, x| pco_integrand(&f, w, *x).unwrap(), &paths).unwrap();
        assert_eq!((probe.max_deviation, probe.max_representation_residual), (0.0, 0.0));
        let faulty = pco_uniqueness_probe(
            &f,
            |w, x| pco_integrand(&f, w, *x).unwrap() + if x.x > 0.9 { 1.0 } else { 0.0 },
            &paths,
        )
        .unwrap();
        assert_eq!(faulty.max_deviation, 1.0);
        assert!(faulty.max_representation_residual >= 1.0);
        let closed = |w: &Configuration, x: &Atom| {
            a().indicator(x) * (2.0 * w.count_before(&a(), x.t) as f64 + 1.0)
        };
        let probe = pco_uniqueness_probe(&f, closed, &paths).unwrap();
        assert!(probe.max_deviation < 1e-10);
    }

    #[test]
    fn co_examples() {
        let r = rho();
        let w = sample();
        let f = library::count_full(a(), &r).unwrap();
        assert!(co_residual(&f, &w, &r, DEFAULT_PIECE_NODES).unwrap().abs() < 1e-12);
        let g = library::count_squared_full(strip(), &r).unwrap();
        for i in 0..50 {
            let w = r.sample(Seed(i));
            let res = co_residual(&g, &w, &r, DEFAULT_PIECE_NODES).unwrap();
            assert!(res.abs() < 1e-9 * (1.0 + g.eval(&w)), "{res}");
        }
        assert!(matches!(
            co_residual(&library::count(a()), &w, &r, 16),
            Err(Error::ProjectionUnavailable(_))
        ));
    }

    #[test]
    fn projection_matches_nested_monte_carlo() {
        let r = rho();
        let f = library::count_squared_full(a(), &r).unwrap();
        let proj = f.projection().unwrap();
        let mut rng = Seed(77).rng();
        for i in 0..10 {
            let w = r.sample_with(&mut rng);
            let t: f64 = rng.random::<f64>();
            let x = Atom::new(t, 0.5 * rng.random::<f64>());
            let est = projection_estimate(&f, &w, x, &r, 4000, Seed(1000 + i)).unwrap();
            let closed = (proj.eval)(&w, &x);
            assert!(est.z_score(closed).abs() < 4.0 || (est.stderr == 0.0 && est.mean == closed), "{est:?} {closed}");
        }
    }

    #[test]
    fn suites_pass_for_library() {
        let r = rho();
        let b = Window::new(TimeInterval::closed(0.3, 1.0), MarkSet::Interval { lo: 0.25, hi: 1.0 });
        let fs = vec![
            library::count_full(a(), &r).unwrap(),
            library::count_squared_full(a(), &r).unwrap(),
            library::product_counts_full(a(), b, &r).unwrap(),
            library::exp_count_full(a(), 0.4, &r).unwrap(),
        ];
        for f in &fs {
            assert!(pco_suite(f, &r, 300, Seed(1), DEFAULT_TOLERANCE).unwrap().pass);
            assert!(co_suite(f, &r, 300, Seed(2), 1e-8).unwrap().pass, "{}", f.name());
            let (rep, _) = expansion_suite(f, &r, ExpansionKind::PseudoChaotic, 200, 12, Seed(3), DEFAULT_TOLERANCE).unwrap();
            assert!(rep.pass);
        }
        let (rep, _) = expansion_suite(&fs[2], &r, ExpansionKind::Chaotic, 200, 100, Seed(4), DEFAULT_TOLERANCE).unwrap();
        assert!(rep.pass && rep.excluded == 0);
    }

    fn nested() -> Vec<Window> {
        [0.25, 0.5, 0.75, 1.0]
            .iter()
            .map(|&hi| Window::new(TimeInterval::closed(0.0, 1.0), MarkSet::Interval { lo: 0.0, hi }))
            .collect()
    }

    #[test]
    fn windows_excluded_mass() {
        let r = rho();
        let f = library::count(Window::full(1.0));
        let rows = windowed_pco_convergence(&f, &nested(), &r, 20_000, Seed(8)).unwrap();
        for pair in rows.windows(2) {
            assert!(pair[1].restricted.mean <= pair[0].restricted.mean);
        }
        for row in &rows {
            assert!(row.restricted.z_score(row.excluded_mass).abs() < 4.0 || row.excluded_mass == 0.0, "{row:?}");
            assert_eq!(row.max_pco_residual, 0.0);
            // a = ρ(R_j), b = ρ(R_jᶜ): 𝔼|F − F·1_{Ω_j}| = a(1 − e^{−b}) + b
            let (ma, mb) = (row.mass, row.excluded_mass);
            let target = ma * (1.0 - (-mb).exp()) + mb;
            assert!(row.indicator.z_score(target).abs() < 4.0 || mb == 0.0, "{row:?} {target}");
        }
        assert_eq!(rows[3].restricted.mean, 0.0);
    }

    #[test]
    fn windows_supported_in_first() {
        let r = rho();
        let f = library::count_squared(nested()[0]);
        let rows = windowed_pco_convergence(&f, &nested(), &r, 2000, Seed(9)).unwrap();
        assert!(rows.iter().all(|row| row.restricted.mean == 0.0 && row.max_pco_residual < 1e-12));
        let mut shuffled = nested();
        shuffled.swap(0, 1);
        assert!(windowed_pco_convergence(&f, &shuffled, &r, 10, Seed(9)).is_err());
    }

    #[test]
    fn integrand_l1_proxy_is_stable() {
        let r = rho();
        let f = library::exp_count(a(), 0.5);
        let batches: Vec<f64> = (0..10)
            .map(|b| {
                let values = replicate(500, Seed(300 + b), |_, rng| {
                    let w = r.sample_with(rng);
                    w.atoms().iter().map(|x| pco_integrand(&f, &w, *x).unwrap().abs()).sum::<f64>()
                });
                Estimate::from_samples(&values).mean
            })
            .collect();
        let all = Estimate::from_samples(&batches);
        assert!(all.mean.is_finite() && all.stderr < 0.1 * all.mean, "{batches:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn pco_holds_on_arbitrary_configurations(
            v in prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), 0..20),
            beta in -1.0..1.0f64,
        ) {
            let w = crate::measure::assemble(v.into_iter().map(|(t, x)| Atom::new(t, x)).collect(), 1.0);
            for f in [library::count_squared(a()), library::exp_count(a(), beta), library::product_counts(a(), strip())] {
                let r = pco_verify(&f, &w).unwrap();
                prop_assert!(within_tolerance(r, f.eval(&w), DEFAULT_TOLERANCE));
            }
        }
    }
}
