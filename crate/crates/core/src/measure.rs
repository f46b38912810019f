//! The intensity measure `ρ = dt ⊗ π` on `[0,T] × X`, Poisson sampling under
//! it and numerical integration of kernels against its tensor powers.
//!
//! Two mark spaces are supported: an interval `[0, M]` carrying a density, and
//! a finite set of weighted points. The discrete kind is atomic in the mark
//! coordinate, but since time is continuous two sampled atoms still coincide
//! with probability zero, so sampled configurations remain simple.

use std::fmt;
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Poisson;
use serde::{Deserialize, Serialize};

use crate::configuration::{Atom, Configuration, MarkSet, Window};
use crate::error::{Error, Result};
use crate::integrals::Kernel;
use crate::quadrature::{composite_on, gauss_legendre_on};
use crate::stats::Accumulator;

/// Seed of a reproducible random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Seed(pub u64);

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Seed {
    /// Seed of replication `index`: `seed ⊕ hash(index)`.
    pub fn derive(self, index: u64) -> Seed {
        Seed(self.0 ^ splitmix64(index))
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

const MASS_NODES: usize = 16;
const MASS_PANELS: usize = 64;
const MASS_TOLERANCE: f64 = 1e-8;

/// Density of an interval mark space.
#[derive(Clone)]
pub enum Density {
    /// Constant density `scale` on `[0, M]`.
    Uniform { scale: f64 },
    /// Density given as an expression in `x`.
    Expr { source: String, node: Arc<evalexpr::Node>, masses: Arc<Mutex<HashMap<(u64, u64), f64>>> },
}

impl fmt::Debug for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Density::Uniform { scale } => write!(f, "Uniform({scale})"),
            Density::Expr { source, .. } => write!(f, "Expr({source:?})"),
        }
    }
}

impl Density {
    pub fn parse_expr(source: &str) -> Result<Density> {
        let node = evalexpr::build_operator_tree(source)
            .map_err(|e| Error::InvalidMarkSpace(format!("density `{source}`: {e}")))?;
        Ok(Density::Expr { source: source.to_owned(), node: Arc::new(node), masses: Arc::default() })
    }

    fn try_eval(&self, x: f64) -> Result<f64> {
        match self {
            Density::Uniform { scale } => Ok(*scale),
            Density::Expr { source, node, .. } => {
                use evalexpr::ContextWithMutableVariables;
                let mut ctx = evalexpr::HashMapContext::new();
                ctx.set_value("x".into(), evalexpr::Value::Float(x))
                    .map_err(|e| Error::InvalidMarkSpace(e.to_string()))?;
                node.eval_number_with_context(&ctx)
                    .map_err(|e| Error::InvalidMarkSpace(format!("density `{source}` at x={x}: {e}")))
            }
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        // validated on a grid at construction
        self.try_eval(x).unwrap_or(f64::NAN)
    }
}

/// The mark space `(X, π)`.
#[derive(Debug, Clone)]
pub enum MarkSpace {
    Interval {
        length: f64,
        density: Density,
        mass: f64,
        /// Upper bound of the density used by the rejection sampler.
        envelope: f64,
    },
    Discrete {
        points: Vec<f64>,
        weights: Vec<f64>,
        mass: f64,
        sampler: WeightedIndex<f64>,
    },
}

impl MarkSpace {
    /// `[0, length]` with constant density `scale`, so `π(X) = scale · length`.
    pub fn uniform(length: f64, scale: f64) -> Result<MarkSpace> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::InvalidMarkSpace(format!("interval length {length} must be positive")));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidMarkSpace(format!("density scale {scale} must be positive")));
        }
        let density = Density::Uniform { scale };
        Ok(MarkSpace::Interval { length, density, mass: length * scale, envelope: scale })
    }

    /// `[0, length]` with a general density. The total mass is computed by
    /// composite Gauss–Legendre quadrature at two resolutions that must agree
    /// to `1e-8` relative; a declared mass must match it to the same tolerance.
    pub fn with_density(length: f64, density: Density, declared_mass: Option<f64>) -> Result<MarkSpace> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::InvalidMarkSpace(format!("interval length {length} must be positive")));
        }
        if let Density::Uniform { scale } = density {
            let space = MarkSpace::uniform(length, scale)?;
            check_declared(space.total_mass(), declared_mass)?;
            return Ok(space);
        }
        let mut envelope = 0.0f64;
        let grid = 4096;
        for i in 0..=grid {
            let x = length * i as f64 / grid as f64;
            let v = density.try_eval(x)?;
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidMarkSpace(format!("density is {v} at x={x}")));
            }
            envelope = envelope.max(v);
        }
        let coarse = integrate_density(&density, 0.0, length, MASS_PANELS)?;
        let fine = integrate_density(&density, 0.0, length, 2 * MASS_PANELS)?;
        if !(fine > 0.0 && fine.is_finite()) {
            return Err(Error::InvalidMarkSpace(format!("density mass {fine} must be positive")));
        }
        if (coarse - fine).abs() > MASS_TOLERANCE * fine {
            return Err(Error::InvalidMarkSpace(format!(
                "density mass does not converge under quadrature ({coarse} vs {fine})"
            )));
        }
        check_declared(fine, declared_mass)?;
        // margin for peaks between grid points
        Ok(MarkSpace::Interval { length, density, mass: fine, envelope: 1.25 * envelope })
    }

    pub fn discrete(points: Vec<f64>, weights: Vec<f64>) -> Result<MarkSpace> {
        if points.is_empty() || points.len() != weights.len() {
            return Err(Error::InvalidMarkSpace("points and weights must be non-empty and of equal length".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidMarkSpace("weights must be finite and non-negative".into()));
        }
        let mut sorted = points.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) || sorted.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidMarkSpace("points must be finite and distinct".into()));
        }
        let mass: f64 = weights.iter().sum();
        if !(mass > 0.0) {
            return Err(Error::InvalidMarkSpace("total weight must be positive".into()));
        }
        let sampler = WeightedIndex::new(&weights).map_err(|e| Error::InvalidMarkSpace(e.to_string()))?;
        Ok(MarkSpace::Discrete { points, weights, mass, sampler })
    }

    /// `π(X)`.
    pub fn total_mass(&self) -> f64 {
        match self {
            MarkSpace::Interval { mass, .. } | MarkSpace::Discrete { mass, .. } => *mass,
        }
    }

    /// `π(B)`.
    pub fn mass(&self, set: &MarkSet) -> f64 {
        match self {
            MarkSpace::Interval { length, density, mass, .. } => {
                let (lo, hi) = match *set {
                    MarkSet::All => return *mass,
                    MarkSet::Interval { lo, hi } => (lo.max(0.0), hi.min(*length)),
                };
                if lo >= hi {
                    return 0.0;
                }
                match density {
                    Density::Uniform { scale } => scale * (hi - lo),
                    Density::Expr { masses, .. } => {
                        let key = (lo.to_bits(), hi.to_bits());
                        if let Some(m) = masses.lock().unwrap().get(&key) {
                            return *m;
                        }
                        let m = integrate_density(density, lo, hi, 2 * MASS_PANELS).unwrap_or(f64::NAN);
                        masses.lock().unwrap().insert(key, m);
                        m
                    }
                }
            }
            MarkSpace::Discrete { points, weights, .. } => points
                .iter()
                .zip(weights)
                .filter(|(p, _)| set.contains(**p))
                .map(|(_, w)| w)
                .sum(),
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        match self {
            MarkSpace::Interval { length, .. } => (0.0..=*length).contains(&x),
            MarkSpace::Discrete { points, .. } => points.contains(&x),
        }
    }

    /// Draws a mark from `π / π(X)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.sample_in(rng, &MarkSet::All).expect("full mark space has positive mass")
    }

    /// Draws a mark from `π` restricted to `set` and normalised; `None` if `π(set) = 0`.
    pub fn sample_in<R: Rng + ?Sized>(&self, rng: &mut R, set: &MarkSet) -> Option<f64> {
        match self {
            MarkSpace::Interval { length, density, envelope, .. } => {
                let (lo, hi) = match *set {
                    MarkSet::All => (0.0, *length),
                    MarkSet::Interval { lo, hi } => (lo.max(0.0), hi.min(*length)),
                };
                if lo > hi || (lo == hi && !matches!(density, Density::Uniform { .. })) {
                    return None;
                }
                match density {
                    Density::Uniform { .. } => Some(lo + (hi - lo) * rng.random::<f64>()),
                    Density::Expr { .. } => {
                        if self.mass(set) <= 0.0 {
                            return None;
                        }
                        loop {
                            let x = lo + (hi - lo) * rng.random::<f64>();
                            if envelope * rng.random::<f64>() < density.eval(x) {
                                return Some(x);
                            }
                        }
                    }
                }
            }
            MarkSpace::Discrete { points, weights, sampler, .. } => match set {
                MarkSet::All => Some(points[sampler.sample(rng)]),
                _ => {
                    let restricted: Vec<f64> = points
                        .iter()
                        .zip(weights)
                        .map(|(p, w)| if set.contains(*p) { *w } else { 0.0 })
                        .collect();
                    let index = WeightedIndex::new(&restricted).ok()?;
                    Some(points[index.sample(rng)])
                }
            },
        }
    }

    /// Quadrature nodes `(x, w)` with `Σ w g(x) ≈ ∫ g dπ`.
    pub fn nodes(&self, per_axis: usize) -> Vec<(f64, f64)> {
        self.nodes_split(per_axis, &[])
    }

    /// As [`MarkSpace::nodes`], with the interval split at `breaks`.
    pub fn nodes_split(&self, per_axis: usize, breaks: &[f64]) -> Vec<(f64, f64)> {
        match self {
            MarkSpace::Interval { length, density, .. } => pieces(0.0, *length, breaks)
                .into_iter()
                .flat_map(|(a, b)| gauss_legendre_on(per_axis, a, b))
                .map(|(x, w)| (x, w * density.eval(x)))
                .collect(),
            MarkSpace::Discrete { points, weights, .. } => points.iter().copied().zip(weights.iter().copied()).collect(),
        }
    }

    /// Whether the mark axis is integrated exactly by [`MarkSpace::nodes`].
    pub fn is_discrete(&self) -> bool {
        matches!(self, MarkSpace::Discrete { .. })
    }

    /// `∫ x^k π(dx)`.
    pub fn moment(&self, k: u32) -> f64 {
        match self {
            MarkSpace::Interval { length, density: Density::Uniform { scale }, .. } => {
                scale * length.powi(k as i32 + 1) / f64::from(k + 1)
            }
            MarkSpace::Interval { length, density, .. } => composite_on(MASS_NODES, 2 * MASS_PANELS, 0.0, *length)
                .into_iter()
                .map(|(x, w)| w * x.powi(k as i32) * density.eval(x))
                .sum(),
            MarkSpace::Discrete { points, weights, .. } => {
                points.iter().zip(weights).map(|(p, w)| w * p.powi(k as i32)).sum()
            }
        }
    }
}

/// `[a, b]` cut at the breakpoints lying strictly inside it.
fn pieces(a: f64, b: f64, breaks: &[f64]) -> Vec<(f64, f64)> {
    let mut cuts: Vec<f64> = breaks.iter().copied().filter(|&c| c > a && c < b).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut out = Vec::with_capacity(cuts.len() + 1);
    let mut lo = a;
    for c in cuts {
        out.push((lo, c));
        lo = c;
    }
    out.push((lo, b));
    out
}

fn integrate_density(density: &Density, a: f64, b: f64, panels: usize) -> Result<f64> {
    let mut acc = Accumulator::default();
    for (x, w) in composite_on(MASS_NODES, panels, a, b) {
        acc.add(w * density.try_eval(x)?);
    }
    Ok(acc.sum())
}

fn check_declared(mass: f64, declared: Option<f64>) -> Result<()> {
    match declared {
        Some(d) if (d - mass).abs() > MASS_TOLERANCE * mass.abs() => Err(Error::InvalidMarkSpace(format!(
            "declared mass {d} disagrees with the integrated density mass {mass}"
        ))),
        _ => Ok(()),
    }
}

/// `ρ = dt ⊗ π` on `[0, T] × X`.
#[derive(Debug, Clone)]
pub struct ProductIntensity {
    horizon: f64,
    marks: MarkSpace,
}

impl ProductIntensity {
    pub fn new(horizon: f64, marks: MarkSpace) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidIntensity(format!("horizon {horizon} must be positive and finite")));
        }
        let mass = horizon * marks.total_mass();
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::InvalidIntensity(format!("total mass {mass} must be positive and finite")));
        }
        Ok(Self { horizon, marks })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn marks(&self) -> &MarkSpace {
        &self.marks
    }

    /// `ρ(X) = T · π(X)`.
    pub fn total_mass(&self) -> f64 {
        self.horizon * self.marks.total_mass()
    }

    pub fn full_window(&self) -> Window {
        Window::full(self.horizon)
    }

    /// `ρ(A × B)`, with `A` clipped to `[0, T]`.
    pub fn window_mass(&self, w: &Window) -> f64 {
        let len = (w.time.end.min(self.horizon) - w.time.start.max(0.0)).max(0.0);
        if len == 0.0 {
            return 0.0;
        }
        len * self.marks.mass(&w.marks)
    }

    pub fn contains(&self, a: &Atom) -> bool {
        (0.0..=self.horizon).contains(&a.t) && self.marks.contains(a.x)
    }

    pub fn check_atom(&self, a: &Atom) -> Result<()> {
        if !(0.0..=self.horizon).contains(&a.t) {
            return Err(Error::AtomOutOfWindow { t: a.t, horizon: self.horizon });
        }
        if !self.marks.contains(a.x) {
            return Err(Error::InvalidMark { x: a.x });
        }
        Ok(())
    }

    /// One atom drawn from `ρ / ρ(X)`.
    pub fn sample_atom<R: Rng + ?Sized>(&self, rng: &mut R) -> Atom {
        let t = self.horizon * rng.random::<f64>();
        Atom::new(t, self.marks.sample(rng))
    }

    /// One atom drawn from `ρ` restricted to `w`; `None` if `ρ(w) = 0`.
    pub fn sample_in_window<R: Rng + ?Sized>(&self, rng: &mut R, w: &Window) -> Option<Atom> {
        let lo = w.time.start.max(0.0);
        let hi = w.time.end.min(self.horizon);
        if lo >= hi {
            return None;
        }
        let t = lo + (hi - lo) * rng.random::<f64>();
        // the half-open end is never hit: random() < 1
        let x = self.marks.sample_in(rng, &w.marks)?;
        Some(Atom::new(t, x))
    }

    /// Atoms of a Poisson measure with intensity `ρ` restricted to times in `[from, to]`.
    ///
    /// Draws the count `K ~ Poisson(ρ)` first, then places `K` i.i.d. atoms.
    /// The result is unsorted.
    pub fn sample_atoms_between<R: Rng + ?Sized>(&self, rng: &mut R, from: f64, to: f64) -> Vec<Atom> {
        let len = to.min(self.horizon) - from.max(0.0);
        if len <= 0.0 {
            return Vec::new();
        }
        let mean = len * self.marks.total_mass();
        let count = Poisson::new(mean).map(|p| p.sample(rng) as usize).unwrap_or(0);
        (0..count)
            .map(|_| {
                let t = from + len * rng.random::<f64>();
                Atom::new(t, self.marks.sample(rng))
            })
            .collect()
    }

    /// A Poisson configuration drawn from an existing stream.
    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> Configuration {
        let atoms = self.sample_atoms_between(rng, 0.0, self.horizon);
        assemble(atoms, self.horizon)
    }

    /// A Poisson configuration, deterministic in `seed`.
    pub fn sample(&self, seed: Seed) -> Configuration {
        self.sample_with(&mut seed.rng())
    }
}

/// Sorts sampled atoms and drops (probability-zero) coincidences.
pub(crate) fn assemble(mut atoms: Vec<Atom>, horizon: f64) -> Configuration {
    atoms.sort_by(Atom::order);
    atoms.dedup_by(|a, b| a.same_point(b));
    Configuration::from_sorted_unchecked(atoms, horizon)
}

/// `sample_poisson`.
pub fn sample_poisson(rho: &ProductIntensity, seed: Seed) -> Configuration {
    rho.sample(seed)
}

/// How an integral was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    Quadrature,
    MonteCarlo,
}

/// A numerical integral with its standard error (zero unless Monte Carlo).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Integral {
    pub value: f64,
    pub stderr: f64,
    pub method: Method,
}

impl Integral {
    pub fn exact(value: f64) -> Self {
        Self { value, stderr: 0.0, method: Method::ClosedForm }
    }
}

/// Plain Monte Carlo fallback settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloOptions {
    pub samples: usize,
    pub seed: Seed,
}

/// Integration settings shared by [`rho_integral`] and the compensated integrals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrationOptions {
    /// Gauss–Legendre nodes per axis (time, and interval marks).
    pub nodes_per_axis: usize,
    /// Largest tensor grid evaluated before quadrature is refused.
    pub max_evaluations: usize,
    pub max_quadrature_dims: usize,
    pub monte_carlo: Option<MonteCarloOptions>,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        Self {
            nodes_per_axis: 64,
            max_evaluations: 20_000_000,
            max_quadrature_dims: 3,
            monte_carlo: Some(MonteCarloOptions { samples: 100_000, seed: Seed(0x5eed) }),
        }
    }
}

impl IntegrationOptions {
    pub fn exact_only() -> Self {
        Self { monte_carlo: None, ..Self::default() }
    }
}

/// `∫ f dρ^{⊗n}`.
pub fn rho_integral(f: &dyn Kernel, rho: &ProductIntensity, opts: &IntegrationOptions) -> Result<Integral> {
    integrate_slots(f, &vec![None; f.order()], rho, opts)
}

/// Integrates `f` over its `None` slots against `ρ`, holding the `Some` slots fixed.
///
/// Tries the kernel's closed form, then tensor Gauss–Legendre for smooth
/// kernels, then plain Monte Carlo.
pub fn integrate_slots(
    f: &dyn Kernel,
    slots: &[Option<Atom>],
    rho: &ProductIntensity,
    opts: &IntegrationOptions,
) -> Result<Integral> {
    assert_eq!(slots.len(), f.order(), "slot count must match the kernel order");
    if let Some(v) = f.integrate_slots(slots, rho) {
        return Ok(Integral::exact(v));
    }
    let free: Vec<usize> = (0..slots.len()).filter(|&i| slots[i].is_none()).collect();
    let mut args: Vec<Atom> = slots.iter().map(|s| s.unwrap_or(Atom::new(0.0, 0.0))).collect();
    if free.is_empty() {
        return Ok(Integral::exact(f.eval(&args)));
    }
    if f.smooth() && free.len() <= opts.max_quadrature_dims {
        let axis = slot_nodes(rho, opts.nodes_per_axis, f.breakpoints().as_ref());
        let grid = (axis.len() as f64).powi(free.len() as i32);
        if grid <= opts.max_evaluations as f64 {
            let value = tensor_sum(f, &mut args, &free, &axis);
            return Ok(Integral { value, stderr: 0.0, method: Method::Quadrature });
        }
    }
    match opts.monte_carlo {
        Some(mc) if mc.samples >= 2 => Ok(monte_carlo_slots(f, &mut args, &free, rho, mc)),
        _ if free.len() > opts.max_quadrature_dims => Err(Error::UnsupportedDimension { dims: free.len() }),
        _ => Err(Error::IntegrationUnavailable(format!(
            "kernel `{}` has no closed form, is not smooth, and Monte Carlo is disabled",
            f.name()
        ))),
    }
}

/// Nodes for one `(t, x)` slot: time Gauss–Legendre times mark nodes, both
/// split at the given breakpoints so piecewise-polynomial kernels integrate exactly.
pub fn slot_nodes(rho: &ProductIntensity, per_axis: usize, breaks: Option<&(Vec<f64>, Vec<f64>)>) -> Vec<(Atom, f64)> {
    let no_breaks = Vec::new();
    let (time_breaks, mark_breaks) = breaks.map(|(t, x)| (t, x)).unwrap_or((&no_breaks, &no_breaks));
    let times: Vec<(f64, f64)> = pieces(0.0, rho.horizon(), time_breaks)
        .into_iter()
        .flat_map(|(a, b)| gauss_legendre_on(per_axis, a, b))
        .collect();
    let marks = rho.marks().nodes_split(per_axis, mark_breaks);
    times
        .iter()
        .flat_map(|&(t, wt)| marks.iter().map(move |&(x, wx)| (Atom::new(t, x), wt * wx)))
        .collect()
}

fn tensor_sum(f: &dyn Kernel, args: &mut [Atom], free: &[usize], axis: &[(Atom, f64)]) -> f64 {
    fn rec(f: &dyn Kernel, args: &mut [Atom], free: &[usize], axis: &[(Atom, f64)], weight: f64, acc: &mut Accumulator) {
        match free.split_first() {
            None => acc.add(weight * f.eval(args)),
            Some((&slot, rest)) => {
                for &(a, w) in axis {
                    args[slot] = a;
                    rec(f, args, rest, axis, weight * w, acc);
                }
            }
        }
    }
    let mut acc = Accumulator::default();
    rec(f, args, free, axis, 1.0, &mut acc);
    acc.sum()
}

fn monte_carlo_slots(
    f: &dyn Kernel,
    args: &mut [Atom],
    free: &[usize],
    rho: &ProductIntensity,
    mc: MonteCarloOptions,
) -> Integral {
    let mut rng = mc.seed.rng();
    let scale = rho.total_mass().powi(free.len() as i32);
    let values: Vec<f64> = (0..mc.samples)
        .map(|_| {
            for &slot in free {
                args[slot] = rho.sample_atom(&mut rng);
            }
            scale * f.eval(args)
        })
        .collect();
    let est = crate::stats::Estimate::from_samples(&values);
    Integral { value: est.mean, stderr: est.stderr, method: Method::MonteCarlo }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::configuration::TimeInterval;
    use crate::integrals::{FnKernel, TensorIndicator};

    fn unit_rho(scale: f64) -> ProductIntensity {
        ProductIntensity::new(1.0, MarkSpace::uniform(1.0, scale).unwrap()).unwrap()
    }

    #[test]
    fn invalid_spaces_are_rejected() {
        assert!(MarkSpace::uniform(1.0, 0.0).is_err());
        assert!(MarkSpace::uniform(0.0, 1.0).is_err());
        assert!(MarkSpace::discrete(vec![0.0, 1.0], vec![0.0, 0.0]).is_err());
        assert!(MarkSpace::discrete(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(MarkSpace::with_density(1.0, Density::parse_expr("x - 2").unwrap(), None).is_err());
        assert!(ProductIntensity::new(0.0, MarkSpace::uniform(1.0, 1.0).unwrap()).is_err());
    }

    #[test]
    fn expression_density_mass() {
        let space = MarkSpace::with_density(2.0, Density::parse_expr("3 * x * x").unwrap(), Some(8.0)).unwrap();
        assert!((space.total_mass() - 8.0).abs() < 1e-12);
        assert!((space.mass(&MarkSet::Interval { lo: 0.0, hi: 1.0 }) - 1.0).abs() < 1e-12);
        assert!(MarkSpace::with_density(2.0, Density::parse_expr("3 * x * x").unwrap(), Some(7.0)).is_err());
        assert!((space.moment(1) - 12.0).abs() < 1e-10);
    }

    #[test]
    fn discrete_masses() {
        let space = MarkSpace::discrete(vec![0.0, 1.0, 2.0], vec![0.5, 1.0, 1.5]).unwrap();
        assert_eq!(space.total_mass(), 3.0);
        assert_eq!(space.mass(&MarkSet::Interval { lo: 0.5, hi: 2.0 }), 2.5);
        assert!(space.contains(1.0) && !space.contains(0.5));
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let rho = unit_rho(2.0);
        assert_eq!(rho.sample(Seed(11)), rho.sample(Seed(11)));
        assert_ne!(rho.sample(Seed(11)), rho.sample(Seed(12)));
        let w = rho.sample(Seed(3));
        assert!(w.atoms().iter().all(|a| rho.contains(a)));
    }

    #[test]
    fn restricted_samplers_stay_in_the_window() {
        let rho = ProductIntensity::new(2.0, MarkSpace::discrete(vec![0.0, 1.0, 2.0], vec![1.0, 1.0, 1.0]).unwrap())
            .unwrap();
        let w = Window::new(TimeInterval::half_open(0.5, 1.0), MarkSet::Interval { lo: 1.0, hi: 5.0 });
        let mut rng = Seed(5).rng();
        for _ in 0..200 {
            let a = rho.sample_in_window(&mut rng, &w).unwrap();
            assert!(w.contains(&a));
        }
        let empty = Window::new(TimeInterval::half_open(0.5, 1.0), MarkSet::Interval { lo: 3.0, hi: 5.0 });
        assert!(rho.sample_in_window(&mut rng, &empty).is_none());
    }

    #[test]
    fn count_mean_and_variance_match_the_intensity() {
        let rho = unit_rho(2.0);
        let n = 100_000u64;
        let counts: Vec<f64> = (0..n).map(|i| rho.sample(Seed(1).derive(i)).len() as f64).collect();
        let est = crate::stats::Estimate::from_samples(&counts);
        assert!(((est.mean - 2.0) / est.stderr).abs() < 4.0, "mean {}", est.mean);
        // Var of a Poisson(2) count is 2; the sample variance has sd ≈ sqrt((μ4 - σ⁴)/n)
        let var = est.stderr * est.stderr * n as f64;
        let mu4 = 2.0 + 3.0 * 4.0;
        let var_se = ((mu4 - 4.0) / n as f64).sqrt();
        assert!(((var - 2.0) / var_se).abs() < 4.0, "var {var}");
    }

    #[test]
    fn integral_examples() {
        let rho = unit_rho(1.0);
        let opts = IntegrationOptions::default();
        let a = Window::new(TimeInterval::half_open(0.0, 0.5), MarkSet::Interval { lo: 0.0, hi: 0.4 });
        let ind = TensorIndicator::new(vec![a], 1.0);
        assert_eq!(rho_integral(&ind, &rho, &opts).unwrap(), Integral::exact(0.2));

        let rho3 = unit_rho(3.0);
        let one = FnKernel::new("one", 2, true, |_| 1.0);
        let got = rho_integral(&one, &rho3, &opts).unwrap();
        assert_eq!(got.method, Method::Quadrature);
        assert!((got.value - 9.0).abs() < 1e-12);

        let t = FnKernel::new("t", 1, false, |a: &[Atom]| a[0].t);
        let got = rho_integral(&t, &rho, &opts).unwrap();
        assert!((got.value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn quadrature_is_linear() {
        let rho = unit_rho(1.5);
        let opts = IntegrationOptions::default();
        let f = FnKernel::new("f", 2, false, |a: &[Atom]| a[0].t * a[1].x + (a[0].x - a[1].t).powi(2));
        let g = FnKernel::new("g", 2, false, |a: &[Atom]| (a[0].t + a[1].t).exp());
        let h = FnKernel::new("h", 2, false, |a: &[Atom]| {
            2.5 * (a[0].t * a[1].x + (a[0].x - a[1].t).powi(2)) - 0.75 * (a[0].t + a[1].t).exp()
        });
        let fi = rho_integral(&f, &rho, &opts).unwrap().value;
        let gi = rho_integral(&g, &rho, &opts).unwrap().value;
        let hi = rho_integral(&h, &rho, &opts).unwrap().value;
        assert!((hi - (2.5 * fi - 0.75 * gi)).abs() < 1e-12 * (1.0 + hi.abs()));
    }

    #[test]
    fn monte_carlo_fallback_reports_an_error_bar() {
        let rho = unit_rho(1.0);
        let step = FnKernel::new("step", 1, false, |a: &[Atom]| if a[0].t < 0.3 { 1.0 } else { 0.0 }).rough();
        let got = rho_integral(&step, &rho, &IntegrationOptions::default()).unwrap();
        assert_eq!(got.method, Method::MonteCarlo);
        assert!(got.stderr > 0.0);
        assert!(((got.value - 0.3) / got.stderr).abs() < 4.0);
        let err = rho_integral(&step, &rho, &IntegrationOptions::exact_only()).unwrap_err();
        assert!(matches!(err, Error::IntegrationUnavailable(_)));
        let step4 = FnKernel::new("step4", 4, false, |_| 1.0).rough();
        let err = rho_integral(&step4, &rho, &IntegrationOptions::exact_only()).unwrap_err();
        assert_eq!(err, Error::UnsupportedDimension { dims: 4 });
    }
}
