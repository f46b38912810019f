use std::fmt;
use std::sync::Arc;

use itertools::Itertools;

use crate::configuration::{Atom, Window};
use crate::error::{Error, Result};
use crate::measure::ProductIntensity;

pub type KernelRef = Arc<dyn Kernel>;

/// A map `f: Xⁿ → ℝ` with whatever integration capability it can offer.
///
/// `integrate_slots` receives one entry per argument: `Some(a)` holds that
/// argument fixed at `a`, `None` integrates it against `ρ`. Returning `None`
/// means no closed form; callers then fall back to quadrature (for
/// [`Kernel::smooth`] kernels) or Monte Carlo.
pub trait Kernel: Send + Sync + fmt::Debug {
    fn name(&self) -> String;

    fn order(&self) -> usize;

    fn eval(&self, args: &[Atom]) -> f64;

    fn symmetric(&self) -> bool {
        false
    }

    /// Suitable for Gauss–Legendre quadrature, possibly after splitting at
    /// [`Kernel::breakpoints`].
    fn smooth(&self) -> bool {
        false
    }

    fn integrate_slots(&self, _slots: &[Option<Atom>], _rho: &ProductIntensity) -> Option<f64> {
        None
    }

    /// Closed form of `∫ f² dρ^{⊗n}`.
    fn squared_norm(&self, _rho: &ProductIntensity) -> Option<f64> {
        None
    }

    /// Product support `W₁ × … × Wₙ` outside of which `f` vanishes.
    fn support(&self) -> Option<Vec<Window>> {
        None
    }

    /// Time and mark coordinates where `f` may jump.
    fn breakpoints(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        None
    }
}

fn fixed_all(slots: &[Option<Atom>]) -> Option<Vec<Atom>> {
    slots.iter().copied().collect()
}

/// A kernel given by a closure.
#[derive(Clone)]
pub struct FnKernel {
    name: String,
    order: usize,
    symmetric: bool,
    smooth: bool,
    f: Arc<dyn Fn(&[Atom]) -> f64 + Send + Sync>,
}

impl FnKernel {
    /// Smooth by default; see [`FnKernel::rough`].
    pub fn new(
        name: impl Into<String>,
        order: usize,
        symmetric: bool,
        f: impl Fn(&[Atom]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { name: name.into(), order, symmetric, smooth: true, f: Arc::new(f) }
    }

    /// Marks the kernel as unsuitable for quadrature.
    pub fn rough(mut self) -> Self {
        self.smooth = false;
        self
    }
}

impl fmt::Debug for FnKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnKernel").field("name", &self.name).field("order", &self.order).finish()
    }
}

impl Kernel for FnKernel {
    fn name(&self) -> String {
        self.name.clone()
    }
    fn order(&self) -> usize {
        self.order
    }
    fn eval(&self, args: &[Atom]) -> f64 {
        (self.f)(args)
    }
    fn symmetric(&self) -> bool {
        self.symmetric
    }
    fn smooth(&self) -> bool {
        self.smooth
    }
}

/// `c · 1_{W₁} ⊗ … ⊗ 1_{Wₙ}`.
#[derive(Debug, Clone)]
pub struct TensorIndicator {
    windows: Vec<Window>,
    scale: f64,
}

impl TensorIndicator {
    pub fn new(windows: Vec<Window>, scale: f64) -> Self {
        assert!(!windows.is_empty(), "a tensor indicator needs at least one factor");
        Self { windows, scale }
    }

    /// `1_W^{⊗n}`.
    pub fn power(window: Window, n: usize) -> Self {
        Self::new(vec![window; n], 1.0)
    }

    pub fn windows(&self) -> &[Window] {
        &self.windows
    }
}

impl Kernel for TensorIndicator {
    fn name(&self) -> String {
        format!("tensor_ind[n={}, c={}]", self.windows.len(), self.scale)
    }
    fn order(&self) -> usize {
        self.windows.len()
    }
    fn eval(&self, args: &[Atom]) -> f64 {
        if self.windows.iter().zip(args).all(|(w, a)| w.contains(a)) {
            self.scale
        } else {
            0.0
        }
    }
    fn symmetric(&self) -> bool {
        self.windows.iter().all(|w| *w == self.windows[0])
    }
    fn smooth(&self) -> bool {
        true
    }
    fn integrate_slots(&self, slots: &[Option<Atom>], rho: &ProductIntensity) -> Option<f64> {
        let mut v = self.scale;
        for (w, s) in self.windows.iter().zip(slots) {
            v *= match s {
                Some(a) => w.indicator(a),
                None => rho.window_mass(w),
            };
        }
        Some(v)
    }
    fn squared_norm(&self, rho: &ProductIntensity) -> Option<f64> {
        Some(self.scale * self.scale * self.windows.iter().map(|w| rho.window_mass(w)).product::<f64>())
    }
    fn support(&self) -> Option<Vec<Window>> {
        Some(self.windows.clone())
    }
    fn breakpoints(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let times = self.windows.iter().flat_map(|w| [w.time.start, w.time.end]).collect();
        let marks = self
            .windows
            .iter()
            .flat_map(|w| match w.marks {
                crate::configuration::MarkSet::All => vec![],
                crate::configuration::MarkSet::Interval { lo, hi } => vec![lo, hi],
            })
            .collect();
        Some((times, marks))
    }
}

/// `c · Π tᵢ^p xᵢ^q`.
#[derive(Debug, Clone)]
pub struct Monomial {
    order: usize,
    time_degree: u32,
    mark_degree: u32,
    scale: f64,
}

impl Monomial {
    pub fn new(order: usize, time_degree: u32, mark_degree: u32, scale: f64) -> Self {
        Self { order, time_degree, mark_degree, scale }
    }

    fn factor(&self, a: &Atom) -> f64 {
        a.t.powi(self.time_degree as i32) * a.x.powi(self.mark_degree as i32)
    }

    fn slot_integral(p: u32, q: u32, rho: &ProductIntensity) -> f64 {
        rho.horizon().powi(p as i32 + 1) / f64::from(p + 1) * rho.marks().moment(q)
    }
}

impl Kernel for Monomial {
    fn name(&self) -> String {
        format!("poly[n={}, t^{} x^{}, c={}]", self.order, self.time_degree, self.mark_degree, self.scale)
    }
    fn order(&self) -> usize {
        self.order
    }
    fn eval(&self, args: &[Atom]) -> f64 {
        self.scale * args.iter().map(|a| self.factor(a)).product::<f64>()
    }
    fn symmetric(&self) -> bool {
        true
    }
    fn smooth(&self) -> bool {
        true
    }
    fn integrate_slots(&self, slots: &[Option<Atom>], rho: &ProductIntensity) -> Option<f64> {
        let free = Self::slot_integral(self.time_degree, self.mark_degree, rho);
        Some(
            self.scale
                * slots
                    .iter()
                    .map(|s| match s {
                        Some(a) => self.factor(a),
                        None => free,
                    })
                    .product::<f64>(),
        )
    }
    fn squared_norm(&self, rho: &ProductIntensity) -> Option<f64> {
        let one = Self::slot_integral(2 * self.time_degree, 2 * self.mark_degree, rho);
        Some(self.scale * self.scale * one.powi(self.order as i32))
    }
}

/// `exp(−|a − b|² / 2σ²)` on pairs of atoms.
#[derive(Debug, Clone)]
pub struct GaussKernel {
    sigma: f64,
}

impl GaussKernel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("gauss kernel width {sigma} must be positive")));
        }
        Ok(Self { sigma })
    }
}

impl Kernel for GaussKernel {
    fn name(&self) -> String {
        format!("gauss[σ={}]", self.sigma)
    }
    fn order(&self) -> usize {
        2
    }
    fn eval(&self, args: &[Atom]) -> f64 {
        let dt = args[0].t - args[1].t;
        let dx = args[0].x - args[1].x;
        (-(dt * dt + dx * dx) / (2.0 * self.sigma * self.sigma)).exp()
    }
    fn symmetric(&self) -> bool {
        true
    }
    fn smooth(&self) -> bool {
        true
    }
}

/// `f̃ = (1/n!) Σ_σ f ∘ σ`.
#[derive(Debug, Clone)]
pub struct Symmetrized {
    inner: KernelRef,
    perms: Vec<Vec<usize>>,
}

pub const MAX_SYMMETRIZE_ORDER: usize = 8;

impl Symmetrized {
    pub fn new(inner: KernelRef) -> Result<Self> {
        let n = inner.order();
        if n > MAX_SYMMETRIZE_ORDER {
            return Err(Error::OrderTooLarge { order: n, max: MAX_SYMMETRIZE_ORDER });
        }
        let perms = (0..n).permutations(n).collect();
        Ok(Self { inner, perms })
    }
}

impl Kernel for Symmetrized {
    fn name(&self) -> String {
        format!("sym({})", self.inner.name())
    }
    fn order(&self) -> usize {
        self.inner.order()
    }
    fn eval(&self, args: &[Atom]) -> f64 {
        let mut buf = args.to_vec();
        let mut acc = crate::stats::Accumulator::default();
        for p in &self.perms {
            for (slot, &src) in buf.iter_mut().zip(p) {
                *slot = args[src];
            }
            acc.add(self.inner.eval(&buf));
        }
        acc.sum() / self.perms.len() as f64
    }
    fn symmetric(&self) -> bool {
        true
    }
    fn smooth(&self) -> bool {
        self.inner.smooth()
    }
    fn integrate_slots(&self, slots: &[Option<Atom>], rho: &ProductIntensity) -> Option<f64> {
        let mut buf = slots.to_vec();
        let mut total = 0.0;
        for p in &self.perms {
            for (slot, &src) in buf.iter_mut().zip(p) {
                *slot = slots[src];
            }
            total += self.inner.integrate_slots(&buf, rho)?;
        }
        Some(total / self.perms.len() as f64)
    }
    fn breakpoints(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        self.inner.breakpoints()
    }
}

/// `Σ cᵢ fᵢ` over kernels of equal order.
#[derive(Debug, Clone)]
pub struct LinearCombination {
    terms: Vec<(f64, KernelRef)>,
    symmetric: bool,
}

impl LinearCombination {
    /// `symmetric` declares the symmetry of the sum, which may hold even when
    /// the terms are not symmetric individually.
    pub fn new(terms: Vec<(f64, KernelRef)>, symmetric: bool) -> Result<Self> {
        let Some(first) = terms.first() else {
            return Err(Error::InvalidArgument("empty linear combination".into()));
        };
        let n = first.1.order();
        if terms.iter().any(|(_, k)| k.order() != n) {
            return Err(Error::InvalidArgument("linear combination of kernels of different orders".into()));
        }
        Ok(Self { terms, symmetric })
    }
}

impl Kernel for LinearCombination {
    fn name(&self) -> String {
        self.terms.iter().map(|(c, k)| format!("{c}·{}", k.name())).join(" + ")
    }
    fn order(&self) -> usize {
        self.terms[0].1.order()
    }
    fn eval(&self, args: &[Atom]) -> f64 {
        self.terms.iter().map(|(c, k)| c * k.eval(args)).sum()
    }
    fn symmetric(&self) -> bool {
        self.symmetric
    }
    fn smooth(&self) -> bool {
        self.terms.iter().all(|(_, k)| k.smooth())
    }
    fn integrate_slots(&self, slots: &[Option<Atom>], rho: &ProductIntensity) -> Option<f64> {
        let mut total = 0.0;
        for (c, k) in &self.terms {
            total += c * k.integrate_slots(slots, rho)?;
        }
        Some(total)
    }
    fn breakpoints(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let mut times = Vec::new();
        let mut marks = Vec::new();
        for (_, k) in &self.terms {
            if let Some((t, x)) = k.breakpoints() {
                times.extend(t);
                marks.extend(x);
            }
        }
        Some((times, marks))
    }
}

/// `f(a₁, …, a_k, ·)`: the first `k` arguments frozen.
#[derive(Debug, Clone)]
pub struct Section {
    inner: KernelRef,
    fixed: Vec<Atom>,
}

impl Section {
    pub fn new(inner: KernelRef, fixed: Vec<Atom>) -> Result<Self> {
        if fixed.len() > inner.order() {
            return Err(Error::InvalidArgument("section fixes more arguments than the kernel has".into()));
        }
        Ok(Self { inner, fixed })
    }

    fn full_args(&self, args: &[Atom]) -> Vec<Atom> {
        self.fixed.iter().chain(args).copied().collect()
    }
}

impl Kernel for Section {
    fn name(&self) -> String {
        format!("{}({} fixed)", self.inner.name(), self.fixed.len())
    }
    fn order(&self) -> usize {
        self.inner.order() - self.fixed.len()
    }
    fn eval(&self, args: &[Atom]) -> f64 {
        self.inner.eval(&self.full_args(args))
    }
    fn symmetric(&self) -> bool {
        self.inner.symmetric()
    }
    fn smooth(&self) -> bool {
        self.inner.smooth()
    }
    fn integrate_slots(&self, slots: &[Option<Atom>], rho: &ProductIntensity) -> Option<f64> {
        let full: Vec<Option<Atom>> = self.fixed.iter().map(|a| Some(*a)).chain(slots.iter().copied()).collect();
        self.inner.integrate_slots(&full, rho)
    }
    fn support(&self) -> Option<Vec<Window>> {
        self.inner.support().map(|w| w[self.fixed.len()..].to_vec())
    }
    fn breakpoints(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        self.inner.breakpoints()
    }
}

/// `c · ∫ f(y₁, …, y_m, ·) dρ^{⊗m}`, built only over closed-form kernels.
#[derive(Debug, Clone)]
pub struct Marginal {
    inner: KernelRef,
    integrated: usize,
    coef: f64,
    rho: ProductIntensity,
}

impl Marginal {
    pub fn new(inner: KernelRef, integrated: usize, coef: f64, rho: &ProductIntensity) -> Result<Self> {
        let n = inner.order();
        if integrated >= n {
            return Err(Error::InvalidArgument("a marginal must keep at least one argument".into()));
        }
        let probe: Vec<Option<Atom>> = (0..n).map(|_| None).collect();
        if inner.integrate_slots(&probe, rho).is_none() {
            return Err(Error::IntegrationUnavailable(format!(
                "kernel `{}` has no closed-form partial integrals",
                inner.name()
            )));
        }
        Ok(Self { inner, integrated, coef, rho: rho.clone() })
    }

    fn slots(&self, rest: &[Option<Atom>]) -> Vec<Option<Atom>> {
        std::iter::repeat_n(None, self.integrated).chain(rest.iter().copied()).collect()
    }
}

impl Kernel for Marginal {
    fn name(&self) -> String {
        format!("{}·∫^{}{}", self.coef, self.integrated, self.inner.name())
    }
    fn order(&self) -> usize {
        self.inner.order() - self.integrated
    }
    fn eval(&self, args: &[Atom]) -> f64 {
        let rest: Vec<Option<Atom>> = args.iter().map(|a| Some(*a)).collect();
        self.coef * self.inner.integrate_slots(&self.slots(&rest), &self.rho).unwrap_or(f64::NAN)
    }
    fn symmetric(&self) -> bool {
        self.inner.symmetric()
    }
    fn smooth(&self) -> bool {
        self.inner.smooth()
    }
    fn integrate_slots(&self, slots: &[Option<Atom>], rho: &ProductIntensity) -> Option<f64> {
        Some(self.coef * self.inner.integrate_slots(&self.slots(slots), rho)?)
    }
    fn support(&self) -> Option<Vec<Window>> {
        self.inner.support().map(|w| w[self.integrated..].to_vec())
    }
    fn breakpoints(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        self.inner.breakpoints()
    }
}

/// `f²`, used for L² norms without a closed form.
#[derive(Debug, Clone)]
pub struct Squared(pub KernelRef);

impl Kernel for Squared {
    fn name(&self) -> String {
        format!("({})²", self.0.name())
    }
    fn order(&self) -> usize {
        self.0.order()
    }
    fn eval(&self, args: &[Atom]) -> f64 {
        let v = self.0.eval(args);
        v * v
    }
    fn symmetric(&self) -> bool {
        self.0.symmetric()
    }
    fn smooth(&self) -> bool {
        self.0.smooth()
    }
    fn integrate_slots(&self, slots: &[Option<Atom>], rho: &ProductIntensity) -> Option<f64> {
        if slots.iter().all(Option::is_none) {
            return self.0.squared_norm(rho);
        }
        fixed_all(slots).map(|args| self.eval(&args))
    }
    fn support(&self) -> Option<Vec<Window>> {
        self.0.support()
    }
    fn breakpoints(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        self.0.breakpoints()
    }
}
