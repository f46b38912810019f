//! Built-in functionals and kernels, with their closed forms.
//!
//! For a window `A` and `ρ_A = ρ(A)`:
//!
//! | functional   | `𝒯ₙF`                         | `𝔼F`                       | `(D_{(t,x)}F)^p`                                  |
//! |--------------|-------------------------------|----------------------------|---------------------------------------------------|
//! | `N(A)`       | `1_A` (n = 1)                 | `ρ_A`                      | `1_A`                                             |
//! | `N(A)²`      | `1_A`, `2·1_A⊗1_A`            | `ρ_A + ρ_A²`               | `1_A (2(N_{t−}(A) + ρ(A ∩ [t,T])) + 1)`           |
//! | `N(A)N(B)`   | `1_{A∩B}`, `1_A⊗1_B + 1_B⊗1_A` | `ρ_Aρ_B + ρ_{A∩B}`         | see [`product_counts_full`]                       |
//! | `e^{βN(A)}`  | `(e^β−1)ⁿ 1_A^{⊗n}`           | `exp(ρ_A(e^β−1))`          | `1_A (e^β−1) e^{βN_{t−}(A)} e^{ρ(A∩[t,T])(e^β−1)}` |

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::configuration::{Atom, Configuration, Window};
use crate::error::{Error, Result};
use crate::integrals::{GaussKernel, KernelRef, LinearCombination, Monomial, TensorIndicator};
use crate::malliavin::{Functional, Projection};
use crate::measure::ProductIntensity;
use crate::processes::HawkesModel;

fn all_in(w: &Window, args: &[Atom]) -> bool {
    args.iter().all(|a| w.contains(a))
}

fn count_before(w: &Window, omega: &Configuration, t: f64) -> f64 {
    omega.count_before(w, t) as f64
}

/// `ρ(W ∩ [t, T])`.
fn future_mass(rho: &ProductIntensity, w: &Window, t: f64) -> f64 {
    let len = (w.time.end.min(rho.horizon()) - w.time.start.max(t).max(0.0)).max(0.0);
    len * mark_mass(rho, w)
}

fn time_indicator(w: &Window, t: f64) -> f64 {
    if w.time.contains(t) {
        1.0
    } else {
        0.0
    }
}

fn mark_mass(rho: &ProductIntensity, w: &Window) -> f64 {
    rho.marks().mass(&w.marks)
}

/// `N(A)`.
pub fn count(a: Window) -> Functional {
    Functional::new("count", move |w| w.count(&a) as f64).with_pseudo_kernels(move |args| match args.len() {
        1 if a.contains(&args[0]) => 1.0,
        _ => 0.0,
    })
}

pub fn count_full(a: Window, rho: &ProductIntensity) -> Result<Functional> {
    let ra = rho.window_mass(&a);
    let pa = mark_mass(rho, &a);
    count(a)
        .with_mean(ra)
        .with_chaos(vec![Arc::new(TensorIndicator::power(a, 1))], true)
        .with_projection(Projection {
            eval: Arc::new(move |_, x| a.indicator(x)),
            mark_integral: Arc::new(move |_, t| time_indicator(&a, t) * pa),
            breakpoints: vec![a.time.start, a.time.end],
        })
        .validated(rho)
}

/// `N(A)²`.
pub fn count_squared(a: Window) -> Functional {
    Functional::new("count_squared", move |w| {
        let k = w.count(&a) as f64;
        k * k
    })
    .with_pseudo_kernels(move |args| match args.len() {
        1 if all_in(&a, args) => 1.0,
        2 if all_in(&a, args) => 2.0,
        _ => 0.0,
    })
}

pub fn count_squared_full(a: Window, rho: &ProductIntensity) -> Result<Functional> {
    let ra = rho.window_mass(&a);
    let pa = mark_mass(rho, &a);
    let r = rho.clone();
    let r2 = rho.clone();
    count_squared(a)
        .with_mean(ra + ra * ra)
        .with_chaos(
            vec![
                Arc::new(TensorIndicator::new(vec![a], 2.0 * ra + 1.0)),
                Arc::new(TensorIndicator::new(vec![a, a], 2.0)),
            ],
            true,
        )
        .with_projection(Projection {
            eval: Arc::new(move |w, x| {
                a.indicator(x) * (2.0 * (count_before(&a, w, x.t) + future_mass(&r, &a, x.t)) + 1.0)
            }),
            mark_integral: Arc::new(move |w, t| {
                time_indicator(&a, t) * pa * (2.0 * (count_before(&a, w, t) + future_mass(&r2, &a, t)) + 1.0)
            }),
            breakpoints: vec![a.time.start, a.time.end],
        })
        .validated(rho)
}

/// `N(A) · N(B)`.
pub fn product_counts(a: Window, b: Window) -> Functional {
    Functional::new("product_counts", move |w| w.count(&a) as f64 * w.count(&b) as f64).with_pseudo_kernels(
        move |args| match args {
            [x] => a.indicator(x) * b.indicator(x),
            [x, y] => a.indicator(x) * b.indicator(y) + b.indicator(x) * a.indicator(y),
            _ => 0.0,
        },
    )
}

/// `Z^p = 1_A(N_{t−}(B) + ρ(B∩[t,T])) + 1_B(N_{t−}(A) + ρ(A∩[t,T])) + 1_{A∩B}`.
pub fn product_counts_full(a: Window, b: Window, rho: &ProductIntensity) -> Result<Functional> {
    let ab = a.intersect(&b);
    let (ra, rb, rab) = (rho.window_mass(&a), rho.window_mass(&b), rho.window_mass(&ab));
    let (pa, pb, pab) = (mark_mass(rho, &a), mark_mass(rho, &b), mark_mass(rho, &ab));
    let t1: KernelRef = Arc::new(LinearCombination::new(
        vec![
            (rb, Arc::new(TensorIndicator::power(a, 1)) as KernelRef),
            (ra, Arc::new(TensorIndicator::power(b, 1))),
            (1.0, Arc::new(TensorIndicator::power(ab, 1))),
        ],
        true,
    )?);
    let t2: KernelRef = Arc::new(LinearCombination::new(
        vec![
            (1.0, Arc::new(TensorIndicator::new(vec![a, b], 1.0)) as KernelRef),
            (1.0, Arc::new(TensorIndicator::new(vec![b, a], 1.0))),
        ],
        true,
    )?);
    let r = rho.clone();
    let r2 = rho.clone();
    product_counts(a, b)
        .with_mean(ra * rb + rab)
        .with_chaos(vec![t1, t2], true)
        .with_projection(Projection {
            eval: Arc::new(move |w, x| {
                a.indicator(x) * (count_before(&b, w, x.t) + future_mass(&r, &b, x.t))
                    + b.indicator(x) * (count_before(&a, w, x.t) + future_mass(&r, &a, x.t))
                    + ab.indicator(x)
            }),
            mark_integral: Arc::new(move |w, t| {
                time_indicator(&a, t) * pa * (count_before(&b, w, t) + future_mass(&r2, &b, t))
                    + time_indicator(&b, t) * pb * (count_before(&a, w, t) + future_mass(&r2, &a, t))
                    + time_indicator(&ab, t) * pab
            }),
            breakpoints: vec![a.time.start, a.time.end, b.time.start, b.time.end],
        })
        .validated(rho)
}

/// `exp(β N(A))`.
pub fn exp_count(a: Window, beta: f64) -> Functional {
    let c = beta.exp_m1();
    Functional::new("exp_count", move |w| (beta * w.count(&a) as f64).exp()).with_pseudo_kernels(move |args| {
        if all_in(&a, args) {
            c.powi(args.len() as i32)
        } else {
            0.0
        }
    })
}

/// Highest chaos order listed for `exp_count`; its expansion is infinite.
pub const EXP_COUNT_CHAOS_ORDERS: usize = 12;

pub fn exp_count_full(a: Window, beta: f64, rho: &ProductIntensity) -> Result<Functional> {
    let c = beta.exp_m1();
    let ra = rho.window_mass(&a);
    let pa = mark_mass(rho, &a);
    let mean = (ra * c).exp();
    let kernels = (1..=EXP_COUNT_CHAOS_ORDERS)
        .map(|n| Arc::new(TensorIndicator::new(vec![a; n], mean * c.powi(n as i32))) as KernelRef)
        .collect();
    let r = rho.clone();
    let r2 = rho.clone();
    exp_count(a, beta)
        .with_mean(mean)
        .with_chaos(kernels, false)
        .with_projection(Projection {
            eval: Arc::new(move |w, x| {
                a.indicator(x) * c * (beta * count_before(&a, w, x.t) + c * future_mass(&r, &a, x.t)).exp()
            }),
            mark_integral: Arc::new(move |w, t| {
                time_indicator(&a, t) * pa * c * (beta * count_before(&a, w, t) + c * future_mass(&r2, &a, t)).exp()
            }),
            breakpoints: vec![a.time.start, a.time.end],
        })
        .validated(rho)
}

/// Named windows referenced by functional and kernel specs.
pub type WindowSet = BTreeMap<String, Window>;

fn lookup(sets: &WindowSet, name: &str) -> Result<Window> {
    sets.get(name).copied().ok_or_else(|| Error::InvalidArgument(format!("unknown set `{name}`")))
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::InvalidArgument(format!("`{s}` is not a valid {what}")))
}

fn split_spec(spec: &str) -> (&str, Vec<&str>) {
    match spec.split_once(':') {
        Some((head, rest)) => (head, rest.split(',').map(str::trim).collect()),
        None => (spec, Vec::new()),
    }
}

/// A functional from the registry: `one`, `count:A`, `count_squared:A`,
/// `product_counts:A,B`, `exp_count:A,β`, `hawkes_HT`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FunctionalSpec {
    One,
    Count(String),
    CountSquared(String),
    ProductCounts(String, String),
    ExpCount(String, f64),
    HawkesHt(String),
}

impl FunctionalSpec {
    pub fn parse(spec: &str) -> Result<Self> {
        let (head, args) = split_spec(spec.trim());
        let bad = || Error::InvalidArgument(format!("malformed functional spec `{spec}`"));
        Ok(match (head, args.as_slice()) {
            ("one", []) => FunctionalSpec::One,
            ("count", [a]) => FunctionalSpec::Count(a.to_string()),
            ("count_squared", [a]) => FunctionalSpec::CountSquared(a.to_string()),
            ("product_counts", [a, b]) => FunctionalSpec::ProductCounts(a.to_string(), b.to_string()),
            ("exp_count", [a, beta]) => FunctionalSpec::ExpCount(a.to_string(), parse_f64(beta, "exponent")?),
            ("hawkes_HT", []) => FunctionalSpec::HawkesHt("default".into()),
            ("hawkes_HT", [m]) => FunctionalSpec::HawkesHt(m.to_string()),
            _ => return Err(bad()),
        })
    }

    /// Builds the fully annotated functional. `hawkes_HT` needs a model.
    pub fn build(&self, sets: &WindowSet, rho: &ProductIntensity, hawkes: Option<&HawkesModel>) -> Result<Functional> {
        match self {
            FunctionalSpec::One => Functional::constant(1.0).validated(rho),
            FunctionalSpec::Count(a) => count_full(lookup(sets, a)?, rho),
            FunctionalSpec::CountSquared(a) => count_squared_full(lookup(sets, a)?, rho),
            FunctionalSpec::ProductCounts(a, b) => product_counts_full(lookup(sets, a)?, lookup(sets, b)?, rho),
            FunctionalSpec::ExpCount(a, beta) => exp_count_full(lookup(sets, a)?, *beta, rho),
            FunctionalSpec::HawkesHt(_) => {
                let model = hawkes.ok_or_else(|| Error::InvalidArgument("hawkes_HT needs a hawkes model".into()))?;
                Ok(crate::processes::hawkes_functional(model))
            }
        }
    }
}

impl std::fmt::Display for FunctionalSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FunctionalSpec::One => write!(f, "one"),
            FunctionalSpec::Count(a) => write!(f, "count:{a}"),
            FunctionalSpec::CountSquared(a) => write!(f, "count_squared:{a}"),
            FunctionalSpec::ProductCounts(a, b) => write!(f, "product_counts:{a},{b}"),
            FunctionalSpec::ExpCount(a, beta) => write!(f, "exp_count:{a},{beta}"),
            FunctionalSpec::HawkesHt(m) => write!(f, "hawkes_HT:{m}"),
        }
    }
}

impl TryFrom<String> for FunctionalSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        FunctionalSpec::parse(&s)
    }
}

impl From<FunctionalSpec> for String {
    fn from(s: FunctionalSpec) -> String {
        s.to_string()
    }
}

/// A kernel from the registry: `ind:A`, `tensor_ind:A` (order 2),
/// `tensor_ind:A,B,…` (one factor per set), `poly:d` / `poly:d,n`, `gauss:σ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum KernelSpec {
    Indicator(String),
    TensorIndicator(Vec<String>),
    Poly { degree: u32, order: usize },
    Gauss(f64),
}

impl KernelSpec {
    pub fn parse(spec: &str) -> Result<Self> {
        let (head, args) = split_spec(spec.trim());
        let bad = || Error::InvalidArgument(format!("malformed kernel spec `{spec}`"));
        Ok(match (head, args.as_slice()) {
            ("ind", [a]) => KernelSpec::Indicator(a.to_string()),
            ("tensor_ind", [a]) => KernelSpec::TensorIndicator(vec![a.to_string(), a.to_string()]),
            ("tensor_ind", sets) if sets.len() >= 2 => {
                KernelSpec::TensorIndicator(sets.iter().map(|s| s.to_string()).collect())
            }
            ("poly", [d]) => KernelSpec::Poly { degree: d.parse().map_err(|_| bad())?, order: 1 },
            ("poly", [d, n]) => KernelSpec::Poly {
                degree: d.parse().map_err(|_| bad())?,
                order: n.parse().map_err(|_| bad())?,
            },
            ("gauss", [s]) => KernelSpec::Gauss(parse_f64(s, "width")?),
            _ => return Err(bad()),
        })
    }

    pub fn order(&self) -> usize {
        match self {
            KernelSpec::Indicator(_) => 1,
            KernelSpec::TensorIndicator(v) => v.len(),
            KernelSpec::Poly { order, .. } => *order,
            KernelSpec::Gauss(_) => 2,
        }
    }

    /// Builds the kernel and spot-checks its declared properties.
    pub fn build(&self, sets: &WindowSet, rho: &ProductIntensity) -> Result<KernelRef> {
        let k: KernelRef = match self {
            KernelSpec::Indicator(a) => Arc::new(TensorIndicator::power(lookup(sets, a)?, 1)),
            KernelSpec::TensorIndicator(names) => Arc::new(TensorIndicator::new(
                names.iter().map(|n| lookup(sets, n)).collect::<Result<_>>()?,
                1.0,
            )),
            KernelSpec::Poly { degree, order } => {
                if *order == 0 {
                    return Err(Error::InvalidArgument("kernel order must be positive".into()));
                }
                Arc::new(Monomial::new(*order, *degree, 0, 1.0))
            }
            KernelSpec::Gauss(s) => Arc::new(GaussKernel::new(*s)?),
        };
        crate::integrals::validate_kernel(k.as_ref(), rho, crate::measure::Seed(0x6b65_726e))?;
        Ok(k)
    }
}

impl std::fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KernelSpec::Indicator(a) => write!(f, "ind:{a}"),
            KernelSpec::TensorIndicator(v) if v.len() == 2 && v[0] == v[1] => write!(f, "tensor_ind:{}", v[0]),
            KernelSpec::TensorIndicator(v) => write!(f, "tensor_ind:{}", v.join(",")),
            KernelSpec::Poly { degree, order: 1 } => write!(f, "poly:{degree}"),
            KernelSpec::Poly { degree, order } => write!(f, "poly:{degree},{order}"),
            KernelSpec::Gauss(s) => write!(f, "gauss:{s}"),
        }
    }
}

impl TryFrom<String> for KernelSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        KernelSpec::parse(&s)
    }
}

impl From<KernelSpec> for String {
    fn from(s: KernelSpec) -> String {
        s.to_string()
    }
}
