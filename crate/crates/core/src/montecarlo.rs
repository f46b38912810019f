//! Seeded parallel replication and the statistical checks: Mecke formula,
//! integration by parts, isometry.
//!
//! Replication `i` draws from its own stream `seed.derive(i)` and results are
//! collected in index order, so every report is bitwise independent of the
//! number of worker threads.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::configuration::{Atom, Configuration, Window};
use crate::error::{Error, Result};
use crate::integrals::{
    eval_compensated, eval_uncompensated, factorial, l2_norm_squared, Kernel, KernelRef, TensorIndicator,
};
use crate::malliavin::{iterated_difference, Functional};
use crate::measure::{IntegrationOptions, ProductIntensity, Seed};
use crate::stats::{z_score, Accumulator, Estimate};

pub const DEFAULT_Z_MAX: f64 = 4.0;

/// Highest kernel order accepted by the Mecke and integration-by-parts checks.
pub const MAX_CHECK_ORDER: usize = 3;

/// Runs `f(i, rng_i)` for `i < n` in parallel; output is in index order.
pub fn replicate<T, F>(n: usize, seed: Seed, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, &mut ChaCha8Rng) -> T + Sync,
{
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed.derive(i).rng();
            f(i, &mut rng)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub check: String,
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pass: Option<bool>,
}

impl EstimateReport {
    pub fn from_estimate(check: &str, e: Estimate) -> Self {
        Self { check: check.to_owned(), n: e.n, mean: e.mean, stderr: e.stderr, target: None, z: None, pass: None }
    }

    pub fn with_target(mut self, target: f64, z_max: f64) -> Self {
        let z = z_score(self.mean - target, self.stderr);
        self.target = Some(target);
        self.z = Some(z);
        self.pass = Some(z.abs() < z_max);
        self
    }
}

/// Mean and standard error of `G` over `n` independent Poisson samples.
pub fn estimate(
    g: impl Fn(&crate::configuration::Configuration) -> f64 + Sync,
    rho: &ProductIntensity,
    n: usize,
    seed: Seed,
) -> Result<EstimateReport> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("estimate needs n ≥ 2, got {n}")));
    }
    let values = replicate(n, seed, |_, rng| g(&rho.sample_with(rng)));
    Ok(EstimateReport::from_estimate("estimate", Estimate::from_samples(&values)))
}

/// Two sides of an identity estimated on shared samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedReport {
    pub check: String,
    pub functional: String,
    pub kernel: String,
    pub k: usize,
    pub n: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub lhs_stderr: f64,
    pub rhs_stderr: f64,
    /// Standard error of the paired difference `lhs − rhs`.
    pub diff_stderr: f64,
    pub z: f64,
    pub z_max: f64,
    pub pass: bool,
}

impl PairedReport {
    fn from_pairs(check: &str, f: &Functional, h: &dyn Kernel, pairs: &[(f64, f64)], z_max: f64) -> Self {
        let lhs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let rhs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let diff: Vec<f64> = pairs.iter().map(|p| p.0 - p.1).collect();
        let (l, r, d) = (Estimate::from_samples(&lhs), Estimate::from_samples(&rhs), Estimate::from_samples(&diff));
        let z = z_score(d.mean, d.stderr);
        Self {
            check: check.to_owned(),
            functional: f.name().to_owned(),
            kernel: h.name(),
            k: h.order(),
            n: pairs.len(),
            lhs: l.mean,
            rhs: r.mean,
            lhs_stderr: l.stderr,
            rhs_stderr: r.stderr,
            diff_stderr: d.stderr,
            z,
            z_max,
            pass: z.abs() < z_max,
        }
    }
}

/// An anchor tuple drawn from `ρ^{⊗k}` restricted to the kernel's support,
/// with the importance weight `Π ρ(W_j)`.
fn draw_anchor(h: &dyn Kernel, rho: &ProductIntensity, rng: &mut ChaCha8Rng) -> (Vec<Atom>, f64) {
    match h.support() {
        Some(windows) => {
            let mut weight = 1.0;
            let mut tuple = Vec::with_capacity(windows.len());
            for w in &windows {
                let m = rho.window_mass(w);
                match rho.sample_in_window(rng, w) {
                    Some(a) if m > 0.0 => {
                        weight *= m;
                        tuple.push(a);
                    }
                    _ => return (Vec::new(), 0.0),
                }
            }
            (tuple, weight)
        }
        None => {
            let tuple = (0..h.order()).map(|_| rho.sample_atom(rng)).collect();
            (tuple, rho.total_mass().powi(h.order() as i32))
        }
    }
}

fn check_order(h: &dyn Kernel) -> Result<usize> {
    let k = h.order();
    if k == 0 || k > MAX_CHECK_ORDER {
        return Err(Error::OrderTooLarge { order: k, max: MAX_CHECK_ORDER });
    }
    Ok(k)
}

fn paired<F>(check: &str, f: &Functional, h: &dyn Kernel, n: usize, seed: Seed, z_max: f64, side: F) -> Result<PairedReport>
where
    F: Fn(&mut ChaCha8Rng) -> Result<(f64, f64)> + Sync,
{
    check_order(h)?;
    if n < 2 {
        return Err(Error::InvalidArgument(format!("{check} needs n ≥ 2, got {n}")));
    }
    let pairs = replicate(n, seed, |_, rng| side(rng)).into_iter().collect::<Result<Vec<_>>>()?;
    Ok(PairedReport::from_pairs(check, f, h, &pairs, z_max))
}

/// `𝔼[F · ∫h dN^{(k)}] = ∫ h(x) 𝔼[F(ω + δ_{x₁} + … + δ_{x_k})] ρ^{⊗k}(dx)`.
///
/// Each replication draws `ω` and one anchor tuple; the right side is
/// importance sampled over the support of `h`.
pub fn mecke_check(
    f: &Functional,
    h: &dyn Kernel,
    rho: &ProductIntensity,
    n: usize,
    seed: Seed,
    z_max: f64,
) -> Result<PairedReport> {
    paired("mecke", f, h, n, seed, z_max, |rng| {
        let w = rho.sample_with(rng);
        let lhs = f.eval(&w) * eval_uncompensated(h, &w)?;
        let (anchor, weight) = draw_anchor(h, rho, rng);
        let rhs = if weight == 0.0 { 0.0 } else { weight * h.eval(&anchor) * f.eval(&w.add_points(&anchor)?) };
        Ok((lhs, rhs))
    })
}

/// `𝔼[F · I_k(h)] = ∫ h(x) 𝔼[D^k_x F] ρ^{⊗k}(dx)`.
pub fn ibp_check(
    f: &Functional,
    h: &dyn Kernel,
    rho: &ProductIntensity,
    n: usize,
    seed: Seed,
    z_max: f64,
) -> Result<PairedReport> {
    paired("ibp", f, h, n, seed, z_max, |rng| {
        let w = rho.sample_with(rng);
        let lhs = f.eval(&w) * eval_compensated(h, &w, rho)?;
        let (anchor, weight) = draw_anchor(h, rho, rng);
        let rhs = if weight == 0.0 { 0.0 } else { weight * h.eval(&anchor) * iterated_difference(f, &w, &anchor)? };
        Ok((lhs, rhs))
    })
}

/// `𝔼[Iₙ(f)²]` against `n! ‖f‖²`.
pub fn isometry_check(f: KernelRef, rho: &ProductIntensity, samples: usize, seed: Seed, z_max: f64) -> Result<EstimateReport> {
    let n = f.order();
    if n == 0 || n > MAX_CHECK_ORDER {
        return Err(Error::OrderTooLarge { order: n, max: MAX_CHECK_ORDER });
    }
    if samples < 2 {
        return Err(Error::InvalidArgument(format!("isometry check needs n ≥ 2, got {samples}")));
    }
    let norm = l2_norm_squared(f.clone(), rho, &IntegrationOptions::default())?;
    let values = replicate(samples, seed, |_, rng| {
        let w = rho.sample_with(rng);
        eval_compensated(f.as_ref(), &w, rho).map(|v| v * v)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut report = EstimateReport::from_estimate("isometry", Estimate::from_samples(&values));
    report = report.with_target(factorial(n) * norm, z_max);
    Ok(report)
}

/// Exact isometry constant for `f = 1_A^{⊗n}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IsometryOracle {
    pub order: usize,
    /// `ρ(A)`.
    pub mass: f64,
    /// `𝔼[Iₙ(f)²]`.
    pub second_moment: f64,
    pub norm_squared: f64,
    /// `𝔼[Iₙ(f)²] / ‖f‖²`.
    pub constant: f64,
    /// Largest count `N(A)` summed over.
    pub max_count: usize,
}

/// `Iₙ(1_A^{⊗n})` only sees the `k = N(A)` atoms inside `A`, so its second moment is
/// `Σₖ P(N(A) = k) · Iₙ(ωₖ)²` with `ωₖ` any `k`-atom configuration in `A`. Each
/// `Iₙ(ωₖ)` is evaluated pathwise; the Poisson weights are summed until negligible.
pub fn isometry_oracle(a: &Window, n: usize, rho: &ProductIntensity, seed: Seed) -> Result<IsometryOracle> {
    if n == 0 || n > MAX_CHECK_ORDER {
        return Err(Error::OrderTooLarge { order: n, max: MAX_CHECK_ORDER });
    }
    let mass = rho.window_mass(a);
    if !(mass > 0.0) {
        return Err(Error::InvalidArgument("isometry oracle needs ρ(A) > 0".into()));
    }
    let f: KernelRef = Arc::new(TensorIndicator::power(*a, n));
    let norm = l2_norm_squared(f.clone(), rho, &IntegrationOptions::default())?;
    let max_count = (mass + 12.0 * mass.sqrt() + 40.0).ceil() as usize;
    let mut rng = seed.rng();
    let mut atoms = Vec::with_capacity(max_count);
    let mut acc = Accumulator::default();
    let mut pmf = (-mass).exp();
    for k in 0..=max_count {
        if k > 0 {
            pmf *= mass / k as f64;
            atoms.push(rho.sample_in_window(&mut rng, a).expect("ρ(A) > 0"));
        }
        let w = Configuration::new(atoms.clone(), rho.horizon())?;
        let v = eval_compensated(f.as_ref(), &w, rho)?;
        acc.add(pmf * v * v);
    }
    let second_moment = acc.sum();
    Ok(IsometryOracle { order: n, mass, second_moment, norm_squared: norm, constant: second_moment / norm, max_count })
}
