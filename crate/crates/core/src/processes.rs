//! Point processes with stochastic intensity by Poisson imbedding: a ground
//! Poisson measure on `[0,T] × [0,Θ]` with unit density in the mark θ, and an
//! atom `(t, θ)` is accepted iff `θ ≤ λ_t`. The Hawkes counting variable `H_T`
//! is then a functional of the ground configuration.

use serde::{Deserialize, Serialize};

use crate::configuration::{Atom, Configuration};
use crate::error::{Error, Result};
use crate::expansions::ResidualReport;
use crate::malliavin::{pco_integrand, Functional};
use crate::measure::{MarkSpace, ProductIntensity, Seed};
use crate::montecarlo::{replicate, EstimateReport};
use crate::stats::{Accumulator, Estimate};

/// Excitation kernel `φ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExcitationKernel {
    /// `α e^{−βs}`.
    Exp { alpha: f64, beta: f64 },
    /// `height` on `(0, width]`.
    Box { height: f64, width: f64 },
}

impl ExcitationKernel {
    pub fn eval(&self, lag: f64) -> f64 {
        match *self {
            ExcitationKernel::Exp { alpha, beta } => {
                if lag < 0.0 {
                    0.0
                } else {
                    alpha * (-beta * lag).exp()
                }
            }
            ExcitationKernel::Box { height, width } => {
                if lag >= 0.0 && lag <= width {
                    height
                } else {
                    0.0
                }
            }
        }
    }

    /// `∫₀^∞ φ`.
    pub fn l1_norm(&self) -> f64 {
        match *self {
            ExcitationKernel::Exp { alpha, beta } => alpha / beta,
            ExcitationKernel::Box { height, width } => height * width,
        }
    }
}

/// The JSON model description; `theta_cap` defaults to ten times the
/// stationary mean intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HawkesConfig {
    pub mu: f64,
    pub kernel: ExcitationKernel,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_cap: Option<f64>,
}

/// `λ_t = μ + Σ_{tᵢ < t} φ(t − tᵢ)`, imbedded with mark cap `Θ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HawkesModel {
    mu: f64,
    kernel: ExcitationKernel,
    horizon: f64,
    theta_cap: f64,
}

impl HawkesModel {
    pub fn new(mu: f64, kernel: ExcitationKernel, horizon: f64, theta_cap: f64) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidModel(m));
        if !(mu > 0.0 && mu.is_finite()) {
            return bad(format!("baseline μ = {mu} must be positive"));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return bad(format!("horizon {horizon} must be positive"));
        }
        if !(theta_cap > mu && theta_cap.is_finite()) {
            return bad(format!("mark cap Θ = {theta_cap} must exceed μ = {mu}"));
        }
        match kernel {
            ExcitationKernel::Exp { alpha, beta } => {
                if !(alpha >= 0.0 && alpha.is_finite() && beta > 0.0 && beta.is_finite()) {
                    return bad(format!("exponential kernel needs α ≥ 0 and β > 0, got α = {alpha}, β = {beta}"));
                }
            }
            ExcitationKernel::Box { height, width } => {
                if !(height >= 0.0 && height.is_finite() && width > 0.0 && width.is_finite()) {
                    return bad(format!("box kernel needs height ≥ 0 and width > 0, got {height}, {width}"));
                }
            }
        }
        Ok(Self { mu, kernel, horizon, theta_cap })
    }

    pub fn from_config(c: &HawkesConfig) -> Result<Self> {
        let cap = match c.theta_cap {
            Some(cap) => cap,
            None => {
                let ratio = c.kernel.l1_norm();
                if !(ratio < 1.0) {
                    return Err(Error::InvalidModel(format!(
                        "theta_cap is required when the stability ratio {ratio} is not below 1"
                    )));
                }
                10.0 * c.mu / (1.0 - ratio)
            }
        };
        HawkesModel::new(c.mu, c.kernel, c.horizon, cap)
    }

    pub fn config(&self) -> HawkesConfig {
        HawkesConfig { mu: self.mu, kernel: self.kernel, horizon: self.horizon, theta_cap: Some(self.theta_cap) }
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn kernel(&self) -> ExcitationKernel {
        self.kernel
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn theta_cap(&self) -> f64 {
        self.theta_cap
    }

    pub fn stability_ratio(&self) -> f64 {
        self.kernel.l1_norm()
    }

    /// A warning when the process is not subcritical.
    pub fn stability_warning(&self) -> Option<String> {
        let r = self.stability_ratio();
        (r >= 1.0).then(|| format!("stability ratio ∫φ = {r} is not below 1; the process may explode"))
    }

    /// Stationary mean intensity `μ / (1 − ∫φ)`, when subcritical.
    pub fn stationary_intensity(&self) -> Option<f64> {
        let r = self.stability_ratio();
        (r < 1.0).then(|| self.mu / (1.0 - r))
    }

    /// The ground intensity `dt ⊗ dθ` on `[0,T] × [0,Θ]`.
    pub fn ground_intensity(&self) -> ProductIntensity {
        let marks = MarkSpace::uniform(self.theta_cap, 1.0).expect("Θ > μ > 0");
        ProductIntensity::new(self.horizon, marks).expect("validated horizon")
    }
}

/// `λ_t` from accepted event times, strict past only.
pub fn hawkes_intensity(model: &HawkesModel, events: &[f64], t: f64) -> f64 {
    let mut acc = Accumulator::default();
    acc.add(model.mu);
    for &s in events.iter().filter(|&&s| s < t) {
        acc.add(model.kernel.eval(t - s));
    }
    acc.sum()
}

/// Causal sweep over ground atoms. Events accepted at the current time stay
/// pending until time advances, so `λ_t` never sees an event at `t` itself.
struct Sweep<'a> {
    model: &'a HawkesModel,
    accepted: Vec<f64>,
    now: f64,
    /// Exponential kernel: `Σ_{tᵢ < now} α e^{−β(now − tᵢ)}`.
    excitation: f64,
    pending: usize,
    overflow: bool,
}

impl<'a> Sweep<'a> {
    fn new(model: &'a HawkesModel) -> Self {
        Self { model, accepted: Vec::new(), now: 0.0, excitation: 0.0, pending: 0, overflow: false }
    }

    /// `λ_t` for `t ≥` every time seen so far.
    fn intensity_at(&mut self, t: f64) -> f64 {
        match self.model.kernel {
            ExcitationKernel::Exp { alpha, beta } => {
                if t > self.now {
                    self.excitation = (self.excitation + alpha * self.pending as f64) * (-beta * (t - self.now)).exp();
                    self.pending = 0;
                    self.now = t;
                }
                self.model.mu + self.excitation
            }
            ExcitationKernel::Box { .. } => {
                self.now = t;
                hawkes_intensity(self.model, &self.accepted, t)
            }
        }
    }

    fn step(&mut self, a: &Atom) -> bool {
        let lambda = self.intensity_at(a.t);
        if a.x > lambda {
            return false;
        }
        self.accepted.push(a.t);
        self.pending += 1;
        // the intensity only jumps up at events, so its supremum is a post-jump value
        let after = lambda
            + match self.model.kernel {
                ExcitationKernel::Exp { alpha, .. } => alpha * self.pending as f64,
                ExcitationKernel::Box { height, .. } => {
                    height * self.accepted.iter().filter(|&&s| s == a.t).count() as f64
                }
            };
        if after > self.model.theta_cap {
            self.overflow = true;
        }
        true
    }
}

/// A thinned ground configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ThinnedPath {
    pub ground: Configuration,
    pub accepted: Vec<f64>,
    /// Set when the intensity exceeded `Θ` after an accepted event; identity
    /// checks exclude such paths.
    pub overflow: bool,
}

impl ThinnedPath {
    pub fn count(&self) -> usize {
        self.accepted.len()
    }

    /// `λ_t` along this path.
    pub fn intensity(&self, model: &HawkesModel, t: f64) -> f64 {
        hawkes_intensity(model, &self.accepted, t)
    }
}

/// Accepts ground atoms `(t, θ)` with `θ ≤ λ_t`, in time order.
pub fn thin(model: &HawkesModel, ground: &Configuration) -> ThinnedPath {
    let mut sweep = Sweep::new(model);
    for a in ground.atoms() {
        sweep.step(a);
    }
    ThinnedPath { ground: ground.clone(), accepted: sweep.accepted, overflow: sweep.overflow }
}

fn accepted_count(model: &HawkesModel, ground: &Configuration) -> usize {
    let mut sweep = Sweep::new(model);
    ground.atoms().iter().filter(|a| sweep.step(a)).count()
}

/// Samples the ground configuration from `seed` and thins it.
pub fn simulate_hawkes(model: &HawkesModel, seed: Seed) -> ThinnedPath {
    thin(model, &model.ground_intensity().sample(seed))
}

/// `1{θ ≤ λ_t}` with `λ_t` computed from the thinned path of `τ_t ω`.
pub fn hawkes_pco_integrand(model: &HawkesModel, ground: &Configuration, a: &Atom) -> f64 {
    let mut sweep = Sweep::new(model);
    for b in ground.atoms().iter().take_while(|b| b.t < a.t) {
        sweep.step(b);
    }
    if a.x <= sweep.intensity_at(a.t) {
        1.0
    } else {
        0.0
    }
}

/// `1{θ ≤ λ_t}` at every ground atom, from one sweep.
pub fn imbedding_indicators(model: &HawkesModel, ground: &Configuration) -> Vec<f64> {
    let mut sweep = Sweep::new(model);
    ground.atoms().iter().map(|a| if sweep.step(a) { 1.0 } else { 0.0 }).collect()
}

/// `H_T` as a functional of the ground configuration.
pub fn hawkes_functional(model: &HawkesModel) -> Functional {
    let model = *model;
    Functional::new("hawkes_HT", move |w| accepted_count(&model, w) as f64)
}

/// `𝔼[H_T] = ∫₀ᵀ m(t) dt` where `m(t) = μ + ∫₀ᵗ φ(t − s) m(s) ds`, solved by
/// the trapezoidal rule on `steps` intervals.
pub fn renewal_expected_count(model: &HawkesModel, steps: usize) -> f64 {
    let steps = steps.max(1);
    let h = model.horizon / steps as f64;
    let phi: Vec<f64> = (0..=steps).map(|i| model.kernel.eval(i as f64 * h)).collect();
    let mut m = Vec::with_capacity(steps + 1);
    m.push(model.mu);
    for i in 1..=steps {
        let mut acc = Accumulator::default();
        acc.add(0.5 * phi[i] * m[0]);
        for j in 1..i {
            acc.add(phi[i - j] * m[j]);
        }
        m.push((model.mu + h * acc.sum()) / (1.0 - 0.5 * h * phi[0]));
    }
    let mut total = Accumulator::default();
    for (i, v) in m.iter().enumerate() {
        total.add(if i == 0 || i == steps { 0.5 * v } else { *v });
    }
    h * total.sum()
}

/// Summary of a batch of simulated paths.
#[derive(Debug, Clone, Serialize)]
pub struct HawkesReport {
    pub model: HawkesConfig,
    pub paths: usize,
    pub overflow_paths: usize,
    pub overflow_fraction: f64,
    pub ground_atoms: usize,
    pub acceptance_rate: f64,
    /// `H_T = Σ ℋ` over the ground atoms, using the closed-form integrand.
    pub imbedding: ResidualReport,
    /// Generic `pco_verify` on `H_T` as a functional.
    pub pco: ResidualReport,
    /// `max |ℋH_T − 1{θ ≤ λ_t}|` over every ground atom of the valid paths.
    pub integrand_deviation: f64,
    /// Mean of `H_T` over valid paths against the renewal-equation value.
    pub count: EstimateReport,
}

pub const RENEWAL_STEPS: usize = 4000;

/// Simulates `samples` paths and runs the imbedding identities on the valid ones.
pub fn hawkes_suite(model: &HawkesModel, samples: usize, seed: Seed, tol: f64, z_max: f64) -> Result<HawkesReport> {
    if samples < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 paths, got {samples}")));
    }
    let ground_rho = model.ground_intensity();
    let functional = hawkes_functional(model);
    let per_path = replicate(samples, seed, |_, rng| {
        let path = thin(model, &ground_rho.sample_with(rng));
        let value = path.count() as f64;
        let closed = imbedding_indicators(model, &path.ground);
        let empty = functional.eval(&Configuration::empty(model.horizon));
        let mut generic = Accumulator::default();
        generic.add(value);
        generic.add(-empty);
        let mut deviation = 0.0f64;
        for (a, z) in path.ground.atoms().iter().zip(&closed) {
            let h = pco_integrand(&functional, &path.ground, *a)?;
            generic.add(-h);
            deviation = deviation.max((h - z).abs());
        }
        Ok((path.overflow, path.ground.len(), value, value - crate::stats::sum(closed), generic.sum(), deviation))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let valid: Vec<_> = per_path.iter().filter(|p| !p.0).collect();
    let overflow_paths = per_path.len() - valid.len();
    let ground_atoms: usize = valid.iter().map(|p| p.1).sum();
    let accepted: f64 = valid.iter().map(|p| p.2).sum();
    let imbedding_pairs: Vec<(f64, f64)> = valid.iter().map(|p| (p.3, p.2)).collect();
    let pco_pairs: Vec<(f64, f64)> = valid.iter().map(|p| (p.4, p.2)).collect();
    let counts: Vec<f64> = valid.iter().map(|p| p.2).collect();
    let target = renewal_expected_count(model, RENEWAL_STEPS);
    Ok(HawkesReport {
        model: model.config(),
        paths: samples,
        overflow_paths,
        overflow_fraction: overflow_paths as f64 / samples as f64,
        ground_atoms,
        acceptance_rate: if ground_atoms == 0 { 0.0 } else { accepted / ground_atoms as f64 },
        imbedding: ResidualReport::exact("hawkes_imbedding", functional.name(), &imbedding_pairs, overflow_paths, tol),
        pco: ResidualReport::exact("pco", functional.name(), &pco_pairs, overflow_paths, tol),
        integrand_deviation: valid.iter().fold(0.0f64, |m, p| m.max(p.5)),
        count: EstimateReport::from_estimate("hawkes_count", Estimate::from_samples(&counts)).with_target(target, z_max),
    })
}
