//! Finite simple point configurations on `[0,T] × X`.
//!
//! A [`Configuration`] is the canonical outcome of a Poisson random measure
//! restricted to a finite window: a sorted, duplicate-free list of time-marked
//! atoms. All operators return new values and never mutate their input.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A time-marked point `(t, x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub t: f64,
    pub x: f64,
}

impl Atom {
    pub const fn new(t: f64, x: f64) -> Self {
        Self { t, x }
    }

    /// Time first, then mark. Total on all floats, so sorting never panics.
    pub fn order(&self, other: &Atom) -> Ordering {
        self.t.total_cmp(&other.t).then(self.x.total_cmp(&other.x))
    }

    pub fn same_point(&self, other: &Atom) -> bool {
        self.order(other) == Ordering::Equal
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.t, self.x)
    }
}

/// Time interval `[start, end)`, or `[start, end]` when `closed_end` is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeInterval {
    pub start: f64,
    pub end: f64,
    pub closed_end: bool,
}

impl TimeInterval {
    pub fn half_open(start: f64, end: f64) -> Self {
        Self { start, end, closed_end: false }
    }

    pub fn closed(start: f64, end: f64) -> Self {
        Self { start, end, closed_end: true }
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start <= t && (t < self.end || (self.closed_end && t == self.end))
    }

    pub fn length(&self) -> f64 {
        (self.end - self.start).max(0.0)
    }

    pub fn intersect(&self, other: &TimeInterval) -> TimeInterval {
        let start = self.start.max(other.start);
        let (end, closed_end) = match self.end.total_cmp(&other.end) {
            Ordering::Less => (self.end, self.closed_end),
            Ordering::Greater => (other.end, other.closed_end),
            Ordering::Equal => (self.end, self.closed_end && other.closed_end),
        };
        TimeInterval { start, end, closed_end }
    }

    /// Length of the part of the interval at or after `t`.
    pub fn length_from(&self, t: f64) -> f64 {
        (self.end - self.start.max(t)).max(0.0)
    }

    /// Length of the part of the interval strictly before `t`.
    pub fn length_before(&self, t: f64) -> f64 {
        (self.end.min(t) - self.start).max(0.0)
    }
}

/// A predicate on marks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MarkSet {
    All,
    /// Closed interval `[lo, hi]`; empty when `lo > hi`.
    Interval { lo: f64, hi: f64 },
}

impl MarkSet {
    pub fn contains(&self, x: f64) -> bool {
        match *self {
            MarkSet::All => true,
            MarkSet::Interval { lo, hi } => lo <= x && x <= hi,
        }
    }

    pub fn intersect(&self, other: &MarkSet) -> MarkSet {
        match (*self, *other) {
            (MarkSet::All, m) | (m, MarkSet::All) => m,
            (MarkSet::Interval { lo: a, hi: b }, MarkSet::Interval { lo: c, hi: d }) => {
                MarkSet::Interval { lo: a.max(c), hi: b.min(d) }
            }
        }
    }
}

/// A product set `A × B` of a time interval and a mark predicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub time: TimeInterval,
    pub marks: MarkSet,
}

impl Window {
    pub fn new(time: TimeInterval, marks: MarkSet) -> Self {
        Self { time, marks }
    }

    /// The whole space `[0,T] × X`.
    pub fn full(horizon: f64) -> Self {
        Self::new(TimeInterval::closed(0.0, horizon), MarkSet::All)
    }

    pub fn contains(&self, a: &Atom) -> bool {
        self.time.contains(a.t) && self.marks.contains(a.x)
    }

    pub fn intersect(&self, other: &Window) -> Window {
        Window::new(self.time.intersect(&other.time), self.marks.intersect(&other.marks))
    }

    /// `self ⊆ other`; an empty window is a subset of everything.
    pub fn is_subset_of(&self, other: &Window) -> bool {
        let (s, o) = (&self.time, &other.time);
        let time_empty = s.start > s.end || (s.start == s.end && !s.closed_end);
        let time_ok = time_empty
            || (s.start >= o.start && (s.end < o.end || (s.end == o.end && (!s.closed_end || o.closed_end))));
        let marks_ok = match (self.marks, other.marks) {
            (_, MarkSet::All) => true,
            (MarkSet::All, MarkSet::Interval { .. }) => false,
            (MarkSet::Interval { lo, hi }, MarkSet::Interval { lo: l2, hi: h2 }) => lo > hi || (lo >= l2 && hi <= h2),
        };
        time_ok && marks_ok
    }

    pub fn indicator(&self, a: &Atom) -> f64 {
        if self.contains(a) {
            1.0
        } else {
            0.0
        }
    }
}

/// A finite simple configuration `ω = Σ δ_(t_j, x_j)` on `[0,T] × X`.
///
/// Atoms are kept sorted by time, ties broken by mark.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    atoms: Vec<Atom>,
    horizon: f64,
}

fn check_time(a: &Atom, horizon: f64) -> Result<()> {
    if (0.0..=horizon).contains(&a.t) {
        Ok(())
    } else {
        Err(Error::AtomOutOfWindow { t: a.t, horizon })
    }
}

impl Configuration {
    /// The empty configuration `ω_∅`.
    pub fn empty(horizon: f64) -> Self {
        Self { atoms: Vec::new(), horizon }
    }

    /// Builds a configuration from unsorted atoms. Repeated atoms are rejected.
    pub fn new(mut atoms: Vec<Atom>, horizon: f64) -> Result<Self> {
        for a in &atoms {
            check_time(a, horizon)?;
        }
        atoms.sort_by(Atom::order);
        if let Some(w) = atoms.windows(2).find(|w| w[0].same_point(&w[1])) {
            return Err(Error::DuplicateAtom { t: w[0].t, x: w[0].x });
        }
        Ok(Self { atoms, horizon })
    }

    /// Internal constructor for atoms already known to be sorted, simple and in range.
    pub(crate) fn from_sorted_unchecked(atoms: Vec<Atom>, horizon: f64) -> Self {
        debug_assert!(atoms.windows(2).all(|w| w[0].order(&w[1]) == Ordering::Less));
        Self { atoms, horizon }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn contains(&self, a: &Atom) -> bool {
        self.atoms.binary_search_by(|b| b.order(a)).is_ok()
    }

    /// `ε⁺_J ω`: inserts the atoms of `extra`, skipping those already present.
    pub fn add_points(&self, extra: &[Atom]) -> Result<Configuration> {
        for a in extra {
            check_time(a, self.horizon)?;
        }
        let mut atoms = self.atoms.clone();
        for a in extra {
            if let Err(pos) = atoms.binary_search_by(|b| b.order(a)) {
                atoms.insert(pos, *a);
            }
        }
        Ok(Self { atoms, horizon: self.horizon })
    }

    /// Single-atom insertion, the hot path of the difference operators.
    pub fn with_atom(&self, a: Atom) -> Result<Configuration> {
        check_time(&a, self.horizon)?;
        let mut atoms = Vec::with_capacity(self.atoms.len() + 1);
        match self.atoms.binary_search_by(|b| b.order(&a)) {
            Ok(_) => atoms.extend_from_slice(&self.atoms),
            Err(pos) => {
                atoms.extend_from_slice(&self.atoms[..pos]);
                atoms.push(a);
                atoms.extend_from_slice(&self.atoms[pos..]);
            }
        }
        Ok(Self { atoms, horizon: self.horizon })
    }

    /// `τ_t ω`: the atoms with time strictly less than `t`. `τ_0 ω = ω_∅`.
    pub fn truncate_before(&self, t: f64) -> Result<Configuration> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::AtomOutOfWindow { t, horizon: self.horizon });
        }
        Ok(self.prefix_before(t))
    }

    /// Range-unchecked truncation.
    pub(crate) fn prefix_before(&self, t: f64) -> Configuration {
        let cut = self.atoms.partition_point(|a| a.t < t);
        Self { atoms: self.atoms[..cut].to_vec(), horizon: self.horizon }
    }

    /// `N(A × B)(ω)`.
    pub fn count(&self, window: &Window) -> usize {
        self.atoms.iter().filter(|a| window.contains(a)).count()
    }

    /// Number of atoms with time strictly before `t` inside `window`.
    pub fn count_before(&self, window: &Window, t: f64) -> usize {
        self.atoms.iter().take_while(|a| a.t < t).filter(|a| window.contains(a)).count()
    }

    /// The restriction `ω ∩ R`.
    pub fn restrict(&self, window: &Window) -> Configuration {
        let atoms = self.atoms.iter().copied().filter(|a| window.contains(a)).collect();
        Self { atoms, horizon: self.horizon }
    }

    /// Builds the configuration made only of the given atoms (same horizon).
    pub fn from_subset(&self, atoms: &[Atom]) -> Result<Configuration> {
        Configuration::new(atoms.to_vec(), self.horizon)
    }
}

#[derive(Serialize, Deserialize)]
struct ConfigurationRepr {
    #[serde(rename = "T")]
    horizon: f64,
    atoms: Vec<Vec<f64>>,
}

impl Serialize for Configuration {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        ConfigurationRepr {
            horizon: self.horizon,
            atoms: self.atoms.iter().map(|a| vec![a.t, a.x]).collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Configuration {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = ConfigurationRepr::deserialize(deserializer)?;
        let atoms = repr
            .atoms
            .iter()
            .map(|v| match v.as_slice() {
                [t, x] => Ok(Atom::new(*t, *x)),
                _ => Err(D::Error::custom("atoms are [t, mark] pairs")),
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Configuration::new(atoms, repr.horizon).map_err(D::Error::custom)
    }
}
