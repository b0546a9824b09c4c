//! Named optimizable parameters with interval domains.

use std::cell::Cell;

use indexmap::IndexMap;

use super::{tape, DiffScalar};

/// A real interval, possibly unbounded on either side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        assert!(lo < hi, "empty interval [{lo}, {hi}]");
        Interval { lo, hi }
    }

    pub fn unbounded() -> Self {
        Interval {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

#[derive(Debug)]
struct Entry {
    value: f64,
    domain: Interval,
    leaf: Cell<Option<DiffScalar>>,
}

/// Ordered map from parameter name to current value, domain and tape leaf.
///
/// Leaves are created lazily per tape epoch: the first [`ParamStore::leaf`]
/// call after a [`tape::reset`](super::reset) registers the parameter as a
/// root of the new tape.
#[derive(Debug, Default)]
pub struct ParamStore {
    entries: IndexMap<String, Entry>,
    simplex_groups: Vec<SimplexGroup>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: f64, domain: Interval) {
        let prev = self.entries.insert(
            name.to_string(),
            Entry {
                value,
                domain,
                leaf: Cell::new(None),
            },
        );
        assert!(prev.is_none(), "duplicate parameter {name}");
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.entries.get(name).map(|e| e.value)
    }

    pub fn domain(&self, name: &str) -> Option<Interval> {
        self.entries.get(name).map(|e| e.domain)
    }

    pub fn set_value(&mut self, name: &str, value: f64) {
        let e = self.entries.get_mut(name).expect("unknown parameter");
        e.value = value;
        e.leaf.set(None);
    }

    /// Current values in declaration order.
    pub fn snapshot(&self) -> Vec<(String, f64)> {
        self.entries
            .iter()
            .map(|(n, e)| (n.clone(), e.value))
            .collect()
    }

    /// The tape leaf for `name` in the current epoch, creating it on first use.
    pub fn leaf(&self, name: &str) -> Option<DiffScalar> {
        let e = self.entries.get(name)?;
        let cur = tape::current_epoch();
        match e.leaf.get() {
            Some(l) if l.epoch() == cur => Some(l),
            _ => {
                let l = tape::push_leaf(e.value);
                e.leaf.set(Some(l));
                Some(l)
            }
        }
    }

    /// The leaf registered in the current epoch, if any. Does not register.
    pub(crate) fn registered_leaf(&self, name: &str) -> Option<DiffScalar> {
        let e = self.entries.get(name)?;
        match e.leaf.get() {
            Some(l) if l.epoch() == tape::current_epoch() => Some(l),
            _ => None,
        }
    }

    /// Marks a set of parameters as belonging to one mixture-weight vector.
    /// `literal_mass` is the summed weight of the vector's non-parameter
    /// entries; projection rescales the group to fill the remaining mass.
    pub fn add_simplex_group(&mut self, names: Vec<String>, literal_mass: f64) {
        for n in &names {
            assert!(self.entries.contains_key(n), "unknown parameter {n}");
        }
        self.simplex_groups.push(SimplexGroup {
            names,
            literal_mass,
        });
    }

    pub fn simplex_groups(&self) -> &[SimplexGroup] {
        &self.simplex_groups
    }
}

/// Parameters that together form one mixture-weight vector.
#[derive(Debug, Clone)]
pub struct SimplexGroup {
    pub names: Vec<String>,
    pub literal_mass: f64,
}
