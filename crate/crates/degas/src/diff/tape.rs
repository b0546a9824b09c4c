//! The operation log backing reverse-mode accumulation.

use std::cell::RefCell;

use super::{DiffError, DiffScalar};

pub(crate) const NONE: u32 = u32::MAX;

/// One recorded operation: up to two parents with their local partials.
#[derive(Clone, Copy)]
struct Node {
    p0: u32,
    p1: u32,
    d0: f64,
    d1: f64,
}

struct Tape {
    nodes: Vec<Node>,
    epoch: u32,
}

thread_local! {
    static TAPE: RefCell<Tape> = const { RefCell::new(Tape { nodes: Vec::new(), epoch: 1 }) };
}

/// Starts a new tape epoch, releasing all recorded nodes.
pub fn reset() {
    TAPE.with(|t| {
        let mut t = t.borrow_mut();
        t.nodes.clear();
        t.nodes.shrink_to(1 << 16);
        t.epoch += 1;
    });
}

/// Number of nodes recorded in the current epoch.
pub fn node_count() -> usize {
    TAPE.with(|t| t.borrow().nodes.len())
}

pub(crate) fn current_epoch() -> u32 {
    TAPE.with(|t| t.borrow().epoch)
}

pub(crate) fn push_leaf(value: f64) -> DiffScalar {
    push(value, NONE, NONE, 0.0, 0.0)
}

pub(crate) fn push(value: f64, p0: u32, p1: u32, d0: f64, d1: f64) -> DiffScalar {
    TAPE.with(|t| {
        let mut t = t.borrow_mut();
        let idx = u32::try_from(t.nodes.len()).expect("tape overflow");
        t.nodes.push(Node { p0, p1, d0, d1 });
        DiffScalar::recorded(value, idx, t.epoch)
    })
}

pub(crate) fn check_epoch(s: DiffScalar) {
    if !s.is_const() {
        let cur = current_epoch();
        assert!(
            s.epoch() == cur,
            "tape value from epoch {} used in epoch {}",
            s.epoch(),
            cur
        );
    }
}

/// Reverse accumulation from `output`; returns the adjoint of every node up
/// to and including the output node.
pub(crate) fn reverse_sweep(output: DiffScalar) -> Result<Vec<f64>, DiffError> {
    TAPE.with(|t| {
        let t = t.borrow();
        if output.epoch() != t.epoch {
            return Err(DiffError::StaleTape {
                recorded: output.epoch(),
                current: t.epoch,
            });
        }
        let top = output.index() as usize;
        let mut adj = vec![0.0f64; top + 1];
        adj[top] = 1.0;
        for i in (0..=top).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let n = t.nodes[i];
            if n.p0 != NONE {
                adj[n.p0 as usize] += a * n.d0;
            }
            if n.p1 != NONE {
                adj[n.p1 as usize] += a * n.d1;
            }
        }
        Ok(adj)
    })
}
