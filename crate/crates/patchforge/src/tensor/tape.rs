//! Reverse-mode gradient tape.
//!
//! Operations executed while a tape is active append one record each, in
//! execution order, so the record list is already topologically sorted:
//! an operation's inputs always precede it. [`backward`] walks the records
//! once in reverse, propagating upstream gradients into input tensors, and
//! consumes the tape.
//!
//! One tape exists per element type per thread; training is confined to a
//! single thread.

use std::cell::Cell;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub(crate) struct Record<E: Element> {
    /// Output of the recorded operation; its accumulated gradient is the
    /// upstream gradient fed to `pull`.
    pub(crate) out: Tensor<E>,
    /// Propagates the upstream gradient into the operation's inputs.
    pub(crate) pull: Box<dyn FnOnce(&[E])>,
}

pub struct GradTape<E: Element> {
    pub(crate) generation: u64,
    pub(crate) records: Vec<Record<E>>,
}

thread_local! {
    static GENERATION: Cell<u64> = const { Cell::new(0) };
}

/// Start recording operations for element type `E` on this thread.
/// Any previously active tape of the same dtype is discarded.
pub fn begin<E: Element>() {
    let generation = GENERATION.with(|g| {
        let next = g.get() + 1;
        g.set(next);
        next
    });
    E::tape_slot().with(|slot| {
        *slot.borrow_mut() = Some(GradTape {
            generation,
            records: Vec::new(),
        });
    });
}

/// True when a tape is currently recording for `E`.
pub fn is_active<E: Element>() -> bool {
    E::tape_slot().with(|slot| slot.borrow().is_some())
}

/// Discard the active tape, if any, without running backward.
pub fn discard<E: Element>() {
    E::tape_slot().with(|slot| *slot.borrow_mut() = None);
}

pub(crate) fn active_generation<E: Element>() -> Option<u64> {
    E::tape_slot().with(|slot| slot.borrow().as_ref().map(|t| t.generation))
}

/// A tensor feeds the gradient computation if it is a `requires_grad` leaf
/// or was itself produced on the active tape.
pub(crate) fn grad_source<E: Element>(t: &Tensor<E>) -> bool {
    if t.is_grad_leaf() {
        return true;
    }
    match active_generation::<E>() {
        Some(g) => t.tape_mark() == g,
        None => false,
    }
}

/// True when the op at hand must append a record: a tape is active and at
/// least one input participates in the gradient computation.
pub(crate) fn should_record<E: Element>(inputs: &[&Tensor<E>]) -> bool {
    is_active::<E>() && inputs.iter().any(|t| grad_source(t))
}

/// Append a record for `out`. Marks `out` as tape-produced.
pub(crate) fn record<E: Element>(out: &Tensor<E>, pull: impl FnOnce(&[E]) + 'static) {
    E::tape_slot().with(|slot| {
        let mut slot = slot.borrow_mut();
        let tape = slot
            .as_mut()
            .expect("record() called without an active tape");
        out.set_tape_mark(tape.generation);
        tape.records.push(Record {
            out: out.clone(),
            pull: Box::new(pull),
        });
    });
}

/// Run reverse-mode accumulation from a scalar `root` and consume the tape.
///
/// Every `requires_grad` leaf reachable from `root` receives its summed
/// gradient (accumulating on top of any gradient already present).
pub fn backward<E: Element>(root: &Tensor<E>) -> Result<()> {
    if root.numel() != 1 {
        return Err(Error::Contract(format!(
            "backward root must be a scalar, got shape {:?}",
            root.shape()
        )));
    }
    let tape = E::tape_slot()
        .with(|slot| slot.borrow_mut().take())
        .ok_or_else(|| Error::State("backward called without an active tape".into()))?;
    if root.tape_mark() != tape.generation && !root.is_grad_leaf() {
        return Err(Error::State(
            "backward root was not produced under the active tape".into(),
        ));
    }

    root.accumulate_grad(&[E::ONE]);
    for rec in tape.records.into_iter().rev() {
        // A record whose output never received a gradient lies on a dead
        // branch; nothing to propagate.
        let upstream = rec.out.grad();
        if let Some(g) = upstream {
            (rec.pull)(&g);
        }
    }
    Ok(())
}
