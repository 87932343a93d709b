//! Dense `f64` tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a reference-counted node in a computation graph. Every
//! operation records its inputs, so calling [`Tensor::backward`] on a scalar
//! loss walks the graph in reverse topological order and accumulates
//! gradients into every tensor that requires them. Parameters are leaf
//! tensors created with [`Tensor::parameter`]; their gradients persist until
//! [`Tensor::zero_grad`] clears them.
//!
//! All buffers are row-major. Every operation checks its output for NaN or
//! infinity and fails with [`Error::NonFinite`] instead of propagating it.

mod adam;
mod checkpoint;
mod gradcheck;
mod ops;

use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{read_checkpoint, write_checkpoint, NamedTensor};
pub use gradcheck::{check_gradients, check_gradients_stacked, relative_error, GradCheckReport, Stacked};
pub use ops::{bce_with_logits, cross_entropy, NEG_INF_BIAS};

use crate::error::{Error, Result};
use ops::Op;

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

struct Node {
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    op: Op,
    requires_grad: bool,
}

/// Handle to a node of the computation graph. Cloning is cheap and shares
/// the node.
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.op.name())
            .finish()
    }
}

impl Tensor {
    fn leaf(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Result<Tensor> {
        if data.len() != numel(&shape) {
            return Err(Error::shape("from_vec", &shape, &[data.len()]));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "from_vec" });
        }
        Ok(Tensor(Rc::new(Node {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            op: Op::Leaf,
            requires_grad,
        })))
    }

    /// Constant tensor; never receives a gradient.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Tensor::leaf(shape.to_vec(), data, false)
    }

    /// Trainable leaf tensor.
    pub fn parameter(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Tensor::leaf(shape.to_vec(), data, true)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::from_vec(shape, vec![0.0; numel(shape)]).expect("zeros are finite")
    }

    pub fn scalar(value: f64) -> Result<Tensor> {
        Tensor::from_vec(&[], vec![value])
    }

    /// Builds a node for `op`, evaluating its forward value immediately.
    fn from_op(op: Op, shape: Vec<usize>) -> Result<Tensor> {
        let data = op.forward();
        debug_assert_eq!(data.len(), numel(&shape), "{} produced wrong size", op.name());
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = op.inputs().iter().any(|t| t.requires_grad());
        Ok(Tensor(Rc::new(Node {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            op,
            requires_grad,
        })))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Borrow of the value buffer.
    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        let data = self.0.data.borrow();
        assert_eq!(data.len(), 1, "item() on tensor of shape {:?}", self.0.shape);
        data[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Overwrites the value buffer of a leaf tensor in place.
    ///
    /// Panics if called on a non-leaf or with a buffer of the wrong length.
    pub fn set_data(&self, data: Vec<f64>) {
        assert!(matches!(self.0.op, Op::Leaf), "set_data on a non-leaf tensor");
        assert_eq!(data.len(), self.numel(), "set_data length mismatch");
        *self.0.data.borrow_mut() = data;
    }

    /// Applies `f` to the value buffer of a leaf tensor.
    pub fn update_data(&self, f: impl FnOnce(&mut [f64])) {
        assert!(matches!(self.0.op, Op::Leaf), "update_data on a non-leaf tensor");
        f(&mut self.0.data.borrow_mut());
    }

    pub(crate) fn accumulate_grad(&self, f: impl FnOnce(&mut [f64])) {
        if !self.0.requires_grad {
            return;
        }
        let mut grad = self.0.grad.borrow_mut();
        let buf = grad.get_or_insert_with(|| vec![0.0; numel(&self.0.shape)]);
        f(buf);
    }

    fn key(&self) -> *const Node {
        Rc::as_ptr(&self.0)
    }

    /// Nodes reachable from `self` in topological order (inputs first).
    fn topological_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited: HashSet<*const Node> = HashSet::new();
        // Iterative post-order DFS; the bool marks "children already pushed".
        let mut stack = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.key()) {
                continue;
            }
            stack.push((node.clone(), true));
            for input in node.0.op.inputs().into_iter().rev() {
                if input.requires_grad() && !visited.contains(&input.key()) {
                    stack.push((input.clone(), false));
                }
            }
        }
        order
    }

    /// Reverse-mode sweep from a scalar loss. Gradients accumulate into
    /// every upstream tensor that requires them.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::shape("backward", &self.0.shape, &[]));
        }
        if matches!(self.0.op, Op::Leaf) || !self.requires_grad() {
            return Err(Error::GraphDetached);
        }
        let order = self.topological_order();
        self.accumulate_grad(|g| g[0] += 1.0);
        for node in order.iter().rev() {
            if matches!(node.0.op, Op::Leaf) {
                continue;
            }
            let grad = node.0.grad.borrow();
            if let Some(grad) = grad.as_ref() {
                let out = node.0.data.borrow();
                node.0.op.backward(&out, grad);
            }
        }
        // Intermediate gradients are only needed during the sweep.
        for node in &order {
            if !matches!(node.0.op, Op::Leaf) {
                node.zero_grad();
            }
        }
        Ok(())
    }
}

/// A recorded graph that can be re-evaluated after editing parameter
/// entries, recomputing only the nodes downstream of the edit.
///
/// When the edited parameter's direct consumers come out bit-identical,
/// nothing further is recomputed, so entries that never reach the output
/// (such as embedding rows for absent tokens) cost a single op.
pub struct Replay {
    order: Vec<Tensor>,
    position: std::collections::HashMap<*const Node, usize>,
    consumers: Vec<Vec<usize>>,
}

impl Replay {
    /// Records the graph feeding `output`.
    pub fn new(output: &Tensor) -> Replay {
        let order = output.topological_order();
        let position: std::collections::HashMap<_, _> =
            order.iter().enumerate().map(|(i, t)| (t.key(), i)).collect();
        let mut consumers = vec![Vec::new(); order.len()];
        for (i, node) in order.iter().enumerate() {
            let mut seen = HashSet::new();
            for input in node.0.op.inputs() {
                if let Some(&p) = position.get(&input.key()) {
                    if seen.insert(p) {
                        consumers[p].push(i);
                    }
                }
            }
        }
        Replay {
            order,
            position,
            consumers,
        }
    }

    /// Current value of the output.
    pub fn output(&self) -> Vec<f64> {
        self.order.last().expect("graph has an output").to_vec()
    }

    /// Output with `param[index]` temporarily set to `value`. The graph is
    /// restored before returning.
    pub fn eval_with(&self, param: &Tensor, index: usize, value: f64) -> Result<Vec<f64>> {
        let Some(&start) = self.position.get(&param.key()) else {
            return Ok(self.output());
        };
        let previous = std::mem::replace(&mut param.0.data.borrow_mut()[index], value);
        let mut pass = Pass::new(self);
        let mut outcome = Ok(());
        for &c in &self.consumers[start] {
            let fresh = self.order[c].0.op.forward();
            if fresh != *self.order[c].0.data.borrow() {
                outcome = outcome.and(pass.install(c, fresh));
            }
        }
        param.0.data.borrow_mut()[index] = previous;
        let result = outcome.and_then(|()| pass.run(start + 1));
        pass.restore();
        result
    }

    /// For a graph built on `blocks` stacked copies of one batch, evaluates
    /// copy `c` with `param[edits[c].0] = edits[c].1` and returns the output
    /// split into one block per edit.
    ///
    /// `param` must feed exactly one node, as the weight of a matmul,
    /// embedding, bias add or layer norm whose other input is stacked along
    /// its first axis.
    pub fn eval_blocks(&self, param: &Tensor, blocks: usize, edits: &[(usize, f64)]) -> Result<Vec<Vec<f64>>> {
        let split = |v: Vec<f64>| -> Vec<Vec<f64>> {
            let n = v.len() / blocks;
            v.chunks(n).take(edits.len()).map(<[f64]>::to_vec).collect()
        };
        if edits.len() > blocks {
            return Err(Error::InvalidConfig(format!("{} edits for {blocks} blocks", edits.len())));
        }
        let Some(&start) = self.position.get(&param.key()) else {
            return Ok(split(self.output()));
        };
        let [target] = self.consumers[start][..] else {
            return Err(Error::InvalidConfig("parameter must feed exactly one node".into()));
        };
        let node = &self.order[target];
        let mut fresh = node.0.data.borrow().clone();
        let width = fresh.len() / blocks;
        for (c, &(index, value)) in edits.iter().enumerate() {
            let previous = std::mem::replace(&mut param.0.data.borrow_mut()[index], value);
            let block = node.0.op.forward_block(param, c, blocks);
            param.0.data.borrow_mut()[index] = previous;
            let Some(block) = block else {
                return Err(Error::InvalidConfig(format!(
                    "`{}` cannot be evaluated per block",
                    node.0.op.name()
                )));
            };
            fresh[c * width..(c + 1) * width].copy_from_slice(&block);
        }
        if fresh == *node.0.data.borrow() {
            return Ok(split(self.output()));
        }
        let mut pass = Pass::new(self);
        let result = pass.install(target, fresh).and_then(|()| pass.run(target + 1));
        pass.restore();
        result.map(split)
    }
}

/// Replacement values installed during one re-evaluation.
struct Pass<'a> {
    replay: &'a Replay,
    dirty: Vec<bool>,
    saved: Vec<(usize, Vec<f64>)>,
}

impl<'a> Pass<'a> {
    fn new(replay: &'a Replay) -> Self {
        Pass {
            replay,
            dirty: vec![false; replay.order.len()],
            saved: Vec::new(),
        }
    }

    fn install(&mut self, i: usize, fresh: Vec<f64>) -> Result<()> {
        let node = &self.replay.order[i];
        if !all_finite(&fresh) {
            return Err(Error::NonFinite { op: node.0.op.name() });
        }
        let old = std::mem::replace(&mut *node.0.data.borrow_mut(), fresh);
        self.saved.push((i, old));
        for &c in &self.replay.consumers[i] {
            self.dirty[c] = true;
        }
        Ok(())
    }

    /// Recomputes every dirty node from `from` on and reads the output.
    fn run(&mut self, from: usize) -> Result<Vec<f64>> {
        for i in from..self.replay.order.len() {
            if self.dirty[i] {
                let fresh = self.replay.order[i].0.op.forward();
                self.install(i, fresh)?;
            }
        }
        Ok(self.replay.output())
    }

    fn restore(self) {
        for (i, old) in self.saved {
            *self.replay.order[i].0.data.borrow_mut() = old;
        }
    }
}

fn all_finite(values: &[f64]) -> bool {
    // `v * 0.0` is NaN exactly when `v` is not finite.
    let mut lanes = [0.0f64; 8];
    let mut chunks = values.chunks_exact(8);
    for chunk in &mut chunks {
        for (acc, v) in lanes.iter_mut().zip(chunk) {
            *acc += v * 0.0;
        }
    }
    let rest: f64 = chunks.remainder().iter().map(|v| v * 0.0).sum();
    lanes.iter().sum::<f64>() + rest == 0.0
}
