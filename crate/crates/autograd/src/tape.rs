//! Reverse-mode tape.
//!
//! Every op appends a node holding its value and, when any input requires a
//! gradient, a closure mapping the node's output gradient to gradients of its
//! parents. `Tape::backward` walks the nodes in reverse insertion order, which
//! is a valid topological order because parents always precede children.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use crate::tensor::Tensor;

pub(crate) type BackwardFn = Box<dyn Fn(&Tensor) -> Vec<Option<Tensor>>>;

struct Node {
    value: Rc<Tensor>,
    parents: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Default)]
struct MacLedger {
    enabled: bool,
    scopes: Vec<String>,
    counts: BTreeMap<String, u64>,
}

pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grad_enabled: bool,
    macs: RefCell<MacLedger>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// A tape that records backward closures.
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: true,
            macs: RefCell::new(MacLedger::default()),
        }
    }

    /// A tape that only evaluates values.
    pub fn no_grad() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf whose gradient is tracked (a parameter or a probed input).
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(value, Vec::new(), self.grad_enabled, None)
    }

    /// A leaf treated as constant.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Vec::new(), false, None)
    }

    pub fn value(&self, v: Var) -> Rc<Tensor> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Appends an op node. `backward` receives the output gradient and must
    /// return one entry per parent, in order.
    pub fn push_op<F>(&self, value: Tensor, parents: &[Var], backward: F) -> Var
    where
        F: Fn(&Tensor) -> Vec<Option<Tensor>> + 'static,
    {
        let requires_grad = self.grad_enabled && parents.iter().any(|p| self.requires_grad(*p));
        let bw: Option<BackwardFn> = if requires_grad {
            Some(Box::new(backward))
        } else {
            None
        };
        self.push(
            value,
            parents.iter().map(|p| p.0).collect(),
            requires_grad,
            bw,
        )
    }

    fn push(
        &self,
        value: Tensor,
        parents: Vec<usize>,
        requires_grad: bool,
        backward: Option<BackwardFn>,
    ) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            parents,
            requires_grad,
            backward,
        });
        Var(nodes.len() - 1)
    }

    /// Gradients of `root` (which must hold a single element) with respect to
    /// every node that requires one.
    pub fn backward(&self, root: Var) -> Gradients {
        let root_shape = self.shape(root);
        assert_eq!(
            root_shape.iter().product::<usize>(),
            1,
            "backward root must be a scalar, got {:?}",
            root_shape
        );
        self.backward_with(root, Tensor::ones(&root_shape))
    }

    /// Backpropagates an explicit output gradient.
    pub fn backward_with(&self, root: Var, seed: Tensor) -> Gradients {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        assert_eq!(seed.shape(), nodes[root.0].value.shape(), "seed gradient shape mismatch");
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let node = &nodes[i];
            let Some(bw) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            let parent_grads = bw(&g);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.shape(), nodes[p].value.shape(), "gradient shape mismatch");
                match grads[p].as_mut() {
                    Some(acc) => acc.add_assign(&pg),
                    None => grads[p] = Some(pg),
                }
            }
        }
        // Leaves have no closure, so their accumulated gradients are still here.
        Gradients { grads }
    }

    // ---- MAC instrumentation -------------------------------------------

    /// Starts attributing multiply-accumulates counted by kernels to scopes.
    pub fn enable_mac_counting(&self) {
        self.macs.borrow_mut().enabled = true;
    }

    pub fn push_scope(&self, name: &str) {
        self.macs.borrow_mut().scopes.push(name.to_string());
    }

    pub fn pop_scope(&self) {
        self.macs.borrow_mut().scopes.pop();
    }

    /// Called by kernels with the number of MACs they executed.
    pub(crate) fn count_macs(&self, n: u64) {
        let mut ledger = self.macs.borrow_mut();
        if !ledger.enabled {
            return;
        }
        let scope = ledger
            .scopes
            .last()
            .cloned()
            .unwrap_or_else(|| "<unscoped>".to_string());
        *ledger.counts.entry(scope).or_insert(0) += n;
    }

    /// MAC counts per scope recorded so far.
    pub fn mac_counts(&self) -> BTreeMap<String, u64> {
        self.macs.borrow().counts.clone()
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
