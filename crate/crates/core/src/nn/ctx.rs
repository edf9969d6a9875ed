use std::cell::RefCell;
use std::collections::HashMap;

use litese_autograd::{Tape, Tensor, Var};

use super::param::Param;

/// Carried state for frame-by-frame inference: convolution histories and
/// recurrent hidden states, keyed by layer name.
#[derive(Clone, Debug, Default)]
pub struct StreamState {
    pub(crate) slots: HashMap<String, Tensor>,
    pub(crate) owner: Option<String>,
    pub frames: usize,
}

impl StreamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&Tensor> {
        self.slots.get(key)
    }
}

/// Batch statistics observed by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    pub name: String,
    pub mean: Tensor,
    pub var: Tensor,
    pub count: usize,
}

/// Per-forward context: the tape, the mode, leaf bookkeeping and, when
/// streaming, the carried state.
pub struct Ctx<'t> {
    pub tape: &'t Tape,
    train: bool,
    leaves: RefCell<HashMap<String, Var>>,
    bn: RefCell<Vec<BnUpdate>>,
    stream: RefCell<Option<StreamState>>,
}

impl<'t> Ctx<'t> {
    pub fn eval(tape: &'t Tape) -> Self {
        Self {
            tape,
            train: false,
            leaves: RefCell::default(),
            bn: RefCell::default(),
            stream: RefCell::new(None),
        }
    }

    pub fn train(tape: &'t Tape) -> Self {
        Self {
            train: true,
            ..Self::eval(tape)
        }
    }

    /// Eval-mode context that threads `state` through the forward pass.
    pub fn streaming(tape: &'t Tape, state: StreamState) -> Self {
        let c = Self::eval(tape);
        *c.stream.borrow_mut() = Some(state);
        c
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn is_streaming(&self) -> bool {
        self.stream.borrow().is_some()
    }

    /// Leaf for a parameter; repeated uses within one pass share the leaf.
    pub fn param(&self, p: &Param) -> Var {
        if let Some(v) = self.leaves.borrow().get(&p.name) {
            return *v;
        }
        let v = if p.trainable {
            self.tape.leaf(p.value.clone())
        } else {
            self.tape.constant(p.value.clone())
        };
        self.leaves.borrow_mut().insert(p.name.clone(), v);
        v
    }

    /// Leaves created for parameters during this pass.
    pub fn leaves(&self) -> HashMap<String, Var> {
        self.leaves.borrow().clone()
    }

    pub(crate) fn record_bn(&self, u: BnUpdate) {
        self.bn.borrow_mut().push(u);
    }

    pub fn take_bn_updates(&self) -> Vec<BnUpdate> {
        std::mem::take(&mut *self.bn.borrow_mut())
    }

    pub(crate) fn load_state(&self, key: &str) -> Option<Tensor> {
        self.stream.borrow().as_ref().and_then(|s| s.slots.get(key).cloned())
    }

    pub(crate) fn store_state(&self, key: &str, value: Tensor) {
        if let Some(s) = self.stream.borrow_mut().as_mut() {
            s.slots.insert(key.to_string(), value);
        }
    }

    pub fn into_state(self) -> Option<StreamState> {
        self.stream.into_inner()
    }
}
