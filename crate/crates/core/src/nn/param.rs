use litese_autograd::Tensor;
use rand::Rng;

/// A named tensor owned by a layer. Non-trainable entries (batch-norm running
/// statistics, fixed filterbanks) are stored and checkpointed the same way
/// but skipped by the optimizer.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Self {
            name: name.into(),
            value,
            trainable: true,
        }
    }

    pub fn buffer(name: impl Into<String>, value: Tensor) -> Self {
        Self {
            name: name.into(),
            value,
            trainable: false,
        }
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn fan_in<R: Rng + ?Sized>(name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut R) -> Self {
        let k = 1.0 / (fan_in.max(1) as f64).sqrt();
        Self::new(name, Tensor::uniform(shape, -k, k, rng))
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }
}

/// Per-layer complexity entry: learnable scalars and MACs per frame.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub params: u64,
    pub macs: u64,
}

/// Anything holding parameters and able to describe its cost.
pub trait Module {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param));
    fn costs(&self, out: &mut Vec<LayerCost>);

    fn params(&self) -> Vec<&Param> {
        let mut v = Vec::new();
        self.visit(&mut |p| v.push(p));
        v
    }

    fn cost_list(&self) -> Vec<LayerCost> {
        let mut v = Vec::new();
        self.costs(&mut v);
        v
    }
}
