//! Autoregressive policy over action sequences.
//!
//! One LSTM cell is unrolled across the nodes. At node `i` it reads an
//! embedding of the action taken at node `i - 1` (a learned start vector at
//! node 0) and a per-node linear head turns its hidden state into logits
//! over that node's options. Heads start at zero, so a fresh controller is
//! uniform over every node.

use litese_autograd::{Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const EMBED: usize = 100;
pub const HIDDEN: usize = 200;
const INIT_SCALE: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct Controller {
    pub options: Vec<usize>,
    pub start: Tensor,
    /// `embed[i]` maps the action at node `i - 1` to the input of node `i`;
    /// `embed[0]` is unused and empty.
    pub embed: Vec<Tensor>,
    pub wx: Tensor,
    pub wh: Tensor,
    pub b: Tensor,
    pub head_w: Vec<Tensor>,
    pub head_b: Vec<Tensor>,
}

/// One sampled sequence and its log-probability under the sampling policy.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub actions: Vec<usize>,
    pub log_prob: f64,
}

impl Controller {
    pub fn new(options: &[usize], seed: u64) -> Self {
        assert!(!options.is_empty() && options.iter().all(|&n| n > 0), "every node needs options");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |shape: &[usize]| Tensor::from_fn(shape, |_| rng.gen_range(-INIT_SCALE..INIT_SCALE));
        let start = uniform(&[1, EMBED]);
        let embed = (0..options.len())
            .map(|i| if i == 0 { Tensor::zeros(&[0, EMBED]) } else { uniform(&[options[i - 1], EMBED]) })
            .collect();
        let wx = uniform(&[4 * HIDDEN, EMBED]);
        let wh = uniform(&[4 * HIDDEN, HIDDEN]);
        Self {
            options: options.to_vec(),
            start,
            embed,
            wx,
            wh,
            b: Tensor::zeros(&[4 * HIDDEN]),
            head_w: options.iter().map(|&n| Tensor::zeros(&[n, HIDDEN])).collect(),
            head_b: options.iter().map(|&n| Tensor::zeros(&[n])).collect(),
        }
    }

    pub fn nodes(&self) -> usize {
        self.options.len()
    }

    /// Parameters in a fixed order, matching [`Controller::params_mut`].
    pub fn params(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.start];
        v.extend(self.embed.iter().skip(1));
        v.extend([&self.wx, &self.wh, &self.b]);
        v.extend(self.head_w.iter());
        v.extend(self.head_b.iter());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.start];
        v.extend(self.embed.iter_mut().skip(1));
        v.extend([&mut self.wx, &mut self.wh, &mut self.b]);
        v.extend(self.head_w.iter_mut());
        v.extend(self.head_b.iter_mut());
        v
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }

    /// Registers every parameter on `tape`, as leaves when `grad` is set.
    pub fn vars(&self, tape: &Tape, grad: bool) -> Vec<Var> {
        self.params()
            .into_iter()
            .map(|t| if grad { tape.leaf(t.clone()) } else { tape.constant(t.clone()) })
            .collect()
    }

    /// Unrolls the cell over all nodes for `n` sequences. `choose` receives
    /// the node index and the `[n, options]` log-probabilities (row-major)
    /// and returns the action per sequence. Returns the per-sequence summed
    /// log-probability `[n]`, the summed per-node entropy along each
    /// sequence `[n]` and the chosen actions.
    pub fn unroll(
        &self,
        tape: &Tape,
        vars: &[Var],
        n: usize,
        mut choose: impl FnMut(usize, &[f64]) -> Vec<usize>,
    ) -> (Var, Var, Vec<Vec<usize>>) {
        let nodes = self.nodes();
        let start = vars[0];
        let embed = &vars[1..nodes];
        let (wx, wh, b) = (vars[nodes], vars[nodes + 1], vars[nodes + 2]);
        let head_w = &vars[nodes + 3..2 * nodes + 3];
        let head_b = &vars[2 * nodes + 3..3 * nodes + 3];

        let mut x = tape.index_select(start, 0, &vec![0; n]);
        let mut h = tape.constant(Tensor::zeros(&[n, HIDDEN]));
        let mut c = tape.constant(Tensor::zeros(&[n, HIDDEN]));
        let mut total: Option<Var> = None;
        let mut entropy: Option<Var> = None;
        let mut actions = vec![Vec::with_capacity(nodes); n];
        for i in 0..nodes {
            if i > 0 {
                let prev: Vec<usize> = actions.iter().map(|a: &Vec<usize>| a[i - 1]).collect();
                x = tape.index_select(embed[i - 1], 0, &prev);
            }
            let z = tape.add(tape.linear(x, wx, Some(b)), tape.linear(h, wh, None));
            let gate = |k: usize| tape.narrow(z, 1, k * HIDDEN, HIDDEN);
            let (ig, fg, gg, og) = (tape.sigmoid(gate(0)), tape.sigmoid(gate(1)), tape.tanh(gate(2)), tape.sigmoid(gate(3)));
            c = tape.add(tape.mul(fg, c), tape.mul(ig, gg));
            h = tape.mul(og, tape.tanh(c));
            let logp = tape.log_softmax(tape.linear(h, head_w[i], Some(head_b[i])));
            let picked = choose(i, tape.value(logp).data());
            assert_eq!(picked.len(), n, "one action per sequence");
            let lp = tape.gather_last(logp, &picked);
            // Masked options have -inf log-probability and contribute nothing.
            let plogp = tape.mul(tape.exp(logp), tape.floor_at(logp, -700.0));
            let ent = tape.neg(tape.reshape(tape.sum_axis(plogp, 1), &[n]));
            total = Some(total.map_or(lp, |t| tape.add(t, lp)));
            entropy = Some(entropy.map_or(ent, |e| tape.add(e, ent)));
            for (a, p) in actions.iter_mut().zip(picked) {
                a.push(p);
            }
        }
        (total.expect("at least one node"), entropy.expect("at least one node"), actions)
    }

    /// Draws `n` sequences node by node from the softmax of the logits.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Sample> {
        assert!(n >= 1, "sample at least one sequence");
        let tape = Tape::no_grad();
        let vars = self.vars(&tape, false);
        let opts = self.options.clone();
        let (lp, _, actions) = self.unroll(&tape, &vars, n, |i, logp| {
            logp.chunks(opts[i]).map(|row| draw(row, rng)).collect()
        });
        let lp = tape.value(lp);
        actions
            .into_iter()
            .zip(lp.data())
            .map(|(actions, &log_prob)| Sample { actions, log_prob })
            .collect()
    }

    /// Log-probability of each given sequence.
    pub fn log_probs(&self, sequences: &[Vec<usize>]) -> Vec<f64> {
        if sequences.is_empty() {
            return Vec::new();
        }
        let tape = Tape::no_grad();
        let vars = self.vars(&tape, false);
        let (lp, _, _) = self.unroll(&tape, &vars, sequences.len(), |i, _| sequences.iter().map(|s| s[i]).collect());
        tape.value(lp).data().to_vec()
    }

    /// Most probable action at every node, chosen greedily.
    pub fn greedy(&self) -> Vec<usize> {
        let tape = Tape::no_grad();
        let vars = self.vars(&tape, false);
        let (_, _, mut actions) = self.unroll(&tape, &vars, 1, |_, row| {
            let best = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc });
            vec![best.0]
        });
        actions.remove(0)
    }
}

/// Inverse-CDF draw from a row of log-probabilities.
fn draw<R: Rng + ?Sized>(logp: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (k, &l) in logp.iter().enumerate() {
        let p = l.exp();
        if p > 0.0 {
            last = k;
            acc += p;
            if u < acc {
                return k;
            }
        }
    }
    last
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_controller_is_uniform() {
        let c = Controller::new(&[3, 2, 7], 1);
        let lp = c.log_probs(&[vec![0, 0, 0], vec![2, 1, 6]]);
        let want = -(42f64).ln();
        for v in lp {
            assert!((v - want).abs() < 1e-12);
        }
    }

    #[test]
    fn sampled_log_probs_match_rescoring() {
        let mut c = Controller::new(&[3, 2, 4], 2);
        c.head_b[1].data_mut()[0] = 0.7;
        c.head_w[2].data_mut()[5] = 0.3;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = c.sample(16, &mut rng);
        let seqs: Vec<_> = s.iter().map(|x| x.actions.clone()).collect();
        for (a, b) in s.iter().zip(c.log_probs(&seqs)) {
            assert!((a.log_prob - b).abs() < 1e-12);
        }
    }
}
