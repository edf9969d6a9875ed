//! Frame-by-frame inference. Each 256-sample hop yields one frame from the
//! previous and current hop; the first synthesized hop is pre-roll, so
//! output lags input by one hop until [`StreamEnhancer::flush`].

use litese_autograd::{Tape, Tensor};
use rustfft::num_complex::Complex64;

use super::model::Model;
use crate::error::{invalid, Error, Result};
use crate::frontend::stft::{analyze_frame, synthesize_frame, window};
use crate::frontend::{BINS, HOP, LOG_EPS, WIN};
use crate::nn::{Ctx, StreamState};

pub struct StreamEnhancer<'m> {
    model: &'m Model,
    state: StreamState,
    prev: Vec<f64>,
    tail: Vec<f64>,
    norm: Vec<f64>,
    pending: Vec<f64>,
    consumed: usize,
    emitted: usize,
}

impl<'m> StreamEnhancer<'m> {
    pub fn new(model: &'m Model) -> Self {
        let state = StreamState {
            owner: Some(model.fingerprint()),
            ..StreamState::default()
        };
        Self::build(model, state)
    }

    /// Resumes from a state produced by the same model.
    pub fn with_state(model: &'m Model, state: StreamState) -> Result<Self> {
        let fp = model.fingerprint();
        match &state.owner {
            Some(o) if *o == fp => Ok(Self::build(model, state)),
            Some(o) => Err(Error::Mismatch(format!("stream state belongs to model {}, not {}", o, fp))),
            None => Err(Error::Mismatch("stream state has no owning model".into())),
        }
    }

    fn build(model: &'m Model, state: StreamState) -> Self {
        let w = window();
        Self {
            model,
            state,
            prev: vec![0.0; HOP],
            tail: vec![0.0; HOP],
            norm: (0..HOP).map(|n| w[n] * w[n] + w[n + HOP] * w[n + HOP]).collect(),
            pending: Vec::with_capacity(HOP),
            consumed: 0,
            emitted: 0,
        }
    }

    pub fn state(&self) -> &StreamState {
        &self.state
    }

    pub fn into_state(self) -> StreamState {
        self.state
    }

    /// Processes one hop; returns the hop it completes, or `None` for the
    /// pre-roll.
    pub fn push_hop(&mut self, hop: &[f64]) -> Result<Option<Vec<f64>>> {
        if hop.len() != HOP {
            return invalid(format!("hop must hold {} samples, got {}", HOP, hop.len()));
        }
        if hop.iter().any(|v| !v.is_finite()) {
            return invalid("hop contains non-finite samples");
        }
        let mut frame = Vec::with_capacity(WIN);
        frame.extend_from_slice(&self.prev);
        frame.extend_from_slice(hop);
        self.prev.copy_from_slice(hop);

        let mut bins = vec![Complex64::new(0.0, 0.0); BINS];
        analyze_frame(&frame, &mut bins);
        let feat: Vec<f64> = bins.iter().map(|c| (c.norm_sqr() + LOG_EPS).ln()).collect();

        let tape = Tape::no_grad();
        let ctx = Ctx::streaming(&tape, std::mem::take(&mut self.state));
        let x = tape.constant(Tensor::new(&[1, 1, 1, BINS], feat));
        let m = self.model.forward(&ctx, x);
        let mask = tape.value(m);
        self.state = ctx.into_state().expect("streaming context keeps its state");
        self.state.frames += 1;

        for (c, g) in bins.iter_mut().zip(mask.data()) {
            *c *= *g;
        }
        let mut y = vec![0.0; WIN];
        synthesize_frame(&bins, &mut y);
        let w = window();
        let out: Vec<f64> = (0..HOP)
            .map(|n| (self.tail[n] + w[n] * y[n]) / self.norm[n])
            .collect();
        for n in 0..HOP {
            self.tail[n] = w[n + HOP] * y[n + HOP];
        }
        Ok((self.state.frames > 1).then_some(out))
    }

    /// Accepts any number of samples and returns whatever output is ready.
    pub fn push(&mut self, samples: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for &s in samples {
            self.pending.push(s);
            if self.pending.len() == HOP {
                let hop = std::mem::take(&mut self.pending);
                self.consumed += HOP;
                if let Some(y) = self.push_hop(&hop)? {
                    out.extend(y);
                }
            }
        }
        self.emitted += out.len();
        Ok(out)
    }

    /// Pads the partial hop, drains the one-hop delay and returns the rest
    /// of the output, so the total equals the number of samples pushed.
    pub fn flush(&mut self) -> Result<Vec<f64>> {
        let total = self.consumed + self.pending.len();
        let mut out = Vec::new();
        if !self.pending.is_empty() {
            let mut hop = std::mem::take(&mut self.pending);
            hop.resize(HOP, 0.0);
            if let Some(y) = self.push_hop(&hop)? {
                out.extend(y);
            }
        }
        if total > 0 {
            if let Some(y) = self.push_hop(&[0.0; HOP])? {
                out.extend(y);
            }
        }
        out.truncate(total.saturating_sub(self.emitted));
        self.emitted += out.len();
        self.consumed = total;
        Ok(out)
    }
}

/// Runs a whole waveform through the streaming path.
pub fn stream_enhance(model: &Model, noisy: &[f64]) -> Result<Vec<f64>> {
    let mut s = StreamEnhancer::new(model);
    let mut out = s.push(noisy)?;
    out.extend(s.flush()?);
    Ok(out)
}
