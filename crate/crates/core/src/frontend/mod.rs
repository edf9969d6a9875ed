//! Waveform/spectrogram conversion, log-power features and ERB banding.

pub mod erb;
pub mod stft;
pub mod wav;

use litese_autograd::Tensor;

pub use erb::{band_merge, band_split, ErbFilterbank, BANDS, MERGED, PASS};
pub use stft::{istft, istft_var, stft, stft_var, Spectrogram, BINS, FRAME_RATE, HOP, SAMPLE_RATE, WIN};
pub use wav::{read_wav, write_wav, write_wav_pcm16};

/// Floor inside the logarithm so digital silence stays finite.
pub const LOG_EPS: f64 = 1e-12;

/// `ln(|X|^2 + eps)` as a `[1, T, 257]` feature map.
pub fn log_power(spec: &Spectrogram) -> Tensor {
    Tensor::new(
        &[1, spec.frames, BINS],
        spec.bins.iter().map(|c| (c.norm_sqr() + LOG_EPS).ln()).collect(),
    )
}
