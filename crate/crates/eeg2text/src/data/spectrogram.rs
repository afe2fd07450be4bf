//! Per-channel magnitude short-time Fourier transform.
//!
//! Frames of `window_len` samples are taken every `hop_len` samples, tapered
//! with a periodic Hann window, Fourier-transformed, and reduced to one-sided
//! magnitudes. Phase is discarded. Trailing samples that do not fill a frame
//! are dropped, mirroring patchify.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{DataError, EEGRecording};
use crate::autodiff::Tensor;

/// Magnitude spectrogram: `values` is `[n_channels, n_freq_bins, n_frames]`,
/// all entries non-negative.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub values: Tensor<f32>,
    pub window_len: usize,
    pub hop_len: usize,
}

impl Spectrogram {
    pub fn n_channels(&self) -> usize {
        self.values.shape()[0]
    }
    pub fn n_freq_bins(&self) -> usize {
        self.values.shape()[1]
    }
    pub fn n_frames(&self) -> usize {
        self.values.shape()[2]
    }
}

/// Number of frames a signal of length `n_timesteps` yields.
pub(crate) fn frame_count(n_timesteps: usize, window_len: usize, hop_len: usize) -> usize {
    (n_timesteps - window_len) / hop_len + 1
}

/// Computes the magnitude STFT of every channel.
pub fn spectrogram(
    rec: &EEGRecording,
    window_len: usize,
    hop_len: usize,
) -> Result<Spectrogram, DataError> {
    if window_len == 0 {
        return Err(DataError::ZeroWindow);
    }
    if hop_len == 0 {
        return Err(DataError::ZeroHop);
    }
    let t = rec.n_timesteps();
    if window_len > t {
        return Err(DataError::WindowTooLong { window_len, n_timesteps: t });
    }
    let n_channels = rec.n_channels();
    let n_bins = window_len / 2 + 1;
    let n_frames = frame_count(t, window_len, hop_len);

    // periodic Hann taper
    let hann: Vec<f32> = (0..window_len)
        .map(|n| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / window_len as f64).cos()))
        .map(|w| w as f32)
        .collect();

    let fft = FftPlanner::<f32>::new().plan_fft_forward(window_len);
    let mut buf = vec![Complex::new(0.0f32, 0.0f32); window_len];
    let mut values = vec![0.0f32; n_channels * n_bins * n_frames];
    for c in 0..n_channels {
        let row = &rec.samples.data()[c * t..(c + 1) * t];
        for f in 0..n_frames {
            let start = f * hop_len;
            for (n, slot) in buf.iter_mut().enumerate() {
                *slot = Complex::new(row[start + n] * hann[n], 0.0);
            }
            fft.process(&mut buf);
            for (k, bin) in buf.iter().take(n_bins).enumerate() {
                values[c * n_bins * n_frames + k * n_frames + f] = bin.norm();
            }
        }
    }
    let values = Tensor::new(vec![n_channels, n_bins, n_frames], values)
        .expect("magnitude buffer sized by construction");
    Ok(Spectrogram { values, window_len, hop_len })
}
