//! Audio frontend: WAV decoding, band-pass filtering, and MFCC extraction.
//!
//! Fixed-format pipeline: 16 kHz mono input, 30 ms Hann windows with 10 ms
//! shift, 512-point FFT, 40 mel filters over 20 Hz–4 kHz, log (floored at
//! 1e-10), orthonormal DCT-II keeping all 40 coefficients. A one-second clip
//! yields 98 frames. Log energies use the magnitude-spectrum convention, so
//! scaling the input by 10 raises each above-floor log energy by ln(10).

pub mod dsp;
mod wav;

pub use wav::{parse_wav, read_wav, write_wav};

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use dsp::{Biquad, Dct2, MelFilterbank};

pub const SAMPLE_RATE_HZ: u32 = 16_000;
/// Every sample is padded or clipped to exactly one second.
pub const CLIP_SAMPLES: usize = 16_000;
const N_FFT: usize = 512;
const PRE_EMPHASIS: f32 = 0.97;

/// Mono PCM audio at 16 kHz, samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f32>,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>) -> Self {
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Frontend parameters. The defaults are the only configuration the rest of
/// the toolkit is tested against; they are exposed as fields so tools can
/// report them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontendConfig {
    pub band_low_hz: f32,
    pub band_high_hz: f32,
    pub window_ms: u32,
    pub shift_ms: u32,
    pub n_mfcc: usize,
    pub log_floor: f32,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            band_low_hz: 20.0,
            band_high_hz: 4000.0,
            window_ms: 30,
            shift_ms: 10,
            n_mfcc: 40,
            log_floor: 1e-10,
        }
    }
}

impl FrontendConfig {
    pub fn window_samples(&self) -> usize {
        (SAMPLE_RATE_HZ as usize * self.window_ms as usize) / 1000
    }

    pub fn shift_samples(&self) -> usize {
        (SAMPLE_RATE_HZ as usize * self.shift_ms as usize) / 1000
    }
}

/// Row-major T x n_coeffs feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Vec<f32>,
    pub n_frames: usize,
    pub n_coeffs: usize,
}

impl FeatureMatrix {
    pub fn zeros(n_frames: usize, n_coeffs: usize) -> Self {
        Self {
            values: vec![0.0; n_frames * n_coeffs],
            n_frames,
            n_coeffs,
        }
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.values[t * self.n_coeffs..(t + 1) * self.n_coeffs]
    }

    pub fn get(&self, t: usize, k: usize) -> f32 {
        self.values[t * self.n_coeffs + k]
    }
}

/// Number of analysis frames for a buffer of `len` samples.
pub fn frame_count(len: usize, cfg: &FrontendConfig) -> usize {
    let window = cfg.window_samples();
    if len < window {
        0
    } else {
        (len - window) / cfg.shift_samples() + 1
    }
}

/// Force a buffer to exactly one second: zero-pad short input at the end,
/// truncate long input at the end.
pub fn pad_or_clip(buf: &AudioBuffer) -> Result<AudioBuffer> {
    if buf.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let mut samples = buf.samples.clone();
    samples.resize(CLIP_SAMPLES, 0.0);
    Ok(AudioBuffer::new(samples))
}

/// Time-domain band-pass: 6th-order Butterworth low-pass at `band_high_hz`
/// cascaded with a 4th-order Butterworth high-pass at `band_low_hz`.
///
/// The MFCC path gets its band restriction from the mel filterbank range
/// instead; this filter exists as a standalone, testable equivalent.
pub fn band_pass(buf: &AudioBuffer, cfg: &FrontendConfig) -> AudioBuffer {
    let fs = SAMPLE_RATE_HZ as f64;
    let mut sections: Vec<Biquad> = dsp::butterworth_q(6)
        .into_iter()
        .map(|q| Biquad::low_pass(cfg.band_high_hz as f64, fs, q))
        .collect();
    sections.extend(
        dsp::butterworth_q(4)
            .into_iter()
            .map(|q| Biquad::high_pass(cfg.band_low_hz as f64, fs, q)),
    );
    let samples = buf
        .samples
        .iter()
        .map(|&x| {
            let mut v = x as f64;
            for s in &mut sections {
                v = s.step(v);
            }
            v as f32
        })
        .collect();
    AudioBuffer::new(samples)
}

/// Reusable MFCC pipeline; construction precomputes the window, filterbank,
/// DCT table, and FFT plan. Safe to share across threads.
pub struct MfccExtractor {
    cfg: FrontendConfig,
    window: Vec<f32>,
    filterbank: MelFilterbank,
    dct: Dct2,
    fft: Arc<dyn Fft<f32>>,
}

impl MfccExtractor {
    pub fn new(cfg: FrontendConfig) -> Self {
        let n = cfg.window_samples();
        // periodic Hann
        let window = (0..n)
            .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()) as f32)
            .collect();
        let filterbank = MelFilterbank::new(
            cfg.n_mfcc,
            N_FFT,
            SAMPLE_RATE_HZ as f64,
            cfg.band_low_hz as f64,
            cfg.band_high_hz as f64,
        );
        let dct = Dct2::new(cfg.n_mfcc);
        let fft = FftPlanner::new().plan_fft_forward(N_FFT);
        Self {
            cfg,
            window,
            filterbank,
            dct,
            fft,
        }
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.cfg
    }

    /// Center frequency of each mel filter, in Hz.
    pub fn filter_centers_hz(&self) -> &[f64] {
        self.filterbank.centers_hz()
    }

    /// Log mel filterbank energies (the pre-DCT stage), T x n_mfcc.
    pub fn log_mel(&self, buf: &AudioBuffer) -> Result<FeatureMatrix> {
        if buf.len() != CLIP_SAMPLES {
            return Err(Error::BadBufferLength {
                expected: CLIP_SAMPLES,
                got: buf.len(),
            });
        }
        let window_len = self.cfg.window_samples();
        let shift = self.cfg.shift_samples();
        let n_frames = frame_count(buf.len(), &self.cfg);
        let n_mel = self.cfg.n_mfcc;

        // whole-buffer pre-emphasis, zero history: y[0] = x[0]
        let mut emphasized = Vec::with_capacity(buf.len());
        let mut prev = 0.0f32;
        for &x in &buf.samples {
            emphasized.push(x - PRE_EMPHASIS * prev);
            prev = x;
        }

        let mut out = FeatureMatrix::zeros(n_frames, n_mel);
        let mut spectrum = vec![Complex::new(0.0f32, 0.0f32); N_FFT];
        let mut magnitude = vec![0.0f32; N_FFT / 2 + 1];
        let mut energies = vec![0.0f32; n_mel];
        for t in 0..n_frames {
            let start = t * shift;
            for (i, slot) in spectrum.iter_mut().enumerate() {
                let v = if i < window_len {
                    emphasized[start + i] * self.window[i]
                } else {
                    0.0
                };
                *slot = Complex::new(v, 0.0);
            }
            self.fft.process(&mut spectrum);
            for (m, c) in magnitude.iter_mut().zip(&spectrum) {
                *m = c.norm();
            }
            self.filterbank.apply(&magnitude, &mut energies);
            let row = &mut out.values[t * n_mel..(t + 1) * n_mel];
            for (o, &e) in row.iter_mut().zip(&energies) {
                *o = e.max(self.cfg.log_floor).ln();
            }
        }
        Ok(out)
    }

    /// Full MFCC features: DCT-II of the log mel energies.
    pub fn extract(&self, buf: &AudioBuffer) -> Result<FeatureMatrix> {
        let log_mel = self.log_mel(buf)?;
        let n = self.cfg.n_mfcc;
        let mut out = FeatureMatrix::zeros(log_mel.n_frames, n);
        for t in 0..log_mel.n_frames {
            self.dct
                .apply(log_mel.row(t), &mut out.values[t * n..(t + 1) * n]);
        }
        Ok(out)
    }
}

/// One-shot MFCC extraction with a fresh pipeline.
pub fn extract_mfcc(buf: &AudioBuffer, cfg: &FrontendConfig) -> Result<FeatureMatrix> {
    MfccExtractor::new(cfg.clone()).extract(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq_hz: f32, n: usize, amplitude: f32) -> AudioBuffer {
        let samples = (0..n)
            .map(|i| {
                amplitude
                    * (2.0 * std::f32::consts::PI * freq_hz * i as f32 / SAMPLE_RATE_HZ as f32)
                        .sin()
            })
            .collect();
        AudioBuffer::new(samples)
    }

    fn rms(samples: &[f32]) -> f64 {
        let e: f64 = samples.iter().map(|&x| x as f64 * x as f64).sum();
        (e / samples.len() as f64).sqrt()
    }

    #[test]
    fn pad_or_clip_cases() {
        let exact = AudioBuffer::new(vec![0.5; 16000]);
        assert_eq!(pad_or_clip(&exact).unwrap(), exact);

        let short = AudioBuffer::new(vec![0.5; 15000]);
        let padded = pad_or_clip(&short).unwrap();
        assert_eq!(padded.len(), 16000);
        assert!(padded.samples[15000..].iter().all(|&x| x == 0.0));
        assert!(padded.samples[..15000].iter().all(|&x| x == 0.5));

        let long = AudioBuffer::new(vec![0.25; 17000]);
        let clipped = pad_or_clip(&long).unwrap();
        assert_eq!(clipped.len(), 16000);

        assert!(matches!(
            pad_or_clip(&AudioBuffer::new(vec![])),
            Err(Error::EmptyBuffer)
        ));
    }

    #[test]
    fn frame_arithmetic() {
        let cfg = FrontendConfig::default();
        assert_eq!(cfg.window_samples(), 480);
        assert_eq!(cfg.shift_samples(), 160);
        assert_eq!(frame_count(16000, &cfg), 98);
        assert_eq!(frame_count(480, &cfg), 1);
        assert_eq!(frame_count(479, &cfg), 0);
        for len in [480usize, 640, 1000, 4321, 16000, 20000] {
            assert_eq!(frame_count(len, &cfg), (len - 480) / 160 + 1);
        }
    }

    #[test]
    fn zero_buffer_gives_identical_floor_frames() {
        let cfg = FrontendConfig::default();
        let ex = MfccExtractor::new(cfg.clone());
        let buf = AudioBuffer::new(vec![0.0; 16000]);
        let lm = ex.log_mel(&buf).unwrap();
        assert_eq!(lm.n_frames, 98);
        let floor = cfg.log_floor.ln();
        assert!(lm.values.iter().all(|&v| v == floor));
        let mfcc = ex.extract(&buf).unwrap();
        let first = mfcc.row(0).to_vec();
        for t in 1..mfcc.n_frames {
            assert_eq!(mfcc.row(t), &first[..]);
        }
    }

    #[test]
    fn rejects_wrong_length() {
        let ex = MfccExtractor::new(FrontendConfig::default());
        let err = ex.extract(&AudioBuffer::new(vec![0.0; 15999])).unwrap_err();
        assert!(matches!(err, Error::BadBufferLength { got: 15999, .. }));
    }

    #[test]
    fn extraction_is_deterministic() {
        let buf = sine(440.0, 16000, 0.5);
        let cfg = FrontendConfig::default();
        let a = extract_mfcc(&buf, &cfg).unwrap();
        let b = extract_mfcc(&buf, &cfg).unwrap();
        assert_eq!(a.values, b.values);
        assert!(a.values.iter().all(|v| v.is_finite()));
    }

    /// Independent oracle: naive DFT + independently evaluated mel triangles.
    /// The production filterbank peak for a 1 kHz tone must match the oracle
    /// and land on the filter whose center is nearest 1 kHz.
    #[test]
    fn filterbank_peak_matches_naive_dft_oracle() {
        let cfg = FrontendConfig::default();
        let ex = MfccExtractor::new(cfg.clone());
        let buf = sine(1000.0, 16000, 0.5);
        let lm = ex.log_mel(&buf).unwrap();
        // mid-signal frame, away from any edge effects
        let t = 49;
        let row = lm.row(t);
        let argmax = |xs: &[f32]| {
            xs.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
        };
        let got = argmax(row);

        // oracle: recompute the same frame from first principles
        let start = t * 160;
        let mut prev = if start == 0 {
            0.0
        } else {
            buf.samples[start - 1]
        };
        let mut frame = [0.0f64; 480];
        for i in 0..480 {
            let x = buf.samples[start + i];
            frame[i] = (x - 0.97 * prev) as f64
                * 0.5
                * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / 480.0).cos());
            prev = x;
        }
        let mut mags = [0.0f64; 257];
        for (k, m) in mags.iter_mut().enumerate() {
            let (mut re, mut im) = (0.0f64, 0.0f64);
            for (i, &v) in frame.iter().enumerate() {
                let phase = -2.0 * std::f64::consts::PI * k as f64 * i as f64 / 512.0;
                re += v * phase.cos();
                im += v * phase.sin();
            }
            *m = (re * re + im * im).sqrt();
        }
        let mel = |hz: f64| 2595.0 * (1.0 + hz / 700.0).log10();
        let inv = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
        let (lo, hi) = (mel(20.0), mel(4000.0));
        let pts: Vec<f64> = (0..42)
            .map(|i| inv(lo + (hi - lo) * i as f64 / 41.0))
            .collect();
        let mut oracle = vec![0.0f64; 40];
        for m in 0..40 {
            for (k, &mag) in mags.iter().enumerate() {
                let f = k as f64 * 16000.0 / 512.0;
                let w = if f <= pts[m] || f >= pts[m + 2] {
                    0.0
                } else if f <= pts[m + 1] {
                    (f - pts[m]) / (pts[m + 1] - pts[m])
                } else {
                    (pts[m + 2] - f) / (pts[m + 2] - pts[m + 1])
                };
                oracle[m] += w * mag;
            }
        }
        let oracle_max = oracle
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(got, oracle_max);

        // and that filter's center really is the one closest to 1 kHz
        let centers = ex.filter_centers_hz();
        let nearest = centers
            .iter()
            .enumerate()
            .min_by(|a, b| {
                (a.1 - 1000.0)
                    .abs()
                    .partial_cmp(&(b.1 - 1000.0).abs())
                    .unwrap()
            })
            .unwrap()
            .0;
        assert_eq!(got, nearest);
    }

    #[test]
    fn energy_monotonicity_times_ten_adds_ln_ten() {
        let cfg = FrontendConfig::default();
        let ex = MfccExtractor::new(cfg.clone());
        // broadband hash noise so every filter sits well above the floor
        let samples: Vec<f32> = (0..16000u32)
            .map(|i| {
                let h = i.wrapping_mul(2654435761) ^ (i << 13);
                0.1 * ((h & 0xFFFF) as f32 / 65535.0 - 0.5)
            })
            .collect();
        let quiet = AudioBuffer::new(samples.clone());
        let loud = AudioBuffer::new(samples.iter().map(|x| x * 10.0).collect());
        let lq = ex.log_mel(&quiet).unwrap();
        let ll = ex.log_mel(&loud).unwrap();
        let floor = cfg.log_floor.ln();
        let expected = (100.0f64).ln() / 2.0;
        let mut checked = 0usize;
        for (&a, &b) in lq.values.iter().zip(&ll.values) {
            if a > floor + 1.0 && b > floor + 1.0 {
                assert!(
                    ((b - a) as f64 - expected).abs() < 1e-3,
                    "delta {} expected {}",
                    b - a,
                    expected
                );
                checked += 1;
            }
        }
        assert!(checked > 1000, "too few above-floor energies: {checked}");
    }

    #[test]
    fn band_pass_zero_in_zero_out() {
        let cfg = FrontendConfig::default();
        let out = band_pass(&AudioBuffer::new(vec![0.0; 4000]), &cfg);
        assert!(out.samples.iter().all(|&x| x == 0.0));
        assert_eq!(out.len(), 4000);
    }

    #[test]
    fn band_pass_stops_8khz() {
        let cfg = FrontendConfig::default();
        // 8 kHz at a 16 kHz rate is the alternating-sign Nyquist sequence
        let input = AudioBuffer::new(
            (0..16000)
                .map(|i| if i % 2 == 0 { 0.5 } else { -0.5 })
                .collect(),
        );
        let out = band_pass(&input, &cfg);
        assert!(rms(&out.samples) <= 0.1 * rms(&input.samples));
    }

    #[test]
    fn band_pass_passes_1khz() {
        let cfg = FrontendConfig::default();
        let input = sine(1000.0, 16000, 0.5);
        let out = band_pass(&input, &cfg);
        let ratio = rms(&out.samples) / rms(&input.samples);
        // within +-3 dB
        assert!(ratio > 0.707 && ratio < 1.414, "ratio {ratio}");
    }

    #[test]
    fn band_pass_stops_5hz() {
        let cfg = FrontendConfig::default();
        // below the 20 Hz high-pass edge; long buffer so the transient fades
        let input = sine(5.0, 48000, 0.5);
        let out = band_pass(&input, &cfg);
        let tail_in = rms(&input.samples[16000..]);
        let tail_out = rms(&out.samples[16000..]);
        assert!(tail_out <= 0.1 * tail_in, "ratio {}", tail_out / tail_in);
    }
}
