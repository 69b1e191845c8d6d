//! DSP building blocks for the frontend: Butterworth biquads, the mel
//! filterbank, and an orthonormal DCT-II.

use std::f64::consts::PI;

/// Second-order IIR section, direct form II transposed, f64 state.
#[derive(Debug, Clone)]
pub struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    z1: f64,
    z2: f64,
}

impl Biquad {
    /// RBJ cookbook low-pass section.
    pub fn low_pass(fc_hz: f64, fs_hz: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * fc_hz / fs_hz;
        let (sw, cw) = w0.sin_cos();
        let alpha = sw / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b0: (1.0 - cw) / 2.0 / a0,
            b1: (1.0 - cw) / a0,
            b2: (1.0 - cw) / 2.0 / a0,
            a1: -2.0 * cw / a0,
            a2: (1.0 - alpha) / a0,
            z1: 0.0,
            z2: 0.0,
        }
    }

    /// RBJ cookbook high-pass section.
    pub fn high_pass(fc_hz: f64, fs_hz: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * fc_hz / fs_hz;
        let (sw, cw) = w0.sin_cos();
        let alpha = sw / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b0: (1.0 + cw) / 2.0 / a0,
            b1: -(1.0 + cw) / a0,
            b2: (1.0 + cw) / 2.0 / a0,
            a1: -2.0 * cw / a0,
            a2: (1.0 - alpha) / a0,
            z1: 0.0,
            z2: 0.0,
        }
    }

    #[inline]
    pub fn step(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.z1;
        self.z1 = self.b1 * x - self.a1 * y + self.z2;
        self.z2 = self.b2 * x - self.a2 * y;
        y
    }
}

/// Butterworth pole quality factors for a cascade of biquad sections,
/// lowest Q first. Order 4 -> two sections, order 6 -> three.
pub fn butterworth_q(order: usize) -> Vec<f64> {
    assert!(order % 2 == 0 && order > 0, "even order required");
    let n = order as f64;
    (0..order / 2)
        .map(|k| 1.0 / (2.0 * ((2.0 * k as f64 + 1.0) * PI / (2.0 * n)).cos()))
        .collect()
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank over FFT magnitude bins.
///
/// `n_filters` triangles with corners equally spaced on the mel scale
/// between `low_hz` and `high_hz`, evaluated in Hz at the bin centers
/// `k * fs / n_fft`. Unnormalized triangle peaks (height 1).
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// Per filter: first bin index and the weights from that bin on.
    filters: Vec<(usize, Vec<f32>)>,
    centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_filters: usize, n_fft: usize, fs_hz: f64, low_hz: f64, high_hz: f64) -> Self {
        let n_bins = n_fft / 2 + 1;
        let mel_lo = hz_to_mel(low_hz);
        let mel_hi = hz_to_mel(high_hz);
        let points_hz: Vec<f64> = (0..n_filters + 2)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_filters + 1) as f64))
            .collect();
        let bin_hz = fs_hz / n_fft as f64;

        let mut filters = Vec::with_capacity(n_filters);
        for m in 0..n_filters {
            let (lo, mid, hi) = (points_hz[m], points_hz[m + 1], points_hz[m + 2]);
            let mut start = None;
            let mut weights = Vec::new();
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let w = if f <= lo || f >= hi {
                    0.0
                } else if f <= mid {
                    (f - lo) / (mid - lo)
                } else {
                    (hi - f) / (hi - mid)
                };
                if w > 0.0 {
                    if start.is_none() {
                        start = Some(k);
                    }
                    weights.push(w as f32);
                } else if start.is_some() {
                    break;
                }
            }
            // A triangle narrower than one bin spacing catches no bin; keep a
            // single nearest-bin tap so the filter is never empty.
            let start = match start {
                Some(s) => s,
                None => {
                    weights.push(1.0);
                    (mid / bin_hz).round() as usize
                }
            };
            filters.push((start, weights));
        }
        Self {
            filters,
            centers_hz: points_hz[1..=n_filters].to_vec(),
        }
    }

    pub fn n_filters(&self) -> usize {
        self.filters.len()
    }

    /// Center frequency of each triangle, in Hz.
    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    /// Apply the bank to a magnitude spectrum, accumulating in f64.
    pub fn apply(&self, magnitude: &[f32], out: &mut [f32]) {
        debug_assert_eq!(out.len(), self.filters.len());
        for (o, (start, weights)) in out.iter_mut().zip(&self.filters) {
            let mut acc = 0.0f64;
            for (w, &m) in weights.iter().zip(&magnitude[*start..]) {
                acc += *w as f64 * m as f64;
            }
            *o = acc as f32;
        }
    }
}

/// Orthonormal DCT-II matrix applied to a length-`n` vector.
#[derive(Debug, Clone)]
pub struct Dct2 {
    n: usize,
    // row-major: coefficient k, input index i
    table: Vec<f64>,
}

impl Dct2 {
    pub fn new(n: usize) -> Self {
        let mut table = vec![0.0; n * n];
        for k in 0..n {
            let scale = if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            };
            for i in 0..n {
                table[k * n + i] =
                    scale * (PI * k as f64 * (2.0 * i as f64 + 1.0) / (2.0 * n as f64)).cos();
            }
        }
        Self { n, table }
    }

    pub fn apply(&self, input: &[f32], out: &mut [f32]) {
        debug_assert_eq!(input.len(), self.n);
        debug_assert_eq!(out.len(), self.n);
        for k in 0..self.n {
            let row = &self.table[k * self.n..(k + 1) * self.n];
            let acc: f64 = row.iter().zip(input).map(|(t, &x)| t * x as f64).sum();
            out[k] = acc as f32;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn butterworth_q_matches_known_tables() {
        let q4 = butterworth_q(4);
        assert!((q4[0] - 0.5411961).abs() < 1e-6);
        assert!((q4[1] - 1.3065630).abs() < 1e-6);
        let q6 = butterworth_q(6);
        assert!((q6[0] - 0.5176381).abs() < 1e-6);
        assert!((q6[1] - 0.7071068).abs() < 1e-6);
        assert!((q6[2] - 1.9318517).abs() < 1e-6);
    }

    #[test]
    fn mel_scale_round_trip() {
        for hz in [20.0, 440.0, 1000.0, 4000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-6);
        }
    }

    #[test]
    fn filterbank_covers_band() {
        let fb = MelFilterbank::new(40, 512, 16000.0, 20.0, 4000.0);
        assert_eq!(fb.n_filters(), 40);
        // every filter must have at least one tap
        for (_, w) in &fb.filters {
            assert!(!w.is_empty());
        }
        // centers are inside the band and increasing
        let c = fb.centers_hz();
        assert!(c[0] > 20.0 && c[39] < 4000.0);
        assert!(c.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn dct_of_constant_is_dc_only() {
        let dct = Dct2::new(40);
        let input = vec![2.5f32; 40];
        let mut out = vec![0.0f32; 40];
        dct.apply(&input, &mut out);
        assert!((out[0] - 2.5 * 40.0 / (40f32).sqrt()).abs() < 1e-4);
        for &c in &out[1..] {
            assert!(c.abs() < 1e-5);
        }
    }

    #[test]
    fn dct_preserves_energy() {
        // orthonormal transform: ||DCT x|| == ||x||
        let dct = Dct2::new(40);
        let input: Vec<f32> = (0..40).map(|i| ((i * 7 % 13) as f32) - 6.0).collect();
        let mut out = vec![0.0f32; 40];
        dct.apply(&input, &mut out);
        let e_in: f32 = input.iter().map(|x| x * x).sum();
        let e_out: f32 = out.iter().map(|x| x * x).sum();
        assert!((e_in - e_out).abs() / e_in < 1e-5);
    }
}
