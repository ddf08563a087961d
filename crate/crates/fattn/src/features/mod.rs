//! Waveform-to-spectrogram features: log mel filterbank energies,
//! log-magnitude STFT, low-frame-rate stacking, SpecAugment-style
//! masking, and SNR-controlled noise mixing.
//!
//! All operations are pure functions of their inputs plus explicit
//! seeds; there is no shared mutable state.

pub mod io;
pub mod wav;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{FattnError, Result};
use crate::tensorcore::Tensor;

/// Raw audio: dimensionless amplitudes at a fixed sample rate.
#[derive(Debug, Clone)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self { samples, sample_rate }
    }

    /// Mean square of the samples.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Lfbe,
    LogStft,
    Stacked,
}

impl FeatureKind {
    pub fn code(self) -> u8 {
        match self {
            FeatureKind::Lfbe => 0,
            FeatureKind::LogStft => 1,
            FeatureKind::Stacked => 2,
        }
    }

    pub fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(FeatureKind::Lfbe),
            1 => Ok(FeatureKind::LogStft),
            2 => Ok(FeatureKind::Stacked),
            other => Err(FattnError::BadFormat(format!("feature kind code {other}"))),
        }
    }
}

/// Time-major matrix of feature frames with frame-period metadata.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    /// T x F matrix of log-energy values.
    pub values: Tensor,
    pub frame_period_ms: f64,
    pub kind: FeatureKind,
}

impl Spectrogram {
    pub fn new(values: Tensor, frame_period_ms: f64, kind: FeatureKind) -> Result<Self> {
        if values.rank() != 2 || values.rows() == 0 || values.cols() == 0 {
            return Err(FattnError::ShapeMismatch(format!(
                "spectrogram needs a non-empty T x F matrix, got {:?}",
                values.shape()
            )));
        }
        if frame_period_ms <= 0.0 {
            return Err(FattnError::InvalidConfig("frame_period_ms must be > 0".into()));
        }
        if !values.is_finite() {
            return Err(FattnError::NonFinite("spectrogram values".into()));
        }
        Ok(Self {
            values,
            frame_period_ms,
            kind,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.values.rows()
    }

    pub fn num_bins(&self) -> usize {
        self.values.cols()
    }
}

/// Framing and filterbank settings.
#[derive(Debug, Clone)]
pub struct FeatureConfig {
    pub window_ms: f64,
    pub shift_ms: f64,
    pub num_mel_bins: usize,
    pub fft_size: usize,
    pub sample_rate: u32,
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            window_ms: 25.0,
            shift_ms: 10.0,
            num_mel_bins: 64,
            fft_size: 512,
            sample_rate: 16_000,
            log_floor: 1e-10,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.shift_ms > 0.0 && self.window_ms >= self.shift_ms) {
            return Err(FattnError::InvalidConfig(
                "need window_ms >= shift_ms > 0".into(),
            ));
        }
        if self.num_mel_bins == 0 || self.num_mel_bins > self.fft_size / 2 {
            return Err(FattnError::InvalidConfig(
                "need 1 <= num_mel_bins <= fft_size/2".into(),
            ));
        }
        if self.log_floor <= 0.0 {
            return Err(FattnError::InvalidConfig("log_floor must be > 0".into()));
        }
        if self.window_samples() > self.fft_size {
            return Err(FattnError::InvalidConfig(
                "fft_size must cover the analysis window".into(),
            ));
        }
        Ok(())
    }

    pub fn window_samples(&self) -> usize {
        (self.window_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn shift_samples(&self) -> usize {
        (self.shift_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }
}

/// SpecAugment-style masking policy. Masked rectangles are filled with
/// the per-utterance mean; defaults mirror a large-detection policy.
#[derive(Debug, Clone)]
pub struct MaskPolicy {
    pub num_freq_masks: usize,
    pub max_freq_width: usize,
    pub num_time_masks: usize,
    pub max_time_width: usize,
    pub max_time_fraction: f64,
    pub seed: u64,
}

impl Default for MaskPolicy {
    fn default() -> Self {
        Self {
            num_freq_masks: 2,
            max_freq_width: 27,
            num_time_masks: 2,
            max_time_width: 100,
            max_time_fraction: 1.0,
            seed: 0,
        }
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10.0_f64.powf(mel / 2595.0) - 1.0)
}

/// Center frequency (Hz) of each triangular mel filter, 0..Nyquist.
pub fn mel_bin_centers_hz(cfg: &FeatureConfig) -> Vec<f64> {
    let nyquist = cfg.sample_rate as f64 / 2.0;
    let mel_max = hz_to_mel(nyquist);
    let n = cfg.num_mel_bins;
    (1..=n)
        .map(|k| mel_to_hz(mel_max * k as f64 / (n + 1) as f64))
        .collect()
}

/// The mel bin whose center frequency is nearest `hz`.
pub fn nearest_mel_bin(cfg: &FeatureConfig, hz: f64) -> usize {
    let centers = mel_bin_centers_hz(cfg);
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centers.iter().enumerate() {
        let d = (c - hz).abs();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Sparse triangular filterbank: per mel bin, (fft bin, weight) pairs.
/// Triangles peak at 1 and span adjacent mel-spaced edge frequencies.
fn mel_filterbank(cfg: &FeatureConfig) -> Vec<Vec<(usize, f64)>> {
    let nyquist = cfg.sample_rate as f64 / 2.0;
    let mel_max = hz_to_mel(nyquist);
    let n = cfg.num_mel_bins;
    let edges: Vec<f64> = (0..n + 2)
        .map(|k| mel_to_hz(mel_max * k as f64 / (n + 1) as f64))
        .collect();
    let n_freqs = cfg.fft_size / 2 + 1;
    let hz_per_bin = cfg.sample_rate as f64 / cfg.fft_size as f64;

    let mut filters = Vec::with_capacity(n);
    for m in 0..n {
        let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
        let mut taps = Vec::new();
        for k in 0..n_freqs {
            let f = k as f64 * hz_per_bin;
            let w = if f > l && f < c {
                (f - l) / (c - l)
            } else if (f - c).abs() < 1e-12 {
                1.0
            } else if f > c && f < r {
                (r - f) / (r - c)
            } else {
                0.0
            };
            if w > 0.0 {
                taps.push((k, w));
            }
        }
        filters.push(taps);
    }
    filters
}

fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64).cos()))
        .collect()
}

/// Windowed, zero-padded FFT magnitudes-squared per frame:
/// T x (fft_size/2 + 1) power bins.
fn power_frames(w: &Waveform, cfg: &FeatureConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    if w.sample_rate != cfg.sample_rate {
        return Err(FattnError::InvalidConfig(format!(
            "waveform rate {} != config rate {}",
            w.sample_rate, cfg.sample_rate
        )));
    }
    let win = cfg.window_samples();
    let shift = cfg.shift_samples();
    if w.samples.len() < win {
        return Err(FattnError::InsufficientAudio(format!(
            "{} samples < one {}-sample window",
            w.samples.len(),
            win
        )));
    }
    let t = 1 + (w.samples.len() - win) / shift;
    let hann = hann_window(win);
    let n_freqs = cfg.fft_size / 2 + 1;

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(cfg.fft_size);
    let mut frames = Vec::with_capacity(t);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
    for frame in 0..t {
        let start = frame * shift;
        for (i, slot) in buf.iter_mut().enumerate() {
            let v = if i < win {
                w.samples[start + i] * hann[i]
            } else {
                0.0
            };
            *slot = Complex::new(v, 0.0);
        }
        fft.process(&mut buf);
        frames.push(buf[..n_freqs].iter().map(|c| c.norm_sqr()).collect());
    }
    Ok(frames)
}

/// Log mel filterbank energies: T x num_mel_bins, natural log with floor.
pub fn compute_lfbe(w: &Waveform, cfg: &FeatureConfig) -> Result<Spectrogram> {
    let frames = power_frames(w, cfg)?;
    let filters = mel_filterbank(cfg);
    let (t, f) = (frames.len(), cfg.num_mel_bins);
    let mut values = Tensor::zeros(vec![t, f]);
    for (ti, frame) in frames.iter().enumerate() {
        for (m, taps) in filters.iter().enumerate() {
            let e: f64 = taps.iter().map(|&(k, w)| w * frame[k]).sum();
            values.set2(ti, m, e.max(cfg.log_floor).ln());
        }
    }
    Spectrogram::new(values, cfg.shift_ms, FeatureKind::Lfbe)
}

/// Log-magnitude STFT features: T x (fft_size/2) values (the Nyquist
/// bin is dropped so a 512-point FFT yields 256 dimensions).
pub fn compute_log_stft(w: &Waveform, cfg: &FeatureConfig) -> Result<Spectrogram> {
    let frames = power_frames(w, cfg)?;
    let f = cfg.fft_size / 2;
    let t = frames.len();
    let mut values = Tensor::zeros(vec![t, f]);
    for (ti, frame) in frames.iter().enumerate() {
        for k in 0..f {
            values.set2(ti, k, frame[k].sqrt().max(cfg.log_floor).ln());
        }
    }
    Spectrogram::new(values, cfg.shift_ms, FeatureKind::LogStft)
}

/// Stack `factor` consecutive frames and downsample time by `factor`.
/// The last incomplete group is zero-padded rather than dropped.
pub fn lfr_stack(s: &Spectrogram, factor: usize) -> Result<Spectrogram> {
    if factor == 0 {
        return Err(FattnError::InvalidConfig("lfr factor must be >= 1".into()));
    }
    if factor == 1 {
        return Ok(s.clone());
    }
    let (t, f) = (s.num_frames(), s.num_bins());
    let t_out = t.div_ceil(factor);
    let f_out = f * factor;
    let mut values = Tensor::zeros(vec![t_out, f_out]);
    for to in 0..t_out {
        for k in 0..factor {
            let ti = to * factor + k;
            if ti >= t {
                break;
            }
            for c in 0..f {
                values.set2(to, k * f + c, s.values.at2(ti, c));
            }
        }
    }
    Spectrogram::new(values, s.frame_period_ms * factor as f64, FeatureKind::Stacked)
}

/// Where `spec_augment` painted, for bound checks and reporting.
#[derive(Debug, Clone, Default)]
pub struct MaskFootprint {
    /// (start_bin, width) per frequency mask.
    pub freq: Vec<(usize, usize)>,
    /// (start_frame, width) per time mask.
    pub time: Vec<(usize, usize)>,
}

/// Mask random frequency bands and time spans with the per-utterance
/// mean value. Unmasked cells are bit-identical to the input and the
/// whole draw is deterministic under the policy seed.
pub fn spec_augment(s: &Spectrogram, p: &MaskPolicy) -> Result<(Spectrogram, MaskFootprint)> {
    let (t, f) = (s.num_frames(), s.num_bins());
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mean = s.values.data().iter().sum::<f64>() / s.values.len() as f64;
    let mut out = s.clone();
    let mut footprint = MaskFootprint::default();

    for _ in 0..p.num_freq_masks {
        let max_w = p.max_freq_width.min(f);
        let width = rng.random_range(0..=max_w);
        if width == 0 {
            continue;
        }
        let start = rng.random_range(0..=f - width);
        footprint.freq.push((start, width));
        for ti in 0..t {
            for c in start..start + width {
                out.values.set2(ti, c, mean);
            }
        }
    }

    // total masked time is capped at max_time_fraction * T
    let mut budget = (p.max_time_fraction.clamp(0.0, 1.0) * t as f64).floor() as usize;
    for _ in 0..p.num_time_masks {
        let max_w = p.max_time_width.min(t).min(budget);
        let width = rng.random_range(0..=max_w);
        if width == 0 {
            continue;
        }
        budget -= width;
        let start = rng.random_range(0..=t - width);
        footprint.time.push((start, width));
        for ti in start..start + width {
            for c in 0..f {
                out.values.set2(ti, c, mean);
            }
        }
    }
    Ok((out, footprint))
}

/// Result of [`mix_at_snr`]: the mixture plus the gain-adjusted noise
/// actually added, for verification round trips.
#[derive(Debug, Clone)]
pub struct SnrMix {
    pub mixture: Waveform,
    pub scaled_noise: Waveform,
    pub gain: f64,
}

/// Tile or truncate `noise` to the clean length using a seeded circular
/// offset, then scale it so the mixture has the requested SNR:
/// g = sqrt(P_clean / (P_noise * 10^(snr_db/10))).
pub fn mix_at_snr(clean: &Waveform, noise: &Waveform, snr_db: f64, seed: u64) -> Result<SnrMix> {
    if clean.sample_rate != noise.sample_rate {
        return Err(FattnError::InvalidConfig("sample rates differ".into()));
    }
    if clean.power() <= 0.0 {
        return Err(FattnError::SilentInput("clean signal has zero power".into()));
    }
    if noise.power() <= 0.0 {
        return Err(FattnError::SilentInput("noise signal has zero power".into()));
    }
    let n = clean.samples.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = rng.random_range(0..noise.samples.len());
    let looped: Vec<f64> = (0..n)
        .map(|i| noise.samples[(offset + i) % noise.samples.len()])
        .collect();
    let looped = Waveform::new(looped, noise.sample_rate);
    if looped.power() <= 0.0 {
        return Err(FattnError::SilentInput("noise segment has zero power".into()));
    }

    let gain = (clean.power() / (looped.power() * 10.0_f64.powf(snr_db / 10.0))).sqrt();
    let scaled: Vec<f64> = looped.samples.iter().map(|v| v * gain).collect();
    let mixture: Vec<f64> = clean
        .samples
        .iter()
        .zip(&scaled)
        .map(|(c, v)| c + v)
        .collect();
    Ok(SnrMix {
        mixture: Waveform::new(mixture, clean.sample_rate),
        scaled_noise: Waveform::new(scaled, clean.sample_rate),
        gain,
    })
}

/// 10 log10(P_clean / P_noise) over equal-length signals.
pub fn measure_snr(clean: &Waveform, noise: &Waveform) -> Result<f64> {
    if clean.samples.len() != noise.samples.len() {
        return Err(FattnError::ShapeMismatch(format!(
            "snr over lengths {} vs {}",
            clean.samples.len(),
            noise.samples.len()
        )));
    }
    let (pc, pn) = (clean.power(), noise.power());
    if pc <= 0.0 || pn <= 0.0 {
        return Err(FattnError::SilentInput("snr of a zero-power signal".into()));
    }
    Ok(10.0 * (pc / pn).log10())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, secs: f64, rate: u32) -> Waveform {
        let n = (secs * rate as f64) as usize;
        let samples = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin())
            .collect();
        Waveform::new(samples, rate)
    }

    #[test]
    fn lfbe_frame_count_formula() {
        // 1 s of 16 kHz audio, 25 ms window, 10 ms shift -> 98 x 64
        let w = sine(440.0, 1.0, 16_000);
        let s = compute_lfbe(&w, &FeatureConfig::default()).unwrap();
        assert_eq!(s.num_frames(), 1 + (16_000 - 400) / 160);
        assert_eq!(s.num_frames(), 98);
        assert_eq!(s.num_bins(), 64);
        assert!((s.frame_period_ms - 10.0).abs() < 1e-12);
    }

    #[test]
    fn silence_hits_the_log_floor() {
        let w = Waveform::new(vec![0.0; 16_000], 16_000);
        let cfg = FeatureConfig::default();
        let s = compute_lfbe(&w, &cfg).unwrap();
        let want = cfg.log_floor.ln();
        for v in s.values.data() {
            assert!((v - want).abs() < 1e-12);
        }
        let s = compute_log_stft(&w, &cfg).unwrap();
        assert_eq!(s.num_bins(), 256);
        for v in s.values.data() {
            assert!((v - want).abs() < 1e-12);
        }
    }

    #[test]
    fn too_short_waveform_is_rejected() {
        let w = Waveform::new(vec![0.1; 399], 16_000);
        assert!(matches!(
            compute_lfbe(&w, &FeatureConfig::default()),
            Err(FattnError::InsufficientAudio(_))
        ));
    }

    #[test]
    fn sine_lands_in_the_nearest_mel_bin() {
        // independent oracle: the mel bin whose center is nearest 1 kHz
        let cfg = FeatureConfig::default();
        let w = sine(1000.0, 1.0, 16_000);
        let s = compute_lfbe(&w, &cfg).unwrap();

        let mut mean_energy = vec![0.0; s.num_bins()];
        for t in 0..s.num_frames() {
            for (c, acc) in mean_energy.iter_mut().enumerate() {
                *acc += s.values.at2(t, c);
            }
        }
        let argmax = mean_energy
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;

        // oracle recomputed from the mel mapping directly
        let mel_max = 2595.0 * (1.0 + 8000.0 / 700.0_f64).log10();
        let center = |k: usize| 700.0 * (10.0_f64.powf(mel_max * k as f64 / 65.0 / 2595.0) - 1.0);
        let mut best = (0, f64::INFINITY);
        for k in 1..=64 {
            let d = (center(k) - 1000.0_f64).abs();
            if d < best.1 {
                best = (k, d);
            }
        }
        assert_eq!(argmax, best.0 - 1);
    }

    #[test]
    fn log_stft_keeps_low_256_of_257_bins() {
        let cfg = FeatureConfig::default();
        assert_eq!(cfg.fft_size / 2 + 1, 257);
        let w = sine(3000.0, 0.2, 16_000);
        let s = compute_log_stft(&w, &cfg).unwrap();
        assert_eq!(s.num_bins(), 256);
    }

    #[test]
    fn lfr_stack_shapes_and_tail_padding() {
        let t9 = Tensor::new(vec![9, 64], (0..9 * 64).map(|i| i as f64).collect()).unwrap();
        let s = Spectrogram::new(t9, 10.0, FeatureKind::Lfbe).unwrap();
        let out = lfr_stack(&s, 3).unwrap();
        assert_eq!(out.values.shape(), &[3, 192]);
        assert!((out.frame_period_ms - 30.0).abs() < 1e-12);
        assert_eq!(out.kind, FeatureKind::Stacked);

        // T=10, F=4, factor 3 -> 4 x 12 with the last two frame slots zero
        let t10 = Tensor::new(vec![10, 4], (0..40).map(|i| 1.0 + i as f64).collect()).unwrap();
        let s = Spectrogram::new(t10, 10.0, FeatureKind::Lfbe).unwrap();
        let out = lfr_stack(&s, 3).unwrap();
        assert_eq!(out.values.shape(), &[4, 12]);
        // row 3 holds frame 9 then zeros
        for c in 0..4 {
            assert_eq!(out.values.at2(3, c), s.values.at2(9, c));
        }
        for c in 4..12 {
            assert_eq!(out.values.at2(3, c), 0.0);
        }
        // element enumeration for the leading rows
        for to in 0..3 {
            for k in 0..3 {
                for c in 0..4 {
                    assert_eq!(out.values.at2(to, k * 4 + c), s.values.at2(to * 3 + k, c));
                }
            }
        }
    }

    #[test]
    fn lfr_factor_one_is_identity_and_zero_errors() {
        let t = Tensor::new(vec![5, 4], (0..20).map(|i| i as f64).collect()).unwrap();
        let s = Spectrogram::new(t, 10.0, FeatureKind::Lfbe).unwrap();
        let out = lfr_stack(&s, 1).unwrap();
        assert_eq!(out.values.data(), s.values.data());
        assert!(lfr_stack(&s, 0).is_err());
    }

    #[test]
    fn spec_augment_identity_and_determinism() {
        let t = Tensor::new(vec![20, 8], (0..160).map(|i| (i % 13) as f64).collect()).unwrap();
        let s = Spectrogram::new(t, 10.0, FeatureKind::Lfbe).unwrap();

        let quiet = MaskPolicy {
            num_freq_masks: 0,
            num_time_masks: 0,
            ..MaskPolicy::default()
        };
        let (out, fp) = spec_augment(&s, &quiet).unwrap();
        assert_eq!(out.values.data(), s.values.data());
        assert!(fp.freq.is_empty() && fp.time.is_empty());

        let p = MaskPolicy {
            seed: 42,
            ..MaskPolicy::default()
        };
        let (a, _) = spec_augment(&s, &p).unwrap();
        let (b, _) = spec_augment(&s, &p).unwrap();
        for (x, y) in a.values.data().iter().zip(b.values.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn spec_augment_touches_only_declared_masks() {
        let t = Tensor::new(vec![30, 16], (0..480).map(|i| (i as f64).sin()).collect()).unwrap();
        let s = Spectrogram::new(t, 10.0, FeatureKind::Lfbe).unwrap();
        let p = MaskPolicy {
            num_freq_masks: 1,
            max_freq_width: 16,
            num_time_masks: 1,
            max_time_width: 10,
            max_time_fraction: 1.0,
            seed: 9,
        };
        let (out, fp) = spec_augment(&s, &p).unwrap();
        let masked = |ti: usize, c: usize| {
            fp.freq.iter().any(|&(s0, w)| c >= s0 && c < s0 + w)
                || fp.time.iter().any(|&(s0, w)| ti >= s0 && ti < s0 + w)
        };
        for ti in 0..30 {
            for c in 0..16 {
                if !masked(ti, c) {
                    assert_eq!(
                        out.values.at2(ti, c).to_bits(),
                        s.values.at2(ti, c).to_bits(),
                        "untouched cell must be bit-identical"
                    );
                }
            }
        }
    }

    #[test]
    fn mix_gain_closed_forms() {
        let clean = sine(500.0, 0.1, 16_000);
        let noise = sine(700.0, 0.1, 16_000);
        // equal powers at 0 dB -> unit gain
        let mix = mix_at_snr(&clean, &noise, 0.0, 1).unwrap();
        assert!((mix.gain - 1.0).abs() < 1e-9);
        // equal powers at +10 dB -> 10^-0.5
        let mix = mix_at_snr(&clean, &noise, 10.0, 1).unwrap();
        assert!((mix.gain - 10.0_f64.powf(-0.5)).abs() < 1e-9);
    }

    #[test]
    fn silent_inputs_are_rejected() {
        let clean = sine(500.0, 0.1, 16_000);
        let silence = Waveform::new(vec![0.0; 1600], 16_000);
        assert!(matches!(
            mix_at_snr(&clean, &silence, 0.0, 1),
            Err(FattnError::SilentInput(_))
        ));
        assert!(matches!(
            mix_at_snr(&silence, &clean, 0.0, 1),
            Err(FattnError::SilentInput(_))
        ));
        assert!(measure_snr(&silence, &clean).is_err());
    }

    #[test]
    fn measure_snr_power_ratios() {
        let clean = sine(500.0, 0.1, 16_000);
        let scaled = Waveform::new(clean.samples.iter().map(|v| v / 10.0).collect(), 16_000);
        let snr = measure_snr(&clean, &scaled).unwrap();
        assert!((snr - 20.0).abs() < 1e-9);
        let same = measure_snr(&clean, &clean).unwrap();
        assert!(same.abs() < 1e-12);
    }

    #[test]
    fn snr_round_trip_recovers_request() {
        let clean = sine(450.0, 0.25, 16_000);
        let noise = sine(1333.0, 0.1, 16_000); // shorter; forces looping
        for &snr in &[-10.0, -5.0, 0.0, 5.0, 10.0, 20.0] {
            let mix = mix_at_snr(&clean, &noise, snr, 77).unwrap();
            let measured = measure_snr(&clean, &mix.scaled_noise).unwrap();
            assert!(
                (measured - snr).abs() < 1e-6,
                "requested {snr} dB, measured {measured} dB"
            );
        }
    }

    #[test]
    fn parseval_and_magnitudes_match_direct_dft() {
        // one frame: windowed energy equals sum |X|^2 / N over the full
        // spectrum, and the implementation's magnitudes match a naive DFT
        let cfg = FeatureConfig::default();
        let w = sine(777.0, 0.05, 16_000);
        let s = compute_log_stft(&w, &cfg).unwrap();

        // rebuild frame 0 with an independent scalar-loop DFT
        let win = 400;
        let hann: Vec<f64> = (0..win)
            .map(|n| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / 399.0).cos()))
            .collect();
        let frame: Vec<f64> = (0..512)
            .map(|i| if i < win { w.samples[i] * hann[i] } else { 0.0 })
            .collect();
        let dft = |k: usize| -> (f64, f64) {
            let mut re = 0.0;
            let mut im = 0.0;
            for (n, &x) in frame.iter().enumerate() {
                let phase = -2.0 * std::f64::consts::PI * (k * n) as f64 / 512.0;
                re += x * phase.cos();
                im += x * phase.sin();
            }
            (re, im)
        };

        // Parseval over the naive DFT itself
        let time_energy: f64 = frame.iter().map(|x| x * x).sum();
        let mut spec_energy = 0.0;
        for k in 0..512 {
            let (re, im) = dft(k);
            spec_energy += re * re + im * im;
        }
        spec_energy /= 512.0;
        assert!((spec_energy - time_energy).abs() / time_energy < 1e-6);

        // implementation magnitudes agree with the oracle bin-by-bin
        for k in (0..256).step_by(17) {
            let (re, im) = dft(k);
            let want = (re * re + im * im).sqrt().max(cfg.log_floor).ln();
            assert!(
                (s.values.at2(0, k) - want).abs() < 1e-8,
                "bin {k}: {} vs {want}",
                s.values.at2(0, k)
            );
        }
    }
}
