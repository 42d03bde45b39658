//! Ramsey readout of the m_s = 0 ↔ −1 manifold. The Fourier transform of
//! the free-induction decay shows one line per ¹⁴N projection; the line
//! intensities give the nuclear populations and hence the polarization.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::rates::PopulationVector;
use crate::spin::{ramsey_line_frequencies, RegisterParams, SpinError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReadoutError {
    #[error("invalid sampling grid: {0}")]
    InvalidGrid(String),
    #[error("empty trace")]
    EmptyTrace,
    #[error("zero-pad factor must be at least 1, got {0}")]
    InvalidZeroPad(usize),
    #[error("peak windows around {a} MHz and {b} MHz overlap (window {window} MHz)")]
    OverlappingWindows { a: f64, b: f64, window: f64 },
    #[error("expected line at {freq} MHz lies outside the spectral range [0, {max}] MHz")]
    OutOfRange { freq: f64, max: f64 },
    #[error("all peak amplitudes are zero")]
    ZeroPeaks,
    #[error("invalid peak amplitude {0}")]
    InvalidAmplitude(f64),
    #[error(transparent)]
    Spin(#[from] SpinError),
}

/// Apodization applied before the transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Apodization {
    None,
    #[default]
    Hann,
}

impl Apodization {
    fn weights(self, n: usize) -> Vec<f64> {
        match self {
            Apodization::None => vec![1.0; n],
            Apodization::Hann if n < 2 => vec![1.0; n],
            Apodization::Hann => (0..n)
                .map(|k| {
                    let x = std::f64::consts::PI * k as f64 / (n - 1) as f64;
                    x.sin().powi(2)
                })
                .collect(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Apodization::None => "none",
            Apodization::Hann => "hann",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutSettings {
    /// ns
    pub t2_star: f64,
    /// MHz
    pub detuning: f64,
    /// ns
    pub tau_max: f64,
    /// ns
    pub tau_step: f64,
    pub zero_pad: usize,
    /// Integration window per line (MHz).
    pub window: f64,
    /// Rotating-frame reference (MHz); `None` puts it on the m_I = 0 line.
    pub reference: Option<f64>,
    pub apodization: Apodization,
}

impl Default for ReadoutSettings {
    fn default() -> Self {
        Self {
            t2_star: 10_000.0,
            detuning: 5.0,
            tau_max: 4000.0,
            tau_step: 10.0,
            zero_pad: 4,
            window: 1.0,
            reference: None,
            apodization: Apodization::Hann,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FidTrace {
    /// ns, uniform from 0
    pub tau: Vec<f64>,
    pub signal: Vec<f64>,
    /// ns
    pub t2_star: f64,
    /// Line offsets in the rotating frame (MHz), m_I = −1, 0, +1.
    pub line_offsets: [f64; 3],
}

impl FidTrace {
    pub fn step(&self) -> f64 {
        if self.tau.len() > 1 {
            self.tau[1] - self.tau[0]
        } else {
            0.0
        }
    }
}

/// Rotating-frame offsets `f(m_I) − f_ref + detuning` (MHz).
pub fn line_offsets(
    params: &RegisterParams,
    detuning: f64,
    reference: Option<f64>,
) -> Result<[f64; 3], ReadoutError> {
    let lines = ramsey_line_frequencies(params)?;
    let reference = reference.unwrap_or(lines[1]);
    Ok(lines.map(|f| f - reference + detuning))
}

pub fn simulate_fid(
    state: &PopulationVector,
    params: &RegisterParams,
    settings: &ReadoutSettings,
) -> Result<FidTrace, ReadoutError> {
    let (step, max) = (settings.tau_step, settings.tau_max);
    if !(step.is_finite() && step > 0.0) {
        return Err(ReadoutError::InvalidGrid(format!("tau_step {step} ns")));
    }
    if !(max.is_finite() && max >= 10.0 * step) {
        return Err(ReadoutError::InvalidGrid(format!(
            "tau_max {max} ns must cover at least 10 steps of {step} ns"
        )));
    }
    if !(settings.t2_star.is_finite() && settings.t2_star > 0.0) {
        return Err(ReadoutError::InvalidGrid(format!("t2_star {} ns", settings.t2_star)));
    }
    if !settings.detuning.is_finite() {
        return Err(ReadoutError::InvalidGrid(format!("detuning {}", settings.detuning)));
    }
    let offsets = line_offsets(params, settings.detuning, settings.reference)?;
    let weights = state.ms0_lines();
    let n = (max / step + 1e-9).floor() as usize + 1;
    let tau: Vec<f64> = (0..n).map(|k| k as f64 * step).collect();
    let two_pi = 2.0 * std::f64::consts::PI;
    let signal = tau
        .iter()
        .map(|&t| {
            // MHz × ns = 1e−3 cycles
            let envelope = (-t / settings.t2_star).exp();
            weights
                .iter()
                .zip(offsets.iter())
                .map(|(w, f)| w * (two_pi * f * 1e-3 * t).cos())
                .sum::<f64>()
                * envelope
        })
        .collect();
    Ok(FidTrace {
        tau,
        signal,
        t2_star: settings.t2_star,
        line_offsets: offsets,
    })
}

/// One-sided magnitude spectrum, scaled so that an undamped cosine of
/// amplitude A peaks at ≈ A.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// MHz, from 0 to Nyquist
    pub frequency: Vec<f64>,
    pub magnitude: Vec<f64>,
    /// Transform length after zero padding.
    pub fft_len: usize,
    /// Multiplier applied to |X_k| to produce `magnitude`.
    pub scale: f64,
    /// Σ (w_k x_k)² of the transformed (apodized) samples.
    pub input_energy: f64,
}

impl Spectrum {
    /// Bin spacing (MHz).
    pub fn resolution(&self) -> f64 {
        if self.frequency.len() > 1 {
            self.frequency[1] - self.frequency[0]
        } else {
            0.0
        }
    }

    pub fn max_frequency(&self) -> f64 {
        self.frequency.last().copied().unwrap_or(0.0)
    }

    /// Σ|X_k|²/N over the full two-sided transform, reconstructed from the
    /// one-sided magnitudes of a real signal.
    pub fn spectral_energy(&self) -> f64 {
        let n = self.fft_len;
        let last = self.magnitude.len() - 1;
        let sum: f64 = self
            .magnitude
            .iter()
            .enumerate()
            .map(|(k, m)| {
                let raw = (m / self.scale).powi(2);
                let mirrored = k == 0 || (n.is_multiple_of(2) && k == last);
                if mirrored {
                    raw
                } else {
                    2.0 * raw
                }
            })
            .sum();
        sum / n as f64
    }

    /// Relative Parseval discrepancy between time and frequency domains.
    pub fn parseval_residual(&self) -> f64 {
        let e = self.input_energy;
        if e == 0.0 {
            return self.spectral_energy();
        }
        (self.spectral_energy() - e).abs() / e
    }

    pub fn nearest_bin(&self, freq: f64) -> usize {
        let df = self.resolution();
        if df == 0.0 {
            return 0;
        }
        ((freq / df).round().max(0.0) as usize).min(self.magnitude.len() - 1)
    }
}

pub fn spectrum_of_fid(
    fid: &FidTrace,
    zero_pad: usize,
    apodization: Apodization,
) -> Result<Spectrum, ReadoutError> {
    if fid.signal.is_empty() {
        return Err(ReadoutError::EmptyTrace);
    }
    if zero_pad < 1 {
        return Err(ReadoutError::InvalidZeroPad(zero_pad));
    }
    let n_samples = fid.signal.len();
    let step = fid.step();
    if n_samples > 1 && !(step.is_finite() && step > 0.0) {
        return Err(ReadoutError::InvalidGrid(format!("tau step {step} ns")));
    }
    let weights = apodization.weights(n_samples);
    let n = n_samples * zero_pad;
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut input_energy = 0.0;
    for (k, (x, w)) in fid.signal.iter().zip(&weights).enumerate() {
        let v = x * w;
        input_energy += v * v;
        buf[k] = Complex64::new(v, 0.0);
    }
    let fft: Arc<dyn rustfft::Fft<f64>> = FftPlanner::new().plan_fft_forward(n);
    fft.process(&mut buf);
    let coherent_gain: f64 = weights.iter().sum();
    let scale = 2.0 / coherent_gain;
    let half = n / 2;
    // 1/ns = 1000 MHz
    let df = if n_samples > 1 { 1000.0 / (n as f64 * step) } else { 0.0 };
    let frequency = (0..=half).map(|k| k as f64 * df).collect();
    let magnitude = buf[..=half].iter().map(|z| z.norm() * scale).collect();
    Ok(Spectrum {
        frequency,
        magnitude,
        fft_len: n,
        scale,
        input_energy,
    })
}

/// Line intensities for m_I = −1, 0, +1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakSet {
    pub amplitudes: [f64; 3],
}

impl PeakSet {
    pub fn new(amplitudes: [f64; 3]) -> Result<Self, ReadoutError> {
        if let Some(a) = amplitudes.iter().find(|a| !a.is_finite() || **a < 0.0) {
            return Err(ReadoutError::InvalidAmplitude(*a));
        }
        Ok(Self { amplitudes })
    }

    /// The m_s = 0 populations of a state read as ideal line intensities.
    pub fn from_populations(state: &PopulationVector) -> Self {
        Self {
            amplitudes: state.ms0_lines(),
        }
    }

    pub fn total(&self) -> f64 {
        self.amplitudes.iter().sum()
    }

    pub fn normalized(&self) -> Result<[f64; 3], ReadoutError> {
        let total = self.total();
        if total <= 0.0 {
            return Err(ReadoutError::ZeroPeaks);
        }
        Ok(self.amplitudes.map(|a| a / total))
    }
}

pub fn peak_amplitudes(
    spectrum: &Spectrum,
    expected: [f64; 3],
    window: f64,
) -> Result<PeakSet, ReadoutError> {
    if !(window.is_finite() && window > 0.0) {
        return Err(ReadoutError::InvalidGrid(format!("window {window} MHz")));
    }
    let max = spectrum.max_frequency();
    let half = window / 2.0;
    for &f in &expected {
        if !(f - half >= 0.0 && f + half <= max) {
            return Err(ReadoutError::OutOfRange { freq: f, max });
        }
    }
    let mut sorted = expected;
    sorted.sort_by(f64::total_cmp);
    for pair in sorted.windows(2) {
        if pair[1] - pair[0] < window {
            return Err(ReadoutError::OverlappingWindows {
                a: pair[0],
                b: pair[1],
                window,
            });
        }
    }
    let df = spectrum.resolution();
    let amplitudes = expected.map(|center| {
        spectrum
            .frequency
            .iter()
            .zip(&spectrum.magnitude)
            .filter(|(f, _)| (**f - center).abs() <= half)
            .map(|(_, m)| m * df)
            .sum()
    });
    Ok(PeakSet { amplitudes })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Polarization {
    pub p: f64,
    /// Set when the raw value fell outside [−1/2, 1].
    pub clamped: bool,
}

/// Weight of the m_I = 0 projector in `ρ = p|0⟩⟨0| + (1 − p)·1/3`.
pub fn polarization_from_peaks(peaks: &PeakSet) -> Result<Polarization, ReadoutError> {
    let [_, center, _] = peaks.normalized()?;
    let raw = (3.0 * center - 1.0) / 2.0;
    let p = raw.clamp(-0.5, 1.0);
    Ok(Polarization {
        p,
        clamped: p != raw,
    })
}

/// Polarization of the m_s = 0 sub-vector of a state.
pub fn polarization_of_state(state: &PopulationVector) -> Result<Polarization, ReadoutError> {
    polarization_from_peaks(&PeakSet::from_populations(state))
}

/// Full simulated measurement: FID, spectrum, integrated lines.
#[derive(Debug, Clone)]
pub struct Measurement {
    pub fid: FidTrace,
    pub spectrum: Spectrum,
    pub peaks: PeakSet,
}

pub fn measure(
    state: &PopulationVector,
    params: &RegisterParams,
    settings: &ReadoutSettings,
) -> Result<Measurement, ReadoutError> {
    let fid = simulate_fid(state, params, settings)?;
    let spectrum = spectrum_of_fid(&fid, settings.zero_pad, settings.apodization)?;
    let peaks = peak_amplitudes(&spectrum, fid.line_offsets, settings.window)?;
    Ok(Measurement {
        fid,
        spectrum,
        peaks,
    })
}
