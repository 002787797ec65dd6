//! Butterworth IIR design in second-order sections and zero-phase filtering.

use crate::{Error, Result};

/// One biquad `[b0, b1, b2, a1, a2]` with `a0 = 1`.
pub type Section = [f64; 5];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Low,
    High,
}

/// Bilinear-transformed Butterworth of even `order`, one section per pole pair.
fn butterworth(order: usize, cutoff: f64, fs: f64, kind: Kind) -> Vec<Section> {
    assert!(order % 2 == 0 && order > 0, "order must be even");
    let k = (std::f64::consts::PI * cutoff / fs).tan();
    let k2 = k * k;
    (1..=order / 2)
        .map(|i| {
            // Pole pair damping 2 sin((2i - 1) pi / 2n).
            let q = 2.0 * ((2 * i - 1) as f64 * std::f64::consts::PI / (2 * order) as f64).sin();
            let norm = 1.0 / (1.0 + q * k + k2);
            let a1 = 2.0 * (k2 - 1.0) * norm;
            let a2 = (1.0 - q * k + k2) * norm;
            match kind {
                Kind::Low => [k2 * norm, 2.0 * k2 * norm, k2 * norm, a1, a2],
                Kind::High => [norm, -2.0 * norm, norm, a1, a2],
            }
        })
        .collect()
}

/// Band-pass as a high-pass at `low` cascaded with a low-pass at `high`, each a
/// Butterworth of `order`.
pub fn butterworth_bandpass(order: usize, low: f64, high: f64, fs: f64) -> Result<Vec<Section>> {
    if !(fs > 0.0 && low > 0.0 && low < high) {
        return Err(Error::Config(format!(
            "band-pass needs 0 < low < high, got [{low}, {high}] Hz"
        )));
    }
    if high >= 0.5 * fs {
        return Err(Error::Config(format!(
            "upper edge {high} Hz is not below the Nyquist frequency {} Hz",
            0.5 * fs
        )));
    }
    let mut sos = butterworth(order, low, fs, Kind::High);
    sos.extend(butterworth(order, high, fs, Kind::Low));
    Ok(sos)
}

/// Magnitude response of the cascade at frequency `f`.
pub fn magnitude_response(sos: &[Section], f: f64, fs: f64) -> f64 {
    let w = 2.0 * std::f64::consts::PI * f / fs;
    let (c1, s1, c2, s2) = (w.cos(), w.sin(), (2.0 * w).cos(), (2.0 * w).sin());
    sos.iter()
        .map(|&[b0, b1, b2, a1, a2]| {
            // Evaluate at z^-1 = e^{-iw}.
            let nr = b0 + b1 * c1 + b2 * c2;
            let ni = -(b1 * s1 + b2 * s2);
            let dr = 1.0 + a1 * c1 + a2 * c2;
            let di = -(a1 * s1 + a2 * s2);
            ((nr * nr + ni * ni) / (dr * dr + di * di)).sqrt()
        })
        .product()
}

/// Steady-state transposed-direct-form-II states for a unit step input.
fn steady_state(sos: &[Section]) -> Vec<[f64; 2]> {
    let mut level = 1.0;
    sos.iter()
        .map(|&[b0, b1, b2, a1, a2]| {
            let gain = (b0 + b1 + b2) / (1.0 + a1 + a2);
            let y = gain * level;
            let z = [y - b0 * level, b2 * level - a2 * y];
            level = y;
            z
        })
        .collect()
}

fn sosfilt(sos: &[Section], x: &mut [f64], state: &mut [[f64; 2]]) {
    for (&[b0, b1, b2, a1, a2], z) in sos.iter().zip(state.iter_mut()) {
        for v in x.iter_mut() {
            let xin = *v;
            let y = b0 * xin + z[0];
            z[0] = b1 * xin - a1 * y + z[1];
            z[1] = b2 * xin - a2 * y;
            *v = y;
        }
    }
}

/// Default edge padding: three times the number of filter coefficients per side.
pub fn default_padlen(sos: &[Section]) -> usize {
    3 * (2 * sos.len() + 1)
}

/// Forward-backward filtering with odd extension at both ends and steady-state
/// initial conditions, giving zero phase and the squared magnitude response.
pub fn sosfiltfilt(sos: &[Section], x: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    let pad = default_padlen(sos);
    if n <= pad {
        return Err(Error::Domain(format!(
            "signal of {n} samples is too short for {pad}-sample edge padding"
        )));
    }
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

    let zi = steady_state(sos);
    let scaled = |zi: &[[f64; 2]], s: f64| -> Vec<[f64; 2]> {
        zi.iter().map(|z| [z[0] * s, z[1] * s]).collect()
    };
    let mut state = scaled(&zi, ext[0]);
    sosfilt(sos, &mut ext, &mut state);
    ext.reverse();
    let mut state = scaled(&zi, ext[0]);
    sosfilt(sos, &mut ext, &mut state);
    ext.reverse();
    Ok(ext[pad..pad + n].to_vec())
}
