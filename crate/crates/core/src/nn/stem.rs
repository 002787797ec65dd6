//! Frozen convolutional feature extractor.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const IN_CHANNELS: usize = 32;
pub const IN_HEIGHT: usize = 20;
pub const IN_WIDTH: usize = 15;
pub const CONV1_FILTERS: usize = 16;
pub const CONV2_FILTERS: usize = 32;
const KERNEL: usize = 3;

/// Flattened length after two 2x2 floor poolings: 32 x 5 x 3.
pub const FEATURE_DIM: usize = CONV2_FILTERS * (IN_HEIGHT / 2 / 2) * (IN_WIDTH / 2 / 2);

/// 3x3 same-padded convolution, zero bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Conv {
    in_ch: usize,
    out_ch: usize,
    /// `[out][in][ky][kx]`.
    weights: Vec<f64>,
}

impl Conv {
    fn he(in_ch: usize, out_ch: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = (in_ch * KERNEL * KERNEL) as f64;
        let dist = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive sd");
        Self {
            in_ch,
            out_ch,
            weights: (0..out_ch * in_ch * KERNEL * KERNEL).map(|_| dist.sample(rng)).collect(),
        }
    }

    /// `[c][h][w]` -> ReLU(conv) of shape `[out][h][w]`.
    fn forward_relu(&self, x: &[f64], h: usize, w: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.out_ch * h * w];
        for o in 0..self.out_ch {
            let plane = &mut out[o * h * w..(o + 1) * h * w];
            for c in 0..self.in_ch {
                let xin = &x[c * h * w..(c + 1) * h * w];
                let k = &self.weights[(o * self.in_ch + c) * 9..(o * self.in_ch + c + 1) * 9];
                for ky in 0..KERNEL {
                    for kx in 0..KERNEL {
                        let wk = k[ky * KERNEL + kx];
                        for y in 0..h {
                            let sy = y as isize + ky as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let row_in = &xin[sy as usize * w..(sy as usize + 1) * w];
                            let row_out = &mut plane[y * w..(y + 1) * w];
                            // Output column xo reads input column xo + kx - 1.
                            let (lo, hi) = (if kx == 0 { 1 } else { 0 }, if kx == 2 { w - 1 } else { w });
                            for xo in lo..hi {
                                row_out[xo] += wk * row_in[xo + kx - 1];
                            }
                        }
                    }
                }
            }
        }
        for v in &mut out {
            *v = v.max(0.0);
        }
        out
    }
}

/// 2x2 max pooling with floor division of both spatial dimensions.
fn max_pool(x: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (ph, pw) = (h / 2, w / 2);
    let mut out = vec![0.0; c * ph * pw];
    for ch in 0..c {
        for y in 0..ph {
            for xo in 0..pw {
                let at = |yy: usize, xx: usize| x[(ch * h + yy) * w + xx];
                out[(ch * ph + y) * pw + xo] = at(2 * y, 2 * xo)
                    .max(at(2 * y, 2 * xo + 1))
                    .max(at(2 * y + 1, 2 * xo))
                    .max(at(2 * y + 1, 2 * xo + 1));
            }
        }
    }
    (out, ph, pw)
}

/// Two conv(3x3) + ReLU + max-pool(2x2) stages with 16 and 32 filters.
///
/// Weights are drawn once from He-normal initialisation under `seed` and are
/// never updated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stem {
    pub seed: u64,
    conv1: Conv,
    conv2: Conv,
}

impl Stem {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv1 = Conv::he(IN_CHANNELS, CONV1_FILTERS, &mut rng);
        let conv2 = Conv::he(CONV1_FILTERS, CONV2_FILTERS, &mut rng);
        Self { seed, conv1, conv2 }
    }

    /// FNV-1a over the weight bits, for checking the stem is untouched.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for w in self.conv1.weights.iter().chain(&self.conv2.weights) {
            for b in w.to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    /// Input `[32][20][15]` row-major; output of length [`FEATURE_DIM`].
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let expected = IN_CHANNELS * IN_HEIGHT * IN_WIDTH;
        if input.len() != expected {
            return Err(Error::Shape {
                expected: format!("{IN_CHANNELS}x{IN_HEIGHT}x{IN_WIDTH} = {expected}"),
                got: input.len().to_string(),
            });
        }
        let a1 = self.conv1.forward_relu(input, IN_HEIGHT, IN_WIDTH);
        let (p1, h1, w1) = max_pool(&a1, CONV1_FILTERS, IN_HEIGHT, IN_WIDTH);
        let a2 = self.conv2.forward_relu(&p1, h1, w1);
        let (p2, _, _) = max_pool(&a2, CONV2_FILTERS, h1, w1);
        Ok(p2)
    }

    /// Spatial shapes after each pooling stage.
    pub fn pooled_shapes() -> [(usize, usize); 2] {
        let s1 = (IN_HEIGHT / 2, IN_WIDTH / 2);
        [s1, (s1.0 / 2, s1.1 / 2)]
    }
}
