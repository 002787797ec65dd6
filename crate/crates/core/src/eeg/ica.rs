//! Symmetric FastICA with the log-cosh contrast.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result};

pub const MAX_ITERATIONS: usize = 500;
pub const TOLERANCE: f64 = 1e-6;
/// Whitening keeps eigen-directions with variance above this fraction of the largest.
const RANK_TOL: f64 = 1e-10;

/// `X ≈ mean + mixing · sources`, with `sources = unmixing · (X - mean)`.
#[derive(Debug, Clone)]
pub struct IcaDecomposition {
    /// `n_components x n_channels`, whitening included.
    pub unmixing: DMatrix<f64>,
    /// `n_channels x n_components`.
    pub mixing: DMatrix<f64>,
    /// `n_components x n_samples`, unit variance.
    pub sources: DMatrix<f64>,
    /// Per-channel mean removed before decomposition.
    pub mean: DVector<f64>,
    /// Rotation in whitened space; rows are orthonormal.
    pub rotation: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl IcaDecomposition {
    pub fn n_components(&self) -> usize {
        self.sources.nrows()
    }

    /// Back-projection of the components not listed in `remove`.
    pub fn reconstruct_without(&self, remove: &[usize]) -> Result<DMatrix<f64>> {
        if let Some(&bad) = remove.iter().find(|&&i| i >= self.n_components()) {
            return Err(Error::Domain(format!(
                "component {bad} out of range ({} components)",
                self.n_components()
            )));
        }
        let mut s = self.sources.clone();
        for &i in remove {
            s.row_mut(i).fill(0.0);
        }
        let mut x = &self.mixing * s;
        for (mut row, m) in x.row_iter_mut().zip(self.mean.iter()) {
            row.add_scalar_mut(*m);
        }
        Ok(x)
    }

    /// `mixing[:, remove] · sources[remove, :]`.
    pub fn artifact_projection(&self, remove: &[usize]) -> Result<DMatrix<f64>> {
        let (n_ch, n) = (self.mixing.nrows(), self.sources.ncols());
        let mut out = DMatrix::zeros(n_ch, n);
        for &k in remove {
            if k >= self.n_components() {
                return Err(Error::Domain(format!(
                    "component {k} out of range ({} components)",
                    self.n_components()
                )));
            }
            out += self.mixing.column(k) * self.sources.row(k);
        }
        Ok(out)
    }

    /// Share of back-projected variance carried by each component.
    pub fn variance_shares(&self) -> Vec<f64> {
        // Sources have unit variance, so the projected variance is |A[:, k]|^2.
        let v: Vec<f64> = self.mixing.column_iter().map(|c| c.norm_squared()).collect();
        let total: f64 = v.iter().sum();
        v.iter().map(|x| x / total).collect()
    }

    /// Components whose variance share exceeds `fraction`, largest first.
    pub fn components_above_variance(&self, fraction: f64) -> Vec<usize> {
        let shares = self.variance_shares();
        let mut idx: Vec<usize> = (0..shares.len()).filter(|&k| shares[k] > fraction).collect();
        idx.sort_by(|&a, &b| shares[b].total_cmp(&shares[a]));
        idx
    }
}

/// `(W W^T)^{-1/2} W`.
fn symmetric_decorrelation(w: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(w * w.transpose());
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.max(1e-300).sqrt()));
    &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose() * w
}

/// FastICA on `x` (`channels x samples`).
///
/// Fewer components than requested are returned, with a warning, when the
/// covariance is rank deficient. The starting rotation is drawn from `seed`.
pub fn fastica(x: &DMatrix<f64>, n_components: usize, seed: u64) -> Result<IcaDecomposition> {
    let (n_ch, n) = x.shape();
    if n_components == 0 || n_components > n_ch {
        return Err(Error::Domain(format!(
            "n_components must lie in 1..={n_ch}, got {n_components}"
        )));
    }
    if n < 2 * n_ch {
        return Err(Error::Domain(format!(
            "{n} samples are too few to unmix {n_ch} channels"
        )));
    }
    let mean = x.column_mean();
    let mut xc = x.clone();
    for (mut row, m) in xc.row_iter_mut().zip(mean.iter()) {
        row.add_scalar_mut(-*m);
    }
    let cov = &xc * xc.transpose() / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..n_ch).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]];
    if !(top > 0.0) {
        return Err(Error::Degenerate("recording has zero variance".into()));
    }
    let rank = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] > RANK_TOL * top)
        .count();
    let k = if n_components > rank {
        log::warn!("covariance rank {rank} < {n_components} requested components; reducing");
        rank
    } else {
        n_components
    };

    // Whitening K (k x n_ch) and its pseudo-inverse (n_ch x k).
    let mut whiten = DMatrix::zeros(k, n_ch);
    let mut dewhiten = DMatrix::zeros(n_ch, k);
    for (r, &i) in order.iter().take(k).enumerate() {
        let l = eig.eigenvalues[i];
        let e = eig.eigenvectors.column(i);
        whiten.row_mut(r).copy_from(&(e.transpose() / l.sqrt()));
        dewhiten.column_mut(r).copy_from(&(e * l.sqrt()));
    }
    let z = &whiten * &xc;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = DMatrix::from_fn(k, k, |_, _| StandardNormal.sample(&mut rng));
    let mut w = symmetric_decorrelation(&init);
    let inv_n = 1.0 / n as f64;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let wz = &w * &z;
        let g = wz.map(f64::tanh);
        let g_prime_mean: Vec<f64> = g
            .row_iter()
            .map(|row| row.iter().map(|t| 1.0 - t * t).sum::<f64>() * inv_n)
            .collect();
        let mut next = &g * z.transpose() * inv_n;
        for (r, gp) in g_prime_mean.iter().enumerate() {
            let wr = w.row(r) * *gp;
            let mut row = next.row_mut(r);
            row -= wr;
        }
        let next = symmetric_decorrelation(&next);
        let rotation = (0..k)
            .map(|r| (1.0 - next.row(r).dot(&w.row(r)).abs()).abs())
            .fold(0.0, f64::max);
        w = next;
        if rotation < TOLERANCE {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("FastICA stopped after {MAX_ITERATIONS} iterations without converging");
    }
    let unmixing = &w * &whiten;
    let mixing = &dewhiten * w.transpose();
    let sources = &w * z;
    Ok(IcaDecomposition {
        unmixing,
        mixing,
        sources,
        mean,
        rotation: w,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    fn planted(n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = DMatrix::from_fn(2, n, |_, _| rng.random_range(-1.0..1.0));
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.4, 1.0]);
        (s.clone(), a * s)
    }

    #[test]
    fn recovers_uniform_sources() {
        let (s, x) = planted(5000);
        let d = fastica(&x, 2, 1).unwrap();
        assert!(d.converged);
        for i in 0..2 {
            let truth: Vec<f64> = s.row(i).iter().copied().collect();
            let best = (0..2)
                .map(|j| corr(&truth, &d.sources.row(j).iter().copied().collect::<Vec<_>>()).abs())
                .fold(0.0, f64::max);
            assert!(best > 0.95, "source {i}: {best}");
        }
    }

    #[test]
    fn rotation_is_orthonormal_and_reconstruction_exact() {
        let (_, x) = planted(3000);
        let d = fastica(&x, 2, 7).unwrap();
        let wwt = &d.rotation * d.rotation.transpose();
        assert!((wwt - DMatrix::identity(2, 2)).amax() < 1e-6);
        let back = d.reconstruct_without(&[]).unwrap();
        assert!((&back - &x).norm() / x.norm() < 1e-6);
    }

    #[test]
    fn rank_deficient_input_reduces_components() {
        let (_, x2) = planted(2000);
        let mut x = DMatrix::zeros(3, 2000);
        x.rows_mut(0, 2).copy_from(&x2);
        let sum = x2.row(0) + x2.row(1);
        x.row_mut(2).copy_from(&sum);
        let d = fastica(&x, 3, 1).unwrap();
        assert_eq!(d.n_components(), 2);
    }

    #[test]
    fn out_of_range_component_is_an_error() {
        let (_, x) = planted(500);
        let d = fastica(&x, 2, 1).unwrap();
        assert!(d.reconstruct_without(&[2]).is_err());
    }
}
