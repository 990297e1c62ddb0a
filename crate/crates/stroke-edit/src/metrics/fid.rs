//! Frechet distance between Gaussian fits of two feature sets.

use nalgebra::{DMatrix, DVector};

/// Accumulated first/second moments of one feature set.
#[derive(Clone, Debug)]
pub struct FidStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub count: usize,
}

const EPS_REG: f64 = 1e-6;

impl FidStats {
    /// Unbiased covariance (N - 1 denominator), matching the usual FID
    /// tooling. Warns and regularizes when the set is too small for a
    /// stable covariance (fewer than dim + 1 samples).
    pub fn from_features(features: &[Vec<f64>]) -> Self {
        assert!(!features.is_empty(), "FID needs at least one feature vector");
        let dim = features[0].len();
        let n = features.len();
        let mut mean = DVector::<f64>::zeros(dim);
        for f in features {
            assert_eq!(f.len(), dim, "inconsistent feature dimensions");
            for (i, v) in f.iter().enumerate() {
                mean[i] += v;
            }
        }
        mean /= n as f64;
        let mut cov = DMatrix::<f64>::zeros(dim, dim);
        for f in features {
            let d = DVector::from_iterator(dim, f.iter().cloned()) - &mean;
            cov.syger(1.0, &d, &d, 1.0); // rank-1 update of lower triangle
        }
        // mirror the lower triangle
        for i in 0..dim {
            for j in 0..i {
                cov[(j, i)] = cov[(i, j)];
            }
        }
        if n > 1 {
            cov /= (n - 1) as f64;
        }
        if n < dim + 1 {
            eprintln!(
                "warning: FID covariance from {n} samples of dimension {dim} is rank-deficient; regularizing"
            );
        }
        FidStats { mean, cov, count: n }
    }
}

/// Symmetric PSD square root via eigendecomposition, clamping tiny negative
/// eigenvalues produced by round-off.
fn sqrtm_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = nalgebra::SymmetricEigen::new(m.clone());
    let vals = sym.eigenvalues.map(|v| v.max(0.0).sqrt());
    &sym.eigenvectors * DMatrix::from_diagonal(&vals) * sym.eigenvectors.transpose()
}

/// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2}), with eps * I added to
/// both covariances. The trace term uses Tr sqrt(B Sb B) with B = sqrt(Sa),
/// which equals Tr sqrt(Sa Sb) for PSD inputs and stays in real symmetric
/// arithmetic throughout.
pub fn fid_from_stats(a: &FidStats, b: &FidStats) -> f64 {
    let dim = a.mean.len();
    assert_eq!(dim, b.mean.len(), "feature dimension mismatch");
    let reg = DMatrix::<f64>::identity(dim, dim) * EPS_REG;
    let sa = &a.cov + &reg;
    let sb = &b.cov + &reg;
    let diff = &a.mean - &b.mean;
    let root_a = sqrtm_psd(&sa);
    let inner = &root_a * &sb * &root_a;
    let sym = nalgebra::SymmetricEigen::new(inner);
    let tr_sqrt: f64 = sym.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    diff.norm_squared() + sa.trace() + sb.trace() - 2.0 * tr_sqrt
}

/// Frechet distance between two raw feature sets.
pub fn fid(features_a: &[Vec<f64>], features_b: &[Vec<f64>]) -> f64 {
    fid_from_stats(
        &FidStats::from_features(features_a),
        &FidStats::from_features(features_b),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::reference;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn gaussian_set(
        n: usize,
        mean: &[f64],
        scale: &[f64],
        rng: &mut ChaCha12Rng,
    ) -> Vec<Vec<f64>> {
        use rand_distr::{Distribution, Normal};
        let norm = Normal::new(0.0, 1.0).unwrap();
        (0..n)
            .map(|_| {
                mean.iter()
                    .zip(scale)
                    .map(|(&m, &s)| m + s * norm.sample(rng))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn identical_sets_give_zero() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let set = gaussian_set(64, &[0.0; 8], &[1.0; 8], &mut rng);
        let d = fid(&set, &set);
        assert!(d.abs() < 1e-6, "fid(A, A) = {d}");
    }

    #[test]
    fn equal_covariance_reduces_to_mean_distance() {
        // identical samples shifted by m: covariances equal, fid = ||m||^2
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let base = gaussian_set(200, &[0.0; 6], &[1.0; 6], &mut rng);
        let shift = [0.5, -0.25, 0.1, 0.0, 0.75, -0.3];
        let shifted: Vec<Vec<f64>> = base
            .iter()
            .map(|f| f.iter().zip(&shift).map(|(v, s)| v + s).collect())
            .collect();
        let expect: f64 = shift.iter().map(|s| s * s).sum();
        let d = fid(&base, &shifted);
        assert!((d - expect).abs() < 1e-4, "{d} vs {expect}");
    }

    #[test]
    fn agrees_with_denman_beavers_reference() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let a = gaussian_set(120, &[0.0; 8], &[1.0, 0.5, 2.0, 1.5, 0.7, 1.2, 0.9, 1.1], &mut rng);
        let b = gaussian_set(
            150,
            &[0.3, -0.2, 0.5, 0.0, 0.1, -0.4, 0.25, 0.6],
            &[1.1; 8],
            &mut rng,
        );
        let fast = fid(&a, &b);
        let slow = reference::fid_denman_beavers(&a, &b);
        assert!((fast - slow).abs() < 1e-6, "{fast} vs {slow}");
        // symmetry
        let rev = fid(&b, &a);
        assert!((fast - rev).abs() < 1e-6, "fid symmetry: {fast} vs {rev}");
    }

    #[test]
    fn small_sets_warn_but_produce_finite_values() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let a = gaussian_set(4, &[0.0; 8], &[1.0; 8], &mut rng);
        let b = gaussian_set(5, &[1.0; 8], &[1.0; 8], &mut rng);
        let d = fid(&a, &b);
        assert!(d.is_finite());
    }
}
