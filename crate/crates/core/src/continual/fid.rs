//! Fréchet distance between Gaussian fits of two feature sets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Sample mean and unbiased covariance of `rows`, each of length `d`.
fn moments(rows: &[Vec<f64>], d: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n = rows.len() as f64;
    let mut mean = DVector::zeros(d);
    for r in rows {
        mean += DVector::from_column_slice(r);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for r in rows {
        let c = DVector::from_column_slice(r) - &mean;
        cov += &c * c.transpose();
    }
    cov /= n - 1.0;
    (mean, cov)
}

/// Square root of a symmetric positive semi-definite matrix. Round-off can
/// leave tiny negative eigenvalues; they are clamped to zero.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Trace of the square root of a symmetric PSD matrix.
fn trace_sqrt(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum()
}

fn check(rows: &[Vec<f64>], side: &str) -> Result<usize> {
    let d = rows.first().map(Vec::len).unwrap_or(0);
    if d == 0 {
        return Err(Error::invalid(format!("{side} feature set is empty")));
    }
    if let Some(r) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::dim("frechet_distance", format!("{side} rows of length {d} and {}", r.len())));
    }
    if rows.len() < d + 1 {
        return Err(Error::invalid(format!(
            "{side} has {} samples; a {d}-dimensional covariance needs at least {}",
            rows.len(),
            d + 1
        )));
    }
    Ok(d)
}

/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))`.
///
/// The cross term uses `tr((S_a S_b)^(1/2)) = tr((S_a^(1/2) S_b S_a^(1/2))^(1/2))`,
/// which only needs symmetric eigendecompositions.
pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let d = check(a, "first")?;
    if check(b, "second")? != d {
        return Err(Error::dim("frechet_distance", "feature sets differ in dimension"));
    }
    let (mu_a, s_a) = moments(a, d);
    let (mu_b, s_b) = moments(b, d);
    let root_a = psd_sqrt(&s_a);
    let cross = trace_sqrt(&(&root_a * &s_b * &root_a));
    let dist = (mu_a - mu_b).norm_squared() + s_a.trace() + s_b.trace() - 2.0 * cross;
    Ok(dist.max(0.0))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Box-Muller standard normal.
    fn normal(rng: &mut impl Rng) -> f64 {
        let u: f64 = rng.gen_range(f64::EPSILON..1.0);
        let v: f64 = rng.gen();
        (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
    }

    fn cloud(n: usize, d: usize, seed: u64, mean: f64, sd: f64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..d).map(|_| mean + sd * normal(&mut rng)).collect()).collect()
    }

    #[test]
    fn self_distance_is_zero() {
        let a = cloud(50, 6, 1, 0.3, 2.0);
        assert!(frechet_distance(&a, &a).unwrap() < 1e-8);
    }

    #[test]
    fn one_dimensional_closed_form() {
        let a = cloud(20_000, 1, 2, 1.0, 0.5);
        let b = cloud(20_000, 1, 3, -0.5, 2.0);
        let expected = 1.5f64.powi(2) + 1.5f64.powi(2);
        let got = frechet_distance(&a, &b).unwrap();
        assert!((got - expected).abs() < 0.1, "{got} vs {expected}");
    }

    #[test]
    fn one_dimensional_matches_sample_moments_exactly() {
        let a = cloud(40, 1, 4, 0.0, 1.0);
        let b = cloud(30, 1, 5, 2.0, 3.0);
        let m = |x: &[Vec<f64>]| {
            let n = x.len() as f64;
            let mu = x.iter().map(|r| r[0]).sum::<f64>() / n;
            let var = x.iter().map(|r| (r[0] - mu).powi(2)).sum::<f64>() / (n - 1.0);
            (mu, var.sqrt())
        };
        let ((m1, s1), (m2, s2)) = (m(&a), m(&b));
        let expected = (m1 - m2).powi(2) + (s1 - s2).powi(2);
        assert!((frechet_distance(&a, &b).unwrap() - expected).abs() < 1e-10);
    }

    #[test]
    fn symmetric() {
        let a = cloud(30, 5, 6, 0.0, 1.0);
        let mut b = cloud(40, 5, 7, 0.5, 1.5);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for r in &mut b {
            r[1] += 0.7 * r[0] + rng.gen::<f64>();
        }
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-10, "{ab} vs {ba}");
    }

    #[test]
    fn diagonal_covariances_split_per_coordinate() {
        let d = 3;
        let (ma, sa) = moments(&cloud(60, d, 9, 0.0, 1.0), d);
        let (mb, sb) = moments(&cloud(60, d, 10, 1.0, 2.0), d);
        let (da, db) = (DMatrix::from_diagonal(&sa.diagonal()), DMatrix::from_diagonal(&sb.diagonal()));
        let per_coordinate: f64 = (0..d)
            .map(|i| (ma[i] - mb[i]).powi(2) + (da[(i, i)].sqrt() - db[(i, i)].sqrt()).powi(2))
            .sum();
        let root = psd_sqrt(&da);
        let general = (&ma - &mb).norm_squared() + da.trace() + db.trace() - 2.0 * trace_sqrt(&(&root * &db * &root));
        assert!((general - per_coordinate).abs() < 1e-10);
    }

    #[test]
    fn too_few_samples_is_an_error() {
        let a = cloud(4, 4, 11, 0.0, 1.0);
        let b = cloud(10, 4, 12, 0.0, 1.0);
        assert!(matches!(frechet_distance(&a, &b), Err(Error::InvalidArgument(_))));
        assert!(frechet_distance(&cloud(5, 4, 13, 0.0, 1.0), &b).is_ok());
        assert!(frechet_distance(&b, &cloud(10, 3, 14, 0.0, 1.0)).is_err());
        assert!(frechet_distance(&[], &b).is_err());
    }

    #[test]
    fn degenerate_covariance_is_handled() {
        // all rows on a line: rank-one covariance, negative round-off clamped
        let a: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64, 0.0]).collect();
        let d = frechet_distance(&a, &a).unwrap();
        assert!(d.is_finite() && d < 1e-8, "{d}");
    }
}
