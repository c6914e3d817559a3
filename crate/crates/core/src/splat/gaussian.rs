//! Gaussian primitives with frozen geometry and trainable color/opacity.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use crate::error::Error;
use crate::Result;

use super::sigmoid;

/// One anisotropic Gaussian primitive. Geometry (position, scale, rotation)
/// is frozen during fine-tuning; only `color_logit` and `opacity_logit`
/// receive gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianRecord {
    pub position: Vector3<f64>,
    /// Log-scale parametrization; the covariance uses `exp(log_scale)` axes.
    pub log_scale: Vector3<f64>,
    /// Unit quaternion, stored (w, x, y, z).
    pub rotation: UnitQuaternion<f64>,
    pub color_logit: Vector3<f64>,
    pub opacity_logit: f64,
}

impl GaussianRecord {
    pub fn activated_color(&self) -> Vector3<f64> {
        self.color_logit.map(sigmoid)
    }

    pub fn activated_opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    /// World-space covariance `R S S^T R^T` with `S = diag(exp(log_scale))`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation.to_rotation_matrix().into_inner();
        let s = Matrix3::from_diagonal(&self.log_scale.map(f64::exp));
        let rs = r * s;
        rs * rs.transpose()
    }
}

/// Per-field-group trainability. Geometry is always frozen; the mask exists
/// so a fine-tune run can additionally freeze color or opacity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainableMask {
    pub color: bool,
    pub opacity: bool,
}

impl Default for TrainableMask {
    fn default() -> Self {
        TrainableMask {
            color: true,
            opacity: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScene {
    pub records: Vec<GaussianRecord>,
    pub trainable: TrainableMask,
}

impl GaussianScene {
    pub fn new(records: Vec<GaussianRecord>) -> Self {
        GaussianScene {
            records,
            trainable: TrainableMask::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Unnormalized Gaussian density `exp(-1/2 (x-mu)^T Sigma^-1 (x-mu))`,
/// always in `(0, 1]`.
pub fn evaluate_gaussian(record: &GaussianRecord, point: &Vector3<f64>) -> Result<f64> {
    let axes = record.log_scale.map(f64::exp);
    if !axes.iter().all(|a| a.is_finite() && *a > 0.0) {
        return Err(Error::Numeric(format!(
            "covariance is not positive definite: scale axes {:?}",
            axes.as_slice()
        )));
    }
    let r = record.rotation.to_rotation_matrix().into_inner();
    // Sigma^-1 = R S^-2 R^T.
    let inv_s2 = Matrix3::from_diagonal(&axes.map(|a| 1.0 / (a * a)));
    let inv_sigma = r * inv_s2 * r.transpose();
    let d = point - record.position;
    let q = (d.transpose() * inv_sigma * d)[0];
    if !q.is_finite() {
        return Err(Error::Numeric(format!(
            "quadratic form is non-finite ({q})"
        )));
    }
    Ok((-0.5 * q).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    pub fn random_record(rng: &mut StdRng) -> GaussianRecord {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        GaussianRecord {
            position: Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            ),
            log_scale: Vector3::new(
                rng.random_range(-1.5..0.5),
                rng.random_range(-1.5..0.5),
                rng.random_range(-1.5..0.5),
            ),
            rotation: UnitQuaternion::from_scaled_axis(axis),
            color_logit: Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            ),
            opacity_logit: rng.random_range(-2.0..2.0),
        }
    }

    #[test]
    fn density_peaks_at_mean() {
        let mut rng = StdRng::seed_from_u64(2);
        let g = random_record(&mut rng);
        let v = evaluate_gaussian(&g, &g.position).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn isotropic_unit_covariance_matches_formula() {
        let g = GaussianRecord {
            position: Vector3::zeros(),
            log_scale: Vector3::zeros(),
            rotation: UnitQuaternion::identity(),
            color_logit: Vector3::zeros(),
            opacity_logit: 0.0,
        };
        // ||x - mu||^2 = 2  ->  exp(-1)
        let v = evaluate_gaussian(&g, &Vector3::new(1.0, 1.0, 0.0)).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn matches_dense_inverse_evaluation() {
        let mut rng = StdRng::seed_from_u64(9);
        for _ in 0..100 {
            let g = random_record(&mut rng);
            let p = Vector3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            );
            let fast = evaluate_gaussian(&g, &p).unwrap();
            let sigma = g.covariance();
            let inv = sigma.try_inverse().expect("covariance invertible");
            let d = p - g.position;
            let reference = (-0.5 * (d.transpose() * inv * d)[0]).exp();
            assert!(
                (fast - reference).abs() < 1e-9,
                "fast {fast} vs dense {reference}"
            );
        }
    }

    #[test]
    fn degenerate_scale_is_numeric_error() {
        let mut g = GaussianRecord {
            position: Vector3::zeros(),
            log_scale: Vector3::new(f64::NAN, 0.0, 0.0),
            rotation: UnitQuaternion::identity(),
            color_logit: Vector3::zeros(),
            opacity_logit: 0.0,
        };
        assert!(matches!(
            evaluate_gaussian(&g, &Vector3::zeros()),
            Err(Error::Numeric(_))
        ));
        g.log_scale = Vector3::new(-1e6, 0.0, 0.0); // exp underflows to zero
        assert!(matches!(
            evaluate_gaussian(&g, &Vector3::zeros()),
            Err(Error::Numeric(_))
        ));
    }
}
