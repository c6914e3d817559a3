//! Gaussian-splat scene representation and the differentiable tile rasterizer.

mod backward;
mod gaussian;
mod project;
mod render;

pub use backward::{render_backward, SceneGradients};
pub use gaussian::{evaluate_gaussian, GaussianRecord, GaussianScene, TrainableMask};
pub use project::{project_gaussian, ProjectedGaussian};
pub use render::{render, RenderOptions, RenderOutput};

/// Logistic activation mapping a logit onto `(0, 1)`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`] for `p` strictly inside `(0, 1)`.
#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_midpoint_and_symmetry() {
        assert_eq!(sigmoid(0.0), 0.5);
        for &x in &[-20.0, -3.0, -0.5, 0.7, 4.0, 30.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-12);
            assert!(sigmoid(x) > 0.0 && sigmoid(x) < 1.0);
        }
    }

    #[test]
    fn logit_inverts_sigmoid() {
        for &p in &[0.01, 0.25, 0.5, 0.9, 0.999] {
            assert!((sigmoid(logit(p)) - p).abs() < 1e-12);
        }
    }
}
