//! Image losses: mean absolute error and SSIM (11x11 Gaussian window,
//! sigma 1.5, zero-padded), combined as `(1-lambda)*L1 + lambda*(1-SSIM)`,
//! with analytic gradients with respect to the rendered image.

use crate::error::Error;
use crate::image_buf::RgbImageF;
use crate::Result;

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l1: f64,
    pub ssim: f64,
    pub total: f64,
}

fn gaussian_kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SIGMA * SIGMA)).exp();
        sum += *v;
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Separable same-size convolution with zero padding.
fn blur(width: usize, height: usize, src: &[f64], kernel: &[f64; WINDOW]) -> Vec<f64> {
    let half = WINDOW / 2;
    let mut tmp = vec![0.0f64; src.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                let sx = x as isize + i as isize - half as isize;
                if sx >= 0 && (sx as usize) < width {
                    acc += k * src[y * width + sx as usize];
                }
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0f64; src.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                let sy = y as isize + i as isize - half as isize;
                if sy >= 0 && (sy as usize) < height {
                    acc += k * tmp[sy as usize * width + x];
                }
            }
            out[y * width + x] = acc;
        }
    }
    out
}

fn channel_plane(img: &RgbImageF, channel: usize) -> Vec<f64> {
    img.data.iter().skip(channel).step_by(3).cloned().collect()
}

/// Mean SSIM over channels and pixels, plus its gradient with respect to
/// the first image.
pub fn ssim_with_grad(x: &RgbImageF, y: &RgbImageF) -> Result<(f64, RgbImageF)> {
    x.check_same_dims(y, "ssim inputs")?;
    let width = x.width as usize;
    let height = x.height as usize;
    let n = width * height;
    let kernel = gaussian_kernel();

    let mut ssim_sum = 0.0;
    let mut grad = RgbImageF::new(x.width, x.height);
    for ch in 0..3 {
        let xs = channel_plane(x, ch);
        let ys = channel_plane(y, ch);
        let mu_x = blur(width, height, &xs, &kernel);
        let mu_y = blur(width, height, &ys, &kernel);
        let xx: Vec<f64> = xs.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = ys.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = xs.iter().zip(ys.iter()).map(|(a, b)| a * b).collect();
        let e_xx = blur(width, height, &xx, &kernel);
        let e_yy = blur(width, height, &yy, &kernel);
        let e_xy = blur(width, height, &xy, &kernel);

        let mut g_mu = vec![0.0f64; n]; // dS/d mu_x
        let mut g_var = vec![0.0f64; n]; // dS/d var_x
        let mut g_cov = vec![0.0f64; n]; // dS/d cov_xy
        for p in 0..n {
            let (mx, my) = (mu_x[p], mu_y[p]);
            let vx = e_xx[p] - mx * mx;
            let vy = e_yy[p] - my * my;
            let cxy = e_xy[p] - mx * my;
            let a1 = 2.0 * mx * my + SSIM_C1;
            let a2 = 2.0 * cxy + SSIM_C2;
            let b1 = mx * mx + my * my + SSIM_C1;
            let b2 = vx + vy + SSIM_C2;
            let s = (a1 * a2) / (b1 * b2);
            ssim_sum += s;
            g_mu[p] = 2.0 * my * a2 / (b1 * b2) - 2.0 * mx * a1 * a2 / (b1 * b1 * b2);
            g_var[p] = -a1 * a2 / (b1 * b2 * b2);
            g_cov[p] = 2.0 * a1 / (b1 * b2);
        }

        // Backpropagate through the (symmetric) window filters:
        // d ssim / dx = G*g_mu + 2x (G*g_var) - 2 G*(g_var mu_x)
        //             + y (G*g_cov) - G*(g_cov mu_y), all divided by 3n.
        let b_mu = blur(width, height, &g_mu, &kernel);
        let b_var = blur(width, height, &g_var, &kernel);
        let gvmx: Vec<f64> = g_var.iter().zip(mu_x.iter()).map(|(a, b)| a * b).collect();
        let b_var_mu = blur(width, height, &gvmx, &kernel);
        let b_cov = blur(width, height, &g_cov, &kernel);
        let gcmy: Vec<f64> = g_cov.iter().zip(mu_y.iter()).map(|(a, b)| a * b).collect();
        let b_cov_mu = blur(width, height, &gcmy, &kernel);

        let scale = 1.0 / (3.0 * n as f64);
        for p in 0..n {
            let d = b_mu[p] + 2.0 * xs[p] * b_var[p] - 2.0 * b_var_mu[p] + ys[p] * b_cov[p]
                - b_cov_mu[p];
            grad.data[p * 3 + ch] = d * scale;
        }
    }
    Ok((ssim_sum / (3.0 * n as f64), grad))
}

/// Combined loss and its gradient with respect to `rendered`.
pub fn compute_loss(
    rendered: &RgbImageF,
    target: &RgbImageF,
    lambda: f64,
) -> Result<(LossBreakdown, RgbImageF)> {
    rendered.check_same_dims(target, "loss inputs")?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Domain(format!(
            "lambda must lie in [0,1], got {lambda}"
        )));
    }
    let count = rendered.data.len() as f64;
    let mut l1 = 0.0;
    let mut grad = RgbImageF::new(rendered.width, rendered.height);
    for (i, (r, t)) in rendered.data.iter().zip(target.data.iter()).enumerate() {
        let diff = r - t;
        l1 += diff.abs();
        grad.data[i] = (1.0 - lambda) * diff.signum() / count;
    }
    l1 /= count;

    let (ssim, ssim_grad) = ssim_with_grad(rendered, target)?;
    for (g, sg) in grad.data.iter_mut().zip(ssim_grad.data.iter()) {
        *g -= lambda * sg; // total includes (1 - ssim)
    }
    let total = (1.0 - lambda) * l1 + lambda * (1.0 - ssim);
    Ok((LossBreakdown { l1, ssim, total }, grad))
}

/// Peak signal-to-noise ratio on the `[0,1]` range; identical images give
/// positive infinity.
pub fn psnr(a: &RgbImageF, b: &RgbImageF) -> Result<f64> {
    a.check_same_dims(b, "psnr inputs")?;
    let mse: f64 = a
        .data
        .iter()
        .zip(b.data.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_image(w: u32, h: u32, rng: &mut StdRng) -> RgbImageF {
        RgbImageF::from_fn(w, h, |_, _| {
            [
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
            ]
        })
    }

    #[test]
    fn identical_images_have_zero_loss() {
        let mut rng = StdRng::seed_from_u64(3);
        let img = random_image(24, 24, &mut rng);
        let (loss, grad) = compute_loss(&img, &img, 0.2).unwrap();
        assert_eq!(loss.l1, 0.0);
        assert!((loss.ssim - 1.0).abs() < 1e-12);
        assert!(loss.total.abs() < 1e-12);
        assert!(grad.data.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn constant_images_l1_distance() {
        let zeros = RgbImageF::new(16, 16);
        let ones = zeros.map(|_| 1.0);
        let (loss, _) = compute_loss(&zeros, &ones, 0.0).unwrap();
        assert!((loss.l1 - 1.0).abs() < 1e-12);
        assert!((loss.total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn total_matches_weighting_invariant() {
        let mut rng = StdRng::seed_from_u64(5);
        let a = random_image(16, 16, &mut rng);
        let b = random_image(16, 16, &mut rng);
        for lambda in [0.0, 0.2, 0.7, 1.0] {
            let (loss, _) = compute_loss(&a, &b, lambda).unwrap();
            let expected = (1.0 - lambda) * loss.l1 + lambda * (1.0 - loss.ssim);
            assert!((loss.total - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn ssim_is_symmetric_and_bounded() {
        let mut rng = StdRng::seed_from_u64(6);
        let a = random_image(20, 12, &mut rng);
        let b = random_image(20, 12, &mut rng);
        let (s_ab, _) = ssim_with_grad(&a, &b).unwrap();
        let (s_ba, _) = ssim_with_grad(&b, &a).unwrap();
        assert!((s_ab - s_ba).abs() < 1e-12);
        assert!((-1.0..=1.0).contains(&s_ab));
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(11);
        let mut a = random_image(12, 10, &mut rng);
        let b = random_image(12, 10, &mut rng);
        let lambda = 0.4;
        let (_, grad) = compute_loss(&a, &b, lambda).unwrap();
        let h = 1e-5;
        for trial in 0..40 {
            let i = rng.random_range(0..a.data.len());
            let orig = a.data[i];
            // L1 is non-differentiable at zero difference; nudge away.
            if (orig - b.data[i]).abs() < 10.0 * h {
                continue;
            }
            a.data[i] = orig + h;
            let (lp, _) = compute_loss(&a, &b, lambda).unwrap();
            a.data[i] = orig - h;
            let (lm, _) = compute_loss(&a, &b, lambda).unwrap();
            a.data[i] = orig;
            let fd = (lp.total - lm.total) / (2.0 * h);
            let an = grad.data[i];
            let denom = fd.abs().max(an.abs()).max(1e-9);
            assert!(
                (fd - an).abs() / denom < 1e-3,
                "trial {trial} index {i}: fd {fd} vs analytic {an}"
            );
        }
    }

    #[test]
    fn psnr_formula_and_sentinel() {
        let zeros = RgbImageF::new(8, 8);
        let mut off = zeros.clone();
        for v in off.data.iter_mut() {
            *v = 0.1; // MSE = 0.01
        }
        let p = psnr(&zeros, &off).unwrap();
        assert!((p - 20.0).abs() < 1e-9);
        assert!(psnr(&zeros, &zeros).unwrap().is_infinite());
    }

    #[test]
    fn psnr_matches_reference_formula_on_random_pairs() {
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..20 {
            let a = random_image(9, 7, &mut rng);
            let b = random_image(9, 7, &mut rng);
            let p = psnr(&a, &b).unwrap();
            let mse: f64 = a
                .data
                .iter()
                .zip(b.data.iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                / a.data.len() as f64;
            let reference = -10.0 * mse.log10();
            assert!((p - reference).abs() < 1e-6);
        }
    }
}
