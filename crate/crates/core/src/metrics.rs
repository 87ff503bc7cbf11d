//! Image-quality metrics on LDR images in `[0, 1]`.

use crate::error::{Error, Result};
pub use crate::loss::ssim;

/// Peak signal-to-noise ratio in dB with peak 1. Identical images give
/// `f64::INFINITY`.
pub fn psnr(pred: &[f64], gt: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::ShapeMismatch(format!("psnr: {} vs {} values", pred.len(), gt.len())));
    }
    let mse = pred.iter().zip(gt).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pred.len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_images_are_infinite() {
        let a = vec![0.25; 12];
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    }

    #[test]
    fn constant_offset() {
        // MSE 0.01 -> 20 dB
        let a = vec![0.5; 30];
        let b = vec![0.6; 30];
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(psnr(&[], &[]).is_err());
    }
}
