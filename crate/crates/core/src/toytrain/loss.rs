use crate::error::{Error, Result};

fn check_shapes(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Dimension(format!(
            "prediction has {} values, target {}",
            pred.len(),
            target.len()
        )));
    }
    Ok(())
}

/// Mean of `sqrt((pred - target)^2 + eps^2)`.
pub fn charbonnier(pred: &[f64], target: &[f64], eps: f64) -> Result<f64> {
    check_shapes(pred, target)?;
    if !(eps > 0.0) {
        return Err(Error::Config(format!("charbonnier eps must be > 0, got {eps}")));
    }
    let eps2 = eps * eps;
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| ((p - t) * (p - t) + eps2).sqrt())
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Derivative of [`charbonnier`] with respect to each prediction.
pub fn charbonnier_grad(pred: &[f64], target: &[f64], eps: f64) -> Vec<f64> {
    let n = pred.len() as f64;
    let eps2 = eps * eps;
    pred.iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            d / (d * d + eps2).sqrt() / n
        })
        .collect()
}

/// Feature map used by the optional perceptual term.
pub trait FeatureHook {
    fn features(&self, image: &[f64]) -> Vec<f64>;
}

/// Pixels as features; turns the perceptual term into a plain MSE.
pub struct IdentityHook;

impl FeatureHook for IdentityHook {
    fn features(&self, image: &[f64]) -> Vec<f64> {
        image.to_vec()
    }
}

/// `charbonnier + lambda * mean((phi(pred) - phi(target))^2)`; without a hook the
/// perceptual term is zero.
pub fn total_loss(pred: &[f64], target: &[f64], eps: f64, lambda: f64, hook: Option<&dyn FeatureHook>) -> Result<f64> {
    let base = charbonnier(pred, target, eps)?;
    let Some(hook) = hook else {
        return Ok(base);
    };
    let (fp, ft) = (hook.features(pred), hook.features(target));
    if fp.len() != ft.len() || fp.is_empty() {
        return Err(Error::Dimension(format!(
            "feature hook returned {} and {} values",
            fp.len(),
            ft.len()
        )));
    }
    let mse = fp.iter().zip(&ft).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / fp.len() as f64;
    Ok(base + lambda * mse)
}
