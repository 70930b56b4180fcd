use super::{shape_err, NeuralError};

/// Mean Huber loss and its gradient w.r.t. `pred`.
pub fn huber_loss(
    pred: &[f64],
    target: &[f64],
    kappa: f64,
) -> Result<(f64, Vec<f64>), NeuralError> {
    huber_loss_weighted(pred, target, None, kappa)
}

/// Huber loss with optional per-element weights (importance sampling),
/// reduced by the mean over elements.
pub fn huber_loss_weighted(
    pred: &[f64],
    target: &[f64],
    weights: Option<&[f64]>,
    kappa: f64,
) -> Result<(f64, Vec<f64>), NeuralError> {
    if pred.len() != target.len() {
        return Err(shape_err(format!("{} targets", pred.len()), target.len()));
    }
    if let Some(w) = weights {
        if w.len() != pred.len() {
            return Err(shape_err(format!("{} weights", pred.len()), w.len()));
        }
    }
    let n = pred.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (i, (&p, &t)) in pred.iter().zip(target).enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        let e = p - t;
        let l = if e.abs() <= kappa {
            0.5 * e * e
        } else {
            kappa * (e.abs() - 0.5 * kappa)
        };
        loss += w * l;
        grad.push(w * e.clamp(-kappa, kappa) / n);
    }
    Ok((loss / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn huber_examples() {
        assert_eq!(
            huber_loss(&[1.0, 2.0], &[1.0, 2.0], 1.0).unwrap(),
            (0.0, vec![0.0, 0.0])
        );
        assert_eq!(huber_loss(&[0.5], &[0.0], 1.0).unwrap().0, 0.125);
        assert_eq!(huber_loss(&[3.0], &[0.0], 1.0).unwrap(), (2.5, vec![1.0]));
        assert_eq!(huber_loss(&[-3.0], &[0.0], 1.0).unwrap().1, vec![-1.0]);
        assert!(huber_loss(&[1.0], &[1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn weights_scale_loss_and_gradient() {
        let (l, g) = huber_loss_weighted(&[0.5, 3.0], &[0.0, 0.0], Some(&[1.0, 0.5]), 1.0).unwrap();
        assert_eq!(l, (0.125 + 0.5 * 2.5) / 2.0);
        assert_eq!(g, vec![0.25, 0.25]);
    }
}
