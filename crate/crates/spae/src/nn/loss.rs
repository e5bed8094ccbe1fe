//! Reconstruction loss: the sum of per-channel mean absolute errors,
//! `loss = MAE_I + MAE_V`, with channel 0 = I and channel 1 = V.

use super::tensor::Tensor3;
use super::NnError;
use crate::parallel::pairwise_sum;

/// Absolute-difference sums per channel plus the (sub)gradient of the summed
/// MAE with respect to `xhat`, where the gradient is scaled by the caller's
/// denominator. The subgradient of |d| at d = 0 is taken as 0.
///
/// `denom` is the count the absolute sums will be divided by (batch x
/// length); sub-batch callers pass the full batch denominator so gradients
/// from chunks add up exactly.
pub fn mae_parts(
    x: &Tensor3,
    xhat: &Tensor3,
    denom: f64,
) -> Result<(f64, f64, Tensor3), NnError> {
    if x.shape() != xhat.shape() {
        return Err(NnError::ShapeMismatch(format!(
            "target {:?} vs reconstruction {:?}",
            x.shape(),
            xhat.shape()
        )));
    }
    let (n_batch, channels, len) = x.shape();
    if channels != 2 {
        return Err(NnError::ShapeMismatch(format!(
            "MAE_I + MAE_V needs 2 channels (I, V), got {channels}"
        )));
    }
    let scale = 1.0 / denom;
    let mut grad = Tensor3::zeros(n_batch, channels, len);
    let mut abs_sums = [0.0f64; 2];
    let mut row_sums: Vec<f64> = Vec::with_capacity(n_batch);
    for ch in 0..2 {
        row_sums.clear();
        for n in 0..n_batch {
            let xr = x.row(n, ch);
            let hr = xhat.row(n, ch);
            let gr = grad.row_mut(n, ch);
            let mut acc = 0.0;
            for i in 0..len {
                let d = hr[i] - xr[i];
                acc += d.abs();
                gr[i] = if d > 0.0 {
                    scale
                } else if d < 0.0 {
                    -scale
                } else {
                    0.0
                };
            }
            row_sums.push(acc);
        }
        abs_sums[ch] = pairwise_sum(&row_sums);
    }
    Ok((abs_sums[0], abs_sums[1], grad))
}

/// `loss = MAE_I + MAE_V` over the whole batch, with the gradient with
/// respect to the reconstruction.
pub fn mae_loss(x: &Tensor3, xhat: &Tensor3) -> Result<(f64, Tensor3), NnError> {
    let (n_batch, _, len) = x.shape();
    let denom = (n_batch * len) as f64;
    let (sum_i, sum_v, grad) = mae_parts(x, xhat, denom)?;
    Ok((sum_i / denom + sum_v / denom, grad))
}

/// Per-channel MAE values of a batch (no gradient).
pub fn mae_channels(x: &Tensor3, xhat: &Tensor3) -> Result<(f64, f64), NnError> {
    let (n_batch, _, len) = x.shape();
    let denom = (n_batch * len) as f64;
    let (sum_i, sum_v, _) = mae_parts(x, xhat, denom)?;
    Ok((sum_i / denom, sum_v / denom))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(n: usize, c: usize, l: usize, vals: &[f64]) -> Tensor3 {
        Tensor3::from_vec(n, c, l, vals.to_vec()).unwrap()
    }

    #[test]
    fn identical_tensors_zero_loss_zero_grad() {
        let x = t(1, 2, 3, &[1.0, 2.0, 3.0, -1.0, 0.0, 1.0]);
        let (loss, grad) = mae_loss(&x, &x).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn half_error_on_i_channel() {
        // batch 1, length 2: x_I=[1,0], xhat_I=[0,0], V equal -> MAE_I = 0.5.
        let x = t(1, 2, 2, &[1.0, 0.0, 0.3, 0.3]);
        let xhat = t(1, 2, 2, &[0.0, 0.0, 0.3, 0.3]);
        let (loss, grad) = mae_loss(&x, &xhat).unwrap();
        assert!((loss - 0.5).abs() < 1e-15);
        // d(xhat_I[0]) = sign(-1)/2 = -0.5
        assert_eq!(grad.get(0, 0, 0), -0.5);
        assert_eq!(grad.get(0, 1, 0), 0.0);
    }

    #[test]
    fn channels_are_separable() {
        let x = t(1, 2, 2, &[0.0, 0.0, 0.0, 0.0]);
        let xhat1 = t(1, 2, 2, &[0.1, 0.1, 0.2, 0.2]);
        let xhat2 = t(1, 2, 2, &[0.1, 0.1, 0.4, 0.4]);
        let (i1, v1) = mae_channels(&x, &xhat1).unwrap();
        let (i2, v2) = mae_channels(&x, &xhat2).unwrap();
        assert!((i1 - i2).abs() < 1e-15, "MAE_I must not move");
        assert!((v2 - 2.0 * v1).abs() < 1e-15, "MAE_V must double");
    }

    #[test]
    fn shape_mismatch_rejected() {
        let x = t(1, 2, 2, &[0.0; 4]);
        let y = t(1, 2, 3, &[0.0; 6]);
        assert!(mae_loss(&x, &y).is_err());
        let three = t(1, 3, 2, &[0.0; 6]);
        assert!(mae_loss(&three, &three).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = crate::rng::Pcg32::new(8, 8);
        let x = t(
            2,
            2,
            5,
            &(0..20).map(|_| rng.uniform(-1.0, 1.0)).collect::<Vec<_>>(),
        );
        let mut xhat_v: Vec<f64> = (0..20).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let xhat = t(2, 2, 5, &xhat_v);
        let (_, grad) = mae_loss(&x, &xhat).unwrap();
        let h = 1e-7;
        for i in 0..20 {
            let orig = xhat_v[i];
            xhat_v[i] = orig + h;
            let (lp, _) = mae_loss(&x, &t(2, 2, 5, &xhat_v)).unwrap();
            xhat_v[i] = orig - h;
            let (lm, _) = mae_loss(&x, &t(2, 2, 5, &xhat_v)).unwrap();
            xhat_v[i] = orig;
            let num = (lp - lm) / (2.0 * h);
            assert!(
                (num - grad.data()[i]).abs() < 1e-8,
                "grad[{i}]: analytic {} vs numeric {num}",
                grad.data()[i]
            );
        }
    }
}
