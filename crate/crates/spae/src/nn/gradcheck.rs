//! Finite-difference validation of the analytic gradients.
//!
//! The loss is the autoencoder objective itself, `MAE_I + MAE_V` between a
//! batch and its reconstruction. Every parameter is perturbed by ±h and the
//! central difference is compared against backpropagation. Per-parameter
//! evaluations are independent, so they run in parallel.

use super::loss::mae_loss;
use super::model::AutoencoderModel;
use super::tensor::Tensor3;
use super::NnError;
use crate::parallel::indexed_map;
use crate::rng::Pcg32;

/// Relative-error floor: differences below this absolute scale count as
/// agreement even when both gradients are nearly zero.
const DENOM_FLOOR: f64 = 1e-10;

/// Maximum relative error between analytic and central-difference gradients
/// over every parameter.
pub fn gradient_check(
    model: &AutoencoderModel,
    x: &Tensor3,
    h: f64,
) -> Result<f64, NnError> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(NnError::InvalidSpec(format!(
            "finite-difference step {h} must be positive"
        )));
    }
    let pass = model.forward(x)?;
    let (_, grad_out) = mae_loss(x, pass.output())?;
    let mut analytic = vec![0.0; model.n_params()];
    model.backward(&pass, &grad_out, &mut analytic)?;

    let results: Vec<Result<f64, NnError>> = indexed_map(model.n_params(), |i| {
        let mut params = model.params().to_vec();
        let orig = params[i];
        params[i] = orig + h;
        let plus = mae_loss(x, &model.reconstruct_with_params(&params, x)?)?.0;
        params[i] = orig - h;
        let minus = mae_loss(x, &model.reconstruct_with_params(&params, x)?)?.0;
        let numeric = (plus - minus) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(DENOM_FLOOR);
        Ok((analytic[i] - numeric).abs() / denom)
    });

    let mut max_rel = 0.0f64;
    for r in results {
        max_rel = max_rel.max(r?);
    }
    Ok(max_rel)
}

/// Seeded end-to-end check on a random batch: model weights from `seed`,
/// inputs from the derived stream `seed + 1`.
pub fn gradient_check_seeded(
    model: &AutoencoderModel,
    seed: u64,
    batch: usize,
    h: f64,
) -> Result<f64, NnError> {
    let (channels, length) = model.input_shape();
    let mut rng = Pcg32::new(seed ^ 0x6772616463686b, 1);
    let x = Tensor3::from_vec(
        batch,
        channels,
        length,
        (0..batch * channels * length)
            .map(|_| rng.uniform(-1.0, 1.0))
            .collect(),
    )?;
    gradient_check(model, &x, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::{Activation, LayerSpec};

    #[test]
    fn zero_step_rejected() {
        let m = AutoencoderModel::default_seeded(1);
        let x = Tensor3::zeros(1, 2, 112);
        assert!(matches!(
            gradient_check(&m, &x, 0.0),
            Err(NnError::InvalidSpec(_))
        ));
    }

    #[test]
    fn linear_model_matches_tightly() {
        // Identity activations and no pooling: the loss is piecewise linear
        // in every parameter, so central differences are exact to round-off.
        use LayerSpec::*;
        let layers = vec![
            Conv1d { in_ch: 2, out_ch: 1, kernel: 3 },
            Activation(Activation::Identity),
            Conv1d { in_ch: 1, out_ch: 2, kernel: 3 },
            Activation(Activation::Identity),
        ];
        let mut m = AutoencoderModel::new(layers, 2, 2, 16).unwrap();
        m.init_glorot(&mut Pcg32::new(5, AutoencoderModel::INIT_STREAM));
        let mut rng = Pcg32::new(6, 2);
        let x = Tensor3::from_vec(
            2,
            2,
            16,
            (0..64).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let err = gradient_check(&m, &x, 1e-6).unwrap();
        assert!(err < 1e-8, "linear model rel err {err}");
    }

    #[test]
    fn small_nonlinear_model_within_tolerance() {
        use LayerSpec::*;
        let layers = vec![
            Conv1d { in_ch: 2, out_ch: 4, kernel: 3 },
            Activation(Activation::ReLU),
            MaxPool1d { window: 2 },
            Conv1d { in_ch: 4, out_ch: 2, kernel: 3 },
            Activation(Activation::ReLU),
            Conv1d { in_ch: 2, out_ch: 4, kernel: 3 },
            Activation(Activation::ReLU),
            Upsample1d { factor: 2 },
            TransConv1d { in_ch: 4, out_ch: 2, kernel: 3 },
            Activation(Activation::Identity),
        ];
        let mut m = AutoencoderModel::new(layers, 5, 2, 16).unwrap();
        m.init_glorot(&mut Pcg32::new(8, AutoencoderModel::INIT_STREAM));
        let mut rng = Pcg32::new(9, 3);
        let x = Tensor3::from_vec(
            3,
            2,
            16,
            (0..96).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let err = gradient_check(&m, &x, 1e-6).unwrap();
        assert!(err < 1e-5, "rel err {err}");
    }
}
