//! The autoencoder: an ordered layer stack with a flat parameter store, an
//! encoder/decoder boundary, Glorot initialization and a parsable
//! architecture description.

use serde::Deserialize;

use super::ops;
use super::tensor::Tensor3;
use super::NnError;
use crate::rng::Pcg32;

/// Pointwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    ReLU,
    Identity,
}

/// One layer of the stack. Convolutions use stride 1 and symmetric zero
/// padding ("same"), so only pooling and upsampling change the length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv1d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
    },
    TransConv1d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
    },
    MaxPool1d {
        window: usize,
    },
    Upsample1d {
        factor: usize,
    },
    Activation(Activation),
}

impl LayerSpec {
    fn validate(&self) -> Result<(), NnError> {
        match *self {
            LayerSpec::Conv1d { kernel, .. } | LayerSpec::TransConv1d { kernel, .. } => {
                if kernel % 2 == 0 {
                    return Err(NnError::InvalidSpec(format!(
                        "kernel width {kernel} must be odd"
                    )));
                }
            }
            LayerSpec::MaxPool1d { window } => {
                if window < 2 {
                    return Err(NnError::InvalidSpec(format!(
                        "pool window {window} must be at least 2"
                    )));
                }
            }
            LayerSpec::Upsample1d { factor } => {
                if factor < 2 {
                    return Err(NnError::InvalidSpec(format!(
                        "upsample factor {factor} must be at least 2"
                    )));
                }
            }
            LayerSpec::Activation(_) => {}
        }
        Ok(())
    }

    /// Parameter counts (weights, biases) of this layer.
    fn param_counts(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Conv1d {
                in_ch,
                out_ch,
                kernel,
            }
            | LayerSpec::TransConv1d {
                in_ch,
                out_ch,
                kernel,
            } => (in_ch * out_ch * kernel, out_ch),
            _ => (0, 0),
        }
    }
}

/// Where a layer's weights and biases live in the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamSlot {
    pub w_offset: usize,
    pub w_len: usize,
    pub b_offset: usize,
    pub b_len: usize,
}

/// Activations and pool indices captured by [`AutoencoderModel::forward`]
/// for the backward pass. `activations[i]` is the input of layer `i`;
/// the final entry is the reconstruction.
pub struct ForwardPass {
    pub activations: Vec<Tensor3>,
    pub pool_indices: Vec<Option<Vec<u32>>>,
}

impl ForwardPass {
    pub fn output(&self) -> &Tensor3 {
        self.activations.last().expect("non-empty stack")
    }
}

/// Layer stack plus flat parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderModel {
    layers: Vec<LayerSpec>,
    slots: Vec<ParamSlot>,
    params: Vec<f64>,
    latent_boundary: usize,
    input_channels: usize,
    input_length: usize,
}

impl AutoencoderModel {
    /// Build a model with zeroed parameters after validating that the stack
    /// maps the input shape back onto itself and compresses in between.
    pub fn new(
        layers: Vec<LayerSpec>,
        latent_boundary: usize,
        input_channels: usize,
        input_length: usize,
    ) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::InvalidSpec("empty layer stack".into()));
        }
        if latent_boundary == 0 || latent_boundary >= layers.len() {
            return Err(NnError::InvalidSpec(format!(
                "latent boundary {latent_boundary} outside 1..{}",
                layers.len()
            )));
        }
        for l in &layers {
            l.validate()?;
        }
        let shapes = infer_shapes(&layers, input_channels, input_length)?;
        let (out_ch, out_len) = *shapes.last().expect("non-empty");
        if (out_ch, out_len) != (input_channels, input_length) {
            return Err(NnError::InvalidSpec(format!(
                "stack maps ({input_channels}, {input_length}) to ({out_ch}, {out_len}); an autoencoder must reproduce its input shape"
            )));
        }
        let (lat_ch, lat_len) = shapes[latent_boundary - 1];
        if lat_ch * lat_len >= input_channels * input_length {
            return Err(NnError::InvalidSpec(format!(
                "bottleneck {lat_ch}x{lat_len} does not compress {input_channels}x{input_length}"
            )));
        }

        let mut slots = Vec::with_capacity(layers.len());
        let mut offset = 0;
        for l in &layers {
            let (w_len, b_len) = l.param_counts();
            slots.push(ParamSlot {
                w_offset: offset,
                w_len,
                b_offset: offset + w_len,
                b_len,
            });
            offset += w_len + b_len;
        }
        Ok(AutoencoderModel {
            layers,
            slots,
            params: vec![0.0; offset],
            latent_boundary,
            input_channels,
            input_length,
        })
    }

    /// The default stack: three conv/pool encoder stages down to a 4x28
    /// bottleneck, mirrored by conv/upsample/transposed-conv decoder stages,
    /// with a linear output layer so signed V values are representable.
    pub fn default_architecture() -> (Vec<LayerSpec>, usize) {
        use LayerSpec::*;
        let relu = Activation(self::Activation::ReLU);
        let layers = vec![
            Conv1d { in_ch: 2, out_ch: 16, kernel: 5 },
            relu,
            MaxPool1d { window: 2 },
            Conv1d { in_ch: 16, out_ch: 32, kernel: 5 },
            relu,
            MaxPool1d { window: 2 },
            Conv1d { in_ch: 32, out_ch: 4, kernel: 3 },
            relu,
            // -- latent boundary: (4, 28) --
            Conv1d { in_ch: 4, out_ch: 32, kernel: 3 },
            relu,
            Upsample1d { factor: 2 },
            TransConv1d { in_ch: 32, out_ch: 16, kernel: 5 },
            relu,
            Upsample1d { factor: 2 },
            TransConv1d { in_ch: 16, out_ch: 2, kernel: 5 },
            Activation(self::Activation::Identity),
        ];
        (layers, 8)
    }

    /// Default model with Glorot-uniform weights drawn from `seed`.
    pub fn default_seeded(seed: u64) -> Self {
        let (layers, boundary) = Self::default_architecture();
        let mut m = Self::new(layers, boundary, 2, 112).expect("default architecture is valid");
        m.init_glorot(&mut Pcg32::new(seed, Self::INIT_STREAM));
        m
    }

    /// PRNG stream selector reserved for weight initialization.
    pub const INIT_STREAM: u64 = 0x1217;

    /// Glorot-uniform initialization: weights uniform in ±sqrt(6/(fan_in +
    /// fan_out)) with fan counts including the kernel width, biases zero.
    pub fn init_glorot(&mut self, rng: &mut Pcg32) {
        for (idx, layer) in self.layers.iter().enumerate() {
            let slot = self.slots[idx];
            if slot.w_len == 0 {
                continue;
            }
            let (in_ch, out_ch, kernel) = match *layer {
                LayerSpec::Conv1d {
                    in_ch,
                    out_ch,
                    kernel,
                }
                | LayerSpec::TransConv1d {
                    in_ch,
                    out_ch,
                    kernel,
                } => (in_ch, out_ch, kernel),
                _ => unreachable!("only conv-type layers have parameters"),
            };
            let limit = (6.0 / ((in_ch * kernel + out_ch * kernel) as f64)).sqrt();
            for i in 0..slot.w_len {
                self.params[slot.w_offset + i] = rng.uniform(-limit, limit);
            }
            for i in 0..slot.b_len {
                self.params[slot.b_offset + i] = 0.0;
            }
        }
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn latent_boundary(&self) -> usize {
        self.latent_boundary
    }

    pub fn input_shape(&self) -> (usize, usize) {
        (self.input_channels, self.input_length)
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<(), NnError> {
        if params.len() != self.params.len() {
            return Err(NnError::ShapeMismatch(format!(
                "{} parameters, model has {}",
                params.len(),
                self.params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn slots(&self) -> &[ParamSlot] {
        &self.slots
    }

    /// Bottleneck element count per sample.
    pub fn latent_size(&self) -> usize {
        let shapes = infer_shapes(&self.layers, self.input_channels, self.input_length)
            .expect("validated at construction");
        let (c, l) = shapes[self.latent_boundary - 1];
        c * l
    }

    fn check_input(&self, x: &Tensor3) -> Result<(), NnError> {
        let (_, c, l) = x.shape();
        if (c, l) != (self.input_channels, self.input_length) {
            return Err(NnError::ShapeMismatch(format!(
                "input shape ({c}, {l}), model expects ({}, {})",
                self.input_channels, self.input_length
            )));
        }
        Ok(())
    }

    fn apply_layer(
        &self,
        params: &[f64],
        idx: usize,
        x: &Tensor3,
    ) -> Result<(Tensor3, Option<Vec<u32>>), NnError> {
        let slot = self.slots[idx];
        let w = &params[slot.w_offset..slot.w_offset + slot.w_len];
        let b = &params[slot.b_offset..slot.b_offset + slot.b_len];
        match self.layers[idx] {
            LayerSpec::Conv1d {
                in_ch,
                out_ch,
                kernel,
            } => Ok((ops::conv1d_forward(x, w, b, in_ch, out_ch, kernel)?, None)),
            LayerSpec::TransConv1d {
                in_ch,
                out_ch,
                kernel,
            } => Ok((
                ops::transconv1d_forward(x, w, b, in_ch, out_ch, kernel)?,
                None,
            )),
            LayerSpec::MaxPool1d { window } => {
                let (out, idxs) = ops::maxpool_forward(x, window)?;
                Ok((out, Some(idxs)))
            }
            LayerSpec::Upsample1d { factor } => Ok((ops::upsample_forward(x, factor)?, None)),
            LayerSpec::Activation(Activation::ReLU) => Ok((ops::relu_forward(x), None)),
            LayerSpec::Activation(Activation::Identity) => Ok((x.clone(), None)),
        }
    }

    /// Full forward pass with cached activations; checks finiteness after
    /// every layer.
    pub fn forward(&self, x: &Tensor3) -> Result<ForwardPass, NnError> {
        self.check_input(x)?;
        x.check_finite("input")?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pool_indices = Vec::with_capacity(self.layers.len());
        activations.push(x.clone());
        for idx in 0..self.layers.len() {
            let (out, idxs) =
                self.apply_layer(&self.params, idx, activations.last().unwrap())?;
            out.check_finite(&format!("layer {idx} ({:?})", self.layers[idx]))?;
            pool_indices.push(idxs);
            activations.push(out);
        }
        Ok(ForwardPass {
            activations,
            pool_indices,
        })
    }

    /// The latent tensor of a cached pass.
    pub fn latent<'a>(&self, pass: &'a ForwardPass) -> &'a Tensor3 {
        &pass.activations[self.latent_boundary]
    }

    /// Reconstruction without caching, optionally under substitute
    /// parameters (used by the gradient checker).
    pub fn reconstruct_with_params(
        &self,
        params: &[f64],
        x: &Tensor3,
    ) -> Result<Tensor3, NnError> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for idx in 0..self.layers.len() {
            cur = self.apply_layer(params, idx, &cur)?.0;
        }
        cur.check_finite("reconstruction")?;
        Ok(cur)
    }

    /// Reconstruction under the model's own parameters.
    pub fn reconstruct(&self, x: &Tensor3) -> Result<Tensor3, NnError> {
        self.reconstruct_with_params(&self.params, x)
    }

    /// Backpropagate `grad_out` (gradient of a scalar loss with respect to
    /// the reconstruction) through the cached pass. Parameter gradients are
    /// accumulated into `grad_params`; the returned tensor is the gradient
    /// with respect to the input.
    pub fn backward(
        &self,
        pass: &ForwardPass,
        grad_out: &Tensor3,
        grad_params: &mut [f64],
    ) -> Result<Tensor3, NnError> {
        if grad_params.len() != self.params.len() {
            return Err(NnError::ShapeMismatch(format!(
                "{} gradient slots, model has {} parameters",
                grad_params.len(),
                self.params.len()
            )));
        }
        if grad_out.shape() != pass.output().shape() {
            return Err(NnError::ShapeMismatch(format!(
                "grad_out shape {:?} vs output {:?}",
                grad_out.shape(),
                pass.output().shape()
            )));
        }
        let mut grad = grad_out.clone();
        for idx in (0..self.layers.len()).rev() {
            let slot = self.slots[idx];
            let x_in = &pass.activations[idx];
            let w = &self.params[slot.w_offset..slot.w_offset + slot.w_len];
            grad = match self.layers[idx] {
                LayerSpec::Conv1d {
                    in_ch,
                    out_ch,
                    kernel,
                } => {
                    let (gw, gb) = grad_params
                        [slot.w_offset..slot.b_offset + slot.b_len]
                        .split_at_mut(slot.w_len);
                    ops::conv1d_backward(x_in, w, &grad, in_ch, out_ch, kernel, gw, gb)?
                }
                LayerSpec::TransConv1d {
                    in_ch,
                    out_ch,
                    kernel,
                } => {
                    let (gw, gb) = grad_params
                        [slot.w_offset..slot.b_offset + slot.b_len]
                        .split_at_mut(slot.w_len);
                    ops::transconv1d_backward(x_in, w, &grad, in_ch, out_ch, kernel, gw, gb)?
                }
                LayerSpec::MaxPool1d { window } => {
                    let idxs = pass.pool_indices[idx]
                        .as_ref()
                        .expect("pool layer cached indices");
                    ops::maxpool_backward(idxs, &grad, window)?
                }
                LayerSpec::Upsample1d { factor } => ops::upsample_backward(&grad, factor)?,
                LayerSpec::Activation(Activation::ReLU) => ops::relu_backward(x_in, &grad)?,
                LayerSpec::Activation(Activation::Identity) => grad,
            };
        }
        Ok(grad)
    }
}

/// (channels, length) after each layer.
pub fn infer_shapes(
    layers: &[LayerSpec],
    input_channels: usize,
    input_length: usize,
) -> Result<Vec<(usize, usize)>, NnError> {
    let mut shapes = Vec::with_capacity(layers.len());
    let (mut c, mut l) = (input_channels, input_length);
    for (idx, layer) in layers.iter().enumerate() {
        match *layer {
            LayerSpec::Conv1d { in_ch, out_ch, .. }
            | LayerSpec::TransConv1d { in_ch, out_ch, .. } => {
                if c != in_ch {
                    return Err(NnError::InvalidSpec(format!(
                        "layer {idx} expects {in_ch} channels, receives {c}"
                    )));
                }
                c = out_ch;
            }
            LayerSpec::MaxPool1d { window } => {
                if l % window != 0 {
                    return Err(NnError::IndivisibleLength { length: l, window });
                }
                l /= window;
            }
            LayerSpec::Upsample1d { factor } => l *= factor,
            LayerSpec::Activation(_) => {}
        }
        shapes.push((c, l));
    }
    Ok(shapes)
}

/// Architecture file schema (TOML `[model]` table): input dims plus a list
/// of layer words like `"conv 2 16 5"`, `"maxpool 2"`, `"relu"`, with a
/// `"latent"` marker separating encoder from decoder.
#[derive(Debug, Clone, Deserialize)]
pub struct ModelConfig {
    #[serde(default = "default_channels")]
    pub input_channels: usize,
    #[serde(default = "default_length")]
    pub input_length: usize,
    pub layers: Vec<String>,
}

fn default_channels() -> usize {
    2
}

fn default_length() -> usize {
    112
}

impl Default for ModelConfig {
    fn default() -> Self {
        let (layers, boundary) = AutoencoderModel::default_architecture();
        let mut words: Vec<String> = Vec::new();
        for (i, l) in layers.iter().enumerate() {
            if i == boundary {
                words.push("latent".into());
            }
            words.push(match *l {
                LayerSpec::Conv1d {
                    in_ch,
                    out_ch,
                    kernel,
                } => format!("conv {in_ch} {out_ch} {kernel}"),
                LayerSpec::TransConv1d {
                    in_ch,
                    out_ch,
                    kernel,
                } => format!("transconv {in_ch} {out_ch} {kernel}"),
                LayerSpec::MaxPool1d { window } => format!("maxpool {window}"),
                LayerSpec::Upsample1d { factor } => format!("upsample {factor}"),
                LayerSpec::Activation(Activation::ReLU) => "relu".into(),
                LayerSpec::Activation(Activation::Identity) => "identity".into(),
            });
        }
        ModelConfig {
            input_channels: 2,
            input_length: 112,
            layers: words,
        }
    }
}

impl ModelConfig {
    /// Parse the layer words into a validated model with zeroed parameters.
    pub fn build(&self) -> Result<AutoencoderModel, NnError> {
        let mut layers = Vec::new();
        let mut boundary = None;
        for word in &self.layers {
            let parts: Vec<&str> = word.split_whitespace().collect();
            let parse = |s: &str| -> Result<usize, NnError> {
                s.parse()
                    .map_err(|_| NnError::InvalidSpec(format!("bad number {s:?} in {word:?}")))
            };
            match parts.as_slice() {
                ["conv", i, o, k] => layers.push(LayerSpec::Conv1d {
                    in_ch: parse(i)?,
                    out_ch: parse(o)?,
                    kernel: parse(k)?,
                }),
                ["transconv", i, o, k] => layers.push(LayerSpec::TransConv1d {
                    in_ch: parse(i)?,
                    out_ch: parse(o)?,
                    kernel: parse(k)?,
                }),
                ["maxpool", w] => layers.push(LayerSpec::MaxPool1d { window: parse(w)? }),
                ["upsample", f] => layers.push(LayerSpec::Upsample1d { factor: parse(f)? }),
                ["relu"] => layers.push(LayerSpec::Activation(Activation::ReLU)),
                ["identity"] => layers.push(LayerSpec::Activation(Activation::Identity)),
                ["latent"] => {
                    if boundary.is_some() {
                        return Err(NnError::InvalidSpec(
                            "multiple latent markers".into(),
                        ));
                    }
                    boundary = Some(layers.len());
                }
                _ => {
                    return Err(NnError::InvalidSpec(format!(
                        "unrecognized layer word {word:?}"
                    )))
                }
            }
        }
        let boundary = boundary.ok_or_else(|| {
            NnError::InvalidSpec("architecture needs a \"latent\" marker".into())
        })?;
        AutoencoderModel::new(layers, boundary, self.input_channels, self.input_length)
    }

    /// Build and Glorot-initialize from a seed.
    pub fn build_seeded(&self, seed: u64) -> Result<AutoencoderModel, NnError> {
        let mut m = self.build()?;
        m.init_glorot(&mut Pcg32::new(seed, AutoencoderModel::INIT_STREAM));
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_architecture_shapes() {
        let m = AutoencoderModel::default_seeded(1);
        assert_eq!(m.input_shape(), (2, 112));
        assert_eq!(m.latent_size(), 4 * 28);
        assert!(m.latent_size() < 224);
        // Six conv-type layers carry parameters.
        let n_conv = m
            .slots()
            .iter()
            .filter(|s| s.w_len > 0)
            .count();
        assert_eq!(n_conv, 6);
    }

    #[test]
    fn forward_output_matches_input_shape() {
        let m = AutoencoderModel::default_seeded(2);
        let mut rng = Pcg32::new(3, 3);
        let x = Tensor3::from_vec(
            3,
            2,
            112,
            (0..3 * 2 * 112).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let pass = m.forward(&x).unwrap();
        assert_eq!(pass.output().shape(), (3, 2, 112));
        assert_eq!(m.latent(&pass).shape(), (3, 4, 28));
    }

    #[test]
    fn zero_input_stays_finite() {
        let m = AutoencoderModel::default_seeded(4);
        let x = Tensor3::zeros(1, 2, 112);
        let pass = m.forward(&x).unwrap();
        pass.output().check_finite("zero input").unwrap();
    }

    #[test]
    fn forward_deterministic() {
        let m = AutoencoderModel::default_seeded(5);
        let mut rng = Pcg32::new(6, 6);
        let x = Tensor3::from_vec(
            2,
            2,
            112,
            (0..2 * 2 * 112).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let a = m.reconstruct(&x).unwrap();
        let b = m.reconstruct(&x).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn same_seed_same_weights() {
        let a = AutoencoderModel::default_seeded(42);
        let b = AutoencoderModel::default_seeded(42);
        assert_eq!(a.params(), b.params());
        let c = AutoencoderModel::default_seeded(43);
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn rejects_non_reconstructing_stack() {
        use LayerSpec::*;
        let layers = vec![
            Conv1d { in_ch: 2, out_ch: 4, kernel: 3 },
            MaxPool1d { window: 2 },
        ];
        assert!(AutoencoderModel::new(layers, 1, 2, 112).is_err());
    }

    #[test]
    fn rejects_non_compressing_bottleneck() {
        use LayerSpec::*;
        let layers = vec![
            Conv1d { in_ch: 2, out_ch: 8, kernel: 3 },
            Conv1d { in_ch: 8, out_ch: 2, kernel: 3 },
        ];
        // Latent (8, 112) has more elements than the (2, 112) input.
        assert!(matches!(
            AutoencoderModel::new(layers, 1, 2, 112),
            Err(NnError::InvalidSpec(_))
        ));
    }

    #[test]
    fn rejects_channel_mismatch() {
        use LayerSpec::*;
        let layers = vec![
            Conv1d { in_ch: 3, out_ch: 2, kernel: 3 },
            Conv1d { in_ch: 2, out_ch: 2, kernel: 3 },
        ];
        assert!(AutoencoderModel::new(layers, 1, 2, 112).is_err());
    }

    #[test]
    fn config_round_trip_matches_default() {
        let cfg = ModelConfig::default();
        let built = cfg.build_seeded(9).unwrap();
        let direct = AutoencoderModel::default_seeded(9);
        assert_eq!(built, direct);
    }

    #[test]
    fn config_requires_latent_marker() {
        let cfg = ModelConfig {
            input_channels: 2,
            input_length: 112,
            layers: vec!["conv 2 2 3".into()],
        };
        assert!(matches!(cfg.build(), Err(NnError::InvalidSpec(_))));
    }

    #[test]
    fn config_rejects_unknown_word() {
        let cfg = ModelConfig {
            input_channels: 2,
            input_length: 112,
            layers: vec!["wiggle 3".into()],
        };
        assert!(cfg.build().is_err());
    }
}
