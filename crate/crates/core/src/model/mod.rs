//! The two onset network architectures as ordered, named layers.
//!
//! Both variants share the layer sequence `Conv1..Conv3, Tcn1..Tcn1024,
//! Out`. They differ in the convolutional front-end and in the number of
//! dilated convolutions per TCN level:
//!
//! | stage      | TCNv1                         | TCNv2                                 |
//! |------------|-------------------------------|---------------------------------------|
//! | Conv1      | 3×3, 16 ch, pool 3            | 3×3, 20 ch, pool 3                    |
//! | Conv2      | 3×3, 16 ch, pool 3            | 1×10, 20 ch, pool 3                   |
//! | Conv3      | 1×8, 16 ch                    | 3×3, 20 ch, pool 3, 1×1 adapter → 16  |
//! | Tcn`d`     | k=5 dil `d`, 1×1 mix, residual | k=5 dil `d` and `2d`, 1×1 mix, residual |
//! | Out        | dense 16 → 1, sigmoid         | dense 16 → 1, sigmoid                 |
//!
//! Every conv stage and TCN level applies ELU and dropout.

mod freeze;
mod graph;
mod io;
mod layer;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use freeze::FreezeConfig;
pub use graph::{gradcheck_model, ActivationFunction, ModelGrads, Trace};
pub use io::{load_model, read_model, save_model, write_model, FORMAT_VERSION};
pub use layer::{LayerName, Variant};

use crate::error::{Error, Result};
use crate::features::N_BANDS;
use crate::nn::Tensor;

/// Channels of every TCN level.
pub const TCN_CHANNELS: usize = 16;
/// Kernel width of the dilated convolutions.
pub const TCN_KERNEL: usize = 5;
pub const DEFAULT_DROPOUT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    ConvStage,
    TcnLevel,
    Output,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::ConvStage => "conv-stage",
            LayerKind::TcnLevel => "tcn-level",
            LayerKind::Output => "output",
        }
    }
}

/// A named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: &'static str,
    pub value: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: LayerName,
    pub kind: LayerKind,
    /// Dilations of the layer's temporal convolutions (TCN levels only).
    pub dilations: Vec<usize>,
    pub params: Vec<Param>,
    pub trainable: bool,
}

impl Layer {
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    variant: Variant,
    layers: Vec<Layer>,
    seed: u64,
    dropout_rate: f64,
}

/// Frequency extents after each front-end operation, starting from
/// `bands`. Errors if an operation does not fit or the chain does not end
/// at exactly one band.
pub fn frequency_chain(variant: Variant, bands: usize) -> Result<Vec<usize>> {
    let mut chain = vec![bands];
    let mut f = bands;
    for (i, (_, kf, pool)) in variant.conv_stages().into_iter().enumerate() {
        if f < kf {
            return Err(Error::Shape(format!(
                "{variant}: Conv{} kernel width {kf} exceeds {f} bands",
                i + 1
            )));
        }
        f = f - kf + 1;
        chain.push(f);
        if pool {
            if f < 3 {
                return Err(Error::Shape(format!(
                    "{variant}: cannot pool {f} bands after Conv{}",
                    i + 1
                )));
            }
            f /= 3;
            chain.push(f);
        }
    }
    if f != 1 {
        return Err(Error::Shape(format!(
            "{variant}: front-end maps {bands} bands to {f}, expected 1"
        )));
    }
    Ok(chain)
}

fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.gen_range(-limit..limit) as f32 as f64)
}

fn conv1d_weights(k: usize, ci: usize, co: usize, rng: &mut ChaCha8Rng) -> Tensor {
    glorot(&[k, ci, co], k * ci, k * co, rng)
}

fn dense_weights(ci: usize, co: usize, rng: &mut ChaCha8Rng) -> Tensor {
    glorot(&[ci, co], ci, co, rng)
}

/// Builds a freshly initialised model for 81-band input.
pub fn build_model(variant: Variant, seed: u64) -> Model {
    build_model_for_bands(variant, N_BANDS, seed).expect("81 bands fit both front-ends")
}

/// Builds a model, rejecting band counts whose front-end chain does not
/// end at one band.
pub fn build_model_for_bands(variant: Variant, bands: usize, seed: u64) -> Result<Model> {
    if bands != N_BANDS {
        // the chain may still end at 1 (e.g. 80 bands), but inputs are always 81 bands
        frequency_chain(variant, bands)?;
        return Err(Error::Shape(format!(
            "model input must have {N_BANDS} bands, got {bands}"
        )));
    }
    frequency_chain(variant, bands)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fc = variant.front_channels();
    let mut layers = Vec::with_capacity(LayerName::COUNT);

    let mut in_ch = 1;
    for (i, (kt, kf, _)) in variant.conv_stages().into_iter().enumerate() {
        let mut params = vec![
            Param {
                name: "weight",
                value: glorot(&[kt, kf, in_ch, fc], kt * kf * in_ch, kt * kf * fc, &mut rng),
            },
            Param {
                name: "bias",
                value: Tensor::zeros(&[fc]),
            },
        ];
        if i == 2 && fc != TCN_CHANNELS {
            params.push(Param {
                name: "adapter.weight",
                value: dense_weights(fc, TCN_CHANNELS, &mut rng),
            });
            params.push(Param {
                name: "adapter.bias",
                value: Tensor::zeros(&[TCN_CHANNELS]),
            });
        }
        layers.push(Layer {
            name: LayerName::from_index(i).unwrap(),
            kind: LayerKind::ConvStage,
            dilations: Vec::new(),
            params,
            trainable: true,
        });
        in_ch = fc;
    }

    for name in LayerName::all().filter(|n| n.dilation().is_some()) {
        let dilations = variant.level_dilations(name.dilation().unwrap());
        let mut params = Vec::new();
        for (j, _) in dilations.iter().enumerate() {
            params.push(Param {
                name: ["conv0.weight", "conv1.weight"][j],
                value: conv1d_weights(TCN_KERNEL, TCN_CHANNELS, TCN_CHANNELS, &mut rng),
            });
            params.push(Param {
                name: ["conv0.bias", "conv1.bias"][j],
                value: Tensor::zeros(&[TCN_CHANNELS]),
            });
        }
        params.push(Param {
            name: "mix.weight",
            value: dense_weights(TCN_CHANNELS, TCN_CHANNELS, &mut rng),
        });
        params.push(Param {
            name: "mix.bias",
            value: Tensor::zeros(&[TCN_CHANNELS]),
        });
        layers.push(Layer {
            name,
            kind: LayerKind::TcnLevel,
            dilations,
            params,
            trainable: true,
        });
    }

    layers.push(Layer {
        name: LayerName::OUT,
        kind: LayerKind::Output,
        dilations: Vec::new(),
        params: vec![
            Param {
                name: "weight",
                value: dense_weights(TCN_CHANNELS, 1, &mut rng),
            },
            Param {
                name: "bias",
                value: Tensor::zeros(&[1]),
            },
        ],
        trainable: true,
    });

    Ok(Model {
        variant,
        layers,
        seed,
        dropout_rate: DEFAULT_DROPOUT,
    })
}

/// Total parameter count with a per-layer breakdown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCount {
    pub total: usize,
    pub per_layer: Vec<(LayerName, usize)>,
}

/// Temporal receptive field through a layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReceptiveField {
    pub frames: usize,
    pub millis: f64,
}

impl Model {
    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn set_dropout_rate(&mut self, rate: f64) -> Result<()> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        self.dropout_rate = rate;
        Ok(())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, name: LayerName) -> &Layer {
        &self.layers[name.index()]
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn layer_names(&self) -> Vec<LayerName> {
        self.layers.iter().map(|l| l.name).collect()
    }

    pub fn count_params(&self) -> ParamCount {
        let per_layer: Vec<_> = self.layers.iter().map(|l| (l.name, l.param_count())).collect();
        ParamCount {
            total: per_layer.iter().map(|(_, n)| n).sum(),
            per_layer,
        }
    }

    /// Frames of input that influence one output frame of `through`. Each
    /// temporal convolution of width `k` and dilation `d` adds `(k-1)·d`.
    pub fn receptive_field(&self, through: LayerName) -> ReceptiveField {
        receptive_field(self.variant, through)
    }

    /// Returns a copy with `config` applied: layers in the frozen segment
    /// are not trainable, all others are.
    pub fn apply_freeze(&self, config: &FreezeConfig) -> Result<Model> {
        let mut m = self.clone();
        let frozen = config.frozen();
        if frozen.contains(&LayerName::OUT) {
            return Err(Error::Config("the output layer cannot be frozen".into()));
        }
        for layer in &mut m.layers {
            layer.trainable = !frozen.contains(&layer.name);
        }
        Ok(m)
    }

    /// Replaces one parameter tensor; shape must match and values be finite.
    pub fn set_param(&mut self, layer: LayerName, name: &str, value: Tensor) -> Result<()> {
        let slot = self.layers[layer.index()]
            .params
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::Name(format!("{layer} has no parameter {name}")))?;
        if slot.value.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "{layer}.{name}: expected {:?}, got {:?}",
                slot.value.shape(),
                value.shape()
            )));
        }
        if !value.is_finite() {
            return Err(Error::Config(format!("{layer}.{name}: non-finite values")));
        }
        slot.value = value;
        Ok(())
    }

    pub fn trainable_layers(&self) -> Vec<LayerName> {
        self.layers.iter().filter(|l| l.trainable).map(|l| l.name).collect()
    }

    pub fn params_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.params.iter().all(|p| p.value.is_finite()))
    }

    /// Rounds every parameter to the nearest `f32`, the precision parameters
    /// are stored at.
    pub(crate) fn round_params(&mut self) {
        for layer in &mut self.layers {
            for p in &mut layer.params {
                p.value.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
            }
        }
    }
}

pub fn receptive_field(variant: Variant, through: LayerName) -> ReceptiveField {
    let mut frames = 1;
    for name in LayerName::all().take(through.index() + 1) {
        if name.is_conv() {
            frames += variant.conv_stages()[name.index()].0 - 1;
        } else if let Some(d) = name.dilation() {
            frames += variant
                .level_dilations(d)
                .iter()
                .map(|dd| (TCN_KERNEL - 1) * dd)
                .sum::<usize>();
        }
    }
    ReceptiveField {
        frames,
        millis: frames as f64 * 1000.0 / crate::features::FRAME_RATE,
    }
}
