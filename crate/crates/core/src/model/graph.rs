//! Forward pass with cached intermediates and the matching backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LayerKind, Model};
use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, FRAME_RATE, N_BANDS};
use crate::nn::{self, ActivationKind, Tensor};

/// Per-frame onset probabilities at 100 frames per second.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationFunction {
    values: Vec<f64>,
}

impl ActivationFunction {
    pub fn new(values: Vec<f64>) -> Self {
        ActivationFunction { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn frame_rate(&self) -> f64 {
        FRAME_RATE
    }
}

enum Cache {
    Conv {
        input: Tensor,
        pre_act: Tensor,
        mask: Option<Vec<f64>>,
        /// Dropout output, the pooling input when the stage pools.
        dropped: Tensor,
        pooled: bool,
        /// Squeezed `time × channel` input of the channel adapter.
        adapter_in: Option<Tensor>,
        /// Shape of the stage output before squeezing the frequency axis.
        unsqueezed: Option<Vec<usize>>,
    },
    Tcn {
        conv_inputs: Vec<Tensor>,
        pre_acts: Vec<Tensor>,
        mask: Option<Vec<f64>>,
        mix_in: Tensor,
    },
    Out {
        input: Tensor,
    },
}

/// Intermediate values of one forward pass.
pub struct Trace {
    caches: Vec<Cache>,
    probs: Tensor,
}

impl Trace {
    pub fn probabilities(&self) -> &[f64] {
        self.probs.data()
    }
}

/// Gradients for each layer's parameters, `None` for layers whose
/// gradients were not requested.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub layers: Vec<Option<Vec<Tensor>>>,
    pub input: Option<Tensor>,
}

impl Model {
    /// Onset activation for `features`. With `training` unset the pass is
    /// deterministic and dropout-free and `rng` is not used.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        features: &FeatureMatrix,
        training: bool,
        rng: &mut R,
    ) -> Result<ActivationFunction> {
        check_bands(features)?;
        let trace = self.forward_trace(&features.to_tensor(), training, rng)?;
        Ok(ActivationFunction {
            values: trace.probs.into_data(),
        })
    }

    /// Inference-mode forward pass.
    pub fn infer(&self, features: &FeatureMatrix) -> Result<ActivationFunction> {
        self.forward(features, false, &mut ChaCha8Rng::seed_from_u64(0))
    }

    /// Forward pass over a `time × 81 × 1` tensor, keeping what the
    /// backward pass needs.
    pub fn forward_trace<R: Rng + ?Sized>(
        &self,
        input: &Tensor,
        training: bool,
        rng: &mut R,
    ) -> Result<Trace> {
        if input.shape().len() != 3 || input.shape()[1] != N_BANDS || input.shape()[2] != 1 {
            return Err(Error::Shape(format!(
                "model input must be time x {N_BANDS} x 1, got {:?}",
                input.shape()
            )));
        }
        let rate = self.dropout_rate();
        let pad = self.variant().time_padding();
        let t_in = input.shape()[0];
        let mut x = Tensor::zeros(&[t_in + 2 * pad, N_BANDS, 1]);
        x.data_mut()[pad * N_BANDS..(pad + t_in) * N_BANDS].copy_from_slice(input.data());
        let mut caches = Vec::with_capacity(self.layers().len());
        for layer in self.layers() {
            match layer.kind {
                LayerKind::ConvStage => {
                    let pre_act = nn::conv2d_valid(&x, &layer.params[0].value, &layer.params[1].value)?;
                    let act = nn::activation(&pre_act, ActivationKind::Elu);
                    let mask = nn::dropout_mask(act.len(), rate, rng, training)?;
                    let dropped = nn::apply_mask(&act, mask.as_deref());
                    let pooled = layer.name.index() < 3
                        && self.variant().conv_stages()[layer.name.index()].2;
                    let mut out = if pooled {
                        nn::maxpool_freq3(&dropped)?
                    } else {
                        dropped.clone()
                    };
                    let mut adapter_in = None;
                    let mut unsqueezed = None;
                    if layer.name == super::LayerName::CONV3 {
                        let s = out.shape().to_vec();
                        debug_assert_eq!(s[1], 1);
                        unsqueezed = Some(s.clone());
                        out = out.reshape(vec![s[0], s[2]])?;
                        if layer.params.len() == 4 {
                            let y = nn::dense(&out, &layer.params[2].value, &layer.params[3].value)?;
                            adapter_in = Some(std::mem::replace(&mut out, y));
                        }
                    }
                    caches.push(Cache::Conv {
                        input: std::mem::replace(&mut x, out),
                        pre_act,
                        mask,
                        dropped,
                        pooled,
                        adapter_in,
                        unsqueezed,
                    });
                }
                LayerKind::TcnLevel => {
                    let mut h = x.clone();
                    let mut conv_inputs = Vec::new();
                    let mut pre_acts = Vec::new();
                    for (j, &d) in layer.dilations.iter().enumerate() {
                        let z = nn::dilated_conv1d(&h, &layer.params[2 * j].value, &layer.params[2 * j + 1].value, d)?;
                        let a = nn::activation(&z, ActivationKind::Elu);
                        conv_inputs.push(std::mem::replace(&mut h, a));
                        pre_acts.push(z);
                    }
                    let mask = nn::dropout_mask(h.len(), rate, rng, training)?;
                    let mix_in = nn::apply_mask(&h, mask.as_deref());
                    let n = layer.params.len();
                    let y = nn::dense(&mix_in, &layer.params[n - 2].value, &layer.params[n - 1].value)?;
                    let mut out = x.clone();
                    out.data_mut().iter_mut().zip(y.data()).for_each(|(o, v)| *o += v);
                    caches.push(Cache::Tcn {
                        conv_inputs,
                        pre_acts,
                        mask,
                        mix_in,
                    });
                    x = out;
                }
                LayerKind::Output => {
                    let z = nn::dense(&x, &layer.params[0].value, &layer.params[1].value)?;
                    let p = nn::activation(&z, ActivationKind::Sigmoid);
                    caches.push(Cache::Out {
                        input: std::mem::replace(&mut x, p),
                    });
                }
            }
        }
        let t = x.shape()[0];
        Ok(Trace {
            caches,
            probs: x.reshape(vec![t])?,
        })
    }

    /// Backpropagates `logit_grad` (gradient with respect to the pre-sigmoid
    /// output) through the trace. Gradients are produced for trainable
    /// layers only; propagation stops below the earliest trainable layer
    /// unless `want_input_grad` is set.
    pub fn backward(&self, trace: &Trace, logit_grad: &Tensor, want_input_grad: bool) -> Result<ModelGrads> {
        let n = self.layers().len();
        let stop = if want_input_grad {
            0
        } else {
            match self.layers().iter().position(|l| l.trainable) {
                Some(i) => i,
                None => {
                    return Ok(ModelGrads {
                        layers: vec![None; n],
                        input: None,
                    })
                }
            }
        };
        let t = logit_grad.len();
        let mut g = logit_grad.clone().reshape(vec![t, 1])?;
        let mut grads: Vec<Option<Vec<Tensor>>> = vec![None; n];
        for i in (stop..n).rev() {
            let layer = &self.layers()[i];
            let need_input = i > stop || want_input_grad;
            match &trace.caches[i] {
                Cache::Out { input } => {
                    let lg = nn::dense_backward(input, &layer.params[0].value, &g, need_input)?;
                    if layer.trainable {
                        grads[i] = Some(lg.param_grads);
                    }
                    match lg.input_grad {
                        Some(dx) => g = dx,
                        None => break,
                    }
                }
                Cache::Tcn {
                    conv_inputs,
                    pre_acts,
                    mask,
                    mix_in,
                } => {
                    let np = layer.params.len();
                    let mix = nn::dense_backward(mix_in, &layer.params[np - 2].value, &g, true)?;
                    let mut dh = nn::apply_mask(mix.input_grad.as_ref().unwrap(), mask.as_deref());
                    let mut pgrads = vec![None; np];
                    let [dw, db]: [Tensor; 2] = mix.param_grads.try_into().unwrap();
                    pgrads[np - 2] = Some(dw);
                    pgrads[np - 1] = Some(db);
                    for j in (0..layer.dilations.len()).rev() {
                        let dz = nn::activation_backward(&pre_acts[j], &dh, ActivationKind::Elu)?;
                        let cg = nn::dilated_conv1d_backward(
                            &conv_inputs[j],
                            &layer.params[2 * j].value,
                            &dz,
                            layer.dilations[j],
                            j > 0 || need_input,
                        )?;
                        let [dw, db]: [Tensor; 2] = cg.param_grads.try_into().unwrap();
                        pgrads[2 * j] = Some(dw);
                        pgrads[2 * j + 1] = Some(db);
                        if let Some(dx) = cg.input_grad {
                            dh = dx;
                        }
                    }
                    if layer.trainable {
                        grads[i] = Some(pgrads.into_iter().map(Option::unwrap).collect());
                    }
                    if !need_input {
                        break;
                    }
                    // residual path
                    dh.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b);
                    g = dh;
                }
                Cache::Conv {
                    input,
                    pre_act,
                    mask,
                    dropped,
                    pooled,
                    adapter_in,
                    unsqueezed,
                } => {
                    let mut pgrads = Vec::new();
                    let mut adapter_grads = Vec::new();
                    if let Some(a_in) = adapter_in {
                        let ag = nn::dense_backward(a_in, &layer.params[2].value, &g, true)?;
                        adapter_grads = ag.param_grads;
                        g = ag.input_grad.unwrap();
                    }
                    if let Some(shape) = unsqueezed {
                        g = g.reshape(shape.clone())?;
                    }
                    if *pooled {
                        g = nn::maxpool_freq3_backward(dropped, &g)?;
                    }
                    let g_act = nn::apply_mask(&g, mask.as_deref());
                    let dz = nn::activation_backward(pre_act, &g_act, ActivationKind::Elu)?;
                    let cg = nn::conv2d_valid_backward(input, &layer.params[0].value, &dz, need_input)?;
                    pgrads.extend(cg.param_grads);
                    pgrads.extend(adapter_grads);
                    if layer.trainable {
                        grads[i] = Some(pgrads);
                    }
                    match cg.input_grad {
                        Some(dx) => g = dx,
                        None => break,
                    }
                }
            }
        }
        let input = if want_input_grad {
            let pad = self.variant().time_padding();
            let inner = g.data()[pad * N_BANDS..(pad + t) * N_BANDS].to_vec();
            Some(Tensor::new(vec![t, N_BANDS, 1], inner)?)
        } else {
            None
        };
        Ok(ModelGrads {
            layers: grads,
            input,
        })
    }

    /// Loss and gradients of the mean binary cross-entropy against
    /// `targets` for one sequence.
    pub fn loss_and_grads<R: Rng + ?Sized>(
        &self,
        input: &Tensor,
        targets: &Tensor,
        training: bool,
        rng: &mut R,
    ) -> Result<(f64, ModelGrads)> {
        let trace = self.forward_trace(input, training, rng)?;
        let loss = nn::bce_loss(&trace.probs, targets)?;
        let dz = nn::bce_logit_grad(&trace.probs, targets)?;
        let grads = self.backward(&trace, &dz, false)?;
        Ok((loss, grads))
    }
}

fn check_bands(features: &FeatureMatrix) -> Result<()> {
    if features.n_bands() != N_BANDS {
        return Err(Error::Shape(format!(
            "features have {} bands, the model expects {N_BANDS}",
            features.n_bands()
        )));
    }
    Ok(())
}

const KINK_TOLERANCE: f64 = 1e-6;

/// Compares analytic parameter gradients of the full model against
/// central finite differences of the BCE loss on a random `frames`-long
/// input with random targets, with dropout active under a fixed mask.
/// Checks `per_tensor` randomly chosen coordinates of every parameter
/// tensor and returns the worst relative error. Coordinates whose
/// stencil crosses a non-differentiable point are replaced by fresh draws.
pub fn gradcheck_model(model: &Model, frames: usize, per_tensor: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = Tensor::from_fn(&[frames, N_BANDS, 1], |_| rng.gen_range(0.0..3.0));
    let targets = Tensor::from_fn(&[frames], |_| rng.gen_range(0.0..1.0));
    let mask_seed: u64 = rng.gen();
    let loss_of = |m: &Model| -> f64 {
        let mut r = ChaCha8Rng::seed_from_u64(mask_seed);
        let trace = m.forward_trace(&input, true, &mut r).unwrap();
        nn::bce_loss(&trace.probs, &targets).unwrap()
    };
    let mut r = ChaCha8Rng::seed_from_u64(mask_seed);
    let (_, grads) = model.loss_and_grads(&input, &targets, true, &mut r)?;

    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for (li, layer) in model.layers().iter().enumerate() {
        let Some(layer_grads) = &grads.layers[li] else {
            continue;
        };
        for (pi, param) in layer.params.iter().enumerate() {
            let len = param.value.len();
            let mut checked = 0;
            let mut attempts = 0;
            while checked < per_tensor.min(len) && attempts < 20 * per_tensor.max(1) {
                let k = if len <= per_tensor { attempts } else { rng.gen_range(0..len) };
                attempts += 1;
                if k >= len {
                    break;
                }
                let orig = param.value.data()[k];
                let mut central = |h: f64| {
                    let set = |m: &mut Model, v: f64| m.layers_mut()[li].params[pi].value.data_mut()[k] = v;
                    set(&mut probe, orig + h);
                    let up = loss_of(&probe);
                    set(&mut probe, orig - h);
                    let down = loss_of(&probe);
                    set(&mut probe, orig);
                    (up - down) / (2.0 * h)
                };
                let numeric = central(nn::gradcheck::STEP);
                // a pooling argmax switch inside the stencil makes the
                // two step sizes disagree; such points are resampled
                if nn::gradcheck::relative_error(numeric, central(nn::gradcheck::STEP / 2.0)) > KINK_TOLERANCE {
                    continue;
                }
                let analytic = layer_grads[pi].data()[k];
                worst = worst.max(nn::gradcheck::relative_error(analytic, numeric));
                checked += 1;
            }
            if checked == 0 {
                worst = f64::INFINITY;
            }
        }
    }
    Ok(worst)
}
