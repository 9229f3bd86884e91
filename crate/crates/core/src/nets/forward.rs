use super::{LayerSpec, NetError, NetworkSpec, Stage, WeightStore};
use crate::tensor::{backward as layer_backward, softmax_channels, ForwardCache, Layer, Tensor, TensorError};

/// Face probabilities and regression outputs of one stage.
///
/// For P-Net the tensors are maps: `face_prob` is `[N, 1, m, n]`, `box_offsets`
/// `[N, 4, m, n]`, `landmark_offsets` `[N, 10, m, n]`. For R-Net and O-Net they
/// are per sample: `[N, 1]`, `[N, 4]`, `[N, 10]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOutput {
    pub face_prob: Tensor,
    pub box_offsets: Tensor,
    pub landmark_offsets: Tensor,
}

impl StageOutput {
    /// Spatial extent of the P-Net maps, `(1, 1)` for per-sample stages.
    pub fn map_extent(&self) -> (usize, usize) {
        match self.face_prob.shape() {
            [_, _, h, w] => (*h, *w),
            _ => (1, 1),
        }
    }
}

fn stage_layer<'a>(spec: &NetworkSpec, weights: &'a WeightStore, layer: &LayerSpec) -> Result<Layer<'a>, NetError> {
    let p = spec.stage.prefix();
    Ok(match layer {
        LayerSpec::Conv { name, stride, .. } => Layer::Conv2d {
            weights: weights.require(&format!("{p}.{name}.weight"))?,
            bias: weights.require(&format!("{p}.{name}.bias"))?,
            stride: *stride,
        },
        LayerSpec::Prelu { name, .. } => Layer::Prelu {
            slopes: weights.require(&format!("{p}.{name}.slopes"))?,
        },
        LayerSpec::MaxPool { kernel, stride } => Layer::MaxPool {
            kernel: *kernel,
            stride: *stride,
            ceil_mode: true,
        },
        LayerSpec::FullyConnected { name, .. } => Layer::FullyConnected {
            weights: weights.require(&format!("{p}.{name}.weight"))?,
            bias: weights.require(&format!("{p}.{name}.bias"))?,
        },
    })
}

fn check_input(spec: &NetworkSpec, input: &Tensor, training: bool) -> Result<(), NetError> {
    let size = spec.stage.input_size();
    let ok = match input.shape() {
        [_, 3, h, w] if spec.stage == Stage::PNet && !training => *h >= size && *w >= size,
        [_, 3, h, w] => *h == size && *w == size,
        _ => false,
    };
    if ok {
        return Ok(());
    }
    let expected = if spec.stage == Stage::PNet && !training {
        "[N, 3, H ≥ 12, W ≥ 12]".to_string()
    } else {
        format!("[N, 3, {size}, {size}]")
    };
    Err(NetError::InputShape {
        stage: spec.stage,
        expected,
        actual: input.shape().to_vec(),
    })
}

/// Runs one stage on a normalized NCHW batch.
pub fn forward(spec: &NetworkSpec, weights: &WeightStore, input: &Tensor) -> Result<StageOutput, NetError> {
    weights.validate(spec)?;
    check_input(spec, input, false)?;
    let mut x = input.clone();
    for layer in &spec.layers {
        x = stage_layer(spec, weights, layer)?.forward(&x)?;
    }
    let mut outs = Vec::with_capacity(3);
    for (_, head) in &spec.heads {
        outs.push(stage_layer(spec, weights, head)?.forward(&x)?);
    }
    let landmark_offsets = outs.pop().expect("three heads");
    let box_offsets = outs.pop().expect("three heads");
    let probs = softmax_channels(&outs.pop().expect("three heads"))?;
    Ok(StageOutput {
        face_prob: face_channel(&probs)?,
        box_offsets,
        landmark_offsets,
    })
}

/// Channel 1 of a two-channel probability tensor, keeping the channel axis.
fn face_channel(probs: &Tensor) -> Result<Tensor, TensorError> {
    let n = probs.batch();
    let inner = probs.per_sample() / 2;
    let mut shape = probs.shape().to_vec();
    shape[1] = 1;
    let data = probs
        .data()
        .chunks_exact(2 * inner)
        .flat_map(|s| s[inner..].iter().copied())
        .collect::<Vec<_>>();
    debug_assert_eq!(data.len(), n * inner);
    Tensor::new(shape, data)
}

/// Forward pass over fixed-size training patches with every layer cached.
#[derive(Debug)]
pub struct TrainForward {
    /// `[N, 2]` class logits (not-face, face).
    pub cls_logits: Tensor,
    /// `[N, 4]`
    pub box_offsets: Tensor,
    /// `[N, 10]`
    pub landmark_offsets: Tensor,
    trunk: Vec<ForwardCache>,
    heads: Vec<ForwardCache>,
}

fn flatten(t: Tensor) -> Result<Tensor, TensorError> {
    let n = t.batch();
    let per = t.per_sample();
    t.reshape(&[n, per])
}

/// Like [`forward`] but for training: the input must be exactly the stage
/// patch size, heads come out as `[N, C]` matrices and raw logits are kept.
pub fn forward_train(spec: &NetworkSpec, weights: &WeightStore, input: &Tensor) -> Result<TrainForward, NetError> {
    weights.validate(spec)?;
    check_input(spec, input, true)?;
    let mut x = input.clone();
    let mut trunk = Vec::with_capacity(spec.layers.len());
    for layer in &spec.layers {
        let (out, cache) = stage_layer(spec, weights, layer)?.forward_cached(&x)?;
        trunk.push(cache);
        x = out;
    }
    let mut outs = Vec::with_capacity(3);
    let mut heads = Vec::with_capacity(3);
    for (_, head) in &spec.heads {
        let (out, cache) = stage_layer(spec, weights, head)?.forward_cached(&x)?;
        heads.push(cache);
        outs.push(flatten(out)?);
    }
    let landmark_offsets = outs.pop().expect("three heads");
    let box_offsets = outs.pop().expect("three heads");
    let cls_logits = outs.pop().expect("three heads");
    Ok(TrainForward {
        cls_logits,
        box_offsets,
        landmark_offsets,
        trunk,
        heads,
    })
}

fn add_param_grads(
    grads: &mut WeightStore,
    spec: &NetworkSpec,
    layer: &LayerSpec,
    d_weights: Option<Tensor>,
    d_bias: Option<Tensor>,
) {
    let p = spec.stage.prefix();
    let (w_name, b_name) = match layer {
        LayerSpec::Conv { name, .. } | LayerSpec::FullyConnected { name, .. } => {
            (format!("{p}.{name}.weight"), Some(format!("{p}.{name}.bias")))
        }
        LayerSpec::Prelu { name, .. } => (format!("{p}.{name}.slopes"), None),
        LayerSpec::MaxPool { .. } => return,
    };
    if let Some(dw) = d_weights {
        grads.insert(w_name, dw);
    }
    if let (Some(name), Some(db)) = (b_name, d_bias) {
        grads.insert(name, db);
    }
}

/// Backpropagates head gradients (`[N, 2]` w.r.t. class logits, `[N, 4]`,
/// `[N, 10]`) through the network, returning one gradient per parameter under
/// the parameter's own name.
pub fn backward(
    spec: &NetworkSpec,
    weights: &WeightStore,
    pass: &TrainForward,
    d_cls_logits: &Tensor,
    d_box: &Tensor,
    d_landmarks: &Tensor,
) -> Result<WeightStore, NetError> {
    let mut grads = WeightStore::new();
    let head_grads = [d_cls_logits, d_box, d_landmarks];
    let mut d_trunk: Option<Tensor> = None;
    for (((kind, head), cache), d) in spec.heads.iter().zip(&pass.heads).zip(head_grads) {
        debug_assert_eq!(d.per_sample(), kind.channels());
        let layer = stage_layer(spec, weights, head)?;
        // P-Net heads are 1×1 convolutions producing [N, C, 1, 1].
        let d = if matches!(head, LayerSpec::Conv { .. }) {
            d.clone().reshape(&[d.batch(), kind.channels(), 1, 1])?
        } else {
            d.clone()
        };
        let g = layer_backward(&layer, Some(cache), &d)?;
        add_param_grads(&mut grads, spec, head, g.d_weights, g.d_bias);
        d_trunk = Some(match d_trunk {
            None => g.d_input,
            Some(mut acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.d_input.data()) {
                    *a += b;
                }
                acc
            }
        });
    }
    let mut d = d_trunk.expect("three heads");
    for (layer_spec, cache) in spec.layers.iter().zip(&pass.trunk).rev() {
        let layer = stage_layer(spec, weights, layer_spec)?;
        let g = layer_backward(&layer, Some(cache), &d)?;
        add_param_grads(&mut grads, spec, layer_spec, g.d_weights, g.d_bias);
        d = g.d_input;
    }
    Ok(grads)
}
