//! Network assembly: layers, parameter registry, the canonical
//! architectures, initialization and checkpoint persistence.

pub mod adn;
pub mod checkpoint;
pub mod config;
pub mod init;
pub mod refinenet;

pub use adn::{build_adc_block, build_adn};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{AdnConfig, DenseBlockConfig, ModelConfig, RefineNetConfig};
pub use init::init_parameters;
pub use refinenet::build_refinenet;

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::nn::{
    batch_norm, concat_channels, conv2d, global_avg_pool, linear, pool2d, prelu, BnConfig,
    BnRunning, ConvSpec, Mode, PoolMode,
};
use crate::tensor::{Element, Tensor};

/// What a parameter is, which decides how it is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight { fan_in: usize },
    LinearWeight { fan_in: usize },
    Bias,
    BnScale,
    BnShift,
    PreluSlope,
}

/// A named, replaceable parameter slot. The tensor inside is immutable;
/// optimizer steps swap in a new tensor of the same shape.
pub struct Param<E: Element> {
    name: String,
    kind: ParamKind,
    value: RefCell<Tensor<E>>,
}

pub type ParamRef<E> = Rc<Param<E>>;

impl<E: Element> Param<E> {
    pub fn new(name: impl Into<String>, kind: ParamKind, value: Tensor<E>) -> ParamRef<E> {
        Rc::new(Param {
            name: name.into(),
            kind,
            value: RefCell::new(value.requires_grad(true)),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> ParamKind {
        self.kind
    }

    /// Current value (cheap handle clone).
    pub fn tensor(&self) -> Tensor<E> {
        self.value.borrow().clone()
    }

    /// Replace the value; the new tensor keeps gradient-leaf status.
    pub fn set(&self, t: Tensor<E>) {
        assert_eq!(
            t.shape(),
            self.value.borrow().shape(),
            "parameter {} shape changed",
            self.name
        );
        *self.value.borrow_mut() = t.requires_grad(true);
    }

    pub fn numel(&self) -> usize {
        self.value.borrow().numel()
    }
}

pub struct ConvLayer<E: Element> {
    pub spec: ConvSpec,
    pub weight: ParamRef<E>,
    pub bias: Option<ParamRef<E>>,
}

impl<E: Element> ConvLayer<E> {
    fn new(name: &str, spec: ConvSpec, params: &mut Vec<ParamRef<E>>) -> Result<Self> {
        let weight = Param::new(
            format!("{name}.weight"),
            ParamKind::ConvWeight {
                fan_in: spec.weight_fan_in(),
            },
            Tensor::zeros(spec.weight_shape())?,
        );
        params.push(Rc::clone(&weight));
        let bias = if spec.bias {
            let b = Param::new(
                format!("{name}.bias"),
                ParamKind::Bias,
                Tensor::zeros(vec![spec.out_channels])?,
            );
            params.push(Rc::clone(&b));
            Some(b)
        } else {
            None
        };
        Ok(ConvLayer { spec, weight, bias })
    }

    fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let w = self.weight.tensor();
        let b = self.bias.as_ref().map(|p| p.tensor());
        conv2d(x, &w, b.as_ref(), &self.spec)
    }
}

pub struct BatchNormLayer<E: Element> {
    pub scale: ParamRef<E>,
    pub shift: ParamRef<E>,
    pub running: BnRunning<E>,
    pub cfg: BnConfig,
    name: String,
}

impl<E: Element> BatchNormLayer<E> {
    fn new(name: &str, channels: usize, params: &mut Vec<ParamRef<E>>) -> Result<Self> {
        let scale = Param::new(
            format!("{name}.scale"),
            ParamKind::BnScale,
            Tensor::filled(vec![channels], crate::tensor::Fill::Constant(1.0))?,
        );
        let shift = Param::new(
            format!("{name}.shift"),
            ParamKind::BnShift,
            Tensor::zeros(vec![channels])?,
        );
        params.push(Rc::clone(&scale));
        params.push(Rc::clone(&shift));
        Ok(BatchNormLayer {
            scale,
            shift,
            running: BnRunning::new(channels),
            cfg: BnConfig::default(),
            name: name.to_string(),
        })
    }

    fn forward(&self, x: &Tensor<E>, mode: Mode) -> Result<Tensor<E>> {
        batch_norm(
            x,
            &self.scale.tensor(),
            &self.shift.tensor(),
            &self.running,
            self.cfg,
            mode,
        )
    }
}

pub struct PReluLayer<E: Element> {
    pub slope: ParamRef<E>,
}

impl<E: Element> PReluLayer<E> {
    fn new(name: &str, channels: usize, params: &mut Vec<ParamRef<E>>) -> Result<Self> {
        let slope = Param::new(
            format!("{name}.slope"),
            ParamKind::PreluSlope,
            Tensor::filled(
                vec![channels],
                crate::tensor::Fill::Constant(crate::nn::PRELU_INIT_SLOPE),
            )?,
        );
        params.push(Rc::clone(&slope));
        Ok(PReluLayer { slope })
    }

    fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        prelu(x, &self.slope.tensor())
    }
}

pub struct LinearLayer<E: Element> {
    pub weight: ParamRef<E>,
    pub bias: Option<ParamRef<E>>,
    pub in_features: usize,
    pub out_features: usize,
}

impl<E: Element> LinearLayer<E> {
    fn new(
        name: &str,
        in_features: usize,
        out_features: usize,
        bias: bool,
        params: &mut Vec<ParamRef<E>>,
    ) -> Result<Self> {
        let weight = Param::new(
            format!("{name}.weight"),
            ParamKind::LinearWeight {
                fan_in: in_features,
            },
            Tensor::zeros(vec![in_features, out_features])?,
        );
        params.push(Rc::clone(&weight));
        let bias = if bias {
            let b = Param::new(
                format!("{name}.bias"),
                ParamKind::Bias,
                Tensor::zeros(vec![out_features])?,
            );
            params.push(Rc::clone(&b));
            Some(b)
        } else {
            None
        };
        Ok(LinearLayer {
            weight,
            bias,
            in_features,
            out_features,
        })
    }

    fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let w = self.weight.tensor();
        let b = self.bias.as_ref().map(|p| p.tensor());
        linear(x, &w, b.as_ref())
    }
}

/// One composite unit of a dense block: BN -> PReLU -> Conv
/// (pre-activation order).
pub struct DenseUnit<E: Element> {
    pub bn: BatchNormLayer<E>,
    pub act: PReluLayer<E>,
    pub conv: ConvLayer<E>,
}

impl<E: Element> DenseUnit<E> {
    fn forward(&self, x: &Tensor<E>, mode: Mode) -> Result<Tensor<E>> {
        let y = self.bn.forward(x, mode)?;
        let y = self.act.forward(&y)?;
        self.conv.forward(&y)
    }
}

/// Densely connected block of composite units; unit i consumes the
/// concatenation of the block input and all previous unit outputs.
pub struct AdcBlockLayer<E: Element> {
    pub config: DenseBlockConfig,
    pub units: Vec<DenseUnit<E>>,
}

impl<E: Element> AdcBlockLayer<E> {
    fn forward(&self, x: &Tensor<E>, mode: Mode) -> Result<Tensor<E>> {
        let mut feats: Vec<Tensor<E>> = vec![x.clone()];
        for unit in &self.units {
            let input = if feats.len() == 1 {
                feats[0].clone()
            } else {
                concat_channels(&feats)?
            };
            let y = unit.forward(&input, mode)?;
            feats.push(y);
        }
        concat_channels(&feats)
    }

    /// Input channel width of each unit, read off the built convolutions.
    pub fn unit_input_channels(&self) -> Vec<usize> {
        self.units
            .iter()
            .map(|u| u.conv.spec.in_channels)
            .collect()
    }

    pub fn output_channels(&self) -> usize {
        self.config.output_channels()
    }
}

/// Between-block transition: BN -> PReLU -> 1x1 conv halving the channel
/// count -> 2x2 max pooling.
pub struct TransitionLayer<E: Element> {
    pub bn: BatchNormLayer<E>,
    pub act: PReluLayer<E>,
    pub conv: ConvLayer<E>,
}

impl<E: Element> TransitionLayer<E> {
    fn forward(&self, x: &Tensor<E>, mode: Mode) -> Result<Tensor<E>> {
        let y = self.bn.forward(x, mode)?;
        let y = self.act.forward(&y)?;
        let y = self.conv.forward(&y)?;
        pool2d(&y, PoolMode::Max, (2, 2), (2, 2))
    }
}

pub enum Layer<E: Element> {
    Conv(ConvLayer<E>),
    BatchNorm(BatchNormLayer<E>),
    PRelu(PReluLayer<E>),
    MaxPool {
        window: (usize, usize),
        stride: (usize, usize),
    },
    GlobalAvgPool,
    /// (N, C, H, W) -> (N, C*H*W)
    Flatten,
    Linear(LinearLayer<E>),
    AdcBlock(AdcBlockLayer<E>),
    Transition(TransitionLayer<E>),
}

impl<E: Element> Layer<E> {
    fn forward(&self, x: &Tensor<E>, mode: Mode) -> Result<Tensor<E>> {
        match self {
            Layer::Conv(l) => l.forward(x),
            Layer::BatchNorm(l) => l.forward(x, mode),
            Layer::PRelu(l) => l.forward(x),
            Layer::MaxPool { window, stride } => pool2d(x, PoolMode::Max, *window, *stride),
            Layer::GlobalAvgPool => global_avg_pool(x),
            Layer::Flatten => {
                let s = x.shape();
                let n = s[0];
                let rest: usize = s[1..].iter().product();
                x.reshape(vec![n, rest])
            }
            Layer::Linear(l) => l.forward(x),
            Layer::AdcBlock(l) => l.forward(x, mode),
            Layer::Transition(l) => l.forward(x, mode),
        }
    }

    /// Number of weighted layers (convolutions and fully connected) inside.
    fn weighted_count(&self) -> usize {
        match self {
            Layer::Conv(_) | Layer::Linear(_) => 1,
            Layer::AdcBlock(b) => b.units.len(),
            Layer::Transition(_) => 1,
            _ => 0,
        }
    }
}

/// Shared handle to one named state tensor (parameter or BN buffer).
pub enum StateSlot<E: Element> {
    Param(ParamRef<E>),
    Buffer(Rc<RefCell<Vec<E>>>),
}

/// An assembled network: an ordered layer list plus its parameter registry.
pub struct ModelGraph<E: Element> {
    config: ModelConfig,
    layers: Vec<Layer<E>>,
    params: Vec<ParamRef<E>>,
    mode: Cell<Mode>,
    min_spatial: usize,
}

impl<E: Element> ModelGraph<E> {
    pub(crate) fn assemble(
        config: ModelConfig,
        layers: Vec<Layer<E>>,
        params: Vec<ParamRef<E>>,
        min_spatial: usize,
    ) -> Result<Self> {
        // Parameter names must stay unique: the checkpoint directory and
        // the optimizer state are both keyed by name.
        let mut seen = std::collections::HashSet::new();
        for p in &params {
            if !seen.insert(p.name().to_string()) {
                return Err(Error::Contract(format!(
                    "duplicate parameter name {}",
                    p.name()
                )));
            }
        }
        Ok(ModelGraph {
            config,
            layers,
            params,
            mode: Cell::new(Mode::Eval),
            min_spatial,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn class_count(&self) -> usize {
        self.config.class_count()
    }

    pub fn input_channels(&self) -> usize {
        self.config.input_channels()
    }

    /// Smallest admissible input height/width.
    pub fn min_spatial(&self) -> usize {
        self.min_spatial
    }

    pub fn layers(&self) -> &[Layer<E>] {
        &self.layers
    }

    pub fn parameters(&self) -> &[ParamRef<E>] {
        &self.params
    }

    pub fn set_mode(&self, mode: Mode) {
        self.mode.set(mode);
    }

    pub fn mode(&self) -> Mode {
        self.mode.get()
    }

    /// Run the network on an NCHW batch, producing N x K logits.
    pub fn forward(&self, input: &Tensor<E>) -> Result<Tensor<E>> {
        self.forward_with_features(input).map(|(_, logits)| logits)
    }

    /// Like [`Self::forward`] but also returns the penultimate activation:
    /// the input of the final fully connected layer.
    pub fn forward_with_features(&self, input: &Tensor<E>) -> Result<(Tensor<E>, Tensor<E>)> {
        let s = input.shape();
        if s.len() != 4 || s[1] != self.input_channels() {
            return Err(Error::InvalidInput(format!(
                "model expects NCHW input with {} channels, got {s:?}",
                self.input_channels()
            )));
        }
        if s[2] < self.min_spatial || s[3] < self.min_spatial {
            return Err(Error::InvalidInput(format!(
                "input {}x{} below the model's minimum spatial size {}",
                s[2], s[3], self.min_spatial
            )));
        }
        let last_linear = self
            .layers
            .iter()
            .rposition(|l| matches!(l, Layer::Linear(_)));
        let mode = self.mode.get();
        let mut x = input.clone();
        let mut features = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            if Some(i) == last_linear {
                features = x.clone();
            }
            x = layer.forward(&x, mode)?;
        }
        Ok((features, x))
    }

    /// Exact number of learnable parameter elements.
    pub fn count_parameters(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }

    /// Weighted layers: convolutions plus fully connected layers.
    pub fn weighted_layer_count(&self) -> usize {
        self.layers.iter().map(|l| l.weighted_count()).sum()
    }

    /// Spatial size of the activation entering the first global average
    /// pool, computed from layer arithmetic without running the network.
    pub fn pre_pool_spatial(&self, mut h: usize, mut w: usize) -> Result<(usize, usize)> {
        for layer in &self.layers {
            match layer {
                Layer::GlobalAvgPool => return Ok((h, w)),
                Layer::Conv(c) => {
                    let (oh, ow) = c.spec.output_size(h, w)?;
                    h = oh;
                    w = ow;
                }
                Layer::MaxPool { window, stride } => {
                    h = (h - window.0) / stride.0 + 1;
                    w = (w - window.1) / stride.1 + 1;
                }
                Layer::AdcBlock(_) => {} // same-padded stride-1 units
                Layer::Transition(_) => {
                    h = (h - 2) / 2 + 1;
                    w = (w - 2) / 2 + 1;
                }
                _ => {}
            }
        }
        Err(Error::Contract(
            "model has no global average pooling layer".into(),
        ))
    }

    /// Ordered named state: parameters first (registry order), then batch
    /// norm running buffers (layer order). Checkpoints and deep clones
    /// address state through this directory.
    pub fn state_slots(&self) -> Vec<(String, StateSlot<E>)> {
        let mut out: Vec<(String, StateSlot<E>)> = self
            .params
            .iter()
            .map(|p| (p.name().to_string(), StateSlot::Param(Rc::clone(p))))
            .collect();
        fn push_bn<E: Element>(out: &mut Vec<(String, StateSlot<E>)>, bn: &BatchNormLayer<E>) {
            out.push((
                format!("{}.running_mean", bn.name),
                StateSlot::Buffer(Rc::clone(&bn.running.mean)),
            ));
            out.push((
                format!("{}.running_var", bn.name),
                StateSlot::Buffer(Rc::clone(&bn.running.var)),
            ));
        }
        for layer in &self.layers {
            match layer {
                Layer::BatchNorm(bn) => push_bn(&mut out, bn),
                Layer::AdcBlock(b) => {
                    for u in &b.units {
                        push_bn(&mut out, &u.bn);
                    }
                }
                Layer::Transition(t) => push_bn(&mut out, &t.bn),
                _ => {}
            }
        }
        out
    }

    /// Structurally identical copy with its own parameter and buffer
    /// storage (used to snapshot the best model during refinement).
    pub fn deep_clone(&self) -> Result<Self> {
        let clone = build_model(self.config.clone())?;
        for ((_, src), (name, dst)) in self.state_slots().into_iter().zip(clone.state_slots()) {
            match (src, dst) {
                (StateSlot::Param(s), StateSlot::Param(d)) => d.set(s.tensor()),
                (StateSlot::Buffer(s), StateSlot::Buffer(d)) => {
                    d.borrow_mut().copy_from_slice(&s.borrow());
                }
                _ => return Err(Error::Contract(format!("state slot mismatch at {name}"))),
            }
        }
        clone.set_mode(self.mode());
        Ok(clone)
    }
}

/// Build any architecture from its config.
pub fn build_model<E: Element>(config: ModelConfig) -> Result<ModelGraph<E>> {
    config.validate()?;
    match &config {
        ModelConfig::Refinenet(c) => refinenet::build_refinenet_from(c.clone()),
        ModelConfig::Adn(c) => adn::build_adn_from(c.clone()),
    }
}

pub(crate) fn conv_layer<E: Element>(
    name: &str,
    spec: ConvSpec,
    params: &mut Vec<ParamRef<E>>,
) -> Result<ConvLayer<E>> {
    ConvLayer::new(name, spec, params)
}

pub(crate) fn bn_layer<E: Element>(
    name: &str,
    channels: usize,
    params: &mut Vec<ParamRef<E>>,
) -> Result<BatchNormLayer<E>> {
    BatchNormLayer::new(name, channels, params)
}

pub(crate) fn prelu_layer<E: Element>(
    name: &str,
    channels: usize,
    params: &mut Vec<ParamRef<E>>,
) -> Result<PReluLayer<E>> {
    PReluLayer::new(name, channels, params)
}

pub(crate) fn linear_layer<E: Element>(
    name: &str,
    in_features: usize,
    out_features: usize,
    bias: bool,
    params: &mut Vec<ParamRef<E>>,
) -> Result<LinearLayer<E>> {
    LinearLayer::new(name, in_features, out_features, bias, params)
}
