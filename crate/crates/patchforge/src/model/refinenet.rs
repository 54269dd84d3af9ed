//! The six-convolution refinement network used inside the label-cleaning
//! loop: small on purpose, so it stays uncertain on ambiguous patches
//! instead of memorizing them.

use crate::error::Result;
use crate::model::{
    bn_layer as _, conv_layer, linear_layer, prelu_layer, Layer, ModelGraph, ParamRef,
    RefineNetConfig,
};
use crate::model::config::ModelConfig;
use crate::nn::ConvSpec;
use crate::tensor::Element;

/// Pipeline: [3x3 conv -> PReLU -> 2x2 max pool] for every width except
/// the last, then a final 3x3 conv + PReLU, global average pooling
/// (the original fixed-size average pool, generalized so any admissible
/// input size works), a hidden fully connected layer with PReLU, and the
/// classifier. Parameters are left zeroed; call
/// [`crate::model::init_parameters`] before use.
pub fn build_refinenet<E: Element>(
    input_channels: usize,
    class_count: usize,
) -> Result<ModelGraph<E>> {
    build_refinenet_from(RefineNetConfig::new(input_channels, class_count))
}

pub(crate) fn build_refinenet_from<E: Element>(cfg: RefineNetConfig) -> Result<ModelGraph<E>> {
    let mut params: Vec<ParamRef<E>> = Vec::new();
    let mut layers: Vec<Layer<E>> = Vec::new();
    let mut channels = cfg.input_channels;
    let count = cfg.conv_channels.len();
    let mut pools = 0usize;
    for (i, &width) in cfg.conv_channels.iter().enumerate() {
        let name = format!("conv{}", i + 1);
        let spec = ConvSpec::same(channels, width, 3, 1);
        layers.push(Layer::Conv(conv_layer(&name, spec, &mut params)?));
        layers.push(Layer::PRelu(prelu_layer(
            &format!("act{}", i + 1),
            width,
            &mut params,
        )?));
        if i + 1 < count {
            layers.push(Layer::MaxPool {
                window: (2, 2),
                stride: (2, 2),
            });
            pools += 1;
        }
        channels = width;
    }
    layers.push(Layer::GlobalAvgPool);
    layers.push(Layer::Flatten);
    layers.push(Layer::Linear(linear_layer(
        "fc1",
        channels,
        cfg.fc_width,
        true,
        &mut params,
    )?));
    layers.push(Layer::PRelu(prelu_layer(
        "act_fc1",
        cfg.fc_width,
        &mut params,
    )?));
    layers.push(Layer::Linear(linear_layer(
        "fc2",
        cfg.fc_width,
        cfg.class_count,
        true,
        &mut params,
    )?));

    let min_spatial = 1usize << pools;
    ModelGraph::assemble(
        ModelConfig::Refinenet(cfg),
        layers,
        params,
        min_spatial.max(1),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_parameters;
    use crate::tensor::{Fill, Tensor};

    #[test]
    fn logits_shape_and_pre_pool_size_at_224() {
        let model = build_refinenet::<f32>(3, 4).unwrap();
        init_parameters(&model, 1).unwrap();
        assert_eq!(model.pre_pool_spatial(224, 224).unwrap(), (7, 7));
        let x = Tensor::filled(
            vec![1, 3, 224, 224],
            Fill::Uniform {
                lo: 0.0,
                hi: 1.0,
                seed: 2,
            },
        )
        .unwrap();
        let y = model.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 4]);
    }

    #[test]
    fn head_is_size_agnostic() {
        let model = build_refinenet::<f32>(3, 4).unwrap();
        init_parameters(&model, 1).unwrap();
        for size in [32usize, 57, 128] {
            let x = Tensor::filled(
                vec![1, 3, size, size],
                Fill::Uniform {
                    lo: 0.0,
                    hi: 1.0,
                    seed: 3,
                },
            )
            .unwrap();
            let y = model.forward(&x).unwrap();
            assert_eq!(y.shape(), &[1, 4], "at input size {size}");
        }
    }

    #[test]
    fn parameter_count_matches_hand_arithmetic() {
        // Conv weights+biases for widths 16,32,64,64,128,128 on RGB input,
        // the two fully connected layers, and one PReLU slope per channel.
        let model = build_refinenet::<f32>(3, 4).unwrap();
        let convs = 3 * 9 * 16
            + 16
            + 16 * 9 * 32
            + 32
            + 32 * 9 * 64
            + 64
            + 64 * 9 * 64
            + 64
            + 64 * 9 * 128
            + 128
            + 128 * 9 * 128
            + 128;
        let fcs = 128 * 256 + 256 + 256 * 4 + 4;
        let slopes = 16 + 32 + 64 + 64 + 128 + 128 + 256;
        assert_eq!(model.count_parameters(), convs + fcs + slopes);
    }

    #[test]
    fn too_small_input_rejected() {
        let model = build_refinenet::<f32>(3, 4).unwrap();
        let x = Tensor::<f32>::zeros(vec![1, 3, 16, 16]).unwrap();
        assert!(model.forward(&x).is_err());
    }
}
