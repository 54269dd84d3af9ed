//! Serializable architecture descriptions.
//!
//! Every width, growth rate and dilation of the canonical assemblies lives
//! here so alternate topologies are expressible from a JSON config file.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Densely connected block: unit i (0-based) consumes the concatenation of
/// the block input and all previous unit outputs, so its input width is
/// `input_channels + growth * i`, and every unit emits `growth` maps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseBlockConfig {
    /// Unit count l.
    pub units: usize,
    /// Growth rate k: feature maps each unit contributes.
    pub growth: usize,
    /// Block input channels k0.
    pub input_channels: usize,
    /// Per-unit dilation rate of the 3x3 convolution.
    pub dilations: Vec<usize>,
}

impl DenseBlockConfig {
    /// The atrous dense connection block: four units with dilation
    /// sequence (2, 1, 3, 1) — a common 3x3 convolution follows each
    /// atrous one, all densely concatenated.
    pub fn adc(input_channels: usize, growth: usize) -> Self {
        DenseBlockConfig {
            units: 4,
            growth,
            input_channels,
            dilations: vec![2, 1, 3, 1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.units == 0 || self.growth == 0 || self.input_channels == 0 {
            return Err(Error::Contract(format!("degenerate dense block {self:?}")));
        }
        if self.dilations.len() != self.units || self.dilations.iter().any(|&d| d == 0) {
            return Err(Error::Contract(format!(
                "dense block needs one positive dilation per unit, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Input channels of unit `i` (0-based): k0 + k*i.
    pub fn unit_input_channels(&self, i: usize) -> usize {
        self.input_channels + self.growth * i
    }

    /// Channels leaving the block: k0 + l*k.
    pub fn output_channels(&self) -> usize {
        self.input_channels + self.units * self.growth
    }
}

fn default_rn_conv_channels() -> Vec<usize> {
    vec![16, 32, 64, 64, 128, 128]
}

fn default_fc_width() -> usize {
    256
}

/// The small six-convolution refinement network: 3x3 convolutions of the
/// configured widths, 2x2 max pooling after all but the last, then global
/// average pooling and two fully connected layers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefineNetConfig {
    pub input_channels: usize,
    pub class_count: usize,
    #[serde(default = "default_rn_conv_channels")]
    pub conv_channels: Vec<usize>,
    #[serde(default = "default_fc_width")]
    pub fc_width: usize,
}

impl RefineNetConfig {
    pub fn new(input_channels: usize, class_count: usize) -> Self {
        RefineNetConfig {
            input_channels,
            class_count,
            conv_channels: default_rn_conv_channels(),
            fc_width: default_fc_width(),
        }
    }
}

fn default_stem_channels() -> usize {
    16
}

fn default_growth_rates() -> Vec<usize> {
    vec![8, 16, 32]
}

fn default_unit_dilations() -> Vec<usize> {
    vec![2, 1, 3, 1]
}

fn default_nin_channels() -> Vec<usize> {
    vec![128, 128]
}

/// The full atrous DenseNet: a 3x3 stem, one ADC block per growth rate
/// with a transition (1x1 channel-halving convolution + 2x2 max pool)
/// after each, a network-in-network head of 1x1 convolutions, global
/// average pooling and a final fully connected classifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdnConfig {
    pub input_channels: usize,
    pub class_count: usize,
    #[serde(default = "default_stem_channels")]
    pub stem_channels: usize,
    /// Growth rate per ADC block, increasing with depth.
    #[serde(default = "default_growth_rates")]
    pub growth_rates: Vec<usize>,
    /// Dilation sequence inside every ADC block.
    #[serde(default = "default_unit_dilations")]
    pub unit_dilations: Vec<usize>,
    /// Widths of the 1x1 convolutions in the head.
    #[serde(default = "default_nin_channels")]
    pub nin_channels: Vec<usize>,
}

impl AdnConfig {
    pub fn new(input_channels: usize, class_count: usize) -> Self {
        AdnConfig {
            input_channels,
            class_count,
            stem_channels: default_stem_channels(),
            growth_rates: default_growth_rates(),
            unit_dilations: default_unit_dilations(),
            nin_channels: default_nin_channels(),
        }
    }
}

/// Architecture descriptor, also embedded verbatim in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case")]
pub enum ModelConfig {
    Refinenet(RefineNetConfig),
    Adn(AdnConfig),
}

impl ModelConfig {
    pub fn class_count(&self) -> usize {
        match self {
            ModelConfig::Refinenet(c) => c.class_count,
            ModelConfig::Adn(c) => c.class_count,
        }
    }

    pub fn input_channels(&self) -> usize {
        match self {
            ModelConfig::Refinenet(c) => c.input_channels,
            ModelConfig::Adn(c) => c.input_channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count() < 2 {
            return Err(Error::Contract(format!(
                "class count must be >= 2, got {}",
                self.class_count()
            )));
        }
        if self.input_channels() == 0 {
            return Err(Error::Contract("input channels must be >= 1".into()));
        }
        match self {
            ModelConfig::Refinenet(c) => {
                if c.conv_channels.is_empty() || c.fc_width == 0 {
                    return Err(Error::Contract("degenerate refinenet config".into()));
                }
            }
            ModelConfig::Adn(c) => {
                if c.stem_channels == 0
                    || c.growth_rates.is_empty()
                    || c.unit_dilations.is_empty()
                    || c.nin_channels.is_empty()
                {
                    return Err(Error::Contract("degenerate adn config".into()));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adc_channel_law() {
        let cfg = DenseBlockConfig::adc(16, 8);
        assert_eq!(cfg.unit_input_channels(0), 16);
        assert_eq!(cfg.unit_input_channels(2), 32); // k0 + 2k
        assert_eq!(cfg.output_channels(), 48); // k0 + 4k
    }

    #[test]
    fn config_json_roundtrip() {
        let cfg = ModelConfig::Adn(AdnConfig::new(3, 4));
        let s = serde_json::to_string(&cfg).unwrap();
        assert!(s.contains("\"arch\":\"adn\""));
        let back: ModelConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn defaults_fill_missing_fields() {
        let cfg: ModelConfig =
            serde_json::from_str(r#"{"arch":"adn","input_channels":3,"class_count":4}"#).unwrap();
        match cfg {
            ModelConfig::Adn(c) => {
                assert_eq!(c.stem_channels, 16);
                assert_eq!(c.growth_rates, vec![8, 16, 32]);
                assert_eq!(c.unit_dilations, vec![2, 1, 3, 1]);
            }
            _ => panic!("wrong arch"),
        }
    }
}
