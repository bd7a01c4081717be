use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Shape of the patch-MLP encoder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    /// Side of the square input patch in pixels.
    pub input_size: usize,
    /// Side of the non-overlapping token patches.
    pub patch: usize,
    /// Backbone width.
    pub hidden: usize,
    /// Output feature dimension of the projection head.
    pub feature_dim: usize,
    /// Subtract each token's per-channel mean before the embedding.
    pub center_tokens: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_size: 64,
            patch: 8,
            hidden: 128,
            feature_dim: 64,
            center_tokens: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.input_size == 0 || self.input_size % self.patch != 0 {
            return Err(Error::invalid(format!(
                "input size {} is not a positive multiple of patch {}",
                self.input_size, self.patch
            )));
        }
        if self.hidden == 0 || self.feature_dim == 0 {
            return Err(Error::invalid("encoder widths must be positive"));
        }
        Ok(())
    }

    pub fn tokens(&self) -> usize {
        let g = self.input_size / self.patch;
        g * g
    }

    pub fn token_dim(&self) -> usize {
        self.patch * self.patch * 3
    }

    /// `(layer, fan_in, fan_out)` in parameter order.
    pub fn shapes(&self) -> [(Layer, usize, usize); 5] {
        let (d, h, f) = (self.token_dim(), self.hidden, self.feature_dim);
        [
            (Layer::Embed, d, h),
            (Layer::Hidden1, h, h),
            (Layer::Hidden2, h, h),
            (Layer::Head1, h, h),
            (Layer::Head2, h, f),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.shapes().iter().map(|&(_, i, o)| i * o + o).sum()
    }

    pub fn layout(&self) -> Vec<LayerSlot> {
        let mut offset = 0;
        self.shapes()
            .iter()
            .map(|&(layer, fan_in, fan_out)| {
                let weight = offset..offset + fan_in * fan_out;
                let bias = weight.end..weight.end + fan_out;
                offset = bias.end;
                LayerSlot {
                    layer,
                    fan_in,
                    fan_out,
                    weight,
                    bias,
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Embed,
    Hidden1,
    Hidden2,
    Head1,
    Head2,
}

impl Layer {
    pub const BACKBONE: [Layer; 3] = [Layer::Embed, Layer::Hidden1, Layer::Hidden2];
    pub const HEAD: [Layer; 2] = [Layer::Head1, Layer::Head2];
}

/// Where one layer lives in the flat parameter vector. Weights are stored
/// row-major as `fan_in x fan_out`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSlot {
    pub layer: Layer,
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight: Range<usize>,
    pub bias: Range<usize>,
}

impl LayerSlot {
    pub fn span(&self) -> Range<usize> {
        self.weight.start..self.bias.end
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    config: EncoderConfig,
    values: Vec<f64>,
}

impl EncoderParams {
    pub fn zeros(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let n = config.param_count();
        Ok(Self {
            config,
            values: vec![0.0; n],
        })
    }

    /// Fan-in scaled uniform init: weights `U(+-sqrt(6 / fan_in))`, biases
    /// `U(+-1 / sqrt(fan_in))`, each layer from its own sub-stream.
    pub fn init(config: EncoderConfig, rng: &RngStream) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        for (i, slot) in p.config.layout().into_iter().enumerate() {
            let mut r = rng.at("layer", i as u64);
            let wb = (6.0 / slot.fan_in as f64).sqrt();
            let bb = 1.0 / (slot.fan_in as f64).sqrt();
            for v in &mut p.values[slot.weight.clone()] {
                *v = r.uniform(-wb, wb);
            }
            for v in &mut p.values[slot.bias.clone()] {
                *v = r.uniform(-bb, bb);
            }
        }
        Ok(p)
    }

    /// Rejects wrong lengths and non-finite values.
    pub fn from_values(config: EncoderConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if values.len() != config.param_count() {
            return Err(Error::invalid(format!(
                "{} parameters given, encoder needs {}",
                values.len(),
                config.param_count()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {i} is {}", values[i])));
        }
        Ok(Self { config, values })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn slot(&self, layer: Layer) -> LayerSlot {
        self.config
            .layout()
            .into_iter()
            .find(|s| s.layer == layer)
            .expect("every layer has a slot")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_count_is_a_function_of_shape() {
        let cfg = EncoderConfig::default();
        // 192*128+128 + 2*(128*128+128) + 128*128+128 + 128*64+64
        assert_eq!(cfg.param_count(), 24_704 + 2 * 16_512 + 16_512 + 8_256);
        let layout = cfg.layout();
        assert_eq!(layout.last().unwrap().bias.end, cfg.param_count());
        for w in layout.windows(2) {
            assert_eq!(w[0].bias.end, w[1].weight.start);
        }
    }

    #[test]
    fn rejects_bad_shapes_and_values() {
        let bad = EncoderConfig {
            input_size: 10,
            patch: 4,
            ..EncoderConfig::default()
        };
        assert!(EncoderParams::zeros(bad).is_err());
        let cfg = EncoderConfig {
            input_size: 4,
            patch: 2,
            hidden: 2,
            feature_dim: 2,
            center_tokens: true,
        };
        let n = cfg.param_count();
        assert!(EncoderParams::from_values(cfg.clone(), vec![0.0; n - 1]).is_err());
        let mut v = vec![0.0; n];
        v[3] = f64::INFINITY;
        assert!(matches!(EncoderParams::from_values(cfg, v), Err(Error::NonFinite(_))));
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = EncoderConfig::default();
        let a = EncoderParams::init(cfg.clone(), &RngStream::new(3)).unwrap();
        let b = EncoderParams::init(cfg.clone(), &RngStream::new(3)).unwrap();
        assert_eq!(a, b);
        let slot = a.slot(Layer::Embed);
        let bound = (6.0 / 192.0f64).sqrt();
        assert!(a.values()[slot.weight].iter().all(|v| v.abs() <= bound));
    }
}
