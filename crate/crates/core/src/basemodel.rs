//! The encoder-decoder network used at every stage.
//!
//! Layout for `depth = D`, `base_channels = B`:
//!
//! ```text
//! enc l (l = 1..D):  conv3x3+relu -> conv3x3+relu -> dropout -> [skip l] -> maxpool2
//! bottleneck:        conv3x3+relu -> conv3x3+relu                 (B * 2^D channels)
//! dec l (l = D..1):  upsample2 -> concat(skip l) -> conv3x3+relu -> conv3x3+relu -> dropout
//! head:              conv3x3 -> sigmoid                           (1 channel)
//! ```
//!
//! Encoder level `l` has `B * 2^(l-1)` channels and so does the decoder level
//! that consumes its skip connection.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::autodiff::{Graph, Var};
use crate::error::{invalid, Result};
use crate::grid::ProbabilityMap;
use crate::tensor::Tensor;
use crate::{seeded_rng, Rng};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FcnConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub dropout_rate: f64,
    /// Image channels plus one for the previous posterior map.
    pub input_channels: usize,
    pub seed: u64,
}

impl Default for FcnConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            base_channels: 16,
            dropout_rate: 0.2,
            input_channels: 4,
            seed: 0,
        }
    }
}

impl FcnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(invalid!("depth must be at least 1"));
        }
        if self.base_channels < 1 {
            return Err(invalid!("base_channels must be at least 1"));
        }
        if self.input_channels < 2 {
            return Err(invalid!(
                "input_channels must cover at least one image channel plus the previous map"
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(invalid!("dropout_rate must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Channel count of encoder level `level` (1-based).
    pub fn level_channels(&self, level: usize) -> usize {
        self.base_channels << (level - 1)
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.base_channels << self.depth
    }

    pub fn image_channels(&self) -> usize {
        self.input_channels - 1
    }

    /// `(name, in_channels, out_channels)` for every conv layer in forward order.
    pub fn layer_specs(&self) -> Vec<(String, usize, usize)> {
        let mut specs = Vec::new();
        let mut ch = self.input_channels;
        for l in 1..=self.depth {
            let out = self.level_channels(l);
            specs.push((format!("enc{l}.conv1"), ch, out));
            specs.push((format!("enc{l}.conv2"), out, out));
            ch = out;
        }
        let bott = self.bottleneck_channels();
        specs.push(("bottleneck.conv1".into(), ch, bott));
        specs.push(("bottleneck.conv2".into(), bott, bott));
        ch = bott;
        for l in (1..=self.depth).rev() {
            let out = self.level_channels(l);
            specs.push((format!("dec{l}.conv1"), ch + out, out));
            specs.push((format!("dec{l}.conv2"), out, out));
            ch = out;
        }
        specs.push(("head".into(), ch, 1));
        specs
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_specs()
            .iter()
            .map(|(_, i, o)| o * i * 9 + o)
            .sum()
    }
}

/// A named trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcnModel {
    config: FcnConfig,
    /// Alternating `<layer>.weight`, `<layer>.bias` in forward order.
    params: Vec<Param>,
}

impl FcnModel {
    /// Builds the network with seeded fan-in-scaled uniform weights
    /// (`U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`) and zero biases.
    pub fn new(config: FcnConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(config.seed);
        let mut params = Vec::new();
        for (name, cin, cout) in config.layer_specs() {
            let fan_in = (cin * 9) as f64;
            let bound = libm::sqrt(6.0 / fan_in);
            let w: Vec<f64> = (0..cout * cin * 9)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            params.push(Param {
                name: format!("{name}.weight"),
                value: Tensor::from_vec(&[cout, cin, 3, 3], w)?,
            });
            params.push(Param {
                name: format!("{name}.bias"),
                value: Tensor::zeros(&[cout]),
            });
        }
        Ok(Self { config, params })
    }

    /// Reassembles a model from stored tensors, checking names and shapes.
    pub fn from_params(config: FcnConfig, params: Vec<Param>) -> Result<Self> {
        config.validate()?;
        let specs = config.layer_specs();
        if params.len() != 2 * specs.len() {
            return Err(invalid!(
                "expected {} parameter tensors, got {}",
                2 * specs.len(),
                params.len()
            ));
        }
        for ((name, cin, cout), pair) in specs.iter().zip(params.chunks(2)) {
            let want_w = format!("{name}.weight");
            let want_b = format!("{name}.bias");
            if pair[0].name != want_w || pair[0].value.shape() != [*cout, *cin, 3, 3] {
                return Err(invalid!("parameter {} has unexpected name or shape", pair[0].name));
            }
            if pair[1].name != want_b || pair[1].value.shape() != [*cout] {
                return Err(invalid!("parameter {} has unexpected name or shape", pair[1].name));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &FcnConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Puts every parameter on the graph, trainable or constant.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    g.variable(p.value.clone())
                } else {
                    g.constant(p.value.clone())
                }
            })
            .collect()
    }

    /// Checks an image/previous-map pair against the model contract.
    pub fn check_input(&self, image: &Tensor, prev: &Tensor) -> Result<(usize, usize)> {
        let (c, h, w) = image.chw()?;
        if c != self.config.image_channels() {
            return Err(invalid!(
                "model expects {} image channels, got {}",
                self.config.image_channels(),
                c
            ));
        }
        if prev.shape() != [1, h, w] {
            return Err(invalid!(
                "previous map must be [1, {}, {}], got {:?}",
                h,
                w,
                prev.shape()
            ));
        }
        let m = 1usize << self.config.depth;
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(invalid!(
                "spatial dims {}x{} must be positive multiples of {}",
                h,
                w,
                m
            ));
        }
        Ok((h, w))
    }

    /// Runs one stage: `image` `[C, H, W]` and `prev` `[1, H, W]` in, posterior
    /// `[1, H, W]` out. `vars` must come from [`FcnModel::bind`].
    pub fn stage_forward(
        &self,
        g: &mut Graph,
        vars: &[Var],
        image: Var,
        prev: Var,
        training: bool,
        rng: &mut Rng,
    ) -> Result<Var> {
        self.check_input(g.value(image), g.value(prev))?;
        let x = g.concat_channels(image, prev)?;
        self.forward(g, vars, x, training, rng)
    }

    fn forward(
        &self,
        g: &mut Graph,
        vars: &[Var],
        input: Var,
        training: bool,
        rng: &mut Rng,
    ) -> Result<Var> {
        if vars.len() != self.params.len() {
            return Err(invalid!(
                "{} bound vars for {} params",
                vars.len(),
                self.params.len()
            ));
        }
        let rate = self.config.dropout_rate;
        let mut layers = vars.chunks(2);
        let mut conv_relu = |g: &mut Graph, x: Var| -> Result<Var> {
            let wb = layers.next().expect("layer list matches config");
            let y = g.conv2d(x, wb[0], wb[1])?;
            Ok(g.relu(y))
        };

        let mut skips = Vec::with_capacity(self.config.depth);
        let mut x = input;
        for _ in 0..self.config.depth {
            x = conv_relu(g, x)?;
            x = conv_relu(g, x)?;
            x = g.dropout(x, rate, training, rng)?;
            skips.push(x);
            x = g.maxpool2(x)?;
        }
        x = conv_relu(g, x)?;
        x = conv_relu(g, x)?;
        for skip in skips.into_iter().rev() {
            x = g.upsample2(x)?;
            x = g.concat_channels(x, skip)?;
            x = conv_relu(g, x)?;
            x = conv_relu(g, x)?;
            x = g.dropout(x, rate, training, rng)?;
        }
        let head = layers.next().expect("head layer");
        let logits = g.conv2d(x, head[0], head[1])?;
        Ok(g.sigmoid(logits))
    }

    /// Inference-mode stage forward outside any training graph.
    pub fn predict(&self, image: &Tensor, prev: &ProbabilityMap) -> Result<ProbabilityMap> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let img = g.constant(image.clone());
        let pv = g.constant(prev.to_tensor());
        // dropout is inactive, so the generator is never consumed
        let mut rng = seeded_rng(0);
        let out = self.stage_forward(&mut g, &vars, img, pv, false, &mut rng)?;
        ProbabilityMap::from_tensor(g.value(out))
    }
}
