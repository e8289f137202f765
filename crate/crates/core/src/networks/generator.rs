use footprint_tensor::{Element, Graph, Tensor, Var};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{geom, ConvStage, ParameterSet, KERNEL, LEAKY_SLOPE};
use crate::{Error, Result};

/// How the generator's noise input `z` is realized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    /// Dropout in the innermost decoder stages, active whenever a noise seed
    /// is supplied.
    Dropout,
    None,
}

/// Number of innermost decoder stages that carry dropout.
pub const DROPOUT_STAGES: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    /// Downsampling stages `d`; the network has `2d` layers.
    pub depth: usize,
    pub base_filters: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub noise_mode: NoiseMode,
    pub dropout_rate: f64,
    pub patch_size: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            depth: 5,
            base_filters: 64,
            in_channels: 3,
            out_channels: 1,
            noise_mode: NoiseMode::Dropout,
            dropout_rate: 0.5,
            patch_size: 256,
        }
    }
}

impl GeneratorConfig {
    pub fn total_layers(&self) -> usize {
        2 * self.depth
    }

    /// Encoder width at stage `i`: doubles per stage, capped at 8x the base.
    pub fn filters(&self, stage: usize) -> usize {
        (self.base_filters << stage.min(3)).min(8 * self.base_filters)
    }

    pub fn bottleneck_size(&self) -> usize {
        self.patch_size >> self.depth
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.depth > 16 {
            return Err(Error::Config(format!("generator depth must be in 1..=16, got {}", self.depth)));
        }
        if self.base_filters == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("generator filter and channel counts must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout rate must lie in [0, 1), got {}", self.dropout_rate)));
        }
        let unit = 1usize << self.depth;
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(unit) {
            return Err(Error::Config(format!(
                "patch size {} is not divisible by 2^{} = {unit}",
                self.patch_size, self.depth
            )));
        }
        Ok(())
    }
}

/// Channels and spatial size around one stage, for architecture checks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageShape {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_size: usize,
    pub out_size: usize,
}

/// U-Net encoder-decoder with skip connections.
///
/// Layer `i` of the encoder is concatenated (along channels) with layer
/// `n - i` of the decoder, `n = 2d`. Encoder stages use leaky ReLU, decoder
/// stages ReLU, and the output passes through `tanh`.
#[derive(Clone, Debug)]
pub struct Generator<E> {
    cfg: GeneratorConfig,
    params: ParameterSet<E>,
    encoder: Vec<ConvStage>,
    decoder: Vec<ConvStage>,
}

impl<E: Element> Generator<E> {
    /// Builds and initializes the network deterministically from `seed`.
    pub fn new(cfg: GeneratorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterSet::new();
        let d = cfg.depth;
        let k = KERNEL;

        let mut encoder = Vec::with_capacity(d);
        for i in 0..d {
            let cin = if i == 0 { cfg.in_channels } else { cfg.filters(i - 1) };
            let cout = cfg.filters(i);
            // the outermost stage and the bottleneck stay unnormalized; a 1x1
            // bottleneck would otherwise be normalized to zero
            let normalized = i > 0 && i + 1 < d;
            encoder.push(ConvStage::register(
                &mut params,
                &format!("enc{i}"),
                [cout, cin, k, k],
                cout,
                normalized,
                &mut rng,
            )?);
        }

        let mut decoder = Vec::with_capacity(d);
        for j in 0..d {
            let cin = if j == 0 { cfg.filters(d - 1) } else { 2 * cfg.filters(d - 1 - j) };
            let last = j + 1 == d;
            let cout = if last { cfg.out_channels } else { cfg.filters(d - 2 - j) };
            // transposed-convolution weights are laid out [in, out, k, k]
            decoder.push(ConvStage::register(
                &mut params,
                &format!("dec{j}"),
                [cin, cout, k, k],
                cout,
                !last,
                &mut rng,
            )?);
        }

        Ok(Self {
            cfg,
            params,
            encoder,
            decoder,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParameterSet<E> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet<E> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.num_scalars()
    }

    /// Per-stage channel and spatial bookkeeping derived from the weights.
    pub fn stage_shapes(&self) -> Vec<StageShape> {
        let mut out = Vec::new();
        let mut size = self.cfg.patch_size;
        for (i, st) in self.encoder.iter().enumerate() {
            let w = self.params.by_index(st.weight).shape();
            out.push(StageShape {
                name: format!("enc{i}"),
                in_channels: w[1],
                out_channels: w[0],
                in_size: size,
                out_size: size / 2,
            });
            size /= 2;
        }
        for (j, st) in self.decoder.iter().enumerate() {
            let w = self.params.by_index(st.weight).shape();
            out.push(StageShape {
                name: format!("dec{j}"),
                in_channels: w[0],
                out_channels: w[1],
                in_size: size,
                out_size: size * 2,
            });
            size *= 2;
        }
        out
    }

    /// Records the forward pass in `g`. `vars` comes from binding
    /// [`params`](Self::params); `condition` is `[N, C, P, P]`. Dropout is
    /// applied only when `noise` is given and the noise mode is dropout.
    pub fn forward_graph(
        &self,
        g: &Graph<E>,
        vars: &[Var],
        condition: Var,
        mut noise: Option<&mut dyn RngCore>,
    ) -> Var {
        let d = self.cfg.depth;
        let slope = E::from_f64(LEAKY_SLOPE);
        let mut skips = Vec::with_capacity(d);
        let mut h = condition;
        for st in &self.encoder {
            let y = g.conv2d(h, vars[st.weight], geom());
            h = g.leaky_relu(st.finish(g, vars, y), slope);
            skips.push(h);
        }

        let mut u = skips[d - 1];
        for (j, st) in self.decoder.iter().enumerate() {
            let input = if j == 0 { u } else { g.concat(&[u, skips[d - 1 - j]], 1) };
            let s = g.shape(input);
            let y = g.conv_transpose2d(input, vars[st.weight], geom(), (2 * s[2], 2 * s[3]));
            let y = st.finish(g, vars, y);
            if j + 1 == d {
                return g.tanh(y);
            }
            let y = match noise.as_deref_mut() {
                Some(rng) if self.cfg.noise_mode == NoiseMode::Dropout && j < DROPOUT_STAGES => {
                    let shape = g.shape(y);
                    g.mul_const(y, dropout_mask(&shape, self.cfg.dropout_rate, rng))
                }
                _ => y,
            };
            u = g.relu(y);
        }
        unreachable!("depth >= 1 guarantees a final decoder stage")
    }

    fn check_condition(&self, shape: &[usize]) -> Result<()> {
        let p = self.cfg.patch_size;
        let ok = match shape {
            [c, h, w] | [_, c, h, w] => *c == self.cfg.in_channels && *h == p && *w == p,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "generator expects [{}, {p}, {p}] (optionally batched), got {shape:?}",
                self.cfg.in_channels
            )))
        }
    }

    /// Evaluates the generator on `[C, P, P]` or `[N, C, P, P]` input.
    ///
    /// With `noise_seed = Some(s)` and dropout noise, the dropout masks are
    /// drawn from `s`; otherwise the output is deterministic. Values lie in
    /// (-1, 1).
    pub fn generate(&self, condition: &Tensor<E>, noise_seed: Option<u64>) -> Result<Tensor<E>> {
        self.check_condition(condition.shape())?;
        let unbatched = condition.shape().len() == 3;
        let input = if unbatched {
            let s = condition.shape();
            condition.reshape(&[1, s[0], s[1], s[2]])
        } else {
            condition.clone()
        };
        let g = Graph::new();
        let vars = self.params.bind(&g, false);
        let x = g.constant(input);
        let mut rng = noise_seed.map(ChaCha8Rng::seed_from_u64);
        let out = self.forward_graph(&g, &vars, x, rng.as_mut().map(|r| r as &mut dyn RngCore));
        let out = g.value(out);
        Ok(if unbatched {
            let s = out.shape().to_vec();
            out.reshape(&s[1..])
        } else {
            out
        })
    }
}

/// Inverted-dropout mask: 0 with probability `rate`, else `1 / (1 - rate)`.
pub(crate) fn dropout_mask<E: Element>(shape: &[usize], rate: f64, rng: &mut dyn RngCore) -> Tensor<E> {
    let keep = E::from_f64(1.0 / (1.0 - rate));
    Tensor::from_fn(shape, |_| if rng.random::<f64>() < rate { E::zero() } else { keep })
}
