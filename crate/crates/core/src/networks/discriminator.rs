use footprint_tensor::{Element, Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{geom, ConvStage, ParameterSet, KERNEL, LEAKY_SLOPE};
use crate::losses::Critic;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorConfig {
    /// Stride-2 stages, including the 1-channel output stage.
    pub num_down_layers: usize,
    pub base_filters: usize,
    pub condition_channels: usize,
    pub target_channels: usize,
    pub patch_size: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            num_down_layers: 5,
            base_filters: 64,
            condition_channels: 3,
            target_channels: 1,
            patch_size: 256,
        }
    }
}

impl DiscriminatorConfig {
    pub fn input_channels(&self) -> usize {
        self.condition_channels + self.target_channels
    }

    /// Output channels of layer `l`; the last layer emits one score channel.
    pub fn filters(&self, layer: usize) -> usize {
        if layer + 1 == self.num_down_layers {
            1
        } else {
            (self.base_filters << layer.min(3)).min(8 * self.base_filters)
        }
    }

    pub fn score_map_size(&self) -> usize {
        self.patch_size >> self.num_down_layers
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_down_layers == 0 || self.num_down_layers > 16 {
            return Err(Error::Config(format!(
                "discriminator needs 1..=16 down layers, got {}",
                self.num_down_layers
            )));
        }
        if self.base_filters == 0 || self.condition_channels == 0 || self.target_channels == 0 {
            return Err(Error::Config("discriminator filter and channel counts must be positive".into()));
        }
        let unit = 1usize << self.num_down_layers;
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(unit) {
            return Err(Error::Config(format!(
                "patch size {} is not divisible by 2^{} = {unit}",
                self.patch_size, self.num_down_layers
            )));
        }
        Ok(())
    }
}

/// PatchGAN critic over `concat(condition, mask)`.
///
/// Every layer halves the spatial size; leaky ReLU sits between layers and
/// the final score map is left raw so the same network serves the
/// probability-based and Wasserstein losses.
#[derive(Clone, Debug)]
pub struct Discriminator<E> {
    cfg: DiscriminatorConfig,
    params: ParameterSet<E>,
    layers: Vec<ConvStage>,
}

impl<E: Element> Discriminator<E> {
    pub fn new(cfg: DiscriminatorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterSet::new();
        let n = cfg.num_down_layers;
        let mut layers = Vec::with_capacity(n);
        for l in 0..n {
            let cin = if l == 0 { cfg.input_channels() } else { cfg.filters(l - 1) };
            let cout = cfg.filters(l);
            let normalized = l > 0 && l + 1 < n;
            layers.push(ConvStage::register(
                &mut params,
                &format!("layer{l}"),
                [cout, cin, KERNEL, KERNEL],
                cout,
                normalized,
                &mut rng,
            )?);
        }
        Ok(Self { cfg, params, layers })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
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

    /// `(in_size, out_size)` per layer.
    pub fn stage_sizes(&self) -> Vec<(usize, usize)> {
        (0..self.layers.len())
            .map(|l| (self.cfg.patch_size >> l, self.cfg.patch_size >> (l + 1)))
            .collect()
    }

    /// Records the score map `[N, 1, P/2^L, P/2^L]` in `g`.
    pub fn score_map_graph(&self, g: &Graph<E>, vars: &[Var], condition: Var, mask: Var) -> Var {
        let slope = E::from_f64(LEAKY_SLOPE);
        let mut h = g.concat(&[condition, mask], 1);
        let last = self.layers.len() - 1;
        for (l, st) in self.layers.iter().enumerate() {
            let y = st.finish(g, vars, g.conv2d(h, vars[st.weight], geom()));
            h = if l == last { y } else { g.leaky_relu(y, slope) };
        }
        h
    }

    /// Binds parameters into `g` so the network can act as a [`Critic`].
    pub fn bind<'a>(&'a self, g: &Graph<E>, trainable: bool) -> BoundDiscriminator<'a, E> {
        BoundDiscriminator {
            disc: self,
            vars: self.params.bind(g, trainable),
        }
    }

    fn check(&self, what: &str, shape: &[usize], channels: usize) -> Result<()> {
        let p = self.cfg.patch_size;
        match shape {
            [c, h, w] | [_, c, h, w] if *c == channels && *h == p && *w == p => Ok(()),
            _ => Err(Error::Shape(format!(
                "discriminator {what} must be [{channels}, {p}, {p}] (optionally batched), got {shape:?}"
            ))),
        }
    }

    /// Evaluates the raw score map for unbatched `[C, P, P]` / `[1, P, P]`
    /// inputs (returning `[1, s, s]`) or batched inputs (returning
    /// `[N, 1, s, s]`).
    pub fn score_map(&self, condition: &Tensor<E>, mask: &Tensor<E>) -> Result<Tensor<E>> {
        self.check("condition", condition.shape(), self.cfg.condition_channels)?;
        self.check("mask", mask.shape(), self.cfg.target_channels)?;
        if condition.shape().len() != mask.shape().len()
            || (condition.shape().len() == 4 && condition.shape()[0] != mask.shape()[0])
        {
            return Err(Error::Shape(format!(
                "condition {:?} and mask {:?} disagree on batching",
                condition.shape(),
                mask.shape()
            )));
        }
        let unbatched = condition.shape().len() == 3;
        let batch = |t: &Tensor<E>| {
            if unbatched {
                let s = t.shape();
                t.reshape(&[1, s[0], s[1], s[2]])
            } else {
                t.clone()
            }
        };
        let g = Graph::new();
        let vars = self.params.bind(&g, false);
        let (c, m) = (g.constant(batch(condition)), g.constant(batch(mask)));
        let out = g.value(self.score_map_graph(&g, &vars, c, m));
        Ok(if unbatched {
            let s = out.shape().to_vec();
            out.reshape(&s[1..])
        } else {
            out
        })
    }
}

/// A discriminator whose parameters are registered in a particular graph.
pub struct BoundDiscriminator<'a, E> {
    disc: &'a Discriminator<E>,
    vars: Vec<Var>,
}

impl<E: Element> BoundDiscriminator<'_, E> {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl<E: Element> Critic<E> for BoundDiscriminator<'_, E> {
    fn score_map(&self, g: &Graph<E>, condition: Var, mask: Var) -> Var {
        self.disc.score_map_graph(g, &self.vars, condition, mask)
    }
}
