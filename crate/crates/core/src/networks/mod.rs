//! U-Net generator, PatchGAN discriminator, and their shared building blocks.
//!
//! Every convolution uses a 4x4 kernel, stride 2, and padding 1, so each
//! encoder or discriminator stage halves the spatial size and each decoder
//! stage doubles it.

mod discriminator;
mod generator;
mod params;

pub use discriminator::{BoundDiscriminator, Discriminator, DiscriminatorConfig};
pub use generator::{Generator, GeneratorConfig, NoiseMode, StageShape};
pub use params::{clip_parameters, ParameterSet};

use footprint_tensor::{ConvGeom, Element, Graph, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub const KERNEL: usize = 4;
pub const STRIDE: usize = 2;
pub const PADDING: usize = 1;
pub const LEAKY_SLOPE: f64 = 0.2;
pub const INIT_STD: f64 = 0.02;
pub const NORM_EPS: f64 = 1e-5;

pub(crate) fn geom() -> ConvGeom {
    ConvGeom::new(STRIDE, PADDING)
}

pub(crate) fn gaussian<E: Element>(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor<E> {
    let normal = Normal::new(0.0, std).expect("std is positive");
    Tensor::from_fn(shape, |_| E::from_f64(normal.sample(rng)))
}

/// Parameter indices of one convolution stage.
#[derive(Clone, Debug)]
pub(crate) struct ConvStage {
    pub weight: usize,
    pub bias: Option<usize>,
    /// `(gamma, beta)` of the per-instance normalization.
    pub norm: Option<(usize, usize)>,
}

impl ConvStage {
    /// Registers weight, bias or normalization parameters under `prefix`.
    /// Stages followed by a normalization carry no bias.
    pub fn register<E: Element>(
        params: &mut ParameterSet<E>,
        prefix: &str,
        weight_shape: [usize; 4],
        channels: usize,
        normalized: bool,
        rng: &mut impl Rng,
    ) -> crate::Result<Self> {
        let weight = params.insert(format!("{prefix}.weight"), gaussian(&weight_shape, INIT_STD, rng))?;
        let (bias, norm) = if normalized {
            let gamma = params.insert(
                format!("{prefix}.norm.gamma"),
                Tensor::from_fn(&[channels], |_| {
                    E::from_f64(1.0 + INIT_STD * Normal::new(0.0, 1.0).unwrap().sample(rng))
                }),
            )?;
            let beta = params.insert(format!("{prefix}.norm.beta"), Tensor::zeros(&[channels]))?;
            (None, Some((gamma, beta)))
        } else {
            let bias = params.insert(format!("{prefix}.bias"), Tensor::zeros(&[channels]))?;
            (Some(bias), None)
        };
        Ok(Self { weight, bias, norm })
    }

    /// Bias or normalization on a stage's convolution output.
    pub fn finish<E: Element>(&self, g: &Graph<E>, vars: &[Var], y: Var) -> Var {
        let mut y = y;
        if let Some(b) = self.bias {
            y = add_channel_bias(g, y, vars[b]);
        }
        if let Some((gamma, beta)) = self.norm {
            y = instance_norm(g, y, vars[gamma], vars[beta]);
        }
        y
    }
}

fn channel_view<E: Element>(g: &Graph<E>, v: Var, shape: &[usize]) -> Var {
    let c = shape[1];
    let r = g.reshape(v, &[1, c, 1, 1]);
    g.broadcast_to(r, shape)
}

pub(crate) fn add_channel_bias<E: Element>(g: &Graph<E>, x: Var, bias: Var) -> Var {
    let shape = g.shape(x);
    let b = channel_view(g, bias, &shape);
    g.add(x, b)
}

/// Normalizes each `(sample, channel)` plane to zero mean and unit variance,
/// then applies the per-channel affine map.
pub(crate) fn instance_norm<E: Element>(g: &Graph<E>, x: Var, gamma: Var, beta: Var) -> Var {
    let shape = g.shape(x);
    let stats = [shape[0], shape[1], 1, 1];
    let mean = g.broadcast_to(g.mean_to(x, &stats), &shape);
    let centered = g.sub(x, mean);
    let var = g.mean_to(g.square(centered), &stats);
    let std = g.sqrt(g.add_scalar(var, E::from_f64(NORM_EPS)));
    let normed = g.div(centered, g.broadcast_to(std, &shape));
    let scaled = g.mul(normed, channel_view(g, gamma, &shape));
    g.add(scaled, channel_view(g, beta, &shape))
}
