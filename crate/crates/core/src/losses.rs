//! Adversarial objectives, gradient penalty, and L1 term, all with the
//! convention that each player minimizes its own loss.

use std::fmt;
use std::str::FromStr;

use footprint_tensor::{Element, Graph, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Guard for log arguments and for the gradient norm at zero.
pub const NUMERIC_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LossMode {
    #[serde(rename = "GAN")]
    Gan,
    #[serde(rename = "CGAN")]
    Cgan,
    #[serde(rename = "CWGAN")]
    Cwgan,
    #[serde(rename = "CWGAN_GP")]
    CwganGp,
}

impl LossMode {
    pub const ALL: [LossMode; 4] = [LossMode::Gan, LossMode::Cgan, LossMode::Cwgan, LossMode::CwganGp];

    /// Raw critic scores instead of sigmoid probabilities.
    pub fn is_wasserstein(self) -> bool {
        matches!(self, LossMode::Cwgan | LossMode::CwganGp)
    }

    /// Whether the networks see the real condition (GAN mode gets zeros).
    pub fn is_conditional(self) -> bool {
        self != LossMode::Gan
    }

    pub fn uses_gradient_penalty(self) -> bool {
        self == LossMode::CwganGp
    }

    pub fn uses_clipping(self) -> bool {
        self == LossMode::Cwgan
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::Gan => "GAN",
            LossMode::Cgan => "CGAN",
            LossMode::Cwgan => "CWGAN",
            LossMode::CwganGp => "CWGAN_GP",
        }
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "GAN" => Ok(LossMode::Gan),
            "CGAN" => Ok(LossMode::Cgan),
            "CWGAN" => Ok(LossMode::Cwgan),
            "CWGAN_GP" | "CWGANGP" => Ok(LossMode::CwganGp),
            _ => Err(Error::Config(format!(
                "unknown loss mode '{s}' (expected GAN, CGAN, CWGAN or CWGAN_GP)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub mode: LossMode,
    /// Gradient-penalty coefficient; used only in CWGAN_GP mode.
    pub lambda1: f64,
    /// L1 coefficient.
    pub lambda2: f64,
    /// Weight clipping bound; used only in CWGAN mode.
    pub clip_value: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            mode: LossMode::CwganGp,
            lambda1: 10.0,
            lambda2: 100.0,
            clip_value: 0.01,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda1.is_finite()) {
            return Err(Error::Config(format!("lambda1 must be >= 0, got {}", self.lambda1)));
        }
        if !(self.lambda2 >= 0.0 && self.lambda2.is_finite()) {
            return Err(Error::Config(format!("lambda2 must be >= 0, got {}", self.lambda2)));
        }
        if !(self.clip_value > 0.0 && self.clip_value.is_finite()) {
            return Err(Error::Config(format!("clip value must be > 0, got {}", self.clip_value)));
        }
        Ok(())
    }
}

/// Anything that scores `(condition, mask)` pairs inside a graph.
pub trait Critic<E: Element> {
    /// Raw score map `[N, 1, h, w]` for `condition [N, C, P, P]` and
    /// `mask [N, 1, P, P]`.
    fn score_map(&self, g: &Graph<E>, condition: Var, mask: Var) -> Var;
}

/// The scalar D value of a score map: the mean probability for GAN/CGAN,
/// the mean raw score for the Wasserstein modes.
pub fn d_value<E: Element>(g: &Graph<E>, mode: LossMode, score_map: Var) -> Var {
    if mode.is_wasserstein() {
        g.mean(score_map)
    } else {
        g.mean(g.sigmoid(score_map))
    }
}

fn check_probability<E: Element>(g: &Graph<E>, what: &str, v: Var) -> Result<()> {
    let p = g.item(v).to_f64();
    // sigmoid saturates to exactly 0 or 1 in finite precision, so the closed
    // interval is accepted and the logs are clamped instead
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} probability {p} is outside (0, 1)")))
    }
}

fn safe_log<E: Element>(g: &Graph<E>, v: Var) -> Var {
    g.log(g.clamp_min(v, E::from_f64(NUMERIC_FLOOR)))
}

/// Discriminator loss from the scalar D values on real and fake pairs.
pub fn d_loss<E: Element>(g: &Graph<E>, mode: LossMode, d_real: Var, d_fake: Var) -> Result<Var> {
    if mode.is_wasserstein() {
        return Ok(g.neg(g.sub(d_real, d_fake)));
    }
    check_probability(g, "real", d_real)?;
    check_probability(g, "fake", d_fake)?;
    let one_minus_fake = g.add_scalar(g.neg(d_fake), E::one());
    Ok(g.neg(g.add(safe_log(g, d_real), safe_log(g, one_minus_fake))))
}

/// Adversarial part of the generator loss (non-saturating for GAN/CGAN).
pub fn g_loss<E: Element>(g: &Graph<E>, mode: LossMode, d_fake: Var) -> Result<Var> {
    if mode.is_wasserstein() {
        return Ok(g.neg(d_fake));
    }
    check_probability(g, "fake", d_fake)?;
    Ok(g.neg(safe_log(g, d_fake)))
}

/// The random interpolation drawn for one gradient-penalty evaluation.
#[derive(Clone, Debug)]
pub struct GradientPenaltySample<E> {
    /// One `alpha ~ U[0, 1]` per batch element.
    pub alpha: Vec<f64>,
    /// `alpha * real + (1 - alpha) * fake`, same shape as the masks.
    pub x_hat: Tensor<E>,
}

impl<E: Element> GradientPenaltySample<E> {
    pub fn draw(real: &Tensor<E>, fake: &Tensor<E>, rng: &mut impl Rng) -> Result<Self> {
        if real.shape() != fake.shape() || real.shape().is_empty() {
            return Err(Error::Shape(format!(
                "real {:?} and fake {:?} masks must share a batched shape",
                real.shape(),
                fake.shape()
            )));
        }
        let n = real.shape()[0];
        let alpha: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        Ok(Self::with_alpha(real, fake, alpha))
    }

    pub fn with_alpha(real: &Tensor<E>, fake: &Tensor<E>, alpha: Vec<f64>) -> Self {
        let per = real.numel() / alpha.len();
        let (r, f) = (real.data(), fake.data());
        let x_hat = Tensor::from_fn(real.shape(), |i| {
            let a = E::from_f64(alpha[i / per]);
            a * r[i] + (E::one() - a) * f[i]
        });
        Self { alpha, x_hat }
    }
}

/// `lambda1 * mean_n (||grad_{x_hat} D(y, x_hat)||_2 - 1)^2`.
///
/// The interpolate is a fresh leaf built from the values of `real_mask` and
/// `fake_mask`, so only the critic's parameters receive gradient; the
/// penalty graph is differentiable with respect to them. The condition is
/// held fixed.
pub fn gradient_penalty<E: Element, C: Critic<E> + ?Sized>(
    g: &Graph<E>,
    critic: &C,
    condition: Var,
    real_mask: Var,
    fake_mask: Var,
    lambda1: f64,
    rng: &mut impl Rng,
) -> Result<(Var, GradientPenaltySample<E>)> {
    if !(lambda1 >= 0.0) {
        return Err(Error::Config(format!("lambda1 must be >= 0, got {lambda1}")));
    }
    let sample = GradientPenaltySample::draw(&g.value(real_mask), &g.value(fake_mask), rng)?;
    if lambda1 == 0.0 {
        return Ok((g.scalar(E::zero()), sample));
    }
    let penalty = penalty_at(g, critic, g.detach(condition), &sample.x_hat, lambda1)?;
    Ok((penalty, sample))
}

/// The penalty evaluated at a given interpolate.
pub fn penalty_at<E: Element, C: Critic<E> + ?Sized>(
    g: &Graph<E>,
    critic: &C,
    condition: Var,
    x_hat: &Tensor<E>,
    lambda1: f64,
) -> Result<Var> {
    let shape = x_hat.shape().to_vec();
    let n = shape[0];
    let x = g.variable(x_hat.clone());
    let map = critic.score_map(g, condition, x);
    let map_shape = g.shape(map);
    let mut per_sample = vec![1; map_shape.len()];
    per_sample[0] = n;
    // summing per-sample means keeps each sample's gradient its own
    let score = g.sum(g.mean_to(map, &per_sample));
    let grad = g.grad(score, &[x], true)[0]
        .ok_or_else(|| Error::Capability("critic output does not depend on the mask".into()))?;
    let mut norm_shape = vec![1; shape.len()];
    norm_shape[0] = n;
    let sq = g.sum_to(g.square(grad), &norm_shape);
    let norm = g.sqrt(g.add_scalar(sq, E::from_f64(NUMERIC_FLOOR)));
    let dev = g.add_scalar(norm, -E::one());
    Ok(g.scale(g.mean(g.square(dev)), E::from_f64(lambda1)))
}

/// `lambda2 * mean |real - fake|`.
pub fn l1_term<E: Element>(g: &Graph<E>, real_mask: Var, fake_mask: Var, lambda2: f64) -> Result<Var> {
    let (rs, fs) = (g.shape(real_mask), g.shape(fake_mask));
    if rs != fs {
        return Err(Error::Shape(format!("l1 operands differ in shape: {rs:?} vs {fs:?}")));
    }
    if !(lambda2 >= 0.0) {
        return Err(Error::Config(format!("lambda2 must be >= 0, got {lambda2}")));
    }
    Ok(g.scale(g.mean(g.abs(g.sub(real_mask, fake_mask))), E::from_f64(lambda2)))
}

/// Per-step loss values with the exact per-player decomposition.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub d_adversarial: f64,
    pub d_gradient_penalty: f64,
    pub g_adversarial: f64,
    pub g_l1: f64,
    pub d_total: f64,
    pub g_total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [
            self.d_adversarial,
            self.d_gradient_penalty,
            self.g_adversarial,
            self.g_l1,
            self.d_total,
            self.g_total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    pub fn row(&self, step: u64, mode: LossMode) -> LossRow {
        LossRow {
            step,
            mode,
            d_adv: self.d_adversarial,
            d_gp: self.d_gradient_penalty,
            g_adv: self.g_adversarial,
            g_l1: self.g_l1,
            d_total: self.d_total,
            g_total: self.g_total,
        }
    }
}

/// One line of the loss log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: u64,
    pub mode: LossMode,
    pub d_adv: f64,
    pub d_gp: f64,
    pub g_adv: f64,
    pub g_l1: f64,
    pub d_total: f64,
    pub g_total: f64,
}

/// Assembles the breakdown; a nonzero penalty outside CWGAN_GP is rejected.
pub fn compose(mode: LossMode, d_adv: f64, gp: f64, g_adv: f64, l1: f64) -> Result<LossBreakdown> {
    if gp != 0.0 && !mode.uses_gradient_penalty() {
        return Err(Error::Config(format!("gradient penalty {gp} supplied in {mode} mode")));
    }
    Ok(LossBreakdown {
        d_adversarial: d_adv,
        d_gradient_penalty: gp,
        g_adversarial: g_adv,
        g_l1: l1,
        d_total: d_adv + gp,
        g_total: g_adv + l1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn d_of(mode: LossMode, r: f64, f: f64) -> Result<f64> {
        let g = Graph::<f64>::new();
        let v = d_loss(&g, mode, g.scalar(r), g.scalar(f))?;
        Ok(g.item(v))
    }

    fn g_of(mode: LossMode, f: f64) -> Result<f64> {
        let g = Graph::<f64>::new();
        let v = g_loss(&g, mode, g.scalar(f))?;
        Ok(g.item(v))
    }

    /// Score `<w, mask> + 0.5 <v, mask^2>`, reported as a 1x1 map.
    struct QuadraticCritic {
        w: Tensor<f64>,
        v: Tensor<f64>,
    }

    impl Critic<f64> for QuadraticCritic {
        fn score_map(&self, g: &Graph<f64>, _condition: Var, mask: Var) -> Var {
            let s = g.shape(mask);
            let w = g.broadcast_to(g.constant(self.w.clone()), &s);
            let v = g.broadcast_to(g.constant(self.v.clone()), &s);
            let lin = g.mul(w, mask);
            let quad = g.scale(g.mul(v, g.square(mask)), 0.5);
            g.sum_to(g.add(lin, quad), &[s[0], 1, 1, 1])
        }
    }

    fn linear(w: Vec<f64>) -> QuadraticCritic {
        let n = w.len();
        QuadraticCritic {
            w: Tensor::new(&[1, 1, 1, n], w),
            v: Tensor::zeros(&[1, 1, 1, n]),
        }
    }

    struct Blind;

    impl Critic<f64> for Blind {
        fn score_map(&self, g: &Graph<f64>, condition: Var, _mask: Var) -> Var {
            g.sum_to(condition, &[g.shape(condition)[0], 1, 1, 1])
        }
    }

    fn gp(critic: &dyn Critic<f64>, real: Tensor<f64>, fake: Tensor<f64>, lambda1: f64, seed: u64) -> Result<f64> {
        let g = Graph::<f64>::new();
        let n = real.shape()[0];
        let cond = g.constant(Tensor::ones(&[n, 1, 1, 1]));
        let (r, f) = (g.constant(real), g.constant(fake));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, _) = gradient_penalty(&g, critic, cond, r, f, lambda1, &mut rng)?;
        Ok(g.item(p))
    }

    #[test]
    fn d_loss_examples() {
        assert!((d_of(LossMode::Cgan, 0.5, 0.5).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((d_of(LossMode::Cgan, 0.5, 0.5).unwrap() - 1.38629).abs() < 1e-5);
        assert_eq!(d_of(LossMode::Cwgan, 0.3, 0.3).unwrap(), 0.0);
        assert!((d_of(LossMode::Cwgan, 0.7, 0.2).unwrap() + 0.5).abs() < 1e-12);
        assert!(matches!(d_of(LossMode::Cgan, 1.5, 0.5), Err(Error::Domain(_))));
        assert!(matches!(d_of(LossMode::Gan, 0.5, -0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn g_loss_examples() {
        assert!(g_of(LossMode::Cgan, 1.0 - 1e-12).unwrap().abs() < 1e-9);
        assert!((g_of(LossMode::Cwgan, 0.2).unwrap() + 0.2).abs() < 1e-12);
        assert_eq!(g_of(LossMode::CwganGp, 0.0).unwrap(), 0.0);
        assert!(g_of(LossMode::Cgan, 0.0).unwrap().is_finite());
    }

    #[test]
    fn gradient_penalty_closed_form_examples() {
        let x = Tensor::from_fn(&[1, 1, 1, 4], |i| i as f64 - 1.5);
        let y = Tensor::from_fn(&[1, 1, 1, 4], |i| (i * i) as f64);
        let unit = linear(vec![0.5, 0.5, 0.5, 0.5]);
        assert!(gp(&unit, x.clone(), y.clone(), 10.0, 1).unwrap().abs() < 1e-10);
        let three = linear(vec![1.5, 1.5, 1.5, 1.5]);
        assert!((gp(&three, x.clone(), y.clone(), 10.0, 1).unwrap() - 40.0).abs() < 40.0 * 1e-9);
        assert_eq!(gp(&three, x, y, 0.0, 1).unwrap(), 0.0);
    }

    #[test]
    fn blind_critic_is_a_capability_error() {
        let x = Tensor::<f64>::zeros(&[1, 1, 1, 4]);
        assert!(matches!(gp(&Blind, x.clone(), x, 10.0, 0), Err(Error::Capability(_))));
    }

    #[test]
    fn penalty_is_differentiable_in_critic_parameters() {
        // d/dw of lambda (||w|| - 1)^2 = 2 lambda (||w|| - 1) w / ||w||
        struct Param(Var);
        impl Critic<f64> for Param {
            fn score_map(&self, g: &Graph<f64>, _c: Var, mask: Var) -> Var {
                let s = g.shape(mask);
                g.sum_to(g.mul(g.broadcast_to(self.0, &s), mask), &[s[0], 1, 1, 1])
            }
        }
        let g = Graph::<f64>::new();
        let w = g.variable(Tensor::new(&[1, 1, 1, 2], vec![3.0, 4.0]));
        let cond = g.constant(Tensor::zeros(&[1, 1, 1, 1]));
        let m = g.constant(Tensor::new(&[1, 1, 1, 2], vec![0.1, -0.4]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (p, _) = gradient_penalty(&g, &Param(w), cond, m, m, 2.0, &mut rng).unwrap();
        assert!((g.item(p) - 32.0).abs() < 1e-9);
        let dw = g.value(g.grad(p, &[w], false)[0].unwrap());
        let expect = [2.0 * 2.0 * 4.0 * 3.0 / 5.0, 2.0 * 2.0 * 4.0 * 4.0 / 5.0];
        for (a, b) in dw.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn penalty_swap_symmetry_in_distribution() {
        let critic = QuadraticCritic {
            w: Tensor::new(&[1, 1, 1, 3], vec![0.8, -0.3, 0.5]),
            v: Tensor::new(&[1, 1, 1, 3], vec![1.2, 0.7, -0.9]),
        };
        let real = Tensor::new(&[1, 1, 1, 3], vec![1.0, -1.0, 1.0]);
        let fake = Tensor::new(&[1, 1, 1, 3], vec![-0.6, 0.2, 0.9]);
        let draws = 10_000;
        let stats = |a: &Tensor<f64>, b: &Tensor<f64>, seed| {
            let g = Graph::<f64>::new();
            let cond = g.constant(Tensor::zeros(&[1, 1, 1, 1]));
            let (ra, rb) = (g.constant(a.clone()), g.constant(b.clone()));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let vals: Vec<f64> = (0..draws)
                .map(|_| {
                    let (p, _) = gradient_penalty(&g, &critic, cond, ra, rb, 10.0, &mut rng).unwrap();
                    g.item(p)
                })
                .collect();
            let mean = vals.iter().sum::<f64>() / draws as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
            (mean, var / draws as f64)
        };
        let (m1, se1) = stats(&real, &fake, 11);
        let (m2, se2) = stats(&fake, &real, 12);
        let se = (se1 + se2).sqrt();
        assert!(se > 0.0);
        assert!((m1 - m2).abs() <= 3.0 * se, "{m1} vs {m2}, se {se}");
    }

    #[test]
    fn l1_examples() {
        let g = Graph::<f64>::new();
        let a = g.constant(Tensor::ones(&[1, 4, 4]));
        let b = g.constant(Tensor::full(&[1, 4, 4], -1.0));
        assert_eq!(g.item(l1_term(&g, a, a, 100.0).unwrap()), 0.0);
        assert_eq!(g.item(l1_term(&g, a, b, 100.0).unwrap()), 200.0);
        assert_eq!(g.item(l1_term(&g, a, b, 0.0).unwrap()), 0.0);
        let c = g.constant(Tensor::ones(&[1, 4, 5]));
        assert!(matches!(l1_term(&g, a, c, 1.0), Err(Error::Shape(_))));
    }

    #[test]
    fn compose_examples() {
        let b = compose(LossMode::CwganGp, -0.5, 1.2, -0.2, 3.0).unwrap();
        assert!((b.d_total - 0.7).abs() < 1e-12);
        assert!((b.g_total - 2.8).abs() < 1e-12);
        assert_eq!(compose(LossMode::Cwgan, 0.0, 0.0, 0.0, 0.0).unwrap(), LossBreakdown::default());
        assert!(compose(LossMode::Cgan, 0.1, 0.3, 0.0, 0.0).unwrap_err().is_config());
    }

    #[test]
    fn mode_strings_round_trip() {
        for m in LossMode::ALL {
            assert_eq!(m.as_str().parse::<LossMode>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert_eq!("cwgan-gp".parse::<LossMode>().unwrap(), LossMode::CwganGp);
        assert!("wgan".parse::<LossMode>().unwrap_err().is_config());
    }

    proptest! {
        #[test]
        fn penalty_matches_linear_closed_form(
            w in prop::collection::vec(-3.0f64..3.0, 4),
            x in prop::collection::vec(-1.0f64..1.0, 8),
            y in prop::collection::vec(-1.0f64..1.0, 8),
            seed in any::<u64>(),
        ) {
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            let expect = 10.0 * (norm - 1.0).powi(2);
            let got = gp(&linear(w), Tensor::new(&[2, 1, 1, 4], x), Tensor::new(&[2, 1, 1, 4], y), 10.0, seed).unwrap();
            prop_assert!((got - expect).abs() <= 1e-9 * expect.max(1.0));
        }

        #[test]
        fn wasserstein_d_loss_is_translation_invariant(r in -5.0f64..5.0, f in -5.0f64..5.0, c in -100.0f64..100.0) {
            for mode in [LossMode::Cwgan, LossMode::CwganGp] {
                let a = d_of(mode, r, f).unwrap();
                let b = d_of(mode, r + c, f + c).unwrap();
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + c.abs()));
            }
        }

        #[test]
        fn l1_is_symmetric_nonnegative_and_definite(
            x in prop::collection::vec(-1.0f64..1.0, 6),
            y in prop::collection::vec(-1.0f64..1.0, 6),
        ) {
            let g = Graph::<f64>::new();
            let a = g.constant(Tensor::new(&[1, 2, 3], x.clone()));
            let b = g.constant(Tensor::new(&[1, 2, 3], y.clone()));
            let ab = g.item(l1_term(&g, a, b, 3.0).unwrap());
            let ba = g.item(l1_term(&g, b, a, 3.0).unwrap());
            prop_assert_eq!(ab, ba);
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab == 0.0, x == y);
            prop_assert_eq!(g.item(l1_term(&g, a, a, 3.0).unwrap()), 0.0);
        }

        #[test]
        fn compose_is_exact(d in -10.0f64..10.0, p in 0.0f64..10.0, ga in -10.0f64..10.0, l in 0.0f64..10.0) {
            let b = compose(LossMode::CwganGp, d, p, ga, l).unwrap();
            let eps = f64::EPSILON * 32.0;
            prop_assert!((b.d_total - b.d_adversarial - b.d_gradient_penalty).abs() <= eps);
            prop_assert!((b.g_total - b.g_adversarial - b.g_l1).abs() <= eps);
        }
    }
}
