//! Alternating critic/generator updates, epoch loop, validation, and timing.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use footprint_tensor::{Element, Graph, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::data::PatchSample;
use crate::losses::{self, Critic, LossBreakdown, LossConfig, LossMode, LossRow};
use crate::metrics::{binarize, compute_metrics, target_mask, ConfusionCounts, MetricsReport};
use crate::networks::{clip_parameters, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use crate::optim::{Adam, AdamConfig};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub gen: GeneratorConfig,
    pub disc: DiscriminatorConfig,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub d_steps_per_g_step: usize,
    pub seed: u64,
    /// Train the generator alone on the L1 term (the plain U-Net baseline).
    pub generator_only: bool,
    /// Write a checkpoint every this many epochs; 0 keeps only the final one.
    pub checkpoint_every: usize,
    /// Patches per validation forward pass.
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::default(),
            gen: GeneratorConfig::default(),
            disc: DiscriminatorConfig::default(),
            learning_rate: 2e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            batch_size: 1,
            epochs: 200,
            d_steps_per_g_step: 1,
            seed: 0,
            generator_only: false,
            checkpoint_every: 0,
            eval_batch_size: 8,
        }
    }
}

impl TrainConfig {
    /// Sets the patch size of both networks.
    pub fn with_patch_size(mut self, p: usize) -> Self {
        self.gen.patch_size = p;
        self.disc.patch_size = p;
        self
    }

    pub fn patch_size(&self) -> usize {
        self.gen.patch_size
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            ..AdamConfig::default()
        }
    }

    /// Display name of the method: the loss mode, or `UNET` for the baseline.
    pub fn method(&self) -> &'static str {
        if self.generator_only {
            "UNET"
        } else {
            self.loss.mode.as_str()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.gen.validate()?;
        self.disc.validate()?;
        self.adam().validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::Config("batch sizes must be >= 1".into()));
        }
        if self.d_steps_per_g_step == 0 {
            return Err(Error::Config("d_steps_per_g_step must be >= 1".into()));
        }
        if self.gen.patch_size != self.disc.patch_size {
            return Err(Error::Config(format!(
                "generator patch size {} differs from discriminator patch size {}",
                self.gen.patch_size, self.disc.patch_size
            )));
        }
        if self.gen.in_channels != self.disc.condition_channels
            || self.gen.out_channels != self.disc.target_channels
        {
            return Err(Error::Config("generator and discriminator channel counts disagree".into()));
        }
        Ok(())
    }
}

/// Progress counters; together with the configs and optimizer moments this
/// fully determines the continuation of a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub global_step: u64,
    /// Wall-clock seconds spent in training steps.
    pub train_seconds: f64,
}

/// splitmix64 finalizer over `(seed, stream, index)`; gives independent,
/// reproducible RNG streams for initialization, shuffling, and steps.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_GEN_INIT: u64 = 1;
const STREAM_DISC_INIT: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;
const STREAM_STEP: u64 = 4;

/// Stacks samples into `[N, C, P, P]` condition and `[N, 1, P, P]` target.
pub fn stack_batch<E: Element>(batch: &[&PatchSample]) -> Result<(Tensor<E>, Tensor<E>)> {
    let first = batch
        .first()
        .ok_or_else(|| Error::EmptyDataset("empty batch".into()))?;
    let (cs, ts) = (first.condition.shape().to_vec(), first.target.shape().to_vec());
    let mut cond = Vec::with_capacity(batch.len() * first.condition.numel());
    let mut target = Vec::with_capacity(batch.len() * first.target.numel());
    for s in batch {
        if s.condition.shape() != cs.as_slice() || s.target.shape() != ts.as_slice() {
            return Err(Error::Shape("patches in a batch differ in shape".into()));
        }
        cond.extend(s.condition.data().iter().map(|&v| E::from_f64(v as f64)));
        target.extend(s.target.data().iter().map(|&v| E::from_f64(v as f64)));
    }
    let n = batch.len();
    Ok((
        Tensor::new(&[n, cs[0], cs[1], cs[2]], cond),
        Tensor::new(&[n, ts[0], ts[1], ts[2]], target),
    ))
}

/// Graph nodes of one critic objective evaluation.
pub struct CriticObjective {
    pub total: Var,
    pub adversarial: Var,
    pub penalty: Var,
}

/// Graph nodes of one generator objective evaluation.
pub struct GeneratorObjective {
    pub total: Var,
    pub adversarial: Var,
    pub l1: Var,
    pub fake: Var,
}

/// One validation pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValRow {
    pub epoch: usize,
    #[serde(rename = "OA")]
    pub oa: f64,
    pub precision: f64,
    pub recall: f64,
    #[serde(rename = "F1")]
    pub f1: f64,
    #[serde(rename = "IoU")]
    pub iou: f64,
}

impl ValRow {
    fn new(epoch: usize, r: &MetricsReport) -> Self {
        Self {
            epoch,
            oa: r.overall_accuracy,
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
            iou: r.iou,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub losses: Vec<LossRow>,
    pub validation: Vec<ValRow>,
    pub final_report: Option<MetricsReport>,
    pub checkpoints: Vec<PathBuf>,
    pub train_seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceTiming {
    pub mean_ms: f64,
    pub std_ms: f64,
    pub samples: usize,
}

pub const LOSS_LOG: &str = "loss.csv";
pub const VAL_LOG: &str = "val.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// A training run: both networks, their optimizers, and progress.
#[derive(Clone, Debug)]
pub struct Trainer<E> {
    pub cfg: TrainConfig,
    pub gen: Generator<E>,
    pub disc: Discriminator<E>,
    pub opt_gen: Adam<E>,
    pub opt_disc: Adam<E>,
    pub state: TrainState,
}

impl<E: Element> Trainer<E> {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let gen = Generator::new(cfg.gen.clone(), derive_seed(cfg.seed, STREAM_GEN_INIT, 0))?;
        let disc = Discriminator::new(cfg.disc.clone(), derive_seed(cfg.seed, STREAM_DISC_INIT, 0))?;
        let opt_gen = Adam::new(cfg.adam(), gen.params());
        let opt_disc = Adam::new(cfg.adam(), disc.params());
        Ok(Self {
            cfg,
            gen,
            disc,
            opt_gen,
            opt_disc,
            state: TrainState::default(),
        })
    }

    pub fn mode(&self) -> LossMode {
        self.cfg.loss.mode
    }

    /// The condition the networks see: the image, or zeros in GAN mode.
    fn condition(&self, cond: Tensor<E>) -> Tensor<E> {
        if self.mode().is_conditional() {
            cond
        } else {
            Tensor::zeros(cond.shape())
        }
    }

    /// Critic loss `d_adv (+ gp)` for given real and fake masks.
    pub fn critic_objective<C: Critic<E> + ?Sized>(
        &self,
        g: &Graph<E>,
        critic: &C,
        condition: Var,
        real: Var,
        fake: Var,
        rng: &mut impl RngCore,
    ) -> Result<CriticObjective> {
        let mode = self.mode();
        let d_real = losses::d_value(g, mode, critic.score_map(g, condition, real));
        let d_fake = losses::d_value(g, mode, critic.score_map(g, condition, fake));
        let adversarial = losses::d_loss(g, mode, d_real, d_fake)?;
        let penalty = if mode.uses_gradient_penalty() {
            losses::gradient_penalty(g, critic, condition, real, fake, self.cfg.loss.lambda1, rng)?.0
        } else {
            g.scalar(E::zero())
        };
        Ok(CriticObjective {
            total: g.add(adversarial, penalty),
            adversarial,
            penalty,
        })
    }

    /// Generator loss `g_adv + l1`; the adversarial part is omitted for the
    /// U-Net baseline.
    pub fn generator_objective<C: Critic<E> + ?Sized>(
        &self,
        g: &Graph<E>,
        gen_vars: &[Var],
        critic: &C,
        condition: Var,
        real: Var,
        noise: &mut dyn RngCore,
    ) -> Result<GeneratorObjective> {
        let fake = self.gen.forward_graph(g, gen_vars, condition, Some(noise));
        let adversarial = if self.cfg.generator_only {
            g.scalar(E::zero())
        } else {
            let d_fake = losses::d_value(g, self.mode(), critic.score_map(g, condition, fake));
            losses::g_loss(g, self.mode(), d_fake)?
        };
        let l1 = losses::l1_term(g, real, fake, self.cfg.loss.lambda2)?;
        Ok(GeneratorObjective {
            total: g.add(adversarial, l1),
            adversarial,
            l1,
            fake,
        })
    }

    fn diverged(&self, what: &str, value: f64) -> Error {
        Error::Diverged {
            step: self.state.global_step,
            detail: format!("{what} is {value} ({} mode)", self.mode()),
        }
    }

    /// Sigmoid outputs only leave [0, 1] when the networks produce NaN, so
    /// a domain error mid-training means the run has diverged.
    fn as_divergence(&self, e: Error) -> Error {
        match e {
            Error::Domain(detail) => Error::Diverged {
                step: self.state.global_step,
                detail,
            },
            e => e,
        }
    }

    fn critic_update(&mut self, cond: &Tensor<E>, real: &Tensor<E>, rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
        let g = Graph::new();
        let gen_vars = self.gen.params().bind(&g, false);
        let c = g.constant(cond.clone());
        let fake = g.detach(self.gen.forward_graph(&g, &gen_vars, c, Some(&mut *rng as &mut dyn RngCore)));
        let r = g.constant(real.clone());
        let bound = self.disc.bind(&g, true);
        let obj = self.critic_objective(&g, &bound, c, r, fake, rng).map_err(|e| self.as_divergence(e))?;
        let (adv, gp) = (g.item(obj.adversarial).to_f64(), g.item(obj.penalty).to_f64());
        let total = adv + gp;
        if !total.is_finite() {
            return Err(self.diverged("d_total", total));
        }
        let grads: Vec<_> = g
            .grad(obj.total, bound.vars(), false)
            .into_iter()
            .map(|v| v.map(|v| g.value(v)))
            .collect();
        self.opt_disc.update(self.disc.params_mut(), &grads);
        if self.mode().uses_clipping() {
            clip_parameters(self.disc.params_mut(), self.cfg.loss.clip_value)?;
        }
        Ok((adv, gp))
    }

    fn generator_update(&mut self, cond: &Tensor<E>, real: &Tensor<E>, rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
        let g = Graph::new();
        let gen_vars = self.gen.params().bind(&g, true);
        let bound = self.disc.bind(&g, false);
        let c = g.constant(cond.clone());
        let r = g.constant(real.clone());
        let obj = self
            .generator_objective(&g, &gen_vars, &bound, c, r, rng)
            .map_err(|e| self.as_divergence(e))?;
        let (adv, l1) = (g.item(obj.adversarial).to_f64(), g.item(obj.l1).to_f64());
        let total = adv + l1;
        if !total.is_finite() {
            return Err(self.diverged("g_total", total));
        }
        let grads: Vec<_> = g
            .grad(obj.total, &gen_vars, false)
            .into_iter()
            .map(|v| v.map(|v| g.value(v)))
            .collect();
        self.opt_gen.update(self.gen.params_mut(), &grads);
        Ok((adv, l1))
    }

    /// One optimization step: `d_steps_per_g_step` critic updates (skipped
    /// for the U-Net baseline), then one generator update.
    pub fn train_step(&mut self, batch: &[&PatchSample]) -> Result<LossBreakdown> {
        let (cond, real) = stack_batch::<E>(batch)?;
        let p = self.cfg.patch_size();
        if cond.shape()[1..] != [self.cfg.gen.in_channels, p, p] {
            return Err(Error::Shape(format!(
                "batch patches are {:?}, configured for {p}x{p}",
                &cond.shape()[1..]
            )));
        }
        let cond = self.condition(cond);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, STREAM_STEP, self.state.global_step));

        let (mut d_adv, mut gp) = (0.0, 0.0);
        if !self.cfg.generator_only {
            for _ in 0..self.cfg.d_steps_per_g_step {
                (d_adv, gp) = self.critic_update(&cond, &real, &mut rng)?;
            }
        }
        let (g_adv, l1) = self.generator_update(&cond, &real, &mut rng)?;
        let breakdown = losses::compose(self.mode(), d_adv, gp, g_adv, l1)?;
        if !breakdown.is_finite() {
            return Err(self.diverged("loss breakdown", f64::NAN));
        }
        self.state.global_step += 1;
        Ok(breakdown)
    }

    /// Patch order for `epoch`, reproducible from the seed alone.
    pub fn epoch_order(&self, epoch: usize, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, STREAM_SHUFFLE, epoch as u64));
        order.shuffle(&mut rng);
        order
    }

    /// Micro-averaged confusion counts of the deterministic generator
    /// (no dropout noise) over `patches`.
    pub fn confusion(&self, patches: &[PatchSample]) -> Result<ConfusionCounts> {
        let mut counts = ConfusionCounts::default();
        let refs: Vec<&PatchSample> = patches.iter().collect();
        for chunk in refs.chunks(self.cfg.eval_batch_size) {
            let (cond, target) = stack_batch::<E>(chunk)?;
            let pred = self.gen.generate(&self.condition(cond), None)?;
            counts.accumulate(&binarize(pred.data(), 0.0), &target_mask(target.data()))?;
        }
        Ok(counts)
    }

    pub fn evaluate(&self, patches: &[PatchSample]) -> Result<MetricsReport> {
        compute_metrics(self.confusion(patches)?)
    }

    /// Checkpoint filename encoding method, λ₂, depth, seed, and epoch.
    pub fn checkpoint_name(&self, epoch: usize) -> String {
        format!(
            "{}_l2-{}_d{}_s{}_e{:04}.safetensors",
            self.cfg.method().to_ascii_lowercase(),
            self.cfg.loss.lambda2,
            self.cfg.gen.depth,
            self.cfg.seed,
            epoch
        )
    }

    /// Runs the remaining epochs up to `cfg.epochs`.
    ///
    /// With an output directory, the loss and validation logs are rewritten
    /// after every epoch and checkpoints go to `checkpoints/`. When resuming,
    /// log rows from beyond the restored step are discarded. A diverged step
    /// aborts with the earlier checkpoints left in place.
    pub fn train(&mut self, train: &[PatchSample], val: &[PatchSample], out: Option<&Path>) -> Result<TrainSummary> {
        if train.is_empty() {
            return Err(Error::EmptyDataset("the train manifest is empty".into()));
        }
        let (mut losses, mut validation) = match out {
            Some(dir) => self.restore_logs(dir)?,
            None => (Vec::new(), Vec::new()),
        };
        let mut checkpoints = Vec::new();
        let mut final_report = None;

        while self.state.epoch < self.cfg.epochs {
            let epoch = self.state.epoch;
            let order = self.epoch_order(epoch, train.len());
            let started = Instant::now();
            for idx in order.chunks(self.cfg.batch_size) {
                let batch: Vec<&PatchSample> = idx.iter().map(|&i| &train[i]).collect();
                let step = self.state.global_step;
                let b = self.train_step(&batch)?;
                losses.push(b.row(step, self.mode()));
            }
            self.state.train_seconds += started.elapsed().as_secs_f64();
            self.state.epoch += 1;

            if !val.is_empty() {
                let report = self.evaluate(val)?;
                validation.push(ValRow::new(self.state.epoch, &report));
                final_report = Some(report);
            }
            if let Some(dir) = out {
                write_rows(&dir.join(LOSS_LOG), &losses)?;
                write_rows(&dir.join(VAL_LOG), &validation)?;
                let last = self.state.epoch == self.cfg.epochs;
                let periodic = self.cfg.checkpoint_every > 0 && self.state.epoch.is_multiple_of(self.cfg.checkpoint_every);
                if last || periodic {
                    let path = dir.join(CHECKPOINT_DIR).join(self.checkpoint_name(self.state.epoch));
                    checkpoint::save(&path, self)?;
                    checkpoints.push(path);
                }
            }
        }
        Ok(TrainSummary {
            losses,
            validation,
            final_report,
            checkpoints,
            train_seconds: self.state.train_seconds,
        })
    }

    fn restore_logs(&self, dir: &Path) -> Result<(Vec<LossRow>, Vec<ValRow>)> {
        fs::create_dir_all(dir)?;
        let mut losses: Vec<LossRow> = read_rows(&dir.join(LOSS_LOG))?;
        losses.retain(|r| r.step < self.state.global_step);
        let mut val: Vec<ValRow> = read_rows(&dir.join(VAL_LOG))?;
        val.retain(|r| r.epoch <= self.state.epoch);
        Ok((losses, val))
    }

    /// Per-patch generator latency, excluding three warm-up runs.
    pub fn measure_inference(&self, patches: &[PatchSample]) -> Result<InferenceTiming> {
        measure_inference(&self.gen, patches)
    }
}

pub fn measure_inference<E: Element>(gen: &Generator<E>, patches: &[PatchSample]) -> Result<InferenceTiming> {
    let first = patches
        .first()
        .ok_or_else(|| Error::EmptyDataset("no patches to time".into()))?;
    let to_e = |s: &PatchSample| s.condition.cast::<E>();
    for _ in 0..3 {
        gen.generate(&to_e(first), None)?;
    }
    let mut ms = Vec::with_capacity(patches.len());
    for p in patches {
        let x = to_e(p);
        let t = Instant::now();
        gen.generate(&x, None)?;
        ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let n = ms.len() as f64;
    let mean = ms.iter().sum::<f64>() / n;
    let std = if ms.len() > 1 {
        (ms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(InferenceTiming {
        mean_ms: mean,
        std_ms: std,
        samples: ms.len(),
    })
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
