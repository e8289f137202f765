//! End-to-end workflows: the method comparison grid, scene-level
//! prediction with overlay rendering, and curve plots.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use footprint_tensor::{Element, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::{split_dataset, tile_scene, tile_scenes, PatchSample, RasterScene, Tiling};
use crate::synth::{generate_scenes, SyntheticSceneSpec};
use crate::losses::LossMode;
use crate::metrics::{binarize, MetricsReport, MetricsRow, METRICS_HEADER_COMMENT};
use crate::networks::Generator;
use crate::trainer::{measure_inference, write_rows, InferenceTiming, TrainConfig, Trainer, ValRow};
use crate::{Error, Result};

/// A trainable method: the plain U-Net or the generator under one of the
/// adversarial objectives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    UNet,
    Adversarial(LossMode),
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::UNet => f.write_str("UNET"),
            Method::Adversarial(m) => m.fmt(f),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "").as_str() {
            "UNET" => Ok(Method::UNet),
            _ => s.parse().map(Method::Adversarial),
        }
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One training run of the comparison grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentCell {
    pub method: Method,
    pub lambda2: f64,
    pub depth: usize,
    pub seed: u64,
}

impl ExperimentCell {
    fn key(&self) -> (Method, u64, usize, u64) {
        (self.method, self.lambda2.to_bits(), self.depth, self.seed)
    }

    /// Directory-safe name, e.g. `cwgan_gp_l2-100_d5_s0`.
    pub fn name(&self) -> String {
        format!(
            "{}_l2-{}_d{}_s{}",
            self.method.to_string().to_ascii_lowercase(),
            self.lambda2,
            self.depth,
            self.seed
        )
    }

    pub fn train_config(&self, base: &TrainConfig) -> Result<TrainConfig> {
        let mut cfg = base.clone();
        match self.method {
            Method::UNet => cfg.generator_only = true,
            Method::Adversarial(m) => {
                cfg.generator_only = false;
                cfg.loss.mode = m;
            }
        }
        cfg.loss.lambda2 = self.lambda2;
        cfg.gen.depth = self.depth;
        cfg.seed = self.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    /// λ₂ as shown in the table; the U-Net row has no adversarial term to
    /// weigh against, so it is left blank.
    fn table_lambda2(&self) -> Option<f64> {
        match self.method {
            Method::UNet => None,
            Method::Adversarial(_) => Some(self.lambda2),
        }
    }
}

/// Grid description as it appears in config files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Adversarial modes crossed with every λ₂.
    pub modes: Vec<LossMode>,
    pub lambda2: Vec<f64>,
    pub depths: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Adds one U-Net baseline run per depth and seed.
    pub unet_baseline: bool,
    /// Validation patches timed for the inference column.
    pub timing_patches: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            modes: vec![LossMode::Cgan, LossMode::Cwgan, LossMode::CwganGp],
            lambda2: vec![1.0, 100.0],
            depths: vec![5],
            seeds: vec![0],
            unet_baseline: true,
            timing_patches: 16,
        }
    }
}

impl ExperimentConfig {
    pub fn cells(&self, unet_lambda2: f64) -> Vec<ExperimentCell> {
        let mut cells = Vec::new();
        for &seed in &self.seeds {
            for &depth in &self.depths {
                if self.unet_baseline {
                    cells.push(ExperimentCell {
                        method: Method::UNet,
                        lambda2: unet_lambda2,
                        depth,
                        seed,
                    });
                }
                for &mode in &self.modes {
                    for &lambda2 in &self.lambda2 {
                        cells.push(ExperimentCell {
                            method: Method::Adversarial(mode),
                            lambda2,
                            depth,
                            seed,
                        });
                    }
                }
            }
        }
        cells
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub cells: Vec<ExperimentCell>,
    pub base: TrainConfig,
    pub output_dir: PathBuf,
    pub timing_patches: usize,
}

impl ExperimentSpec {
    pub fn new(cells: Vec<ExperimentCell>, base: TrainConfig, output_dir: impl Into<PathBuf>) -> Result<Self> {
        let spec = Self {
            cells,
            base,
            output_dir: output_dir.into(),
            timing_patches: ExperimentConfig::default().timing_patches,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_config(cfg: &ExperimentConfig, base: TrainConfig, output_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut spec = Self::new(cfg.cells(base.loss.lambda2), base, output_dir)?;
        spec.timing_patches = cfg.timing_patches;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() {
            return Err(Error::Config("experiment has no cells".into()));
        }
        let mut seen = HashSet::new();
        for c in &self.cells {
            if !seen.insert(c.key()) {
                return Err(Error::Config(format!("duplicate experiment cell {}", c.name())));
            }
            c.train_config(&self.base)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CellStatus {
    Completed,
    Diverged { step: u64, detail: String },
}

#[derive(Clone, Debug)]
pub struct CellOutcome {
    pub cell: ExperimentCell,
    pub status: CellStatus,
    pub report: Option<MetricsReport>,
    pub validation: Vec<ValRow>,
    pub train_seconds: f64,
    pub inference: Option<InferenceTiming>,
}

impl CellOutcome {
    pub fn iou(&self) -> Option<f64> {
        self.report.map(|r| r.iou)
    }
}

pub const COMPARISON_CSV: &str = "comparison.csv";
pub const TIMING_CSV: &str = "timing.csv";
pub const IOU_CURVES_PNG: &str = "val_iou.png";
pub const RESNET_DUC_NOTE: &str =
    "# the ResNet-DUC comparison row is omitted: that architecture is outside this toolkit";

#[derive(Debug, Serialize)]
struct TimingRow {
    method: String,
    lambda2: String,
    depth: usize,
    seed: u64,
    status: String,
    train_seconds: f64,
    infer_ms_mean: Option<f64>,
    infer_ms_std: Option<f64>,
}

/// Trains and evaluates every cell.
///
/// Writes `comparison.csv` (one row per cell, `DIVERGED` for failed runs),
/// `timing.csv` (wall-clock figures, kept apart so the comparison file is
/// reproducible byte for byte), a validation-IoU plot, and per-cell
/// directories holding loss/validation logs and checkpoints.
pub fn run_comparison(spec: &ExperimentSpec, train: &[PatchSample], val: &[PatchSample]) -> Result<Vec<CellOutcome>> {
    spec.validate()?;
    if val.is_empty() {
        return Err(Error::EmptyDataset("the comparison needs validation patches".into()));
    }
    fs::create_dir_all(&spec.output_dir)?;
    let mut outcomes = Vec::with_capacity(spec.cells.len());
    for cell in &spec.cells {
        let cfg = cell.train_config(&spec.base)?;
        let dir = spec.output_dir.join("cells").join(cell.name());
        let mut trainer = Trainer::<f32>::new(cfg)?;
        let outcome = match trainer.train(train, val, Some(&dir)) {
            Ok(summary) => {
                let timed = &val[..val.len().min(spec.timing_patches.max(1))];
                CellOutcome {
                    cell: *cell,
                    status: CellStatus::Completed,
                    report: summary.final_report,
                    validation: summary.validation,
                    train_seconds: summary.train_seconds,
                    inference: Some(trainer.measure_inference(timed)?),
                }
            }
            Err(Error::Diverged { step, detail }) => CellOutcome {
                cell: *cell,
                status: CellStatus::Diverged { step, detail },
                report: None,
                validation: Vec::new(),
                train_seconds: trainer.state.train_seconds,
                inference: None,
            },
            Err(e) => return Err(e),
        };
        outcomes.push(outcome);
        write_comparison(&spec.output_dir, &outcomes)?;
    }
    Ok(outcomes)
}

fn write_comparison(dir: &Path, outcomes: &[CellOutcome]) -> Result<()> {
    let multi_seed = outcomes.iter().map(|o| o.cell.seed).collect::<HashSet<_>>().len() > 1;
    let mut rows = Vec::new();
    let mut timing = Vec::new();
    for o in outcomes {
        let c = &o.cell;
        let mut row = match (&o.status, &o.report) {
            (CellStatus::Completed, Some(r)) => MetricsRow::new(&c.method.to_string(), c.table_lambda2(), c.depth, r),
            _ => MetricsRow::failed(&c.method.to_string(), c.table_lambda2(), c.depth, "DIVERGED"),
        };
        if multi_seed {
            row.method = format!("{} [seed {}]", row.method, c.seed);
        }
        rows.push(row);
        timing.push(TimingRow {
            method: c.method.to_string(),
            lambda2: c.table_lambda2().map(|l| l.to_string()).unwrap_or_default(),
            depth: c.depth,
            seed: c.seed,
            status: match &o.status {
                CellStatus::Completed => "completed".into(),
                CellStatus::Diverged { step, .. } => format!("diverged at step {step}"),
            },
            train_seconds: o.train_seconds,
            infer_ms_mean: o.inference.map(|t| t.mean_ms),
            infer_ms_std: o.inference.map(|t| t.std_ms),
        });
    }
    crate::metrics::write_metrics_csv(
        &dir.join(COMPARISON_CSV),
        &[METRICS_HEADER_COMMENT, RESNET_DUC_NOTE],
        &rows,
    )?;
    write_rows(&dir.join(TIMING_CSV), &timing)?;
    let series: Vec<(String, Vec<f64>)> = outcomes
        .iter()
        .filter(|o| !o.validation.is_empty())
        .map(|o| (o.cell.name(), o.validation.iter().map(|v| v.iou).collect()))
        .collect();
    if !series.is_empty() {
        render_curves(&dir.join(IOU_CURVES_PNG), &series, 0.0, 1.0)?;
    }
    Ok(())
}

/// Generates `n_scenes` synthetic scenes, tiles them, and splits the patches
/// into `(train, val)`.
pub fn synthetic_dataset(
    spec: &SyntheticSceneSpec,
    n_scenes: usize,
    tiling: Tiling,
    train_fraction: f64,
    split_seed: u64,
) -> Result<(Vec<PatchSample>, Vec<PatchSample>)> {
    let scenes = generate_scenes(spec, n_scenes)?;
    let (patches, _) = tile_scenes(&scenes, tiling)?;
    let origins: Vec<_> = patches.iter().map(|p| p.origin.clone()).collect();
    let (train, val) = split_dataset(&origins, train_fraction, split_seed, tiling)?;
    let pick = |m: &crate::data::DatasetManifest| {
        m.patches
            .iter()
            .map(|o| patches[origins.iter().position(|x| x == o).expect("split keeps origins")].clone())
            .collect::<Vec<_>>()
    };
    Ok((pick(&train), pick(&val)))
}

/// Predicts a full-scene mask: every tile is predicted and written in tiling
/// order, so later tiles overwrite earlier ones where they overlap. Pixels no
/// tile covers stay background.
pub fn predict_scene<E: Element>(gen: &Generator<E>, scene: &RasterScene, tiling: Tiling) -> Result<Vec<u8>> {
    let patches = tile_scene(scene, tiling)?;
    let (w, p) = (scene.width(), tiling.window);
    let mut mask = vec![0u8; scene.height() * w];
    for patch in &patches {
        let pred = gen.generate(&patch.condition.cast::<E>(), None)?;
        let bin = binarize(pred.data(), 0.0);
        let o = &patch.origin;
        for r in 0..p {
            let dst = (o.row + r) * w + o.col;
            mask[dst..dst + p].copy_from_slice(&bin[r * p..(r + 1) * p]);
        }
    }
    Ok(mask)
}

pub const OVERLAY_COLOR: [u8; 3] = [255, 0, 0];
pub const OVERLAY_ALPHA: f64 = 0.5;

/// Blends predicted foreground with red at 50% opacity. Returns the image
/// and the number of blended pixels, which equals the mask's popcount.
pub fn render_overlay(image: &[u8], mask: &[u8]) -> Result<(Vec<u8>, usize)> {
    if image.len() != mask.len() * 3 {
        return Err(Error::Shape(format!(
            "image has {} values, mask implies {}",
            image.len(),
            mask.len() * 3
        )));
    }
    let mut out = image.to_vec();
    let mut blended = 0;
    for (px, &m) in mask.iter().enumerate() {
        if m != 0 {
            blended += 1;
            for ch in 0..3 {
                let v = (1.0 - OVERLAY_ALPHA) * image[px * 3 + ch] as f64 + OVERLAY_ALPHA * OVERLAY_COLOR[ch] as f64;
                out[px * 3 + ch] = v.round() as u8;
            }
        }
    }
    Ok((out, blended))
}

/// Tiles, predicts, and writes the overlay PNG; returns the predicted mask.
pub fn infer_overlay<E: Element>(gen: &Generator<E>, scene: &RasterScene, tiling: Tiling, output: &Path) -> Result<Vec<u8>> {
    let mask = predict_scene(gen, scene, tiling)?;
    let (rgb, _) = render_overlay(scene.image(), &mask)?;
    crate::data::io::write_image(output, scene.height(), scene.width(), rgb)?;
    Ok(mask)
}

const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

/// Draws each series as a polyline on a white 640x400 canvas with a framed
/// plot area; x spans the longest series, y spans `[y_min, y_max]`.
pub fn render_curves(path: &Path, series: &[(String, Vec<f64>)], y_min: f64, y_max: f64) -> Result<()> {
    let (w, h, m) = (640usize, 400usize, 20usize);
    let mut img = vec![255u8; w * h * 3];
    let put = |x: usize, y: usize, c: [u8; 3], img: &mut Vec<u8>| {
        if x < w && y < h {
            img[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&c);
        }
    };
    for x in m..w - m {
        put(x, m, [0; 3], &mut img);
        put(x, h - m, [0; 3], &mut img);
    }
    for y in m..=h - m {
        put(m, y, [0; 3], &mut img);
        put(w - m, y, [0; 3], &mut img);
    }
    let n = series.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
    let px = |i: usize| m as f64 + (w - 2 * m) as f64 * if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
    let py = |v: f64| {
        let t = ((v - y_min) / (y_max - y_min)).clamp(0.0, 1.0);
        (h - m) as f64 - (h - 2 * m) as f64 * t
    };
    for (k, (_, values)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<(f64, f64)> = values.iter().enumerate().map(|(i, &v)| (px(i), py(v))).collect();
        for seg in pts.windows(2) {
            let ((x0, y0), (x1, y1)) = (seg[0], seg[1]);
            let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
            for s in 0..=steps {
                let t = s as f64 / steps as f64;
                put((x0 + t * (x1 - x0)).round() as usize, (y0 + t * (y1 - y0)).round() as usize, color, &mut img);
            }
        }
        for &(x, y) in &pts {
            for dx in 0..3 {
                for dy in 0..3 {
                    put(x as usize + dx - 1, y as usize + dy - 1, color, &mut img);
                }
            }
        }
    }
    crate::data::io::write_image(path, h, w, img)
}

/// Metrics row for a trained generator on a patch set.
pub fn evaluation_row<E: Element>(trainer: &Trainer<E>, patches: &[PatchSample]) -> Result<(MetricsRow, MetricsReport)> {
    let report = trainer.evaluate(patches)?;
    let lambda2 = (!trainer.cfg.generator_only).then_some(trainer.cfg.loss.lambda2);
    Ok((
        MetricsRow::new(trainer.cfg.method(), lambda2, trainer.cfg.gen.depth, &report),
        report,
    ))
}

/// Times the generator of `trainer` on `patches`.
pub fn bench_inference<E: Element>(trainer: &Trainer<E>, patches: &[PatchSample]) -> Result<InferenceTiming> {
    measure_inference(&trainer.gen, patches)
}

/// A constant generator output, used to score trivial baselines.
pub fn constant_prediction<E: Element>(patches: &[PatchSample], value: f64) -> Vec<Tensor<E>> {
    patches
        .iter()
        .map(|p| Tensor::full(p.target.shape(), E::from_f64(value)))
        .collect()
}
