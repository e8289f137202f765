use footprint_tensor::Tensor;
use serde::{Deserialize, Serialize};

use super::RasterScene;
use crate::{Error, Result};

/// Sliding-window placement used to cut scenes into patches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tiling {
    pub window: usize,
    pub stride: usize,
}

impl Default for Tiling {
    fn default() -> Self {
        Self {
            window: 256,
            stride: 75,
        }
    }
}

impl Tiling {
    pub fn new(window: usize, stride: usize) -> Result<Self> {
        let t = Self { window, stride };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::Config("window must be at least 1".into()));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        Ok(())
    }

    /// Valid offsets along one axis of length `len`; the border remainder
    /// that cannot hold a full window is dropped.
    pub fn offsets(&self, len: usize) -> Vec<usize> {
        if len < self.window {
            return Vec::new();
        }
        (0..=(len - self.window) / self.stride)
            .map(|i| i * self.stride)
            .collect()
    }

    /// Closed-form patch count for an `height x width` scene.
    pub fn count(&self, height: usize, width: usize) -> usize {
        if height < self.window || width < self.window {
            return 0;
        }
        ((height - self.window) / self.stride + 1) * ((width - self.window) / self.stride + 1)
    }
}

/// Where a patch was cut from.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PatchOrigin {
    pub scene_id: String,
    pub row: usize,
    pub col: usize,
}

/// One normalized training pair: condition `y` (image) and target `x` (mask).
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSample {
    /// `[3, P, P]`, values in `[-1, 1]`.
    pub condition: Tensor<f32>,
    /// `[1, P, P]`, values in `{-1, +1}`.
    pub target: Tensor<f32>,
    pub origin: PatchOrigin,
}

impl PatchSample {
    pub fn patch_size(&self) -> usize {
        self.target.shape()[2]
    }
}

/// Maps an 8-bit HWC image window and a {0,1} mask window of side `p` to
/// `(condition, target)`: `image / 127.5 - 1` channel-first, and the mask
/// encoded as {-1, +1} with a channel axis.
pub fn normalize_patch(image: &[u8], mask: &[u8], p: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
    if image.len() != p * p * 3 || mask.len() != p * p {
        return Err(Error::Shape(format!(
            "expected a {p}x{p}x3 image and {p}x{p} mask, got {} and {} values",
            image.len(),
            mask.len()
        )));
    }
    let plane = p * p;
    let mut condition = vec![0f32; 3 * plane];
    for (i, px) in image.chunks_exact(3).enumerate() {
        for (ch, &v) in px.iter().enumerate() {
            condition[ch * plane + i] = v as f32 / 127.5 - 1.0;
        }
    }
    let mut target = Vec::with_capacity(plane);
    for &m in mask {
        target.push(match m {
            0 => -1.0,
            1 => 1.0,
            other => return Err(Error::Shape(format!("mask value {other} is not 0 or 1"))),
        });
    }
    Ok((
        Tensor::new(&[3, p, p], condition),
        Tensor::new(&[1, p, p], target),
    ))
}

/// Cuts one patch at `(row, col)`.
pub fn extract_patch(scene: &RasterScene, row: usize, col: usize, window: usize) -> Result<PatchSample> {
    if row + window > scene.height() || col + window > scene.width() {
        return Err(Error::Shape(format!(
            "window {window} at ({row}, {col}) exceeds scene '{}' of {}x{}",
            scene.scene_id(),
            scene.height(),
            scene.width()
        )));
    }
    let w = scene.width();
    let mut image = Vec::with_capacity(window * window * 3);
    let mut mask = Vec::with_capacity(window * window);
    for r in row..row + window {
        image.extend_from_slice(&scene.image()[(r * w + col) * 3..(r * w + col + window) * 3]);
        mask.extend_from_slice(&scene.mask()[r * w + col..r * w + col + window]);
    }
    let (condition, target) = normalize_patch(&image, &mask, window)?;
    Ok(PatchSample {
        condition,
        target,
        origin: PatchOrigin {
            scene_id: scene.scene_id().to_string(),
            row,
            col,
        },
    })
}

/// All full windows of `scene`, in row-major offset order.
pub fn tile_scene(scene: &RasterScene, tiling: Tiling) -> Result<Vec<PatchSample>> {
    tiling.validate()?;
    if tiling.window > scene.height() || tiling.window > scene.width() {
        return Err(Error::SceneTooSmall {
            scene_id: scene.scene_id().to_string(),
            height: scene.height(),
            width: scene.width(),
            window: tiling.window,
        });
    }
    let cols = tiling.offsets(scene.width());
    let mut out = Vec::with_capacity(tiling.count(scene.height(), scene.width()));
    for row in tiling.offsets(scene.height()) {
        for &col in &cols {
            out.push(extract_patch(scene, row, col, tiling.window)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blank(h: usize, w: usize) -> RasterScene {
        RasterScene::new("s", h, w, vec![0; h * w * 3], vec![0; h * w]).unwrap()
    }

    #[test]
    fn single_placement() {
        let p = tile_scene(&blank(256, 256), Tiling::default()).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!((p[0].origin.row, p[0].origin.col), (0, 0));
    }

    #[test]
    fn square_scene_gives_nine_patches() {
        let p = tile_scene(&blank(406, 406), Tiling::default()).unwrap();
        let offsets: Vec<_> = p.iter().map(|s| (s.origin.row, s.origin.col)).collect();
        let mut want = Vec::new();
        for r in [0, 75, 150] {
            for c in [0, 75, 150] {
                want.push((r, c));
            }
        }
        assert_eq!(offsets, want);
    }

    #[test]
    fn tall_scene_gives_two_patches() {
        let p = tile_scene(&blank(331, 256), Tiling::default()).unwrap();
        let rows: Vec<_> = p.iter().map(|s| s.origin.row).collect();
        assert_eq!(rows, vec![0, 75]);
    }

    #[test]
    fn too_small_and_zero_stride() {
        assert!(matches!(
            tile_scene(&blank(100, 300), Tiling::default()),
            Err(Error::SceneTooSmall { .. })
        ));
        assert!(Tiling::new(8, 0).unwrap_err().is_config());
    }

    #[test]
    fn normalization_bounds() {
        let (c, t) = normalize_patch(&[0; 12], &[0; 4], 2).unwrap();
        assert!(c.data().iter().all(|&v| v == -1.0));
        assert!(t.data().iter().all(|&v| v == -1.0));
        let (c, t) = normalize_patch(&[255; 12], &[1; 4], 2).unwrap();
        assert!(c.data().iter().all(|&v| v == 1.0));
        assert!(t.data().iter().all(|&v| v == 1.0));
        let (c, _) = normalize_patch(&[128; 3], &[0], 1).unwrap();
        assert!((c.data()[0] - (128.0 / 127.5 - 1.0)).abs() < 1e-7);
        assert!((c.data()[0] - 0.00392).abs() < 1e-5);
    }

    #[test]
    fn normalization_is_channel_first() {
        let image = [10u8, 20, 30, 40, 50, 60, 70, 80, 90, 100, 110, 120];
        let (c, _) = normalize_patch(&image, &[0, 1, 1, 0], 2).unwrap();
        let back: Vec<u8> = c.data().iter().map(|v| ((v + 1.0) * 127.5).round() as u8).collect();
        assert_eq!(back, vec![10, 40, 70, 100, 20, 50, 80, 110, 30, 60, 90, 120]);
    }

    #[test]
    fn mismatched_windows_are_shape_errors() {
        assert!(matches!(normalize_patch(&[0; 6], &[0, 1], 1), Err(Error::Shape(_))));
        assert!(matches!(normalize_patch(&[0; 3], &[2], 1), Err(Error::Shape(_))));
    }
}
