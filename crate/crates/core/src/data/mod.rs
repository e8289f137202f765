//! Scene ingestion, mask rasterization, sliding-window tiling, and
//! train/validation splitting.

pub mod io;
mod polygon;
mod split;
mod tiling;

pub use polygon::{rasterize_polygons, Polygon};
pub use split::{split_by_scene, split_dataset, train_count, DatasetManifest, SplitTag};
pub use tiling::{extract_patch, normalize_patch, tile_scene, PatchOrigin, PatchSample, Tiling};

use crate::{Error, Result};

/// Co-registered RGB image and binary footprint mask in pixel space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RasterScene {
    scene_id: String,
    height: usize,
    width: usize,
    /// Row-major `[H, W, 3]`.
    image: Vec<u8>,
    /// Row-major `[H, W]`, values 0 or 1.
    mask: Vec<u8>,
}

impl RasterScene {
    pub fn new(
        scene_id: impl Into<String>,
        height: usize,
        width: usize,
        image: Vec<u8>,
        mask: Vec<u8>,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("scene must be at least 1x1, got {height}x{width}")));
        }
        if image.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "image has {} values, expected {height}x{width}x3",
                image.len()
            )));
        }
        if mask.len() != height * width {
            return Err(Error::Shape(format!(
                "mask has {} values, expected {height}x{width}",
                mask.len()
            )));
        }
        if let Some(bad) = mask.iter().find(|&&m| m > 1) {
            return Err(Error::Shape(format!("mask value {bad} is not 0 or 1")));
        }
        Ok(Self {
            scene_id: scene_id.into(),
            height,
            width,
            image,
            mask,
        })
    }

    /// Builds the mask by rasterizing pixel-space footprint polygons.
    pub fn from_polygons(
        scene_id: impl Into<String>,
        height: usize,
        width: usize,
        image: Vec<u8>,
        polygons: &[Polygon],
    ) -> Result<Self> {
        let mask = rasterize_polygons(polygons, height, width)?;
        Self::new(scene_id, height, width, image, mask)
    }

    pub fn scene_id(&self) -> &str {
        &self.scene_id
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn image(&self) -> &[u8] {
        &self.image
    }

    pub fn mask(&self) -> &[u8] {
        &self.mask
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.mask.iter().map(|&m| m as usize).sum::<usize>() as f64 / self.mask.len() as f64
    }
}

/// Tiles every scene; scenes smaller than the window are skipped.
///
/// Returns the patches plus the ids of skipped scenes. Fails with an
/// empty-dataset error when nothing could be tiled.
pub fn tile_scenes(scenes: &[RasterScene], tiling: Tiling) -> Result<(Vec<PatchSample>, Vec<String>)> {
    tiling.validate()?;
    let mut patches = Vec::new();
    let mut skipped = Vec::new();
    for scene in scenes {
        match tile_scene(scene, tiling) {
            Ok(mut p) => patches.append(&mut p),
            Err(Error::SceneTooSmall { scene_id, .. }) => skipped.push(scene_id),
            Err(e) => return Err(e),
        }
    }
    if patches.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no scene is large enough for a {}px window",
            tiling.window
        )));
    }
    Ok((patches, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_validation() {
        assert!(RasterScene::new("a", 2, 2, vec![0; 12], vec![0, 1, 1, 0]).is_ok());
        assert!(matches!(RasterScene::new("a", 2, 2, vec![0; 11], vec![0; 4]), Err(Error::Shape(_))));
        assert!(matches!(RasterScene::new("a", 2, 2, vec![0; 12], vec![0, 2, 0, 0]), Err(Error::Shape(_))));
        assert!(matches!(RasterScene::new("a", 0, 2, vec![], vec![]), Err(Error::Shape(_))));
    }

    #[test]
    fn tiling_skips_small_scenes() {
        let big = RasterScene::new("big", 8, 8, vec![0; 192], vec![0; 64]).unwrap();
        let small = RasterScene::new("small", 4, 4, vec![0; 48], vec![0; 16]).unwrap();
        let (p, skipped) = tile_scenes(&[big, small.clone()], Tiling::new(8, 4).unwrap()).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(skipped, vec!["small".to_string()]);
        assert!(matches!(
            tile_scenes(&[small], Tiling::new(8, 4).unwrap()),
            Err(Error::EmptyDataset(_))
        ));
    }
}
