//! On-disk formats for scenes, footprint polygons, and manifests.
//!
//! A scene directory holds, per scene id:
//! - `<id>.png`: 8-bit RGB image
//! - `<id>.mask.png`: 8-bit single-band mask with values {0, 1}, or
//! - `<id>.polygons.txt`: one polygon per line, vertices as `row,col` pairs
//!   separated by whitespace; blank lines and `#` comments are ignored.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use super::{extract_patch, DatasetManifest, PatchOrigin, PatchSample, Polygon, RasterScene, SplitTag, Tiling};
use crate::{Error, Result};

const MASK_SUFFIX: &str = ".mask.png";
const POLYGON_SUFFIX: &str = ".polygons.txt";

pub fn image_path(dir: &Path, scene_id: &str) -> PathBuf {
    dir.join(format!("{scene_id}.png"))
}

pub fn mask_path(dir: &Path, scene_id: &str) -> PathBuf {
    dir.join(format!("{scene_id}{MASK_SUFFIX}"))
}

pub fn polygon_path(dir: &Path, scene_id: &str) -> PathBuf {
    dir.join(format!("{scene_id}{POLYGON_SUFFIX}"))
}

pub fn write_scene(dir: &Path, scene: &RasterScene) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (h, w) = (scene.height() as u32, scene.width() as u32);
    RgbImage::from_raw(w, h, scene.image().to_vec())
        .expect("scene invariants guarantee the buffer size")
        .save(image_path(dir, scene.scene_id()))?;
    GrayImage::from_raw(w, h, scene.mask().to_vec())
        .expect("scene invariants guarantee the buffer size")
        .save(mask_path(dir, scene.scene_id()))?;
    Ok(())
}

pub fn read_image(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = image::open(path)?.into_rgb8();
    let (w, h) = img.dimensions();
    Ok((h as usize, w as usize, img.into_raw()))
}

pub fn write_image(path: &Path, height: usize, width: usize, rgb: Vec<u8>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    RgbImage::from_raw(width as u32, height as u32, rgb)
        .ok_or_else(|| Error::Shape(format!("rgb buffer does not match {height}x{width}")))?
        .save(path)?;
    Ok(())
}

/// Reads a scene, taking the mask raster if present and otherwise
/// rasterizing the polygon list.
pub fn read_scene(dir: &Path, scene_id: &str) -> Result<RasterScene> {
    let (h, w, image) = read_image(&image_path(dir, scene_id))?;
    let mask_file = mask_path(dir, scene_id);
    if mask_file.exists() {
        let mask = image::open(&mask_file)?.into_luma8();
        if mask.dimensions() != (w as u32, h as u32) {
            return Err(Error::Shape(format!(
                "mask of '{scene_id}' is {:?}, image is {w}x{h}",
                mask.dimensions()
            )));
        }
        return RasterScene::new(scene_id, h, w, image, mask.into_raw());
    }
    let poly_file = polygon_path(dir, scene_id);
    if poly_file.exists() {
        let polygons = parse_polygons(&fs::read_to_string(&poly_file)?)?;
        return RasterScene::from_polygons(scene_id, h, w, image, &polygons);
    }
    Err(Error::Io(std::io::Error::new(
        std::io::ErrorKind::NotFound,
        format!("scene '{scene_id}' has neither {MASK_SUFFIX} nor {POLYGON_SUFFIX}"),
    )))
}

/// Scene ids in `dir`, sorted.
pub fn list_scene_ids(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if name.ends_with(MASK_SUFFIX) {
            continue;
        }
        if let Some(id) = name.strip_suffix(".png") {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    Ok(ids)
}

pub fn read_scenes(dir: &Path) -> Result<Vec<RasterScene>> {
    list_scene_ids(dir)?
        .iter()
        .map(|id| read_scene(dir, id))
        .collect()
}

pub fn parse_polygons(text: &str) -> Result<Vec<Polygon>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut vertices = Vec::new();
        for pair in line.split_whitespace() {
            let (r, c) = pair.split_once(',').ok_or_else(|| {
                Error::Parse(format!("line {}: expected row,col but got '{pair}'", lineno + 1))
            })?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: '{s}': {e}", lineno + 1)))
            };
            vertices.push((parse(r)?, parse(c)?));
        }
        out.push(Polygon::new(vertices)?);
    }
    Ok(out)
}

pub fn format_polygons(polygons: &[Polygon]) -> String {
    let mut s = String::new();
    for p in polygons {
        let line: Vec<String> = p.vertices().iter().map(|(r, c)| format!("{r},{c}")).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    scene_id: String,
    row_offset: usize,
    col_offset: usize,
    split_tag: String,
    seed: u64,
    window: usize,
    stride: usize,
}

/// Writes both splits to one CSV file.
pub fn write_manifest(path: &Path, manifests: &[&DatasetManifest]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for m in manifests {
        for p in &m.patches {
            w.serialize(ManifestRow {
                scene_id: p.scene_id.clone(),
                row_offset: p.row,
                col_offset: p.col,
                split_tag: m.split.to_string(),
                seed: m.seed,
                window: m.tiling.window,
                stride: m.tiling.stride,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a manifest CSV back into `(train, val)`, preserving row order.
pub fn read_manifest(path: &Path) -> Result<(DatasetManifest, DatasetManifest)> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut train: Option<DatasetManifest> = None;
    let mut val: Option<DatasetManifest> = None;
    for row in reader.deserialize::<ManifestRow>() {
        let row = row?;
        let tag: SplitTag = row.split_tag.parse()?;
        let tiling = Tiling::new(row.window, row.stride)?;
        let slot = match tag {
            SplitTag::Train => &mut train,
            SplitTag::Val => &mut val,
        };
        let m = slot.get_or_insert_with(|| DatasetManifest {
            patches: Vec::new(),
            split: tag,
            seed: row.seed,
            tiling,
        });
        if m.tiling != tiling || m.seed != row.seed {
            return Err(Error::Parse(format!(
                "manifest mixes tiling or seed within the {tag} split"
            )));
        }
        m.patches.push(PatchOrigin {
            scene_id: row.scene_id,
            row: row.row_offset,
            col: row.col_offset,
        });
    }
    let train = train.ok_or_else(|| Error::EmptyDataset(format!("{} has no train rows", path.display())))?;
    let val = val.unwrap_or_else(|| DatasetManifest {
        patches: Vec::new(),
        split: SplitTag::Val,
        seed: train.seed,
        tiling: train.tiling,
    });
    Ok((train, val))
}

/// Materializes the patches a manifest refers to, reading each scene once.
pub fn load_patches(scene_dir: &Path, manifest: &DatasetManifest) -> Result<Vec<PatchSample>> {
    let mut cache: HashMap<String, RasterScene> = HashMap::new();
    let mut out = Vec::with_capacity(manifest.len());
    for origin in &manifest.patches {
        if !cache.contains_key(&origin.scene_id) {
            let scene = read_scene(scene_dir, &origin.scene_id)?;
            cache.insert(origin.scene_id.clone(), scene);
        }
        let scene = &cache[&origin.scene_id];
        out.push(extract_patch(scene, origin.row, origin.col, manifest.tiling.window)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::split_dataset;

    fn scene(id: &str) -> RasterScene {
        let (h, w) = (6, 5);
        let image = (0..h * w * 3).map(|i| (i * 7 % 256) as u8).collect();
        let mask = (0..h * w).map(|i| (i % 3 == 0) as u8).collect();
        RasterScene::new(id, h, w, image, mask).unwrap()
    }

    #[test]
    fn scene_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = scene("a");
        write_scene(dir.path(), &s).unwrap();
        assert_eq!(list_scene_ids(dir.path()).unwrap(), vec!["a".to_string()]);
        assert_eq!(read_scene(dir.path(), "a").unwrap(), s);
    }

    #[test]
    fn polygon_scene_is_rasterized() {
        let dir = tempfile::tempdir().unwrap();
        let s = scene("p");
        write_image(&image_path(dir.path(), "p"), 6, 5, s.image().to_vec()).unwrap();
        fs::write(polygon_path(dir.path(), "p"), "# one square\n1,1 1,3 3,3 3,1\n").unwrap();
        let read = read_scene(dir.path(), "p").unwrap();
        assert_eq!(read.mask().iter().filter(|&&m| m == 1).count(), 4);
    }

    #[test]
    fn polygon_text_round_trip_and_errors() {
        let polys = parse_polygons("0,0 0,5 5,0\n\n0.5,0.5 2.5,0.5 2.5,3.25\n").unwrap();
        assert_eq!(polys.len(), 2);
        assert_eq!(parse_polygons(&format_polygons(&polys)).unwrap(), polys);
        assert!(matches!(parse_polygons("0,0 1,1"), Err(Error::InvalidPolygon(_))));
        assert!(matches!(parse_polygons("0;0 1,1 2,2"), Err(Error::Parse(_))));
    }

    #[test]
    fn manifest_round_trip_and_loading() {
        let dir = tempfile::tempdir().unwrap();
        let s = scene("m");
        write_scene(dir.path(), &s).unwrap();
        let tiling = Tiling::new(3, 2).unwrap();
        let origins: Vec<_> = crate::data::tile_scene(&s, tiling)
            .unwrap()
            .into_iter()
            .map(|p| p.origin)
            .collect();
        let (train, val) = split_dataset(&origins, 0.5, 4, tiling).unwrap();
        let path = dir.path().join("manifest.csv");
        write_manifest(&path, &[&train, &val]).unwrap();
        let (t2, v2) = read_manifest(&path).unwrap();
        assert_eq!((&t2, &v2), (&train, &val));
        let header = fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("scene_id,row_offset,col_offset,split_tag,seed,window,stride"));
        let patches = load_patches(dir.path(), &t2).unwrap();
        assert_eq!(patches.len(), t2.len());
        assert_eq!(patches[0].origin, t2.patches[0]);
    }
}
