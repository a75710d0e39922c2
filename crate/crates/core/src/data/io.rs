//! Dataset layout on disk:
//!
//! ```text
//! <dir>/images/<id>.png   8-bit grayscale image
//! <dir>/masks/<id>.png    8-bit mask, nonzero = tumor
//! <dir>/manifest.csv      header `id,label`
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use image::GrayImage;
use serde::{Deserialize, Serialize};

use super::raster::{Label, Mask, Raster, Sample};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    id: String,
    label: String,
}

fn read_gray(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(img.to_luma8())
}

pub fn read_image(path: &Path) -> Result<Raster> {
    let g = read_gray(path)?;
    let data = g.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
    Raster::new(g.width() as usize, g.height() as usize, data)
}

/// Nonzero pixels become foreground.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let g = read_gray(path)?;
    let data = g.as_raw().iter().map(|&v| (v != 0) as u8).collect();
    Mask::new(g.width() as usize, g.height() as usize, data)
}

fn write_gray(path: &Path, width: usize, height: usize, bytes: Vec<u8>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let img = GrayImage::from_raw(width as u32, height as u32, bytes)
        .ok_or_else(|| Error::Data(format!("bad raster extent for {}", path.display())))?;
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_image(path: &Path, img: &Raster) -> Result<()> {
    let bytes = img.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    write_gray(path, img.width(), img.height(), bytes)
}

/// Foreground is written as 255.
pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let bytes = mask.data().iter().map(|&v| if v != 0 { 255 } else { 0 }).collect();
    write_gray(path, mask.width(), mask.height(), bytes)
}

/// `stem -> path` for every `.png` in `dir`, sorted by stem.
pub fn list_pngs(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path.clone());
            }
        }
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<BTreeMap<String, Label>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    })?;
    let mut out = BTreeMap::new();
    for row in rdr.deserialize::<ManifestRow>() {
        let row = row?;
        out.insert(row.id, Label::parse(&row.label)?);
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, rows: &[(String, Label)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    for (id, label) in rows {
        w.serialize(ManifestRow {
            id: id.clone(),
            label: label.as_str().to_string(),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Load every image with its same-stem mask; samples come back sorted by id.
/// A missing manifest leaves every label `Unknown`.
pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let images = list_pngs(&dir.join("images"))?;
    let masks = list_pngs(&dir.join("masks"))?;
    let missing: Vec<String> = images.keys().filter(|k| !masks.contains_key(*k)).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::MissingMask(missing));
    }
    let manifest_path = dir.join("manifest.csv");
    let labels = if manifest_path.exists() {
        read_manifest(&manifest_path)?
    } else {
        BTreeMap::new()
    };
    let known: BTreeSet<&String> = images.keys().collect();
    let orphans: Vec<&String> = labels.keys().filter(|k| !known.contains(k)).collect();
    if !orphans.is_empty() {
        return Err(Error::Data(format!("manifest lists ids without images: {orphans:?}")));
    }
    images
        .iter()
        .map(|(id, img_path)| {
            let image = read_image(img_path)?;
            let mask = read_mask(&masks[id])?;
            let label = labels.get(id).copied().unwrap_or(Label::Unknown);
            Sample::new(id.clone(), image, mask, label)
        })
        .collect()
}

pub fn save_dataset(dir: &Path, samples: &[Sample]) -> Result<()> {
    fs::create_dir_all(dir.join("images")).map_err(|e| Error::io(dir, e))?;
    fs::create_dir_all(dir.join("masks")).map_err(|e| Error::io(dir, e))?;
    for s in samples {
        write_image(&dir.join("images").join(format!("{}.png", s.id)), &s.image)?;
        write_mask(&dir.join("masks").join(format!("{}.png", s.id)), &s.mask)?;
    }
    let rows: Vec<_> = samples.iter().map(|s| (s.id.clone(), s.label)).collect();
    write_manifest(&dir.join("manifest.csv"), &rows)
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
