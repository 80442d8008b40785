//! On-disk scenes: PGM images plus a JSON manifest, and the ground-truth
//! sidecar written next to synthetic scenes.
//!
//! ```text
//! manifest.json   {"width", "height", "images": [{"file", "landmarks": [[x, y] | null, ...]}]}
//! truth/surface.json
//! truth/poses.json
//! truth/normals.bin   nv·nu·3 little-endian f64, sample k = iv·nu + iu, NaN where invalid
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::io;
use crate::motion::{Pose, PoseSet};
use crate::shading::ImageStack;
use crate::surface::{BsplineSurface, NormalField};

pub const MANIFEST: &str = "manifest.json";
pub const TRUTH_DIR: &str = "truth";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestImage {
    pub file: String,
    pub landmarks: Vec<Option<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub width: usize,
    pub height: usize,
    pub images: Vec<ManifestImage>,
}

/// Reads the manifest and every image it lists, relative to its directory.
pub fn load_stack(manifest: impl AsRef<Path>) -> Result<ImageStack> {
    let manifest = manifest.as_ref();
    let m: Manifest = io::read_json(manifest)?;
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let mut images = Vec::with_capacity(m.images.len());
    for entry in &m.images {
        let img = GrayImage::read_pgm(dir.join(&entry.file))?;
        if img.width() != m.width || img.height() != m.height {
            return Err(Error::format(
                dir.join(&entry.file),
                format!("image is {}x{}, manifest says {}x{}", img.width(), img.height(), m.width, m.height),
            ));
        }
        images.push(img);
    }
    let landmarks = m
        .images
        .iter()
        .map(|e| e.landmarks.iter().map(|q| q.map(|[x, y]| Vector2::new(x, y))).collect())
        .collect();
    ImageStack::from_images(&images, landmarks)
}

/// Writes `img_NNN.pgm` files and the manifest into `dir`.
pub fn write_stack(
    dir: impl AsRef<Path>,
    images: &[GrayImage],
    landmarks: &[Vec<Option<Vector2<f64>>>],
    bit_depth: u8,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let first = images
        .first()
        .ok_or_else(|| Error::InsufficientData("no images to write".into()))?;
    let mut entries = Vec::with_capacity(images.len());
    for (k, (img, lm)) in images.iter().zip(landmarks).enumerate() {
        let file = format!("img_{k:03}.pgm");
        img.write_pgm(dir.join(&file), bit_depth)?;
        entries.push(ManifestImage {
            file,
            landmarks: lm.iter().map(|q| q.map(|q| [q.x, q.y])).collect(),
        });
    }
    let path = dir.join(MANIFEST);
    io::write_json(
        &path,
        &Manifest {
            width: first.width(),
            height: first.height(),
            images: entries,
        },
    )?;
    Ok(path)
}

pub fn normals_to_bytes(field: &NormalField) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 * field.len());
    for (n, &ok) in field.normals.iter().zip(&field.valid) {
        let v = if ok { *n } else { Vector3::repeat(f64::NAN) };
        for c in v.iter() {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    out
}

pub fn normals_from_bytes(bytes: &[u8]) -> Result<Vec<Option<Vector3<f64>>>> {
    if bytes.len() % 24 != 0 {
        return Err(Error::usage(format!("normal buffer of {} bytes is not a multiple of 24", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(24)
        .map(|c| {
            let f = |i: usize| f64::from_le_bytes(c[8 * i..8 * i + 8].try_into().expect("8 bytes"));
            let v = Vector3::new(f(0), f(1), f(2));
            (!v.x.is_nan()).then_some(v)
        })
        .collect())
}

/// Ground-truth files of a synthetic scene under `dir/truth`.
pub fn write_truth(dir: impl AsRef<Path>, surface: &BsplineSurface, poses: &[Pose], normals: &NormalField) -> Result<()> {
    let truth = dir.as_ref().join(TRUTH_DIR);
    fs::create_dir_all(&truth)?;
    surface.save(truth.join("surface.json"))?;
    io::write_json(truth.join("poses.json"), &PoseSet(poses.to_vec()))?;
    fs::write(truth.join("normals.bin"), normals_to_bytes(normals))?;
    Ok(())
}
