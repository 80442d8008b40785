//! Rank-4 photometric stereo with template-based resolution of the linear
//! ambiguity.
//!
//! Under a first-order (ambient + directional) Lambertian model the image
//! matrix `M` (n images × p pixels) factors as `L S` with `L` n×4 lighting and
//! `S` 4×p shape, column `[ρ, ρn]` per pixel. The factorisation is known only
//! up to an invertible 4×4 `A`; it is fixed by least-squares alignment with
//! the `[1, n_t]` columns of a template surface's normals.

use nalgebra::{DMatrix, DVector, Matrix4, Vector2, Vector3, Vector4};

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::surface::{cross_stack, inverse_lengths, BsplineSurface, CoeffKind, CoeffMatrix, NormalField, UvSamples};

/// Minimum number of images for a rank-4 factorisation.
pub const MIN_IMAGES: usize = 4;
/// Minimum number of jointly valid pixels to resolve the ambiguity.
pub const MIN_AMBIGUITY_PIXELS: usize = 16;

/// `n` grayscale images of `p = width · height` pixels each.
///
/// Row `k` of `intensities` is image `k` in row-major pixel order. A NaN
/// marks a sample missing from one image only (e.g. occluded after
/// resampling); `pixel_mask` drops a pixel from every image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageStack {
    width: usize,
    height: usize,
    intensities: DMatrix<f64>,
    landmarks: Vec<Vec<Option<Vector2<f64>>>>,
    pixel_mask: Vec<bool>,
}

impl ImageStack {
    pub fn new(
        width: usize,
        height: usize,
        intensities: DMatrix<f64>,
        landmarks: Vec<Vec<Option<Vector2<f64>>>>,
        pixel_mask: Vec<bool>,
    ) -> Result<Self> {
        let p = width * height;
        if intensities.ncols() != p || pixel_mask.len() != p {
            return Err(Error::usage(format!(
                "stack of {width}x{height} images needs {p} columns and mask entries, got {} and {}",
                intensities.ncols(),
                pixel_mask.len()
            )));
        }
        if !landmarks.is_empty() && landmarks.len() != intensities.nrows() {
            return Err(Error::usage(format!(
                "{} landmark sets for {} images",
                landmarks.len(),
                intensities.nrows()
            )));
        }
        let (w, h) = (width as f64, height as f64);
        for (k, set) in landmarks.iter().enumerate() {
            for q in set.iter().flatten() {
                if !(q.x >= -0.5 && q.x <= w - 0.5 && q.y >= -0.5 && q.y <= h - 0.5) {
                    return Err(Error::usage(format!(
                        "landmark ({}, {}) of image {k} lies outside the {width}x{height} frame",
                        q.x, q.y
                    )));
                }
            }
        }
        Ok(Self {
            width,
            height,
            intensities,
            landmarks,
            pixel_mask,
        })
    }

    /// Stacks equally sized images; every pixel starts valid.
    pub fn from_images(images: &[GrayImage], landmarks: Vec<Vec<Option<Vector2<f64>>>>) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::InsufficientData("empty image stack".into()))?;
        let (w, h) = (first.width(), first.height());
        if images.iter().any(|im| im.width() != w || im.height() != h) {
            return Err(Error::usage("images in a stack must share one resolution"));
        }
        let m = DMatrix::from_fn(images.len(), w * h, |k, j| images[k].data()[j]);
        Self::new(w, h, m, landmarks, vec![true; w * h])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.intensities.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn intensities(&self) -> &DMatrix<f64> {
        &self.intensities
    }

    pub fn landmarks(&self) -> &[Vec<Option<Vector2<f64>>>] {
        &self.landmarks
    }

    pub fn pixel_mask(&self) -> &[bool] {
        &self.pixel_mask
    }

    pub fn image(&self, k: usize) -> GrayImage {
        let data = self.intensities.row(k).iter().copied().collect();
        GrayImage::new(self.width, self.height, data).expect("stack shape")
    }

    /// Sub-stack of the listed images.
    pub fn select(&self, images: &[usize]) -> Self {
        let rows: Vec<_> = images.iter().map(|&k| self.intensities.row(k)).collect();
        let intensities = DMatrix::from_rows(&rows);
        let landmarks = if self.landmarks.is_empty() {
            Vec::new()
        } else {
            images.iter().map(|&k| self.landmarks[k].clone()).collect()
        };
        Self {
            width: self.width,
            height: self.height,
            intensities,
            landmarks,
            pixel_mask: self.pixel_mask.clone(),
        }
    }

    /// Same stack with every intensity multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.intensities *= c;
        out
    }
}

/// Tunables of the photometric-stereo stage.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ShadingParams {
    /// Weight of the `sᵀGs` term relative to the mean diagonal of `L̃ᵀL̃`.
    pub gamma_factor: f64,
    /// Intensities below this are treated as shadowed.
    pub dark: f64,
    /// Intensities above this are treated as saturated.
    pub bright: f64,
}

impl Default for ShadingParams {
    fn default() -> Self {
        Self {
            gamma_factor: 0.1,
            dark: 0.02,
            bright: 0.98,
        }
    }
}

impl ShadingParams {
    fn usable(&self, x: f64) -> bool {
        x.is_finite() && x >= self.dark && x <= self.bright
    }
}

/// Per-image first-order lighting, n×4.
#[derive(Debug, Clone, PartialEq)]
pub struct LightMatrix(pub DMatrix<f64>);

/// 4×p shape matrix; columns flagged invalid are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeMatrix {
    pub matrix: DMatrix<f64>,
    pub valid: Vec<bool>,
}

impl ShapeMatrix {
    /// `Σ −s₀² + s₁² + s₂² + s₃²` over valid pixels.
    pub fn g_residual(&self) -> f64 {
        self.matrix
            .column_iter()
            .zip(&self.valid)
            .filter(|(_, &ok)| ok)
            .map(|(c, _)| -c[0] * c[0] + c[1] * c[1] + c[2] * c[2] + c[3] * c[3])
            .sum()
    }
}

/// The 4×4 matrix mapping the factorised shape onto the template frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ambiguity {
    pub matrix: Matrix4<f64>,
    /// 2-norm condition number; values above ~1e8 signal an unreliable fit.
    pub condition: f64,
}

/// Rank-4 truncated SVD `M ≈ L̃ S̃` with `L̃ = U√D`, `S̃ = √D Vᵀ`.
///
/// Only pixels usable in every image take part; the other shape columns are
/// left invalid for [`refine_shape`] to fill.
pub fn factorize(stack: &ImageStack, params: &ShadingParams) -> Result<(LightMatrix, ShapeMatrix)> {
    let n = stack.len();
    if n < MIN_IMAGES {
        return Err(Error::InsufficientData(format!(
            "rank-4 factorisation needs at least {MIN_IMAGES} images, got {n}"
        )));
    }
    let m = stack.intensities();
    let clean: Vec<usize> = (0..stack.pixels())
        .filter(|&j| stack.pixel_mask[j] && m.column(j).iter().all(|&x| params.usable(x)))
        .collect();
    if clean.len() < MIN_IMAGES {
        return Err(Error::InsufficientData(format!(
            "only {} pixels are lit in every image",
            clean.len()
        )));
    }
    let cols: Vec<_> = clean.iter().map(|&j| m.column(j)).collect();
    let mc = DMatrix::from_columns(&cols);
    let (u, sigma, vt) = truncated_svd(mc, 4);

    let root = sigma.map(f64::sqrt);
    let mut light = DMatrix::zeros(n, 4);
    for r in 0..4.min(u.ncols()) {
        light.set_column(r, &(u.column(r) * root[r]));
    }
    let mut shape = DMatrix::zeros(4, stack.pixels());
    let mut valid = vec![false; stack.pixels()];
    for (c, &j) in clean.iter().enumerate() {
        for r in 0..4.min(vt.nrows()) {
            shape[(r, j)] = root[r] * vt[(r, c)];
        }
        valid[j] = true;
    }
    Ok((LightMatrix(light), ShapeMatrix { matrix: shape, valid }))
}

// Leading `rank` singular triplets, sorted by decreasing singular value and
// zero-padded when the matrix has fewer.
fn truncated_svd(m: DMatrix<f64>, rank: usize) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let (rows, cols) = m.shape();
    let svd = m.svd(true, true);
    let u = svd.u.expect("left vectors");
    let vt = svd.v_t.expect("right vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut uo = DMatrix::zeros(rows, rank);
    let mut so = DVector::zeros(rank);
    let mut vo = DMatrix::zeros(rank, cols);
    for (r, &i) in order.iter().take(rank).enumerate() {
        uo.set_column(r, &u.column(i));
        so[r] = svd.singular_values[i];
        vo.set_row(r, &vt.row(i));
    }
    (uo, so, vo)
}

/// Per-pixel regularised least squares `(L̃ᵀL̃ + γG) s = L̃ᵀm` with
/// `G = diag(−1, 1, 1, 1)`.
///
/// Shadowed or saturated samples are dropped from a pixel's system; a pixel
/// with fewer than four remaining images, or a singular system, is invalid.
pub fn refine_shape(stack: &ImageStack, light: &LightMatrix, params: &ShadingParams) -> Result<ShapeMatrix> {
    let l = &light.0;
    if l.nrows() != stack.len() || l.ncols() != 4 {
        return Err(Error::usage(format!(
            "lighting matrix is {}x{}, expected {}x4",
            l.nrows(),
            l.ncols(),
            stack.len()
        )));
    }
    let gram = l.transpose() * l;
    let gamma = params.gamma_factor * gram.diagonal().mean();
    let g = Matrix4::from_diagonal(&Vector4::new(-1.0, 1.0, 1.0, 1.0)) * gamma;
    let full: Matrix4<f64> = gram.fixed_view::<4, 4>(0, 0).into_owned() + g;
    let scale = full.abs().max().max(f64::MIN_POSITIVE);

    let m = stack.intensities();
    let p = stack.pixels();
    let mut shape = DMatrix::zeros(4, p);
    let mut valid = vec![false; p];
    for j in 0..p {
        if !stack.pixel_mask[j] {
            continue;
        }
        let col = m.column(j);
        let rows: Vec<usize> = (0..stack.len()).filter(|&k| params.usable(col[k])).collect();
        if rows.len() < MIN_IMAGES {
            continue;
        }
        let mut lhs = if rows.len() == stack.len() { full } else { g };
        let mut rhs = Vector4::zeros();
        for &k in &rows {
            let lk = Vector4::new(l[(k, 0)], l[(k, 1)], l[(k, 2)], l[(k, 3)]);
            if rows.len() != stack.len() {
                lhs += lk * lk.transpose();
            }
            rhs += lk * col[k];
        }
        let lu = lhs.lu();
        if lu.determinant().abs() <= 1e-14 * scale.powi(4) {
            continue;
        }
        if let Some(s) = lu.solve(&rhs) {
            shape.set_column(j, &s);
            valid[j] = true;
        }
    }
    Ok(ShapeMatrix { matrix: shape, valid })
}

/// Template normals `Λ · ((T1 b_t) ⊗ (T2 b_t))` at the pixel-aligned samples.
pub fn template_normals(surface: &BsplineSurface, uv: &UvSamples) -> Result<NormalField> {
    let b = surface.control_vector();
    let fu = CoeffMatrix::assemble(surface, uv, CoeffKind::T1)?.mul_vec(&b);
    let fv = CoeffMatrix::assemble(surface, uv, CoeffKind::T2)?.mul_vec(&b);
    let cross = cross_stack(&fu, &fv);
    let lambda = inverse_lengths(&cross);
    let h = cross.component_mul(&lambda);
    let normals = (0..uv.len()).map(|k| h.fixed_rows::<3>(3 * k).into_owned()).collect();
    let valid = (0..uv.len()).map(|k| lambda[3 * k] > 0.0).collect();
    Ok(NormalField {
        normals,
        valid,
        uv: uv.clone(),
    })
}

/// Solves `min_A ‖Sᵗ − A S̃‖²` over pixels valid in both inputs, with `Sᵗ`
/// columns `[1, n_t]`, then returns the renormalised rows 1–3 of `A S̃`.
pub fn resolve_ambiguity(shape: &ShapeMatrix, template: &NormalField) -> Result<(Ambiguity, NormalField)> {
    let p = shape.matrix.ncols();
    if template.len() != p {
        return Err(Error::usage(format!(
            "template has {} normals for {p} pixels",
            template.len()
        )));
    }
    let both: Vec<usize> = (0..p).filter(|&j| shape.valid[j] && template.valid[j]).collect();
    if both.len() < MIN_AMBIGUITY_PIXELS {
        return Err(Error::InsufficientData(format!(
            "ambiguity needs {MIN_AMBIGUITY_PIXELS} pixels valid in shape and template, got {}",
            both.len()
        )));
    }
    let mut sst = Matrix4::zeros();
    let mut tst = Matrix4::zeros();
    for &j in &both {
        let s: Vector4<f64> = shape.matrix.fixed_view::<4, 1>(0, j).into_owned();
        let n = template.normals[j];
        let t = Vector4::new(1.0, n.x, n.y, n.z);
        sst += s * s.transpose();
        tst += t * s.transpose();
    }
    // A · (S̃S̃ᵀ) = Sᵗ S̃ᵀ
    let at = sst
        .cholesky()
        .ok_or_else(|| Error::Degenerate("factorised shape has rank below 4 on the template pixels".into()))?
        .solve(&tst.transpose());
    let a = at.transpose();
    let sv = a.singular_values();
    let condition = if sv.min() > 0.0 { sv.max() / sv.min() } else { f64::INFINITY };

    let mut normals = vec![Vector3::zeros(); p];
    let mut valid = vec![false; p];
    for j in 0..p {
        if !shape.valid[j] {
            continue;
        }
        let s = a * shape.matrix.fixed_view::<4, 1>(0, j);
        let n = Vector3::new(s[1], s[2], s[3]);
        let len = n.norm();
        if len > 1e-12 {
            normals[j] = n / len;
            valid[j] = true;
        }
    }
    Ok((
        Ambiguity { matrix: a, condition },
        NormalField {
            normals,
            valid,
            uv: template.uv.clone(),
        },
    ))
}

/// Factorised and refined shape of one frontal stack, reusable across
/// templates.
#[derive(Debug, Clone)]
pub struct PhotometricStereo {
    pub light: LightMatrix,
    pub shape: ShapeMatrix,
}

impl PhotometricStereo {
    pub fn new(stack: &ImageStack, params: &ShadingParams) -> Result<Self> {
        let (light, _) = factorize(stack, params)?;
        let shape = refine_shape(stack, &light, params)?;
        Ok(Self { light, shape })
    }

    /// Normals `h` aligned with the template's normal field.
    pub fn normals(&self, template: &NormalField) -> Result<NormalField> {
        Ok(resolve_ambiguity(&self.shape, template)?.1)
    }
}
