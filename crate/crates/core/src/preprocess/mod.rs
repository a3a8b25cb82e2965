//! Lesion-image feature extraction: Otsu segmentation, CIELUV colour
//! histograms, LBP texture histograms, structural shape descriptors and
//! augmentation by rotation/flip.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};

mod color;
mod lbp;
mod otsu;
mod shape;

pub use color::{luv_histogram, srgb_to_luv, LUV_BINS, LUV_RANGES};
pub use lbp::{lbp_histogram, LbpMapping};
pub use otsu::{otsu_threshold, Polarity};
pub use shape::{shape_features, ShapeFeatures, SHAPE_FEATURE_NAMES};

/// Row-major raster.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Raster<P> {
    width: usize,
    height: usize,
    pixels: Vec<P>,
}

pub type GrayImage = Raster<u8>;
pub type RgbImage = Raster<[u8; 3]>;
/// `true` marks the region of interest.
pub type Mask = Raster<bool>;

impl<P: Copy> Raster<P> {
    pub fn new(width: usize, height: usize, pixels: Vec<P>) -> Result<Self> {
        if width.checked_mul(height) != Some(pixels.len()) {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height} needs {} pixels, got {}",
                width.saturating_mul(height),
                pixels.len()
            )));
        }
        Ok(Raster { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: P) -> Self {
        Raster { width, height, pixels: vec![value; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> P) -> Self {
        let pixels = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Raster { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dimensions(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[P] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> P {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: P) {
        self.pixels[y * self.width + x] = value;
    }

    /// Pixel at signed coordinates, `None` outside the raster.
    pub fn get_checked(&self, x: isize, y: isize) -> Option<P> {
        (x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height)
            .then(|| self.get(x as usize, y as usize))
    }

    pub fn map<Q: Copy>(&self, f: impl Fn(P) -> Q) -> Raster<Q> {
        Raster { width: self.width, height: self.height, pixels: self.pixels.iter().map(|&p| f(p)).collect() }
    }

    pub(crate) fn check_same_size<Q>(&self, other: &Raster<Q>) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

impl Mask {
    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&m| m).count()
    }
}

/// ITU-R BT.601 luma, rounded.
pub fn to_gray(img: &RgbImage) -> GrayImage {
    img.map(|[r, g, b]| ((299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000) as u8)
}

pub fn load_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    let img = image::open(path.as_ref())?.to_luma8();
    let (w, h) = img.dimensions();
    Raster::new(w as usize, h as usize, img.into_raw())
}

pub fn load_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    let img = image::open(path.as_ref())?.to_rgb8();
    let (w, h) = img.dimensions();
    let pixels = img.into_raw().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    Raster::new(w as usize, h as usize, pixels)
}

fn pnm_encoder(path: &Path) -> Result<image::codecs::pnm::PnmEncoder<std::io::BufWriter<std::fs::File>>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(image::codecs::pnm::PnmEncoder::new(std::io::BufWriter::new(file)))
}

/// Binary PGM (P5).
pub fn save_gray(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    use image::ImageEncoder;
    let enc = pnm_encoder(path.as_ref())?
        .with_subtype(image::codecs::pnm::PnmSubtype::Graymap(image::codecs::pnm::SampleEncoding::Binary));
    enc.write_image(img.pixels(), img.width as u32, img.height as u32, image::ExtendedColorType::L8)?;
    Ok(())
}

/// Binary PPM (P6).
pub fn save_rgb(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    use image::ImageEncoder;
    let enc = pnm_encoder(path.as_ref())?
        .with_subtype(image::codecs::pnm::PnmSubtype::Pixmap(image::codecs::pnm::SampleEncoding::Binary));
    let raw: Vec<u8> = img.pixels().iter().flatten().copied().collect();
    enc.write_image(&raw, img.width as u32, img.height as u32, image::ExtendedColorType::Rgb8)?;
    Ok(())
}

/// Rotations are clockwise; combined ops rotate first, then flip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentOp {
    Rot90,
    Rot180,
    Rot270,
    Hflip,
    Rot90Hflip,
    Rot180Hflip,
    Rot270Hflip,
}

impl AugmentOp {
    pub const ALL: [AugmentOp; 7] = [
        AugmentOp::Rot90,
        AugmentOp::Rot180,
        AugmentOp::Rot270,
        AugmentOp::Hflip,
        AugmentOp::Rot90Hflip,
        AugmentOp::Rot180Hflip,
        AugmentOp::Rot270Hflip,
    ];

    fn quarter_turns(self) -> usize {
        match self {
            AugmentOp::Rot90 | AugmentOp::Rot90Hflip => 1,
            AugmentOp::Rot180 | AugmentOp::Rot180Hflip => 2,
            AugmentOp::Rot270 | AugmentOp::Rot270Hflip => 3,
            AugmentOp::Hflip => 0,
        }
    }

    fn flips(self) -> bool {
        matches!(self, AugmentOp::Hflip | AugmentOp::Rot90Hflip | AugmentOp::Rot180Hflip | AugmentOp::Rot270Hflip)
    }

    pub fn apply<P: Copy>(self, img: &Raster<P>) -> Raster<P> {
        let mut out = (0..self.quarter_turns()).fold(img.clone(), |acc, _| rotate90(&acc));
        if self.flips() {
            out = hflip(&out);
        }
        out
    }
}

pub fn rotate90<P: Copy>(img: &Raster<P>) -> Raster<P> {
    let h = img.height;
    Raster::from_fn(img.height, img.width, |x, y| img.get(y, h - 1 - x))
}

pub fn hflip<P: Copy>(img: &Raster<P>) -> Raster<P> {
    let w = img.width;
    Raster::from_fn(img.width, img.height, |x, y| img.get(w - 1 - x, y))
}

/// One output image per op, in order.
pub fn augment_image<P: Copy>(img: &Raster<P>, ops: &[AugmentOp]) -> Vec<Raster<P>> {
    ops.iter().map(|op| op.apply(img)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub lbp_points: usize,
    pub lbp_radius: usize,
    pub lbp_mapping: LbpMapping,
    pub polarity: Polarity,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig { lbp_points: 24, lbp_radius: 3, lbp_mapping: LbpMapping::Riu2, polarity: Polarity::Dark }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    pub structural: ShapeFeatures,
    pub color: Vec<f64>,
    pub texture: Vec<f64>,
}

impl FeatureBundle {
    /// Structural, then colour, then texture.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = self.structural.to_array().to_vec();
        out.extend_from_slice(&self.color);
        out.extend_from_slice(&self.texture);
        out
    }

    pub fn len(&self) -> usize {
        ShapeFeatures::LEN + self.color.len() + self.texture.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn into_sample(self, id: impl Into<String>, label: Option<usize>) -> Sample {
        Sample::new(id, self.to_vec(), label)
    }
}

/// Segments the lesion with Otsu on the luma image, then extracts shape,
/// colour (inside the mask) and texture (whole image) features.
pub fn extract_features(img: &RgbImage, cfg: &PreprocessConfig) -> Result<FeatureBundle> {
    let gray = to_gray(img);
    let (_, mask) = otsu_threshold(&gray, cfg.polarity)?;
    Ok(FeatureBundle {
        structural: shape_features(&mask, &gray)?,
        color: luv_histogram(img, Some(&mask))?,
        texture: lbp_histogram(&gray, cfg.lbp_points, cfg.lbp_radius, cfg.lbp_mapping)?,
    })
}
