use super::{Mask, RgbImage};
use crate::error::{Error, Result};

/// Bins per channel.
pub const LUV_BINS: usize = 255;

/// Fixed histogram ranges for L*, u*, v*.
pub const LUV_RANGES: [(f64, f64); 3] = [(0.0, 100.0), (-134.0, 220.0), (-140.0, 122.0)];

// D65 reference white
const XN: f64 = 0.95047;
const YN: f64 = 1.0;
const ZN: f64 = 1.08883;

fn linearize(c: u8) -> f64 {
    let c = c as f64 / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn chromaticity(x: f64, y: f64, z: f64) -> Option<(f64, f64)> {
    let d = x + 15.0 * y + 3.0 * z;
    (d > 0.0).then(|| (4.0 * x / d, 9.0 * y / d))
}

/// sRGB → XYZ (D65) → CIE L*u*v*.
pub fn srgb_to_luv([r, g, b]: [u8; 3]) -> [f64; 3] {
    let (r, g, b) = (linearize(r), linearize(g), linearize(b));
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;

    let yr = y / YN;
    let l = if yr > (6.0f64 / 29.0).powi(3) { 116.0 * yr.cbrt() - 16.0 } else { (29.0f64 / 3.0).powi(3) * yr };
    let (un, vn) = chromaticity(XN, YN, ZN).expect("white point has positive luminance");
    match chromaticity(x, y, z) {
        Some((u, v)) => [l, 13.0 * l * (u - un), 13.0 * l * (v - vn)],
        None => [l, 0.0, 0.0],
    }
}

fn bin(value: f64, (lo, hi): (f64, f64)) -> usize {
    let t = ((value - lo) / (hi - lo) * LUV_BINS as f64).floor();
    t.clamp(0.0, (LUV_BINS - 1) as f64) as usize
}

/// L, u, v histograms concatenated, each normalized to sum to 1.
pub fn luv_histogram(img: &RgbImage, mask: Option<&Mask>) -> Result<Vec<f64>> {
    if let Some(m) = mask {
        img.check_same_size(m)?;
    }
    let mut counts = vec![0u64; 3 * LUV_BINS];
    let mut total = 0u64;
    for (i, &px) in img.pixels().iter().enumerate() {
        if mask.is_some_and(|m| !m.pixels()[i]) {
            continue;
        }
        total += 1;
        for (c, value) in srgb_to_luv(px).into_iter().enumerate() {
            counts[c * LUV_BINS + bin(value, LUV_RANGES[c])] += 1;
        }
    }
    if total == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(counts.into_iter().map(|c| c as f64 / total as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::Raster;

    fn block_sums(h: &[f64]) -> Vec<f64> {
        h.chunks(LUV_BINS).map(|b| b.iter().sum()).collect()
    }

    #[test]
    fn black_has_zero_lightness() {
        let h = luv_histogram(&Raster::filled(3, 3, [0, 0, 0]), None).unwrap();
        assert_eq!(h[0], 1.0);
        assert_eq!(h.len(), 765);
    }

    #[test]
    fn white_is_achromatic() {
        let [l, u, v] = srgb_to_luv([255, 255, 255]);
        assert!((l - 100.0).abs() < 1e-3, "{l}");
        assert!(u.abs() < 1e-2 && v.abs() < 1e-2, "{u} {v}");
    }

    #[test]
    fn known_primaries() {
        // reference values for sRGB primaries under D65
        let [l, u, v] = srgb_to_luv([255, 0, 0]);
        assert!((l - 53.24).abs() < 0.01 && (u - 175.01).abs() < 0.05 && (v - 37.76).abs() < 0.05, "{l} {u} {v}");
        let [l, u, v] = srgb_to_luv([0, 255, 0]);
        assert!((l - 87.73).abs() < 0.01 && (u + 83.07).abs() < 0.05 && (v - 107.40).abs() < 0.05, "{l} {u} {v}");
    }

    #[test]
    fn red_and_green_differ_in_chroma_blocks() {
        let red = luv_histogram(&Raster::filled(4, 4, [255, 0, 0]), None).unwrap();
        let green = luv_histogram(&Raster::filled(4, 4, [0, 255, 0]), None).unwrap();
        assert_ne!(red[LUV_BINS..2 * LUV_BINS], green[LUV_BINS..2 * LUV_BINS]);
        assert_ne!(red[2 * LUV_BINS..], green[2 * LUV_BINS..]);
        assert_eq!(red, luv_histogram(&Raster::filled(4, 4, [255, 0, 0]), None).unwrap());
    }

    #[test]
    fn masked_and_normalized() {
        let img = Raster::from_fn(16, 9, |x, y| [(x * 16) as u8, (y * 28) as u8, ((x + y) * 9) as u8]);
        let mask = Raster::from_fn(16, 9, |x, _| x < 5);
        for h in [luv_histogram(&img, None).unwrap(), luv_histogram(&img, Some(&mask)).unwrap()] {
            for s in block_sums(&h) {
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
        let empty = Raster::filled(16, 9, false);
        assert!(matches!(luv_histogram(&img, Some(&empty)), Err(Error::EmptyMask)));
        assert!(luv_histogram(&img, Some(&Raster::filled(2, 2, true))).is_err());
    }

    #[test]
    fn out_of_range_clamps() {
        assert_eq!(bin(-1e9, (0.0, 100.0)), 0);
        assert_eq!(bin(1e9, (0.0, 100.0)), 254);
        assert_eq!(bin(100.0, (0.0, 100.0)), 254);
    }
}
