use serde::{Deserialize, Serialize};

use super::{GrayImage, Mask};
use crate::error::{Error, Result};

/// Which side of the threshold is the region of interest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    /// Pixels `<= threshold`.
    #[default]
    Dark,
    /// Pixels `> threshold`.
    Light,
}

pub(crate) fn histogram(img: &GrayImage) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for &v in img.pixels() {
        hist[v as usize] += 1;
    }
    hist
}

/// Between-class variance scaled by N²: `diff² / den` with
/// `diff = |N·S0 − n0·S|`, `den = n0·n1`.
#[derive(Debug, Clone, Copy)]
struct Score {
    diff: u128,
    den: u128,
}

impl Score {
    fn greater_than(self, other: Score) -> bool {
        let exact = self
            .diff
            .checked_mul(self.diff)
            .and_then(|a| a.checked_mul(other.den))
            .zip(other.diff.checked_mul(other.diff).and_then(|b| b.checked_mul(self.den)));
        match exact {
            Some((a, b)) => a > b,
            None => self.value() > other.value(),
        }
    }

    fn value(self) -> f64 {
        let d = self.diff as f64;
        d * d / self.den as f64
    }
}

/// Threshold maximizing between-class variance, smallest on ties.
pub fn otsu_threshold(img: &GrayImage, polarity: Polarity) -> Result<(u8, Mask)> {
    let hist = histogram(img);
    let occupied: Vec<usize> = (0..256).filter(|&v| hist[v] > 0).collect();
    match occupied[..] {
        [] => return Err(Error::DimensionMismatch("image has no pixels".into())),
        [only] => return Err(Error::DegenerateHistogram(only as u8)),
        _ => {}
    }
    let n: u128 = hist.iter().map(|&c| c as u128).sum();
    let total: u128 = hist.iter().enumerate().map(|(v, &c)| v as u128 * c as u128).sum();

    let (mut n0, mut s0) = (0u128, 0u128);
    let mut best: Option<(u8, Score)> = None;
    for t in 0..255usize {
        n0 += hist[t] as u128;
        s0 += t as u128 * hist[t] as u128;
        let n1 = n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let score = Score { diff: (n * s0).abs_diff(n0 * total), den: n0 * n1 };
        if best.is_none_or(|(_, b)| score.greater_than(b)) {
            best = Some((t as u8, score));
        }
    }
    let (threshold, _) = best.expect("two occupied bins give at least one valid split");
    let mask = img.map(|v| match polarity {
        Polarity::Dark => v <= threshold,
        Polarity::Light => v > threshold,
    });
    Ok((threshold, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::Raster;

    #[test]
    fn constant_image_is_degenerate() {
        let img = Raster::filled(4, 4, 77u8);
        assert!(matches!(otsu_threshold(&img, Polarity::Dark), Err(Error::DegenerateHistogram(77))));
    }

    #[test]
    fn two_spikes_pick_smallest_threshold() {
        let img = Raster::from_fn(8, 2, |_, y| if y == 0 { 0u8 } else { 255 });
        let (t, mask) = otsu_threshold(&img, Polarity::Dark).unwrap();
        assert_eq!(t, 0);
        for x in 0..8 {
            assert!(mask.get(x, 0));
            assert!(!mask.get(x, 1));
        }
        let (_, light) = otsu_threshold(&img, Polarity::Light).unwrap();
        assert_eq!(light.count(), 8);
        assert!(light.get(0, 1));
    }

    #[test]
    fn bimodal_threshold_between_modes() {
        let img = Raster::from_fn(20, 20, |x, y| if x < 10 { 40 + (y % 5) as u8 } else { 200 + (y % 7) as u8 });
        let (t, mask) = otsu_threshold(&img, Polarity::Dark).unwrap();
        assert!((44..200).contains(&t));
        assert_eq!(mask.count(), 200);
    }
}
