use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::GrayImage;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LbpMapping {
    /// Raw codes, `2^P` bins.
    None,
    /// One bin per uniform pattern and rotation plus one for the rest,
    /// `P(P−1)+3` bins.
    Uniform,
    /// Rotation-invariant uniform: number of set bits for uniform patterns,
    /// one extra bin for the rest, `P+2` bins.
    #[default]
    Riu2,
}

const MAX_RAW_POINTS: usize = 24;

impl LbpMapping {
    pub fn bins(self, points: usize) -> usize {
        match self {
            LbpMapping::None => 1 << points,
            LbpMapping::Uniform => points * (points - 1) + 3,
            LbpMapping::Riu2 => points + 2,
        }
    }

    fn bin(self, code: u64, points: usize) -> usize {
        if self == LbpMapping::None {
            return code as usize;
        }
        let bit = |i: usize| (code >> (i % points)) & 1;
        let transitions = (0..points).filter(|&i| bit(i) != bit(i + 1)).count();
        let ones = code.count_ones() as usize;
        match (self, transitions) {
            (LbpMapping::Riu2, 0..=2) => ones,
            (LbpMapping::Riu2, _) => points + 1,
            (_, 0) if ones == 0 => 0,
            (_, 0) => points * (points - 1) + 1,
            (_, 2) => {
                // start of the run of ones
                let start = (0..points).find(|&i| bit(i) == 1 && bit(i + points - 1) == 0).expect("two transitions");
                1 + (ones - 1) * points + start
            }
            _ => points * (points - 1) + 2,
        }
    }
}

/// Snaps trigonometric round-off so axis-aligned neighbours sample exactly.
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

fn bilinear(img: &GrayImage, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as usize, y0 as usize);
    let x1 = if fx > 0.0 { x0 + 1 } else { x0 };
    let y1 = if fy > 0.0 { y0 + 1 } else { y0 };
    let p = |x, y| img.get(x, y) as f64;
    (1.0 - fy) * ((1.0 - fx) * p(x0, y0) + fx * p(x1, y0)) + fy * ((1.0 - fx) * p(x0, y1) + fx * p(x1, y1))
}

/// Circular LBP histogram over pixels at least `radius` from the border.
///
/// Neighbour `p` sits at angle `2πp/P`; its bit is set when the
/// interpolated neighbour is strictly brighter than the centre.
pub fn lbp_histogram(img: &GrayImage, points: usize, radius: usize, mapping: LbpMapping) -> Result<Vec<f64>> {
    let (w, h) = img.dimensions();
    if points == 0 || points > 64 || (mapping == LbpMapping::None && points > MAX_RAW_POINTS) {
        return Err(Error::Config(format!("unsupported LBP point count {points} for {mapping:?}")));
    }
    if radius == 0 {
        return Err(Error::Config("LBP radius must be positive".into()));
    }
    if w <= 2 * radius + 1 || h <= 2 * radius + 1 {
        return Err(Error::ImageTooSmall { width: w, height: h, radius });
    }
    let offsets: Vec<(f64, f64)> = (0..points)
        .map(|p| {
            let theta = 2.0 * PI * p as f64 / points as f64;
            (snap(radius as f64 * theta.cos()), snap(-(radius as f64) * theta.sin()))
        })
        .collect();

    let mut counts = vec![0u64; mapping.bins(points)];
    for y in radius..h - radius {
        for x in radius..w - radius {
            let centre = img.get(x, y) as f64;
            let code = offsets.iter().enumerate().fold(0u64, |code, (p, &(dx, dy))| {
                let v = bilinear(img, x as f64 + dx, y as f64 + dy);
                // interpolating a flat patch can land a rounding error above it
                if v - centre > 1e-9 {
                    code | (1 << p)
                } else {
                    code
                }
            });
            counts[mapping.bin(code, points)] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    Ok(counts.into_iter().map(|c| c as f64 / total as f64).collect())
}
