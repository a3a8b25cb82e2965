use std::collections::{HashSet, VecDeque};
use std::f64::consts::{PI, SQRT_2};

use super::{GrayImage, Mask};
use crate::error::{Error, Result};

pub const SHAPE_FEATURE_NAMES: [&str; 9] = [
    "asymmetry",
    "eccentricity",
    "perimeter",
    "max_intensity",
    "min_intensity",
    "mean_intensity",
    "solidity",
    "compactness",
    "circularity",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeFeatures {
    /// Mean over both principal axes of the fraction of region pixels whose
    /// mirror image falls outside the region.
    pub asymmetry: f64,
    pub eccentricity: f64,
    /// Length of the outer 8-connected contour through border pixels
    /// (unit steps along axes, √2 diagonally).
    pub perimeter: f64,
    pub max_intensity: f64,
    pub min_intensity: f64,
    pub mean_intensity: f64,
    /// Pixel area over the area of the convex hull of pixel corners.
    pub solidity: f64,
    /// `perimeter² / (4π·area)`; zero when the perimeter is zero.
    pub compactness: f64,
    /// `4π·area / perimeter²`; zero when the perimeter is zero.
    pub circularity: f64,
}

impl ShapeFeatures {
    pub const LEN: usize = 9;

    pub fn to_array(&self) -> [f64; 9] {
        [
            self.asymmetry,
            self.eccentricity,
            self.perimeter,
            self.max_intensity,
            self.min_intensity,
            self.mean_intensity,
            self.solidity,
            self.compactness,
            self.circularity,
        ]
    }
}

// clockwise on screen (y down), starting east
const DIRS: [(isize, isize); 8] = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];

/// Largest 8-connected component; ties go to the one found first in raster
/// order.
pub(crate) fn largest_component(mask: &Mask) -> Vec<(usize, usize)> {
    let (w, h) = mask.dimensions();
    let mut seen = vec![false; w * h];
    let mut best: Vec<(usize, usize)> = Vec::new();
    for start in 0..w * h {
        if !mask.pixels()[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut component = Vec::new();
        let mut queue = VecDeque::from([(start % w, start / w)]);
        while let Some((x, y)) = queue.pop_front() {
            component.push((x, y));
            for (dx, dy) in DIRS {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if mask.get_checked(nx, ny) == Some(true) {
                    let idx = ny as usize * w + nx as usize;
                    if !seen[idx] {
                        seen[idx] = true;
                        queue.push_back((nx as usize, ny as usize));
                    }
                }
            }
        }
        if component.len() > best.len() {
            best = component;
        }
    }
    best.sort_by_key(|&(x, y)| (y, x));
    best
}

/// Moore-neighbour trace of the outer contour, stopping when the start pixel
/// is about to repeat its first move.
fn contour_length(region: &HashSet<(isize, isize)>, start: (isize, isize)) -> f64 {
    let inside = |p: (isize, isize)| region.contains(&p);
    let step = |p: (isize, isize), d: usize| (p.0 + DIRS[d].0, p.1 + DIRS[d].1);

    // raster-first pixel: its west neighbour is background
    let mut p = start;
    let mut back = 4;
    let mut first_move = None;
    let mut length = 0.0;
    for _ in 0..8 * region.len() + 8 {
        let Some(d) = (1..=8).map(|k| (back + k) % 8).find(|&d| inside(step(p, d))) else {
            return 0.0;
        };
        match first_move {
            None => first_move = Some(d),
            Some(f) if p == start && d == f => return length,
            _ => {}
        }
        length += if d % 2 == 0 { 1.0 } else { SQRT_2 };
        let prev = step(p, (d + 7) % 8);
        p = step(p, d);
        back = DIRS.iter().position(|&o| (p.0 + o.0, p.1 + o.1) == prev).expect("previous probe is adjacent");
    }
    length
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Area of the convex hull of all pixel corners (monotone chain).
fn hull_area(pixels: &[(usize, usize)]) -> f64 {
    let mut pts: Vec<(i64, i64)> = pixels
        .iter()
        .flat_map(|&(x, y)| {
            let (x, y) = (x as i64, y as i64);
            [(x, y), (x + 1, y), (x, y + 1), (x + 1, y + 1)]
        })
        .collect();
    pts.sort_unstable();
    pts.dedup();
    let pts: Vec<(f64, f64)> = pts.into_iter().map(|(x, y)| (x as f64, y as f64)).collect();

    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for pass in [&pts[..], &pts.iter().rev().copied().collect::<Vec<_>>()[..]] {
        let floor = hull.len();
        for &pt in pass {
            while hull.len() >= floor + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], pt) <= 0.0 {
                hull.pop();
            }
            hull.push(pt);
        }
        hull.pop();
    }
    let n = hull.len();
    (0..n).map(|i| cross((0.0, 0.0), hull[i], hull[(i + 1) % n])).sum::<f64>().abs() / 2.0
}

/// Mirror of `(x, y)` across the line through `c` with unit direction `u`.
fn reflect((x, y): (f64, f64), c: (f64, f64), u: (f64, f64)) -> (isize, isize) {
    let (dx, dy) = (x - c.0, y - c.1);
    let along = dx * u.0 + dy * u.1;
    let rx = 2.0 * along * u.0 - dx;
    let ry = 2.0 * along * u.1 - dy;
    ((c.0 + rx).round() as isize, (c.1 + ry).round() as isize)
}

/// Structural descriptors of the largest connected region in `mask`.
pub fn shape_features(mask: &Mask, gray: &GrayImage) -> Result<ShapeFeatures> {
    mask.check_same_size(gray)?;
    let pixels = largest_component(mask);
    if pixels.is_empty() {
        return Err(Error::EmptyMask);
    }
    let area = pixels.len() as f64;
    let region: HashSet<(isize, isize)> = pixels.iter().map(|&(x, y)| (x as isize, y as isize)).collect();

    let cx = pixels.iter().map(|p| p.0 as f64).sum::<f64>() / area;
    let cy = pixels.iter().map(|p| p.1 as f64).sum::<f64>() / area;
    let (mut mu20, mut mu02, mut mu11) = (0.0, 0.0, 0.0);
    for &(x, y) in &pixels {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        mu20 += dx * dx;
        mu02 += dy * dy;
        mu11 += dx * dy;
    }
    let (mu20, mu02, mu11) = (mu20 / area, mu02 / area, mu11 / area);
    let spread = ((mu20 - mu02).powi(2) + 4.0 * mu11 * mu11).sqrt();
    let (l1, l2) = ((mu20 + mu02 + spread) / 2.0, (mu20 + mu02 - spread) / 2.0);
    let eccentricity = if l1 > 0.0 { (1.0 - (l2 / l1).max(0.0)).sqrt() } else { 0.0 };

    let theta = 0.5 * (2.0 * mu11).atan2(mu20 - mu02);
    let axes = [(theta.cos(), theta.sin()), (-theta.sin(), theta.cos())];
    let asymmetry = axes
        .iter()
        .map(|&u| {
            let outside = pixels
                .iter()
                .filter(|&&(x, y)| !region.contains(&reflect((x as f64, y as f64), (cx, cy), u)))
                .count();
            outside as f64 / area
        })
        .sum::<f64>()
        / 2.0;

    let perimeter = contour_length(&region, (pixels[0].0 as isize, pixels[0].1 as isize));

    let values: Vec<u8> = pixels.iter().map(|&(x, y)| gray.get(x, y)).collect();
    let max_intensity = *values.iter().max().expect("non-empty") as f64;
    let min_intensity = *values.iter().min().expect("non-empty") as f64;
    let mean_intensity = values.iter().map(|&v| v as f64).sum::<f64>() / area;

    let solidity = area / hull_area(&pixels);
    let (compactness, circularity) = if perimeter > 0.0 {
        (perimeter * perimeter / (4.0 * PI * area), 4.0 * PI * area / (perimeter * perimeter))
    } else {
        (0.0, 0.0)
    };

    Ok(ShapeFeatures {
        asymmetry,
        eccentricity,
        perimeter,
        max_intensity,
        min_intensity,
        mean_intensity,
        solidity,
        compactness,
        circularity,
    })
}
