//! Mask and box primitives.
//!
//! Masks are stored as uncompressed run lengths in column-major order
//! (top-to-bottom, then left-to-right), alternating background/foreground and
//! starting with a background run. Pixel `(row, col)` sits at linear index
//! `col * height + row`.
//!
//! IoU values are computed from exact integer pixel counts and divided once.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("mask dimensions must be positive, got {height}x{width}")]
    ZeroDimension { height: u32, width: u32 },
    #[error("run lengths sum to {sum}, expected height*width = {expected}")]
    CountSum { sum: u64, expected: u64 },
    #[error("run {index} is zero; only the leading background run may be empty")]
    InteriorZeroRun { index: usize },
    #[error("mask dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("invalid box [{x}, {y}, {w}, {h}]: origin must be >= 0 and extent > 0")]
    InvalidBox { x: f64, y: f64, w: f64, h: f64 },
    #[error("grid rows have unequal length")]
    RaggedGrid,
}

/// Binary mask in canonical column-major run-length form.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawRle", into = "RawRle")]
pub struct RleMask {
    height: u32,
    width: u32,
    counts: Vec<u32>,
}

/// Wire shape: `{"size": [h, w], "counts": [...]}`.
#[derive(Serialize, Deserialize)]
struct RawRle {
    size: [u32; 2],
    counts: Vec<u32>,
}

impl TryFrom<RawRle> for RleMask {
    type Error = GeometryError;
    fn try_from(raw: RawRle) -> Result<Self, Self::Error> {
        RleMask::new(raw.size[0], raw.size[1], raw.counts)
    }
}

impl From<RleMask> for RawRle {
    fn from(m: RleMask) -> Self {
        RawRle {
            size: [m.height, m.width],
            counts: m.counts,
        }
    }
}

impl RleMask {
    /// Validates the canonical-form invariants.
    pub fn new(height: u32, width: u32, counts: Vec<u32>) -> Result<Self, GeometryError> {
        if height == 0 || width == 0 {
            return Err(GeometryError::ZeroDimension { height, width });
        }
        let expected = height as u64 * width as u64;
        let sum: u64 = counts.iter().map(|&c| c as u64).sum();
        if sum != expected {
            return Err(GeometryError::CountSum { sum, expected });
        }
        if let Some(index) = counts.iter().skip(1).position(|&c| c == 0) {
            return Err(GeometryError::InteriorZeroRun { index: index + 1 });
        }
        Ok(Self {
            height,
            width,
            counts,
        })
    }

    /// Axis-aligned filled rectangle `[col0, col0+w) x [row0, row0+h)`.
    pub fn rectangle(
        height: u32,
        width: u32,
        col0: u32,
        row0: u32,
        w: u32,
        h: u32,
    ) -> Result<Self, GeometryError> {
        if w == 0 || h == 0 {
            return Err(GeometryError::EmptyMask);
        }
        if col0 + w > width || row0 + h > height {
            return Err(GeometryError::InvalidBox {
                x: col0 as f64,
                y: row0 as f64,
                w: w as f64,
                h: h as f64,
            });
        }
        let lead = col0 as u64 * height as u64 + row0 as u64;
        let mut runs = Vec::with_capacity(2 * w as usize + 1);
        runs.push(lead as u32);
        for c in 0..w {
            runs.push(h);
            if c + 1 < w {
                runs.push(height - h);
            }
        }
        let covered = lead + (w as u64 - 1) * height as u64 + h as u64;
        runs.push((height as u64 * width as u64 - covered) as u32);
        Self::from_runs(height, width, runs)
    }

    /// Builds a mask from arbitrary runs, merging adjacent runs separated by
    /// zero-length runs into canonical form.
    pub fn from_runs(height: u32, width: u32, runs: Vec<u32>) -> Result<Self, GeometryError> {
        let mut canon: Vec<u32> = Vec::with_capacity(runs.len());
        // run parity: 0 = background, 1 = foreground
        let mut parity_of_last = 1u8;
        let mut parity = 0u8;
        for r in runs {
            if r > 0 {
                if !canon.is_empty() && parity == parity_of_last {
                    *canon.last_mut().unwrap() += r;
                } else {
                    if canon.is_empty() && parity == 1 {
                        canon.push(0);
                    }
                    canon.push(r);
                    parity_of_last = parity;
                }
            }
            parity ^= 1;
        }
        if canon.is_empty() {
            canon.push(0);
        }
        Self::new(height, width, canon)
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn pixel_count(&self) -> u64 {
        self.height as u64 * self.width as u64
    }

    /// Number of foreground pixels.
    pub fn area(&self) -> u64 {
        self.counts
            .iter()
            .skip(1)
            .step_by(2)
            .map(|&c| c as u64)
            .sum()
    }

    /// Foreground runs as `(start, len)` in linear column-major index space.
    pub fn foreground_runs(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        let mut pos = 0u64;
        self.counts.iter().enumerate().filter_map(move |(i, &c)| {
            let start = pos;
            pos += c as u64;
            (i % 2 == 1).then_some((start, c as u64))
        })
    }

    fn check_same_size(&self, other: &RleMask) -> Result<(), GeometryError> {
        if self.height != other.height || self.width != other.width {
            return Err(GeometryError::DimensionMismatch(
                self.height,
                self.width,
                other.height,
                other.width,
            ));
        }
        Ok(())
    }
}

/// Row-major binary grid, used at the edges (encode/decode, oracles).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryGrid {
    height: u32,
    width: u32,
    cells: Vec<bool>,
}

impl BinaryGrid {
    pub fn zeros(height: u32, width: u32) -> Self {
        Self {
            height,
            width,
            cells: vec![false; height as usize * width as usize],
        }
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> Result<Self, GeometryError> {
        let height = rows.len() as u32;
        let width = rows.first().map_or(0, |r| r.len()) as u32;
        if rows.iter().any(|r| r.len() as u32 != width) {
            return Err(GeometryError::RaggedGrid);
        }
        if height == 0 || width == 0 {
            return Err(GeometryError::ZeroDimension { height, width });
        }
        Ok(Self {
            height,
            width,
            cells: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn get(&self, row: u32, col: u32) -> bool {
        self.cells[row as usize * self.width as usize + col as usize]
    }

    pub fn set(&mut self, row: u32, col: u32, value: bool) {
        self.cells[row as usize * self.width as usize + col as usize] = value;
    }

    pub fn count_ones(&self) -> u64 {
        self.cells.iter().filter(|&&b| b).count() as u64
    }
}

pub fn decode(mask: &RleMask) -> BinaryGrid {
    let h = mask.height as u64;
    let mut grid = BinaryGrid::zeros(mask.height, mask.width);
    for (start, len) in mask.foreground_runs() {
        for idx in start..start + len {
            grid.set((idx % h) as u32, (idx / h) as u32, true);
        }
    }
    grid
}

pub fn encode(grid: &BinaryGrid) -> RleMask {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for col in 0..grid.width {
        for row in 0..grid.height {
            let v = grid.get(row, col);
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
    }
    counts.push(run);
    RleMask::new(grid.height, grid.width, counts).expect("encoder emits canonical runs")
}

/// Exact `(intersection, union)` pixel counts by walking both run lists.
pub fn mask_overlap(a: &RleMask, b: &RleMask) -> Result<(u64, u64), GeometryError> {
    a.check_same_size(b)?;
    let mut inter = 0u64;
    let mut ra = a.foreground_runs().peekable();
    let mut rb = b.foreground_runs().peekable();
    while let (Some(&(sa, la)), Some(&(sb, lb))) = (ra.peek(), rb.peek()) {
        let (ea, eb) = (sa + la, sb + lb);
        let lo = sa.max(sb);
        let hi = ea.min(eb);
        if hi > lo {
            inter += hi - lo;
        }
        if ea <= eb {
            ra.next();
        } else {
            rb.next();
        }
    }
    Ok((inter, a.area() + b.area() - inter))
}

/// Mask IoU in `[0, 1]`; 0 when both masks are empty.
pub fn mask_iou(a: &RleMask, b: &RleMask) -> Result<f64, GeometryError> {
    let (inter, union) = mask_overlap(a, b)?;
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}

/// Axis-aligned box in pixels, top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct Box2D {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl TryFrom<[f64; 4]> for Box2D {
    type Error = GeometryError;
    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        Box2D::new(v[0], v[1], v[2], v[3])
    }
}

impl From<Box2D> for [f64; 4] {
    fn from(b: Box2D) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl Box2D {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        let ok = [x, y, w, h].iter().all(|v| v.is_finite())
            && x >= 0.0
            && y >= 0.0
            && w > 0.0
            && h > 0.0;
        if !ok {
            return Err(GeometryError::InvalidBox { x, y, w, h });
        }
        Ok(Self { x, y, w, h })
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Whether the box lies within a `width x height` image.
    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.right() <= width as f64 && self.bottom() <= height as f64
    }
}

pub fn box_iou(a: &Box2D, b: &Box2D) -> f64 {
    let iw = a.right().min(b.right()) - a.x.max(b.x);
    let ih = a.bottom().min(b.bottom()) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Minimal box containing every foreground pixel.
pub fn tight_box(mask: &RleMask) -> Result<Box2D, GeometryError> {
    let h = mask.height as u64;
    let (mut rmin, mut rmax) = (u64::MAX, 0u64);
    let (mut cmin, mut cmax) = (u64::MAX, 0u64);
    for (start, len) in mask.foreground_runs() {
        let end = start + len - 1;
        let (c0, c1) = (start / h, end / h);
        let (r0, r1) = if c0 == c1 {
            (start % h, end % h)
        } else {
            (0, h - 1)
        };
        rmin = rmin.min(r0);
        rmax = rmax.max(r1);
        cmin = cmin.min(c0);
        cmax = cmax.max(c1);
    }
    if cmin == u64::MAX {
        return Err(GeometryError::EmptyMask);
    }
    Box2D::new(
        cmin as f64,
        rmin as f64,
        (cmax - cmin + 1) as f64,
        (rmax - rmin + 1) as f64,
    )
}
