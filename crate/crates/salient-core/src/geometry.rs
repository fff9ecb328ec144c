//! Geometric primitives shared by every pipeline stage: axis-aligned
//! bounding boxes, run-length-encoded binary masks, and the IoU / Jaccard
//! similarities used as clustering distances.
//!
//! Conventions:
//! - Boxes are half-open intervals `[x_min, x_max) x [y_min, y_max)` so that
//!   integer-cornered boxes have exact pixel areas.
//! - Masks index pixels by `(row, col)` in row-major order.
//! - `IoU` and `Jaccard` of two empty operands are defined as 0, never 1.

use std::collections::BTreeSet;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid box [{x_min}, {y_min}, {x_max}, {y_max}]: coordinates must be finite with x_max > x_min and y_max > y_min")]
    InvalidBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
    },
    #[error("mask size mismatch: {0}x{1} vs {2}x{3}")]
    SizeMismatch(u32, u32, u32, u32),
    #[error("pixel buffer has {got} entries, expected {width}x{height} = {expected}")]
    BadPixelBuffer {
        got: usize,
        width: u32,
        height: u32,
        expected: usize,
    },
    #[error("run-length encoding is not canonical: {0}")]
    BadRle(String),
}

/// Axis-aligned bounding box in continuous image coordinates.
///
/// The box covers the half-open region `[x_min, x_max) x [y_min, y_max)`;
/// construction rejects empty or non-finite boxes, so `area() > 0` always
/// holds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        let finite =
            x_min.is_finite() && y_min.is_finite() && x_max.is_finite() && y_max.is_finite();
        if !finite || x_max <= x_min || y_max <= y_min {
            return Err(GeometryError::InvalidBox {
                x_min,
                y_min,
                x_max,
                y_max,
            });
        }
        Ok(BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Build from COCO-style `[x, y, width, height]`.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        BBox::new(x, y, x + w, y + h)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// `[x_min, y_min, x_max, y_max]`
    pub fn corners(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    /// `[x, y, width, height]`
    pub fn to_xywh(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.width(), self.height()]
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let h = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        w * h
    }
}

/// Intersection over union of two boxes. Symmetric, in `[0, 1]`, and 0 for
/// disjoint boxes.
pub fn iou_bbox(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    inter / union
}

/// Binary pixel mask stored as canonical run-length counts.
///
/// `runs` holds `(skip, run)` pairs over the row-major flattened grid:
/// `skip` background pixels followed by `run` foreground pixels. In canonical
/// form every `run` is positive, every `skip` after the first is positive,
/// and the trailing background stretch is implicit, so equal masks have equal
/// encodings and `encode(decode(m)) == m`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitMask {
    width: u32,
    height: u32,
    runs: Vec<u32>,
}

impl BitMask {
    pub fn empty(width: u32, height: u32) -> Self {
        BitMask {
            width,
            height,
            runs: Vec::new(),
        }
    }

    /// Encode a row-major pixel buffer. The buffer length must be
    /// `width * height`.
    pub fn from_pixels(width: u32, height: u32, pixels: &[bool]) -> Result<Self, GeometryError> {
        let expected = width as usize * height as usize;
        if pixels.len() != expected {
            return Err(GeometryError::BadPixelBuffer {
                got: pixels.len(),
                width,
                height,
                expected,
            });
        }
        let mut runs = Vec::new();
        let mut i = 0usize;
        while i < expected {
            let skip_start = i;
            while i < expected && !pixels[i] {
                i += 1;
            }
            if i == expected {
                break;
            }
            let run_start = i;
            while i < expected && pixels[i] {
                i += 1;
            }
            runs.push((run_start - skip_start) as u32);
            runs.push((i - run_start) as u32);
        }
        Ok(BitMask {
            width,
            height,
            runs,
        })
    }

    /// Encode from a pixel predicate over `(row, col)`.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let pixels: Vec<bool> = (0..height)
            .flat_map(|r| (0..width).map(move |c| (r, c)))
            .map(|(r, c)| f(r, c))
            .collect();
        BitMask::from_pixels(width, height, &pixels).expect("buffer sized to width*height")
    }

    /// Rebuild a mask from serialized counts, rejecting non-canonical input.
    pub fn from_runs(width: u32, height: u32, runs: Vec<u32>) -> Result<Self, GeometryError> {
        if runs.len() % 2 != 0 {
            return Err(GeometryError::BadRle(format!(
                "odd count of {} entries; counts must come in (skip, run) pairs",
                runs.len()
            )));
        }
        let mut total: u64 = 0;
        for (i, pair) in runs.chunks_exact(2).enumerate() {
            let (skip, run) = (pair[0], pair[1]);
            if run == 0 {
                return Err(GeometryError::BadRle(format!("zero-length run at pair {i}")));
            }
            if skip == 0 && i > 0 {
                return Err(GeometryError::BadRle(format!(
                    "zero skip at pair {i}; adjacent runs must be merged"
                )));
            }
            total += skip as u64 + run as u64;
        }
        if total > width as u64 * height as u64 {
            return Err(GeometryError::BadRle(format!(
                "counts cover {total} pixels but the grid is {width}x{height}"
            )));
        }
        Ok(BitMask {
            width,
            height,
            runs,
        })
    }

    /// Foreground rectangle helper: sets pixels in rows `[y0, y1)` and
    /// columns `[x0, x1)`, clamped to the grid.
    pub fn filled_rect(width: u32, height: u32, x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        let (x0, x1) = (x0.min(width), x1.min(width));
        let (y0, y1) = (y0.min(height), y1.min(height));
        if x0 >= x1 || y0 >= y1 {
            return BitMask::empty(width, height);
        }
        let mut runs = Vec::with_capacity(2 * (y1 - y0) as usize);
        let mut pos: u64 = 0;
        for row in y0..y1 {
            let start = row as u64 * width as u64 + x0 as u64;
            runs.push((start - pos) as u32);
            runs.push(x1 - x0);
            pos = start + (x1 - x0) as u64;
        }
        BitMask {
            width,
            height,
            runs,
        }
        .normalized()
    }

    /// Merge pairs separated by zero skips (full-width rectangles produce
    /// them row by row).
    fn normalized(self) -> Self {
        let mut runs: Vec<u32> = Vec::with_capacity(self.runs.len());
        for pair in self.runs.chunks_exact(2) {
            if pair[0] == 0 && !runs.is_empty() {
                let last = runs.len() - 1;
                runs[last] += pair[1];
            } else {
                runs.push(pair[0]);
                runs.push(pair[1]);
            }
        }
        BitMask {
            width: self.width,
            height: self.height,
            runs,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn runs(&self) -> &[u32] {
        &self.runs
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    /// Number of foreground pixels.
    pub fn count_ones(&self) -> u64 {
        self.runs
            .chunks_exact(2)
            .map(|pair| pair[1] as u64)
            .sum()
    }

    /// Foreground spans as `(start, len)` over the flattened grid.
    pub fn spans(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        let mut pos = 0u64;
        self.runs.chunks_exact(2).map(move |pair| {
            pos += pair[0] as u64;
            let start = pos;
            pos += pair[1] as u64;
            (start, pair[1] as u64)
        })
    }

    pub fn contains(&self, row: u32, col: u32) -> bool {
        if row >= self.height || col >= self.width {
            return false;
        }
        let idx = row as u64 * self.width as u64 + col as u64;
        self.spans()
            .take_while(|(start, _)| *start <= idx)
            .any(|(start, len)| idx >= start && idx < start + len)
    }

    /// Decode to a row-major pixel buffer.
    pub fn to_pixels(&self) -> Vec<bool> {
        let mut pixels = vec![false; self.width as usize * self.height as usize];
        for (start, len) in self.spans() {
            for p in &mut pixels[start as usize..(start + len) as usize] {
                *p = true;
            }
        }
        pixels
    }

    pub fn intersection_count(&self, other: &BitMask) -> Result<u64, GeometryError> {
        self.check_same_size(other)?;
        let mut total = 0u64;
        let mut sb = other.spans();
        let mut b = sb.next();
        for (s1, l1) in self.spans() {
            let e1 = s1 + l1;
            while let Some((s2, l2)) = b {
                let e2 = s2 + l2;
                let lo = s1.max(s2);
                let hi = e1.min(e2);
                if lo < hi {
                    total += hi - lo;
                }
                if e2 <= e1 {
                    b = sb.next();
                } else {
                    break;
                }
            }
        }
        Ok(total)
    }

    fn check_same_size(&self, other: &BitMask) -> Result<(), GeometryError> {
        if self.width != other.width || self.height != other.height {
            return Err(GeometryError::SizeMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }
}

/// Mask intersection over union. Requires equal dimensions; two empty masks
/// score 0.
pub fn iou_mask(a: &BitMask, b: &BitMask) -> Result<f64, GeometryError> {
    let inter = a.intersection_count(b)?;
    let union = a.count_ones() + b.count_ones() - inter;
    if union == 0 {
        return Ok(0.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Tight box around the foreground pixels, `None` for an empty mask.
///
/// A single pixel at `(row, col)` yields the unit box
/// `(col, row, col + 1, row + 1)` under the half-open convention.
pub fn mask_to_bbox(m: &BitMask) -> Option<BBox> {
    if m.width() == 0 || m.is_empty() {
        return None;
    }
    let w = m.width() as u64;
    let (mut min_row, mut max_row) = (u64::MAX, 0u64);
    let (mut min_col, mut max_col) = (u64::MAX, 0u64);
    for (start, len) in m.spans() {
        let end = start + len - 1;
        let (r0, c0) = (start / w, start % w);
        let (r1, c1) = (end / w, end % w);
        min_row = min_row.min(r0);
        max_row = max_row.max(r1);
        if r1 > r0 {
            // The span wraps a row boundary, so it touches both edges.
            min_col = 0;
            max_col = w - 1;
        } else {
            min_col = min_col.min(c0);
            max_col = max_col.max(c1);
        }
    }
    Some(
        BBox::new(
            min_col as f64,
            min_row as f64,
            (max_col + 1) as f64,
            (max_row + 1) as f64,
        )
        .expect("nonempty mask produces a positive-area box"),
    )
}

/// A set of opaque frame-qualified cluster labels.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelSet<T: Ord>(BTreeSet<T>);

impl<T: Ord> LabelSet<T> {
    pub fn new() -> Self {
        LabelSet(BTreeSet::new())
    }

    pub fn insert(&mut self, label: T) -> bool {
        self.0.insert(label)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, label: &T) -> bool {
        self.0.contains(label)
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.0.iter()
    }

    /// `|a intersect b| / |a union b|`; 0 when both sets are empty.
    pub fn jaccard(&self, other: &Self) -> f64 {
        let inter = self.0.intersection(&other.0).count();
        let union = self.0.len() + other.0.len() - inter;
        if union == 0 {
            return 0.0;
        }
        inter as f64 / union as f64
    }

    pub fn jaccard_distance(&self, other: &Self) -> f64 {
        1.0 - self.jaccard(other)
    }
}

impl<T: Ord> FromIterator<T> for LabelSet<T> {
    fn from_iter<I: IntoIterator<Item = T>>(iter: I) -> Self {
        LabelSet(iter.into_iter().collect())
    }
}
