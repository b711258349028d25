//! Scanline polygon rasterization.
//!
//! A pixel `(i, j)` is set iff its center `(i + 0.5, j + 0.5)` lies inside the
//! union of rings under the even-odd rule. Rings are flat `[x0, y0, x1, y1, ...]`
//! lists and are implicitly closed. Edge crossings use the half-open rule
//! `(y0 <= cy) != (y1 <= cy)`, and a center exactly on a left span boundary is
//! inside while one on a right boundary is outside, so two polygons sharing an
//! edge never both claim a pixel.

use serde::{Deserialize, Serialize};

/// Row-major bit mask of `width * height` pixels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bitmask {
    width: u32,
    height: u32,
    words: Vec<u64>,
}

impl Bitmask {
    pub fn new(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            words: vec![0; n.div_ceil(64)],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        let o = self.offset(x, y);
        self.words[o / 64] >> (o % 64) & 1 == 1
    }

    pub fn set(&mut self, x: u32, y: u32, on: bool) {
        let o = self.offset(x, y);
        if on {
            self.words[o / 64] |= 1 << (o % 64);
        } else {
            self.words[o / 64] &= !(1 << (o % 64));
        }
    }

    fn fill_span(&mut self, y: u32, x0: u32, x1: u32) {
        for x in x0..x1 {
            self.set(x, y, true);
        }
    }

    pub fn count(&self) -> u64 {
        self.words.iter().map(|w| u64::from(w.count_ones())).sum()
    }

    /// Popcount of `self & other`. Panics when dimensions differ.
    pub fn intersection_count(&self, other: &Bitmask) -> u64 {
        assert_eq!((self.width, self.height), (other.width, other.height));
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| u64::from((a & b).count_ones()))
            .sum()
    }

    /// Popcount of `self | other`. Panics when dimensions differ.
    pub fn union_count(&self, other: &Bitmask) -> u64 {
        assert_eq!((self.width, self.height), (other.width, other.height));
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| u64::from((a | b).count_ones()))
            .sum()
    }

    pub fn iter_set(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.height).flat_map(move |y| {
            (0..self.width).filter_map(move |x| self.get(x, y).then_some((x, y)))
        })
    }
}

/// Calls `emit(row, x_start, x_end)` for every half-open run of covered pixels,
/// restricted to `[0, width) x [0, height)`.
pub fn for_each_span<F>(rings: &[Vec<f64>], width: u32, height: u32, emit: F)
where
    F: FnMut(u32, u32, u32),
{
    for_each_span_in(rings, Window::frame(width, height), emit)
}

/// Pixel window `[x0, x1) x [y0, y1)` in frame coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl Window {
    pub fn frame(width: u32, height: u32) -> Self {
        Self { x0: 0, y0: 0, x1: width, y1: height }
    }

    pub fn width(&self) -> u32 {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> u32 {
        self.y1.saturating_sub(self.y0)
    }

    /// Smallest window inside the `width x height` frame covering every pixel
    /// whose center can fall inside the rings.
    pub fn covering(rings: &[Vec<f64>], width: u32, height: u32) -> Self {
        match extent(rings) {
            None => Self { x0: 0, y0: 0, x1: 0, y1: 0 },
            Some((xa, ya, xb, yb)) => {
                let lo = |v: f64, max: u32| (v - 0.5).floor().clamp(0.0, f64::from(max)) as u32;
                let hi = |v: f64, max: u32| (v + 0.5).ceil().clamp(0.0, f64::from(max)) as u32;
                Self { x0: lo(xa, width), y0: lo(ya, height), x1: hi(xb, width), y1: hi(yb, height) }
            }
        }
    }

    pub fn union(&self, other: &Window) -> Self {
        if self.width() == 0 || self.height() == 0 {
            return *other;
        }
        if other.width() == 0 || other.height() == 0 {
            return *self;
        }
        Self {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }
}

/// As [`for_each_span`], clipped to `window`. Rows and columns stay in frame
/// coordinates.
pub fn for_each_span_in<F>(rings: &[Vec<f64>], window: Window, mut emit: F)
where
    F: FnMut(u32, u32, u32),
{
    let edges = collect_edges(rings);
    if edges.is_empty() || window.width() == 0 || window.height() == 0 {
        return;
    }
    let (ymin, ymax) = edges.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |acc, e| {
        (acc.0.min(e.0 .1).min(e.1 .1), acc.1.max(e.0 .1).max(e.1 .1))
    });
    // rows whose centers can fall inside [ymin, ymax)
    let row_lo = ((ymin - 0.5).ceil().max(f64::from(window.y0))) as u32;
    let row_hi = ((ymax - 0.5).ceil().min(f64::from(window.y1))).max(0.0) as u32;

    let mut xs: Vec<f64> = Vec::new();
    for row in row_lo..row_hi {
        let cy = f64::from(row) + 0.5;
        xs.clear();
        for &((x0, y0), (x1, y1)) in &edges {
            if (y0 <= cy) != (y1 <= cy) {
                xs.push(x0 + (cy - y0) * (x1 - x0) / (y1 - y0));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let start = pixel_from(pair[0], window.x0, window.x1);
            let end = pixel_from(pair[1], window.x0, window.x1);
            if end > start {
                emit(row, start, end);
            }
        }
    }
}

// first pixel index whose center is >= x
fn pixel_from(x: f64, lo: u32, hi: u32) -> u32 {
    (x - 0.5).ceil().clamp(f64::from(lo), f64::from(hi)) as u32
}

type Edge = ((f64, f64), (f64, f64));

fn collect_edges(rings: &[Vec<f64>]) -> Vec<Edge> {
    let mut edges = Vec::new();
    for ring in rings {
        let n = ring.len() / 2;
        if n < 3 {
            continue;
        }
        for k in 0..n {
            let a = (ring[2 * k], ring[2 * k + 1]);
            let b = (ring[2 * ((k + 1) % n)], ring[2 * ((k + 1) % n) + 1]);
            if a.1 != b.1 {
                edges.push((a, b));
            }
        }
    }
    edges
}

/// Full-frame mask of the ring union.
pub fn rasterize(rings: &[Vec<f64>], width: u32, height: u32) -> Bitmask {
    let mut mask = Bitmask::new(width, height);
    for_each_span(rings, width, height, |y, x0, x1| mask.fill_span(y, x0, x1));
    mask
}

/// Mask of the ring union over `window`; mask pixel `(0, 0)` is frame pixel
/// `(window.x0, window.y0)`.
pub fn rasterize_in(rings: &[Vec<f64>], window: Window) -> Bitmask {
    let mut mask = Bitmask::new(window.width(), window.height());
    for_each_span_in(rings, window, |y, x0, x1| {
        mask.fill_span(y - window.y0, x0 - window.x0, x1 - window.x0)
    });
    mask
}

/// Number of covered pixels, without materializing a mask.
pub fn covered_area(rings: &[Vec<f64>], width: u32, height: u32) -> u64 {
    let mut total = 0u64;
    for_each_span(rings, width, height, |_, x0, x1| total += u64::from(x1 - x0));
    total
}

/// Axis-aligned rectangle `(x, y, w, h)` as a single ring.
pub fn rect_ring(x: f64, y: f64, w: f64, h: f64) -> Vec<f64> {
    vec![x, y, x + w, y, x + w, y + h, x, y + h]
}

/// Tight extent `(xmin, ymin, xmax, ymax)` over all ring vertices.
pub fn extent(rings: &[Vec<f64>]) -> Option<(f64, f64, f64, f64)> {
    let mut it = rings.iter().flat_map(|r| r.chunks_exact(2));
    let first = it.next()?;
    Some(it.fold(
        (first[0], first[1], first[0], first[1]),
        |(x0, y0, x1, y1), p| (x0.min(p[0]), y0.min(p[1]), x1.max(p[0]), y1.max(p[1])),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_on_4x4() {
        let m = rasterize(&[rect_ring(0.0, 0.0, 2.0, 2.0)], 4, 4);
        let set: Vec<_> = m.iter_set().collect();
        assert_eq!(set, vec![(0, 0), (1, 0), (0, 1), (1, 1)]);
    }

    #[test]
    fn empty_rings_give_empty_mask() {
        let m = rasterize(&[], 5, 3);
        assert_eq!(m.count(), 0);
    }

    #[test]
    fn full_frame_rectangle() {
        let m = rasterize(&[rect_ring(0.0, 0.0, 7.0, 5.0)], 7, 5);
        assert_eq!(m.count(), 35);
    }

    #[test]
    fn hole_ring_is_subtracted() {
        let rings = vec![rect_ring(0.0, 0.0, 6.0, 6.0), rect_ring(2.0, 2.0, 2.0, 2.0)];
        assert_eq!(covered_area(&rings, 6, 6), 32);
    }

    #[test]
    fn adjacent_polygons_partition_pixels() {
        let a = rasterize(&[vec![0.0, 0.0, 10.0, 0.0, 0.0, 10.0]], 10, 10);
        let b = rasterize(&[vec![10.0, 0.0, 10.0, 10.0, 0.0, 10.0]], 10, 10);
        assert_eq!(a.intersection_count(&b), 0);
        assert_eq!(a.union_count(&b), 100);
    }

    #[test]
    fn window_matches_full_frame() {
        let rings = vec![vec![3.2, 1.7, 17.9, 4.4, 11.1, 13.6], rect_ring(5.0, 5.0, 2.5, 2.5)];
        let full = rasterize(&rings, 20, 16);
        let w = Window::covering(&rings, 20, 16);
        let part = rasterize_in(&rings, w);
        assert_eq!(full.count(), part.count());
        for (x, y) in part.iter_set() {
            assert!(full.get(x + w.x0, y + w.y0));
        }
    }

    #[test]
    fn out_of_frame_geometry_is_clipped() {
        assert_eq!(covered_area(&[rect_ring(-5.0, -5.0, 8.0, 8.0)], 4, 4), 9);
    }
}
