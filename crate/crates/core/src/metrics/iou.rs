use super::{MetricsError, Result};
use crate::coco::BBox;
use crate::raster::{self, Bitmask, Window};

/// Exact rectangle IoU.
pub fn box_iou(a: &BBox, b: &BBox) -> Result<f64> {
    for bx in [a, b] {
        if bx.is_degenerate() {
            return Err(MetricsError::DegenerateBox(*bx));
        }
    }
    let iw = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0);
    let ih = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return Ok(0.0);
    }
    let union = a.area() + b.area() - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

pub fn rasterize_polygon(rings: &[Vec<f64>], width: u32, height: u32) -> Result<Bitmask> {
    if width == 0 || height == 0 {
        return Err(MetricsError::ZeroDims);
    }
    Ok(raster::rasterize(rings, width, height))
}

/// Pixel IoU of two ring unions on a `width x height` frame; 0 when both are
/// empty.
pub fn mask_iou(a: &[Vec<f64>], b: &[Vec<f64>], width: u32, height: u32) -> Result<f64> {
    if width == 0 || height == 0 {
        return Err(MetricsError::ZeroDims);
    }
    // Only pixels near either region can be set, so compare over that window.
    let window = Window::covering(a, width, height).union(&Window::covering(b, width, height));
    let ma = raster::rasterize_in(a, window);
    let mb = raster::rasterize_in(b, window);
    let union = ma.union_count(&mb);
    if union == 0 {
        return Ok(0.0);
    }
    Ok(ma.intersection_count(&mb) as f64 / union as f64)
}
