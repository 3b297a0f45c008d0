//! Per-instance mask filter: drops masks that are too small or that run
//! along the image border (truncated objects).

use boxlift_core::raster::InstanceMask;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub min_area_px: usize,
    /// Maximum number of mask pixels allowed on the outermost image rows and columns.
    pub border_margin_px: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { min_area_px: 400, border_margin_px: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    TooSmall,
    Truncated,
}

impl DropReason {
    pub fn code(&self) -> &'static str {
        match self {
            Self::TooSmall => "too_small",
            Self::Truncated => "truncated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterDecision {
    Keep,
    Drop(DropReason),
}

/// Mask pixels lying on the one-pixel image boundary band.
pub fn border_pixels(mask: &InstanceMask) -> usize {
    let (w, h) = (mask.width, mask.height);
    if w == 0 || h == 0 {
        return 0;
    }
    (0..h).flat_map(|v| (0..w).map(move |u| (u, v))).filter(|&(u, v)| (u == 0 || v == 0 || u == w - 1 || v == h - 1) && mask.get(u, v)).count()
}

pub fn filter_instance(mask: &InstanceMask, cfg: &FilterConfig) -> FilterDecision {
    if mask.area() < cfg.min_area_px {
        return FilterDecision::Drop(DropReason::TooSmall);
    }
    if border_pixels(mask) > cfg.border_margin_px {
        return FilterDecision::Drop(DropReason::Truncated);
    }
    FilterDecision::Keep
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(w: u32, h: u32, n: usize, x0: u32, y0: u32, row: u32) -> InstanceMask {
        let mut m = InstanceMask::new(w, h);
        for i in 0..n as u32 {
            m.set(x0 + i % row, y0 + i / row, true);
        }
        m
    }

    #[test]
    fn area_threshold() {
        let cfg = FilterConfig::default();
        assert_eq!(filter_instance(&blob(100, 100, 399, 20, 20, 20), &cfg), FilterDecision::Drop(DropReason::TooSmall));
        assert_eq!(filter_instance(&blob(100, 100, 400, 20, 20, 20), &cfg), FilterDecision::Keep);
        assert_eq!(filter_instance(&blob(100, 100, 401, 20, 20, 20), &cfg), FilterDecision::Keep);
    }

    #[test]
    fn border_threshold() {
        let cfg = FilterConfig::default();
        // 30-wide rows starting in column 0: the first column touches the border in every row.
        let mut m = blob(100, 100, 600, 1, 40, 30);
        for v in 40..51 {
            m.set(0, v, true);
        }
        assert_eq!(border_pixels(&m), 11);
        assert_eq!(filter_instance(&m, &cfg), FilterDecision::Drop(DropReason::Truncated));
        m.set(0, 50, false);
        assert_eq!(border_pixels(&m), 10);
        assert_eq!(filter_instance(&m, &cfg), FilterDecision::Keep);
    }

    #[test]
    fn corners_count_once() {
        let mut m = InstanceMask::new(10, 10);
        m.set(0, 0, true);
        m.set(9, 9, true);
        assert_eq!(border_pixels(&m), 2);
    }
}
