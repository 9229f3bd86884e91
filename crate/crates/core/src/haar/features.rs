use std::fmt;
use std::str::FromStr;

use super::integral::IntegralImage;
use super::HaarError;

/// Side of the base detection window.
pub const WINDOW: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureKind {
    /// Left half white, right half black.
    TwoRectH,
    /// Top half white, bottom half black.
    TwoRectV,
    /// Outer thirds white, middle third black (weighted twice).
    ThreeRectH,
    /// Top-left and bottom-right white, the other diagonal black.
    FourRect,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 4] = [
        FeatureKind::TwoRectH,
        FeatureKind::TwoRectV,
        FeatureKind::ThreeRectH,
        FeatureKind::FourRect,
    ];

    /// Number of unit cells across and down.
    pub fn cells(self) -> (usize, usize) {
        match self {
            FeatureKind::TwoRectH => (2, 1),
            FeatureKind::TwoRectV => (1, 2),
            FeatureKind::ThreeRectH => (3, 1),
            FeatureKind::FourRect => (2, 2),
        }
    }

    fn name(self) -> &'static str {
        match self {
            FeatureKind::TwoRectH => "two-h",
            FeatureKind::TwoRectV => "two-v",
            FeatureKind::ThreeRectH => "three-h",
            FeatureKind::FourRect => "four",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureKind {
    type Err = HaarError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FeatureKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| HaarError::Model(format!("unknown feature kind {s:?}")))
    }
}

/// A feature placed inside the base window; `w` and `h` are the full extent
/// and are multiples of the kind's cell counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HaarFeature {
    pub kind: FeatureKind,
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl HaarFeature {
    pub fn new(kind: FeatureKind, x: usize, y: usize, w: usize, h: usize) -> Result<Self, HaarError> {
        let (cx, cy) = kind.cells();
        if w == 0 || h == 0 || w % cx != 0 || h % cy != 0 || x + w > WINDOW || y + h > WINDOW {
            return Err(HaarError::Model(format!("{kind} feature {w}x{h} at ({x},{y}) does not fit the window")));
        }
        Ok(HaarFeature { kind, x, y, w, h })
    }

    /// Cell grid at `scale` for a window at `(wx, wy)`: cell extents are
    /// rounded once so all cells keep equal areas.
    pub fn scaled(&self, scale: f32) -> ScaledFeature {
        let (cx, cy) = self.kind.cells();
        let base_w = self.w / cx;
        let base_h = self.h / cy;
        let side = window_side(scale);
        let uw = ((base_w as f32 * scale).round() as usize).clamp(1, side / cx);
        let uh = ((base_h as f32 * scale).round() as usize).clamp(1, side / cy);
        // rounding can push the grid past the window edge; pull it back in
        let dx = ((self.x as f32 * scale).round() as usize).min(side - cx * uw);
        let dy = ((self.y as f32 * scale).round() as usize).min(side - cy * uh);
        ScaledFeature {
            kind: self.kind,
            dx,
            dy,
            uw,
            uh,
            area_ratio: (uw * uh) as f32 / (base_w * base_h) as f32,
        }
    }
}

/// A feature resolved to pixel offsets at one scan scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledFeature {
    kind: FeatureKind,
    dx: usize,
    dy: usize,
    uw: usize,
    uh: usize,
    area_ratio: f32,
}

impl ScaledFeature {
    /// White minus black sum at window origin `(wx, wy)`.
    #[inline]
    pub fn raw(&self, ii: &IntegralImage, wx: usize, wy: usize) -> i64 {
        let (x, y, w, h) = (wx + self.dx, wy + self.dy, self.uw, self.uh);
        let r = |i: usize, j: usize| i64::from(ii.rect_sum(x + i * w, y + j * h, w, h));
        match self.kind {
            FeatureKind::TwoRectH => r(0, 0) - r(1, 0),
            FeatureKind::TwoRectV => r(0, 0) - r(0, 1),
            FeatureKind::ThreeRectH => r(0, 0) + r(2, 0) - 2 * r(1, 0),
            FeatureKind::FourRect => r(0, 0) + r(1, 1) - r(1, 0) - r(0, 1),
        }
    }

    /// `raw / (σ·area ratio)`, with `inv_sigma` = 1/σ of the window (0 for a
    /// flat window).
    #[inline]
    pub fn value(&self, ii: &IntegralImage, wx: usize, wy: usize, inv_sigma: f32) -> f32 {
        self.raw(ii, wx, wy) as f32 * inv_sigma / self.area_ratio
    }

    pub fn area_ratio(&self) -> f32 {
        self.area_ratio
    }
}

/// `1/σ` over the scaled window, or 0 for zero variance.
pub fn inverse_sigma(ii: &IntegralImage, wx: usize, wy: usize, side: usize) -> f32 {
    let s = ii.std_dev(wx, wy, side);
    if s > 0.0 {
        (1.0 / s) as f32
    } else {
        0.0
    }
}

/// Window side in pixels at `scale`.
pub fn window_side(scale: f32) -> usize {
    (WINDOW as f32 * scale).round() as usize
}

/// Feature response at a window origin and scale. With `variance_norm` the
/// value is divided by the window's standard deviation (a flat window gives
/// 0); values are also divided by the cell-area growth so they are comparable
/// across scales.
pub fn feature_value(
    ii: &IntegralImage,
    f: &HaarFeature,
    origin: (usize, usize),
    scale: f32,
    variance_norm: bool,
) -> f32 {
    let sf = f.scaled(scale);
    if variance_norm {
        sf.value(ii, origin.0, origin.1, inverse_sigma(ii, origin.0, origin.1, window_side(scale)))
    } else {
        sf.raw(ii, origin.0, origin.1) as f32 / sf.area_ratio
    }
}

/// Every feature of every kind with positions on a 2-px grid and extents in
/// 2-px steps (multiples of 3 for the three-rectangle kind).
pub fn feature_pool() -> Vec<HaarFeature> {
    let mut pool = Vec::new();
    for kind in FeatureKind::ALL {
        let (cx, cy) = kind.cells();
        let sizes = |cells: usize| -> Vec<usize> {
            let step = if cells == 3 { 3 } else { 2 };
            (1..=WINDOW / step).map(|k| k * step).filter(|s| s % cells == 0).collect()
        };
        for w in sizes(cx) {
            for h in sizes(cy) {
                for y in (0..=WINDOW - h).step_by(2) {
                    for x in (0..=WINDOW - w).step_by(2) {
                        pool.push(HaarFeature { kind, x, y, w, h });
                    }
                }
            }
        }
    }
    pool
}
