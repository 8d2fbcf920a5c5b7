//! Procedural scene generator: one colored shape on a colored background,
//! with a caption templated from the scene parameters.

use serde::{Deserialize, Serialize};

use super::metrics::Bbox;
use super::ImageBuffer;
use crate::prng::Prng;

/// The eight palette colors with their exact RGB values.
pub const PALETTE: [(ColorName, [f32; 3]); 8] = [
    (ColorName::Red, [1.0, 0.0, 0.0]),
    (ColorName::Green, [0.0, 0.8, 0.0]),
    (ColorName::Blue, [0.0, 0.0, 1.0]),
    (ColorName::Yellow, [1.0, 1.0, 0.0]),
    (ColorName::Cyan, [0.0, 1.0, 1.0]),
    (ColorName::Magenta, [1.0, 0.0, 1.0]),
    (ColorName::Orange, [1.0, 0.5, 0.0]),
    (ColorName::White, [1.0, 1.0, 1.0]),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorName {
    Red,
    Green,
    Blue,
    Yellow,
    Cyan,
    Magenta,
    Orange,
    White,
}

impl ColorName {
    pub fn rgb(self) -> [f32; 3] {
        PALETTE
            .iter()
            .find(|(name, _)| *name == self)
            .map(|(_, rgb)| *rgb)
            .expect("every color name is in the palette")
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ColorName::Red => "red",
            ColorName::Green => "green",
            ColorName::Blue => "blue",
            ColorName::Yellow => "yellow",
            ColorName::Cyan => "cyan",
            ColorName::Magenta => "magenta",
            ColorName::Orange => "orange",
            ColorName::White => "white",
        }
    }

    pub fn from_str_opt(s: &str) -> Option<ColorName> {
        PALETTE
            .iter()
            .map(|(name, _)| *name)
            .find(|name| name.as_str() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Square,
    Circle,
    Triangle,
}

impl ShapeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ShapeKind::Square => "square",
            ShapeKind::Circle => "circle",
            ShapeKind::Triangle => "triangle",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneSpec {
    pub kind: ShapeKind,
    pub fill: ColorName,
    pub background: ColorName,
    /// Normalized center and half-extent in [0, 1] frame coordinates.
    pub cx: f64,
    pub cy: f64,
    pub size: f64,
    pub caption: String,
    pub bbox: Bbox,
}

impl SceneSpec {
    pub fn caption_for(fill: ColorName, kind: ShapeKind, bg: ColorName) -> String {
        format!(
            "a {} {} on a {} background",
            fill.as_str(),
            kind.as_str(),
            bg.as_str()
        )
    }
}

/// Signed tests put a point inside the shape; coordinates are normalized.
fn inside(kind: ShapeKind, cx: f64, cy: f64, size: f64, px: f64, py: f64) -> bool {
    match kind {
        ShapeKind::Square => (px - cx).abs() <= size && (py - cy).abs() <= size,
        ShapeKind::Circle => {
            let dx = px - cx;
            let dy = py - cy;
            dx * dx + dy * dy <= size * size
        }
        ShapeKind::Triangle => {
            // upward isoceles: apex on top, base at the bottom edge of the box
            let ax = cx;
            let ay = cy - size;
            let bx = cx - size;
            let by = cy + size;
            let cx2 = cx + size;
            let cy2 = cy + size;
            let sign = |x1: f64, y1: f64, x2: f64, y2: f64| {
                (px - x2) * (y1 - y2) - (x1 - x2) * (py - y2)
            };
            let d1 = sign(ax, ay, bx, by);
            let d2 = sign(bx, by, cx2, cy2);
            let d3 = sign(cx2, cy2, ax, ay);
            let has_neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
            let has_pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
            !(has_neg && has_pos)
        }
    }
}

const SUPERSAMPLES: usize = 4; // 4x4 grid per pixel

fn render(spec: &SceneSpec, size_px: usize) -> ImageBuffer {
    let fill = spec.fill.rgb();
    let bg = spec.background.rgb();
    let mut img = ImageBuffer::new(size_px, size_px);
    let inv = 1.0 / size_px as f64;
    let sub = 1.0 / SUPERSAMPLES as f64;
    for y in 0..size_px {
        for x in 0..size_px {
            let mut hits = 0usize;
            for sy in 0..SUPERSAMPLES {
                for sx in 0..SUPERSAMPLES {
                    let px = (x as f64 + (sx as f64 + 0.5) * sub) * inv;
                    let py = (y as f64 + (sy as f64 + 0.5) * sub) * inv;
                    if inside(spec.kind, spec.cx, spec.cy, spec.size, px, py) {
                        hits += 1;
                    }
                }
            }
            let cover = hits as f32 / (SUPERSAMPLES * SUPERSAMPLES) as f32;
            let rgb = [
                cover * fill[0] + (1.0 - cover) * bg[0],
                cover * fill[1] + (1.0 - cover) * bg[1],
                cover * fill[2] + (1.0 - cover) * bg[2],
            ];
            img.set_pixel(y, x, rgb);
        }
    }
    img
}

fn bbox_for(cx: f64, cy: f64, size: f64, size_px: usize) -> Bbox {
    let px = size_px as f64;
    let clampi = |v: f64| (v.max(0.0) as usize).min(size_px);
    Bbox {
        x0: clampi(((cx - size) * px).floor()),
        y0: clampi(((cy - size) * px).floor()),
        x1: clampi(((cx + size) * px).ceil()),
        y1: clampi(((cy + size) * px).ceil()),
    }
}

/// Draws a random scene at `size_px` square. The object always lies fully
/// inside the frame, and the fill color always differs from the background.
pub fn gen_scene(prng: &mut Prng, size_px: usize) -> (ImageBuffer, SceneSpec) {
    let kind = match prng.index(3) {
        0 => ShapeKind::Square,
        1 => ShapeKind::Circle,
        _ => ShapeKind::Triangle,
    };
    let fill = PALETTE[prng.index(8)].0;
    let bg = loop {
        let candidate = PALETTE[prng.index(8)].0;
        if candidate != fill {
            break candidate;
        }
    };
    // small objects force the model to lean on the caption; large ones keep
    // plenty of pixel evidence
    let size = prng.uniform_range(0.10, 0.32);
    let margin = size + 0.04;
    let cx = prng.uniform_range(margin, 1.0 - margin);
    let cy = prng.uniform_range(margin, 1.0 - margin);
    let spec = SceneSpec {
        kind,
        fill,
        background: bg,
        cx,
        cy,
        size,
        caption: SceneSpec::caption_for(fill, kind, bg),
        bbox: bbox_for(cx, cy, size, size_px),
    };
    (render(&spec, size_px), spec)
}

/// Mean color over pixels strictly interior to the object (shape shrunk to
/// 60% of its extent, so antialiased edges never contribute).
pub fn interior_mean_color(img: &ImageBuffer, spec: &SceneSpec) -> [f32; 3] {
    let mut acc = [0.0f64; 3];
    let mut count = 0usize;
    let inv = 1.0 / img.width as f64;
    for y in 0..img.height {
        for x in 0..img.width {
            let px = (x as f64 + 0.5) * inv;
            let py = (y as f64 + 0.5) * inv;
            if inside(spec.kind, spec.cx, spec.cy, spec.size * 0.6, px, py) {
                let p = img.pixel(y, x);
                for c in 0..3 {
                    acc[c] += p[c] as f64;
                }
                count += 1;
            }
        }
    }
    if count == 0 {
        // degenerate at tiny raster sizes; fall back to the bbox center pixel
        let cx = ((spec.cx * img.width as f64) as usize).min(img.width - 1);
        let cy = ((spec.cy * img.height as f64) as usize).min(img.height - 1);
        return img.pixel(cy, cx);
    }
    [
        (acc[0] / count as f64) as f32,
        (acc[1] / count as f64) as f32,
        (acc[2] / count as f64) as f32,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_scene() {
        let mut a = Prng::seed_from(12);
        let mut b = Prng::seed_from(12);
        let (img_a, spec_a) = gen_scene(&mut a, 64);
        let (img_b, spec_b) = gen_scene(&mut b, 64);
        assert_eq!(img_a.data, img_b.data);
        assert_eq!(spec_a.caption, spec_b.caption);
    }

    #[test]
    fn red_square_dominates_red_channel() {
        let spec = SceneSpec {
            kind: ShapeKind::Square,
            fill: ColorName::Red,
            background: ColorName::Blue,
            cx: 0.5,
            cy: 0.5,
            size: 0.25,
            caption: SceneSpec::caption_for(ColorName::Red, ShapeKind::Square, ColorName::Blue),
            bbox: bbox_for(0.5, 0.5, 0.25, 64),
        };
        let img = render(&spec, 64);
        let b = spec.bbox;
        let mut red = 0.0;
        let mut blue = 0.0;
        for y in b.y0..b.y1 {
            for x in b.x0..b.x1 {
                red += img.pixel(y, x)[0];
                blue += img.pixel(y, x)[2];
            }
        }
        assert!(red > blue, "red {red} vs blue {blue}");
    }

    #[test]
    fn caption_matches_interior_pixels() {
        let mut p = Prng::seed_from(5);
        for _ in 0..50 {
            let (img, spec) = gen_scene(&mut p, 64);
            let mean = interior_mean_color(&img, &spec);
            let want = spec.fill.rgb();
            let dist = (0..3)
                .map(|c| (mean[c] - want[c]).powi(2) as f64)
                .sum::<f64>()
                .sqrt();
            assert!(
                dist < 0.1,
                "caption '{}' vs interior mean {mean:?} (dist {dist})",
                spec.caption
            );
        }
    }

    #[test]
    fn coverage_of_shapes_and_colors() {
        let mut p = Prng::seed_from(99);
        let mut shapes = std::collections::HashSet::new();
        let mut colors = std::collections::HashSet::new();
        for _ in 0..600 {
            let (_, spec) = gen_scene(&mut p, 16);
            shapes.insert(spec.kind.as_str());
            colors.insert(spec.fill.as_str());
        }
        assert_eq!(shapes.len(), 3);
        assert_eq!(colors.len(), 8);
    }

    #[test]
    fn object_fully_inside_frame() {
        let mut p = Prng::seed_from(3);
        for _ in 0..200 {
            let (_, spec) = gen_scene(&mut p, 64);
            assert!(spec.cx - spec.size > 0.0 && spec.cx + spec.size < 1.0);
            assert!(spec.cy - spec.size > 0.0 && spec.cy + spec.size < 1.0);
        }
    }
}
