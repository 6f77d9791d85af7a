use image::{Rgb, RgbImage};
use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::geometry::{self, Point};
use super::PolygonAnnotation;
use crate::imaging::resize_bilinear;

/// Geometry of one extracted crop, enough to map crop pixels back to the
/// source image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiCrop {
    /// `{record_id}__{annotation_id}`; the crop file adds `.png`.
    pub crop_id: String,
    pub record_id: String,
    pub annotation_id: String,
    /// Tight pixel bounds of the mask, `x1`/`y1` exclusive.
    pub bbox: (u32, u32, u32, u32),
    /// Black padding `(left, top, right, bottom)` that squares the bbox.
    pub pad: (u32, u32, u32, u32),
    pub output_side: u32,
    /// `output_side / padded_side`.
    pub scale: f64,
}

impl RoiCrop {
    pub fn file_name(&self) -> String {
        format!("{}.png", self.crop_id)
    }

    pub fn padded_side(&self) -> u32 {
        self.bbox.2 - self.bbox.0 + self.pad.0 + self.pad.2
    }

    /// Continuous crop coordinates to continuous source coordinates.
    pub fn to_source(&self, u: f64, v: f64) -> Point {
        [
            u / self.scale - f64::from(self.pad.0) + f64::from(self.bbox.0),
            v / self.scale - f64::from(self.pad.1) + f64::from(self.bbox.1),
        ]
    }

    pub fn from_source(&self, x: f64, y: f64) -> Point {
        [
            (x - f64::from(self.bbox.0) + f64::from(self.pad.0)) * self.scale,
            (y - f64::from(self.bbox.1) + f64::from(self.pad.1)) * self.scale,
        ]
    }
}

fn crop_one(image: &RgbImage, polygon: &PolygonAnnotation, output_side: u32) -> Result<(RoiCrop, RgbImage), String> {
    let (w, h) = image.dimensions();
    polygon.validate(w, h)?;
    let mask = geometry::rasterize(&polygon.vertices, w, h);

    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
    for y in 0..h {
        for x in 0..w {
            if mask[(y * w + x) as usize] {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
    }
    if x1 == 0 {
        return Err("polygon covers no pixel center".into());
    }

    let (bw, bh) = (x1 - x0, y1 - y0);
    let side = bw.max(bh);
    let (pad_x, pad_y) = (side - bw, side - bh);
    let pad = (pad_x / 2, pad_y / 2, pad_x - pad_x / 2, pad_y - pad_y / 2);

    let mut square = RgbImage::new(side, side);
    for y in y0..y1 {
        for x in x0..x1 {
            if mask[(y * w + x) as usize] {
                square.put_pixel(x - x0 + pad.0, y - y0 + pad.1, *image.get_pixel(x, y));
            }
        }
    }

    let info = RoiCrop {
        crop_id: format!("{}__{}", polygon.record_id, polygon.annotation_id),
        record_id: polygon.record_id.clone(),
        annotation_id: polygon.annotation_id.clone(),
        bbox: (x0, y0, x1, y1),
        pad,
        output_side,
        scale: f64::from(output_side) / f64::from(side),
    };

    let mut out = if side == output_side { square } else { resize_bilinear(&square, output_side, output_side) };
    // Interpolation bleeds colour across the mask edge; re-mask in crop space
    // so every pixel whose center maps outside the polygon is exactly black.
    for v in 0..output_side {
        for u in 0..output_side {
            let [sx, sy] = info.to_source(f64::from(u) + 0.5, f64::from(v) + 0.5);
            if !geometry::contains(&polygon.vertices, sx, sy) {
                out.put_pixel(u, v, Rgb([0, 0, 0]));
            }
        }
    }
    Ok((info, out))
}

/// One square, black-background crop per valid polygon. Invalid or
/// degenerate polygons are skipped with a warning.
pub fn extract_roi_crops(image: &RgbImage, polygons: &[PolygonAnnotation], output_side: u32) -> Vec<(RoiCrop, RgbImage)> {
    extract_roi_crops_with_warnings(image, polygons, output_side).0
}

pub fn extract_roi_crops_with_warnings(
    image: &RgbImage,
    polygons: &[PolygonAnnotation],
    output_side: u32,
) -> (Vec<(RoiCrop, RgbImage)>, Vec<String>) {
    assert!(output_side > 0, "output_side must be positive");
    let results: Vec<_> = polygons.par_iter().map(|p| (p, crop_one(image, p, output_side))).collect();
    let mut crops = Vec::new();
    let mut warnings = Vec::new();
    for (p, r) in results {
        match r {
            Ok(c) => crops.push(c),
            Err(reason) => {
                let msg = format!("skipped polygon {} on {}: {reason}", p.annotation_id, p.record_id);
                warn!("{msg}");
                warnings.push(msg);
            }
        }
    }
    (crops, warnings)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn poly(vertices: Vec<Point>) -> PolygonAnnotation {
        PolygonAnnotation::human("a1", "r1", vertices)
    }

    fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<Point> {
        vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
    }

    fn gradient(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([(x % 256) as u8, (y % 256) as u8, 200]))
    }

    #[test]
    fn tall_box_is_padded_left_and_right() {
        let img = gradient(200, 200);
        let crops = extract_roi_crops(&img, &[poly(rect(50.0, 60.0, 90.0, 140.0))], 80);
        let (info, out) = &crops[0];
        assert_eq!(info.bbox, (50, 60, 90, 140));
        assert_eq!(info.pad, (20, 0, 20, 0));
        assert_eq!(info.scale, 1.0);
        assert_eq!(info.crop_id, "r1__a1");
        assert_eq!(out.get_pixel(19, 40).0, [0, 0, 0]);
        assert_eq!(out.get_pixel(20, 0).0, [50, 60, 200]);
        assert_eq!(out.get_pixel(60, 40).0, [0, 0, 0]);
    }

    #[test]
    fn odd_padding_goes_right() {
        let img = gradient(50, 50);
        let crops = extract_roi_crops(&img, &[poly(rect(0.0, 0.0, 4.0, 7.0))], 7);
        assert_eq!(crops[0].0.pad, (1, 0, 2, 0));
    }

    #[test]
    fn full_image_polygon_is_a_pure_resize() {
        let img = gradient(64, 64);
        let crops = extract_roi_crops(&img, &[poly(rect(0.0, 0.0, 64.0, 64.0))], 32);
        let (info, out) = &crops[0];
        assert_eq!(info.pad, (0, 0, 0, 0));
        assert_eq!(*out, resize_bilinear(&img, 32, 32));
    }

    #[test]
    fn two_polygons_give_two_crops_and_degenerate_ones_are_skipped() {
        let img = gradient(100, 100);
        let mut second = poly(rect(60.0, 60.0, 90.0, 80.0));
        second.annotation_id = "a2".into();
        let mut flat = poly(vec![[1.0, 1.0], [5.0, 5.0], [9.0, 9.0]]);
        flat.annotation_id = "a3".into();
        let (crops, warnings) = extract_roi_crops_with_warnings(&img, &[poly(rect(0.0, 0.0, 30.0, 30.0)), second, flat], 16);
        assert_eq!(crops.len(), 2);
        assert_eq!(warnings.len(), 1);
        assert!(crops.iter().all(|(_, c)| c.dimensions() == (16, 16)));
    }

    fn arb_polygon() -> impl Strategy<Value = (u32, u32, Vec<Point>)> {
        (16u32..120, 16u32..120, 3usize..9).prop_flat_map(|(w, h, n)| {
            let center = (f64::from(w) / 2.0, f64::from(h) / 2.0);
            let rmax = f64::from(w.min(h)) / 2.0;
            prop::collection::vec((0.2f64..1.0, 0.0f64..1.0), n).prop_map(move |radii| {
                // Star-shaped around the center with sorted angles: never self-intersecting.
                let step = std::f64::consts::TAU / radii.len() as f64;
                let vertices = radii
                    .iter()
                    .enumerate()
                    .map(|(i, (r, jitter))| {
                        let a = step * (i as f64 + 0.8 * jitter);
                        [center.0 + r * rmax * a.cos(), center.1 + r * rmax * a.sin()]
                    })
                    .collect();
                (w, h, vertices)
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn crop_invariants_hold((w, h, vertices) in arb_polygon(), side in 8u32..64) {
            let img = RgbImage::from_fn(w, h, |x, y| Rgb([(x * 7 % 250 + 5) as u8, (y * 3 % 250 + 5) as u8, 255]));
            let crops = extract_roi_crops(&img, &[poly(vertices.clone())], side);
            prop_assume!(!crops.is_empty());
            let (info, out) = &crops[0];
            prop_assert_eq!(out.dimensions(), (side, side));
            let (l, t, r, b) = info.pad;
            prop_assert!(l.abs_diff(r) <= 1 && t.abs_diff(b) <= 1);
            prop_assert_eq!(info.bbox.2 - info.bbox.0 + l + r, info.bbox.3 - info.bbox.1 + t + b);
            for v in 0..side {
                for u in 0..side {
                    let [sx, sy] = info.to_source(f64::from(u) + 0.5, f64::from(v) + 0.5);
                    if !geometry::contains(&vertices, sx, sy) {
                        prop_assert_eq!(out.get_pixel(u, v).0, [0, 0, 0]);
                    }
                }
            }
            for p in &vertices {
                let [u, v] = info.from_source(p[0], p[1]);
                let [x, y] = info.to_source(u, v);
                prop_assert!((x - p[0]).abs() < 1.0 && (y - p[1]).abs() < 1.0);
            }
        }
    }
}
