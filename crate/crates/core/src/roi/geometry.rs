//! Polygon predicates and rasterization.
//!
//! Vertices are continuous image coordinates with the origin at the top-left
//! corner of the top-left pixel, so pixel `(i, j)` is sampled at
//! `(i + 0.5, j + 0.5)`.

pub type Point = [f64; 2];

/// Twice the signed area (positive when counter-clockwise in y-up terms).
fn signed_area2(vertices: &[Point]) -> f64 {
    let n = vertices.len();
    (0..n)
        .map(|i| {
            let [x0, y0] = vertices[i];
            let [x1, y1] = vertices[(i + 1) % n];
            x0 * y1 - x1 * y0
        })
        .sum()
}

pub fn area(vertices: &[Point]) -> f64 {
    signed_area2(vertices).abs() / 2.0
}

/// Even-odd rule.
pub fn contains(vertices: &[Point], x: f64, y: f64) -> bool {
    let n = vertices.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let [xi, yi] = vertices[i];
        let [xj, yj] = vertices[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let (d1, d2) = (orient(c, d, a), orient(c, d, b));
    let (d3, d4) = (orient(a, b, c), orient(a, b, d));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

/// True when two non-adjacent edges touch or cross.
pub fn is_self_intersecting(vertices: &[Point]) -> bool {
    let n = vertices.len();
    for i in 0..n {
        let (a, b) = (vertices[i], vertices[(i + 1) % n]);
        for j in (i + 1)..n {
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (c, d) = (vertices[j], vertices[(j + 1) % n]);
            if segments_intersect(a, b, c, d) {
                return true;
            }
        }
    }
    false
}

/// Validation against an image of the given size; `Err` carries the reason.
pub fn validate(vertices: &[Point], width: u32, height: u32) -> Result<(), String> {
    if vertices.len() < 3 {
        return Err(format!("polygon has {} vertices, needs at least 3", vertices.len()));
    }
    if let Some(p) = vertices
        .iter()
        .find(|[x, y]| !(x.is_finite() && y.is_finite() && *x >= 0.0 && *y >= 0.0 && *x <= f64::from(width) && *y <= f64::from(height)))
    {
        return Err(format!("vertex ({}, {}) outside the {width}x{height} image", p[0], p[1]));
    }
    if is_self_intersecting(vertices) {
        return Err("polygon is self-intersecting".into());
    }
    if area(vertices) <= 0.0 {
        return Err("polygon has zero area".into());
    }
    Ok(())
}

/// Row-major inside/outside mask at pixel centers.
pub fn rasterize(vertices: &[Point], width: u32, height: u32) -> Vec<bool> {
    let mut mask = vec![false; (width * height) as usize];
    if vertices.len() < 3 {
        return mask;
    }
    let (min_y, max_y) = vertices
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[1]), hi.max(p[1])));
    let y_start = (min_y - 0.5).ceil().max(0.0) as u32;
    let y_end = ((max_y - 0.5).floor() + 1.0).clamp(0.0, f64::from(height)) as u32;
    for y in y_start..y_end {
        let cy = f64::from(y) + 0.5;
        for x in 0..width {
            if contains(vertices, f64::from(x) + 0.5, cy) {
                mask[(y * width + x) as usize] = true;
            }
        }
    }
    mask
}

/// Intersection-over-union of two polygons rasterized on the same grid.
pub fn mask_iou(a: &[Point], b: &[Point], width: u32, height: u32) -> f64 {
    let (ma, mb) = (rasterize(a, width, height), rasterize(b, width, height));
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in ma.iter().zip(&mb) {
        inter += usize::from(*x && *y);
        union += usize::from(*x || *y);
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Andrew's monotone chain; counter-clockwise in y-up terms, no repeated
/// or collinear vertices.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Point> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && orient(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && orient(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}
