//! Polygon area, convex clipping and IoU.

use crate::model::Polygon;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("polygon needs at least 3 vertices (or a 2-point box)")]
    TooFewPoints,
    #[error("self-intersecting polygon")]
    SelfIntersecting,
    #[error("union of the two polygons has zero area")]
    DegenerateUnion,
    #[error("non-finite vertex")]
    NonFinite,
}

pub type Point = [f64; 2];

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Signed shoelace area; positive for counter-clockwise in a y-up frame.
pub fn signed_area(pts: &[Point]) -> f64 {
    let n = pts.len();
    if n < 3 {
        return 0.0;
    }
    (0..n)
        .map(|i| {
            let (p, q) = (pts[i], pts[(i + 1) % n]);
            p[0] * q[1] - q[0] * p[1]
        })
        .sum::<f64>()
        / 2.0
}

pub fn area(pts: &[Point]) -> f64 {
    signed_area(pts).abs()
}

fn segments_cross(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

/// True when two non-adjacent edges properly cross.
pub fn is_self_intersecting(pts: &[Point]) -> bool {
    let n = pts.len();
    if n < 4 {
        return false;
    }
    for i in 0..n {
        let (a1, a2) = (pts[i], pts[(i + 1) % n]);
        for j in (i + 2)..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if segments_cross(a1, a2, pts[j], pts[(j + 1) % n]) {
                return true;
            }
        }
    }
    false
}

pub fn is_convex(pts: &[Point]) -> bool {
    let n = pts.len();
    let mut sign = 0.0;
    for i in 0..n {
        let c = cross(pts[i], pts[(i + 1) % n], pts[(i + 2) % n]);
        if c != 0.0 {
            if sign != 0.0 && c.signum() != sign {
                return false;
            }
            sign = c.signum();
        }
    }
    true
}

/// Andrew's monotone chain; counter-clockwise, collinear points dropped.
pub fn convex_hull(pts: &[Point]) -> Vec<Point> {
    let mut p: Vec<Point> = pts.to_vec();
    p.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let mut lower: Vec<Point> = Vec::new();
    for &q in &p {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], q) <= 0.0 {
            lower.pop();
        }
        lower.push(q);
    }
    let mut upper: Vec<Point> = Vec::new();
    for &q in p.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], q) <= 0.0 {
            upper.pop();
        }
        upper.push(q);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Normalizes a polygon into a counter-clockwise convex vertex list.
/// Non-convex input is replaced by its hull with a warning.
pub fn convex_region(poly: &Polygon) -> Result<Vec<Point>, GeometryError> {
    let pts = poly.vertices();
    if pts.len() < 3 {
        return Err(GeometryError::TooFewPoints);
    }
    if pts.iter().flatten().any(|v| !v.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    if is_self_intersecting(&pts) {
        return Err(GeometryError::SelfIntersecting);
    }
    if !is_convex(&pts) {
        tracing::warn!(vertices = pts.len(), "non-convex polygon evaluated on its convex hull");
        return Ok(convex_hull(&pts));
    }
    let mut pts = pts;
    if signed_area(&pts) < 0.0 {
        pts.reverse();
    }
    Ok(pts)
}

/// Sutherland–Hodgman clip of `subject` by the convex CCW polygon `clip`.
pub fn clip_convex(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let mut output = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if output.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % n]);
        let input = std::mem::take(&mut output);
        let inside = |p: Point| cross(a, b, p) >= 0.0;
        for k in 0..input.len() {
            let cur = input[k];
            let prev = input[(k + input.len() - 1) % input.len()];
            match (inside(prev), inside(cur)) {
                (true, true) => output.push(cur),
                (true, false) => output.push(intersect(prev, cur, a, b)),
                (false, true) => {
                    output.push(intersect(prev, cur, a, b));
                    output.push(cur);
                }
                (false, false) => {}
            }
        }
    }
    output
}

fn intersect(p: Point, q: Point, a: Point, b: Point) -> Point {
    let d1 = cross(a, b, p);
    let d2 = cross(a, b, q);
    let t = d1 / (d1 - d2);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

pub fn polygon_iou(a: &Polygon, b: &Polygon) -> Result<f64, GeometryError> {
    let ra = convex_region(a)?;
    let rb = convex_region(b)?;
    let (aa, ab) = (area(&ra), area(&rb));
    let inter = if aa > 0.0 && ab > 0.0 {
        area(&clip_convex(&ra, &rb)).min(aa.min(ab))
    } else {
        0.0
    };
    let union = aa + ab - inter;
    if union <= 0.0 {
        return Err(GeometryError::DegenerateUnion);
    }
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Greedy one-to-one matching by descending IoU. Returns
/// `(pred index, gt index, iou)` triples; pairs below `threshold` never match.
/// Equal IoUs are taken in (pred, gt) index order.
pub fn greedy_match(pred: &[Polygon], gt: &[Polygon], threshold: f64) -> Vec<(usize, usize, f64)> {
    let mut candidates = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, g) in gt.iter().enumerate() {
            if let Ok(iou) = polygon_iou(p, g) {
                if iou >= threshold && iou > 0.0 {
                    candidates.push((i, j, iou));
                }
            }
        }
    }
    candidates.sort_by(|x, y| y.2.total_cmp(&x.2).then(x.0.cmp(&y.0)).then(x.1.cmp(&y.1)));
    let mut used_p = vec![false; pred.len()];
    let mut used_g = vec![false; gt.len()];
    let mut pairs = Vec::new();
    for (i, j, iou) in candidates {
        if !used_p[i] && !used_g[j] {
            used_p[i] = true;
            used_g[j] = true;
            pairs.push((i, j, iou));
        }
    }
    pairs
}
