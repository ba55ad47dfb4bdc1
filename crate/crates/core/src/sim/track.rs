//! Track centerlines built from straight and circular pieces.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// One piece of centerline. Arcs turn left for positive `angle`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Segment {
    Straight { length: f64 },
    Arc { radius: f64, angle: f64 },
}

impl Segment {
    pub fn length(&self) -> f64 {
        match *self {
            Segment::Straight { length } => length,
            Segment::Arc { radius, angle } => radius * angle.abs(),
        }
    }
}

/// Wraps an angle to `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

/// Closest centerline point to a query position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    /// Arc length along the centerline.
    pub s: f64,
    /// Signed distance, positive to the left of travel.
    pub lateral: f64,
    /// Centerline heading at `s`.
    pub heading: f64,
}

#[derive(Clone, Debug)]
struct Piece {
    segment: Segment,
    start: Pose,
    s0: f64,
}

impl Piece {
    fn length(&self) -> f64 {
        self.segment.length()
    }

    fn pose_at(&self, ds: f64) -> Pose {
        let Pose { x, y, heading } = self.start;
        match self.segment {
            Segment::Straight { .. } => Pose {
                x: x + ds * heading.cos(),
                y: y + ds * heading.sin(),
                heading,
            },
            Segment::Arc { radius, angle } => {
                let sign = angle.signum();
                let (cx, cy) = self.center(radius, sign);
                let turned = sign * ds / radius;
                let phi = heading - sign * PI / 2.0 + turned;
                Pose {
                    x: cx + radius * phi.cos(),
                    y: cy + radius * phi.sin(),
                    heading: wrap_angle(heading + turned),
                }
            }
        }
    }

    fn center(&self, radius: f64, sign: f64) -> (f64, f64) {
        let Pose { x, y, heading } = self.start;
        (x - sign * radius * heading.sin(), y + sign * radius * heading.cos())
    }

    /// Closest point on this piece, with the squared distance to it.
    fn project(&self, px: f64, py: f64) -> (Projection, f64) {
        let len = self.length();
        let ds = match self.segment {
            Segment::Straight { .. } => {
                let (c, s) = (self.start.heading.cos(), self.start.heading.sin());
                ((px - self.start.x) * c + (py - self.start.y) * s).clamp(0.0, len)
            }
            Segment::Arc { radius, angle } => {
                let sign = angle.signum();
                let (cx, cy) = self.center(radius, sign);
                let phi0 = self.start.heading - sign * PI / 2.0;
                let phi = (py - cy).atan2(px - cx);
                let swept = wrap_angle(sign * (phi - phi0));
                // Points behind the start wrap to a negative sweep; beyond
                // the end they exceed |angle|. Clamp to whichever end is
                // angularly closer.
                let max = angle.abs();
                let swept = if swept < 0.0 || swept > max {
                    let to_start = wrap_angle(swept).abs();
                    let to_end = wrap_angle(swept - max).abs();
                    if to_start <= to_end {
                        0.0
                    } else {
                        max
                    }
                } else {
                    swept
                };
                swept * radius
            }
        };
        let p = self.pose_at(ds);
        let (dx, dy) = (px - p.x, py - p.y);
        let lateral = p.heading.cos() * dy - p.heading.sin() * dx;
        let along = p.heading.cos() * dx + p.heading.sin() * dy;
        (
            Projection {
                s: self.s0 + ds + if ds == 0.0 || ds == len { along } else { 0.0 },
                lateral,
                heading: p.heading,
            },
            dx * dx + dy * dy,
        )
    }
}

#[derive(Clone, Debug)]
pub struct Track {
    pieces: Vec<Piece>,
    length: f64,
}

impl Track {
    /// Lays `segments` end to end from the origin, heading along +x.
    pub fn new(segments: &[Segment]) -> Self {
        let mut pieces = Vec::with_capacity(segments.len());
        let mut start = Pose {
            x: 0.0,
            y: 0.0,
            heading: 0.0,
        };
        let mut s0 = 0.0;
        for seg in segments {
            let piece = Piece {
                segment: seg.clone(),
                start,
                s0,
            };
            start = piece.pose_at(piece.length());
            s0 += piece.length();
            pieces.push(piece);
        }
        Self { pieces, length: s0 }
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn has_curves(&self) -> bool {
        self.pieces.iter().any(|p| matches!(p.segment, Segment::Arc { .. }))
    }

    /// Centerline pose at arc length `s`, clamped to the track.
    pub fn pose_at(&self, s: f64) -> Pose {
        let s = s.clamp(0.0, self.length);
        let piece = self
            .pieces
            .iter()
            .find(|p| s <= p.s0 + p.length())
            .unwrap_or_else(|| self.pieces.last().expect("non-empty track"));
        piece.pose_at(s - piece.s0)
    }

    /// World position of the point `lateral` metres left of the centerline
    /// at arc length `s`.
    pub fn point_at(&self, s: f64, lateral: f64) -> (f64, f64) {
        let p = self.pose_at(s);
        (p.x - lateral * p.heading.sin(), p.y + lateral * p.heading.cos())
    }

    pub fn project(&self, x: f64, y: f64) -> Projection {
        let mut best = None::<(Projection, f64)>;
        for piece in &self.pieces {
            let cand = piece.project(x, y);
            if best.is_none_or(|b| cand.1 < b.1) {
                best = Some(cand);
            }
        }
        best.expect("non-empty track").0
    }

    /// Distance along a ray to the nearest lane boundary at `half_width`.
    pub fn ray_to_boundary(&self, ox: f64, oy: f64, angle: f64, half_width: f64, max: f64) -> f64 {
        let (dx, dy) = (angle.cos(), angle.sin());
        let mut best = max;
        for piece in &self.pieces {
            for side in [-1.0, 1.0] {
                let off = side * half_width;
                let t = match piece.segment {
                    Segment::Straight { length } => {
                        let h = piece.start.heading;
                        let (ax, ay) = (piece.start.x - off * h.sin(), piece.start.y + off * h.cos());
                        ray_segment(ox, oy, dx, dy, ax, ay, length * h.cos(), length * h.sin())
                    }
                    Segment::Arc { radius, angle: sweep } => {
                        let sign = sweep.signum();
                        let (cx, cy) = piece.center(radius, sign);
                        let r = radius - sign * off;
                        if r <= 0.0 {
                            None
                        } else {
                            let phi0 = piece.start.heading - sign * PI / 2.0;
                            ray_arc(ox, oy, dx, dy, cx, cy, r, phi0, sign, sweep.abs())
                        }
                    }
                };
                if let Some(t) = t {
                    best = best.min(t);
                }
            }
        }
        best
    }
}

/// Ray parameter where `o + t·d` meets the segment `a + u·e`, `u ∈ [0, 1]`.
#[allow(clippy::too_many_arguments)]
fn ray_segment(ox: f64, oy: f64, dx: f64, dy: f64, ax: f64, ay: f64, ex: f64, ey: f64) -> Option<f64> {
    let den = dx * ey - dy * ex;
    if den.abs() < 1e-12 {
        return None;
    }
    let (wx, wy) = (ax - ox, ay - oy);
    let t = (wx * ey - wy * ex) / den;
    let u = (wx * dy - wy * dx) / den;
    (t >= 0.0 && (0.0..=1.0).contains(&u)).then_some(t)
}

/// Non-negative ray parameters where `o + t·d` meets a circle.
pub fn ray_circle(ox: f64, oy: f64, dx: f64, dy: f64, cx: f64, cy: f64, r: f64) -> [Option<f64>; 2] {
    let (fx, fy) = (ox - cx, oy - cy);
    let b = fx * dx + fy * dy;
    let c = fx * fx + fy * fy - r * r;
    let disc = b * b - c;
    if disc < 0.0 {
        return [None, None];
    }
    let sq = disc.sqrt();
    let keep = |t: f64| (t >= 0.0).then_some(t);
    [keep(-b - sq), keep(-b + sq)]
}

#[allow(clippy::too_many_arguments)]
fn ray_arc(
    ox: f64,
    oy: f64,
    dx: f64,
    dy: f64,
    cx: f64,
    cy: f64,
    r: f64,
    phi0: f64,
    sign: f64,
    sweep: f64,
) -> Option<f64> {
    ray_circle(ox, oy, dx, dy, cx, cy, r)
        .into_iter()
        .flatten()
        .filter(|&t| {
            let phi = (oy + t * dy - cy).atan2(ox + t * dx - cx);
            let swept = wrap_angle(sign * (phi - phi0));
            (-1e-12..=sweep + 1e-12).contains(&swept)
        })
        .reduce(f64::min)
}
