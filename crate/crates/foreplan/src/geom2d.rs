//! Small 2-D geometry toolkit: polylines with arc-length parametrization
//! and oriented rectangles with a separating-axis overlap test.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vec2 {
    pub x: f32,
    pub y: f32,
}

impl Vec2 {
    pub fn new(x: f32, y: f32) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Vec2) -> f32 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f32 {
        self.x * o.y - self.y * o.x
    }

    pub fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }

    pub fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }

    pub fn scale(self, c: f32) -> Vec2 {
        Vec2::new(c * self.x, c * self.y)
    }

    pub fn norm(self) -> f32 {
        self.dot(self).sqrt()
    }
}

/// Piecewise-linear curve with cumulative arc length.
#[derive(Debug, Clone)]
pub struct Polyline {
    pub pts: Vec<Vec2>,
    cum: Vec<f32>,
}

impl Polyline {
    pub fn new(pts: Vec<Vec2>) -> Self {
        assert!(pts.len() >= 2, "polyline needs at least two points");
        let mut cum = Vec::with_capacity(pts.len());
        let mut s = 0.0f32;
        cum.push(0.0);
        for w in pts.windows(2) {
            s += w[1].sub(w[0]).norm();
            cum.push(s);
        }
        Self { pts, cum }
    }

    pub fn length(&self) -> f32 {
        *self.cum.last().unwrap()
    }

    /// Closest point: returns `(arc length, distance, unit tangent)`.
    pub fn project(&self, p: Vec2) -> (f32, f32, Vec2) {
        let mut best = (0.0f32, f32::INFINITY, Vec2::new(1.0, 0.0));
        for i in 0..self.pts.len() - 1 {
            let a = self.pts[i];
            let b = self.pts[i + 1];
            let ab = b.sub(a);
            let len2 = ab.dot(ab);
            let t = if len2 > 0.0 {
                (p.sub(a).dot(ab) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let q = a.add(ab.scale(t));
            let d = p.sub(q).norm();
            if d < best.1 {
                let seg_len = len2.sqrt();
                let tangent = if seg_len > 0.0 {
                    ab.scale(1.0 / seg_len)
                } else {
                    best.2
                };
                best = (self.cum[i] + t * seg_len, d, tangent);
            }
        }
        best
    }

    pub fn distance_to(&self, p: Vec2) -> f32 {
        self.project(p).1
    }

    /// Point at clamped arc length.
    pub fn point_at(&self, s: f32) -> Vec2 {
        let s = s.clamp(0.0, self.length());
        let i = match self.cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(self.pts.len() - 2),
            Err(i) => (i - 1).min(self.pts.len() - 2),
        };
        let seg = self.cum[i + 1] - self.cum[i];
        let t = if seg > 0.0 { (s - self.cum[i]) / seg } else { 0.0 };
        self.pts[i].add(self.pts[i + 1].sub(self.pts[i]).scale(t))
    }
}

/// Oriented rectangle (center, heading, half extents).
#[derive(Debug, Clone, Copy)]
pub struct Obb {
    pub center: Vec2,
    pub cos_t: f32,
    pub sin_t: f32,
    pub half_l: f32,
    pub half_w: f32,
}

impl Obb {
    pub fn new(center: Vec2, theta: f32, half_l: f32, half_w: f32) -> Self {
        Self { center, cos_t: theta.cos(), sin_t: theta.sin(), half_l, half_w }
    }

    pub fn axis_long(&self) -> Vec2 {
        Vec2::new(self.cos_t, self.sin_t)
    }

    pub fn axis_lat(&self) -> Vec2 {
        Vec2::new(-self.sin_t, self.cos_t)
    }

    pub fn corners(&self) -> [Vec2; 4] {
        let u = self.axis_long().scale(self.half_l);
        let v = self.axis_lat().scale(self.half_w);
        [
            self.center.add(u).add(v),
            self.center.add(u).sub(v),
            self.center.sub(u).sub(v),
            self.center.sub(u).add(v),
        ]
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let rel = p.sub(self.center);
        rel.dot(self.axis_long()).abs() <= self.half_l && rel.dot(self.axis_lat()).abs() <= self.half_w
    }

    /// Separating-axis overlap test over the four face normals; exact for
    /// rectangle pairs. Touching counts as intersecting.
    pub fn intersects(&self, other: &Obb) -> bool {
        let axes = [
            self.axis_long(),
            self.axis_lat(),
            other.axis_long(),
            other.axis_lat(),
        ];
        let delta = other.center.sub(self.center);
        for u in axes {
            let dist = delta.dot(u).abs();
            let ra = self.half_l * self.axis_long().dot(u).abs()
                + self.half_w * self.axis_lat().dot(u).abs();
            let rb = other.half_l * other.axis_long().dot(u).abs()
                + other.half_w * other.axis_lat().dot(u).abs();
            if dist > ra + rb {
                return false;
            }
        }
        true
    }
}

fn segments_cross(a1: Vec2, a2: Vec2, b1: Vec2, b2: Vec2) -> bool {
    let d1 = a2.sub(a1);
    let d2 = b2.sub(b1);
    let denom = d1.cross(d2);
    if denom.abs() < 1e-12 {
        return false;
    }
    let t = b1.sub(a1).cross(d2) / denom;
    let u = b1.sub(a1).cross(d1) / denom;
    (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u)
}

/// Brute-force rectangle overlap oracle: vertex containment either way or
/// any pair of crossing edges. Independent of the separating-axis route.
pub fn obb_intersect_oracle(a: &Obb, b: &Obb) -> bool {
    let ca = a.corners();
    let cb = b.corners();
    if cb.iter().any(|&p| a.contains(p)) || ca.iter().any(|&p| b.contains(p)) {
        return true;
    }
    for i in 0..4 {
        for j in 0..4 {
            if segments_cross(ca[i], ca[(i + 1) % 4], cb[j], cb[(j + 1) % 4]) {
                return true;
            }
        }
    }
    false
}
