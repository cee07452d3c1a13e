//! Rectangles with circular holes: membership and random sampling.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mlp::Point;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid domain: {0}")]
    Invalid(String),
    #[error("rejection sampling accepted {accepted} of {attempts} candidates (below 1%); domain is malformed")]
    LowAcceptance { accepted: usize, attempts: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl Rect {
    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hole {
    pub center: Point,
    pub radius: f64,
}

impl Hole {
    pub fn distance(&self, p: Point) -> f64 {
        (p[0] - self.center[0]).hypot(p[1] - self.center[1])
    }
}

/// An axis-aligned rectangle with disjoint circular holes strictly inside it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDomain")]
pub struct Domain {
    rect: Rect,
    holes: Vec<Hole>,
}

#[derive(Deserialize)]
struct RawDomain {
    rect: Rect,
    holes: Vec<Hole>,
}

impl TryFrom<RawDomain> for Domain {
    type Error = GeometryError;

    fn try_from(raw: RawDomain) -> Result<Self, Self::Error> {
        Domain::new(raw.rect, raw.holes)
    }
}

/// Which piece of the boundary a sample lies on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryComponent {
    /// `y = ymin`
    Bottom,
    /// `x = xmax`
    Right,
    /// `y = ymax`
    Top,
    /// `x = xmin`
    Left,
    Hole(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundarySample {
    pub point: Point,
    pub component: BoundaryComponent,
}

impl Domain {
    pub fn new(rect: Rect, holes: Vec<Hole>) -> Result<Self, GeometryError> {
        let finite = [rect.xmin, rect.xmax, rect.ymin, rect.ymax].iter().all(|v| v.is_finite());
        if !finite || rect.xmin >= rect.xmax || rect.ymin >= rect.ymax {
            return Err(GeometryError::Invalid(format!("degenerate rectangle {rect:?}")));
        }
        for (i, h) in holes.iter().enumerate() {
            if !(h.radius.is_finite() && h.radius > 0.0) {
                return Err(GeometryError::Invalid(format!("hole {i} has radius {}", h.radius)));
            }
            let [cx, cy] = h.center;
            if !(cx - h.radius > rect.xmin
                && cx + h.radius < rect.xmax
                && cy - h.radius > rect.ymin
                && cy + h.radius < rect.ymax)
            {
                return Err(GeometryError::Invalid(format!(
                    "hole {i} at ({cx}, {cy}) radius {} is not strictly inside the rectangle",
                    h.radius
                )));
            }
            for (j, o) in holes[..i].iter().enumerate() {
                if o.distance(h.center) <= o.radius + h.radius {
                    return Err(GeometryError::Invalid(format!("holes {j} and {i} overlap")));
                }
            }
        }
        Ok(Self { rect, holes })
    }

    /// `[0, 2] x [0, 1]` with one hole of radius 0.2 at `(0.7, 0.5)`.
    pub fn benchmark() -> Self {
        Self::new(
            Rect {
                xmin: 0.0,
                xmax: 2.0,
                ymin: 0.0,
                ymax: 1.0,
            },
            vec![Hole {
                center: [0.7, 0.5],
                radius: 0.2,
            }],
        )
        .expect("benchmark domain is valid")
    }

    /// Three holes of radius 0.15 in the benchmark rectangle.
    pub fn multi_hole() -> Self {
        let holes = [[0.5, 0.3], [1.0, 0.7], [1.5, 0.35]]
            .into_iter()
            .map(|center| Hole { center, radius: 0.15 })
            .collect();
        Self::new(Self::benchmark().rect, holes).expect("multi-hole domain is valid")
    }

    pub fn rect(&self) -> &Rect {
        &self.rect
    }

    pub fn holes(&self) -> &[Hole] {
        &self.holes
    }

    pub fn area(&self) -> f64 {
        self.rect.area() - self.holes.iter().map(|h| PI * h.radius * h.radius).sum::<f64>()
    }

    /// Strictly inside the rectangle and strictly outside every hole.
    pub fn contains(&self, p: Point) -> bool {
        let r = &self.rect;
        p[0] > r.xmin
            && p[0] < r.xmax
            && p[1] > r.ymin
            && p[1] < r.ymax
            && self.holes.iter().all(|h| h.distance(p) > h.radius)
    }

    /// Distance from `p` to the nearest hole circle, if there are holes.
    pub fn hole_clearance(&self, p: Point) -> Option<f64> {
        self.holes
            .iter()
            .map(|h| h.distance(p) - h.radius)
            .min_by(f64::total_cmp)
    }

    /// Uniform samples on the punctured rectangle by rejection.
    pub fn sample_interior<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Point>, GeometryError> {
        let r = self.rect;
        let mut out = Vec::with_capacity(n);
        let mut attempts = 0usize;
        while out.len() < n {
            let p = [
                r.xmin + r.width() * rng.random::<f64>(),
                r.ymin + r.height() * rng.random::<f64>(),
            ];
            attempts += 1;
            if self.contains(p) {
                out.push(p);
            }
            if attempts >= 10_000 && out.len() * 100 < attempts {
                return Err(GeometryError::LowAcceptance {
                    accepted: out.len(),
                    attempts,
                });
            }
        }
        Ok(out)
    }

    /// Boundary components with their arc lengths, in a fixed order.
    pub fn boundary_components(&self) -> Vec<(BoundaryComponent, f64)> {
        let r = &self.rect;
        let mut c = vec![
            (BoundaryComponent::Bottom, r.width()),
            (BoundaryComponent::Right, r.height()),
            (BoundaryComponent::Top, r.width()),
            (BoundaryComponent::Left, r.height()),
        ];
        c.extend(
            self.holes
                .iter()
                .enumerate()
                .map(|(i, h)| (BoundaryComponent::Hole(i), 2.0 * PI * h.radius)),
        );
        c
    }

    pub fn perimeter(&self) -> f64 {
        self.boundary_components().iter().map(|c| c.1).sum()
    }

    /// Samples uniform in arc length over the whole boundary: a component is
    /// picked with probability proportional to its length, then a point
    /// uniformly on it.
    pub fn sample_boundary<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<BoundarySample> {
        let comps = self.boundary_components();
        let total: f64 = comps.iter().map(|c| c.1).sum();
        let r = self.rect;
        (0..n)
            .map(|_| {
                let mut pick = rng.random::<f64>() * total;
                let mut component = comps.last().unwrap().0;
                for &(c, len) in &comps {
                    if pick < len {
                        component = c;
                        break;
                    }
                    pick -= len;
                }
                let t = rng.random::<f64>();
                let point = match component {
                    BoundaryComponent::Bottom => [r.xmin + t * r.width(), r.ymin],
                    BoundaryComponent::Right => [r.xmax, r.ymin + t * r.height()],
                    BoundaryComponent::Top => [r.xmin + t * r.width(), r.ymax],
                    BoundaryComponent::Left => [r.xmin, r.ymin + t * r.height()],
                    BoundaryComponent::Hole(i) => {
                        let h = self.holes[i];
                        let (s, c) = (2.0 * PI * t).sin_cos();
                        [h.center[0] + h.radius * c, h.center[1] + h.radius * s]
                    }
                };
                BoundarySample { point, component }
            })
            .collect()
    }

    /// Distance from `s.point` to its tagged component.
    pub fn boundary_offset(&self, s: &BoundarySample) -> f64 {
        let r = &self.rect;
        let [x, y] = s.point;
        match s.component {
            BoundaryComponent::Bottom => (y - r.ymin).abs(),
            BoundaryComponent::Right => (x - r.xmax).abs(),
            BoundaryComponent::Top => (y - r.ymax).abs(),
            BoundaryComponent::Left => (x - r.xmin).abs(),
            BoundaryComponent::Hole(i) => (self.holes[i].distance(s.point) - self.holes[i].radius).abs(),
        }
    }
}
