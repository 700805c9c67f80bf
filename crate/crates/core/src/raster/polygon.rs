use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered vertex list in pixel-centre coordinates (integer = pixel centre).
///
/// Serialized as `{"closed": bool, "vertices": [[x, y], ...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPolygon")]
pub struct Polygon {
    closed: bool,
    vertices: Vec<[f64; 2]>,
}

#[derive(Deserialize)]
struct RawPolygon {
    closed: bool,
    vertices: Vec<[f64; 2]>,
}

impl TryFrom<RawPolygon> for Polygon {
    type Error = Error;

    fn try_from(raw: RawPolygon) -> Result<Self> {
        Polygon::new(raw.vertices, raw.closed)
    }
}

impl Polygon {
    /// Builds a polygon, dropping consecutive repeated vertices (including the
    /// wrap-around pair of a closed polygon).
    pub fn new(vertices: Vec<[f64; 2]>, closed: bool) -> Result<Self> {
        if vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::DegeneratePolygon("non-finite vertex".into()));
        }
        let mut v: Vec<[f64; 2]> = Vec::with_capacity(vertices.len());
        for p in vertices {
            if v.last() != Some(&p) {
                v.push(p);
            }
        }
        if closed {
            while v.len() > 1 && v.first() == v.last() {
                v.pop();
            }
            if v.len() < 3 {
                return Err(Error::DegeneratePolygon(format!(
                    "closed polygon needs at least 3 distinct vertices, got {}",
                    v.len()
                )));
            }
        } else if v.len() < 2 {
            return Err(Error::DegeneratePolygon(
                "open polyline needs at least 2 vertices".into(),
            ));
        }
        Ok(Self { closed, vertices: v })
    }

    pub fn closed(vertices: Vec<[f64; 2]>) -> Result<Self> {
        Self::new(vertices, true)
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Edges as vertex pairs; closed polygons include the closing edge.
    pub fn edges(&self) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
        let n = self.vertices.len();
        let count = if self.closed { n } else { n - 1 };
        (0..count).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Shoelace area. Positive for outer contours produced by
    /// [`crate::raster::mask_to_contours`], negative for holes.
    pub fn signed_area(&self) -> f64 {
        if !self.closed {
            return 0.0;
        }
        0.5 * self.edges().map(|(a, b)| a[0] * b[1] - b[0] * a[1]).sum::<f64>()
    }

    pub fn perimeter(&self) -> f64 {
        self.edges()
            .map(|(a, b)| ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt())
            .sum()
    }

    pub fn reversed(&self) -> Polygon {
        let mut vertices = self.vertices.clone();
        vertices.reverse();
        Polygon {
            closed: self.closed,
            vertices,
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Polygon {
        Polygon {
            closed: self.closed,
            vertices: self.vertices.iter().map(|p| [p[0] + dx, p[1] + dy]).collect(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("polygon serializes")
    }
}
