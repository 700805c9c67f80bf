use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::BinaryMask;

/// Slack allowed on sampling coordinates before they count as outside the
/// grid. Sample lines built from `cos`/`sin` land a few ulps off integer
/// positions.
const DOMAIN_SLACK: f64 = 1e-9;

/// Multi-channel real raster, channel-major then row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    width: usize,
    height: usize,
    channels: usize,
    values: Vec<f64>,
}

/// One grid neighbour of a bilinear sample and its interpolation weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tap {
    pub x: usize,
    pub y: usize,
    pub weight: f64,
}

impl ScalarField {
    pub fn new(width: usize, height: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::param("scalar field needs at least one channel"));
        }
        let expected = width * height * channels;
        if values.len() != expected {
            return Err(Error::shape(
                format!("{expected} values ({width}x{height}x{channels})"),
                values.len(),
            ));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::param(format!("non-finite value at index {pos}")));
        }
        Ok(Self {
            width,
            height,
            channels,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        assert!(channels >= 1 && value.is_finite());
        Self {
            width,
            height,
            channels,
            values: vec![value; width * height * channels],
        }
    }

    /// Single-channel field built from `f(x, y)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let v = f(x, y);
                assert!(v.is_finite(), "from_fn produced non-finite value at ({x}, {y})");
                values.push(v);
            }
        }
        Self {
            width,
            height,
            channels: 1,
            values,
        }
    }

    /// Stacks single-channel fields of equal size into one multi-channel field.
    pub fn stack(layers: &[ScalarField]) -> Result<Self> {
        let first = layers.first().ok_or_else(|| Error::param("cannot stack zero layers"))?;
        let mut values = Vec::with_capacity(first.len() * layers.len());
        let mut channels = 0;
        for layer in layers {
            if layer.width != first.width || layer.height != first.height {
                return Err(Error::shape(first.dims_str(), layer.dims_str()));
            }
            values.extend_from_slice(&layer.values);
            channels += layer.channels;
        }
        Ok(Self {
            width: first.width,
            height: first.height,
            channels,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn plane_len(&self) -> usize {
        self.width * self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access to the raw values. Callers must keep them finite.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn plane(&self, channel: usize) -> &[f64] {
        let n = self.plane_len();
        &self.values[channel * n..(channel + 1) * n]
    }

    pub fn plane_mut(&mut self, channel: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.values[channel * n..(channel + 1) * n]
    }

    /// Copies one channel out as a single-channel field.
    pub fn channel(&self, channel: usize) -> ScalarField {
        ScalarField {
            width: self.width,
            height: self.height,
            channels: 1,
            values: self.plane(channel).to_vec(),
        }
    }

    #[inline]
    pub fn index(&self, channel: usize, x: usize, y: usize) -> usize {
        (channel * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, channel: usize, x: usize, y: usize) -> f64 {
        self.values[self.index(channel, x, y)]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, x: usize, y: usize, value: f64) {
        let i = self.index(channel, x, y);
        self.values[i] = value;
    }

    pub fn same_shape(&self, other: &ScalarField) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn dims_str(&self) -> String {
        format!("{}x{}x{}", self.width, self.height, self.channels)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_probability(&self) -> bool {
        self.values.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        let values: Vec<f64> = self.values.iter().map(|&v| f(v)).collect();
        debug_assert!(values.iter().all(|v| v.is_finite()));
        ScalarField { values, ..*self }
    }

    /// Elementwise logistic function.
    pub fn sigmoid(&self) -> ScalarField {
        self.map(sigmoid)
    }

    /// Binarizes one channel with `value >= threshold`.
    pub fn threshold(&self, channel: usize, threshold: f64) -> BinaryMask {
        let bits = self.plane(channel).iter().map(|&v| v >= threshold).collect();
        BinaryMask::from_bits(self.width, self.height, bits).expect("plane has width*height values")
    }

    /// Bilinear interpolation at sub-pixel `(x, y)` (pixel-centre convention).
    pub fn sample(&self, channel: usize, x: f64, y: f64) -> Result<f64> {
        let taps = self.bilinear_taps(x, y)?;
        let plane = self.plane(channel);
        Ok(taps.iter().map(|t| t.weight * plane[t.y * self.width + t.x]).sum())
    }

    /// The four grid neighbours of `(x, y)` with their bilinear weights.
    ///
    /// Coordinates must lie in `[0, width-1] x [0, height-1]`; nothing is
    /// clamped.
    pub fn bilinear_taps(&self, x: f64, y: f64) -> Result<[Tap; 4]> {
        bilinear_taps(self.width, self.height, x, y)
    }
}

impl From<&BinaryMask> for ScalarField {
    fn from(mask: &BinaryMask) -> Self {
        ScalarField {
            width: mask.width(),
            height: mask.height(),
            channels: 1,
            values: mask.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }
}

pub fn bilinear_taps(width: usize, height: usize, x: f64, y: f64) -> Result<[Tap; 4]> {
    let out = || Error::OutOfDomain { x, y, width, height };
    if width == 0 || height == 0 || !x.is_finite() || !y.is_finite() {
        return Err(out());
    }
    let xmax = (width - 1) as f64;
    let ymax = (height - 1) as f64;
    if x < -DOMAIN_SLACK || y < -DOMAIN_SLACK || x > xmax + DOMAIN_SLACK || y > ymax + DOMAIN_SLACK {
        return Err(out());
    }
    let x = x.clamp(0.0, xmax);
    let y = y.clamp(0.0, ymax);
    let x0 = (x.floor() as usize).min(width - 1);
    let y0 = (y.floor() as usize).min(height - 1);
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    Ok([
        Tap {
            x: x0,
            y: y0,
            weight: (1.0 - fx) * (1.0 - fy),
        },
        Tap {
            x: x1,
            y: y0,
            weight: fx * (1.0 - fy),
        },
        Tap {
            x: x0,
            y: y1,
            weight: (1.0 - fx) * fy,
        },
        Tap {
            x: x1,
            y: y1,
            weight: fx * fy,
        },
    ])
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker() -> ScalarField {
        ScalarField::new(2, 2, 1, vec![0.0, 1.0, 1.0, 0.0]).unwrap()
    }

    #[test]
    fn bilinear_centre_of_checker() {
        assert_eq!(checker().sample(0, 0.5, 0.5).unwrap(), 0.5);
    }

    #[test]
    fn bilinear_on_grid_point_is_exact() {
        assert_eq!(checker().sample(0, 1.0, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn bilinear_quarter_along_top_edge() {
        // 0.75 * 0 + 0.25 * 1
        assert!((checker().sample(0, 0.25, 0.0).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn bilinear_rejects_out_of_range() {
        let f = checker();
        assert!(matches!(f.sample(0, 1.5, 0.0), Err(Error::OutOfDomain { .. })));
        assert!(matches!(f.sample(0, -0.1, 0.0), Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn taps_sum_to_one() {
        let f = ScalarField::zeros(5, 4, 1);
        let taps = f.bilinear_taps(2.3, 1.7).unwrap();
        let s: f64 = taps.iter().map(|t| t.weight).sum();
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(ScalarField::new(1, 1, 1, vec![f64::NAN]).is_err());
        assert!(ScalarField::new(2, 1, 1, vec![0.0]).is_err());
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(800.0) <= 1.0);
    }
}
