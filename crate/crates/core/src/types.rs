//! Domain values shared by every extractor.
//!
//! Coordinates are in feature-map cells. Integer cell `(i, j)` (column `i`,
//! row `j`) covers `[i, i+1) x [j, j+1)` and is located at its center
//! `(i + 0.5, j + 0.5)` whenever a continuous coordinate is needed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_finite(what: &str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Dense `H x W x C` image feature, row-major in `(y, x, channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::shape(format!(
                "feature map dims must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::shape(format!(
                "feature map {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        check_finite("feature map", &data)?;
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
    }

    /// Builds a map by evaluating `f(u, v, c)` at every cell.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for v in 0..height {
            for u in 0..width {
                for c in 0..channels {
                    data.push(f(u, v, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Feature vector of the cell at column `u`, row `v`.
    #[inline]
    pub fn cell(&self, u: usize, v: usize) -> &[f64] {
        let start = (v * self.width + u) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Axis-aligned region of interest `(x1, y1, x2, y2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Roi {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl Roi {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let roi = Self { x1, y1, x2, y2 };
        roi.validate()?;
        Ok(roi)
    }

    pub fn validate(&self) -> Result<()> {
        check_finite("RoI", &[self.x1, self.y1, self.x2, self.y2])?;
        if self.x2 < self.x1 || self.y2 < self.y1 {
            return Err(Error::invalid(format!(
                "RoI corners out of order: ({}, {}, {}, {})",
                self.x1, self.y1, self.x2, self.y2
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn center(&self) -> Position {
        Position::new(0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    /// Divides every coordinate by `stride`, mapping image pixels to feature cells.
    pub fn scaled(&self, stride: f64) -> Self {
        Self {
            x1: self.x1 / stride,
            y1: self.y1 / stride,
            x2: self.x2 / stride,
            y2: self.y2 / stride,
        }
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

/// A point `(u, v)` in feature-map units. Grid cells use integer values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Position {
    pub u: f64,
    pub v: f64,
}

impl Position {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn cell(u: usize, v: usize) -> Self {
        Self {
            u: u as f64,
            v: v as f64,
        }
    }

    /// The grid index this position names, if it is an integer cell inside a
    /// `width x height` map.
    pub fn as_cell(&self, width: usize, height: usize) -> Option<(usize, usize)> {
        let integral = self.u.fract() == 0.0 && self.v.fract() == 0.0;
        if integral && self.u >= 0.0 && self.v >= 0.0 {
            let (u, v) = (self.u as usize, self.v as usize);
            if u < width && v < height {
                return Some((u, v));
            }
        }
        None
    }
}

/// Output `y(b)`: `K` part features of `C_f` channels each.
#[derive(Debug, Clone, PartialEq)]
pub struct PartFeatureMatrix {
    parts: usize,
    channels: usize,
    data: Vec<f64>,
}

impl PartFeatureMatrix {
    pub fn new(parts: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != parts * channels {
            return Err(Error::shape(format!(
                "part feature matrix {parts}x{channels} needs {} values, got {}",
                parts * channels,
                data.len()
            )));
        }
        check_finite("part features", &data)?;
        Ok(Self {
            parts,
            channels,
            data,
        })
    }

    pub fn zeros(parts: usize, channels: usize) -> Self {
        Self {
            parts,
            channels,
            data: vec![0.0; parts * channels],
        }
    }

    pub fn parts(&self) -> usize {
        self.parts
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn part(&self, k: usize) -> &[f64] {
        &self.data[k * self.channels..(k + 1) * self.channels]
    }

    pub(crate) fn part_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.channels..(k + 1) * self.channels]
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.data.len(), other.data.len(), "shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Per-part weights over an ordered set of sampled positions.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightField {
    parts: usize,
    positions: Vec<Position>,
    weights: Vec<f64>,
}

impl WeightField {
    /// Weights are `parts x positions.len()`, row-major by part. Negative or
    /// non-finite weights are rejected; normalization is not enforced here
    /// because masked pooling relaxes it.
    pub fn new(parts: usize, positions: Vec<Position>, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != parts * positions.len() {
            return Err(Error::shape(format!(
                "weight field {parts}x{} needs {} weights, got {}",
                positions.len(),
                parts * positions.len(),
                weights.len()
            )));
        }
        check_finite("weight field", &weights)?;
        if weights.iter().any(|&w| w < 0.0) {
            return Err(Error::invalid("weight field contains negative weights"));
        }
        Ok(Self {
            parts,
            positions,
            weights,
        })
    }

    pub fn parts(&self) -> usize {
        self.parts
    }

    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let n = self.positions.len();
        &self.weights[k * n..(k + 1) * n]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.parts).map(|k| self.row(k).iter().sum()).collect()
    }
}

/// Binary foreground mask over the feature grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl InstanceMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "mask {height}x{width} needs {} cells, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Accepts only exact 0.0 / 1.0 values, as stored in mask files.
    pub fn from_values(height: usize, width: usize, values: &[f64]) -> Result<Self> {
        let data = values
            .iter()
            .map(|&v| match v {
                0.0 => Ok(false),
                1.0 => Ok(true),
                other => Err(Error::invalid(format!("mask value {other} is not 0 or 1"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(height, width, data)
    }

    /// Mask that is set exactly on the cells whose centers lie in `roi`.
    pub fn from_rect(height: usize, width: usize, roi: &Roi) -> Self {
        let mut data = vec![false; height * width];
        for v in 0..height {
            for u in 0..width {
                let (cu, cv) = (u as f64 + 0.5, v as f64 + 0.5);
                data[v * width + u] = cu >= roi.x1 && cu < roi.x2 && cv >= roi.y1 && cv < roi.y2;
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, u: usize, v: usize) -> bool {
        self.data[v * self.width + u]
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&m| m).count()
    }

    pub fn to_values(&self) -> Vec<f64> {
        self.data
            .iter()
            .map(|&m| if m { 1.0 } else { 0.0 })
            .collect()
    }
}
