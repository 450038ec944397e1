//! Hand-crafted and semi-learnable RoI pooling.
//!
//! Every method here is a special case of a weighted sum over positions; the
//! `*_weight_field` constructors build that weight form explicitly so it can be
//! checked against the dedicated implementations through
//! [`crate::attention::aggregate`].

use crate::error::{Error, Result};
use crate::types::{FeatureMap, InstanceMask, PartFeatureMatrix, Position, Roi, WeightField};

/// One rectangular bin of a regular grid, `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bin {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Bin {
    pub fn center(&self) -> Position {
        Position::new(0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }

    /// Cells of a `width x height` map whose centers fall inside the bin's
    /// half-open rectangle, row-major.
    pub fn cells(&self, width: usize, height: usize) -> Vec<(usize, usize)> {
        let (u0, u1) = center_range(self.x0, self.x1, width);
        let (v0, v1) = center_range(self.y0, self.y1, height);
        let mut out = Vec::with_capacity(u1.saturating_sub(u0) * v1.saturating_sub(v0));
        for v in v0..v1 {
            for u in u0..u1 {
                out.push((u, v));
            }
        }
        out
    }

    pub fn contains_center(&self, u: usize, v: usize) -> bool {
        let (cu, cv) = (u as f64 + 0.5, v as f64 + 0.5);
        cu >= self.x0 && cu < self.x1 && cv >= self.y0 && cv < self.y1
    }
}

/// Index range `[lo, hi)` of cells `i` with `lo_edge <= i + 0.5 < hi_edge`,
/// clipped to `[0, n)`.
pub(crate) fn center_range(lo_edge: f64, hi_edge: f64, n: usize) -> (usize, usize) {
    let lo = (lo_edge - 0.5).ceil().max(0.0);
    let hi = (hi_edge - 0.5).ceil().max(0.0);
    let lo = (lo as usize).min(n);
    let hi = (hi as usize).min(n);
    (lo, hi.max(lo))
}

/// The cell whose extent contains `p`, clamped to the map.
pub fn nearest_cell(p: Position, width: usize, height: usize) -> (usize, usize) {
    let clamp = |z: f64, n: usize| (z.floor().max(0.0) as usize).min(n - 1);
    (clamp(p.u, width), clamp(p.v, height))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinGrid {
    roi: Roi,
    rows: usize,
    cols: usize,
    bins: Vec<Bin>,
}

impl BinGrid {
    pub fn roi(&self) -> &Roi {
        &self.roi
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Number of parts `K = rows * cols`.
    pub fn parts(&self) -> usize {
        self.bins.len()
    }

    pub fn bins(&self) -> &[Bin] {
        &self.bins
    }

    pub fn bin(&self, k: usize) -> &Bin {
        &self.bins[k]
    }
}

/// Splits `roi` into `rows x cols` equal bins, numbered row-major.
pub fn make_bin_grid(roi: &Roi, rows: usize, cols: usize) -> Result<BinGrid> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid(format!(
            "bin grid needs positive rows and cols, got {rows}x{cols}"
        )));
    }
    roi.validate()?;
    let (bw, bh) = (roi.width() / cols as f64, roi.height() / rows as f64);
    let bins = (0..rows * cols)
        .map(|k| {
            let (r, c) = ((k / cols) as f64, (k % cols) as f64);
            Bin {
                x0: roi.x1 + c * bw,
                x1: roi.x1 + (c + 1.0) * bw,
                y0: roi.y1 + r * bh,
                y1: roi.y1 + (r + 1.0) * bh,
            }
        })
        .collect();
    Ok(BinGrid {
        roi: *roi,
        rows,
        cols,
        bins,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Avg,
    Max,
}

/// Cells pooled by bin `k`; an empty bin falls back to the cell nearest its center.
fn pooled_cells(bin: &Bin, width: usize, height: usize) -> Vec<(usize, usize)> {
    let cells = bin.cells(width, height);
    if cells.is_empty() {
        vec![nearest_cell(bin.center(), width, height)]
    } else {
        cells
    }
}

fn average_cells(x: &FeatureMap, cells: &[(usize, usize)], out: &mut [f64]) {
    out.fill(0.0);
    for &(u, v) in cells {
        for (o, f) in out.iter_mut().zip(x.cell(u, v)) {
            *o += f;
        }
    }
    let inv = 1.0 / cells.len() as f64;
    out.iter_mut().for_each(|o| *o *= inv);
}

/// Regular RoI pooling: mean or max over the cells of each bin.
pub fn regular_pool(x: &FeatureMap, grid: &BinGrid, mode: PoolMode) -> PartFeatureMatrix {
    let mut y = PartFeatureMatrix::zeros(grid.parts(), x.channels());
    for (k, bin) in grid.bins().iter().enumerate() {
        let cells = pooled_cells(bin, x.width(), x.height());
        let out = y.part_mut(k);
        match mode {
            PoolMode::Avg => average_cells(x, &cells, out),
            PoolMode::Max => {
                out.fill(f64::NEG_INFINITY);
                for &(u, v) in &cells {
                    for (o, &f) in out.iter_mut().zip(x.cell(u, v)) {
                        *o = o.max(f);
                    }
                }
            }
        }
    }
    y
}

/// One-dimensional bilinear interpolation weight `max(0, 1 - |a - c|)`.
#[inline]
pub fn bilinear_weight(a: f64, c: f64) -> f64 {
    (1.0 - (a - c).abs()).max(0.0)
}

/// Clamps a sample point into the span of cell centers.
pub fn clamp_to_map(p: Position, width: usize, height: usize) -> Position {
    Position::new(
        p.u.clamp(0.5, width as f64 - 0.5),
        p.v.clamp(0.5, height as f64 - 0.5),
    )
}

/// Up to four `(u, v, weight)` taps interpolating `p` from surrounding cell centers.
pub fn bilinear_taps(p: Position, width: usize, height: usize) -> [(usize, usize, f64); 4] {
    let p = clamp_to_map(p, width, height);
    let (a, b) = (p.u - 0.5, p.v - 0.5);
    let (u0, v0) = (
        (a.floor() as usize).min(width - 1),
        (b.floor() as usize).min(height - 1),
    );
    let (u1, v1) = ((u0 + 1).min(width - 1), (v0 + 1).min(height - 1));
    let (fu, fv) = (a - u0 as f64, b - v0 as f64);
    [
        (u0, v0, (1.0 - fu) * (1.0 - fv)),
        (u1, v0, fu * (1.0 - fv)),
        (u0, v1, (1.0 - fu) * fv),
        (u1, v1, fu * fv),
    ]
}

/// Bilinearly interpolated feature vector at `p` (border-clamped).
pub fn interpolate(x: &FeatureMap, p: Position) -> Vec<f64> {
    let mut out = vec![0.0; x.channels()];
    accumulate_interpolated(x, p, 1.0, &mut out);
    out
}

fn accumulate_interpolated(x: &FeatureMap, p: Position, scale: f64, out: &mut [f64]) {
    for (u, v, w) in bilinear_taps(p, x.width(), x.height()) {
        if w == 0.0 {
            continue;
        }
        let w = w * scale;
        for (o, f) in out.iter_mut().zip(x.cell(u, v)) {
            *o += w * f;
        }
    }
}

/// Sample points of a bin: its center, or the centers of its 2x2 sub-bins.
fn bin_samples(bin: &Bin, samples_per_bin: usize) -> Result<Vec<Position>> {
    match samples_per_bin {
        1 => Ok(vec![bin.center()]),
        4 => {
            let (hw, hh) = (0.5 * (bin.x1 - bin.x0), 0.5 * (bin.y1 - bin.y0));
            let mut pts = Vec::with_capacity(4);
            for sy in 0..2 {
                for sx in 0..2 {
                    pts.push(Position::new(
                        bin.x0 + (sx as f64 + 0.5) * hw,
                        bin.y0 + (sy as f64 + 0.5) * hh,
                    ));
                }
            }
            Ok(pts)
        }
        n => Err(Error::invalid(format!(
            "samples per bin must be 1 or 4, got {n}"
        ))),
    }
}

/// Aligned RoI pooling with 1 or 4 bilinear samples per bin.
pub fn aligned_pool(
    x: &FeatureMap,
    grid: &BinGrid,
    samples_per_bin: usize,
) -> Result<PartFeatureMatrix> {
    let mut y = PartFeatureMatrix::zeros(grid.parts(), x.channels());
    for (k, bin) in grid.bins().iter().enumerate() {
        let samples = bin_samples(bin, samples_per_bin)?;
        let scale = 1.0 / samples.len() as f64;
        let out = y.part_mut(k);
        for p in samples {
            accumulate_interpolated(x, p, scale, out);
        }
    }
    Ok(y)
}

/// Per-bin displacements `(du, dv)` of the sampling centers.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetField {
    deltas: Vec<(f64, f64)>,
}

impl OffsetField {
    pub fn new(deltas: Vec<(f64, f64)>) -> Result<Self> {
        if deltas.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
            return Err(Error::NonFinite("offset field".into()));
        }
        Ok(Self { deltas })
    }

    pub fn zeros(parts: usize) -> Self {
        Self {
            deltas: vec![(0.0, 0.0); parts],
        }
    }

    /// Interleaved `[du_0, dv_0, du_1, dv_1, ...]`.
    pub fn from_interleaved(values: &[f64]) -> Result<Self> {
        if !values.len().is_multiple_of(2) {
            return Err(Error::shape("offset values must come in (du, dv) pairs"));
        }
        Self::new(values.chunks_exact(2).map(|c| (c[0], c[1])).collect())
    }

    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    pub fn deltas(&self) -> &[(f64, f64)] {
        &self.deltas
    }
}

fn displaced_center(bin: &Bin, delta: (f64, f64)) -> Position {
    let c = bin.center();
    Position::new(c.u + delta.0, c.v + delta.1)
}

/// Deformable RoI pooling: aligned pooling (one sample) at displaced centers.
pub fn deformable_pool(
    x: &FeatureMap,
    grid: &BinGrid,
    offsets: &OffsetField,
) -> Result<PartFeatureMatrix> {
    if offsets.len() != grid.parts() {
        return Err(Error::shape(format!(
            "{} offsets for {} bins",
            offsets.len(),
            grid.parts()
        )));
    }
    let mut y = PartFeatureMatrix::zeros(grid.parts(), x.channels());
    for (k, (bin, &delta)) in grid.bins().iter().zip(offsets.deltas()).enumerate() {
        accumulate_interpolated(x, displaced_center(bin, delta), 1.0, y.part_mut(k));
    }
    Ok(y)
}

/// Single fully connected layer from the flattened `K x C_f` regular-pooled
/// feature to `2K` interleaved offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetPredictorParams {
    parts: usize,
    channels: usize,
    /// `2K x (K * C_f)`, row-major.
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl OffsetPredictorParams {
    pub fn new(parts: usize, channels: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let (rows, cols) = (2 * parts, parts * channels);
        if weight.len() != rows * cols || bias.len() != rows {
            return Err(Error::shape(format!(
                "offset predictor for K={parts}, C_f={channels} needs a {rows}x{cols} weight and {rows} biases"
            )));
        }
        if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("offset predictor".into()));
        }
        Ok(Self {
            parts,
            channels,
            weight,
            bias,
        })
    }

    pub fn zeros(parts: usize, channels: usize) -> Self {
        Self {
            parts,
            channels,
            weight: vec![0.0; 2 * parts * parts * channels],
            bias: vec![0.0; 2 * parts],
        }
    }

    pub fn parts(&self) -> usize {
        self.parts
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }
}

pub fn predict_offsets(
    x: &FeatureMap,
    grid: &BinGrid,
    params: &OffsetPredictorParams,
) -> Result<OffsetField> {
    if params.parts != grid.parts() || params.channels != x.channels() {
        return Err(Error::shape(format!(
            "offset predictor built for K={}, C_f={} applied to K={}, C_f={}",
            params.parts,
            params.channels,
            grid.parts(),
            x.channels()
        )));
    }
    let initial = regular_pool(x, grid, PoolMode::Avg);
    let features = initial.data();
    let cols = features.len();
    let out: Vec<f64> = params
        .bias
        .iter()
        .enumerate()
        .map(|(r, b)| {
            let row = &params.weight[r * cols..(r + 1) * cols];
            b + row.iter().zip(features).map(|(w, f)| w * f).sum::<f64>()
        })
        .collect();
    OffsetField::from_interleaved(&out)
}

/// Position-sensitive pooling. Bin `k` averages only channels
/// `[k*C_f/K, (k+1)*C_f/K)`; those `C_f/K` values fill the front of row `k`
/// and the remaining entries are zero.
pub fn ps_roi_pool(x: &FeatureMap, grid: &BinGrid) -> Result<PartFeatureMatrix> {
    let (k_parts, c) = (grid.parts(), x.channels());
    if c % k_parts != 0 {
        return Err(Error::invalid(format!(
            "position-sensitive pooling needs C_f ({c}) divisible by K ({k_parts})"
        )));
    }
    let group = c / k_parts;
    let mut y = PartFeatureMatrix::zeros(k_parts, c);
    for (k, bin) in grid.bins().iter().enumerate() {
        let cells = pooled_cells(bin, x.width(), x.height());
        let inv = 1.0 / cells.len() as f64;
        let out = &mut y.part_mut(k)[..group];
        for &(u, v) in &cells {
            let f = &x.cell(u, v)[k * group..(k + 1) * group];
            for (o, f) in out.iter_mut().zip(f) {
                *o += f;
            }
        }
        out.iter_mut().for_each(|o| *o *= inv);
    }
    Ok(y)
}

/// One-stage detector feature: the interpolated feature at the RoI center.
pub fn center_feature(x: &FeatureMap, roi: &Roi) -> PartFeatureMatrix {
    let mut y = PartFeatureMatrix::zeros(1, x.channels());
    accumulate_interpolated(x, roi.center(), 1.0, y.part_mut(0));
    y
}

/// MNC-style masked pooling: bins whose center cell is foreground use regular
/// average pooling, all other bins are zero.
pub fn masked_pool(
    x: &FeatureMap,
    grid: &BinGrid,
    mask: &InstanceMask,
) -> Result<PartFeatureMatrix> {
    check_mask_dims(x, mask)?;
    let mut y = PartFeatureMatrix::zeros(grid.parts(), x.channels());
    for (k, bin) in grid.bins().iter().enumerate() {
        if bin_inside_mask(bin, mask) {
            let cells = pooled_cells(bin, x.width(), x.height());
            average_cells(x, &cells, y.part_mut(k));
        }
    }
    Ok(y)
}

fn check_mask_dims(x: &FeatureMap, mask: &InstanceMask) -> Result<()> {
    if mask.height() != x.height() || mask.width() != x.width() {
        return Err(Error::shape(format!(
            "mask is {}x{} but the feature map is {}x{}",
            mask.height(),
            mask.width(),
            x.height(),
            x.width()
        )));
    }
    Ok(())
}

pub fn bin_inside_mask(bin: &Bin, mask: &InstanceMask) -> bool {
    let (u, v) = nearest_cell(bin.center(), mask.width(), mask.height());
    mask.get(u, v)
}

// Weight-field forms. These enumerate every cell of the map and evaluate the
// weight formula per cell instead of indexing bins directly.

fn all_cells(width: usize, height: usize) -> Vec<Position> {
    (0..height)
        .flat_map(|v| (0..width).map(move |u| Position::cell(u, v)))
        .collect()
}

fn regular_row(bin: &Bin, width: usize, height: usize) -> Vec<f64> {
    let members: Vec<bool> = (0..height)
        .flat_map(|v| (0..width).map(move |u| (u, v)))
        .map(|(u, v)| bin.contains_center(u, v))
        .collect();
    let count = members.iter().filter(|&&m| m).count();
    if count == 0 {
        let (u, v) = nearest_cell(bin.center(), width, height);
        let mut row = vec![0.0; width * height];
        row[v * width + u] = 1.0;
        return row;
    }
    let w = 1.0 / count as f64;
    members
        .into_iter()
        .map(|m| if m { w } else { 0.0 })
        .collect()
}

fn point_row(points: &[Position], width: usize, height: usize) -> Vec<f64> {
    let scale = 1.0 / points.len() as f64;
    let points: Vec<Position> = points
        .iter()
        .map(|&p| clamp_to_map(p, width, height))
        .collect();
    (0..height)
        .flat_map(|v| (0..width).map(move |u| (u, v)))
        .map(|(u, v)| {
            let (cu, cv) = (u as f64 + 0.5, v as f64 + 0.5);
            points
                .iter()
                .map(|p| bilinear_weight(cu, p.u) * bilinear_weight(cv, p.v))
                .sum::<f64>()
                * scale
        })
        .collect()
}

fn dense_field(rows: Vec<Vec<f64>>, width: usize, height: usize) -> Result<WeightField> {
    let parts = rows.len();
    WeightField::new(parts, all_cells(width, height), rows.concat())
}

/// Average-mode regular pooling as a dense weight field.
pub fn regular_weight_field(grid: &BinGrid, width: usize, height: usize) -> Result<WeightField> {
    let rows = grid
        .bins()
        .iter()
        .map(|b| regular_row(b, width, height))
        .collect();
    dense_field(rows, width, height)
}

pub fn aligned_weight_field(
    grid: &BinGrid,
    width: usize,
    height: usize,
    samples_per_bin: usize,
) -> Result<WeightField> {
    let rows = grid
        .bins()
        .iter()
        .map(|b| Ok(point_row(&bin_samples(b, samples_per_bin)?, width, height)))
        .collect::<Result<_>>()?;
    dense_field(rows, width, height)
}

pub fn deformable_weight_field(
    grid: &BinGrid,
    width: usize,
    height: usize,
    offsets: &OffsetField,
) -> Result<WeightField> {
    if offsets.len() != grid.parts() {
        return Err(Error::shape("offset count does not match bin count"));
    }
    let rows = grid
        .bins()
        .iter()
        .zip(offsets.deltas())
        .map(|(b, &d)| point_row(&[displaced_center(b, d)], width, height))
        .collect();
    dense_field(rows, width, height)
}

pub fn center_weight_field(roi: &Roi, width: usize, height: usize) -> Result<WeightField> {
    dense_field(
        vec![point_row(&[roi.center()], width, height)],
        width,
        height,
    )
}

/// Masked pooling as a weight field; rows of background bins are all zero.
pub fn masked_weight_field(grid: &BinGrid, mask: &InstanceMask) -> Result<WeightField> {
    let (width, height) = (mask.width(), mask.height());
    let rows = grid
        .bins()
        .iter()
        .map(|b| {
            if bin_inside_mask(b, mask) {
                regular_row(b, width, height)
            } else {
                vec![0.0; width * height]
            }
        })
        .collect();
    dense_field(rows, width, height)
}

/// Rearranges a full `K x C_f` aggregation into the position-sensitive layout:
/// row `k` keeps its own channel group at the front, zero elsewhere.
pub fn select_channel_groups(full: &PartFeatureMatrix) -> Result<PartFeatureMatrix> {
    let (k_parts, c) = (full.parts(), full.channels());
    if c % k_parts != 0 {
        return Err(Error::invalid("C_f must be divisible by K"));
    }
    let group = c / k_parts;
    let mut y = PartFeatureMatrix::zeros(k_parts, c);
    for k in 0..k_parts {
        y.part_mut(k)[..group].copy_from_slice(&full.part(k)[k * group..(k + 1) * group]);
    }
    Ok(y)
}
