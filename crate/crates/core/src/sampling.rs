//! Support regions and their sparse sample sets.
//!
//! Positions inside the RoI are taken on a lattice anchored at the RoI's first
//! covered cell; context positions outside it on a lattice anchored at cell
//! `(0, 0)`. Cell membership follows the cell-center rule of [`crate::types`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pooling::{center_range, nearest_cell};
use crate::types::{Position, Roi};

pub const DEFAULT_MAX_IN: usize = 196;
pub const DEFAULT_MAX_OUT: usize = 196;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportKind {
    /// The RoI itself.
    Roi1x,
    /// Concentric box with twice the RoI's area and the same aspect ratio.
    Roi2x,
    WholeImage,
}

impl std::str::FromStr for SupportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "roi_1x" => Ok(Self::Roi1x),
            "roi_2x" => Ok(Self::Roi2x),
            "whole_image" => Ok(Self::WholeImage),
            other => Err(Error::invalid(format!(
                "unknown support kind {other:?} (expected roi_1x, roi_2x or whole_image)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportSpec {
    pub kind: SupportKind,
    pub max_in: usize,
    pub max_out: usize,
}

impl Default for SupportSpec {
    fn default() -> Self {
        Self {
            kind: SupportKind::WholeImage,
            max_in: DEFAULT_MAX_IN,
            max_out: DEFAULT_MAX_OUT,
        }
    }
}

impl SupportSpec {
    pub fn new(kind: SupportKind, max_in: usize, max_out: usize) -> Result<Self> {
        let spec = Self {
            kind,
            max_in,
            max_out,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_in == 0 {
            return Err(Error::invalid("max_in must be at least 1"));
        }
        if self.max_out == 0 && self.kind != SupportKind::Roi1x {
            return Err(Error::invalid(
                "max_out may be 0 only for the roi_1x support",
            ));
        }
        Ok(())
    }

    /// Budgets large enough that nothing is skipped on an `h x w` map.
    pub fn dense(kind: SupportKind, height: usize, width: usize) -> Self {
        let area = (height * width).max(1);
        Self {
            kind,
            max_in: area,
            max_out: area,
        }
    }
}

/// Sampled support positions: the inside set followed by the context set.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    positions: Vec<Position>,
    inside: usize,
    stride_x: usize,
    stride_y: usize,
    stride_out: Option<usize>,
}

impl SamplingPlan {
    /// All positions, inside ones first.
    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    pub fn in_positions(&self) -> &[Position] {
        &self.positions[..self.inside]
    }

    pub fn out_positions(&self) -> &[Position] {
        &self.positions[self.inside..]
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn inside_strides(&self) -> (usize, usize) {
        (self.stride_x, self.stride_y)
    }

    /// `None` when the support has no context region.
    pub fn stride_out(&self) -> Option<usize> {
        self.stride_out
    }

    /// Grid indices of every sampled position.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.positions.iter().map(|p| (p.u as usize, p.v as usize))
    }
}

/// Smallest `s >= 1` with `s * sqrt(budget) >= len`.
fn ceil_over_sqrt(len: f64, budget: usize) -> usize {
    let len = len.max(0.0);
    let m = budget as f64;
    let target = len * len;
    let mut s = (len / m.sqrt()).ceil().max(1.0) as usize;
    while s > 1 && ((s - 1) * (s - 1)) as f64 * m >= target {
        s -= 1;
    }
    while ((s * s) as f64 * m) < target {
        s += 1;
    }
    s
}

/// Inside-RoI strides `(ceil(W_b / sqrt(max_in)), ceil(H_b / sqrt(max_in)))`, at least 1.
pub fn inside_strides(roi: &Roi, max_in: usize) -> Result<(usize, usize)> {
    if max_in == 0 {
        return Err(Error::invalid("max_in must be at least 1"));
    }
    Ok((
        ceil_over_sqrt(roi.width(), max_in),
        ceil_over_sqrt(roi.height(), max_in),
    ))
}

/// Context stride `ceil(sqrt(H * W / max_out))`, at least 1.
pub fn outside_stride(height: usize, width: usize, max_out: usize) -> Result<usize> {
    if max_out == 0 {
        return Err(Error::invalid("max_out must be at least 1"));
    }
    let area = height as u128 * width as u128;
    let m = max_out as u128;
    let mut s = ((area as f64 / m as f64).sqrt().ceil() as u128).max(1);
    while s > 1 && (s - 1) * (s - 1) * m >= area {
        s -= 1;
    }
    while s * s * m < area {
        s += 1;
    }
    Ok(s as usize)
}

fn lattice_count(cells: usize, stride: usize) -> usize {
    cells.div_ceil(stride)
}

fn check_intersects(roi: &Roi, height: usize, width: usize) -> Result<()> {
    roi.validate()?;
    if roi.x2 < 0.0 || roi.y2 < 0.0 || roi.x1 > width as f64 || roi.y1 > height as f64 {
        return Err(Error::RoiOutsideMap {
            x1: roi.x1,
            y1: roi.y1,
            x2: roi.x2,
            y2: roi.y2,
            width,
            height,
        });
    }
    Ok(())
}

fn support_box(roi: &Roi, kind: SupportKind, height: usize, width: usize) -> Option<Roi> {
    match kind {
        SupportKind::Roi1x => None,
        SupportKind::WholeImage => Some(Roi {
            x1: 0.0,
            y1: 0.0,
            x2: width as f64,
            y2: height as f64,
        }),
        SupportKind::Roi2x => {
            let c = roi.center();
            let (hw, hh) = (
                0.5 * roi.width() * std::f64::consts::SQRT_2,
                0.5 * roi.height() * std::f64::consts::SQRT_2,
            );
            Some(Roi {
                x1: c.u - hw,
                y1: c.v - hh,
                x2: c.u + hw,
                y2: c.v + hh,
            })
        }
    }
}

fn assemble(
    roi: &Roi,
    height: usize,
    width: usize,
    kind: SupportKind,
    max_in: usize,
    stride_out: Option<usize>,
) -> SamplingPlan {
    let (u0, u1) = center_range(roi.x1, roi.x2, width);
    let (v0, v1) = center_range(roi.y1, roi.y2, height);
    let (nx, ny) = (u1 - u0, v1 - v0);

    let mut positions = Vec::new();
    let (mut sx, mut sy) = (1, 1);
    let fallback = if nx * ny == 0 {
        // No cell center inside the RoI: sample the cell nearest its center.
        let (u, v) = nearest_cell(roi.center(), width, height);
        positions.push(Position::cell(u, v));
        Some((u, v))
    } else {
        if nx * ny > max_in {
            (sx, sy) = inside_strides(roi, max_in).expect("max_in validated");
            // Non-square budgets can round one lattice point over; widen the
            // axis with more points until the budget holds.
            while lattice_count(nx, sx) * lattice_count(ny, sy) > max_in {
                if lattice_count(nx, sx) >= lattice_count(ny, sy) {
                    sx += 1;
                } else {
                    sy += 1;
                }
            }
        }
        for v in (v0..v1).step_by(sy) {
            for u in (u0..u1).step_by(sx) {
                positions.push(Position::cell(u, v));
            }
        }
        None
    };
    let inside = positions.len();

    if let (Some(support), Some(s)) = (support_box(roi, kind, height, width), stride_out) {
        let (su0, su1) = center_range(support.x1, support.x2, width);
        let (sv0, sv1) = center_range(support.y1, support.y2, height);
        let first = |lo: usize| lo.div_ceil(s) * s;
        for v in (first(sv0)..sv1).step_by(s) {
            for u in (first(su0)..su1).step_by(s) {
                let in_roi = (u0..u1).contains(&u) && (v0..v1).contains(&v);
                if !in_roi && fallback != Some((u, v)) {
                    positions.push(Position::cell(u, v));
                }
            }
        }
    }

    SamplingPlan {
        positions,
        inside,
        stride_x: sx,
        stride_y: sy,
        stride_out,
    }
}

/// Sparse sample plan for `roi` on an `height x width` map.
///
/// Inside cells are all kept when they fit in `max_in`; otherwise the inside
/// strides apply. Context cells use the outside stride.
pub fn build_plan(
    roi: &Roi,
    height: usize,
    width: usize,
    spec: &SupportSpec,
) -> Result<SamplingPlan> {
    spec.validate()?;
    check_intersects(roi, height, width)?;
    let stride_out = match spec.kind {
        SupportKind::Roi1x => None,
        _ => Some(outside_stride(height, width, spec.max_out)?),
    };
    Ok(assemble(
        roi,
        height,
        width,
        spec.kind,
        spec.max_in,
        stride_out,
    ))
}

/// Every cell of the support region, without sampling.
pub fn dense_plan(
    roi: &Roi,
    height: usize,
    width: usize,
    kind: SupportKind,
) -> Result<SamplingPlan> {
    check_intersects(roi, height, width)?;
    let stride_out = (kind != SupportKind::Roi1x).then_some(1);
    Ok(assemble(roi, height, width, kind, usize::MAX, stride_out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roi(x1: f64, y1: f64, x2: f64, y2: f64) -> Roi {
        Roi::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn inside_stride_examples() {
        assert_eq!(
            inside_strides(&roi(0.0, 0.0, 28.0, 14.0), 196).unwrap(),
            (2, 1)
        );
        assert_eq!(
            inside_strides(&roi(3.0, 3.0, 13.0, 13.0), 196).unwrap(),
            (1, 1)
        );
        assert_eq!(
            inside_strides(&roi(0.0, 0.0, 14.0, 14.0), 196).unwrap(),
            (1, 1)
        );
        assert_eq!(
            inside_strides(&roi(0.0, 0.0, 0.0, 0.0), 196).unwrap(),
            (1, 1)
        );
        assert_eq!(
            inside_strides(&roi(0.0, 0.0, 14.5, 28.01), 196).unwrap(),
            (2, 3)
        );
        assert!(inside_strides(&roi(0.0, 0.0, 1.0, 1.0), 0).is_err());
    }

    #[test]
    fn outside_stride_examples() {
        assert_eq!(outside_stride(14, 14, 196).unwrap(), 1);
        assert_eq!(outside_stride(48, 50, 196).unwrap(), 4);
        assert_eq!(outside_stride(1, 1, 1).unwrap(), 1);
        assert_eq!(outside_stride(1, 1, 1000).unwrap(), 1);
        assert_eq!(outside_stride(28, 28, 196).unwrap(), 2);
        assert_eq!(outside_stride(29, 28, 196).unwrap(), 3);
        assert!(outside_stride(4, 4, 0).is_err());
    }

    #[test]
    fn roi_covering_map() {
        let p = build_plan(&roi(0.0, 0.0, 14.0, 14.0), 14, 14, &SupportSpec::default()).unwrap();
        assert_eq!(p.in_positions().len(), 196);
        assert!(p.out_positions().is_empty());
    }

    #[test]
    fn wide_roi_lattice() {
        let spec = SupportSpec::new(SupportKind::Roi1x, 196, 0).unwrap();
        let p = build_plan(&roi(0.0, 0.0, 28.0, 14.0), 14, 28, &spec).unwrap();
        assert_eq!(p.inside_strides(), (2, 1));
        let expected: Vec<Position> = (0..14)
            .flat_map(|v| (0..14).map(move |i| Position::cell(2 * i, v)))
            .collect();
        assert_eq!(p.in_positions(), expected.as_slice());
    }

    #[test]
    fn dense_whole_image() {
        let p = dense_plan(&roi(1.0, 1.0, 3.0, 3.0), 4, 4, SupportKind::WholeImage).unwrap();
        assert_eq!(p.in_positions().len(), 4);
        assert_eq!(p.out_positions().len(), 12);
        let p = dense_plan(&roi(1.0, 0.0, 3.0, 2.0), 4, 4, SupportKind::Roi1x).unwrap();
        assert_eq!(
            p.in_positions(),
            &[
                Position::cell(1, 0),
                Position::cell(2, 0),
                Position::cell(1, 1),
                Position::cell(2, 1)
            ]
        );
        assert!(p.out_positions().is_empty());
    }

    #[test]
    fn full_budget_equals_dense() {
        let r = roi(2.2, 1.7, 17.9, 11.3);
        for kind in [
            SupportKind::Roi1x,
            SupportKind::Roi2x,
            SupportKind::WholeImage,
        ] {
            let spec = SupportSpec::dense(kind, 13, 21);
            assert_eq!(
                build_plan(&r, 13, 21, &spec).unwrap(),
                dense_plan(&r, 13, 21, kind).unwrap()
            );
        }
    }

    #[test]
    fn roi_2x_box_is_concentric() {
        // 4x2 RoI centered at (8, 8) grows to about 5.66x2.83.
        let p = dense_plan(&roi(6.0, 7.0, 10.0, 9.0), 16, 16, SupportKind::Roi2x).unwrap();
        assert_eq!(p.in_positions().len(), 8);
        // Support spans x in [5.17, 10.83), y in [6.59, 9.41): centers 5.5..=10.5
        // and 7.5..=8.5, so the box only widens the RoI horizontally.
        assert_eq!(p.len(), 6 * 2);
        let q = dense_plan(&roi(6.0, 6.0, 10.0, 10.0), 16, 16, SupportKind::Roi2x).unwrap();
        // 4x4 grows to 5.66x5.66 around (8, 8): centers 5.5..=10.5 both ways.
        assert_eq!((q.in_positions().len(), q.len()), (16, 36));
    }

    #[test]
    fn degenerate_roi_samples_nearest_cell() {
        let p = build_plan(&roi(1.0, 1.0, 1.0, 1.0), 4, 4, &SupportSpec::default()).unwrap();
        assert_eq!(p.in_positions(), &[Position::cell(1, 1)]);
        assert!(!p.out_positions().contains(&Position::cell(1, 1)));
        assert_eq!(p.len(), 16);
    }

    #[test]
    fn outside_map_is_an_error() {
        assert!(matches!(
            build_plan(&roi(20.0, 0.0, 30.0, 4.0), 8, 8, &SupportSpec::default()),
            Err(Error::RoiOutsideMap { .. })
        ));
        assert!(dense_plan(&roi(-5.0, -5.0, -1.0, -1.0), 8, 8, SupportKind::Roi1x).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(SupportSpec::new(SupportKind::Roi1x, 196, 0).is_ok());
        assert!(SupportSpec::new(SupportKind::WholeImage, 196, 0).is_err());
        assert!(SupportSpec::new(SupportKind::Roi2x, 0, 10).is_err());
        assert_eq!("roi_2x".parse::<SupportKind>().unwrap(), SupportKind::Roi2x);
        assert!("roi_3x".parse::<SupportKind>().is_err());
    }

    #[test]
    fn non_square_budget_respected() {
        // sqrt(200) is irrational; the raw strides would admit 15 x 15 points.
        let r = roi(0.0, 0.0, 113.0, 113.0);
        let spec = SupportSpec::new(SupportKind::Roi1x, 200, 0).unwrap();
        let p = build_plan(&r, 120, 120, &spec).unwrap();
        assert_eq!(inside_strides(&r, 200).unwrap(), (8, 8));
        assert!(p.in_positions().len() <= 200);
    }
}
