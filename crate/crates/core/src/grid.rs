//! Regular planar grids shared by relation maps, landscapes and the planner.

use serde::{Deserialize, Serialize};

use crate::geometry::Vec2;

/// Axis-aligned grid of square cells. Cell `(col, row)` covers
/// `[origin + (col, row) * cell_size, origin + (col + 1, row + 1) * cell_size)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub origin: [f64; 2],
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
}

impl GridSpec {
    pub fn new(origin: [f64; 2], cell_size: f64, width: usize, height: usize) -> Self {
        Self {
            origin,
            cell_size,
            width,
            height,
        }
    }

    pub fn cell_count(&self) -> usize {
        self.width * self.height
    }

    pub fn is_valid(&self) -> bool {
        self.width > 0
            && self.height > 0
            && self.cell_size.is_finite()
            && self.cell_size > 0.0
            && self.origin.iter().all(|v| v.is_finite())
    }

    #[inline]
    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn col_row(&self, index: usize) -> (usize, usize) {
        (index % self.width, index / self.width)
    }

    /// Center of a cell in world coordinates.
    #[inline]
    pub fn center(&self, index: usize) -> Vec2 {
        let (c, r) = self.col_row(index);
        Vec2::new(
            self.origin[0] + (c as f64 + 0.5) * self.cell_size,
            self.origin[1] + (r as f64 + 0.5) * self.cell_size,
        )
    }

    /// Cell containing `p`, or `None` outside the grid.
    #[inline]
    pub fn locate(&self, p: Vec2) -> Option<usize> {
        let fx = (p.x - self.origin[0]) / self.cell_size;
        let fy = (p.y - self.origin[1]) / self.cell_size;
        if !(fx >= 0.0 && fy >= 0.0) {
            return None;
        }
        let (c, r) = (fx.floor() as usize, fy.floor() as usize);
        (c < self.width && r < self.height).then(|| self.index(c, r))
    }

    pub fn extent(&self) -> [f64; 2] {
        [
            self.width as f64 * self.cell_size,
            self.height as f64 * self.cell_size,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn locate_inverts_center() {
        let g = GridSpec::new([-1.0, 2.0], 0.25, 7, 5);
        for i in 0..g.cell_count() {
            assert_eq!(g.locate(g.center(i)), Some(i));
        }
        assert_eq!(g.locate(Vec2::new(-1.01, 2.1)), None);
        assert_eq!(g.locate(Vec2::new(0.76, 2.1)), None);
        assert_eq!(g.locate(Vec2::new(f64::NAN, 2.1)), None);
    }
}
