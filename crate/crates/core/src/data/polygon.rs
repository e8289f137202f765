use crate::{Error, Result};

/// Simple polygon in pixel space, implicitly closed.
///
/// Vertices are `(row, col)`; pixel `(r, c)` covers `[r, r+1) x [c, c+1)`,
/// so its center sits at `(r + 0.5, c + 0.5)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Polygon {
    vertices: Vec<(f64, f64)>,
}

impl Polygon {
    pub fn new(vertices: Vec<(f64, f64)>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidPolygon(format!(
                "needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if let Some((r, c)) = vertices.iter().find(|(r, c)| !r.is_finite() || !c.is_finite()) {
            return Err(Error::InvalidPolygon(format!("non-finite vertex ({r}, {c})")));
        }
        Ok(Self { vertices })
    }

    /// Axis-aligned rectangle spanning rows `[r0, r1]` and columns `[c0, c1]`.
    pub fn rectangle(r0: f64, c0: f64, r1: f64, c1: f64) -> Result<Self> {
        Self::new(vec![(r0, c0), (r0, c1), (r1, c1), (r1, c0)])
    }

    pub fn vertices(&self) -> &[(f64, f64)] {
        &self.vertices
    }

    /// Even-odd test. Points exactly on an edge resolve by the half-open
    /// crossing rule, which never counts a point on a vertical right edge or
    /// on a top edge as inside.
    pub fn contains(&self, row: f64, col: f64) -> bool {
        let mut inside = false;
        let n = self.vertices.len();
        let mut j = n - 1;
        for i in 0..n {
            let (ri, ci) = self.vertices[i];
            let (rj, cj) = self.vertices[j];
            if (ri > row) != (rj > row) && col < crossing_col(ri, ci, rj, cj, row) {
                inside = !inside;
            }
            j = i;
        }
        inside
    }

    fn row_crossings(&self, row: f64, out: &mut Vec<f64>) {
        let n = self.vertices.len();
        let mut j = n - 1;
        for i in 0..n {
            let (ri, ci) = self.vertices[i];
            let (rj, cj) = self.vertices[j];
            if (ri > row) != (rj > row) {
                out.push(crossing_col(ri, ci, rj, cj, row));
            }
            j = i;
        }
    }
}

/// Column where edge (i, j) crosses the horizontal line at `row`. Shared by
/// the point test and the scanline fill so both agree bit for bit.
#[inline]
fn crossing_col(ri: f64, ci: f64, rj: f64, cj: f64, row: f64) -> f64 {
    (cj - ci) * (row - ri) / (rj - ri) + ci
}

/// Burns the union of `polygons` into a `height x width` mask of {0, 1}.
///
/// A pixel is set iff its center lies inside at least one polygon under the
/// even-odd rule. Scanline implementation: per row and polygon the edge
/// crossings are sorted and a pixel is inside when an odd number of crossings
/// lie strictly to its right.
pub fn rasterize_polygons(polygons: &[Polygon], height: usize, width: usize) -> Result<Vec<u8>> {
    if height == 0 || width == 0 {
        return Err(Error::Config(format!(
            "raster must be at least 1x1, got {height}x{width}"
        )));
    }
    let mut mask = vec![0u8; height * width];
    let mut crossings = Vec::new();
    for poly in polygons {
        for r in 0..height {
            let row = r as f64 + 0.5;
            crossings.clear();
            poly.row_crossings(row, &mut crossings);
            if crossings.is_empty() {
                continue;
            }
            crossings.sort_by(|a, b| a.total_cmp(b));
            let line = &mut mask[r * width..(r + 1) * width];
            // `k` counts crossings <= the current pixel center.
            let mut k = 0;
            for (c, px) in line.iter_mut().enumerate() {
                let col = c as f64 + 0.5;
                while k < crossings.len() && crossings[k] <= col {
                    k += 1;
                }
                if (crossings.len() - k) % 2 == 1 {
                    *px = 1;
                }
            }
        }
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force(polys: &[Polygon], h: usize, w: usize) -> Vec<u8> {
        let mut out = vec![0u8; h * w];
        for r in 0..h {
            for c in 0..w {
                let inside = polys.iter().any(|p| p.contains(r as f64 + 0.5, c as f64 + 0.5));
                out[r * w + c] = inside as u8;
            }
        }
        out
    }

    #[test]
    fn empty_union_is_all_zero() {
        assert_eq!(rasterize_polygons(&[], 4, 4).unwrap(), vec![0; 16]);
    }

    #[test]
    fn full_cover_is_all_one() {
        let rect = Polygon::rectangle(0.0, 0.0, 8.0, 8.0).unwrap();
        assert_eq!(rasterize_polygons(&[rect], 8, 8).unwrap(), vec![1; 64]);
    }

    #[test]
    fn half_pixel_inset_rectangle_leaves_last_row_and_column_on_the_boundary() {
        // Edges at -0.5 and 7.5 pass exactly through the centers of the last
        // row and column, which the strict interior rule leaves unset.
        let rect = Polygon::rectangle(-0.5, -0.5, 7.5, 7.5).unwrap();
        let mask = rasterize_polygons(&[rect], 8, 8).unwrap();
        for r in 0..8 {
            for c in 0..8 {
                assert_eq!(mask[r * 8 + c], (r < 7 && c < 7) as u8, "pixel ({r}, {c})");
            }
        }
    }

    #[test]
    fn triangle_matches_point_in_polygon_oracle() {
        let tri = Polygon::new(vec![(0.0, 0.0), (0.0, 5.0), (5.0, 0.0)]).unwrap();
        let mask = rasterize_polygons(std::slice::from_ref(&tri), 6, 6).unwrap();
        assert_eq!(mask, brute_force(&[tri], 6, 6));
        // Centers with r + c < 5 - strictly inside the hypotenuse.
        let expected: usize = (0..6).map(|r| (0..6).filter(|c| r + c + 1 < 5).count()).sum();
        assert_eq!(mask.iter().filter(|&&v| v == 1).count(), expected);
    }

    #[test]
    fn union_of_overlapping_polygons() {
        let a = Polygon::rectangle(1.0, 1.0, 5.0, 5.0).unwrap();
        let b = Polygon::rectangle(3.0, 3.0, 7.0, 7.0).unwrap();
        let mask = rasterize_polygons(&[a.clone(), b.clone()], 8, 8).unwrap();
        assert_eq!(mask, brute_force(&[a, b], 8, 8));
        assert_eq!(mask.iter().map(|&v| v as usize).sum::<usize>(), 16 + 16 - 4);
    }

    #[test]
    fn invalid_polygons_are_rejected() {
        assert!(matches!(
            Polygon::new(vec![(0.0, 0.0), (1.0, 1.0)]),
            Err(Error::InvalidPolygon(_))
        ));
        assert!(matches!(
            Polygon::new(vec![(0.0, 0.0), (1.0, f64::NAN), (2.0, 0.0)]),
            Err(Error::InvalidPolygon(_))
        ));
    }
}
