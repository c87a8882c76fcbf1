use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned pixel to world mapping for a north-up raster.
///
/// `origin_x`/`origin_y` locate the top-left *corner* of pixel (0, 0); world
/// y decreases by `pixel_h` per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_w: f64,
    pub pixel_h: f64,
    pub crs_id: String,
}

impl GeoTransform {
    pub fn new(origin_x: f64, origin_y: f64, pixel_w: f64, pixel_h: f64, crs_id: impl Into<String>) -> Result<Self> {
        if !(pixel_w > 0.0 && pixel_h > 0.0 && pixel_w.is_finite() && pixel_h.is_finite()) {
            return Err(Error::WorldFile(format!(
                "pixel sizes must be positive (got {pixel_w} x {pixel_h})"
            )));
        }
        if !(origin_x.is_finite() && origin_y.is_finite()) {
            return Err(Error::WorldFile("non-finite origin".into()));
        }
        Ok(Self {
            origin_x,
            origin_y,
            pixel_w,
            pixel_h,
            crs_id: crs_id.into(),
        })
    }

    pub fn with_crs(mut self, crs_id: impl Into<String>) -> Self {
        self.crs_id = crs_id.into();
        self
    }

    /// World coordinates of the center of pixel (col, row).
    pub fn pixel_center(&self, col: f64, row: f64) -> (f64, f64) {
        (
            self.origin_x + (col + 0.5) * self.pixel_w,
            self.origin_y - (row + 0.5) * self.pixel_h,
        )
    }

    /// Serialize as the six-line ESRI world file (pixel-center convention).
    pub fn to_world_file(&self) -> String {
        format!(
            "{}\n0\n0\n{}\n{}\n{}\n",
            self.pixel_w,
            -self.pixel_h,
            self.origin_x + self.pixel_w / 2.0,
            self.origin_y - self.pixel_h / 2.0
        )
    }
}

/// Parse an ESRI world file.
///
/// Lines are: pixel width, row rotation, column rotation, negated pixel
/// height, and the world coordinates of the *center* of pixel (0, 0). The
/// returned origin is shifted to the pixel corner. The CRS id is left empty;
/// attach one with [`GeoTransform::with_crs`].
pub fn parse_world_file(text: &str) -> Result<GeoTransform> {
    let mut values = [0.0f64; 6];
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    for (i, slot) in values.iter_mut().enumerate() {
        let line = lines
            .next()
            .ok_or_else(|| Error::WorldFile(format!("expected 6 lines, found {i}")))?;
        *slot = line
            .parse::<f64>()
            .map_err(|_| Error::WorldFile(format!("line {}: not a number: {line:?}", i + 1)))?;
        if !slot.is_finite() {
            return Err(Error::WorldFile(format!("line {}: non-finite value", i + 1)));
        }
    }
    let [pixel_w, rot1, rot2, neg_pixel_h, center_x, center_y] = values;
    if rot1 != 0.0 || rot2 != 0.0 {
        return Err(Error::RotatedTransform { rot1, rot2 });
    }
    let pixel_h = -neg_pixel_h;
    if pixel_w <= 0.0 || pixel_h <= 0.0 {
        return Err(Error::WorldFile(format!(
            "non-positive pixel size {pixel_w} x {pixel_h}"
        )));
    }
    GeoTransform::new(
        center_x - pixel_w / 2.0,
        center_y + pixel_h / 2.0,
        pixel_w,
        pixel_h,
        "",
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_scale_world_file() {
        let t = parse_world_file("0.02\n0\n0\n-0.02\n100.01\n500.01\n").unwrap();
        assert!((t.origin_x - 100.0).abs() < 1e-12);
        assert!((t.origin_y - 500.02).abs() < 1e-12);
        assert_eq!((t.pixel_w, t.pixel_h), (0.02, 0.02));
    }

    #[test]
    fn unit_world_file() {
        let t = parse_world_file("1\n0\n0\n-1\n0.5\n-0.5").unwrap();
        assert_eq!((t.origin_x, t.origin_y, t.pixel_w, t.pixel_h), (0.0, 0.0, 1.0, 1.0));
    }

    #[test]
    fn rotation_rejected() {
        let err = parse_world_file("0.02\n0.001\n0\n-0.02\n100\n500\n").unwrap_err();
        assert!(err.to_string().contains("rotated transforms unsupported"));
    }

    #[test]
    fn bad_lines_rejected() {
        assert!(parse_world_file("0.02\nabc\n0\n-0.02\n1\n1").is_err());
        assert!(parse_world_file("0.02\n0\n0\n-0.02\n1").is_err());
        // positive line 4 means y increases downward: non-positive pixel height
        assert!(parse_world_file("0.02\n0\n0\n0.02\n1\n1").is_err());
        assert!(parse_world_file("-1\n0\n0\n-1\n1\n1").is_err());
    }

    #[test]
    fn world_file_round_trip() {
        let t = GeoTransform::new(350_000.0, 820_000.0, 0.25, 0.25, "").unwrap();
        let back = parse_world_file(&t.to_world_file()).unwrap();
        assert_eq!(back, t);
    }
}
