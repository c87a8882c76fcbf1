use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::geometry::Rect;
use super::transform::{parse_world_file, GeoTransform};
use crate::error::{Error, Result};

/// Georeferenced 8-bit image, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    samples: Vec<u8>,
    transform: GeoTransform,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, samples: Vec<u8>, transform: GeoTransform) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidRaster(format!("empty raster {width} x {height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidRaster(format!("{channels} channels (need 1 or 3)")));
        }
        if samples.len() != width * height * channels {
            return Err(Error::InvalidRaster(format!(
                "{} samples for {width} x {height} x {channels}",
                samples.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            samples,
            transform,
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

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    pub fn transform(&self) -> &GeoTransform {
        &self.transform
    }

    /// World extent in meters: (width, height).
    pub fn extent(&self) -> (f64, f64) {
        (
            self.width as f64 * self.transform.pixel_w,
            self.height as f64 * self.transform.pixel_h,
        )
    }

    pub fn bounds(&self) -> Rect {
        let (w, h) = self.extent();
        Rect {
            x_min: self.transform.origin_x,
            y_min: self.transform.origin_y - h,
            x_max: self.transform.origin_x + w,
            y_max: self.transform.origin_y,
        }
    }

    /// RGB triple at (col, row); single-channel rasters are replicated.
    pub fn rgb(&self, col: usize, row: usize) -> [u8; 3] {
        let i = (row * self.width + col) * self.channels;
        if self.channels == 1 {
            let v = self.samples[i];
            [v, v, v]
        } else {
            [self.samples[i], self.samples[i + 1], self.samples[i + 2]]
        }
    }
}

/// `<name>.crs.json` sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrsSidecar {
    pub crs_id: String,
    pub units: String,
}

impl CrsSidecar {
    pub fn meters(crs_id: impl Into<String>) -> Self {
        Self {
            crs_id: crs_id.into(),
            units: "m".into(),
        }
    }
}

/// Sidecar path for a data file: same directory and stem, `.crs.json` suffix.
pub fn crs_sidecar_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.crs.json"))
}

pub fn read_crs_sidecar(data_path: &Path) -> Result<CrsSidecar> {
    let path = crs_sidecar_path(data_path);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let sidecar: CrsSidecar =
        serde_json::from_str(&text).map_err(|e| Error::CrsSidecar(format!("{}: {e}", path.display())))?;
    if sidecar.units != "m" {
        return Err(Error::CrsSidecar(format!(
            "{}: units {:?} unsupported, inputs must be in a projected meter CRS",
            path.display(),
            sidecar.units
        )));
    }
    if sidecar.crs_id.is_empty() {
        return Err(Error::CrsSidecar(format!("{}: empty crs_id", path.display())));
    }
    Ok(sidecar)
}

pub fn write_crs_sidecar(data_path: &Path, sidecar: &CrsSidecar) -> Result<()> {
    let path = crs_sidecar_path(data_path);
    let text = serde_json::to_string(sidecar)? + "\n";
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Decode an 8-bit grayscale or RGB PNG into (width, height, channels, samples).
pub fn decode_png(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let decoder = png::Decoder::new(bytes);
    let mut reader = decoder.read_info().map_err(|e| Error::Png(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Png(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Png(format!("bit depth {:?} unsupported (need 8)", info.bit_depth)));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => return Err(Error::Png(format!("color type {other:?} unsupported (need gray or RGB)"))),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    buf.truncate(w * h * channels);
    Ok((w, h, channels, buf))
}

/// Encode 8-bit grayscale or RGB samples as PNG.
pub fn encode_png(width: usize, height: usize, channels: usize, samples: &[u8]) -> Result<Vec<u8>> {
    let color = match channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return Err(Error::Png(format!("cannot encode {c} channels"))),
    };
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width as u32, height as u32);
        encoder.set_color(color);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header().map_err(|e| Error::Png(e.to_string()))?;
        writer.write_image_data(samples).map_err(|e| Error::Png(e.to_string()))?;
    }
    Ok(out)
}

pub fn write_png(path: &Path, width: usize, height: usize, channels: usize, samples: &[u8]) -> Result<()> {
    let bytes = encode_png(width, height, channels, samples)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    std::io::Write::write_all(&mut w, &bytes).map_err(|e| Error::io(path, e))
}

/// Load `<name>.png` with its `<name>.pgw` world file and `<name>.crs.json`.
pub fn load_raster(png_path: &Path) -> Result<Raster> {
    let bytes = fs::read(png_path).map_err(|e| Error::io(png_path, e))?;
    let (w, h, c, samples) = decode_png(&bytes)?;
    let pgw = png_path.with_extension("pgw");
    let world = fs::read_to_string(&pgw).map_err(|e| Error::io(&pgw, e))?;
    let sidecar = read_crs_sidecar(png_path)?;
    let transform = parse_world_file(&world)?.with_crs(sidecar.crs_id);
    Raster::new(w, h, c, samples, transform)
}

/// Write the PNG, world file and CRS sidecar for a raster.
pub fn save_raster(png_path: &Path, raster: &Raster) -> Result<()> {
    write_png(png_path, raster.width, raster.height, raster.channels, &raster.samples)?;
    let pgw = png_path.with_extension("pgw");
    fs::write(&pgw, raster.transform.to_world_file()).map_err(|e| Error::io(&pgw, e))?;
    write_crs_sidecar(png_path, &CrsSidecar::meters(raster.transform.crs_id.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn transform() -> GeoTransform {
        GeoTransform::new(10.0, 20.0, 0.5, 0.5, "EPSG:32631").unwrap()
    }

    #[test]
    fn sample_count_checked() {
        assert!(Raster::new(2, 2, 3, vec![0; 11], transform()).is_err());
        assert!(Raster::new(2, 2, 4, vec![0; 16], transform()).is_err());
        assert!(Raster::new(0, 2, 1, vec![], transform()).is_err());
        let r = Raster::new(4, 2, 1, vec![0; 8], transform()).unwrap();
        assert_eq!(r.extent(), (2.0, 1.0));
        assert_eq!(r.bounds(), Rect { x_min: 10.0, y_min: 19.0, x_max: 12.0, y_max: 20.0 });
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("site.png");
        let samples: Vec<u8> = (0..4 * 3 * 3).map(|i| (i * 7) as u8).collect();
        let r = Raster::new(4, 3, 3, samples, transform()).unwrap();
        save_raster(&path, &r).unwrap();
        assert!(dir.path().join("site.crs.json").exists());
        let back = load_raster(&path).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn non_metric_sidecar_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("site.png");
        fs::write(
            dir.path().join("site.crs.json"),
            r#"{"crs_id": "EPSG:4326", "units": "degree"}"#,
        )
        .unwrap();
        assert!(matches!(read_crs_sidecar(&path), Err(Error::CrsSidecar(_))));
    }
}
