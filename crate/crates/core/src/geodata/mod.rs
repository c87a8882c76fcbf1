//! Georeferenced rasters, footprint vectors and the exact polygon geometry
//! the rest of the pipeline is checked against.

mod footprints;
mod geometry;
mod raster;
mod transform;

pub use footprints::{
    format_ingest_log, footprints_to_geojson, footprints_to_geojson_with, load_footprints, parse_footprints, ClassTag,
    Diagnostic, Footprint, FootprintSet, ParsedFootprints, TagMap,
};
pub use geometry::{clip_polygon_to_box, polygon_area, signed_ring_area, Point, Polygon, Rect};
pub(crate) use geometry::{edge_crossing, polygons_overlap};
pub use raster::{
    crs_sidecar_path, decode_png, encode_png, load_raster, read_crs_sidecar, save_raster, write_crs_sidecar, write_png,
    CrsSidecar, Raster,
};
pub use transform::{parse_world_file, GeoTransform};
