//! Building footprints from GeoJSON feature collections.
//!
//! Each feature is classified through a [`TagMap`] into residential,
//! non-residential or unknown. Malformed features are dropped with a
//! [`Diagnostic`] and never abort the rest of the document; a CRS that
//! disagrees with the sidecar is fatal.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use geojson::{Feature, FeatureCollection, GeoJson, Geometry, JsonObject, JsonValue, Value};
use serde::{Deserialize, Serialize};

use super::geometry::{Point, Polygon};
use super::raster::read_crs_sidecar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassTag {
    Residential,
    NonResidential,
    Unknown,
}

impl ClassTag {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassTag::Residential => "residential",
            ClassTag::NonResidential => "non_residential",
            ClassTag::Unknown => "unknown",
        }
    }

    /// Source tag written when serializing; maps back to the same class
    /// under the default [`TagMap`].
    fn canonical_source_tag(self) -> &'static str {
        match self {
            ClassTag::Residential => "residential",
            ClassTag::NonResidential => "commercial",
            ClassTag::Unknown => "yes",
        }
    }
}

impl fmt::Display for ClassTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Rules mapping a feature property value to a [`ClassTag`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagMap {
    /// Property consulted on every feature.
    pub key: String,
    pub residential: BTreeSet<String>,
    pub non_residential: BTreeSet<String>,
}

impl Default for TagMap {
    fn default() -> Self {
        let set = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
        Self {
            key: "building".into(),
            residential: set(&["residential", "house", "hut", "apartments", "detached"]),
            non_residential: set(&["church", "mosque", "school", "commercial", "retail", "industrial", "shed"]),
        }
    }
}

impl TagMap {
    pub fn classify(&self, properties: Option<&JsonObject>) -> ClassTag {
        let value = properties
            .and_then(|p| p.get(&self.key))
            .and_then(JsonValue::as_str)
            .map(|s| s.trim().to_ascii_lowercase());
        match value {
            Some(v) if self.residential.contains(&v) => ClassTag::Residential,
            Some(v) if self.non_residential.contains(&v) => ClassTag::NonResidential,
            _ => ClassTag::Unknown,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Footprint {
    pub id: String,
    pub polygon: Polygon,
    pub class_tag: ClassTag,
}

/// Tagged building polygons sharing one projected CRS; ids are unique.
#[derive(Debug, Clone, PartialEq)]
pub struct FootprintSet {
    footprints: Vec<Footprint>,
    crs_id: String,
}

impl FootprintSet {
    pub fn new(footprints: Vec<Footprint>, crs_id: impl Into<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for f in &footprints {
            if !seen.insert(f.id.as_str()) {
                return Err(Error::FootprintDocument(format!("duplicate footprint id {:?}", f.id)));
            }
        }
        Ok(Self {
            footprints,
            crs_id: crs_id.into(),
        })
    }

    pub fn empty(crs_id: impl Into<String>) -> Self {
        Self {
            footprints: Vec::new(),
            crs_id: crs_id.into(),
        }
    }

    pub fn footprints(&self) -> &[Footprint] {
        &self.footprints
    }

    pub fn crs_id(&self) -> &str {
        &self.crs_id
    }

    pub fn len(&self) -> usize {
        self.footprints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.footprints.is_empty()
    }

    pub fn residential(&self) -> impl Iterator<Item = &Footprint> {
        self.footprints.iter().filter(|f| f.class_tag == ClassTag::Residential)
    }

    pub fn count(&self, tag: ClassTag) -> usize {
        self.footprints.iter().filter(|f| f.class_tag == tag).count()
    }
}

/// A feature dropped during ingest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub feature_index: usize,
    pub id: Option<String>,
    pub reason: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "feature={} id={} reason={}",
            self.feature_index,
            self.id.as_deref().unwrap_or("-"),
            self.reason
        )
    }
}

#[derive(Debug, Clone)]
pub struct ParsedFootprints {
    pub set: FootprintSet,
    pub diagnostics: Vec<Diagnostic>,
}

fn declared_crs(members: Option<&JsonObject>) -> Option<String> {
    let crs = members?.get("crs")?;
    crs.get("properties")
        .and_then(|p| p.get("name"))
        .and_then(JsonValue::as_str)
        .map(str::to_owned)
        .or_else(|| crs.as_str().map(str::to_owned))
}

fn check_crs(found: Option<String>, expected: &str) -> Result<()> {
    match found {
        Some(found) if found != expected => Err(Error::MixedCrs {
            expected: expected.to_owned(),
            found,
        }),
        _ => Ok(()),
    }
}

fn feature_id(feature: &Feature, index: usize) -> String {
    match &feature.id {
        Some(geojson::feature::Id::String(s)) => s.clone(),
        Some(geojson::feature::Id::Number(n)) => n.to_string(),
        None => feature
            .property("id")
            .and_then(|v| v.as_str().map(str::to_owned).or_else(|| v.as_i64().map(|n| n.to_string())))
            .unwrap_or_else(|| format!("f{index}")),
    }
}

fn ring_from_positions(positions: &[Vec<f64>], which: &str) -> std::result::Result<Vec<Point>, String> {
    if positions.len() < 4 {
        return Err(format!("{which} ring has {} positions (need at least 4)", positions.len()));
    }
    let mut ring = Vec::with_capacity(positions.len());
    for p in positions {
        if p.len() < 2 {
            return Err(format!("{which} ring has a position with {} coordinates", p.len()));
        }
        ring.push(Point::new(p[0], p[1]));
    }
    if ring.first() != ring.last() {
        return Err(format!("{which} ring is not closed"));
    }
    Ok(ring)
}

fn polygon_from_rings(rings: &[Vec<Vec<f64>>]) -> std::result::Result<Polygon, String> {
    let (exterior, holes) = rings.split_first().ok_or("polygon has no rings")?;
    let exterior = ring_from_positions(exterior, "exterior")?;
    let holes = holes
        .iter()
        .enumerate()
        .map(|(i, h)| ring_from_positions(h, &format!("hole {i}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Polygon::new(exterior, holes).map_err(|e| match e {
        Error::InvalidGeometry(msg) => msg,
        other => other.to_string(),
    })
}

/// Parse a GeoJSON FeatureCollection into a [`FootprintSet`].
///
/// `crs_id` comes from the `<name>.crs.json` sidecar. A legacy `crs` member
/// on the collection or on any feature that names a different CRS is a fatal
/// [`Error::MixedCrs`]. Per-feature problems (bad geometry, open or
/// self-intersecting rings, zero area, duplicate ids, non-polygon types) drop
/// only that feature and are reported as diagnostics. Multi-polygons become
/// one footprint per part with ids `<id>-<part>`.
pub fn parse_footprints(document: &str, tag_map: &TagMap, crs_id: &str) -> Result<ParsedFootprints> {
    let root: JsonValue = serde_json::from_str(document)
        .map_err(|e| Error::FootprintDocument(format!("not JSON: {e}")))?;
    let obj = root
        .as_object()
        .ok_or_else(|| Error::FootprintDocument("top level is not an object".into()))?;
    if obj.get("type").and_then(JsonValue::as_str) != Some("FeatureCollection") {
        return Err(Error::FootprintDocument("expected a FeatureCollection".into()));
    }
    check_crs(declared_crs(Some(obj)), crs_id)?;
    let features = obj
        .get("features")
        .and_then(JsonValue::as_array)
        .ok_or_else(|| Error::FootprintDocument("missing features array".into()))?;

    let mut footprints = Vec::new();
    let mut diagnostics = Vec::new();
    let mut seen = HashSet::new();

    for (index, raw) in features.iter().enumerate() {
        if let Some(members) = raw.as_object() {
            check_crs(declared_crs(Some(members)), crs_id)?;
        }
        let mut reject = |id: Option<String>, reason: String| {
            diagnostics.push(Diagnostic {
                feature_index: index,
                id,
                reason,
            })
        };
        let feature = match Feature::from_json_value(raw.clone()) {
            Ok(f) => f,
            Err(e) => {
                reject(None, format!("malformed feature: {e}"));
                continue;
            }
        };
        let id = feature_id(&feature, index);
        let class_tag = tag_map.classify(feature.properties.as_ref());
        let parts: Vec<(String, &Vec<Vec<Vec<f64>>>)> = match feature.geometry.as_ref().map(|g| &g.value) {
            Some(Value::Polygon(rings)) => vec![(id.clone(), rings)],
            Some(Value::MultiPolygon(polys)) => polys
                .iter()
                .enumerate()
                .map(|(k, rings)| (format!("{id}-{k}"), rings))
                .collect(),
            Some(other) => {
                reject(Some(id), format!("unsupported geometry type {}", other.type_name()));
                continue;
            }
            None => {
                reject(Some(id), "missing geometry".into());
                continue;
            }
        };
        // All parts must be valid for the feature to be kept.
        let mut built = Vec::with_capacity(parts.len());
        let mut failure = None;
        for (part_id, rings) in parts {
            match polygon_from_rings(rings) {
                Ok(polygon) => built.push((part_id, polygon)),
                Err(reason) => {
                    failure = Some(reason);
                    break;
                }
            }
        }
        if let Some(reason) = failure {
            reject(Some(id), reason);
            continue;
        }
        if let Some((dup, _)) = built.iter().find(|(pid, _)| seen.contains(pid)) {
            reject(Some(id.clone()), format!("duplicate id {dup}"));
            continue;
        }
        for (part_id, polygon) in built {
            seen.insert(part_id.clone());
            footprints.push(Footprint {
                id: part_id,
                polygon,
                class_tag,
            });
        }
    }

    Ok(ParsedFootprints {
        set: FootprintSet::new(footprints, crs_id)?,
        diagnostics,
    })
}

fn ring_positions(ring: &[Point]) -> Vec<Vec<f64>> {
    ring.iter()
        .chain(ring.first())
        .map(|p| vec![p.x, p.y])
        .collect()
}

/// Serialize a footprint set as a GeoJSON FeatureCollection. Each feature
/// carries `id`, the tag-map key with a canonical source tag, and any extra
/// properties returned by `extra`.
pub fn footprints_to_geojson_with<F>(set: &FootprintSet, tag_key: &str, mut extra: F) -> String
where
    F: FnMut(usize, &Footprint) -> JsonObject,
{
    let features = set
        .footprints
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let mut rings = vec![ring_positions(f.polygon.exterior())];
            rings.extend(f.polygon.holes().iter().map(|h| ring_positions(h)));
            let mut props = JsonObject::new();
            props.insert(tag_key.into(), f.class_tag.canonical_source_tag().into());
            props.extend(extra(i, f));
            Feature {
                bbox: None,
                geometry: Some(Geometry::new(Value::Polygon(rings))),
                id: Some(geojson::feature::Id::String(f.id.clone())),
                properties: Some(props),
                foreign_members: None,
            }
        })
        .collect();
    GeoJson::FeatureCollection(FeatureCollection {
        bbox: None,
        features,
        foreign_members: None,
    })
    .to_string()
}

pub fn footprints_to_geojson(set: &FootprintSet) -> String {
    footprints_to_geojson_with(set, &TagMap::default().key, |_, _| JsonObject::new())
}

/// Read a GeoJSON file together with its `<name>.crs.json` sidecar.
pub fn load_footprints(path: &Path, tag_map: &TagMap) -> Result<ParsedFootprints> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let sidecar = read_crs_sidecar(path)?;
    parse_footprints(&text, tag_map, &sidecar.crs_id)
}

/// Line-oriented ingest report, one rejected feature per line.
pub fn format_ingest_log(diagnostics: &[Diagnostic]) -> String {
    diagnostics.iter().map(|d| format!("{d}\n")).collect()
}
