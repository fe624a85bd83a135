use std::path::Path;

use serde_json::{json, Map, Value};

use super::{read_to_string, write_file_atomic, FormatError};
use crate::geo::{Point2, Polyline};

/// Properties recognized on line features. Everything else is ignored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LineProperties {
    pub id: Option<i64>,
    pub boundary: Option<f64>,
    pub node_a: Option<u64>,
    pub node_b: Option<u64>,
    pub category: Option<String>,
    pub kind: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineFeature {
    pub polyline: Polyline,
    pub properties: LineProperties,
}

impl LineFeature {
    pub fn new(polyline: Polyline) -> Self {
        Self {
            polyline,
            properties: LineProperties::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LineCollection {
    pub features: Vec<LineFeature>,
    /// Features skipped because their geometry was not a LineString.
    pub skipped: usize,
    /// Set when every coordinate looks like lon/lat degrees.
    pub geographic_warning: bool,
}

impl LineCollection {
    pub fn polylines(&self) -> Vec<Polyline> {
        self.features.iter().map(|f| f.polyline.clone()).collect()
    }
}

pub fn read_lines(path: &Path) -> Result<LineCollection, FormatError> {
    let text = read_to_string(path)?;
    let lines = lines_from_str(&text)?;
    if lines.skipped > 0 {
        log::warn!(
            "{}: skipped {} non-LineString feature(s)",
            path.display(),
            lines.skipped
        );
    }
    if lines.geographic_warning {
        log::warn!(
            "{}: coordinates look geographic; projected meters are expected",
            path.display()
        );
    }
    Ok(lines)
}

pub fn write_lines(path: &Path, features: &[LineFeature]) -> Result<(), FormatError> {
    write_file_atomic(path, lines_to_string(features).as_bytes())
}

pub fn lines_from_str(text: &str) -> Result<LineCollection, FormatError> {
    let root: Value =
        serde_json::from_str(text).map_err(|e| FormatError::InvalidGeoJson(e.to_string()))?;
    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(FormatError::InvalidGeoJson(
            "top-level object must be a FeatureCollection".into(),
        ));
    }
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| FormatError::InvalidGeoJson("missing features array".into()))?;

    let mut out = LineCollection::default();
    let mut all_geographic = true;
    for (index, feature) in features.iter().enumerate() {
        let geometry = feature.get("geometry").unwrap_or(&Value::Null);
        if geometry.get("type").and_then(Value::as_str) != Some("LineString") {
            out.skipped += 1;
            continue;
        }
        let polyline = parse_linestring(geometry, index)?;
        all_geographic &= polyline
            .vertices()
            .iter()
            .all(|p| p.x.abs() <= 180.0 && p.y.abs() <= 90.0);
        let properties = match feature.get("properties") {
            None | Some(Value::Null) => LineProperties::default(),
            Some(Value::Object(map)) => parse_properties(map, index)?,
            Some(_) => {
                return Err(FormatError::InvalidGeoJson(format!(
                    "feature {index}: properties must be an object"
                )))
            }
        };
        out.features.push(LineFeature {
            polyline,
            properties,
        });
    }
    out.geographic_warning = !out.features.is_empty() && all_geographic;
    Ok(out)
}

fn parse_linestring(geometry: &Value, index: usize) -> Result<Polyline, FormatError> {
    let bad = |m: String| FormatError::InvalidGeoJson(format!("feature {index}: {m}"));
    let coords = geometry
        .get("coordinates")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("LineString without coordinates".into()))?;
    let mut vertices = Vec::with_capacity(coords.len());
    for c in coords {
        let pair = c
            .as_array()
            .filter(|a| a.len() >= 2)
            .and_then(|a| Some(Point2::new(a[0].as_f64()?, a[1].as_f64()?)))
            .ok_or_else(|| bad(format!("invalid position {c}")))?;
        vertices.push(pair);
    }
    Polyline::from_vertices(vertices).map_err(|e| bad(e.to_string()))
}

/// Parses a bare GeoJSON LineString geometry object.
pub fn linestring_from_value(geometry: &Value) -> Result<Polyline, FormatError> {
    if geometry.get("type").and_then(Value::as_str) != Some("LineString") {
        return Err(FormatError::InvalidGeoJson(
            "geometry must be a LineString".into(),
        ));
    }
    parse_linestring(geometry, 0)
}

pub fn linestring_to_value(l: &Polyline) -> Value {
    let coords: Vec<Value> = l.vertices().iter().map(|p| json!([p.x, p.y])).collect();
    json!({ "type": "LineString", "coordinates": coords })
}

fn parse_properties(map: &Map<String, Value>, index: usize) -> Result<LineProperties, FormatError> {
    let bad = |key: &str, v: &Value| {
        FormatError::InvalidGeoJson(format!("feature {index}: invalid {key} property {v}"))
    };
    let mut props = LineProperties::default();
    if let Some(v) = map.get("boundary").filter(|v| !v.is_null()) {
        let value = v.as_f64().ok_or_else(|| bad("boundary", v))?;
        if !(0.0..=1.0).contains(&value) {
            return Err(FormatError::InvalidLikelihood { index, value });
        }
        props.boundary = Some(value);
    }
    if let Some(v) = map.get("id").filter(|v| !v.is_null()) {
        props.id = Some(v.as_i64().ok_or_else(|| bad("id", v))?);
    }
    for (key, slot) in [("node_a", &mut props.node_a), ("node_b", &mut props.node_b)] {
        if let Some(v) = map.get(key).filter(|v| !v.is_null()) {
            *slot = Some(v.as_u64().ok_or_else(|| bad(key, v))?);
        }
    }
    for (key, slot) in [("category", &mut props.category), ("kind", &mut props.kind)] {
        if let Some(v) = map.get(key).filter(|v| !v.is_null()) {
            *slot = Some(v.as_str().ok_or_else(|| bad(key, v))?.to_string());
        }
    }
    Ok(props)
}

fn properties_value(p: &LineProperties) -> Value {
    let mut map = Map::new();
    if let Some(id) = p.id {
        map.insert("id".into(), json!(id));
    }
    if let Some(b) = p.boundary {
        map.insert("boundary".into(), json!(b));
    }
    if let Some(a) = p.node_a {
        map.insert("node_a".into(), json!(a));
    }
    if let Some(b) = p.node_b {
        map.insert("node_b".into(), json!(b));
    }
    if let Some(c) = &p.category {
        map.insert("category".into(), json!(c));
    }
    if let Some(k) = &p.kind {
        map.insert("kind".into(), json!(k));
    }
    Value::Object(map)
}

/// Serializes a FeatureCollection with one feature per line. Output is
/// deterministic for identical input.
pub fn lines_to_string(features: &[LineFeature]) -> String {
    let mut out = String::from("{\"type\":\"FeatureCollection\",\"features\":[");
    for (i, f) in features.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push('\n');
        let feature = json!({
            "type": "Feature",
            "properties": properties_value(&f.properties),
            "geometry": linestring_to_value(&f.polyline),
        });
        out.push_str(&feature.to_string());
    }
    out.push_str("\n]}\n");
    out
}
