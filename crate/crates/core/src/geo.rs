//! Continent assignment for images.
//!
//! A [`RegionTable`] is an ordered list of continent polygons in lon/lat
//! degrees. Lookup returns the first continent, in table order, whose polygon
//! contains the point under the even-odd rule. The built-in table lists
//! Europe before Asia, so points in overlapping border areas resolve to
//! Europe. Users near continent boundaries should supply their own table.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("coordinates out of range: lat {lat}, lon {lon}")]
    OutOfRange { lat: f64, lon: f64 },
    #[error("unknown continent {0:?}")]
    UnknownContinent(String),
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("{path}: duplicate image_id {image_id:?}")]
    DuplicateImage { path: PathBuf, image_id: String },
    #[error("region table: {0}")]
    Regions(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Continent {
    Europe,
    Africa,
    NorthAmerica,
    SouthAmerica,
    Asia,
    Oceania,
    Unknown,
}

impl Continent {
    /// The six continents under study, in report column order.
    pub const ALL: [Continent; 6] = [
        Continent::Europe,
        Continent::Africa,
        Continent::NorthAmerica,
        Continent::SouthAmerica,
        Continent::Asia,
        Continent::Oceania,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Continent::Europe => "Europe",
            Continent::Africa => "Africa",
            Continent::NorthAmerica => "NorthAmerica",
            Continent::SouthAmerica => "SouthAmerica",
            Continent::Asia => "Asia",
            Continent::Oceania => "Oceania",
            Continent::Unknown => "Unknown",
        }
    }

    /// Short column heading used in rendered tables.
    pub fn heading(self) -> &'static str {
        match self {
            Continent::NorthAmerica => "N. America",
            Continent::SouthAmerica => "S. America",
            other => other.name(),
        }
    }

    pub fn index(self) -> Option<usize> {
        Continent::ALL.iter().position(|&c| c == self)
    }
}

impl fmt::Display for Continent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Continent {
    type Err = GeoError;

    /// Accepts the canonical names plus spaced and abbreviated American forms.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Ok(match key.as_str() {
            "europe" => Continent::Europe,
            "africa" => Continent::Africa,
            "northamerica" | "namerica" => Continent::NorthAmerica,
            "southamerica" | "samerica" => Continent::SouthAmerica,
            "asia" => Continent::Asia,
            "oceania" => Continent::Oceania,
            "unknown" => Continent::Unknown,
            _ => return Err(GeoError::UnknownContinent(s.to_owned())),
        })
    }
}

/// One polygon: outer ring followed by any holes, each ring as (lon, lat).
pub type Polygon = Vec<Vec<(f64, f64)>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub continent: Continent,
    pub polygons: Vec<Polygon>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionTable {
    pub id: String,
    pub regions: Vec<Region>,
}

const BUILTIN_REGIONS: &str = include_str!("../assets/regions_coarse_v1.geojson");

impl RegionTable {
    /// Hand-drawn coarse continent outlines, good for city-scale points well
    /// away from continent borders.
    pub fn builtin() -> Self {
        Self::from_geojson(BUILTIN_REGIONS).expect("built-in region table parses")
    }

    pub fn load(path: &Path) -> Result<Self, GeoError> {
        let text = std::fs::read_to_string(path).map_err(|source| GeoError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_geojson(&text)
    }

    /// Parses a feature collection whose features carry a `continent`
    /// property and `Polygon`/`MultiPolygon` geometry. Feature order is
    /// priority order.
    pub fn from_geojson(text: &str) -> Result<Self, GeoError> {
        let doc: Value =
            serde_json::from_str(text).map_err(|e| GeoError::Regions(e.to_string()))?;
        if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
            return Err(GeoError::Regions("expected a FeatureCollection".into()));
        }
        let id = doc
            .get("name")
            .and_then(Value::as_str)
            .unwrap_or("custom")
            .to_owned();
        let features = doc
            .get("features")
            .and_then(Value::as_array)
            .ok_or_else(|| GeoError::Regions("missing features array".into()))?;
        let mut regions = Vec::with_capacity(features.len());
        for (i, feat) in features.iter().enumerate() {
            let continent = feat
                .pointer("/properties/continent")
                .and_then(Value::as_str)
                .ok_or_else(|| GeoError::Regions(format!("feature {i}: no continent property")))?
                .parse::<Continent>()?;
            if continent == Continent::Unknown {
                return Err(GeoError::Regions(format!("feature {i}: continent Unknown")));
            }
            let geom = feat
                .get("geometry")
                .ok_or_else(|| GeoError::Regions(format!("feature {i}: no geometry")))?;
            let coords = geom.get("coordinates");
            let polygons = match (geom.get("type").and_then(Value::as_str), coords) {
                (Some("Polygon"), Some(c)) => vec![parse_polygon(c, i)?],
                (Some("MultiPolygon"), Some(Value::Array(ps))) => ps
                    .iter()
                    .map(|p| parse_polygon(p, i))
                    .collect::<Result<_, _>>()?,
                _ => {
                    return Err(GeoError::Regions(format!(
                        "feature {i}: geometry must be Polygon or MultiPolygon"
                    )))
                }
            };
            regions.push(Region {
                continent,
                polygons,
            });
        }
        Ok(Self { id, regions })
    }
}

fn parse_polygon(v: &Value, feature: usize) -> Result<Polygon, GeoError> {
    let bad = || GeoError::Regions(format!("feature {feature}: malformed polygon coordinates"));
    let rings = v.as_array().ok_or_else(bad)?;
    let mut out = Vec::with_capacity(rings.len());
    for ring in rings {
        let pts = ring
            .as_array()
            .ok_or_else(bad)?
            .iter()
            .map(|p| match p.as_array().map(|a| a.as_slice()) {
                Some([lon, lat, ..]) => {
                    Ok((lon.as_f64().ok_or_else(bad)?, lat.as_f64().ok_or_else(bad)?))
                }
                _ => Err(bad()),
            })
            .collect::<Result<Vec<_>, _>>()?;
        if pts.len() < 3 {
            return Err(bad());
        }
        out.push(pts);
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

/// Even-odd crossing test against every ring of the polygon.
fn polygon_contains(poly: &Polygon, lon: f64, lat: f64) -> bool {
    let mut inside = false;
    for ring in poly {
        let n = ring.len();
        let mut j = n - 1;
        for i in 0..n {
            let (xi, yi) = ring[i];
            let (xj, yj) = ring[j];
            if (yi > lat) != (yj > lat) {
                let x_cross = xj + (lat - yj) * (xi - xj) / (yi - yj);
                if lon < x_cross {
                    inside = !inside;
                }
            }
            j = i;
        }
    }
    inside
}

pub fn assign_continent(lat: f64, lon: f64, table: &RegionTable) -> Result<Continent, GeoError> {
    if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
        return Err(GeoError::OutOfRange { lat, lon });
    }
    Ok(table
        .regions
        .iter()
        .find(|r| r.polygons.iter().any(|p| polygon_contains(p, lon, lat)))
        .map_or(Continent::Unknown, |r| r.continent))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoTag {
    pub image_id: String,
    pub latitude: Option<f64>,
    pub longitude: Option<f64>,
    pub continent: Continent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeoMode {
    #[default]
    Explicit,
    Latlon,
}

impl FromStr for GeoMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "explicit" => Ok(GeoMode::Explicit),
            "latlon" => Ok(GeoMode::Latlon),
            other => Err(format!(
                "unknown geo mode {other:?} (expected explicit|latlon)"
            )),
        }
    }
}

/// Geo tags that resolved to a continent, plus the ones that did not.
#[derive(Debug, Clone, Default)]
pub struct GeoIndex {
    tags: BTreeMap<String, GeoTag>,
    pub unresolved: Vec<String>,
}

impl GeoIndex {
    pub fn continent_of(&self, image_id: &str) -> Option<Continent> {
        self.tags.get(image_id).map(|t| t.continent)
    }

    pub fn tags(&self) -> impl Iterator<Item = &GeoTag> {
        self.tags.values()
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn from_tags(tags: impl IntoIterator<Item = GeoTag>) -> Self {
        let mut index = GeoIndex::default();
        for t in tags {
            if t.continent == Continent::Unknown {
                index.unresolved.push(t.image_id);
            } else {
                index.tags.insert(t.image_id.clone(), t);
            }
        }
        index
    }
}

#[derive(Deserialize)]
struct ExplicitRow {
    image_id: String,
    continent: String,
}

#[derive(Deserialize)]
struct LatLonRow {
    image_id: String,
    latitude: f64,
    longitude: f64,
}

/// Reads a geo CSV. Images resolving to `Unknown` land in
/// [`GeoIndex::unresolved`] rather than failing the load.
pub fn load_geo(path: &Path, mode: GeoMode, table: &RegionTable) -> Result<GeoIndex, GeoError> {
    let csv_err = |message: String| GeoError::Csv {
        path: path.to_owned(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(e.to_string()))?;
    let expected: &[&str] = match mode {
        GeoMode::Explicit => &["image_id", "continent"],
        GeoMode::Latlon => &["image_id", "latitude", "longitude"],
    };
    let headers = reader
        .headers()
        .map_err(|e| csv_err(e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(csv_err(format!(
            "expected header {}, got {}",
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut tags = Vec::new();
    match mode {
        GeoMode::Explicit => {
            for row in reader.deserialize::<ExplicitRow>() {
                let row = row.map_err(|e| csv_err(e.to_string()))?;
                tags.push(GeoTag {
                    continent: row.continent.parse()?,
                    image_id: row.image_id,
                    latitude: None,
                    longitude: None,
                });
            }
        }
        GeoMode::Latlon => {
            for row in reader.deserialize::<LatLonRow>() {
                let row = row.map_err(|e| csv_err(e.to_string()))?;
                tags.push(GeoTag {
                    continent: assign_continent(row.latitude, row.longitude, table)?,
                    image_id: row.image_id,
                    latitude: Some(row.latitude),
                    longitude: Some(row.longitude),
                });
            }
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    for t in &tags {
        if !seen.insert(t.image_id.as_str()) {
            return Err(GeoError::DuplicateImage {
                path: path.to_owned(),
                image_id: t.image_id.clone(),
            });
        }
    }
    Ok(GeoIndex::from_tags(tags))
}
