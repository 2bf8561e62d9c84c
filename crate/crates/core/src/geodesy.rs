//! GPS to planar conversion and position normalisation.
//!
//! Positions go through three steps before reaching the model: projection to
//! UTM on WGS-84, subtraction of the basestation's UTM coordinate, and a
//! per-axis min-max scaling whose statistics are fitted on training data.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const WGS84_A: f64 = 6_378_137.0;
const WGS84_F: f64 = 1.0 / 298.257_223_563;
const UTM_K0: f64 = 0.9996;
const FALSE_EASTING: f64 = 500_000.0;
const FALSE_NORTHING_SOUTH: f64 = 10_000_000.0;

/// Latitude/longitude in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPosition {
    pub latitude: f64,
    pub longitude: f64,
}

impl GeoPosition {
    pub fn new(latitude: f64, longitude: f64) -> Result<Self> {
        let pos = Self {
            latitude,
            longitude,
        };
        pos.validate()?;
        Ok(pos)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.latitude.abs() <= 90.0) {
            return Err(Error::Domain(format!(
                "latitude {} outside [-90, 90]",
                self.latitude
            )));
        }
        if !(self.longitude.abs() <= 180.0) {
            return Err(Error::Domain(format!(
                "longitude {} outside [-180, 180]",
                self.longitude
            )));
        }
        Ok(())
    }

    /// Moves the position by a small local east/north displacement in metres,
    /// using the ellipsoid's radii of curvature at this latitude.
    pub fn offset(&self, east: f64, north: f64) -> Self {
        let phi = self.latitude.to_radians();
        let e2 = WGS84_F * (2.0 - WGS84_F);
        let w = (1.0 - e2 * phi.sin().powi(2)).sqrt();
        let meridional = WGS84_A * (1.0 - e2) / (w * w * w);
        let prime_vertical = WGS84_A / w;
        Self {
            latitude: self.latitude + (north / meridional).to_degrees(),
            longitude: self.longitude + (east / (prime_vertical * phi.cos())).to_degrees(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hemisphere {
    North,
    South,
}

impl Hemisphere {
    fn as_str(self) -> &'static str {
        match self {
            Hemisphere::North => "N",
            Hemisphere::South => "S",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "N" => Some(Hemisphere::North),
            "S" => Some(Hemisphere::South),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtmCoordinate {
    pub easting: f64,
    pub northing: f64,
    pub zone: u8,
    pub hemisphere: Hemisphere,
}

/// Standard UTM zone for a position, including the Norway and Svalbard
/// exceptions.
pub fn utm_zone(pos: &GeoPosition) -> u8 {
    let (lat, lon) = (pos.latitude, pos.longitude);
    if (56.0..64.0).contains(&lat) && (3.0..12.0).contains(&lon) {
        return 32;
    }
    if (72.0..=84.0).contains(&lat) && lon >= 0.0 && lon < 42.0 {
        return match lon {
            l if l < 9.0 => 31,
            l if l < 21.0 => 33,
            l if l < 33.0 => 35,
            _ => 37,
        };
    }
    let zone = ((lon + 180.0) / 6.0).floor() as i64 + 1;
    zone.clamp(1, 60) as u8
}

/// Longitude of the central meridian of `zone`, in degrees.
pub fn central_meridian(zone: u8) -> f64 {
    f64::from(zone) * 6.0 - 183.0
}

/// Krüger series coefficients to fourth order in the third flattening.
struct KruegerSeries {
    rectifying_radius: f64,
    alpha: [f64; 4],
    eccentricity: f64,
}

impl KruegerSeries {
    fn wgs84() -> Self {
        let n = WGS84_F / (2.0 - WGS84_F);
        let (n2, n3, n4) = (n * n, n * n * n, n * n * n * n);
        Self {
            rectifying_radius: WGS84_A / (1.0 + n) * (1.0 + n2 / 4.0 + n4 / 64.0),
            alpha: [
                n / 2.0 - 2.0 * n2 / 3.0 + 5.0 * n3 / 16.0 + 41.0 * n4 / 180.0,
                13.0 * n2 / 48.0 - 3.0 * n3 / 5.0 + 557.0 * n4 / 1440.0,
                61.0 * n3 / 240.0 - 103.0 * n4 / 140.0,
                49561.0 * n4 / 161_280.0,
            ],
            eccentricity: (WGS84_F * (2.0 - WGS84_F)).sqrt(),
        }
    }
}

/// Transverse Mercator projection on WGS-84 into the position's standard
/// UTM zone (scale 0.9996, false easting 500 km, false northing 10 000 km in
/// the southern hemisphere).
pub fn latlon_to_utm(pos: &GeoPosition) -> Result<UtmCoordinate> {
    pos.validate()?;
    let zone = utm_zone(pos);
    latlon_to_utm_zone(pos, zone)
}

/// Projects into an explicit zone. Only valid close to that zone.
pub fn latlon_to_utm_zone(pos: &GeoPosition, zone: u8) -> Result<UtmCoordinate> {
    pos.validate()?;
    if !(-80.0..=84.0).contains(&pos.latitude) {
        return Err(Error::Domain(format!(
            "latitude {} outside the UTM band [-80, 84]",
            pos.latitude
        )));
    }
    if !(1..=60).contains(&zone) {
        return Err(Error::Domain(format!("UTM zone {zone} outside 1..=60")));
    }
    let series = KruegerSeries::wgs84();
    let e = series.eccentricity;
    let phi = pos.latitude.to_radians();
    let mut dlon = pos.longitude - central_meridian(zone);
    if dlon > 180.0 {
        dlon -= 360.0;
    } else if dlon < -180.0 {
        dlon += 360.0;
    }
    let lambda = dlon.to_radians();

    let sin_phi = phi.sin();
    let t = (sin_phi.atanh() - e * (e * sin_phi).atanh()).sinh();
    let xi_prime = t.atan2(lambda.cos());
    let eta_prime = (lambda.sin() / (1.0 + t * t).sqrt()).atanh();

    let mut xi = xi_prime;
    let mut eta = eta_prime;
    for (j, alpha) in series.alpha.iter().enumerate() {
        let two_j = 2.0 * (j as f64 + 1.0);
        xi += alpha * (two_j * xi_prime).sin() * (two_j * eta_prime).cosh();
        eta += alpha * (two_j * xi_prime).cos() * (two_j * eta_prime).sinh();
    }

    let hemisphere = if pos.latitude < 0.0 {
        Hemisphere::South
    } else {
        Hemisphere::North
    };
    let false_northing = match hemisphere {
        Hemisphere::North => 0.0,
        Hemisphere::South => FALSE_NORTHING_SOUTH,
    };
    let scale = UTM_K0 * series.rectifying_radius;
    Ok(UtmCoordinate {
        easting: FALSE_EASTING + scale * eta,
        northing: false_northing + scale * xi,
        zone,
        hemisphere,
    })
}

/// Planar offset of `user` from `bs` in metres (east, north).
pub fn relative_position(user: &UtmCoordinate, bs: &UtmCoordinate) -> Result<[f64; 2]> {
    if user.zone != bs.zone || user.hemisphere != bs.hemisphere {
        return Err(Error::Domain(format!(
            "user in zone {}{} but basestation in zone {}{}; scenario spans a zone boundary",
            user.zone,
            user.hemisphere.as_str(),
            bs.zone,
            bs.hemisphere.as_str()
        )));
    }
    Ok([user.easting - bs.easting, user.northing - bs.northing])
}

/// Per-axis min/max of BS-relative positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

pub fn fit_minmax(positions: &[[f64; 2]]) -> Result<NormalizationStats> {
    let (first, rest) = positions
        .split_first()
        .ok_or_else(|| Error::Domain("cannot fit normalisation on an empty set".into()))?;
    let mut stats = NormalizationStats {
        min: *first,
        max: *first,
    };
    for p in rest {
        for axis in 0..2 {
            stats.min[axis] = stats.min[axis].min(p[axis]);
            stats.max[axis] = stats.max[axis].max(p[axis]);
        }
    }
    Ok(stats)
}

/// `(x - min) / (max - min)` per axis. Positions outside the fitted range
/// map outside `[0, 1]`; a constant axis maps to 0.5.
pub fn apply_minmax(pos: [f64; 2], stats: &NormalizationStats) -> [f64; 2] {
    let mut out = [0.0; 2];
    for axis in 0..2 {
        let range = stats.max[axis] - stats.min[axis];
        out[axis] = if range > 0.0 {
            (pos[axis] - stats.min[axis]) / range
        } else {
            0.5
        };
    }
    out
}

/// Everything needed to turn a GPS fix into a model input: the fitted
/// statistics, the UTM zone shared by all scenarios and each scenario's
/// basestation coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionNormalizer {
    pub stats: NormalizationStats,
    pub zone: u8,
    pub hemisphere: Hemisphere,
    pub basestations: BTreeMap<u32, UtmCoordinate>,
}

impl PositionNormalizer {
    /// Fits min/max statistics on the BS-relative positions of `fixes`.
    /// Every fix's scenario must appear in `basestations`; the first
    /// basestation fixes the zone.
    pub fn fit(basestations: &[(u32, GeoPosition)], fixes: &[(u32, GeoPosition)]) -> Result<Self> {
        let (_, first) = basestations
            .first()
            .ok_or_else(|| Error::Contract("normaliser needs at least one basestation".into()))?;
        let origin = latlon_to_utm(first)?;
        let mut norm = Self {
            stats: NormalizationStats {
                min: [0.0; 2],
                max: [0.0; 2],
            },
            zone: origin.zone,
            hemisphere: origin.hemisphere,
            basestations: BTreeMap::new(),
        };
        for (id, bs) in basestations {
            norm.register_basestation(*id, bs)?;
        }
        let relative = fixes
            .iter()
            .map(|(id, pos)| norm.relative(*id, pos))
            .collect::<Result<Vec<_>>>()?;
        norm.stats = fit_minmax(&relative)?;
        Ok(norm)
    }

    pub fn basestation(&self, scenario_id: u32) -> Result<&UtmCoordinate> {
        self.basestations.get(&scenario_id).ok_or_else(|| {
            Error::Contract(format!("no basestation reference for scenario {scenario_id}"))
        })
    }

    /// Adds (or checks) a basestation reference. A differing coordinate for a
    /// known scenario or a foreign zone is a mismatch.
    pub fn register_basestation(&mut self, scenario_id: u32, bs: &GeoPosition) -> Result<()> {
        let utm = latlon_to_utm(bs)?;
        if utm.zone != self.zone || utm.hemisphere != self.hemisphere {
            return Err(Error::Contract(format!(
                "scenario {scenario_id} lies in UTM zone {}{}, normaliser was fitted in {}{}",
                utm.zone,
                utm.hemisphere.as_str(),
                self.zone,
                self.hemisphere.as_str()
            )));
        }
        match self.basestations.get(&scenario_id) {
            Some(known) if known != &utm => Err(Error::Contract(format!(
                "basestation of scenario {scenario_id} does not match the fitted reference"
            ))),
            Some(_) => Ok(()),
            None => {
                self.basestations.insert(scenario_id, utm);
                Ok(())
            }
        }
    }

    /// BS-relative planar position of a GPS fix.
    pub fn relative(&self, scenario_id: u32, pos: &GeoPosition) -> Result<[f64; 2]> {
        let bs = self.basestation(scenario_id)?;
        relative_position(&latlon_to_utm(pos)?, bs)
    }

    pub fn normalize(&self, scenario_id: u32, pos: &GeoPosition) -> Result<[f64; 2]> {
        Ok(apply_minmax(self.relative(scenario_id, pos)?, &self.stats))
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::from("# beampred normalization v1\n");
        let _ = writeln!(out, "min_x = {:?}", self.stats.min[0]);
        let _ = writeln!(out, "max_x = {:?}", self.stats.max[0]);
        let _ = writeln!(out, "min_y = {:?}", self.stats.min[1]);
        let _ = writeln!(out, "max_y = {:?}", self.stats.max[1]);
        let _ = writeln!(out, "zone = {}", self.zone);
        let _ = writeln!(out, "hemisphere = {}", self.hemisphere.as_str());
        for (id, bs) in &self.basestations {
            let _ = writeln!(out, "bs.{id} = {:?} {:?}", bs.easting, bs.northing);
        }
        out
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut values: BTreeMap<&str, &str> = BTreeMap::new();
        let mut basestations = BTreeMap::new();
        for (row, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                row: row + 1,
                column: "key".into(),
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(id) = key.strip_prefix("bs.") {
                basestations.insert((row + 1, id), value);
            } else {
                values.insert(key, value);
            }
        }
        let float = |key: &str| -> Result<f64> {
            let raw = values.get(key).ok_or_else(|| Error::Parse {
                row: 0,
                column: key.into(),
                message: "missing key".into(),
            })?;
            raw.parse().map_err(|_| Error::Parse {
                row: 0,
                column: key.into(),
                message: format!("not a number: `{raw}`"),
            })
        };
        let zone: u8 = values
            .get("zone")
            .and_then(|z| z.parse().ok())
            .filter(|z| (1..=60).contains(z))
            .ok_or_else(|| Error::Parse {
                row: 0,
                column: "zone".into(),
                message: "missing or invalid UTM zone".into(),
            })?;
        let hemisphere = values
            .get("hemisphere")
            .and_then(|h| Hemisphere::parse(h))
            .ok_or_else(|| Error::Parse {
                row: 0,
                column: "hemisphere".into(),
                message: "expected N or S".into(),
            })?;
        let mut refs = BTreeMap::new();
        for ((row, id), value) in basestations {
            let bad = |message: String| Error::Parse {
                row,
                column: format!("bs.{id}"),
                message,
            };
            let scenario: u32 = id.parse().map_err(|_| bad("invalid scenario id".into()))?;
            let mut parts = value.split_whitespace().map(str::parse::<f64>);
            let (Some(Ok(easting)), Some(Ok(northing)), None) =
                (parts.next(), parts.next(), parts.next())
            else {
                return Err(bad(format!("expected `easting northing`, got `{value}`")));
            };
            refs.insert(
                scenario,
                UtmCoordinate {
                    easting,
                    northing,
                    zone,
                    hemisphere,
                },
            );
        }
        let stats = NormalizationStats {
            min: [float("min_x")?, float("min_y")?],
            max: [float("max_x")?, float("max_y")?],
        };
        if !(stats.max[0] >= stats.min[0] && stats.max[1] >= stats.min[1]) {
            return Err(Error::Contract("normalisation max below min".into()));
        }
        Ok(Self {
            stats,
            zone,
            hemisphere,
            basestations: refs,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_kv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv(&text)
    }
}
