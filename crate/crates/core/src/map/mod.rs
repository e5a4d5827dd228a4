//! Map geo-referencing from margin tick labels with a linear model per axis.

use std::sync::LazyLock;

use chrono::{DateTime, SecondsFormat, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::MapConfig;
use crate::csvout;
use crate::document::{PageContent, UserId};
use crate::table::Region;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Longitude,
    Latitude,
}

impl Axis {
    pub fn limit(self) -> f64 {
        match self {
            Axis::Longitude => 180.0,
            Axis::Latitude => 90.0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("cannot read coordinate label {0:?}")]
    UnparsableLabel(String),
    #[error("need at least two {0:?} ticks")]
    InsufficientTicks(Axis),
    #[error("{0:?} ticks need two distinct pixel positions")]
    DegenerateTicks(Axis),
    #[error("pixel lies outside the map region")]
    PixelOutsideRegion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisTick {
    pub axis: Axis,
    /// x for longitude ticks, y for latitude ticks.
    pub pixel: f64,
    pub degrees: f64,
    pub label_text: String,
}

static LABEL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r#"^([+-]?)(\d+(?:\.\d+)?)\s*(?:[°º]\s*(?:(\d+(?:\.\d+)?)\s*['′]\s*(?:(\d+(?:\.\d+)?)\s*(?:["″]|'')\s*)?)?)?([NSEWnsew])$"#,
    )
    .unwrap()
});

/// Parse labels like `40°N`, `120.5°W` or `40°30′15″S`. The hemisphere letter
/// is required; it fixes the axis and makes S and W negative.
pub fn parse_coordinate_label(text: &str) -> Result<(Axis, f64), MapError> {
    let bad = || MapError::UnparsableLabel(text.to_string());
    let caps = LABEL.captures(text.trim()).ok_or_else(bad)?;
    let num = |i: usize| caps.get(i).map_or(Ok(0.0), |m| m.as_str().parse::<f64>().map_err(|_| bad()));
    let (deg, min, sec) = (num(2)?, num(3)?, num(4)?);
    if min >= 60.0 || sec >= 60.0 {
        return Err(bad());
    }
    let (axis, hemi) = match caps[5].to_ascii_uppercase().as_str() {
        "N" => (Axis::Latitude, 1.0),
        "S" => (Axis::Latitude, -1.0),
        "E" => (Axis::Longitude, 1.0),
        _ => (Axis::Longitude, -1.0),
    };
    let sign = if &caps[1] == "-" { -1.0 } else { 1.0 };
    let value = sign * hemi * (deg + min / 60.0 + sec / 3600.0);
    if value.abs() > axis.limit() {
        return Err(bad());
    }
    Ok((axis, value))
}

/// Canonical `D°H` label for a signed coordinate.
pub fn format_label(axis: Axis, degrees: f64) -> String {
    let h = match (axis, degrees < 0.0) {
        (Axis::Latitude, false) => 'N',
        (Axis::Latitude, true) => 'S',
        (Axis::Longitude, false) => 'E',
        (Axis::Longitude, true) => 'W',
    };
    format!("{}°{h}", degrees.abs())
}

/// Tick labels in the bands just outside the region: longitude labels above
/// and below, latitude labels left and right. Each band is
/// `margin_band_frac` of the region extent perpendicular to its edge. The
/// label's hemisphere letter must match the band's axis.
pub fn detect_ticks(page: &PageContent, region: &Region, cfg: &MapConfig) -> Vec<AxisTick> {
    let b = region.bbox;
    let bw = cfg.margin_band_frac * b.width();
    let bh = cfg.margin_band_frac * b.height();
    let mut ticks = Vec::new();
    for tb in page.reading_order() {
        let (cx, cy) = tb.bbox.center();
        // Bands run past the corners so labels at the frame edges count.
        let in_x = cx >= b.x0 - bw && cx <= b.x1 + bw;
        let in_y = cy >= b.y0 - bh && cy <= b.y1 + bh;
        let horizontal_band = in_x && ((cy < b.y0 && cy >= b.y0 - bh) || (cy > b.y1 && cy <= b.y1 + bh));
        let vertical_band = in_y && ((cx < b.x0 && cx >= b.x0 - bw) || (cx > b.x1 && cx <= b.x1 + bw));
        let Ok((axis, degrees)) = parse_coordinate_label(&tb.text) else { continue };
        let pixel = match axis {
            Axis::Longitude if horizontal_band => cx,
            Axis::Latitude if vertical_band => cy,
            _ => continue,
        };
        ticks.push(AxisTick { axis, pixel, degrees, label_text: tb.text });
    }
    ticks
}

/// `degrees = slope * pixel + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearMap {
    pub slope: f64,
    pub intercept: f64,
}

impl LinearMap {
    pub fn apply(&self, pixel: f64) -> f64 {
        self.slope * pixel + self.intercept
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisResidual {
    pub longitude: f64,
    pub latitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapCalibration {
    pub region: Region,
    pub lon_map: LinearMap,
    pub lat_map: LinearMap,
    pub ticks: Vec<AxisTick>,
    pub rms_residual_deg: AxisResidual,
}

fn fit(axis: Axis, ticks: &[AxisTick]) -> Result<(LinearMap, f64), MapError> {
    let pts: Vec<(f64, f64)> = ticks.iter().filter(|t| t.axis == axis).map(|t| (t.pixel, t.degrees)).collect();
    if pts.len() < 2 {
        return Err(MapError::InsufficientTicks(axis));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(MapError::DegenerateTicks(axis));
    }
    let slope = sxy / sxx;
    if slope == 0.0 || !slope.is_finite() {
        return Err(MapError::DegenerateTicks(axis));
    }
    let map = LinearMap { slope, intercept: my - slope * mx };
    // Evaluate relative to the mean so the exact-interpolation case is not
    // disturbed by a large intercept.
    let rms = (pts.iter().map(|p| (slope * (p.0 - mx) + my - p.1).powi(2)).sum::<f64>() / n).sqrt();
    Ok((map, rms))
}

/// Least-squares line per axis.
pub fn calibrate(region: &Region, ticks: &[AxisTick]) -> Result<MapCalibration, MapError> {
    let (lon_map, lon_rms) = fit(Axis::Longitude, ticks)?;
    let (lat_map, lat_rms) = fit(Axis::Latitude, ticks)?;
    Ok(MapCalibration {
        region: *region,
        lon_map,
        lat_map,
        ticks: ticks.to_vec(),
        rms_residual_deg: AxisResidual { longitude: lon_rms, latitude: lat_rms },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocatedPoint {
    pub longitude: f64,
    pub latitude: f64,
    /// Set when a value had to be clamped into range.
    pub out_of_range: bool,
}

pub fn locate_point(cal: &MapCalibration, x: f64, y: f64) -> Result<LocatedPoint, MapError> {
    if !cal.region.bbox.contains_point(x, y) {
        return Err(MapError::PixelOutsideRegion);
    }
    let lon = cal.lon_map.apply(x);
    let lat = cal.lat_map.apply(y);
    let lon_c = lon.clamp(-180.0, 180.0);
    let lat_c = lat.clamp(-90.0, 90.0);
    Ok(LocatedPoint { longitude: lon_c, latitude: lat_c, out_of_range: lon_c != lon || lat_c != lat })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub point_id: String,
    pub doc_id: String,
    pub map_id: String,
    pub pixel: [f64; 2],
    pub longitude: f64,
    pub latitude: f64,
    #[serde(default)]
    pub out_of_range: bool,
    #[serde(default)]
    pub table_row_hint: Option<usize>,
    pub created_by: UserId,
    pub created_at: DateTime<Utc>,
}

pub const GEO_POINT_COLUMNS: [&str; 6] = ["longitude", "latitude", "pixel_x", "pixel_y", "created_by", "created_at"];

pub fn format_time(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

pub fn geo_points_csv(points: &[GeoPoint]) -> String {
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            vec![
                p.longitude.to_string(),
                p.latitude.to_string(),
                p.pixel[0].to_string(),
                p.pixel[1].to_string(),
                p.created_by.clone(),
                format_time(&p.created_at),
            ]
        })
        .collect();
    csvout::to_csv(&GEO_POINT_COLUMNS, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::document::TextBox;
    use crate::geom::BBox;
    use crate::table::RegionSource;

    fn tick(axis: Axis, pixel: f64, degrees: f64) -> AxisTick {
        AxisTick { axis, pixel, degrees, label_text: format_label(axis, degrees) }
    }

    fn region() -> Region {
        Region::new(0, BBox::new(0.0, 0.0, 600.0, 300.0), RegionSource::UserDrawn)
    }

    #[test]
    fn grammar_examples() {
        assert_eq!(parse_coordinate_label("40°N"), Ok((Axis::Latitude, 40.0)));
        assert_eq!(parse_coordinate_label("120.5°W"), Ok((Axis::Longitude, -120.5)));
        assert!(parse_coordinate_label("42").is_err());
        assert!(parse_coordinate_label("Figure 3").is_err());
        assert_eq!(parse_coordinate_label("40°30′S"), Ok((Axis::Latitude, -40.5)));
        assert_eq!(parse_coordinate_label("10°30'36\"E"), Ok((Axis::Longitude, 10.51)));
        assert_eq!(parse_coordinate_label("15 E"), Ok((Axis::Longitude, 15.0)));
        assert!(parse_coordinate_label("91°N").is_err());
        assert!(parse_coordinate_label("10°75′N").is_err());
    }

    #[test]
    fn format_round_trip() {
        for d in 0..=180 {
            for (axis, sign) in [(Axis::Longitude, 1.0), (Axis::Longitude, -1.0), (Axis::Latitude, 1.0), (Axis::Latitude, -1.0)] {
                let v = sign * d as f64;
                if v.abs() > axis.limit() {
                    continue;
                }
                assert_eq!(parse_coordinate_label(&format_label(axis, v)), Ok((axis, v)));
            }
        }
    }

    #[test]
    fn midpoints() {
        let cal = calibrate(
            &region(),
            &[tick(Axis::Longitude, 100.0, 80.0), tick(Axis::Longitude, 500.0, 120.0), tick(Axis::Latitude, 50.0, 40.0), tick(Axis::Latitude, 250.0, 20.0)],
        )
        .unwrap();
        let p = locate_point(&cal, 300.0, 150.0).unwrap();
        assert!((p.longitude - 100.0).abs() < 1e-9);
        assert!((p.latitude - 30.0).abs() < 1e-9);
        assert!(!p.out_of_range);
    }

    #[test]
    fn three_collinear_ticks() {
        let mut t = vec![tick(Axis::Longitude, 0.0, 0.0), tick(Axis::Longitude, 100.0, 10.0), tick(Axis::Longitude, 200.0, 20.0)];
        t.extend([tick(Axis::Latitude, 0.0, 0.0), tick(Axis::Latitude, 10.0, 1.0)]);
        let cal = calibrate(&region(), &t).unwrap();
        assert!((cal.lon_map.slope - 0.1).abs() < 1e-12);
        assert!(cal.rms_residual_deg.longitude.abs() < 1e-12);
    }

    #[test]
    fn calibration_errors() {
        let one = [tick(Axis::Longitude, 0.0, 0.0), tick(Axis::Latitude, 0.0, 0.0), tick(Axis::Latitude, 5.0, 1.0)];
        assert_eq!(calibrate(&region(), &one), Err(MapError::InsufficientTicks(Axis::Longitude)));
        let dup = [tick(Axis::Longitude, 0.0, 0.0), tick(Axis::Longitude, 0.0, 3.0), tick(Axis::Latitude, 0.0, 0.0), tick(Axis::Latitude, 5.0, 1.0)];
        assert_eq!(calibrate(&region(), &dup), Err(MapError::DegenerateTicks(Axis::Longitude)));
    }

    #[test]
    fn outside_pixel_and_clamping() {
        let cal = calibrate(
            &region(),
            &[tick(Axis::Longitude, 0.0, 170.0), tick(Axis::Longitude, 100.0, 175.0), tick(Axis::Latitude, 0.0, 0.0), tick(Axis::Latitude, 100.0, 10.0)],
        )
        .unwrap();
        assert_eq!(locate_point(&cal, -1.0, 5.0), Err(MapError::PixelOutsideRegion));
        let p = locate_point(&cal, 600.0, 10.0).unwrap();
        assert_eq!(p.longitude, 180.0);
        assert!(p.out_of_range);
    }

    #[test]
    fn ticks_from_margins_only() {
        let mut page = PageContent::blank(0, 800.0, 600.0);
        let r = Region::new(0, BBox::new(100.0, 100.0, 700.0, 500.0), RegionSource::UserDrawn);
        let at = |cx: f64, cy: f64, s: &str| TextBox::new(BBox::new(cx - 10.0, cy - 4.0, cx + 10.0, cy + 4.0), s, 8.0);
        page.text_boxes.push(at(200.0, 90.0, "80°E"));
        page.text_boxes.push(at(600.0, 90.0, "120°E"));
        page.text_boxes.push(at(400.0, 80.0, "Figure 3"));
        page.text_boxes.push(at(80.0, 300.0, "30°N"));
        // Latitude label in a longitude band and a label inside the map.
        page.text_boxes.push(at(300.0, 510.0, "10°N"));
        page.text_boxes.push(at(300.0, 300.0, "50°E"));
        let ticks = detect_ticks(&page, &r, &MapConfig::default());
        let labels: Vec<_> = ticks.iter().map(|t| t.label_text.as_str()).collect();
        assert_eq!(labels, ["30°N", "80°E", "120°E"]);
        assert_eq!(ticks[1].pixel, 200.0);
        assert!(detect_ticks(&PageContent::blank(0, 800.0, 600.0), &r, &MapConfig::default()).is_empty());
    }

    #[test]
    fn csv_header() {
        assert!(geo_points_csv(&[]).starts_with("longitude,latitude,pixel_x,pixel_y,created_by,created_at\r\n"));
    }
}
