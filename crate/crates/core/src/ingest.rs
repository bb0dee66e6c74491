//! NOAA MarineCadastre AIS CSV ingest.
//!
//! Rows are validated field by field, filtered to a [`RegionSpec`] and its
//! date window, and counted per file. Nothing is silently defaulted: a row
//! whose mandatory fields do not parse is rejected as malformed.

use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// NOAA encodes "speed not available" as 102.3 knots.
const SOG_NOT_AVAILABLE: f64 = 102.3;
/// NOAA encodes "course not available" as 360 degrees.
const COG_NOT_AVAILABLE: f64 = 360.0;

pub const MANDATORY_COLUMNS: [&str; 6] = ["MMSI", "BaseDateTime", "LAT", "LON", "SOG", "COG"];
pub const OUTPUT_COLUMNS: [&str; 10] = [
    "MMSI",
    "BaseDateTime",
    "LAT",
    "LON",
    "SOG",
    "COG",
    "VesselType",
    "Status",
    "Length",
    "Draft",
];

/// One parsed AIS broadcast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AisRecord {
    pub mmsi: u64,
    pub timestamp: DateTime<Utc>,
    pub lat: f64,
    pub lon: f64,
    /// Speed over ground, knots.
    pub sog: f64,
    /// Course over ground, degrees in `[0, 360)`.
    pub cog: Option<f64>,
    pub vessel_type: Option<u16>,
    pub nav_status: Option<u8>,
    pub length: Option<f64>,
    pub draft: Option<f64>,
}

impl AisRecord {
    pub fn date(&self) -> NaiveDate {
        self.timestamp.date_naive()
    }
}

/// Study region, grid resolution and date window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    #[serde(default = "default_cell_size")]
    pub cell_size: f64,
    pub date_start: NaiveDate,
    pub date_end: NaiveDate,
}

fn default_cell_size() -> f64 {
    0.1
}

impl Default for RegionSpec {
    /// San Pedro Bay / LA-Long Beach study area, January to June 2023.
    fn default() -> Self {
        RegionSpec {
            lat_min: 32.0,
            lat_max: 35.0,
            lon_min: -121.0,
            lon_max: -117.0,
            cell_size: 0.1,
            date_start: NaiveDate::from_ymd_opt(2023, 1, 1).unwrap(),
            date_end: NaiveDate::from_ymd_opt(2023, 6, 30).unwrap(),
        }
    }
}

impl RegionSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.lat_min, self.lat_max, self.lon_min, self.lon_max, self.cell_size]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidRegion("non-finite bound".into()));
        }
        if self.lat_min >= self.lat_max {
            return Err(Error::InvalidRegion(format!(
                "lat_min {} must be below lat_max {}",
                self.lat_min, self.lat_max
            )));
        }
        if self.lon_min >= self.lon_max {
            return Err(Error::InvalidRegion(format!(
                "lon_min {} must be below lon_max {}",
                self.lon_min, self.lon_max
            )));
        }
        if self.cell_size <= 0.0 {
            return Err(Error::InvalidRegion(format!("cell_size {} must be positive", self.cell_size)));
        }
        if self.date_start > self.date_end {
            return Err(Error::InvalidRegion(format!(
                "date_start {} is after date_end {}",
                self.date_start, self.date_end
            )));
        }
        if self.lat_min < -90.0 || self.lat_max > 90.0 || self.lon_min < -180.0 || self.lon_max > 180.0 {
            return Err(Error::InvalidRegion("bounds exceed the globe".into()));
        }
        Ok(())
    }

    /// Half-open spatial containment: `[lat_min, lat_max) x [lon_min, lon_max)`.
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        lat >= self.lat_min && lat < self.lat_max && lon >= self.lon_min && lon < self.lon_max
    }

    pub fn contains_date(&self, date: NaiveDate) -> bool {
        date >= self.date_start && date <= self.date_end
    }
}

/// Grid cell identified by floored coordinate indices, rendered `"<lat_idx>_<lon_idx>"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellId {
    pub lat_idx: i32,
    pub lon_idx: i32,
}

impl CellId {
    pub fn new(lat_idx: i32, lon_idx: i32) -> Self {
        CellId { lat_idx, lon_idx }
    }

    /// Centroid in degrees.
    pub fn centroid(&self, cell_size: f64) -> (f64, f64) {
        (
            (self.lat_idx as f64 + 0.5) * cell_size,
            (self.lon_idx as f64 + 0.5) * cell_size,
        )
    }

    /// Squared centroid distance in grid units. Exact, so tie-breaking is exact too.
    pub fn dist2(&self, other: &CellId) -> i64 {
        let dl = (self.lat_idx - other.lat_idx) as i64;
        let dn = (self.lon_idx - other.lon_idx) as i64;
        dl * dl + dn * dn
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.lat_idx, self.lon_idx)
    }
}

impl FromStr for CellId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        // The longitude index is usually negative, so split on the first '_'
        // that is not a leading sign.
        let split = s
            .char_indices()
            .skip(1)
            .find(|&(_, c)| c == '_')
            .map(|(i, _)| i)
            .ok_or_else(|| Error::BadCellId(s.to_string()))?;
        let lat = s[..split].parse().map_err(|_| Error::BadCellId(s.to_string()))?;
        let lon = s[split + 1..].parse().map_err(|_| Error::BadCellId(s.to_string()))?;
        Ok(CellId::new(lat, lon))
    }
}

impl Serialize for CellId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CellId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Floor of `value / cell_size`, snapping quotients that sit on a grid line
/// (up to float noise) to that line.
fn grid_index(value: f64, cell_size: f64) -> i32 {
    let q = value / cell_size;
    let nearest = q.round();
    if (q - nearest).abs() < 1e-9 * nearest.abs().max(1.0) {
        nearest as i32
    } else {
        q.floor() as i32
    }
}

/// Map a coordinate inside the region onto its grid cell.
pub fn assign_cell(lat: f64, lon: f64, region: &RegionSpec) -> Result<CellId> {
    if !region.contains(lat, lon) {
        return Err(Error::OutOfRegion { lat, lon });
    }
    Ok(CellId::new(
        grid_index(lat, region.cell_size),
        grid_index(lon, region.cell_size),
    ))
}

/// Per-file row accounting. `total_rows` always equals accepted plus every rejection bucket.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub path: PathBuf,
    pub total_rows: usize,
    pub accepted: usize,
    pub malformed: usize,
    pub out_of_region: usize,
    pub out_of_window: usize,
}

impl IngestReport {
    pub fn rejected(&self) -> usize {
        self.malformed + self.out_of_region + self.out_of_window
    }
}

#[derive(Debug, Clone, Copy)]
struct ColumnMap {
    mmsi: usize,
    time: usize,
    lat: usize,
    lon: usize,
    sog: usize,
    cog: usize,
    vessel_type: Option<usize>,
    status: Option<usize>,
    length: Option<usize>,
    draft: Option<usize>,
}

impl ColumnMap {
    fn from_headers(headers: &csv::StringRecord, path: &Path) -> Result<Self> {
        let find = |name: &str| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
        let need = |name: &str| {
            find(name).ok_or_else(|| Error::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_string(),
            })
        };
        Ok(ColumnMap {
            mmsi: need("MMSI")?,
            time: need("BaseDateTime")?,
            lat: need("LAT")?,
            lon: need("LON")?,
            sog: need("SOG")?,
            cog: need("COG")?,
            vessel_type: find("VesselType"),
            status: find("Status"),
            length: find("Length"),
            draft: find("Draft"),
        })
    }
}

enum RowOutcome {
    Accepted(AisRecord),
    Malformed,
    OutOfRegion,
    OutOfWindow,
}

pub(crate) fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.with_timezone(&Utc));
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S%.f"]
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())
        .map(|naive| naive.and_utc())
}

fn field(row: &csv::StringRecord, idx: usize) -> &str {
    row.get(idx).map(str::trim).unwrap_or("")
}

fn optional<T: FromStr>(row: &csv::StringRecord, idx: Option<usize>) -> Option<T> {
    let raw = field(row, idx?);
    if raw.is_empty() {
        return None;
    }
    raw.parse().ok()
}

fn positive(v: Option<f64>) -> Option<f64> {
    v.filter(|x| x.is_finite() && *x > 0.0)
}

fn parse_row(row: &csv::StringRecord, cols: &ColumnMap, region: &RegionSpec) -> RowOutcome {
    let Ok(mmsi) = field(row, cols.mmsi).parse::<u64>() else {
        return RowOutcome::Malformed;
    };
    let Some(timestamp) = parse_timestamp(field(row, cols.time)) else {
        return RowOutcome::Malformed;
    };
    let (Ok(lat), Ok(lon)) = (field(row, cols.lat).parse::<f64>(), field(row, cols.lon).parse::<f64>()) else {
        return RowOutcome::Malformed;
    };
    if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
        return RowOutcome::Malformed;
    }
    let Ok(sog) = field(row, cols.sog).parse::<f64>() else {
        return RowOutcome::Malformed;
    };
    if !sog.is_finite() || !(0.0..SOG_NOT_AVAILABLE).contains(&sog) {
        return RowOutcome::Malformed;
    }
    let cog_raw = field(row, cols.cog);
    let cog = if cog_raw.is_empty() {
        None
    } else {
        match cog_raw.parse::<f64>() {
            Ok(c) if (0.0..COG_NOT_AVAILABLE).contains(&c) => Some(c),
            Ok(c) if c == COG_NOT_AVAILABLE => None,
            _ => return RowOutcome::Malformed,
        }
    };

    if !region.contains(lat, lon) {
        return RowOutcome::OutOfRegion;
    }
    if !region.contains_date(timestamp.date_naive()) {
        return RowOutcome::OutOfWindow;
    }

    RowOutcome::Accepted(AisRecord {
        mmsi,
        timestamp,
        lat,
        lon,
        sog,
        cog,
        vessel_type: optional(row, cols.vessel_type),
        nav_status: optional(row, cols.status),
        length: positive(optional(row, cols.length)),
        draft: positive(optional(row, cols.draft)),
    })
}

/// Parse AIS rows from any reader. `path` is only used for reporting.
pub fn parse_ais_reader<R: Read>(
    reader: R,
    path: &Path,
    region: &RegionSpec,
) -> Result<(Vec<AisRecord>, IngestReport)> {
    region.validate()?;
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let cols = ColumnMap::from_headers(&headers, path)?;

    let mut report = IngestReport {
        path: path.to_path_buf(),
        ..Default::default()
    };
    let mut records = Vec::new();
    for row in rdr.records() {
        report.total_rows += 1;
        let Ok(row) = row else {
            report.malformed += 1;
            continue;
        };
        match parse_row(&row, &cols, region) {
            RowOutcome::Accepted(rec) => {
                report.accepted += 1;
                records.push(rec);
            }
            RowOutcome::Malformed => report.malformed += 1,
            RowOutcome::OutOfRegion => report.out_of_region += 1,
            RowOutcome::OutOfWindow => report.out_of_window += 1,
        }
    }
    Ok((records, report))
}

/// Parse one NOAA daily CSV file.
pub fn parse_ais_csv(path: &Path, region: &RegionSpec) -> Result<(Vec<AisRecord>, IngestReport)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_ais_reader(std::io::BufReader::new(file), path, region)
}

/// Parse many files concurrently and merge into canonical `(timestamp, mmsi)` order.
pub fn parse_ais_files(paths: &[PathBuf], region: &RegionSpec) -> Result<(Vec<AisRecord>, Vec<IngestReport>)> {
    let results: Vec<Result<(Vec<AisRecord>, IngestReport)>> = std::thread::scope(|s| {
        let handles: Vec<_> = paths
            .iter()
            .map(|p| s.spawn(move || parse_ais_csv(p, region)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("ingest worker panicked"))
            .collect()
    });
    let mut records = Vec::new();
    let mut reports = Vec::with_capacity(paths.len());
    for r in results {
        let (recs, report) = r?;
        records.extend(recs);
        reports.push(report);
    }
    canonical_sort(&mut records);
    Ok((records, reports))
}

/// Sort by `(timestamp, mmsi)`, falling back on position for full determinism.
pub fn canonical_sort(records: &mut [AisRecord]) {
    records.sort_by(|a, b| {
        (a.timestamp, a.mmsi)
            .cmp(&(b.timestamp, b.mmsi))
            .then(a.lat.total_cmp(&b.lat))
            .then(a.lon.total_cmp(&b.lon))
            .then(a.sog.total_cmp(&b.sog))
    });
}

/// List `*.csv` files in a directory, sorted by name.
pub fn list_csv_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext.eq_ignore_ascii_case("csv")))
        .collect();
    files.sort();
    Ok(files)
}

fn fmt_opt<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

/// Write records in the NOAA column layout. Floats use shortest round-trip formatting.
pub fn write_records_csv<W: Write>(writer: W, records: &[AisRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let wrap = |source| Error::Csv {
        path: PathBuf::from("<output>"),
        source,
    };
    wtr.write_record(OUTPUT_COLUMNS).map_err(wrap)?;
    for r in records {
        wtr.write_record([
            r.mmsi.to_string(),
            r.timestamp.format("%Y-%m-%dT%H:%M:%S").to_string(),
            r.lat.to_string(),
            r.lon.to_string(),
            r.sog.to_string(),
            fmt_opt(&r.cog),
            fmt_opt(&r.vessel_type),
            fmt_opt(&r.nav_status),
            fmt_opt(&r.length),
            fmt_opt(&r.draft),
        ])
        .map_err(wrap)?;
    }
    wtr.flush().map_err(|e| Error::io("<output>", e))?;
    Ok(())
}

pub fn write_records_file(path: &Path, records: &[AisRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_records_csv(std::io::BufWriter::new(file), records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HEADER: &str = "MMSI,BaseDateTime,LAT,LON,SOG,COG,Heading,VesselName,VesselType,Status,Length,Draft\n";

    fn parse(body: &str) -> (Vec<AisRecord>, IngestReport) {
        let text = format!("{HEADER}{body}");
        parse_ais_reader(text.as_bytes(), Path::new("mem.csv"), &RegionSpec::default()).unwrap()
    }

    #[test]
    fn in_bounds_row_is_accepted() {
        let (recs, rep) = parse("367000001,2023-01-05T14:03:00,33.7,-118.2,0.1,45.0,511,X,70,1,200,11.5\n");
        assert_eq!(recs.len(), 1);
        assert_eq!(rep.accepted, 1);
        let r = &recs[0];
        assert_eq!(r.mmsi, 367000001);
        assert_eq!(r.vessel_type, Some(70));
        assert_eq!(r.nav_status, Some(1));
        assert_eq!(r.draft, Some(11.5));
        assert_eq!(r.timestamp.to_rfc3339(), "2023-01-05T14:03:00+00:00");
    }

    #[test]
    fn outside_region_is_rejected() {
        let (recs, rep) = parse("367000001,2023-01-05T14:03:00,40.0,-118.2,0.1,45.0,511,X,70,1,200,11.5\n");
        assert!(recs.is_empty());
        assert_eq!(rep.out_of_region, 1);
        assert_eq!(rep.rejected(), 1);
    }

    #[test]
    fn empty_sog_is_malformed() {
        let (recs, rep) = parse("367000001,2023-01-05T14:03:00,33.7,-118.2,,45.0,511,X,70,1,200,11.5\n");
        assert!(recs.is_empty());
        assert_eq!(rep.malformed, 1);
    }

    #[test]
    fn outside_window_and_bad_timestamp() {
        let (_, rep) = parse(
            "1,2022-12-31T23:59:59,33.7,-118.2,1,45,,,,,,\n\
             2,not-a-date,33.7,-118.2,1,45,,,,,,\n\
             3,2023-01-01 00:00:00,33.7,-118.2,1,45,,,,,,\n",
        );
        assert_eq!(rep.out_of_window, 1);
        assert_eq!(rep.malformed, 1);
        assert_eq!(rep.accepted, 1);
        assert_eq!(rep.total_rows, 3);
    }

    #[test]
    fn missing_optionals_are_absent_not_zero() {
        let (recs, _) = parse("1,2023-01-05T00:00:00,33.7,-118.2,1,360,,,,,0,\n");
        let r = &recs[0];
        assert_eq!(r.cog, None);
        assert_eq!(r.vessel_type, None);
        assert_eq!(r.nav_status, None);
        assert_eq!(r.length, None);
        assert_eq!(r.draft, None);
    }

    #[test]
    fn missing_mandatory_column_names_it() {
        let text = "MMSI,BaseDateTime,LAT,LON,COG\n1,2023-01-05T00:00:00,33,-118,0\n";
        let err = parse_ais_reader(text.as_bytes(), Path::new("x.csv"), &RegionSpec::default()).unwrap_err();
        match err {
            Error::MissingColumn { column, .. } => assert_eq!(column, "SOG"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_fatal() {
        assert!(matches!(
            parse_ais_csv(Path::new("/nonexistent/ais.csv"), &RegionSpec::default()),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn cell_assignment_examples() {
        let region = RegionSpec::default();
        assert_eq!(assign_cell(32.15, -119.45, &region).unwrap().to_string(), "321_-1195");
        assert_eq!(assign_cell(33.00, -118.00, &region).unwrap().to_string(), "330_-1180");
        assert_eq!(assign_cell(34.999, -117.001, &region).unwrap().to_string(), "349_-1171");
        assert!(assign_cell(40.0, -118.0, &region).is_err());
    }

    #[test]
    fn grid_lines_snap_to_higher_cell() {
        // 0.3 / 0.1 is 2.9999999999999996 in binary floating point.
        assert_eq!(grid_index(0.3, 0.1), 3);
        assert_eq!(grid_index(-0.3, 0.1), -3);
        assert_eq!(grid_index(-0.30001, 0.1), -4);
    }

    #[test]
    fn region_validation() {
        let mut r = RegionSpec::default();
        r.cell_size = 0.0;
        assert!(r.validate().is_err());
        let mut r = RegionSpec::default();
        r.lat_max = r.lat_min;
        assert!(r.validate().is_err());
    }

    #[test]
    fn written_records_parse_back_unchanged() {
        let (recs, _) = parse(
            "5,2023-02-01T01:02:03,33.123456789,-118.987654321,12.3,359.9,,,70,0,150.5,9.1\n\
             6,2023-02-01T01:02:04,34.5,-117.5,0,,,,,,,\n",
        );
        let mut buf = Vec::new();
        write_records_csv(&mut buf, &recs).unwrap();
        let (back, rep) = parse_ais_reader(buf.as_slice(), Path::new("b"), &RegionSpec::default()).unwrap();
        assert_eq!(rep.accepted, 2);
        assert_eq!(back, recs);
    }

    proptest! {
        #[test]
        fn cell_id_render_round_trips(lat in -900i32..900, lon in -1800i32..1800) {
            let c = CellId::new(lat, lon);
            prop_assert_eq!(c.to_string().parse::<CellId>().unwrap(), c);
        }

        #[test]
        fn accounting_and_filtering_hold(rows in proptest::collection::vec(
            (30.0f64..37.0, -123.0f64..-115.0, prop_oneof![Just(-1.0f64), 0.0f64..30.0], 0i64..400, any::<bool>()),
            0..60,
        )) {
            let region = RegionSpec::default();
            let base = NaiveDate::from_ymd_opt(2022, 12, 1).unwrap();
            let mut text = String::from(HEADER);
            for (i, (lat, lon, sog, day, blank)) in rows.iter().enumerate() {
                let date = base + chrono::Days::new(*day as u64);
                let sog = if *blank { String::new() } else { sog.to_string() };
                text.push_str(&format!("{},{}T06:00:00,{},{},{},10,,,,,,\n", 1000 + i, date, lat, lon, sog));
            }
            let (recs, rep) = parse_ais_reader(text.as_bytes(), Path::new("p"), &region).unwrap();
            prop_assert_eq!(rep.total_rows, rows.len());
            prop_assert_eq!(rep.total_rows, rep.accepted + rep.rejected());
            prop_assert_eq!(recs.len(), rep.accepted);
            for r in &recs {
                prop_assert!(region.contains(r.lat, r.lon));
                prop_assert!(region.contains_date(r.date()));
                prop_assert!(r.sog >= 0.0);
            }
        }

        #[test]
        fn assignment_ignores_record_order(points in proptest::collection::vec((32.0f64..35.0, -121.0f64..-117.0), 1..30)) {
            let region = RegionSpec::default();
            let forward: Vec<CellId> = points.iter().map(|&(a, b)| assign_cell(a, b, &region).unwrap()).collect();
            let mut backward: Vec<CellId> = points.iter().rev().map(|&(a, b)| assign_cell(a, b, &region).unwrap()).collect();
            backward.reverse();
            prop_assert_eq!(forward, backward);
        }
    }
}
