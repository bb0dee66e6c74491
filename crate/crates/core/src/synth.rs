//! Deterministic synthetic AIS traffic with planted congestion dynamics.
//!
//! A latent congestion intensity in `[0, 1]` lives on the region's grid. Each
//! congestion centre pumps intensity into its cell in recurring episodes (ramp
//! up, then release), the field spreads to 4-neighbours at `diffusion_rate`
//! and decays otherwise. Vessels wander the region; in each hourly broadcast a
//! vessel is held up (slow, often anchored, random heading) with probability
//! equal to its cell's intensity, otherwise it cruises along a persistent
//! heading. Tomorrow's slow-ratio change is therefore predictable from a
//! cell's own trend and from how congested its neighbours are.

use std::path::{Path, PathBuf};

use chrono::{Days, Duration, NaiveDate};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{canonical_sort, write_records_file, AisRecord, RegionSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CongestionCenter {
    pub lat: f64,
    pub lon: f64,
    /// Peak intensity pumped into the centre cell, in `[0, 1]`.
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_days: usize,
    pub n_vessels: usize,
    pub region: RegionSpec,
    pub congestion_centers: Vec<CongestionCenter>,
    /// Share of a cell's intensity exchanged with its neighbours each day.
    pub diffusion_rate: f64,
    pub broadcasts_per_day: usize,
    /// Length of one congestion episode (build-up plus release), days.
    pub episode_days: usize,
    /// Fraction of intensity a cell keeps from one day to the next.
    pub retention: f64,
    /// Standard deviation of the additive daily noise on active cells.
    pub field_noise: f64,
    /// Chance that an unhindered vessel still reports a slow broadcast.
    pub background_slow: f64,
    /// Radius (standard deviation, in cells) of the area each centre pumps.
    pub footprint_cells: f64,
}

/// Intensity below this level does not hold vessels up.
const HOLD_FLOOR: f64 = 0.05;

impl Default for SynthConfig {
    fn default() -> Self {
        let region = RegionSpec {
            lat_min: 33.0,
            lat_max: 34.2,
            lon_min: -119.0,
            lon_max: -117.5,
            cell_size: 0.1,
            date_start: NaiveDate::from_ymd_opt(2023, 1, 1).unwrap(),
            date_end: NaiveDate::from_ymd_opt(2023, 6, 30).unwrap(),
        };
        SynthConfig {
            seed: 7,
            n_days: 40,
            n_vessels: 240,
            region,
            congestion_centers: vec![
                CongestionCenter {
                    lat: 33.72,
                    lon: -118.22,
                    intensity: 0.9,
                },
                CongestionCenter {
                    lat: 33.35,
                    lon: -118.75,
                    intensity: 0.8,
                },
                CongestionCenter {
                    lat: 33.95,
                    lon: -117.85,
                    intensity: 0.85,
                },
            ],
            diffusion_rate: 0.5,
            broadcasts_per_day: 24,
            episode_days: 8,
            retention: 0.8,
            field_noise: 0.03,
            background_slow: 0.002,
            footprint_cells: 1.5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.region.validate()?;
        if self.n_days < 3 {
            return Err(Error::InvalidInput(format!("n_days must be at least 3, got {}", self.n_days)));
        }
        let last = self
            .region
            .date_start
            .checked_add_days(Days::new(self.n_days as u64 - 1))
            .ok_or_else(|| Error::InvalidInput("date overflow".into()))?;
        if last > self.region.date_end {
            return Err(Error::InvalidInput(format!(
                "{} days from {} overrun the window ending {}",
                self.n_days, self.region.date_start, self.region.date_end
            )));
        }
        if self.n_vessels == 0 || self.broadcasts_per_day == 0 || self.episode_days < 2 {
            return Err(Error::InvalidInput("vessels, broadcasts and episode length must be positive".into()));
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.diffusion_rate) || !unit(self.retention) || !unit(self.background_slow) {
            return Err(Error::InvalidInput("rates must lie in [0, 1]".into()));
        }
        if !(self.field_noise >= 0.0) || !(self.footprint_cells >= 0.0) {
            return Err(Error::InvalidInput("field noise and footprint must be nonnegative".into()));
        }
        for c in &self.congestion_centers {
            if !self.region.contains(c.lat, c.lon) || !unit(c.intensity) {
                return Err(Error::InvalidInput(format!("congestion centre {c:?} is invalid")));
            }
        }
        Ok(())
    }
}

struct Grid {
    lat_min: f64,
    lon_min: f64,
    cell: f64,
    rows: usize,
    cols: usize,
}

impl Grid {
    fn new(region: &RegionSpec) -> Result<Self> {
        let rows = ((region.lat_max - region.lat_min) / region.cell_size - 1e-9).ceil() as usize;
        let cols = ((region.lon_max - region.lon_min) / region.cell_size - 1e-9).ceil() as usize;
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidRegion("region has zero area".into()));
        }
        Ok(Grid {
            lat_min: region.lat_min,
            lon_min: region.lon_min,
            cell: region.cell_size,
            rows,
            cols,
        })
    }

    fn locate(&self, lat: f64, lon: f64) -> (usize, usize) {
        let r = ((lat - self.lat_min) / self.cell).floor().max(0.0) as usize;
        let c = ((lon - self.lon_min) / self.cell).floor().max(0.0) as usize;
        (r.min(self.rows - 1), c.min(self.cols - 1))
    }
}

/// Shape of one episode at `phase` in `[0, episode)`: linear build-up over the
/// first half, then zero while the accumulated congestion drains.
fn episode_pulse(phase: usize, episode: usize) -> f64 {
    let half = episode / 2;
    if phase < half {
        (phase + 1) as f64 / half as f64
    } else {
        0.0
    }
}

/// Daily latent intensity fields, one per simulated day.
pub fn intensity_fields(cfg: &SynthConfig) -> Result<Vec<Array2<f64>>> {
    cfg.validate()?;
    let grid = Grid::new(&cfg.region)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_F1E1D);
    let noise = Normal::new(0.0, cfg.field_noise.max(1e-300)).expect("valid normal");
    let centers: Vec<((usize, usize), f64, usize)> = cfg
        .congestion_centers
        .iter()
        .map(|c| {
            let phase = rng.random_range(0..cfg.episode_days);
            (grid.locate(c.lat, c.lon), c.intensity, phase)
        })
        .collect();

    let mut field = Array2::<f64>::zeros((grid.rows, grid.cols));
    let mut out = Vec::with_capacity(cfg.n_days);
    for day in 0..cfg.n_days {
        if day > 0 {
            let prev = field.clone();
            for r in 0..grid.rows {
                for c in 0..grid.cols {
                    let mut sum = 0.0;
                    let mut k = 0.0;
                    for (dr, dc) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                        let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                        if rr >= 0 && cc >= 0 && (rr as usize) < grid.rows && (cc as usize) < grid.cols {
                            sum += prev[[rr as usize, cc as usize]];
                            k += 1.0;
                        }
                    }
                    let mixed = (1.0 - cfg.diffusion_rate) * prev[[r, c]] + cfg.diffusion_rate * sum / k;
                    let jitter = if mixed > 0.02 { noise.sample(&mut rng) } else { 0.0 };
                    field[[r, c]] = (cfg.retention * mixed + jitter).clamp(0.0, 1.0);
                }
            }
        }
        for &((r0, c0), peak, phase) in &centers {
            let pulse = peak * episode_pulse((day + phase) % cfg.episode_days, cfg.episode_days);
            if pulse == 0.0 {
                continue;
            }
            for ((r, c), v) in field.indexed_iter_mut() {
                let d2 = (r as f64 - r0 as f64).powi(2) + (c as f64 - c0 as f64).powi(2);
                let w = if cfg.footprint_cells == 0.0 {
                    if d2 == 0.0 { 1.0 } else { 0.0 }
                } else {
                    (-d2 / (2.0 * cfg.footprint_cells.powi(2))).exp()
                };
                *v = v.max(pulse * w);
            }
        }
        out.push(field.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone)]
struct Vessel {
    mmsi: u64,
    lat: f64,
    lon: f64,
    heading: f64,
    cruise: f64,
    vessel_type: u16,
    length: f64,
    draft: f64,
}

fn sample_vessel(i: usize, region: &RegionSpec, rng: &mut ChaCha8Rng) -> Vessel {
    let roll: f64 = rng.random();
    let (vessel_type, length, draft) = if roll < 0.45 {
        (70 + rng.random_range(0..10), rng.random_range(150.0..330.0), rng.random_range(8.0..15.0))
    } else if roll < 0.70 {
        (80 + rng.random_range(0..10), rng.random_range(120.0..250.0), rng.random_range(7.0..14.0))
    } else if roll < 0.80 {
        (60, rng.random_range(40.0..200.0), rng.random_range(3.0..7.0))
    } else if roll < 0.90 {
        (30, rng.random_range(12.0..40.0), rng.random_range(2.0..5.0))
    } else {
        (52, rng.random_range(20.0..40.0), rng.random_range(3.0..6.0))
    };
    Vessel {
        mmsi: 366_000_000 + i as u64,
        lat: rng.random_range(region.lat_min..region.lat_max),
        lon: rng.random_range(region.lon_min..region.lon_max),
        heading: rng.random_range(0.0..360.0),
        cruise: rng.random_range(8.0..16.0),
        vessel_type,
        length,
        draft,
    }
}

fn reflect(value: f64, lo: f64, hi: f64) -> (f64, bool) {
    let eps = 1e-7;
    if value < lo {
        ((2.0 * lo - value).min(hi - eps), true)
    } else if value >= hi {
        ((2.0 * hi - value).max(lo).min(hi - eps), true)
    } else {
        (value, false)
    }
}

fn round_to(v: f64, decimals: i32) -> f64 {
    let s = 10f64.powi(decimals);
    (v * s).round() / s
}

/// Generate the full record stream, canonically ordered by `(timestamp, mmsi)`.
pub fn generate_synthetic_ais(cfg: &SynthConfig) -> Result<Vec<AisRecord>> {
    let fields = intensity_fields(cfg)?;
    let grid = Grid::new(&cfg.region)?;
    let region = &cfg.region;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut fleet: Vec<Vessel> = (0..cfg.n_vessels).map(|i| sample_vessel(i, region, &mut rng)).collect();
    let slot_secs = 86_400 / cfg.broadcasts_per_day as i64;
    let hours_per_slot = slot_secs as f64 / 3600.0;
    let turn = Normal::new(0.0, 12.0).expect("valid normal");

    let mut records = Vec::with_capacity(cfg.n_days * cfg.n_vessels * cfg.broadcasts_per_day);
    for (day, field) in fields.iter().enumerate() {
        let date = region.date_start + Days::new(day as u64);
        let midnight = date.and_hms_opt(0, 0, 0).expect("midnight").and_utc();
        for slot in 0..cfg.broadcasts_per_day {
            for v in fleet.iter_mut() {
                let (r, c) = grid.locate(v.lat, v.lon);
                let hold = ((field[[r, c]] - HOLD_FLOOR) / (1.0 - HOLD_FLOOR)).clamp(0.0, 1.0);
                let held = rng.random_bool(hold);
                let slow_anyway = rng.random_bool(cfg.background_slow);
                let (sog, cog, status) = if held {
                    let anchored = rng.random_bool(0.5);
                    let sog = if anchored {
                        rng.random_range(0.0..0.2)
                    } else {
                        rng.random_range(0.2..1.9)
                    };
                    (sog, rng.random_range(0.0..360.0), if anchored { 1u8 } else { 0u8 })
                } else if slow_anyway {
                    (rng.random_range(0.5..1.9), v.heading, 0)
                } else {
                    v.heading = (v.heading + turn.sample(&mut rng)).rem_euclid(360.0);
                    let sog = (v.cruise + rng.random_range(-1.5..1.5)).max(2.5);
                    (sog, v.heading, 0)
                };

                let offset = slot as i64 * slot_secs + (v.mmsi % slot_secs as u64) as i64;
                let cog_out = round_to(cog, 1);
                records.push(AisRecord {
                    mmsi: v.mmsi,
                    timestamp: midnight + Duration::seconds(offset),
                    lat: round_to(v.lat, 5),
                    lon: round_to(v.lon, 5),
                    sog: round_to(sog, 1),
                    cog: Some(if cog_out >= 360.0 { 0.0 } else { cog_out }),
                    vessel_type: Some(v.vessel_type),
                    nav_status: Some(status),
                    length: Some(round_to(v.length, 0).max(1.0)),
                    draft: Some(round_to(v.draft, 1)),
                });

                // advance: 1 knot is one arc-minute of latitude per hour
                let dist = sog / 60.0 * hours_per_slot;
                let rad = cog.to_radians();
                let (lat, flip_lat) = reflect(v.lat + dist * rad.cos(), region.lat_min, region.lat_max);
                let (lon, flip_lon) = reflect(v.lon + dist * rad.sin(), region.lon_min, region.lon_max);
                v.lat = round_to(lat, 5).clamp(region.lat_min, region.lat_max - 1e-5);
                v.lon = round_to(lon, 5).clamp(region.lon_min, region.lon_max - 1e-5);
                if flip_lat {
                    v.heading = (180.0 - v.heading).rem_euclid(360.0);
                }
                if flip_lon {
                    v.heading = (360.0 - v.heading).rem_euclid(360.0);
                }
            }
        }
    }
    canonical_sort(&mut records);
    Ok(records)
}

/// Write one NOAA-style daily CSV (`AIS_YYYY_MM_DD.csv`) per day into `dir`.
pub fn write_daily_csvs(dir: &Path, records: &[AisRecord]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    let mut start = 0;
    while start < records.len() {
        let date = records[start].date();
        let end = start + records[start..].iter().take_while(|r| r.date() == date).count();
        let path = dir.join(format!("AIS_{}.csv", date.format("%Y_%m_%d")));
        write_records_file(&path, &records[start..end])?;
        paths.push(path);
        start = end;
    }
    Ok(paths)
}
