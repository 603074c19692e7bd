//! Dataset ingestion, synthetic stream generation, and (history, horizon)
//! windowing.
//!
//! Two-file CSV layout: `positions.csv` holds the static stations
//! (`station_id,x,y`), `values.csv` the long-form measurements
//! (`timestamp,station_id,<channel_1>,...,<channel_U>`), rows grouped by
//! timestamp. Each channel column becomes one point-cloud channel with a
//! single value feature; station coordinates are normalized at load time and
//! replicated across channels.

use std::collections::HashMap;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::pointcloud::{normalize_coords, PointCloudError, PointCloudFrame};
use crate::tensor::NdArray;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: u64,
        msg: String,
    },
    #[error("{path}:{line}: unknown station id '{id}'")]
    UnknownStation { path: String, line: u64, id: String },
    #[error("{path}:{line}: duplicate timestamp {timestamp} for station '{id}'")]
    DuplicateTimestamp {
        path: String,
        line: u64,
        timestamp: i64,
        id: String,
    },
    #[error("{path}:{line}: timestamp {timestamp} is not increasing (previous {previous})")]
    NonMonotone {
        path: String,
        line: u64,
        timestamp: i64,
        previous: i64,
    },
    #[error("{path}:{line}: expected {expected} fields, got {got}")]
    Ragged {
        path: String,
        line: u64,
        expected: usize,
        got: usize,
    },
    #[error("missing value for station '{id}', channel '{channel}' at timestamp {timestamp} (pass --gap-fill to interpolate)")]
    MissingValue {
        id: String,
        channel: String,
        timestamp: i64,
    },
    #[error("station '{id}', channel '{channel}' has no recorded values at all")]
    EmptySeries { id: String, channel: String },
    #[error("dataset has {frames} frames; windows of {required} (history + horizon) need at least that many")]
    TooShort { frames: usize, required: usize },
    #[error(transparent)]
    PointCloud(#[from] PointCloudError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// A time-ordered point-cloud stream with its static station layout.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamDataset {
    pub frames: Vec<PointCloudFrame>,
    pub station_ids: Vec<String>,
    /// Normalized `(N, L)` station coordinates shared by every channel.
    pub station_coords: NdArray,
    pub channel_names: Vec<String>,
    /// Nominal step between consecutive timestamps (1 when irregular).
    pub interval: i64,
}

impl StreamDataset {
    pub fn n_stations(&self) -> usize {
        self.station_ids.len()
    }

    pub fn channels(&self) -> usize {
        self.channel_names.len()
    }
}

/// One supervised sample: M history frames and J target frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub history: Vec<PointCloudFrame>,
    pub target: Vec<PointCloudFrame>,
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

/// Load a stream from the two-file CSV layout. With `gap_fill`, missing
/// (timestamp, station) values are filled by per-series linear interpolation
/// in time (nearest value at the edges); otherwise any gap is an error.
pub fn load_stream(positions_path: &Path, values_path: &Path, gap_fill: bool) -> Result<StreamDataset> {
    // stations
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(positions_path)
        .map_err(|e| DataError::Csv {
            path: positions_path.display().to_string(),
            source: e,
        })?;
    let mut station_ids: Vec<String> = Vec::new();
    let mut raw_coords: Vec<f64> = Vec::new();
    let mut station_index: HashMap<String, usize> = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| DataError::Csv {
            path: positions_path.display().to_string(),
            source: e,
        })?;
        let line = record_line(&record);
        if record.len() != 3 {
            return Err(DataError::Ragged {
                path: positions_path.display().to_string(),
                line,
                expected: 3,
                got: record.len(),
            });
        }
        let id = record[0].to_string();
        if station_index.contains_key(&id) {
            return Err(DataError::Parse {
                path: positions_path.display().to_string(),
                line,
                msg: format!("station id '{id}' listed twice"),
            });
        }
        let parse = |field: &str, name: &str| -> Result<f64> {
            field.trim().parse::<f64>().map_err(|_| DataError::Parse {
                path: positions_path.display().to_string(),
                line,
                msg: format!("cannot parse {name} '{field}'"),
            })
        };
        let x = parse(&record[1], "x")?;
        let y = parse(&record[2], "y")?;
        station_index.insert(id.clone(), station_ids.len());
        station_ids.push(id);
        raw_coords.push(x);
        raw_coords.push(y);
    }
    if station_ids.is_empty() {
        return Err(DataError::Parse {
            path: positions_path.display().to_string(),
            line: 1,
            msg: "no stations".into(),
        });
    }
    let n = station_ids.len();
    let station_coords = normalize_coords(&NdArray::new(vec![n, 2], raw_coords)?);

    // measurements
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(values_path)
        .map_err(|e| DataError::Csv {
            path: values_path.display().to_string(),
            source: e,
        })?;
    let headers = rdr
        .headers()
        .map_err(|e| DataError::Csv {
            path: values_path.display().to_string(),
            source: e,
        })?
        .clone();
    if headers.len() < 3 {
        return Err(DataError::Parse {
            path: values_path.display().to_string(),
            line: 1,
            msg: format!("header needs timestamp,station_id and at least one channel, got {headers:?}"),
        });
    }
    let channel_names: Vec<String> = headers.iter().skip(2).map(|s| s.to_string()).collect();
    let u = channel_names.len();

    // cells[t][station][channel]
    let mut timestamps: Vec<i64> = Vec::new();
    let mut cells: Vec<Vec<Vec<Option<f64>>>> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| DataError::Csv {
            path: values_path.display().to_string(),
            source: e,
        })?;
        let line = record_line(&record);
        if record.len() != 2 + u {
            return Err(DataError::Ragged {
                path: values_path.display().to_string(),
                line,
                expected: 2 + u,
                got: record.len(),
            });
        }
        let ts: i64 = record[0].trim().parse().map_err(|_| DataError::Parse {
            path: values_path.display().to_string(),
            line,
            msg: format!("cannot parse timestamp '{}'", &record[0]),
        })?;
        let id = record[1].to_string();
        let &station = station_index.get(&id).ok_or_else(|| DataError::UnknownStation {
            path: values_path.display().to_string(),
            line,
            id: id.clone(),
        })?;
        match timestamps.last() {
            Some(&last) if ts == last => {}
            Some(&last) if ts < last => {
                return Err(DataError::NonMonotone {
                    path: values_path.display().to_string(),
                    line,
                    timestamp: ts,
                    previous: last,
                });
            }
            _ => {
                timestamps.push(ts);
                cells.push(vec![vec![None; u]; n]);
            }
        }
        let slot = cells.last_mut().expect("group pushed above");
        if slot[station].iter().any(|v| v.is_some()) {
            return Err(DataError::DuplicateTimestamp {
                path: values_path.display().to_string(),
                line,
                timestamp: ts,
                id,
            });
        }
        for (c, field) in record.iter().skip(2).enumerate() {
            let field = field.trim();
            if field.is_empty() {
                continue; // missing cell, resolved below
            }
            let v: f64 = field.parse().map_err(|_| DataError::Parse {
                path: values_path.display().to_string(),
                line,
                msg: format!("cannot parse value '{field}'"),
            })?;
            slot[station][c] = Some(v);
        }
    }
    if timestamps.is_empty() {
        return Err(DataError::Parse {
            path: values_path.display().to_string(),
            line: 1,
            msg: "no measurement rows".into(),
        });
    }

    resolve_gaps(&mut cells, &timestamps, &station_ids, &channel_names, gap_fill)?;

    let t_len = timestamps.len();
    let coords = replicate_coords(&station_coords, u);
    let mut frames = Vec::with_capacity(t_len);
    for (t, ts) in timestamps.iter().enumerate() {
        let values = NdArray::from_fn(vec![u, n, 1], |idx| {
            cells[t][idx[1]][idx[0]].expect("gaps resolved")
        });
        frames.push(PointCloudFrame::new(values, coords.clone(), *ts)?);
    }
    let interval = infer_interval(&timestamps);
    Ok(StreamDataset {
        frames,
        station_ids,
        station_coords,
        channel_names,
        interval,
    })
}

fn replicate_coords(station_coords: &NdArray, channels: usize) -> NdArray {
    let (n, l) = (station_coords.shape()[0], station_coords.shape()[1]);
    NdArray::from_fn(vec![channels, n, l], |idx| {
        station_coords.at(&[idx[1], idx[2]])
    })
}

fn infer_interval(timestamps: &[i64]) -> i64 {
    if timestamps.len() < 2 {
        return 1;
    }
    let dt = timestamps[1] - timestamps[0];
    if timestamps.windows(2).all(|w| w[1] - w[0] == dt) {
        dt
    } else {
        1
    }
}

fn resolve_gaps(
    cells: &mut [Vec<Vec<Option<f64>>>],
    timestamps: &[i64],
    station_ids: &[String],
    channel_names: &[String],
    gap_fill: bool,
) -> Result<()> {
    let t_len = cells.len();
    for s in 0..station_ids.len() {
        for c in 0..channel_names.len() {
            if cells.iter().all(|frame| frame[s][c].is_none()) {
                return Err(DataError::EmptySeries {
                    id: station_ids[s].clone(),
                    channel: channel_names[c].clone(),
                });
            }
            if !gap_fill {
                if let Some(t) = (0..t_len).find(|&t| cells[t][s][c].is_none()) {
                    return Err(DataError::MissingValue {
                        id: station_ids[s].clone(),
                        channel: channel_names[c].clone(),
                        timestamp: timestamps[t],
                    });
                }
                continue;
            }
            // linear interpolation over timestamps; nearest value at the edges
            let known: Vec<usize> = (0..t_len).filter(|&t| cells[t][s][c].is_some()).collect();
            for t in 0..t_len {
                if cells[t][s][c].is_some() {
                    continue;
                }
                let next = known.iter().copied().find(|&k| k > t);
                let prev = known.iter().copied().rev().find(|&k| k < t);
                let filled = match (prev, next) {
                    (Some(p), Some(q)) => {
                        let (vp, vq) = (cells[p][s][c].unwrap(), cells[q][s][c].unwrap());
                        let span = (timestamps[q] - timestamps[p]) as f64;
                        let frac = (timestamps[t] - timestamps[p]) as f64 / span;
                        vp + (vq - vp) * frac
                    }
                    (Some(p), None) => cells[p][s][c].unwrap(),
                    (None, Some(q)) => cells[q][s][c].unwrap(),
                    (None, None) => unreachable!("empty series rejected above"),
                };
                cells[t][s][c] = Some(filled);
            }
        }
    }
    Ok(())
}

/// Write a dataset back to the two-file CSV layout. Coordinates are written
/// normalized, so load(save(x)) is exact (normalization is idempotent).
pub fn save_stream(dataset: &StreamDataset, positions_path: &Path, values_path: &Path) -> Result<()> {
    let mut out = String::from("station_id,x,y\n");
    for (s, id) in dataset.station_ids.iter().enumerate() {
        let x = dataset.station_coords.at(&[s, 0]);
        let y = dataset.station_coords.at(&[s, 1]);
        out.push_str(&format!("{id},{x},{y}\n"));
    }
    std::fs::write(positions_path, out).map_err(|e| io_err(positions_path, e))?;

    let mut out = String::from("timestamp,station_id");
    for name in &dataset.channel_names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for frame in &dataset.frames {
        for (s, id) in dataset.station_ids.iter().enumerate() {
            out.push_str(&format!("{},{id}", frame.timestamp()));
            for c in 0..dataset.channels() {
                out.push_str(&format!(",{}", frame.values().at(&[c, s, 0])));
            }
            out.push('\n');
        }
    }
    std::fs::write(values_path, out).map_err(|e| io_err(values_path, e))?;
    Ok(())
}

/// Synthetic stream configuration: values are sums of Gaussian bumps whose
/// centers orbit the unit square with per-channel phase, plus seeded noise.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_points: usize,
    pub channels: usize,
    pub steps: usize,
    pub seed: u64,
    pub noise_sigma: f64,
    /// Bump orbit radius; 0 freezes the bumps (constant frames when the
    /// noise is also zero).
    pub orbit_radius: f64,
    pub n_bumps: usize,
    /// Orbit period in steps.
    pub period: f64,
}

impl SynthConfig {
    pub fn new(n_points: usize, channels: usize, steps: usize, seed: u64) -> Self {
        SynthConfig {
            n_points,
            channels,
            steps,
            seed,
            noise_sigma: 0.01,
            orbit_radius: 0.28,
            n_bumps: 3,
            period: 60.0,
        }
    }
}

/// Deterministic synthetic diffusion stream with the default drift and noise.
pub fn synth_diffusion(n_points: usize, channels: usize, steps: usize, seed: u64) -> StreamDataset {
    synth_with(&SynthConfig::new(n_points, channels, steps, seed))
}

pub fn synth_with(cfg: &SynthConfig) -> StreamDataset {
    assert!(cfg.n_points >= 4, "synthetic stream needs at least 4 points");
    assert!(cfg.channels >= 1 && cfg.steps >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (n, u) = (cfg.n_points, cfg.channels);

    let raw = NdArray::new(
        vec![n, 2],
        (0..2 * n).map(|_| rng.random_range(0.0..1.0)).collect(),
    )
    .expect("shape matches count");
    let station_coords = normalize_coords(&raw);

    struct Bump {
        amp: f64,
        width2: f64,
        period: f64,
    }
    let bumps: Vec<Bump> = (0..cfg.n_bumps)
        .map(|_| {
            let width = rng.random_range(0.12..0.2);
            Bump {
                amp: rng.random_range(0.6..1.0),
                width2: 2.0 * width * width,
                period: cfg.period * rng.random_range(0.8..1.25),
            }
        })
        .collect();
    // per-channel, per-bump orbit phase
    let phases: Vec<f64> = (0..u * cfg.n_bumps)
        .map(|_| rng.random_range(0.0..1.0))
        .collect();

    let station_ids: Vec<String> = (0..n).map(|s| format!("s{s:04}")).collect();
    let channel_names: Vec<String> = (0..u).map(|c| format!("ch{c}")).collect();
    let coords = replicate_coords(&station_coords, u);

    let mut frames = Vec::with_capacity(cfg.steps);
    for t in 0..cfg.steps {
        let mut values = NdArray::zeros(vec![u, n, 1]);
        for c in 0..u {
            for (b, bump) in bumps.iter().enumerate() {
                let theta = std::f64::consts::TAU
                    * (t as f64 / bump.period + phases[c * cfg.n_bumps + b]);
                let cx = 0.5 + cfg.orbit_radius * theta.cos();
                let cy = 0.5 + cfg.orbit_radius * theta.sin();
                for s in 0..n {
                    let dx = station_coords.at(&[s, 0]) - cx;
                    let dy = station_coords.at(&[s, 1]) - cy;
                    let prev = values.at(&[c, s, 0]);
                    values.set(
                        &[c, s, 0],
                        prev + bump.amp * (-(dx * dx + dy * dy) / bump.width2).exp(),
                    );
                }
            }
            for s in 0..n {
                if cfg.noise_sigma > 0.0 {
                    // Box-Muller from two uniforms, deterministic per seed
                    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                    let u2: f64 = rng.random_range(0.0..1.0);
                    let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                    let prev = values.at(&[c, s, 0]);
                    values.set(&[c, s, 0], prev + cfg.noise_sigma * z);
                }
            }
        }
        frames.push(
            PointCloudFrame::new(values, coords.clone(), t as i64).expect("valid synth frame"),
        );
    }
    StreamDataset {
        frames,
        station_ids,
        station_coords,
        channel_names,
        interval: 1,
    }
}

/// Sliding windows of `history` + `horizon` frames at the given stride.
/// Yields `floor((T - history - horizon) / stride) + 1` samples.
pub fn window_dataset(
    dataset: &StreamDataset,
    history: usize,
    horizon: usize,
    stride: usize,
) -> Result<Vec<Sample>> {
    assert!(history >= 1 && horizon >= 1 && stride >= 1);
    let t_len = dataset.frames.len();
    let needed = history + horizon;
    if t_len < needed {
        return Err(DataError::TooShort {
            frames: t_len,
            required: needed,
        });
    }
    let count = (t_len - needed) / stride + 1;
    let mut samples = Vec::with_capacity(count);
    for w in 0..count {
        let start = w * stride;
        samples.push(Sample {
            history: dataset.frames[start..start + history].to_vec(),
            target: dataset.frames[start + history..start + needed].to_vec(),
        });
    }
    Ok(samples)
}

/// Chronological split of a window list: the first `floor(ratio * count)`
/// samples train, the rest test. No shuffling across the boundary; every
/// test window starts after every training window.
pub fn split_windows(samples: &[Sample], ratio: f64) -> (&[Sample], &[Sample]) {
    assert!((0.0..=1.0).contains(&ratio), "ratio must be in [0, 1]");
    let cut = ((samples.len() as f64) * ratio).floor() as usize;
    samples.split_at(cut.min(samples.len()))
}
