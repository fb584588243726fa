//! Loading sensor histories from the jet-engine text format and from long
//! CSV files, constant-channel removal and stratified splitting.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exposure::{DataError, Dataset, UnitRecord};

/// Pooled standard deviation under which a channel counts as constant.
pub const CONSTANT_SD: f64 = 1e-8;

/// Leading columns of a jet-engine row before the sensors: unit, cycle and
/// three operational settings.
const JET_LEADING_COLUMNS: usize = 5;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}, line {line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: duplicate row for unit {unit}, cycle {cycle}")]
    DuplicateRow { path: PathBuf, unit: u32, cycle: f64 },
    #[error("{path}: unit {unit} cycles are not increasing ({prev} then {next})")]
    NonMonotone { path: PathBuf, unit: u32, prev: f64, next: f64 },
    #[error("{path}: unit {unit} has more than one status value")]
    StatusNotConstant { path: PathBuf, unit: u32 },
    #[error("{path}: no units with at least two cycles")]
    NoUnits { path: PathBuf },
    #[error("every sensor channel is constant")]
    AllConstant,
    #[error("sources disagree on the sensor layout")]
    LayoutMismatch,
    #[error("invalid split: {0}")]
    Split(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schema {
    JetEngineText,
    LongCsv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub seed: u64,
    pub train_fraction: f64,
    pub test_fraction: f64,
    pub train_units: usize,
    pub test_units: usize,
}

/// Provenance of a loaded dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub sources: Vec<String>,
    pub schema: Schema,
    pub sensor_names: Vec<String>,
    /// Channels removed as constant; together with `sensor_names` these are
    /// the raw channels.
    pub dropped_sensors: Vec<String>,
    pub units: usize,
    pub failed: usize,
    pub censored: usize,
    pub split: Option<SplitInfo>,
}

impl DatasetManifest {
    pub fn describe(sources: Vec<String>, schema: Schema, data: &Dataset, dropped: Vec<String>) -> Self {
        let failed = data.failed_count();
        Self {
            sources,
            schema,
            sensor_names: data.sensor_names.clone(),
            dropped_sensors: dropped,
            units: data.len(),
            failed,
            censored: data.len() - failed,
            split: None,
        }
    }
}

/// One jet-engine text file with an optional remaining-life file.
///
/// Without a truth file every unit is taken to run to failure. With one,
/// line `k` holds the remaining cycles of unit `k`: zero marks a failure,
/// anything positive a unit censored at its last cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JetEngineSource {
    pub path: PathBuf,
    pub truth: Option<PathBuf>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

struct RawUnit {
    unit_id: u32,
    rows: Vec<(f64, Vec<f64>)>,
}

fn parse_jet_rows(path: &Path) -> Result<(usize, Vec<RawUnit>), IngestError> {
    let file = File::open(path).map_err(io_err(path))?;
    let parse_err = |line: usize, reason: String| IngestError::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut width: Option<usize> = None;
    let mut by_unit: HashMap<u32, Vec<(f64, Vec<f64>)>> = HashMap::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(io_err(path))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        match width {
            None if fields.len() <= JET_LEADING_COLUMNS => {
                return Err(parse_err(
                    line_no,
                    format!("expected unit, cycle, 3 settings and sensors; got {} fields", fields.len()),
                ))
            }
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(parse_err(line_no, format!("expected {w} fields, got {}", fields.len())))
            }
            Some(_) => {}
        }
        let unit: u32 = fields[0]
            .parse()
            .map_err(|_| parse_err(line_no, format!("unit id `{}` is not an integer", fields[0])))?;
        let mut numbers = Vec::with_capacity(fields.len() - 1);
        for f in &fields[1..] {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(line_no, format!("`{f}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(line_no, format!("`{f}` is not finite")));
            }
            numbers.push(v);
        }
        let cycle = numbers[0];
        let sensors = numbers[JET_LEADING_COLUMNS - 1..].to_vec();
        by_unit.entry(unit).or_default().push((cycle, sensors));
    }
    let width = width.ok_or_else(|| IngestError::NoUnits { path: path.to_path_buf() })?;
    let mut units: Vec<RawUnit> = by_unit
        .into_iter()
        .map(|(unit_id, mut rows)| {
            rows.sort_by(|a, b| a.0.total_cmp(&b.0));
            RawUnit { unit_id, rows }
        })
        .collect();
    units.sort_by_key(|u| u.unit_id);
    for u in &units {
        if let Some(w) = u.rows.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(IngestError::DuplicateRow {
                path: path.to_path_buf(),
                unit: u.unit_id,
                cycle: w[0].0,
            });
        }
    }
    Ok((width - JET_LEADING_COLUMNS, units))
}

fn read_truth(path: &Path) -> Result<Vec<f64>, IngestError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let field = line.trim();
        if field.is_empty() {
            continue;
        }
        let v: f64 = field.parse().map_err(|_| IngestError::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            reason: format!("`{field}` is not a remaining-life value"),
        })?;
        if !(v >= 0.0) {
            return Err(IngestError::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                reason: format!("remaining life {v} is negative"),
            });
        }
        out.push(v);
    }
    Ok(out)
}

fn load_jet_source(src: &JetEngineSource) -> Result<(usize, Vec<UnitRecord>), IngestError> {
    let (sensors, raw) = parse_jet_rows(&src.path)?;
    let truth = src.truth.as_deref().map(read_truth).transpose()?;
    let mut units = Vec::with_capacity(raw.len());
    for u in raw {
        let failed = match &truth {
            None => true,
            Some(rul) => {
                let k = u.unit_id as usize;
                if k == 0 || k > rul.len() {
                    return Err(IngestError::Parse {
                        path: src.truth.clone().unwrap_or_default(),
                        line: k,
                        reason: format!("no remaining-life entry for unit {}", u.unit_id),
                    });
                }
                rul[k - 1] == 0.0
            }
        };
        if u.rows.len() < 2 {
            log::warn!(
                "{}: unit {} has {} cycle(s); dropped",
                src.path.display(),
                u.unit_id,
                u.rows.len()
            );
            continue;
        }
        let (cycles, signals) = u.rows.into_iter().unzip();
        units.push(UnitRecord {
            unit_id: u.unit_id,
            cycles,
            signals,
            failed,
        });
    }
    if units.is_empty() {
        return Err(IngestError::NoUnits { path: src.path.clone() });
    }
    Ok((sensors, units))
}

/// Loads one jet-engine text file (see [`JetEngineSource`]).
pub fn load_jet_engine(train_path: &Path, truth_path: Option<&Path>) -> Result<(Dataset, DatasetManifest), IngestError> {
    load_jet_engine_sources(&[JetEngineSource {
        path: train_path.to_path_buf(),
        truth: truth_path.map(Path::to_path_buf),
    }])
}

/// Loads several jet-engine files into one dataset. With more than one
/// source, units are renumbered `1..` in source order. Constant channels
/// are detected on the pooled readings of all sources.
pub fn load_jet_engine_sources(sources: &[JetEngineSource]) -> Result<(Dataset, DatasetManifest), IngestError> {
    let loaded: Vec<(usize, Vec<UnitRecord>)> = sources.par_iter().map(load_jet_source).collect::<Result<_, _>>()?;
    let width = loaded.first().map_or(0, |l| l.0);
    if loaded.iter().any(|l| l.0 != width) {
        return Err(IngestError::LayoutMismatch);
    }
    let renumber = loaded.len() > 1;
    let mut units: Vec<UnitRecord> = loaded.into_iter().flat_map(|l| l.1).collect();
    if renumber {
        for (i, u) in units.iter_mut().enumerate() {
            u.unit_id = i as u32 + 1;
        }
    }
    let names: Vec<String> = (1..=width).map(|k| format!("sensor_{k}")).collect();
    let raw = Dataset::new(names, units)?;
    let (data, dropped) = drop_constant_sensors(&raw);
    if data.sensor_count() == 0 {
        return Err(IngestError::AllConstant);
    }
    if !dropped.is_empty() {
        log::info!("dropped constant channels: {}", dropped.join(", "));
    }
    let manifest = DatasetManifest::describe(
        sources.iter().map(|s| s.path.display().to_string()).collect(),
        Schema::JetEngineText,
        &data,
        dropped,
    );
    Ok((data, manifest))
}

/// Removes channels whose pooled standard deviation is below
/// [`CONSTANT_SD`]; returns the reduced dataset and the dropped names.
pub fn drop_constant_sensors(data: &Dataset) -> (Dataset, Vec<String>) {
    let keep: Vec<usize> = (0..data.sensor_count())
        .filter(|&j| {
            let v = data.pooled_sensor(j);
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            var.sqrt() >= CONSTANT_SD
        })
        .collect();
    let dropped = (0..data.sensor_count())
        .filter(|j| !keep.contains(j))
        .map(|j| data.sensor_names[j].clone())
        .collect();
    let units = data
        .units
        .iter()
        .map(|u| UnitRecord {
            signals: u.signals.iter().map(|row| keep.iter().map(|&j| row[j]).collect()).collect(),
            ..u.clone()
        })
        .collect();
    let reduced = Dataset {
        sensor_names: keep.iter().map(|&j| data.sensor_names[j].clone()).collect(),
        units,
    };
    (reduced, dropped)
}

const ID_COLUMNS: [&str; 3] = ["unit_id", "cycle", "status"];

/// Reads the long CSV schema: `unit_id, cycle, status, <sensors...>`, one
/// row per unit and cycle. Units keep their order of first appearance.
pub fn load_long_csv(path: &Path) -> Result<(Dataset, DatasetManifest), IngestError> {
    let csv_err = |source| IngestError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let mut pos = [0usize; 3];
    for (k, name) in ID_COLUMNS.iter().enumerate() {
        pos[k] = headers
            .iter()
            .position(|h| h == *name)
            .ok_or_else(|| IngestError::MissingColumn {
                path: path.to_path_buf(),
                column: (*name).into(),
            })?;
    }
    let sensor_cols: Vec<usize> = (0..headers.len()).filter(|c| !pos.contains(c)).collect();
    if sensor_cols.is_empty() {
        return Err(IngestError::MissingColumn {
            path: path.to_path_buf(),
            column: "sensor".into(),
        });
    }
    let sensor_names: Vec<String> = sensor_cols.iter().map(|&c| headers[c].to_string()).collect();

    let mut order: Vec<u32> = Vec::new();
    let mut units: HashMap<u32, UnitRecord> = HashMap::new();
    for (idx, record) in reader.records().enumerate() {
        // Header is line 1.
        let line = idx + 2;
        let record = record.map_err(csv_err)?;
        let field = |c: usize| record.get(c).unwrap_or("");
        let parse_err = |reason: String| IngestError::Parse {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let unit: u32 = field(pos[0])
            .parse()
            .map_err(|_| parse_err(format!("unit_id `{}` is not an integer", field(pos[0]))))?;
        let cycle: f64 = field(pos[1])
            .parse()
            .map_err(|_| parse_err(format!("cycle `{}` is not a number", field(pos[1]))))?;
        let failed = match field(pos[2]) {
            "1" => true,
            "0" => false,
            other => return Err(parse_err(format!("status `{other}` is not 0 or 1"))),
        };
        let mut row = Vec::with_capacity(sensor_cols.len());
        for &c in &sensor_cols {
            let v: f64 = field(c)
                .parse()
                .map_err(|_| parse_err(format!("`{}` in column `{}` is not a number", field(c), &headers[c])))?;
            row.push(v);
        }
        let entry = units.entry(unit).or_insert_with(|| {
            order.push(unit);
            UnitRecord {
                unit_id: unit,
                cycles: Vec::new(),
                signals: Vec::new(),
                failed,
            }
        });
        if entry.failed != failed {
            return Err(IngestError::StatusNotConstant {
                path: path.to_path_buf(),
                unit,
            });
        }
        if let Some(&prev) = entry.cycles.last() {
            if cycle <= prev && entry.cycles.contains(&cycle) {
                return Err(IngestError::DuplicateRow {
                    path: path.to_path_buf(),
                    unit,
                    cycle,
                });
            }
            if cycle < prev {
                return Err(IngestError::NonMonotone {
                    path: path.to_path_buf(),
                    unit,
                    prev,
                    next: cycle,
                });
            }
        }
        entry.cycles.push(cycle);
        entry.signals.push(row);
    }
    let records: Vec<UnitRecord> = order.iter().map(|id| units.remove(id).expect("unit seen")).collect();
    let data = Dataset::new(sensor_names, records)?;
    let manifest = DatasetManifest::describe(vec![path.display().to_string()], Schema::LongCsv, &data, Vec::new());
    Ok((data, manifest))
}

/// Writes `data` in the long CSV schema read by [`load_long_csv`].
pub fn write_csv(data: &Dataset, path: &Path) -> Result<(), IngestError> {
    let file = File::create(path).map_err(io_err(path))?;
    write_csv_to(data, file).map_err(|source| IngestError::Csv {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_csv_to<W: Write>(data: &Dataset, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = ID_COLUMNS.to_vec();
    header.extend(data.sensor_names.iter().map(String::as_str));
    w.write_record(&header)?;
    let mut fields: Vec<String> = Vec::with_capacity(header.len());
    for unit in &data.units {
        let status = if unit.failed { "1" } else { "0" };
        for (cycle, row) in unit.cycles.iter().zip(&unit.signals) {
            fields.clear();
            fields.push(unit.unit_id.to_string());
            fields.push(cycle.to_string());
            fields.push(status.into());
            fields.extend(row.iter().map(f64::to_string));
            w.write_record(&fields)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Stratified split on status: each stratum contributes
/// `round(train_frac · size)` units to training. Both parts keep the
/// original unit order.
pub fn split(data: &Dataset, train_frac: f64, seed: u64) -> Result<(Dataset, Dataset), IngestError> {
    if !(0.0..=1.0).contains(&train_frac) {
        return Err(IngestError::Split(format!("train fraction {train_frac} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    for status in [true, false] {
        let mut idx: Vec<usize> = (0..data.len()).filter(|&i| data.units[i].failed == status).collect();
        idx.shuffle(&mut rng);
        let take = (train_frac * idx.len() as f64).round() as usize;
        train.extend_from_slice(&idx[..take]);
    }
    train.sort_unstable();
    let test: Vec<usize> = (0..data.len()).filter(|i| train.binary_search(i).is_err()).collect();
    Ok((data.subset(&train), data.subset(&test)))
}

/// Seeded random subset with `n_failed` failures and `n_censored` censored
/// units, in original order.
pub fn subsample(data: &Dataset, n_failed: usize, n_censored: usize, seed: u64) -> Result<Dataset, IngestError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::new();
    for (status, want) in [(true, n_failed), (false, n_censored)] {
        let mut idx: Vec<usize> = (0..data.len()).filter(|&i| data.units[i].failed == status).collect();
        if idx.len() < want {
            return Err(IngestError::Split(format!(
                "requested {want} {} units, only {} available",
                if status { "failed" } else { "censored" },
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        chosen.extend_from_slice(&idx[..want]);
    }
    chosen.sort_unstable();
    Ok(data.subset(&chosen))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn jet_line(unit: u32, cycle: u32, sensors: &[f64]) -> String {
        let mut s = format!("{unit} {cycle} 0.0023 -0.0003 100.0");
        for v in sensors {
            s.push_str(&format!(" {v}"));
        }
        s
    }

    fn jet_file(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    /// 21 channels of which 5 are constant (columns 0, 4, 9, 17, 20).
    fn engine_lines() -> Vec<String> {
        let mut lines = Vec::new();
        for unit in 1..=3u32 {
            for cycle in 1..=4u32 {
                let s: Vec<f64> = (0..21)
                    .map(|j| match j {
                        0 | 4 | 9 | 17 | 20 => 518.67,
                        _ => j as f64 + 0.1 * cycle as f64 * unit as f64,
                    })
                    .collect();
                lines.push(jet_line(unit, cycle, &s));
            }
        }
        lines
    }

    #[test]
    fn jet_engine_drops_constant_channels() {
        let f = jet_file(&engine_lines());
        let (data, manifest) = load_jet_engine(f.path(), None).unwrap();
        assert_eq!(data.sensor_count(), 16);
        assert_eq!(manifest.dropped_sensors, vec!["sensor_1", "sensor_5", "sensor_10", "sensor_18", "sensor_21"]);
        assert_eq!(manifest.sensor_names.len() + manifest.dropped_sensors.len(), 21);
        assert_eq!(data.len(), 3);
        assert!(data.units.iter().all(|u| u.failed && u.event_time() == 4.0));
    }

    #[test]
    fn shuffled_rows_give_identical_dataset() {
        let lines = engine_lines();
        let mut shuffled = lines.clone();
        shuffled.reverse();
        shuffled.swap(1, 7);
        let a = load_jet_engine(jet_file(&lines).path(), None).unwrap().0;
        let b = load_jet_engine(jet_file(&shuffled).path(), None).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn malformed_row_reports_line() {
        let mut lines = engine_lines();
        lines[5] = lines[5].replacen("100.0", "abc", 1);
        let err = load_jet_engine(jet_file(&lines).path(), None).unwrap_err();
        assert!(matches!(err, IngestError::Parse { line: 6, .. }), "{err}");
        let mut short = engine_lines();
        short[2] = "1 3 0.1".into();
        let err = load_jet_engine(jet_file(&short).path(), None).unwrap_err();
        assert!(matches!(err, IngestError::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn single_cycle_unit_dropped() {
        let mut lines = engine_lines();
        let s: Vec<f64> = (0..21).map(|j| j as f64).collect();
        lines.push(jet_line(9, 1, &s));
        let (data, _) = load_jet_engine(jet_file(&lines).path(), None).unwrap();
        assert_eq!(data.len(), 3);
        assert!(data.units.iter().all(|u| u.unit_id != 9));
    }

    #[test]
    fn truth_file_sets_status() {
        let f = jet_file(&engine_lines());
        let truth = jet_file(&["0".into(), "17".into(), "0".into()]);
        let (data, m) = load_jet_engine(f.path(), Some(truth.path())).unwrap();
        let status: Vec<bool> = data.units.iter().map(|u| u.failed).collect();
        assert_eq!(status, vec![true, false, true]);
        assert_eq!((m.failed, m.censored), (2, 1));
    }

    #[test]
    fn multiple_sources_renumber_units() {
        let a = jet_file(&engine_lines());
        let b = jet_file(&engine_lines());
        let truth = jet_file(&["5".into(), "6".into(), "7".into()]);
        let (data, m) = load_jet_engine_sources(&[
            JetEngineSource {
                path: a.path().into(),
                truth: None,
            },
            JetEngineSource {
                path: b.path().into(),
                truth: Some(truth.path().into()),
            },
        ])
        .unwrap();
        let ids: Vec<u32> = data.units.iter().map(|u| u.unit_id).collect();
        assert_eq!(ids, vec![1, 2, 3, 4, 5, 6]);
        assert_eq!((m.failed, m.censored), (3, 3));
    }

    fn small_dataset() -> Dataset {
        let units = (0..6)
            .map(|i| UnitRecord {
                unit_id: 10 + i,
                cycles: (1..=3 + i).map(f64::from).collect(),
                signals: (0..3 + i).map(|k| vec![k as f64 * 0.1 + 1.0 / 3.0, -(i as f64) * 1e-17]).collect(),
                failed: i % 2 == 0,
            })
            .collect();
        Dataset::new(vec!["a".into(), "b".into()], units).unwrap()
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let data = small_dataset();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_csv(&data, f.path()).unwrap();
        let (back, m) = load_long_csv(f.path()).unwrap();
        assert_eq!(back, data);
        assert_eq!(m.schema, Schema::LongCsv);
    }

    fn csv_file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_errors() {
        let dup = csv_file("unit_id,cycle,status,s1\n1,1,1,0.5\n1,1,1,0.7\n");
        assert!(matches!(load_long_csv(dup.path()), Err(IngestError::DuplicateRow { unit: 1, .. })));
        let back = csv_file("unit_id,cycle,status,s1\n1,2,1,0.5\n1,1,1,0.7\n");
        assert!(matches!(load_long_csv(back.path()), Err(IngestError::NonMonotone { .. })));
        let missing = csv_file("unit_id,cycle,s1\n1,1,0.5\n");
        assert!(matches!(
            load_long_csv(missing.path()),
            Err(IngestError::MissingColumn { ref column, .. }) if column == "status"
        ));
        let mixed = csv_file("unit_id,cycle,status,s1\n1,1,1,0.5\n1,2,0,0.7\n");
        assert!(matches!(load_long_csv(mixed.path()), Err(IngestError::StatusNotConstant { .. })));
        let bad = csv_file("unit_id,cycle,status,s1\n1,1,1,0.5\n1,2,1,x\n");
        assert!(matches!(load_long_csv(bad.path()), Err(IngestError::Parse { line: 3, .. })));
    }

    fn balanced(n_failed: usize, n_censored: usize) -> Dataset {
        let units = (0..n_failed + n_censored)
            .map(|i| UnitRecord {
                unit_id: i as u32,
                cycles: vec![1.0, 2.0],
                signals: vec![vec![0.0], vec![1.0]],
                failed: i < n_failed,
            })
            .collect();
        Dataset::new(vec!["s".into()], units).unwrap()
    }

    #[test]
    fn split_examples() {
        let data = balanced(100, 100);
        let (train, test) = split(&data, 0.8, 3).unwrap();
        assert_eq!((train.len(), train.failed_count()), (160, 80));
        assert_eq!(test.len(), 40);
        let (all, none) = split(&data, 1.0, 3).unwrap();
        assert_eq!((all.len(), none.len()), (200, 0));
        assert_eq!(split(&data, 0.8, 3).unwrap().0, train);
        assert_ne!(split(&data, 0.8, 4).unwrap().0, train);
        assert!(split(&data, 1.5, 3).is_err());
    }

    #[test]
    fn subsample_counts() {
        let data = balanced(30, 40);
        let s = subsample(&data, 10, 20, 1).unwrap();
        assert_eq!((s.len(), s.failed_count()), (30, 10));
        assert!(subsample(&data, 31, 0, 1).is_err());
    }

    proptest! {
        #[test]
        fn split_is_stratified_and_disjoint(n_f in 0usize..60, n_c in 0usize..60, frac in 0.05f64..1.0, seed in any::<u64>()) {
            prop_assume!(n_f + n_c > 0);
            let data = balanced(n_f, n_c);
            let (train, test) = split(&data, frac, seed).unwrap();
            prop_assert_eq!(train.len() + test.len(), data.len());
            let mut ids: Vec<u32> = train.units.iter().chain(&test.units).map(|u| u.unit_id).collect();
            ids.sort_unstable();
            ids.dedup();
            prop_assert_eq!(ids.len(), data.len());
            if !train.is_empty() {
                let overall = n_f as f64 / data.len() as f64;
                let in_train = train.failed_count() as f64 / train.len() as f64;
                prop_assert!((in_train - overall).abs() <= 1.0 / train.len() as f64 + 1e-12);
            }
        }
    }
}
