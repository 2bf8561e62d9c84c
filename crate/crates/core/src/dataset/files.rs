//! Tabular file formats.
//!
//! Sample files (train and test):
//! `sample_id,scenario_id,lat_1,lon_1,lat_2,lon_2,img_1..img_5,lidar_1..lidar_5,radar_1..radar_5[,power_1..power_Q,beam_label]`
//!
//! Hidden-label file: `sample_id,beam_label,power_1..power_Q`.
//! Prediction file: `sample_id,beam_1..beam_k`.
//!
//! Beam indices are 1-based on disk. Floats carry nine significant digits.

use std::collections::HashMap;
use std::path::Path;

use super::{ChallengeSample, ModalityRefs, POSITION_LEN, SEQUENCE_LEN};
use crate::beamsim::PowerVector;
use crate::error::{Error, Result};
use crate::geodesy::GeoPosition;
use crate::metrics::PredictionSet;

/// `%.9g`-style formatting: nine significant digits, fixed notation for
/// moderate exponents, trailing zeros trimmed.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { format!("{x}") };
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim(&format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim(mantissa))
    }
}

/// The value a float takes after a write/read cycle.
pub fn quantize_sig9(x: f64) -> f64 {
    format_sig9(x).parse().expect("formatted float parses")
}

/// Whether a sample file carries labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFileKind {
    Train,
    Test,
}

fn io_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            row: 0,
            column: String::new(),
            message: format!("{other:?}"),
        },
    }
}

fn sample_header(kind: SampleFileKind, num_beams: usize) -> Vec<String> {
    let mut h: Vec<String> = vec!["sample_id".into(), "scenario_id".into()];
    for i in 1..=POSITION_LEN {
        h.push(format!("lat_{i}"));
        h.push(format!("lon_{i}"));
    }
    for prefix in ["img", "lidar", "radar"] {
        h.extend((1..=SEQUENCE_LEN).map(|i| format!("{prefix}_{i}")));
    }
    if kind == SampleFileKind::Train {
        h.extend((1..=num_beams).map(|i| format!("power_{i}")));
        h.push("beam_label".into());
    }
    h
}

/// Writes samples. `Train` files require a power vector and label on every
/// sample; `Test` files omit both columns.
pub fn write_samples(path: &Path, samples: &[ChallengeSample], kind: SampleFileKind) -> Result<()> {
    let num_beams = match kind {
        SampleFileKind::Test => 0,
        SampleFileKind::Train => samples
            .first()
            .and_then(|s| s.power_vector.as_ref())
            .map_or(0, PowerVector::len),
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(sample_header(kind, num_beams)).map_err(|e| io_err(path, e))?;
    for s in samples {
        let mut row: Vec<String> = vec![s.sample_id.to_string(), s.scenario_id.to_string()];
        for p in &s.positions {
            row.push(format_sig9(p.latitude));
            row.push(format_sig9(p.longitude));
        }
        for refs in [&s.modality_refs.image, &s.modality_refs.lidar, &s.modality_refs.radar] {
            row.extend(refs.iter().cloned());
        }
        if kind == SampleFileKind::Train {
            let (Some(pv), Some(label)) = (&s.power_vector, s.label) else {
                return Err(Error::Contract(format!("sample {} has no label for a training file", s.sample_id)));
            };
            if pv.len() != num_beams {
                return Err(Error::Shape(format!(
                    "sample {} has {} powers, file has {num_beams} columns",
                    s.sample_id,
                    pv.len()
                )));
            }
            row.extend(pv.as_slice().iter().map(|&p| format_sig9(p)));
            row.push((label + 1).to_string());
        }
        w.write_record(&row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

struct Columns {
    index: HashMap<String, usize>,
}

impl Columns {
    fn new(header: &csv::StringRecord) -> Self {
        Self {
            index: header.iter().enumerate().map(|(i, h)| (h.trim().to_string(), i)).collect(),
        }
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.index.get(name).copied().ok_or_else(|| Error::Parse {
            row: 1,
            column: name.into(),
            message: "missing column".into(),
        })
    }

    fn has(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    /// `prefix_1, prefix_2, ...` until the first gap.
    fn numbered(&self, prefix: &str) -> Vec<usize> {
        (1..).map_while(|i| self.index.get(&format!("{prefix}_{i}")).copied()).collect()
    }
}

fn field<'r>(rec: &'r csv::StringRecord, idx: usize, row: usize, column: &str) -> Result<&'r str> {
    rec.get(idx).map(str::trim).ok_or_else(|| Error::Parse {
        row,
        column: column.into(),
        message: "row is shorter than the header".into(),
    })
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, row: usize, column: &str) -> Result<T> {
    let raw = field(rec, idx, row, column)?;
    raw.parse().map_err(|_| Error::Parse {
        row,
        column: column.into(),
        message: format!("cannot parse `{raw}`"),
    })
}

fn parse_beam(rec: &csv::StringRecord, idx: usize, row: usize, column: &str) -> Result<usize> {
    let one_based: usize = parse_field(rec, idx, row, column)?;
    one_based.checked_sub(1).ok_or_else(|| Error::Parse {
        row,
        column: column.into(),
        message: "beam indices are 1-based".into(),
    })
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| io_err(path, e))
}

/// Reads a train or test sample file; the kind is inferred from the header.
pub fn read_samples(path: &Path) -> Result<(SampleFileKind, Vec<ChallengeSample>)> {
    let mut rdr = reader(path)?;
    let header = rdr.headers().map_err(|e| io_err(path, e))?.clone();
    let cols = Columns::new(&header);
    let id_col = cols.require("sample_id")?;
    let scen_col = cols.require("scenario_id")?;
    let mut pos_cols = Vec::new();
    for i in 1..=POSITION_LEN {
        pos_cols.push((cols.require(&format!("lat_{i}"))?, cols.require(&format!("lon_{i}"))?));
    }
    let mut ref_cols = Vec::new();
    for prefix in ["img", "lidar", "radar"] {
        let idx = (1..=SEQUENCE_LEN)
            .map(|i| cols.require(&format!("{prefix}_{i}")))
            .collect::<Result<Vec<_>>>()?;
        ref_cols.push(idx);
    }
    let power_cols = cols.numbered("power");
    let kind = if cols.has("beam_label") || !power_cols.is_empty() {
        if power_cols.is_empty() {
            cols.require("power_1")?;
        }
        cols.require("beam_label")?;
        SampleFileKind::Train
    } else {
        SampleFileKind::Test
    };

    let mut samples = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| io_err(path, e))?;
        let mut positions = [GeoPosition {
            latitude: 0.0,
            longitude: 0.0,
        }; POSITION_LEN];
        for (k, &(lat, lon)) in pos_cols.iter().enumerate() {
            let latitude = parse_field(&rec, lat, row, &format!("lat_{}", k + 1))?;
            let longitude = parse_field(&rec, lon, row, &format!("lon_{}", k + 1))?;
            positions[k] = GeoPosition::new(latitude, longitude).map_err(|e| Error::Parse {
                row,
                column: format!("lat_{}", k + 1),
                message: e.to_string(),
            })?;
        }
        let refs = |m: usize, name: &str| -> Result<[String; SEQUENCE_LEN]> {
            let mut out: [String; SEQUENCE_LEN] = Default::default();
            for (k, &c) in ref_cols[m].iter().enumerate() {
                out[k] = field(&rec, c, row, &format!("{name}_{}", k + 1))?.to_string();
            }
            Ok(out)
        };
        let (power_vector, label) = match kind {
            SampleFileKind::Test => (None, None),
            SampleFileKind::Train => {
                let powers = power_cols
                    .iter()
                    .enumerate()
                    .map(|(k, &c)| parse_field::<f64>(&rec, c, row, &format!("power_{}", k + 1)))
                    .collect::<Result<Vec<_>>>()?;
                let pv = PowerVector::new(powers).map_err(|e| Error::Parse {
                    row,
                    column: "power".into(),
                    message: e.to_string(),
                })?;
                let label = parse_beam(&rec, cols.require("beam_label")?, row, "beam_label")?;
                if label >= pv.len() {
                    return Err(Error::Parse {
                        row,
                        column: "beam_label".into(),
                        message: format!("beam {} outside codebook of {}", label + 1, pv.len()),
                    });
                }
                (Some(pv), Some(label))
            }
        };
        samples.push(ChallengeSample {
            sample_id: parse_field(&rec, id_col, row, "sample_id")?,
            scenario_id: parse_field(&rec, scen_col, row, "scenario_id")?,
            positions,
            modality_refs: ModalityRefs {
                image: refs(0, "img")?,
                lidar: refs(1, "lidar")?,
                radar: refs(2, "radar")?,
            },
            power_vector,
            label,
        });
    }
    Ok((kind, samples))
}

/// Ground truth withheld from a test set.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLabel {
    pub sample_id: u64,
    pub label: usize,
    pub power_vector: PowerVector,
}

pub fn write_hidden_labels(path: &Path, labels: &[HiddenLabel]) -> Result<()> {
    let q = labels.first().map_or(0, |l| l.power_vector.len());
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    let mut header = vec!["sample_id".to_string(), "beam_label".to_string()];
    header.extend((1..=q).map(|i| format!("power_{i}")));
    w.write_record(&header).map_err(|e| io_err(path, e))?;
    for l in labels {
        if l.power_vector.len() != q {
            return Err(Error::Shape(format!("sample {} has {} powers", l.sample_id, l.power_vector.len())));
        }
        let mut row = vec![l.sample_id.to_string(), (l.label + 1).to_string()];
        row.extend(l.power_vector.as_slice().iter().map(|&p| format_sig9(p)));
        w.write_record(&row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_hidden_labels(path: &Path) -> Result<Vec<HiddenLabel>> {
    let mut rdr = reader(path)?;
    let cols = Columns::new(&rdr.headers().map_err(|e| io_err(path, e))?.clone());
    let id_col = cols.require("sample_id")?;
    let label_col = cols.require("beam_label")?;
    cols.require("power_1")?;
    let power_cols = cols.numbered("power");
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| io_err(path, e))?;
        let powers = power_cols
            .iter()
            .enumerate()
            .map(|(k, &c)| parse_field::<f64>(&rec, c, row, &format!("power_{}", k + 1)))
            .collect::<Result<Vec<_>>>()?;
        let label = parse_beam(&rec, label_col, row, "beam_label")?;
        if label >= powers.len() {
            return Err(Error::Parse {
                row,
                column: "beam_label".into(),
                message: "beam outside codebook".into(),
            });
        }
        out.push(HiddenLabel {
            sample_id: parse_field(&rec, id_col, row, "sample_id")?,
            label,
            power_vector: PowerVector::new(powers).map_err(|e| Error::Parse {
                row,
                column: "power".into(),
                message: e.to_string(),
            })?,
        });
    }
    Ok(out)
}

pub fn write_predictions(path: &Path, rows: &[(u64, PredictionSet)]) -> Result<()> {
    let k = rows.first().map_or(0, |(_, p)| p.len());
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    let mut header = vec!["sample_id".to_string()];
    header.extend((1..=k).map(|i| format!("beam_{i}")));
    w.write_record(&header).map_err(|e| io_err(path, e))?;
    for (id, p) in rows {
        if p.len() != k {
            return Err(Error::Shape(format!("sample {id} has {} predictions, expected {k}", p.len())));
        }
        let mut row = vec![id.to_string()];
        row.extend(p.beams().iter().map(|b| (b + 1).to_string()));
        w.write_record(&row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a prediction file; `num_beams` bounds the beam indices.
pub fn read_predictions(path: &Path, num_beams: usize) -> Result<Vec<(u64, PredictionSet)>> {
    let mut rdr = reader(path)?;
    let cols = Columns::new(&rdr.headers().map_err(|e| io_err(path, e))?.clone());
    let id_col = cols.require("sample_id")?;
    cols.require("beam_1")?;
    let beam_cols = cols.numbered("beam");
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| io_err(path, e))?;
        let beams = beam_cols
            .iter()
            .enumerate()
            .map(|(k, &c)| parse_beam(&rec, c, row, &format!("beam_{}", k + 1)))
            .collect::<Result<Vec<_>>>()?;
        let set = PredictionSet::new(beams, num_beams).map_err(|e| Error::Parse {
            row,
            column: "beam".into(),
            message: e.to_string(),
        })?;
        out.push((parse_field(&rec, id_col, row, "sample_id")?, set));
    }
    Ok(out)
}
