//! Versioned binary dataset files and the preprocessing stats report.
//!
//! Layout: magic + version header, global dims (T, F, D_in, cells), then
//! the three splits as length-prefixed sample blocks with little-endian
//! f32 features. Round-trips are bit-exact because samples store f32.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::DatasetSplit;
use crate::types::{Lateral, Longitudinal, ManeuverLabel, TrajectorySample};

const MAGIC: &[u8; 4] = b"LCDS";
const VERSION: u32 = 1;

/// Sample counts per split and per maneuver class, for the stats report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total_samples: usize,
    pub splits: Vec<SplitStats>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitStats {
    pub name: String,
    pub samples: usize,
    pub vehicles: usize,
    pub fraction: f64,
    pub per_class: Vec<ClassCount>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassCount {
    pub label: String,
    pub count: usize,
}

/// Count samples per split and per maneuver class.
pub fn dataset_stats(split: &DatasetSplit) -> DatasetStats {
    let total = split.total();
    let splits = split
        .splits()
        .iter()
        .map(|(name, samples)| {
            let mut per_class: Vec<ClassCount> = ManeuverLabel::all()
                .map(|l| ClassCount {
                    label: l.to_string(),
                    count: 0,
                })
                .collect();
            let mut vehicles = std::collections::HashSet::new();
            for s in samples.iter() {
                let idx = crate::types::mode_index(s.label.lateral, s.label.longitudinal);
                per_class[idx].count += 1;
                vehicles.insert(s.ego_id);
            }
            SplitStats {
                name: name.to_string(),
                samples: samples.len(),
                vehicles: vehicles.len(),
                fraction: if total > 0 {
                    samples.len() as f64 / total as f64
                } else {
                    0.0
                },
                per_class,
            }
        })
        .collect();
    DatasetStats {
        total_samples: total,
        splits,
    }
}

fn dims_of(split: &DatasetSplit) -> (u32, u32, u32, u32) {
    for (_, samples) in split.splits() {
        if let Some(s) = samples.first() {
            return (
                s.history_len() as u32,
                s.future_len() as u32,
                s.feature_dim() as u32,
                s.num_cells() as u32,
            );
        }
    }
    (0, 0, 0, 0)
}

/// Write a dataset to `path`; [`load_dataset`] restores it bit-exactly.
pub fn save_dataset(split: &DatasetSplit, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    let (t, f, d, cells) = dims_of(split);
    for dim in [t, f, d, cells] {
        w.write_u32::<LittleEndian>(dim)?;
    }
    for (_, samples) in split.splits() {
        w.write_u64::<LittleEndian>(samples.len() as u64)?;
        for s in samples.iter() {
            if (s.history_len() as u32, s.future_len() as u32) != (t, f)
                || (s.feature_dim() as u32, s.num_cells() as u32) != (d, cells)
            {
                return Err(Error::Dataset("inconsistent sample dimensions".into()));
            }
            write_sample(&mut w, s)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_sample<W: Write>(w: &mut W, s: &TrajectorySample) -> Result<()> {
    w.write_u64::<LittleEndian>(s.ego_id)?;
    w.write_u64::<LittleEndian>(s.anchor_frame)?;
    w.write_u8(s.label.lateral.index() as u8)?;
    w.write_u8(s.label.longitudinal.index() as u8)?;
    for &v in s.ego_history.iter() {
        w.write_f32::<LittleEndian>(v)?;
    }
    for &m in s.neighbor_mask.iter() {
        w.write_u8(m as u8)?;
    }
    for &v in s.neighbor_histories.iter() {
        w.write_f32::<LittleEndian>(v)?;
    }
    for &v in s.future.iter() {
        w.write_f32::<LittleEndian>(v)?;
    }
    Ok(())
}

/// Load a dataset written by [`save_dataset`].
pub fn load_dataset(path: impl AsRef<Path>) -> Result<DatasetSplit> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Dataset("file too short for header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Dataset("bad magic; not a dataset file".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::Dataset(format!(
            "unsupported dataset version {version}, expected {VERSION}"
        )));
    }
    let t = r.read_u32::<LittleEndian>()? as usize;
    let f = r.read_u32::<LittleEndian>()? as usize;
    let d = r.read_u32::<LittleEndian>()? as usize;
    let cells = r.read_u32::<LittleEndian>()? as usize;
    if t > 1 << 20 || f > 1 << 20 || d > 1 << 10 || cells > 1 << 16 {
        return Err(Error::Dataset("implausible dimensions in header".into()));
    }

    let mut sections = Vec::with_capacity(3);
    for _ in 0..3 {
        let count = r.read_u64::<LittleEndian>().map_err(truncated)? as usize;
        let mut samples = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            samples.push(read_sample(&mut r, t, f, d, cells)?);
        }
        sections.push(samples);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Dataset("trailing bytes after last section".into()));
    }
    let mut it = sections.into_iter();
    Ok(DatasetSplit {
        train: it.next().unwrap(),
        validation: it.next().unwrap(),
        test: it.next().unwrap(),
    })
}

fn truncated(_: std::io::Error) -> Error {
    Error::Dataset("truncated dataset file".into())
}

fn read_sample<R: Read>(
    r: &mut R,
    t: usize,
    f: usize,
    d: usize,
    cells: usize,
) -> Result<TrajectorySample> {
    let ego_id = r.read_u64::<LittleEndian>().map_err(truncated)?;
    let anchor_frame = r.read_u64::<LittleEndian>().map_err(truncated)?;
    let lat = r.read_u8().map_err(truncated)?;
    let lon = r.read_u8().map_err(truncated)?;
    let label = ManeuverLabel {
        lateral: Lateral::from_index(lat as usize)
            .ok_or_else(|| Error::Dataset(format!("bad lateral label byte {lat}")))?,
        longitudinal: Longitudinal::from_index(lon as usize)
            .ok_or_else(|| Error::Dataset(format!("bad longitudinal label byte {lon}")))?,
    };

    fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>> {
        let mut out = vec![0f32; n];
        r.read_f32_into::<LittleEndian>(&mut out).map_err(truncated)?;
        Ok(out)
    }
    let ego = read_f32s(r, t * d)?;
    let mut mask_bytes = vec![0u8; cells * t];
    r.read_exact(&mut mask_bytes).map_err(truncated)?;
    let neighbors = read_f32s(r, cells * t * d)?;
    let future = read_f32s(r, f * 2)?;

    let ego_history = Array2::from_shape_vec((t, d), ego).map_err(|e| Error::Dataset(e.to_string()))?;
    let neighbor_histories =
        Array3::from_shape_vec((cells, t, d), neighbors).map_err(|e| Error::Dataset(e.to_string()))?;
    let neighbor_mask = Array2::from_shape_vec((cells, t), mask_bytes.iter().map(|&b| b != 0).collect())
        .map_err(|e| Error::Dataset(e.to_string()))?;
    let future = Array2::from_shape_vec((f, 2), future).map_err(|e| Error::Dataset(e.to_string()))?;

    Ok(TrajectorySample {
        ego_history,
        neighbor_histories,
        neighbor_mask,
        future,
        label,
        ego_id,
        anchor_frame,
    })
}
