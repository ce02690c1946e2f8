//! Sample CSV files and the manifest that lists them.
//!
//! A sample file has the header `sample_id,subject_id,trial_id,label,channel,v0,...,v{L-1}`
//! and one row per channel; label `-1` marks an unlabeled sample. A manifest
//! has one `path,num_classes,channels,length` line per sample file, paths
//! relative to the manifest.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use super::{SemiLabeledDataset, Series, TimeSeriesSample};
use crate::error::{Error, Result};

const FIXED: [&str; 5] = ["sample_id", "subject_id", "trial_id", "label", "channel"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub num_classes: usize,
    pub channels: usize,
    pub length: usize,
}

fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |msg: String| Error::Parse { path: path.to_path_buf(), line: n as u64 + 1, msg };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [file, classes, channels, length] = fields[..] else {
            return Err(parse_err(format!("expected path,num_classes,channels,length, got {line:?}")));
        };
        let num = |name: &str, v: &str| {
            v.parse::<usize>().map_err(|_| parse_err(format!("bad {name} {v:?}")))
        };
        entries.push(ManifestEntry {
            path: base.join(file),
            num_classes: num("num_classes", classes)?,
            channels: num("channels", channels)?,
            length: num("length", length)?,
        });
    }
    Ok(entries)
}

/// Loads every sample file named in a manifest into one dataset.
pub fn load_csv(manifest: &Path) -> Result<SemiLabeledDataset> {
    let entries = read_manifest(manifest)?;
    let Some(first) = entries.first() else {
        return Err(Error::EmptyDataset(format!("manifest {} lists no files", manifest.display())));
    };
    let mut samples = Vec::new();
    for e in &entries {
        if (e.num_classes, e.channels, e.length) != (first.num_classes, first.channels, first.length) {
            return Err(Error::Schema(format!(
                "manifest entry {} disagrees with {} on classes/channels/length",
                e.path.display(),
                first.path.display()
            )));
        }
        samples.extend(read_samples(&e.path, e.num_classes, e.channels, e.length)?);
    }
    SemiLabeledDataset::new(samples, first.num_classes)
}

/// Loads a single sample file.
pub fn load_sample_csv(path: &Path, num_classes: usize, channels: usize, length: usize) -> Result<SemiLabeledDataset> {
    SemiLabeledDataset::new(read_samples(path, num_classes, channels, length)?, num_classes)
}

struct Pending {
    sample: TimeSeriesSample,
    seen: Vec<bool>,
}

fn read_samples(path: &Path, num_classes: usize, channels: usize, length: usize) -> Result<Vec<TimeSeriesSample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let parse_err = |line: u64, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
    let csv_err = |e: csv::Error| {
        let line = e.position().map(|p| p.line()).unwrap_or(0);
        parse_err(line, e.to_string())
    };

    let header = reader.headers().map_err(csv_err)?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::EmptyDataset(format!("{} is empty", path.display())));
    }
    let expected: Vec<String> =
        FIXED.iter().map(|s| s.to_string()).chain((0..length).map(|t| format!("v{t}"))).collect();
    if header.iter().map(str::trim).ne(expected.iter().map(String::as_str)) {
        return Err(Error::Schema(format!(
            "{}: header must be {},v0..v{} ({} columns), got {} columns",
            path.display(),
            FIXED.join(","),
            length.saturating_sub(1),
            expected.len(),
            header.len()
        )));
    }

    let mut order: Vec<String> = Vec::new();
    let mut pending: HashMap<String, Pending> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| record[i].trim();
        let label: i64 = field(3).parse().map_err(|_| parse_err(line, format!("bad label {:?}", field(3))))?;
        let label = match label {
            -1 => None,
            y if y >= 0 && (y as usize) < num_classes => Some(y as usize),
            y => return Err(Error::LabelRange { label: y, num_classes }),
        };
        let channel: usize =
            field(4).parse().map_err(|_| parse_err(line, format!("bad channel {:?}", field(4))))?;
        if channel >= channels {
            return Err(Error::Schema(format!(
                "{}:{line}: channel {channel} but the manifest declares {channels}",
                path.display()
            )));
        }
        let id = field(0).to_string();
        let entry = pending.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Pending {
                sample: TimeSeriesSample {
                    sample_id: id.clone(),
                    subject_id: field(1).to_string(),
                    trial_id: field(2).to_string(),
                    label,
                    series: Series { channels, length, values: vec![0.0; channels * length] },
                },
                seen: vec![false; channels],
            }
        });
        let s = &entry.sample;
        if s.subject_id != field(1) || s.trial_id != field(2) || s.label != label {
            return Err(parse_err(line, format!("sample {id} changes subject, trial or label between rows")));
        }
        if std::mem::replace(&mut entry.seen[channel], true) {
            return Err(parse_err(line, format!("sample {id} repeats channel {channel}")));
        }
        let dst = &mut entry.sample.series.values[channel * length..(channel + 1) * length];
        for (t, slot) in dst.iter_mut().enumerate() {
            let raw = field(5 + t);
            *slot = raw.parse().map_err(|_| parse_err(line, format!("bad value {raw:?} in column v{t}")))?;
        }
    }
    if order.is_empty() {
        return Err(Error::EmptyDataset(format!("{} has no rows", path.display())));
    }
    order
        .into_iter()
        .map(|id| {
            let p = pending.remove(&id).expect("recorded id");
            let have = p.seen.iter().filter(|s| **s).count();
            if have != channels {
                return Err(Error::Schema(format!("sample {id} has {have} channels, expected {channels}")));
            }
            Ok(p.sample)
        })
        .collect()
}

/// Writes a dataset as one sample file. Values use the shortest decimal form
/// that parses back to the same double.
pub fn write_csv(dataset: &SemiLabeledDataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let to_io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let header: Vec<String> =
        FIXED.iter().map(|s| s.to_string()).chain((0..dataset.length()).map(|t| format!("v{t}"))).collect();
    w.write_record(&header).map_err(to_io)?;
    for s in dataset.samples() {
        let label = s.label.map_or("-1".to_string(), |y| y.to_string());
        for c in 0..s.series.channels {
            let mut row = vec![s.sample_id.clone(), s.subject_id.clone(), s.trial_id.clone(), label.clone(), c.to_string()];
            row.extend(s.series.channel(c).iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(to_io)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `samples.csv` and `manifest.txt` into `dir`, returning the manifest path.
pub fn write_dataset(dataset: &SemiLabeledDataset, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_csv(dataset, &dir.join("samples.csv"))?;
    let manifest = dir.join("manifest.txt");
    let mut f = File::create(&manifest).map_err(|e| Error::io(&manifest, e))?;
    writeln!(f, "samples.csv,{},{},{}", dataset.num_classes(), dataset.channels(), dataset.length())
        .map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}
