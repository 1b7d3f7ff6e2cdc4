use std::fs::File;
use std::path::{Path, PathBuf};

use timbre_core::ratings::RatingRecord;
use timbre_core::vae::EpochMetrics;

use crate::error::{Error, Result};

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv { path: path.to_path_buf(), source }
}

/// Columns `study,subject,instrument_a,instrument_b,value,scale_min,scale_max`.
pub fn read_ratings(path: &Path) -> Result<Vec<RatingRecord>> {
    if !path.is_file() {
        return Err(Error::Config(format!("ratings file {} does not exist", path.display())));
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(csv_err(path))?;
    reader.deserialize().collect::<Result<_, _>>().map_err(csv_err(path))
}

pub fn write_ratings(path: &Path, records: &[RatingRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in records {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(Error::io(path))
}

/// One number per line; blank lines and `#` comments are skipped. A
/// non-numeric first line is treated as a header.
pub fn read_series(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split(',').next().unwrap_or("").trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if out.is_empty() && i == 0 => continue,
            Err(_) => return Err(Error::format(path, format!("line {}: `{line}` is not a number", i + 1))),
        }
    }
    Ok(out)
}

const METRICS_HEADER: [&str; 9] = ["epoch", "stage", "beta", "alpha", "recon", "kl", "reg", "test_recon", "test_ll"];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn metrics_row(m: &EpochMetrics) -> [String; 9] {
    [
        m.epoch.to_string(),
        m.stage.to_string(),
        m.beta.to_string(),
        m.alpha.to_string(),
        m.recon.to_string(),
        m.kl.to_string(),
        opt(m.reg),
        opt(m.test_recon),
        opt(m.test_ll),
    ]
}

/// Appends one metrics row per epoch, flushing as it goes.
pub struct MetricsWriter {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl MetricsWriter {
    /// With `append`, an existing log is extended (used when resuming).
    pub fn create(path: &Path, append: bool) -> Result<Self> {
        let exists = append && path.is_file();
        let file = std::fs::OpenOptions::new()
            .create(true)
            .write(true)
            .append(exists)
            .truncate(!exists)
            .open(path)
            .map_err(Error::io(path))?;
        let mut writer = csv::Writer::from_writer(file);
        if !exists {
            writer.write_record(METRICS_HEADER).map_err(csv_err(path))?;
        }
        Ok(Self { path: path.to_path_buf(), writer })
    }

    pub fn push(&mut self, m: &EpochMetrics) -> Result<()> {
        self.writer.write_record(metrics_row(m)).map_err(csv_err(&self.path))?;
        self.writer.flush().map_err(Error::io(&self.path))
    }
}

pub fn write_metrics(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    let mut w = MetricsWriter::create(path, false)?;
    metrics.iter().try_for_each(|m| w.push(m))
}
