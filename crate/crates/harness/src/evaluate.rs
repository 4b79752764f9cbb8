//! Per-frame quality report over a directory of output frames.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use uta_core::metrics::{entropy, niqe, std_dev, NiqeModel};
use uta_core::Raster;

use crate::error::{Error, Result};

/// Label of the summary row.
pub const MEAN_ROW: &str = "mean";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Entropy,
    StdDev,
    Niqe,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Entropy, Metric::StdDev, Metric::Niqe];

    pub fn column(self) -> &'static str {
        match self {
            Metric::Entropy => "en",
            Metric::StdDev => "sd",
            Metric::Niqe => "niqe",
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "en" | "entropy" => Ok(Metric::Entropy),
            "sd" | "std" | "std_dev" => Ok(Metric::StdDev),
            "niqe" => Ok(Metric::Niqe),
            other => Err(Error::Config(format!("unknown metric `{other}`"))),
        }
    }
}

/// Scores of one frame (or the mean row), in the order of the metric list.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub frame: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub metrics: Vec<Metric>,
    /// Frame rows followed by the mean row.
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["frame".to_string()];
        header.extend(self.metrics.iter().map(|m| m.column().to_string()));
        out.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.frame.clone()];
            rec.extend(row.values.iter().map(f64::to_string));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn score(img: &Raster, metric: Metric, model: &NiqeModel) -> Result<f64> {
    Ok(match metric {
        Metric::Entropy => entropy(img),
        Metric::StdDev => std_dev(img),
        Metric::Niqe => niqe(img, model)?,
    })
}

/// Scores named frames and appends the arithmetic mean of each column.
pub fn evaluate_frames(frames: &[(String, Raster)], metrics: &[Metric], model: &NiqeModel) -> Result<Report> {
    let mut rows = frames
        .iter()
        .map(|(name, img)| {
            Ok(ReportRow {
                frame: name.clone(),
                values: metrics.iter().map(|&m| score(img, m, model)).collect::<Result<_>>()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len().max(1) as f64;
    let means = (0..metrics.len())
        .map(|j| rows.iter().map(|r| r.values[j]).sum::<f64>() / n)
        .collect();
    rows.push(ReportRow {
        frame: MEAN_ROW.into(),
        values: means,
    });
    Ok(Report {
        metrics: metrics.to_vec(),
        rows,
    })
}

/// Scores every PNG of `dir` in file-name order.
pub fn evaluate_dir(dir: impl AsRef<Path>, metrics: &[Metric], model: &NiqeModel) -> Result<Report> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")));
    paths.sort();
    let frames = paths
        .iter()
        .map(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, Raster::load_gray(p)?))
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate_frames(&frames, metrics, model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_names_parse() {
        assert_eq!("EN".parse::<Metric>().unwrap(), Metric::Entropy);
        assert_eq!("sd".parse::<Metric>().unwrap(), Metric::StdDev);
        assert!("psnr".parse::<Metric>().is_err());
    }
}
