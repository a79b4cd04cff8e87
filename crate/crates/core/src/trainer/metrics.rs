use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column order of `metrics.csv`.
pub const METRICS_HEADER: [&str; 10] = [
    "episode",
    "return_env",
    "return_shaped",
    "steps",
    "epsilon",
    "r_a_fired",
    "r_s_fired",
    "cycles_penalized",
    "fnn_agreement",
    "feedback_total",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: u64,
    pub return_env: f64,
    pub return_shaped: f64,
    pub steps: u64,
    pub epsilon: f64,
    pub r_a_fired: u64,
    pub r_s_fired: u64,
    pub cycles_penalized: u64,
    pub fnn_agreement: f64,
    pub feedback_total: u64,
}

pub fn write_metrics_csv<W: Write>(w: W, rows: &[EpisodeMetrics]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    if rows.is_empty() {
        out.write_record(METRICS_HEADER).map_err(csv_err)?;
    }
    for row in rows {
        out.serialize(row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<EpisodeMetrics>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let header: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header != METRICS_HEADER {
        return Err(Error::Format(format!("{} does not have the metrics header", path.display())));
    }
    reader.deserialize().map(|r| r.map_err(csv_err)).collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

/// What happened at an episode boundary; used to audit the schedule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ScheduleEvent {
    InitialSession { appended: usize },
    InitialFit { records: usize },
    Session { after_episode: u64, appended: usize, counter: usize },
    Refit { after_episode: u64, records: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub episode: u64,
    pub mean: f64,
    pub std: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_and_header() {
        let row = EpisodeMetrics {
            episode: 3,
            return_env: 85.0,
            return_shaped: 1.7000000000000002,
            steps: 40,
            epsilon: 0.5,
            r_a_fired: 12,
            r_s_fired: 4,
            cycles_penalized: 0,
            fnn_agreement: 0.3,
            feedback_total: 500,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_metrics_csv(std::fs::File::create(&path).unwrap(), std::slice::from_ref(&row)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), METRICS_HEADER.join(","));
        assert_eq!(read_metrics_csv(&path).unwrap(), vec![row]);
    }
}
