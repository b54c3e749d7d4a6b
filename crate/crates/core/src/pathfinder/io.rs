//! Trajectory CSV, transition JSON and the critical-β profile CSV.

use std::io::{Read, Write};

use super::{TrajectoryRecord, Transition};
use crate::error::{Error, Result};
use crate::mnist::{PerClassAccuracy, NUM_CLASSES};
use crate::report::{g17, shortest};
use crate::store::CheckpointId;

pub const TRAJECTORY_HEADER: [&str; 18] = [
    "beta",
    "error_train",
    "error_test",
    "loss",
    "r0",
    "r_ref",
    "acc_overall",
    "acc_0",
    "acc_1",
    "acc_2",
    "acc_3",
    "acc_4",
    "acc_5",
    "acc_6",
    "acc_7",
    "acc_8",
    "acc_9",
    "epochs_used",
];

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

/// Writes one header row and one row per record; β and radii use 17 significant
/// digits, other reals their shortest round-trip form.
pub fn write_trajectory_csv<W: Write>(out: W, records: &[TrajectoryRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = TRAJECTORY_HEADER.to_vec();
    header.push("checkpoint_id");
    w.write_record(&header).map_err(csv_err)?;
    for r in records {
        let mut row = vec![
            g17(r.beta),
            shortest(r.error_train),
            shortest(r.error_test),
            shortest(r.loss),
            g17(r.r0),
            g17(r.r_ref),
            shortest(r.accuracy.overall),
        ];
        for c in 0..NUM_CLASSES {
            row.push(shortest(
                r.accuracy.per_class.get(c).copied().unwrap_or(0.0),
            ));
        }
        row.push(r.epochs_used.to_string());
        row.push(r.checkpoint_id.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Format(format!("csv: {e}")))?;
    Ok(())
}

pub fn read_trajectory_csv<R: Read>(input: R) -> Result<Vec<TrajectoryRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let expected: Vec<&str> = TRAJECTORY_HEADER
        .iter()
        .copied()
        .chain(["checkpoint_id"])
        .collect();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Format(format!(
            "unexpected trajectory header {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut records = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row.map_err(csv_err)?;
        let num = |i: usize| -> Result<f64> {
            row[i].parse::<f64>().map_err(|e| {
                Error::Format(format!("row {}: column {}: {e}", line + 1, expected[i]))
            })
        };
        let per_class = (0..NUM_CLASSES)
            .map(|c| num(7 + c))
            .collect::<Result<Vec<_>>>()?;
        records.push(TrajectoryRecord {
            beta: num(0)?,
            error_train: num(1)?,
            error_test: num(2)?,
            loss: num(3)?,
            r0: num(4)?,
            r_ref: num(5)?,
            accuracy: PerClassAccuracy {
                per_class,
                overall: num(6)?,
                support: Vec::new(),
            },
            epochs_used: row[17]
                .parse()
                .map_err(|e| Error::Format(format!("row {}: epochs_used: {e}", line + 1)))?,
            checkpoint_id: CheckpointId::parse(&row[18])?,
            diverged: false,
            critical_beta: None,
        });
    }
    if records.windows(2).any(|w| !(w[0].beta < w[1].beta)) {
        return Err(Error::Format(
            "trajectory betas are not strictly increasing".into(),
        ));
    }
    Ok(records)
}

pub fn write_transitions_json<W: Write>(out: W, transitions: &[Transition]) -> Result<()> {
    let mut out = out;
    serde_json::to_writer_pretty(&mut out, transitions)
        .map_err(|e| Error::Format(e.to_string()))?;
    out.write_all(b"\n")
        .map_err(|e| Error::Format(e.to_string()))
}

pub fn read_transitions_json<R: Read>(input: R) -> Result<Vec<Transition>> {
    serde_json::from_reader(input).map_err(|e| Error::Format(format!("transition json: {e}")))
}

/// `beta, r_ref, critical_beta` for every record that has an estimate.
pub fn write_critical_beta_csv<W: Write>(out: W, records: &[TrajectoryRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["beta", "r_ref", "critical_beta"])
        .map_err(csv_err)?;
    for r in records {
        if let Some(c) = r.critical_beta {
            w.write_record([g17(r.beta), g17(r.r_ref), g17(c)])
                .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::Format(format!("csv: {e}")))?;
    Ok(())
}
