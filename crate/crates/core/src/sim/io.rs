//! CSV formats.
//!
//! * trajectory: `t, available, y_1..y_p, u_1..u_m, x_1..x_n` (inputs and
//!   states optional on read)
//! * result: `t, x_true_1..n, x_hat_1..n, err_norm, solved` (truth and
//!   `err_norm` only when the true states are known)
//! * sweep: `label, mean_gap, mean_rmse, std`

use std::io::{Read, Write};

use nalgebra::DVector;

use crate::mhe::StepRecord;
use crate::sim::sweep::SweepRow;
use crate::sim::Trajectory;
use crate::{Error, Result};

fn fmt(v: f64) -> String {
    v.to_string()
}

fn numbered(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (1..=count).map(move |i| format!("{prefix}_{i}"))
}

pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, writer: W) -> Result<()> {
    let p = traj.outputs.first().map_or(0, |y| y.len());
    let m = traj.inputs.first().map_or(0, |u| u.len());
    let n = traj.states.first().map_or(0, |x| x.len());
    let mut wtr = csv::Writer::from_writer(writer);
    let header: Vec<String> = ["t".to_string(), "available".to_string()]
        .into_iter()
        .chain(numbered("y", p))
        .chain(numbered("u", m))
        .chain(numbered("x", n))
        .collect();
    wtr.write_record(&header)?;
    for t in 0..traj.states.len() {
        let row: Vec<String> = [t.to_string(), u8::from(traj.available[t]).to_string()]
            .into_iter()
            .chain(traj.outputs[t].iter().map(|v| fmt(*v)))
            .chain(traj.inputs[t].iter().map(|v| fmt(*v)))
            .chain(traj.states[t].iter().map(|v| fmt(*v)))
            .collect();
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Data recovered from a trajectory CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedData {
    pub available: Vec<bool>,
    pub outputs: Vec<DVector<f64>>,
    /// Empty vectors when the file has no input columns.
    pub inputs: Vec<DVector<f64>>,
    pub states: Option<Vec<DVector<f64>>>,
}

impl RecordedData {
    pub fn output_dim(&self) -> usize {
        self.outputs.first().map_or(0, |y| y.len())
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, |u| u.len())
    }
}

fn column_group(headers: &csv::StringRecord, prefix: &str) -> Result<Vec<usize>> {
    let mut idx = Vec::new();
    for k in 1.. {
        let name = format!("{prefix}_{k}");
        match headers.iter().position(|h| h == name) {
            Some(i) => idx.push(i),
            None => break,
        }
    }
    let stray = headers
        .iter()
        .filter_map(|h| h.strip_prefix(&format!("{prefix}_")))
        .filter_map(|s| s.parse::<usize>().ok())
        .any(|k| k == 0 || k > idx.len());
    if stray {
        return Err(Error::InvalidInput(format!("columns {prefix}_* must be numbered 1..k without gaps")));
    }
    Ok(idx)
}

/// Reads the trajectory format; times must run `0, 1, 2, …`.
pub fn read_trajectory_csv<R: Read>(reader: R) -> Result<RecordedData> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidInput(format!("missing column `{name}`")))
    };
    let (t_col, a_col) = (col("t")?, col("available")?);
    let ys = column_group(&headers, "y")?;
    let us = column_group(&headers, "u")?;
    let xs = column_group(&headers, "x")?;
    if ys.is_empty() {
        return Err(Error::InvalidInput("no output columns y_1..y_p".into()));
    }
    let known = 2 + ys.len() + us.len() + xs.len();
    if headers.len() != known {
        return Err(Error::InvalidInput(format!("unexpected columns in header {:?}", headers.iter().collect::<Vec<_>>())));
    }

    let mut data = RecordedData {
        available: Vec::new(),
        outputs: Vec::new(),
        inputs: Vec::new(),
        states: if xs.is_empty() { None } else { Some(Vec::new()) },
    };
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        let t: usize = rec[t_col]
            .parse()
            .map_err(|e| Error::InvalidInput(format!("line {line}: column t: {e}")))?;
        if t != row {
            return Err(Error::InvalidInput(format!("line {line}: expected t = {row}, found {t}")));
        }
        let available = match &rec[a_col] {
            "0" => false,
            "1" => true,
            other => return Err(Error::InvalidInput(format!("line {line}: available must be 0 or 1, found `{other}`"))),
        };
        let parse = |cols: &[usize], allow_empty: bool| -> Result<DVector<f64>> {
            let vals = cols
                .iter()
                .map(|&c| {
                    let s = &rec[c];
                    if s.is_empty() && allow_empty {
                        Ok(f64::NAN)
                    } else {
                        s.parse::<f64>()
                            .map_err(|e| Error::InvalidInput(format!("line {line}: column {}: {e}", &headers[c])))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(DVector::from_vec(vals))
        };
        // outputs may be blank where no sample was taken
        let y = parse(&ys, !available)?;
        data.inputs.push(parse(&us, false)?);
        if let Some(states) = data.states.as_mut() {
            states.push(parse(&xs, false)?);
        }
        data.outputs.push(y);
        data.available.push(available);
    }
    if data.available.is_empty() {
        return Err(Error::InvalidInput("trajectory CSV has no rows".into()));
    }
    Ok(data)
}

pub fn write_result_csv<W: Write>(
    writer: W,
    truth: Option<&[DVector<f64>]>,
    estimates: &[DVector<f64>],
    records: &[StepRecord],
) -> Result<()> {
    let n = estimates.first().map_or(0, |x| x.len());
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["t".to_string()];
    if truth.is_some() {
        header.extend(numbered("x_true", n));
    }
    header.extend(numbered("x_hat", n));
    if truth.is_some() {
        header.push("err_norm".into());
    }
    header.push("solved".into());
    wtr.write_record(&header)?;
    for (t, xh) in estimates.iter().enumerate() {
        let mut row = vec![t.to_string()];
        if let Some(x) = truth {
            row.extend(x[t].iter().map(|v| fmt(*v)));
        }
        row.extend(xh.iter().map(|v| fmt(*v)));
        if let Some(x) = truth {
            row.push(fmt((&x[t] - xh).norm()));
        }
        let solved = records.get(t).is_some_and(StepRecord::solved);
        row.push(u8::from(solved).to_string());
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["label", "mean_gap", "mean_rmse", "std"])?;
    for r in rows {
        wtr.write_record([
            r.label.clone(),
            r.mean_gap.map(fmt).unwrap_or_default(),
            fmt(r.mean_rmse),
            fmt(r.std),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
