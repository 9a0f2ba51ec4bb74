//! CSV and JSON writers. Floats are written with 17 significant digits so
//! that they parse back to the same bits.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::hilbert::MasterTrajectory;
use crate::mbe::SteadyPoint;
use crate::montecarlo::{EnsembleSummary, TrajectoryRecord};
use crate::sde::Photocurrent;
use crate::{Error, Result};

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    Ok(csv::Writer::from_path(path)?)
}

/// Columns `t, [n,] p_r, p_i, D, x_r, x_i, purity, F`. Times are multiplied
/// by `time_scale`.
pub fn write_trajectory_csv(path: &Path, rec: &TrajectoryRecord, time_scale: f64) -> Result<()> {
    let mut w = csv_writer(path)?;
    let with_n = rec.normalization.is_some();
    let mut header = vec!["t"];
    if with_n {
        header.push("n");
    }
    header.extend(["p_r", "p_i", "D", "x_r", "x_i", "purity", "F"]);
    w.write_record(&header)?;
    for (i, ((t, s), q)) in rec.times.iter().zip(&rec.states).zip(&rec.purity).enumerate() {
        let mut row = vec![fmt_f64(t * time_scale)];
        if let Some(n) = &rec.normalization {
            row.push(fmt_f64(n[i]));
        }
        row.extend(
            [s.p_r, s.p_i, s.d, s.x_r, s.x_i, *q, rec.f_mode.factor(s)]
                .iter()
                .map(|v| fmt_f64(*v)),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_steady_csv(path: &Path, points: &[SteadyPoint]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["x_r", "y", "mode"])?;
    for p in points {
        w.write_record([fmt_f64(p.x_r), fmt_f64(p.y), p.mode.as_str().to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `t, trace, a_re, a_im, sigma_x, sigma_y, sigma_z, excited` with
/// normalized expectations, `t` in unscaled time.
pub fn write_master_csv(path: &Path, traj: &MasterTrajectory) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["t", "trace", "a_re", "a_im", "sigma_x", "sigma_y", "sigma_z", "excited"])?;
    for ((t, e), pop) in traj.times.iter().zip(&traj.expectations).zip(&traj.excited_population) {
        let m = e.normalized.unwrap_or(e.raw);
        let row = [*t, e.trace.re, m.a.re, m.a.im, m.sigma_x, m.sigma_y, m.sigma_z, *pop];
        w.write_record(row.iter().map(|v| fmt_f64(*v)))?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `t, mean_*, var_*, count` over the five state variables.
pub fn write_summary_csv(path: &Path, s: &EnsembleSummary) -> Result<()> {
    const NAMES: [&str; 5] = ["p_r", "p_i", "D", "x_r", "x_i"];
    let mut w = csv_writer(path)?;
    let mut header = vec!["t".to_string()];
    header.extend(NAMES.iter().map(|n| format!("mean_{n}")));
    header.extend(NAMES.iter().map(|n| format!("var_{n}")));
    header.push("count".into());
    w.write_record(&header)?;
    for i in 0..s.times.len() {
        let mut row = vec![fmt_f64(s.times[i])];
        row.extend(s.mean[i].iter().map(|v| fmt_f64(*v)));
        row.extend(s.variance[i].iter().map(|v| fmt_f64(*v)));
        row.push(s.count[i].to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_photocurrent_csv(path: &Path, pc: &Photocurrent) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["t", "dy"])?;
    for (t, dy) in pc.times.iter().zip(&pc.dy) {
        w.write_record([fmt_f64(*t), fmt_f64(*dy)])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `t, dy` CSV. Rows are numbered from 1 for the first data row.
pub fn read_photocurrent_csv(path: &Path) -> Result<Photocurrent> {
    let file = File::open(path)
        .map_err(|e| Error::Photocurrent(format!("cannot open {}: {e}", path.display())))?;
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = r.headers()?.clone();
    if headers.is_empty() {
        return Ok(Photocurrent::default());
    }
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Photocurrent(format!("missing column `{name}` in {}", path.display())))
    };
    let (it, idy) = (col("t")?, col("dy")?);
    let mut pc = Photocurrent::default();
    for (i, row) in r.records().enumerate() {
        let row = row?;
        let parse = |k: usize, name: &str| -> Result<f64> {
            row.get(k)
                .and_then(|v| v.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Photocurrent(format!("row {}: invalid {name}", i + 1)))
        };
        let t = parse(it, "t")?;
        let dy = parse(idy, "dy")?;
        if let Some(&prev) = pc.times.last() {
            if !(t > prev) {
                return Err(Error::Photocurrent(format!(
                    "row {}: time {t} does not increase",
                    i + 1
                )));
            }
        }
        pc.times.push(t);
        pc.dy.push(dy);
    }
    Ok(pc)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
