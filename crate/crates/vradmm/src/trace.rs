//! CSV trace files. One row per recorded iteration, floats printed with 17
//! significant digits so the file re-parses losslessly; NaN marks fields
//! that are undefined at a row. The wall_ms column carries measured times
//! only when the run had timing enabled, so default traces are
//! byte-reproducible for a fixed seed.

use crate::engine::RunTrace;
use std::io::{self, BufRead, Write};

pub const TRACE_HEADER: &str =
    "t,epoch,effective_passes,objective,r_grad,r_subgrad,r_feas,theta,lyapunov,realized_variance,wall_ms";

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.16e}")
    }
}

fn write_row<W: Write>(
    w: &mut W,
    rec: &crate::engine::IterationRecord,
    prefix: Option<&str>,
    test_loss: bool,
) -> io::Result<()> {
    if let Some(p) = prefix {
        write!(w, "{p},")?;
    }
    write!(
        w,
        "{},{},{},{},{},{},{},{},{},{},{}",
        rec.t,
        rec.epoch,
        fmt(rec.effective_passes),
        fmt(rec.objective),
        fmt(rec.r_grad),
        fmt(rec.r_subgrad),
        fmt(rec.r_feas),
        fmt(rec.theta),
        fmt(rec.lyapunov),
        fmt(rec.realized_variance),
        fmt(rec.wall_ms),
    )?;
    if test_loss {
        write!(w, ",{}", fmt(rec.test_loss))?;
    }
    writeln!(w)
}

/// Writes one run. `with_test_loss` appends a trailing test_loss column
/// (set when the run was given a held-out split).
pub fn write_trace<W: Write>(trace: &RunTrace, w: &mut W, with_test_loss: bool) -> io::Result<()> {
    if with_test_loss {
        writeln!(w, "{TRACE_HEADER},test_loss")?;
    } else {
        writeln!(w, "{TRACE_HEADER}")?;
    }
    for rec in &trace.records {
        write_row(w, rec, None, with_test_loss)?;
    }
    Ok(())
}

pub fn write_trace_file(
    trace: &RunTrace,
    path: &std::path::Path,
    with_test_loss: bool,
) -> io::Result<()> {
    let mut f = io::BufWriter::new(std::fs::File::create(path)?);
    write_trace(trace, &mut f, with_test_loss)
}

/// Long-format CSV for a benchmark sweep: a leading `algorithm` column,
/// then the per-run rows.
pub fn write_bench<W: Write>(
    runs: &[(String, RunTrace)],
    w: &mut W,
    with_test_loss: bool,
) -> io::Result<()> {
    if with_test_loss {
        writeln!(w, "algorithm,{TRACE_HEADER},test_loss")?;
    } else {
        writeln!(w, "algorithm,{TRACE_HEADER}")?;
    }
    for (name, trace) in runs {
        for rec in &trace.records {
            write_row(w, rec, Some(name), with_test_loss)?;
        }
    }
    Ok(())
}

/// A re-parsed trace row; used by tests and trace replays.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub epoch: usize,
    pub values: Vec<f64>,
}

pub fn read_trace<R: BufRead>(r: R) -> io::Result<(Vec<String>, Vec<TraceRow>)> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "empty trace"))??;
    let columns: Vec<String> = header.split(',').map(str::to_string).collect();
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!(
                    "row has {} fields, header has {}",
                    fields.len(),
                    columns.len()
                ),
            ));
        }
        let t: usize = fields[0]
            .parse()
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("t: {e}")))?;
        let epoch: usize = fields[1]
            .parse()
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("epoch: {e}")))?;
        let values = fields[2..]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{f:?}: {e}")))
            })
            .collect::<io::Result<Vec<f64>>>()?;
        rows.push(TraceRow { t, epoch, values });
    }
    Ok((columns, rows))
}
