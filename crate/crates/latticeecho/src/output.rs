//! Artifact writers and the matching readers: CSV tables at 17 significant
//! digits (so determinism is byte-checkable) and P2 graymap snapshots,
//! max-normalized per frame.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::analysis::EchoReport;
use crate::error::{EchoError, Result};
use crate::evolve::Trajectory;

/// 17 significant digits: round-trips every finite f64 exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EchoError + '_ {
    move |source| EchoError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Numeric CSV with a header line.
pub fn write_table(path: &Path, headers: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    for row in rows {
        if row.len() != headers.len() {
            return Err(EchoError::InvalidInput(format!(
                "row width {} does not match {} headers",
                row.len(),
                headers.len()
            )));
        }
    }
    let mut text = String::new();
    text.push_str(&headers.join(","));
    text.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|&x| fmt_f64(x)).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    let headers: Vec<String> = lines
        .next()
        .ok_or_else(|| EchoError::InvalidInput(format!("{}: empty table", path.display())))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|c| {
                c.parse().map_err(|_| EchoError::Parse {
                    line: i + 2,
                    msg: format!("bad number '{c}' in {}", path.display()),
                })
            })
            .collect::<Result<_>>()?;
        if row.len() != headers.len() {
            return Err(EchoError::Parse {
                line: i + 2,
                msg: format!("row width {} != header width", row.len()),
            });
        }
        rows.push(row);
    }
    Ok((headers, rows))
}

/// time, fidelity, overlap (+ band occupations when recorded).
pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let bands = traj.band_occupations.as_ref();
    let headers: Vec<&str> = if bands.is_some() {
        vec!["time", "fidelity", "overlap", "p_lower", "p_upper"]
    } else {
        vec!["time", "fidelity", "overlap"]
    };
    let rows: Vec<Vec<f64>> = (0..traj.times.len())
        .map(|i| {
            let mut row = vec![traj.times[i], traj.fidelity[i], traj.overlap[i]];
            if let Some(b) = bands {
                row.push(b[i].0);
                row.push(b[i].1);
            }
            row
        })
        .collect();
    write_table(path, &headers, &rows)
}

/// Site probabilities with their integer coordinates, row-major.
pub fn write_snapshot_csv(path: &Path, extents: &[usize], probs: &[f64]) -> Result<()> {
    let headers: Vec<&str> = match extents.len() {
        1 => vec!["n", "probability"],
        _ => vec!["n1", "n2", "probability"],
    };
    let mut rows = Vec::with_capacity(probs.len());
    for (idx, &p) in probs.iter().enumerate() {
        match extents.len() {
            1 => rows.push(vec![idx as f64, p]),
            _ => {
                let n2 = idx % extents[1];
                let n1 = idx / extents[1];
                rows.push(vec![n1 as f64, n2 as f64, p]);
            }
        }
    }
    write_table(path, &headers, &rows)
}

/// ASCII P2 graymap, max-normalized per frame (maxval 255). 1D data becomes
/// a single-row image.
pub fn write_snapshot_pgm(path: &Path, extents: &[usize], probs: &[f64]) -> Result<()> {
    let (rows, cols) = match extents {
        [n] => (1usize, *n),
        [n1, n2] => (*n1, *n2),
        _ => return Err(EchoError::InvalidInput("unsupported dimension".into())),
    };
    if rows * cols != probs.len() {
        return Err(EchoError::InvalidInput("snapshot size mismatch".into()));
    }
    let pmax = probs.iter().cloned().fold(0.0_f64, f64::max);
    let mut text = format!("P2\n{cols} {rows}\n255\n");
    for r in 0..rows {
        let line: Vec<String> = (0..cols)
            .map(|c| {
                let v = if pmax > 0.0 {
                    (probs[r * cols + c] / pmax * 255.0).round() as u32
                } else {
                    0
                };
                v.to_string()
            })
            .collect();
        text.push_str(&line.join(" "));
        text.push('\n');
    }
    fs::write(path, text).map_err(io_err(path))
}

/// Reader for the P2 files written above; returns (rows, cols, levels).
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u32>)> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut tokens = text.split_whitespace();
    if tokens.next() != Some("P2") {
        return Err(EchoError::InvalidInput(format!(
            "{}: not a P2 graymap",
            path.display()
        )));
    }
    let mut next_num = |what: &str| -> Result<u32> {
        tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| EchoError::InvalidInput(format!("{}: bad {what}", path.display())))
    };
    let cols = next_num("width")? as usize;
    let rows = next_num("height")? as usize;
    let maxval = next_num("maxval")?;
    if maxval != 255 {
        return Err(EchoError::InvalidInput(format!(
            "{}: expected maxval 255",
            path.display()
        )));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(next_num("pixel")?);
    }
    Ok((rows, cols, data))
}

/// Canonical snapshot file stem for a sample time, e.g. `snap_t10.050000`.
pub fn snapshot_stem(time: f64) -> String {
    format!("snap_t{time:.6}")
}

/// Flat key=value run summary embedding the echo report.
pub fn write_run_summary(
    path: &Path,
    seed: u64,
    propagator: &str,
    report: Option<&EchoReport>,
) -> Result<()> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    let mut text = format!("seed={seed}\npropagator={propagator}\n");
    match report {
        Some(r) => text.push_str(&r.to_kv()),
        None => text.push_str("revival=false\n"),
    }
    f.write_all(text.as_bytes()).map_err(io_err(path))
}
