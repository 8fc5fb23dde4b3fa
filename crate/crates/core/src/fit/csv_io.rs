//! Trajectory CSV: `traj_id,label,t,x0..x{n-1},u0..u{r-1}[,dx0..dx{n-1}]`.

use std::io::{Read, Write};
use std::path::Path;

use super::{Label, Sample, TrajectoryRecord};
use crate::dynamics::{ControlVector, StateVector};
use crate::error::{Error, Result};

struct Layout {
    n: usize,
    r: usize,
    with_dx: bool,
}

fn indexed_run(cols: &[String], prefix: &str) -> usize {
    cols.iter()
        .enumerate()
        .take_while(|(i, c)| **c == format!("{prefix}{i}"))
        .count()
}

fn parse_header(cols: &[String], line: u64) -> Result<Layout> {
    let bad = |column: usize, message: String| Error::Parse {
        line,
        column,
        message,
    };
    for (i, want) in ["traj_id", "label", "t"].iter().enumerate() {
        if cols.get(i).map(String::as_str) != Some(*want) {
            return Err(bad(i + 1, format!("expected header column '{want}'")));
        }
    }
    let rest = &cols[3..];
    let n = indexed_run(rest, "x");
    let r = indexed_run(&rest[n..], "u");
    let tail = &rest[n + r..];
    let ndx = indexed_run(tail, "dx");
    if n == 0 {
        return Err(bad(4, "expected state columns x0..".into()));
    }
    if r == 0 {
        return Err(bad(4 + n, "expected control columns u0..".into()));
    }
    if ndx != tail.len() || (ndx != 0 && ndx != n) {
        return Err(bad(
            4 + n + r + ndx.min(tail.len()),
            format!("unexpected trailing header columns; derivative block must be dx0..dx{}", n - 1),
        ));
    }
    Ok(Layout {
        n,
        r,
        with_dx: ndx == n,
    })
}

/// Reads trajectory records from any CSV source.
///
/// Records are grouped by `traj_id` in order of first appearance; samples
/// are sorted by time. `#` lines are comments.
pub fn read_trajectories<R: Read>(source: R) -> Result<Vec<TrajectoryRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(source);

    let mut layout: Option<Layout> = None;
    let mut groups: Vec<(String, Label, u64, Vec<Sample>)> = Vec::new();

    for row in reader.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            column: 0,
            message: e.to_string(),
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let cols: Vec<String> = row.iter().map(str::to_owned).collect();
        if cols.iter().all(String::is_empty) {
            continue;
        }
        let Some(lay) = &layout else {
            layout = Some(parse_header(&cols, line)?);
            continue;
        };
        let width = 3 + lay.n + lay.r + if lay.with_dx { lay.n } else { 0 };
        if cols.len() != width {
            return Err(Error::Parse {
                line,
                column: cols.len().min(width) + 1,
                message: format!("expected {width} fields, found {}", cols.len()),
            });
        }
        let num = |col: usize| -> Result<f64> {
            cols[col]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    line,
                    column: col + 1,
                    message: format!("'{}' is not a finite number", cols[col]),
                })
        };
        let label: Label = cols[1].parse().map_err(|_| Error::Parse {
            line,
            column: 2,
            message: format!("label must be positive or negative, got '{}'", cols[1]),
        })?;
        let t = num(2)?;
        let x = (0..lay.n).map(|j| num(3 + j)).collect::<Result<Vec<_>>>()?;
        let u = (0..lay.r).map(|j| num(3 + lay.n + j)).collect::<Result<Vec<_>>>()?;
        let dx_start = 3 + lay.n + lay.r;
        let dx = if lay.with_dx && cols[dx_start..].iter().any(|c| !c.is_empty()) {
            Some(StateVector::new(
                (0..lay.n).map(|j| num(dx_start + j)).collect::<Result<Vec<_>>>()?,
            )?)
        } else {
            None
        };
        let sample = Sample {
            t,
            x: StateVector::new(x)?,
            u: ControlVector::new(u)?,
            dx,
        };
        let id = cols[0].clone();
        match groups.iter_mut().find(|g| g.0 == id) {
            Some(g) => {
                if g.1 != label {
                    return Err(Error::Parse {
                        line,
                        column: 2,
                        message: format!("record '{id}' changes label from {}", g.1.as_str()),
                    });
                }
                g.3.push(sample);
            }
            None => groups.push((id, label, line, vec![sample])),
        }
    }

    if layout.is_none() {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            message: "missing header".into(),
        });
    }
    groups
        .into_iter()
        .map(|(id, label, line, mut samples)| {
            samples.sort_by(|a, b| a.t.total_cmp(&b.t));
            TrajectoryRecord::new(id, label, samples).map_err(|e| Error::Parse {
                line,
                column: 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Reads trajectory records from a file.
pub fn ingest_trajectories(path: impl AsRef<Path>) -> Result<Vec<TrajectoryRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_trajectories(std::io::BufReader::new(file))
}

/// Writes records in the same format [`read_trajectories`] accepts. The
/// derivative block is emitted only when every sample carries one.
pub fn write_trajectories<W: Write>(sink: W, records: &[TrajectoryRecord]) -> Result<()> {
    let first = records
        .first()
        .ok_or_else(|| Error::InvalidInput("no records to write".into()))?;
    let n = first.state_dim();
    let r = first.control_dim();
    if records.iter().any(|rec| rec.state_dim() != n || rec.control_dim() != r) {
        return Err(Error::InvalidInput("records have differing dimensions".into()));
    }
    let with_dx = records.iter().all(TrajectoryRecord::has_derivatives);
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["traj_id".to_string(), "label".into(), "t".into()];
    header.extend((0..n).map(|i| format!("x{i}")));
    header.extend((0..r).map(|i| format!("u{i}")));
    if with_dx {
        header.extend((0..n).map(|i| format!("dx{i}")));
    }
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(&header).map_err(io)?;
    for rec in records {
        for s in rec.samples() {
            let mut row = vec![rec.id().to_string(), rec.label().as_str().into(), s.t.to_string()];
            row.extend(s.x.as_slice().iter().map(f64::to_string));
            row.extend(s.u.as_slice().iter().map(f64::to_string));
            if with_dx {
                row.extend(s.dx.as_ref().unwrap().as_slice().iter().map(f64::to_string));
            }
            w.write_record(&row).map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}
