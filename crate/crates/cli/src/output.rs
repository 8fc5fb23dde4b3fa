use std::fs::File;
use std::path::Path;

use deltapmp::{Error, IterationRecord, PartitionSolution, PiecewiseLinearModel, Result};

fn writer(dir: &Path, name: &str) -> Result<csv::Writer<File>> {
    std::fs::create_dir_all(dir)?;
    csv::Writer::from_path(dir.join(name)).map_err(csv_error)
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// `k,t_start,t_end,a_i_j..,b_i_j..,anchor_i..` with matrices row-major.
pub fn write_model(dir: &Path, model: &PiecewiseLinearModel) -> Result<()> {
    let (n, r) = (model.state_dim(), model.control_dim());
    let mut header = vec!["k".to_string(), "t_start".into(), "t_end".into()];
    header.extend((0..n).flat_map(|i| (0..n).map(move |j| format!("a_{i}_{j}"))));
    header.extend((0..n).flat_map(|i| (0..r).map(move |j| format!("b_{i}_{j}"))));
    header.extend((0..n).map(|i| format!("anchor_{i}")));
    let mut w = writer(dir, "model.csv")?;
    w.write_record(&header).map_err(csv_error)?;
    for (k, p) in model.pieces().iter().enumerate() {
        let mut row = vec![k.to_string(), p.t_start().to_string(), p.t_end().to_string()];
        row.extend((0..n).flat_map(|i| (0..n).map(move |j| p.a()[(i, j)].to_string())));
        row.extend((0..n).flat_map(|i| (0..r).map(move |j| p.b()[(i, j)].to_string())));
        row.extend(p.anchor().as_slice().iter().map(f64::to_string));
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// `piece,t_start,t_end,u0..,switch_times`, one row per constant-control
/// segment on the solution clock; switch times are `;`-joined.
pub fn write_schedule(dir: &Path, sol: &PartitionSolution) -> Result<()> {
    let r = sol.model.control_dim();
    let mut header = vec!["piece".to_string(), "t_start".into(), "t_end".into()];
    header.extend((0..r).map(|j| format!("u{j}")));
    header.push("switch_times".into());
    let mut w = writer(dir, "schedule.csv")?;
    w.write_record(&header).map_err(csv_error)?;
    let switches = sol.switch_times();
    for ((k, start, _), ps) in sol.piece_windows().into_iter().zip(&sol.piece_solutions) {
        let joined = switches[k].iter().map(f64::to_string).collect::<Vec<_>>().join(";");
        for seg in ps.u_schedule.shifted(start).segments() {
            let mut row = vec![k.to_string(), seg.t_start.to_string(), seg.t_end.to_string()];
            row.extend(seg.u.as_slice().iter().map(f64::to_string));
            row.push(joined.clone());
            w.write_record(&row).map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `m,N_m,total_time,eq7_score,eq8_score,gap`; the first gap is empty.
pub fn write_trace(dir: &Path, trace: &[IterationRecord]) -> Result<()> {
    let mut w = writer(dir, "trace.csv")?;
    w.write_record(["m", "N_m", "total_time", "eq7_score", "eq8_score", "gap"])
        .map_err(csv_error)?;
    for it in trace {
        w.write_record([
            it.m.to_string(),
            it.pieces.to_string(),
            it.total_time.to_string(),
            it.eq7_score.to_string(),
            it.eq8_score.to_string(),
            it.gap.map(|g| g.to_string()).unwrap_or_default(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}
