//! CSV and JSON readers/writers for datasets, traces and diagnostics.
//!
//! Floats are written in Rust's shortest round-trip form, so reading a file
//! back reproduces the exact values.

use std::io::{Read, Write};

use serde::Serialize;

use crate::diagnostics::AcfResult;
use crate::error::{Error, Result};
use crate::model::{ObservationSeries, Trajectory};
use crate::trace::Trace;

/// Observations with an optional latent truth column.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Option<Trajectory>,
    pub y: ObservationSeries,
}

/// Write `t,x,y` (or `t,y` when no truth is given), `t` starting at 1.
pub fn write_data_csv<W: Write>(out: W, x: Option<&[f64]>, y: &[f64]) -> Result<()> {
    if let Some(x) = x {
        if x.len() != y.len() {
            return Err(Error::LengthMismatch {
                what: "state column",
                expected: y.len(),
                got: x.len(),
            });
        }
    }
    let mut w = csv::Writer::from_writer(out);
    match x {
        Some(x) => {
            w.write_record(["t", "x", "y"])?;
            for (t, (xv, yv)) in x.iter().zip(y).enumerate() {
                w.write_record([(t + 1).to_string(), xv.to_string(), yv.to_string()])?;
            }
        }
        None => {
            w.write_record(["t", "y"])?;
            for (t, yv) in y.iter().enumerate() {
                w.write_record([(t + 1).to_string(), yv.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn parse_f64(field: &str, line: usize, col: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("line {line}: column {col}: not a number: {field:?}")))
}

/// Read a `t,x,y` or `t,y` CSV. Rows must be ordered `t = 1, 2, ...`.
pub fn read_data_csv<R: Read>(input: R) -> Result<Dataset> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let t_col = col("t").ok_or_else(|| Error::Parse("data file has no `t` column".into()))?;
    let y_col = col("y").ok_or_else(|| Error::Parse("data file has no `y` column".into()))?;
    let x_col = col("x");
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let get = |c: usize| rec.get(c).ok_or_else(|| Error::Parse(format!("line {line}: missing field")));
        let t = get(t_col)?
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Parse(format!("line {line}: bad time index")))?;
        if t != i + 1 {
            return Err(Error::Parse(format!("line {line}: expected t = {}, found {t}", i + 1)));
        }
        ys.push(parse_f64(get(y_col)?, line, "y")?);
        if let Some(c) = x_col {
            xs.push(parse_f64(get(c)?, line, "x")?);
        }
    }
    Ok(Dataset {
        x: if x_col.is_some() { Some(Trajectory::new(xs)?) } else { None },
        y: ObservationSeries::new(ys)?,
    })
}

/// Write a trace as `iter,Q,R[,x_1..x_T]` with 1-based iterations. Multi-chain
/// traces get one row per chain and extra `chain_j` and `swapped` columns.
/// State cells are left empty on iterations that were thinned out.
pub fn write_trace_csv<W: Write>(out: W, trace: &Trace) -> Result<()> {
    let t = trace.meta.horizon;
    let has_states = trace.num_state_rows() > 0;
    let multi = trace.meta.chains > 1 || trace.swapped.is_some();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["iter".to_string()];
    if multi {
        header.push("chain_j".into());
    }
    header.extend(["Q".into(), "R".into()]);
    if multi {
        header.push("swapped".into());
    }
    if has_states {
        header.extend((1..=t).map(|k| format!("x_{k}")));
    }
    w.write_record(&header)?;

    let mut state_row = 0;
    let iters = trace.state_iterations();
    for (row, theta) in trace.theta.iter().enumerate() {
        let it = trace.first_iter + row;
        let stored = state_row < iters.len() && iters[state_row] == it;
        for chain in 0..trace.meta.chains {
            let mut rec = vec![(it + 1).to_string()];
            if multi {
                rec.push((chain + 1).to_string());
            }
            rec.push(theta.q.to_string());
            rec.push(theta.r.to_string());
            if multi {
                let s = trace.swapped.as_ref().map_or(false, |s| s[row]);
                rec.push(u8::from(s).to_string());
            }
            if has_states {
                if stored {
                    rec.extend(trace.state(state_row, chain).iter().map(|v| v.to_string()));
                } else {
                    rec.extend(std::iter::repeat_n(String::new(), t));
                }
            }
            w.write_record(&rec)?;
        }
        if stored {
            state_row += 1;
        }
    }
    w.flush()?;
    Ok(())
}

/// `lag,acf` rows.
pub fn write_acf_csv<W: Write>(out: W, acf: &AcfResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lag", "acf"])?;
    for (lag, v) in acf.lags.iter().zip(&acf.values) {
        w.write_record([lag.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<W: Write, T: Serialize + ?Sized>(mut out: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NoiseParams;
    use crate::trace::TraceMeta;

    fn meta(chains: usize, horizon: usize, thin: usize) -> TraceMeta {
        TraceMeta {
            sampler: "pg".into(),
            num_particles: 4,
            iterations: 3,
            horizon,
            seed: 1,
            chains,
            state_thin: thin,
            wall_time_seconds: 0.0,
        }
    }

    #[test]
    fn data_round_trip_is_exact() {
        let x = vec![0.0, 1.0 / 3.0, -2.5e-300, 1e300];
        let y = vec![0.1, f64::MIN_POSITIVE, -7.0, std::f64::consts::PI];
        let mut buf = Vec::new();
        write_data_csv(&mut buf, Some(&x), &y).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x,y\n1,0,0.1\n"));
        let d = read_data_csv(buf.as_slice()).unwrap();
        assert_eq!(d.x.unwrap().values(), x.as_slice());
        assert_eq!(d.y.values(), y.as_slice());
    }

    #[test]
    fn observation_only_files() {
        let mut buf = Vec::new();
        write_data_csv(&mut buf, None, &[1.5]).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "t,y\n1,1.5\n");
        let d = read_data_csv(buf.as_slice()).unwrap();
        assert!(d.x.is_none());
        assert_eq!(d.y.values(), &[1.5]);
    }

    #[test]
    fn malformed_data_is_rejected() {
        assert!(read_data_csv("t,x\n1,2\n".as_bytes()).is_err());
        assert!(read_data_csv("t,y\n1,abc\n".as_bytes()).is_err());
        assert!(read_data_csv("t,y\n2,1.0\n".as_bytes()).is_err());
        assert!(read_data_csv("t,y\n".as_bytes()).is_err());
        assert!(read_data_csv("t,y\n1,NaN\n".as_bytes()).is_err());
    }

    #[test]
    fn trace_csv_layout() {
        let mut tr = Trace::new(meta(1, 2, 2));
        let th = NoiseParams::new(0.5, 2.0).unwrap();
        tr.record(0, th, &[&[1.0, 2.0]]);
        tr.record(1, th, &[&[3.0, 4.0]]);
        tr.record(2, th, &[&[5.0, 6.0]]);
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &tr).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "iter,Q,R,x_1,x_2\n1,0.5,2,1,2\n2,0.5,2,,\n3,0.5,2,5,6\n"
        );
    }

    #[test]
    fn multi_chain_trace_csv() {
        let mut tr = Trace::new(meta(2, 1, 1));
        let th = NoiseParams::new(1.0, 1.0).unwrap();
        tr.record(0, th, &[&[1.0], &[2.0]]);
        tr.record_swap(false);
        tr.record(1, th, &[&[3.0], &[4.0]]);
        tr.record_swap(true);
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &tr).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "iter,chain_j,Q,R,swapped,x_1\n1,1,1,1,0,1\n1,2,1,1,0,2\n2,1,1,1,1,3\n2,2,1,1,1,4\n"
        );
    }

    #[test]
    fn acf_csv() {
        let acf = AcfResult {
            lags: vec![0, 1],
            values: vec![1.0, -0.25],
        };
        let mut buf = Vec::new();
        write_acf_csv(&mut buf, &acf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "lag,acf\n0,1\n1,-0.25\n");
    }
}
