//! CSV and JSON file formats.
//!
//! Series files carry a time column `t` in seconds with a fixed step. Values
//! are written in Rust's shortest round-trip form, so reading a written file
//! reproduces every sample bit for bit.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::ecm::TimeSeries;
use crate::error::{Error, Result};
use crate::excitation::FrequencySeries;

/// Writes `t,i,v[,soc]`. The voltage column is required.
pub fn write_series<W: Write>(series: &TimeSeries, out: W) -> Result<()> {
    series.validate()?;
    let voltage = series.voltage()?;
    let mut w = csv::Writer::from_writer(out);
    if series.soc.is_some() {
        w.write_record(["t", "i", "v", "soc"])?;
    } else {
        w.write_record(["t", "i", "v"])?;
    }
    for (k, t) in series.times().enumerate() {
        let mut row = vec![t.to_string(), series.current[k].to_string(), voltage[k].to_string()];
        if let Some(soc) = &series.soc {
            row.push(soc[k].to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_series<R: Read>(input: R) -> Result<TimeSeries> {
    let mut r = csv::Reader::from_reader(input);
    let headers: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (t_col, i_col) = match (col("t"), col("i")) {
        (Some(t), Some(i)) => (t, i),
        _ => return Err(Error::Data(format!("series header must start with t,i; got {headers:?}"))),
    };
    let v_col = col("v");
    let soc_col = col("soc");

    let mut t = Vec::new();
    let mut current = Vec::new();
    let mut voltage = Vec::new();
    let mut soc = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |c: usize| -> Result<f64> {
            rec.get(c)
                .ok_or_else(|| Error::Data(format!("row {}: missing column {c}", line + 2)))?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Data(format!("row {}: {e}", line + 2)))
        };
        t.push(field(t_col)?);
        current.push(field(i_col)?);
        if let Some(c) = v_col {
            voltage.push(field(c)?);
        }
        if let Some(c) = soc_col {
            soc.push(field(c)?);
        }
    }
    let ts = uniform_step(&t)?;
    let series = TimeSeries {
        ts,
        current,
        voltage: v_col.map(|_| voltage),
        soc: soc_col.map(|_| soc),
    };
    series.validate()?;
    Ok(series)
}

/// Sampling step of a time column, checking every increment against it within `1e-9·ts`.
pub fn uniform_step(t: &[f64]) -> Result<f64> {
    if t.len() < 2 {
        return Err(Error::Data("need at least two samples to infer the sampling time".into()));
    }
    let ts = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    if !(ts > 0.0) {
        return Err(Error::Data("time column must be increasing".into()));
    }
    for (k, w) in t.windows(2).enumerate() {
        if ((w[1] - w[0]) - ts).abs() > 1e-9 * ts {
            return Err(Error::Data(format!(
                "non-uniform sampling at row {}: step {} vs {ts}",
                k + 3,
                w[1] - w[0]
            )));
        }
    }
    Ok(ts)
}

pub fn write_frequency<W: Write>(freq: &FrequencySeries, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "f"])?;
    for (k, f) in freq.freq.iter().enumerate() {
        w.write_record([(k as f64 * freq.ts).to_string(), f.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `t,f` grid-frequency file around a 50 Hz nominal.
pub fn read_frequency<R: Read>(input: R) -> Result<FrequencySeries> {
    let mut r = csv::Reader::from_reader(input);
    let headers: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let t_col = headers.iter().position(|h| h == "t");
    let f_col = headers.iter().position(|h| h == "f");
    let (t_col, f_col) = match (t_col, f_col) {
        (Some(t), Some(f)) => (t, f),
        _ => return Err(Error::Data(format!("frequency header must contain t,f; got {headers:?}"))),
    };
    let mut t = Vec::new();
    let mut f = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |c: usize| -> Result<f64> {
            rec.get(c)
                .unwrap_or("")
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Data(format!("row {}: {e}", line + 2)))
        };
        t.push(parse(t_col)?);
        f.push(parse(f_col)?);
    }
    let ts = uniform_step(&t)?;
    let series = FrequencySeries { ts, freq: f, nominal: 50.0 };
    series.validate()?;
    Ok(series)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(File::open(path)?)?)
}

pub fn write_series_file(path: &Path, series: &TimeSeries) -> Result<()> {
    write_series(series, File::create(path)?)
}

pub fn read_series_file(path: &Path) -> Result<TimeSeries> {
    read_series(File::open(path)?)
}
