//! CSV and binary exports: datasets, per-timestep metrics, weight traces and
//! policy parameters.

use std::io::{Read, Write};

use crate::dagger::EvalMetrics;
use crate::error::{check_len, Error, Result};
use crate::experiments::MethodReport;
use crate::policy::{PolicyParams, Sample};
use crate::reweight::WeightState;

/// Version tag written into parameter files.
pub const PARAMS_VERSION: u32 = 1;

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            Error::Io(e.to_string())
        } else {
            Error::Format(e.to_string())
        }
    }
}

fn format_err(line: usize, reason: impl std::fmt::Display) -> Error {
    Error::Format(format!("line {line}: {reason}"))
}

/// Writes `task_id,step,s_0,...,s_{d-1},action,corrupted`. `step` counts
/// samples within each run of equal `task_id`.
pub fn write_dataset<W: Write>(out: W, samples: &[Sample]) -> Result<()> {
    let dim = samples.first().map_or(0, |s| s.state.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["task_id".to_string(), "step".to_string()];
    header.extend((0..dim).map(|i| format!("s_{i}")));
    header.extend(["action".to_string(), "corrupted".to_string()]);
    w.write_record(&header)?;
    let mut step = 0usize;
    let mut prev_task = None;
    for s in samples {
        check_len("sample state", dim, s.state.len())?;
        if prev_task != Some(s.task_id) {
            step = 0;
            prev_task = Some(s.task_id);
        }
        let mut row = vec![s.task_id.to_string(), step.to_string()];
        row.extend(s.state.iter().map(f64::to_string));
        row.push(s.action.to_string());
        row.push(u8::from(s.corrupted).to_string());
        w.write_record(&row)?;
        step += 1;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_dataset`].
pub fn read_dataset<R: Read>(input: R) -> Result<Vec<Sample>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let cols = headers.len();
    if cols < 4 || &headers[0] != "task_id" || &headers[cols - 1] != "corrupted" || &headers[cols - 2] != "action" {
        return Err(Error::Format("unexpected dataset header".into()));
    }
    let dim = cols - 4;
    let mut samples = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let field = |k: usize| record.get(k).ok_or_else(|| format_err(line, "missing field"));
        let task_id = field(0)?.parse::<u64>().map_err(|e| format_err(line, e))?;
        let state = (0..dim)
            .map(|k| field(2 + k)?.parse::<f64>().map_err(|e| format_err(line, e)))
            .collect::<Result<Vec<_>>>()?;
        let action = field(cols - 2)?.parse::<usize>().map_err(|e| format_err(line, e))?;
        let corrupted = match field(cols - 1)? {
            "0" => false,
            "1" => true,
            other => return Err(format_err(line, format!("corrupted flag {other:?}"))),
        };
        samples.push(Sample {
            state,
            action,
            task_id,
            corrupted,
        });
    }
    Ok(samples)
}

/// Header of the per-timestep metrics file.
pub const METRICS_HEADER: [&str; 5] = ["method", "trial", "timestep", "overrides_cum", "accuracy"];

/// Appends one row per timestep of every trial in `metrics`. `timestep`
/// runs on across trials; `accuracy` is that trial's agreement rate with the
/// expert.
pub fn write_metrics_rows<W: Write>(w: &mut csv::Writer<W>, method: &str, metrics: &EvalMetrics) -> Result<()> {
    let mut timestep = 0usize;
    let mut cum = 0usize;
    for t in &metrics.trials {
        let acc = t.accuracy().to_string();
        let trial = t.trial.to_string();
        let mut starts = t.override_steps.iter().peekable();
        for step in 0..t.steps {
            while starts.next_if(|s| **s <= step).is_some() {
                cum += 1;
            }
            w.write_record([method, &trial, &timestep.to_string(), &cum.to_string(), &acc])?;
            timestep += 1;
        }
    }
    Ok(())
}

pub fn write_metrics<W: Write>(out: W, method: &str, metrics: &EvalMetrics) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    write_metrics_rows(&mut w, method, metrics)?;
    w.flush()?;
    Ok(())
}

/// Writes `method,trials,accuracy,overrides_cum`: each method's score on
/// fresh rollouts after the given number of trials, next to the overrides it
/// had accumulated by then.
pub fn write_accuracy_table<W: Write>(out: W, reports: &[&MethodReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "trials", "accuracy", "overrides_cum"])?;
    for r in reports {
        for (n, acc) in &r.accuracy_after {
            let cum = r.trial_metrics.trials.get(n - 1).map_or(0, |t| t.overrides_cum);
            w.write_record([r.method, &n.to_string(), &acc.to_string(), &cum.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `iter,sample_index,logit,weight,corrupted` for every snapshot.
pub fn write_weights<W: Write>(out: W, trace: &[(usize, WeightState)], samples: &[Sample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iter", "sample_index", "logit", "weight", "corrupted"])?;
    for (iter, state) in trace {
        check_len("weight snapshot", samples.len(), state.len())?;
        let it = iter.to_string();
        for (n, ((logit, weight), s)) in state.logits().iter().zip(state.weights()).zip(samples).enumerate() {
            w.write_record([
                it.as_str(),
                &n.to_string(),
                &logit.to_string(),
                &weight.to_string(),
                if s.corrupted { "1" } else { "0" },
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Weight trace as a matrix: one row per snapshot, one column per sample.
pub fn write_weight_matrix<W: Write>(out: W, trace: &[(usize, WeightState)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n = trace.first().map_or(0, |(_, s)| s.len());
    let mut header = vec!["iter".to_string()];
    header.extend((0..n).map(|i| format!("w_{i}")));
    w.write_record(&header)?;
    for (iter, state) in trace {
        check_len("weight snapshot", n, state.len())?;
        let mut row = vec![iter.to_string()];
        row.extend(state.weights().iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_weights`] back into snapshots.
pub fn read_weights<R: Read>(input: R) -> Result<Vec<(usize, WeightState)>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out: Vec<(usize, Vec<f64>)> = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let get = |k: usize| record.get(k).ok_or_else(|| format_err(line, "missing field"));
        let iter = get(0)?.parse::<usize>().map_err(|e| format_err(line, e))?;
        let logit = get(2)?.parse::<f64>().map_err(|e| format_err(line, e))?;
        match out.last_mut() {
            Some((it, logits)) if *it == iter => logits.push(logit),
            _ => out.push((iter, vec![logit])),
        }
    }
    out.into_iter()
        .map(|(iter, logits)| Ok((iter, WeightState::from_logits(logits)?)))
        .collect()
}

/// Little-endian `u32` action count, state dimension and version, then the
/// flat parameters as `f64`.
pub fn write_params<W: Write>(mut out: W, params: &PolicyParams) -> Result<()> {
    for v in [params.actions() as u32, params.dim() as u32, PARAMS_VERSION] {
        out.write_all(&v.to_le_bytes())?;
    }
    for x in params.to_flat() {
        out.write_all(&x.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_params<R: Read>(mut input: R) -> Result<PolicyParams> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 12 {
        return Err(Error::Format("parameter file is shorter than its header".into()));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[4 * k..4 * k + 4].try_into().unwrap()) as usize;
    let (actions, dim, version) = (word(0), word(1), word(2) as u32);
    if version != PARAMS_VERSION {
        return Err(Error::Format(format!("unsupported parameter version {version}")));
    }
    let body = &bytes[12..];
    if body.len() % 8 != 0 {
        return Err(Error::Format("parameter payload is not a whole number of f64".into()));
    }
    check_len("parameter count", actions * dim + actions, body.len() / 8)?;
    let flat: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    PolicyParams::from_flat(actions, dim, &flat)
}
