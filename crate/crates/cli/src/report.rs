//! Report rows and their CSV/JSON rendering.

use std::io::Write;

use serde::Serialize;
use sparq_core::EvalStats;

use crate::args::Format;

/// Six significant digits in the style of C's `%g`, independent of locale.
pub fn sig6(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = trim_zeros(mantissa);
        return format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs());
    }
    let decimals = (5 - exp) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(sig6).unwrap_or_default()
}

#[derive(Debug, Clone, Serialize)]
pub struct RecordRow {
    pub reference: String,
    pub distorted: String,
    pub tag: String,
    pub subjective: f64,
    pub sparq: Option<f64>,
    pub psnr: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupRow {
    pub metric: &'static str,
    /// `None` for the pool of all records.
    pub tag: Option<String>,
    pub n: usize,
    pub stats: Option<EvalStats>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluationReport {
    pub dataset: String,
    pub polarity: crate::manifest::Polarity,
    pub params: serde_json::Value,
    pub groups: Vec<GroupRow>,
    pub records: Vec<RecordRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub fraction: f64,
    pub srocc: Option<f64>,
    pub n: usize,
    pub error: Option<String>,
}

fn json_to(out: &mut dyn Write, value: &impl Serialize) -> anyhow::Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

pub fn write_records_csv(out: impl Write, rows: &[RecordRow]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["reference", "distorted", "tag", "subjective", "sparq", "psnr", "error"])?;
    for r in rows {
        w.write_record([
            r.reference.clone(),
            r.distorted.clone(),
            r.tag.clone(),
            sig6(r.subjective),
            opt(r.sparq),
            opt(r.psnr),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_evaluation(out: &mut dyn Write, report: &EvaluationReport, format: Format) -> anyhow::Result<()> {
    if format == Format::Json {
        return json_to(out, report);
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["dataset", "metric", "scope", "tag", "n", "srocc", "krocc", "cc", "mae", "rms", "error"])?;
    for g in &report.groups {
        let s = g.stats.as_ref();
        w.write_record([
            report.dataset.clone(),
            g.metric.to_string(),
            if g.tag.is_some() { "tag" } else { "overall" }.to_string(),
            g.tag.clone().unwrap_or_default(),
            g.n.to_string(),
            opt(s.map(|s| s.srocc)),
            opt(s.map(|s| s.krocc)),
            opt(s.map(|s| s.cc)),
            opt(s.map(|s| s.mae)),
            opt(s.map(|s| s.rms)),
            g.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep(out: &mut dyn Write, dataset: &str, points: &[SweepPoint], format: Format) -> anyhow::Result<()> {
    if format == Format::Json {
        #[derive(Serialize)]
        struct Sweep<'a> {
            dataset: &'a str,
            points: &'a [SweepPoint],
        }
        return json_to(out, &Sweep { dataset, points });
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["fraction", "srocc", "n", "error"])?;
    for p in points {
        w.write_record([
            sig6(p.fraction),
            opt(p.srocc),
            p.n.to_string(),
            p.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
