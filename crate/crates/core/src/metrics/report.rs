use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

use super::basic::{entropy, spatial_frequency, std_dev};
use super::edge::q_abf;
use super::information::{mutual_information_metric, scd};
use super::structural::{q_c, q_y};
use super::viff::viff;

pub const METRIC_NAMES: [&str; 9] = ["en", "sd", "sf", "q_abf", "mi", "q_c", "q_y", "scd", "viff"];
pub const CSV_HEADER: [&str; 11] = [
    "pair_id", "en", "sd", "sf", "q_abf", "mi", "q_c", "q_y", "scd", "viff", "runtime_s",
];

/// All nine metrics for one fused image plus the time it took to produce it.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub en: f64,
    pub sd: f64,
    pub sf: f64,
    pub q_abf: f64,
    pub mi: f64,
    pub q_c: f64,
    pub q_y: f64,
    pub scd: f64,
    pub viff: f64,
    pub runtime_seconds: f64,
}

impl MetricReport {
    /// Metric values in [`METRIC_NAMES`] order.
    pub fn values(&self) -> [f64; 9] {
        [
            self.en, self.sd, self.sf, self.q_abf, self.mi, self.q_c, self.q_y, self.scd, self.viff,
        ]
    }

    fn from_values(v: [f64; 9], runtime_seconds: f64) -> Self {
        MetricReport {
            en: v[0],
            sd: v[1],
            sf: v[2],
            q_abf: v[3],
            mi: v[4],
            q_c: v[5],
            q_y: v[6],
            scd: v[7],
            viff: v[8],
            runtime_seconds,
        }
    }
}

/// Evaluate every metric on one fused image.
pub fn evaluate_all(f: &Image, a: &Image, b: &Image, elapsed: f64) -> Result<MetricReport> {
    if !(elapsed.is_finite() && elapsed >= 0.0) {
        return Err(Error::invalid(format!("elapsed time {elapsed} must be finite and ≥ 0")));
    }
    let report = MetricReport {
        en: entropy(f)?,
        sd: std_dev(f)?,
        sf: spatial_frequency(f)?,
        q_abf: q_abf(f, a, b)?,
        mi: mutual_information_metric(f, a, b)?,
        q_c: q_c(f, a, b)?,
        q_y: q_y(f, a, b)?,
        scd: scd(f, a, b)?,
        viff: viff(f, a, b)?,
        runtime_seconds: elapsed,
    };
    if let Some((name, v)) = METRIC_NAMES
        .iter()
        .zip(report.values())
        .find(|(_, v)| !v.is_finite())
    {
        return Err(Error::Numeric(format!("metric {name} evaluated to {v}")));
    }
    Ok(report)
}

/// One CSV line.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub pair_id: String,
    pub report: MetricReport,
}

/// Format with 9 significant digits, in the style of C's `%.9g`.
pub(crate) fn format_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if !(-5..9).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        return format!("{mantissa}e{exp}");
    }
    let decimals = (8 - exp) as usize;
    trim_zeros(&format!("{v:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn write_csv<W: Write>(out: W, rows: &[MetricRow]) -> Result<()> {
    let csv_err = |e: csv::Error| Error::invalid(format!("cannot write metric CSV: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for row in rows {
        let mut rec = Vec::with_capacity(CSV_HEADER.len());
        rec.push(row.pair_id.clone());
        rec.extend(row.report.values().iter().map(|&v| format_sig9(v)));
        rec.push(format_sig9(row.report.runtime_seconds));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()
        .map_err(|e| Error::invalid(format!("cannot write metric CSV: {e}")))
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<MetricRow>> {
    let bad = |msg: String| Error::invalid(format!("malformed metric CSV: {msg}"));
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(|e| bad(e.to_string()))?;
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let mut nums = [0.0; 10];
        for (k, slot) in nums.iter_mut().enumerate() {
            let field = &rec[k + 1];
            *slot = field
                .parse()
                .map_err(|_| bad(format!("`{field}` is not a number")))?;
        }
        let mut values = [0.0; 9];
        values.copy_from_slice(&nums[..9]);
        rows.push(MetricRow {
            pair_id: rec[0].to_string(),
            report: MetricReport::from_values(values, nums[9]),
        });
    }
    Ok(rows)
}
