//! CSV tables. Every float is written with 17 significant digits so that
//! reading a file back returns the exact `f64`.

use std::io::{Read, Write};

use mess3_core::belief::{simplex_coords, GeometryCloud};
use mess3_core::hmm::TokenSeq;
use mess3_core::train::Checkpoint;

use crate::error::{LabError, LabResult};

pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_err(what: &str, e: impl ToString) -> LabError {
    LabError::format(what, e)
}

pub const CLOUD_HEADER: [&str; 11] = ["seq", "length", "prob", "b0", "b1", "b2", "x2d", "y2d", "r", "g", "b"];

pub fn write_cloud<W: Write>(out: W, cloud: &GeometryCloud) -> LabResult<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CLOUD_HEADER).map_err(|e| csv_err("cloud csv", e))?;
    for e in &cloud.entries {
        let c = e.point.coords;
        let (x, y) = simplex_coords(&c);
        let mut rec = vec![e.seq.to_digits(), e.seq.as_slice().len().to_string(), num(e.prob)];
        rec.extend([c[0], c[1], c[2], x, y, e.rgb[0], e.rgb[1], e.rgb[2]].map(num));
        w.write_record(&rec).map_err(|e| csv_err("cloud csv", e))?;
    }
    w.flush().map_err(|e| csv_err("cloud csv", e))
}

/// One parsed row of a cloud table.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudRow {
    pub seq: TokenSeq,
    pub prob: f64,
    pub coords: [f64; 3],
    pub xy: (f64, f64),
    pub rgb: [f64; 3],
}

pub fn read_cloud<R: Read>(input: R) -> LabResult<Vec<CloudRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(|e| csv_err("cloud csv", e))?.clone();
    if header.iter().ne(CLOUD_HEADER) {
        return Err(LabError::format("cloud csv", format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err("cloud csv", e))?;
        let f = |i: usize| -> LabResult<f64> { rec[i].parse().map_err(|e| csv_err("cloud csv", e)) };
        rows.push(CloudRow {
            seq: TokenSeq::parse(&rec[0])?,
            prob: f(2)?,
            coords: [f(3)?, f(4)?, f(5)?],
            xy: (f(6)?, f(7)?),
            rgb: [f(8)?, f(9)?, f(10)?],
        });
    }
    Ok(rows)
}

pub fn write_contexts<W: Write>(out: W, contexts: &[(TokenSeq, f64)]) -> LabResult<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["seq", "length", "probability"]).map_err(|e| csv_err("contexts csv", e))?;
    for (seq, p) in contexts {
        w.write_record([seq.to_digits(), seq.as_slice().len().to_string(), num(*p)])
            .map_err(|e| csv_err("contexts csv", e))?;
    }
    w.flush().map_err(|e| csv_err("contexts csv", e))
}

pub fn write_sequences<W: Write>(out: W, seqs: &[TokenSeq]) -> LabResult<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index", "seq"]).map_err(|e| csv_err("sequences csv", e))?;
    for (i, s) in seqs.iter().enumerate() {
        w.write_record([i.to_string(), s.to_digits()]).map_err(|e| csv_err("sequences csv", e))?;
    }
    w.flush().map_err(|e| csv_err("sequences csv", e))
}

/// `patterns[h][d][s]` as `dest,src,head,value` rows.
pub fn write_pattern<W: Write>(out: W, patterns: &[Vec<Vec<f64>>]) -> LabResult<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["dest", "src", "head", "value"]).map_err(|e| csv_err("pattern csv", e))?;
    for (h, rows) in patterns.iter().enumerate() {
        for (d, row) in rows.iter().enumerate() {
            for (s, v) in row.iter().enumerate() {
                w.write_record([d.to_string(), s.to_string(), h.to_string(), num(*v)])
                    .map_err(|e| csv_err("pattern csv", e))?;
            }
        }
    }
    w.flush().map_err(|e| csv_err("pattern csv", e))
}

/// Streams `step,loss,kl,probe_loss` rows as checkpoints arrive.
pub struct MetricsWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(out: W) -> LabResult<Self> {
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record(["step", "loss", "kl", "probe_loss"]).map_err(|e| csv_err("metrics csv", e))?;
        Ok(Self { inner })
    }

    pub fn push(&mut self, ck: &Checkpoint) -> LabResult<()> {
        self.inner
            .write_record([ck.step.to_string(), num(ck.train_loss), num(ck.kl), num(ck.probe_loss)])
            .map_err(|e| csv_err("metrics csv", e))?;
        self.inner.flush().map_err(|e| csv_err("metrics csv", e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub loss: f64,
    pub kl: f64,
    pub probe_loss: f64,
}

pub fn read_metrics<R: Read>(input: R) -> LabResult<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err("metrics csv", e))?;
        let f = |i: usize| -> LabResult<f64> { rec[i].parse().map_err(|e| csv_err("metrics csv", e)) };
        rows.push(MetricsRow {
            step: rec[0].parse().map_err(|e| csv_err("metrics csv", e))?,
            loss: f(1)?,
            kl: f(2)?,
            probe_loss: f(3)?,
        });
    }
    Ok(rows)
}

/// Model points projected into the simplex plane, in context order.
pub fn write_projection<W: Write>(out: W, seqs: &[TokenSeq], coords: &[[f64; 3]], rgb: &[[f64; 3]]) -> LabResult<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["seq", "length", "p0", "p1", "p2", "x2d", "y2d", "r", "g", "b"])
        .map_err(|e| csv_err("projection csv", e))?;
    for ((s, c), col) in seqs.iter().zip(coords).zip(rgb) {
        let (x, y) = simplex_coords(c);
        let mut rec = vec![s.to_digits(), s.as_slice().len().to_string()];
        rec.extend([c[0], c[1], c[2], x, y, col[0], col[1], col[2]].map(num));
        w.write_record(&rec).map_err(|e| csv_err("projection csv", e))?;
    }
    w.flush().map_err(|e| csv_err("projection csv", e))
}
