//! Per-iteration training log as CSV.
//!
//! Header: `iteration,mean_return,l_drl,l_fdr,l_vq,f_control,code_occupancy_0..K-1`.
//! `mean_return` is empty until the first episode ends; occupancy cells are
//! empty for a run without the semantic module.

use std::io::Write;

use semrl_core::trainer::MetricsRow;

pub fn header(codebook_size: usize) -> Vec<String> {
    let mut h: Vec<String> = ["iteration", "mean_return", "l_drl", "l_fdr", "l_vq", "f_control"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((0..codebook_size).map(|k| format!("code_occupancy_{k}")));
    h
}

fn record(row: &MetricsRow, codebook_size: usize) -> Vec<String> {
    let mut r = vec![
        row.iteration.to_string(),
        row.mean_return.map(|m| m.to_string()).unwrap_or_default(),
        row.l_drl.to_string(),
        row.l_fdr.to_string(),
        row.l_vq.to_string(),
        row.f_control.to_string(),
    ];
    r.extend((0..codebook_size).map(|k| row.code_occupancy.get(k).map(|o| o.to_string()).unwrap_or_default()));
    r
}

pub struct MetricsWriter<W: Write> {
    inner: csv::Writer<W>,
    codebook_size: usize,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(out: W, codebook_size: usize) -> csv::Result<Self> {
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record(header(codebook_size))?;
        Ok(Self { inner, codebook_size })
    }

    pub fn write(&mut self, row: &MetricsRow) -> csv::Result<()> {
        self.inner.write_record(record(row, self.codebook_size))?;
        self.inner.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> Result<W, String> {
        self.inner.into_inner().map_err(|e| e.to_string())
    }
}

/// A parsed metrics row; `code_occupancy` is empty when the cells are.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedRow {
    pub iteration: usize,
    pub mean_return: Option<f64>,
    pub l_drl: f64,
    pub l_fdr: f64,
    pub l_vq: f64,
    pub f_control: f64,
    pub code_occupancy: Vec<f64>,
}

pub fn parse(text: &str) -> Result<(Vec<String>, Vec<ParsedRow>), String> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers().map_err(|e| e.to_string())?.iter().map(str::to_string).collect();
    let num = |s: &str| s.parse::<f64>().map_err(|e| format!("bad number `{s}`: {e}"));
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        if rec.len() < 6 {
            return Err(format!("short row: {rec:?}"));
        }
        rows.push(ParsedRow {
            iteration: rec[0].parse().map_err(|e| format!("bad iteration: {e}"))?,
            mean_return: if rec[1].is_empty() { None } else { Some(num(&rec[1])?) },
            l_drl: num(&rec[2])?,
            l_fdr: num(&rec[3])?,
            l_vq: num(&rec[4])?,
            f_control: num(&rec[5])?,
            code_occupancy: rec.iter().skip(6).filter(|c| !c.is_empty()).map(num).collect::<Result<_, _>>()?,
        });
    }
    Ok((header, rows))
}
