//! Evaluation records and their CSV form.

use std::fmt::Write as _;
use std::path::Path;

pub const CSV_HEADER: &str = "model,corpus,noise_p,ppl,acc,prec,rec,tokens,seed";

/// One `(model, corpus, noise level, seed)` cell. Missing measurements are
/// empty CSV fields; a failed perplexity cell is written as `NaN`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub model: String,
    pub corpus: String,
    pub noise_p: f64,
    pub ppl: Option<f64>,
    pub acc: Option<f64>,
    pub prec: Option<f64>,
    pub rec: Option<f64>,
    pub tokens: Option<usize>,
    pub seed: Option<u64>,
}

impl MetricsRow {
    pub fn new(model: &str, corpus: &str, noise_p: f64) -> Self {
        Self {
            model: model.to_string(),
            corpus: corpus.to_string(),
            noise_p,
            ppl: None,
            acc: None,
            prec: None,
            rec: None,
            tokens: None,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

fn field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsReport {
    pub fn push(&mut self, row: MetricsRow) {
        self.rows.push(row);
    }

    pub fn extend(&mut self, other: MetricsReport) {
        self.rows.extend(other.rows);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                field(&r.model),
                field(&r.corpus),
                r.noise_p,
                opt(r.ppl),
                opt(r.acc),
                opt(r.prec),
                opt(r.rec),
                opt(r.tokens),
                opt(r.seed)
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_csv())
    }

    /// Rows matching `model` and `corpus` at level `p`.
    pub fn cells<'a>(&'a self, model: &'a str, corpus: &'a str, p: f64) -> impl Iterator<Item = &'a MetricsRow> + 'a {
        self.rows
            .iter()
            .filter(move |r| r.model == model && r.corpus == corpus && (r.noise_p - p).abs() < 1e-9)
    }

    /// Mean of the finite perplexities of matching rows.
    pub fn mean_ppl(&self, model: &str, corpus: &str, p: f64) -> Option<f64> {
        mean(self.cells(model, corpus, p).filter_map(|r| r.ppl).filter(|v| v.is_finite()))
    }

    pub fn mean_acc(&self, model: &str, corpus: &str, p: f64) -> Option<f64> {
        mean(self.cells(model, corpus, p).filter_map(|r| r.acc))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}
