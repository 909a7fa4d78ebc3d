use std::fs;
use std::path::Path;
use std::sync::Arc;

use crate::error::{ensure, Error, Result};
use crate::grn::GeneVocabulary;

/// Genes x samples matrix of normalised expression.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionMatrix {
    genes: Arc<GeneVocabulary>,
    samples: Vec<String>,
    /// Row-major, one row per gene.
    values: Vec<f64>,
}

impl ExpressionMatrix {
    pub fn new(genes: Arc<GeneVocabulary>, samples: Vec<String>, values: Vec<f64>) -> Result<Self> {
        ensure!(
            values.len() == genes.len() * samples.len(),
            Validation,
            "{} values for {} genes x {} samples",
            values.len(),
            genes.len(),
            samples.len()
        );
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "expression of gene {} in sample {} is not finite",
                genes.name(k / samples.len()),
                samples[k % samples.len()]
            )));
        }
        Ok(Self {
            genes,
            samples,
            values,
        })
    }

    pub fn genes(&self) -> &Arc<GeneVocabulary> {
        &self.genes
    }

    pub fn samples(&self) -> &[String] {
        &self.samples
    }

    pub fn num_genes(&self) -> usize {
        self.genes.len()
    }

    pub fn num_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn gene(&self, g: usize) -> &[f64] {
        let n = self.samples.len();
        &self.values[g * n..(g + 1) * n]
    }

    pub fn value(&self, g: usize, s: usize) -> f64 {
        self.values[g * self.samples.len() + s]
    }

    /// Expression of every gene in sample `s`.
    pub fn sample(&self, s: usize) -> Vec<f64> {
        (0..self.num_genes()).map(|g| self.value(g, s)).collect()
    }

    /// Keeps the listed sample columns, repeats allowed.
    pub fn select_samples(&self, columns: &[usize]) -> Self {
        let mut values = Vec::with_capacity(self.num_genes() * columns.len());
        for g in 0..self.num_genes() {
            let row = self.gene(g);
            values.extend(columns.iter().map(|&s| row[s]));
        }
        Self {
            genes: self.genes.clone(),
            samples: columns.iter().map(|&s| self.samples[s].clone()).collect(),
            values,
        }
    }

    /// Tab-separated: header `gene<TAB>sample...`, then one row per gene.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("gene");
        for s in &self.samples {
            out.push('\t');
            out.push_str(s);
        }
        out.push('\n');
        for g in 0..self.num_genes() {
            out.push_str(self.genes.name(g));
            for v in self.gene(g) {
                out.push('\t');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn save_tsv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn from_tsv(text: &str, origin: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .has_headers(true)
            .from_reader(text.as_bytes());
        let header = reader
            .headers()
            .map_err(|e| Error::parse(origin, "header", e.to_string()))?
            .clone();
        ensure!(header.len() >= 2, Validation, "{}: no sample columns", origin.display());
        let samples: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
        let mut names = Vec::new();
        let mut values = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let line = row + 2;
            let record = record.map_err(|e| Error::parse(origin, format!("line {line}"), e.to_string()))?;
            if record.len() != samples.len() + 1 {
                return Err(Error::parse(
                    origin,
                    format!("line {line}"),
                    format!("{} fields, expected {}", record.len(), samples.len() + 1),
                ));
            }
            names.push(record[0].to_owned());
            for (col, field) in record.iter().enumerate().skip(1) {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::parse(origin, format!("line {line} column {}", col + 1), format!("not a number: {field:?}"))
                })?;
                values.push(v);
            }
        }
        let genes = GeneVocabulary::new(names).map_err(|e| Error::parse(origin, "gene column", e.to_string()))?;
        Self::new(Arc::new(genes), samples, values).map_err(|e| Error::parse(origin, "matrix", e.to_string()))
    }

    pub fn load_tsv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExpressionMatrix {
        ExpressionMatrix::new(
            Arc::new(GeneVocabulary::numbered(2)),
            vec!["s1".into(), "s2".into(), "s3".into()],
            vec![1.0, 2.0, 3.0, -0.5, 0.1, 1e-17],
        )
        .unwrap()
    }

    #[test]
    fn tsv_round_trip_is_exact() {
        let m = small();
        let back = ExpressionMatrix::from_tsv(&m.to_tsv(), Path::new("x.tsv")).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn ragged_row_reports_line() {
        let err = ExpressionMatrix::from_tsv("gene\ta\tb\nG0\t1\t2\nG1\t3\n", Path::new("e.tsv")).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn bad_number_reports_column() {
        let err = ExpressionMatrix::from_tsv("gene\ta\nG0\tx\n", Path::new("e.tsv")).unwrap_err();
        assert!(err.to_string().contains("line 2 column 2"), "{err}");
    }

    #[test]
    fn select_samples_repeats_columns() {
        let m = small().select_samples(&[2, 2, 0]);
        assert_eq!(m.gene(0), &[3.0, 3.0, 1.0]);
        assert_eq!(m.sample(2), vec![1.0, -0.5]);
    }
}
