// SPDX-License-Identifier: Apache-2.0

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::spec::{ExperimentSpec, OutputFormat};
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "L,scheme,metric,mean,stderr,trials,seconds";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    #[serde(rename = "L")]
    pub layers: usize,
    pub scheme: String,
    pub metric: String,
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
    pub seconds: f64,
}

impl ResultRow {
    /// Mean and standard error of the mean of `values`.
    pub fn from_samples(layers: usize, scheme: &str, metric: &str, values: &[f64], seconds: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Numerical(format!(
                "no successful trials for {scheme} at L = {layers}"
            )));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let stderr = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        if !mean.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite mean for {scheme} at L = {layers}"
            )));
        }
        Ok(Self {
            layers,
            scheme: scheme.to_string(),
            metric: metric.to_string(),
            mean,
            stderr,
            trials: values.len(),
            seconds,
        })
    }
}

/// `printf("%.{precision}g")`.
pub fn format_g(x: f64, precision: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let p = precision.max(1);
    let sci = format!("{:.*e}", p - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    if exp < -4 || exp >= p as i32 {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (p as i32 - 1 - exp) as usize;
        strip_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn to_csv(rows: &[ResultRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.layers,
            r.scheme,
            r.metric,
            format_g(r.mean, 10),
            format_g(r.stderr, 10),
            r.trials,
            format_g(r.seconds, 10)
        )
        .unwrap();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsDocument {
    pub spec: ExperimentSpec,
    pub rows: Vec<ResultRow>,
}

pub fn to_json(rows: &[ResultRow], spec: &ExperimentSpec) -> String {
    let doc = ResultsDocument {
        spec: spec.clone(),
        rows: rows.to_vec(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("results serialize");
    s.push('\n');
    s
}

pub fn render(rows: &[ResultRow], spec: &ExperimentSpec, format: OutputFormat) -> String {
    match format {
        OutputFormat::Csv => to_csv(rows),
        OutputFormat::Json => to_json(rows, spec),
    }
}

/// Path of the resolved-spec file written next to a CSV result.
pub fn spec_sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".spec.toml");
    path.with_file_name(name)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        context: format!("cannot write {}", path.display()),
        source,
    })
}

/// Writes the rows to `path`. JSON embeds the resolved spec; CSV keeps its
/// fixed header on the first line and gets the spec in a `.spec.toml`
/// sidecar instead.
pub fn emit_results(rows: &[ResultRow], spec: &ExperimentSpec, path: &Path, format: OutputFormat) -> Result<()> {
    write(path, &render(rows, spec, format))?;
    if format == OutputFormat::Csv {
        write(&spec_sidecar(path), &spec.to_toml())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::spec::ExperimentKind;

    #[test]
    fn matches_printf_g() {
        let cases = [
            (1.0, "1"),
            (0.1, "0.1"),
            (7.123456789012, "7.123456789"),
            (123456.0, "123456"),
            (1e10, "1e+10"),
            (12345678901.0, "1.23456789e+10"),
            (1e-5, "1e-05"),
            (0.0001, "0.0001"),
            (-2.5, "-2.5"),
            (0.3333333333333333, "0.3333333333"),
            (9.99999999999, "10"),
            (0.0, "0"),
        ];
        for (x, want) in cases {
            assert_eq!(format_g(x, 10), want, "{x}");
        }
    }

    #[test]
    fn stderr_of_known_samples() {
        let r = ResultRow::from_samples(3, "joint", "sum_rate", &[1.0, 2.0, 3.0, 4.0], 0.0).unwrap();
        assert_eq!(r.mean, 2.5);
        assert!((r.stderr - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(ResultRow::from_samples(1, "x", "y", &[2.0], 0.0).unwrap().stderr, 0.0);
        assert!(ResultRow::from_samples(1, "x", "y", &[], 0.0).is_err());
    }

    #[test]
    fn empty_rows_give_header_only() {
        assert_eq!(to_csv(&[]), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn json_round_trip() {
        let spec = ExperimentSpec::defaults(ExperimentKind::Sumrate);
        let rows = vec![ResultRow::from_samples(2, "codebook", "sum_rate", &[1.5, 2.25], 0.0).unwrap()];
        let text = to_json(&rows, &spec);
        let back: ResultsDocument = serde_json::from_str(&text).unwrap();
        assert_eq!(back.rows, rows);
        assert_eq!(back.spec, spec);
    }

    #[test]
    fn csv_gets_a_spec_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        let spec = ExperimentSpec::defaults(ExperimentKind::Doa);
        emit_results(&[], &spec, &path, OutputFormat::Csv).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), format!("{CSV_HEADER}\n"));
        let side = fs::read_to_string(spec_sidecar(&path)).unwrap();
        assert_eq!(
            ExperimentSpec::from_toml(&side, ExperimentKind::Doa, &Default::default()).unwrap(),
            spec
        );
        assert_eq!(spec_sidecar(&path), dir.path().join("out.csv.spec.toml"));
    }
}
