//! Machine-readable run reports: JSON and CSV serialization plus plot-data
//! emission.
//!
//! All floating-point CSV fields are printed with 17 significant digits so
//! downstream tooling can compare runs bitwise. JSON numbers use the
//! shortest representation that round-trips exactly, which is likewise
//! byte-stable across identical runs.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dilatation::DilatationSample;
use crate::modulus::{CavitationReport, ModulusBounds};
use crate::Result;

/// Full-precision decimal formatting (17 significant digits).
pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

/// The configuration that produced a report; echoed verbatim so every
/// report can be re-run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub map: Option<String>,
    pub n: usize,
    pub r: f64,
    #[serde(rename = "R")]
    pub big_r: f64,
    pub sphere_level: u32,
    pub radial_m: usize,
    pub k0: u32,
    pub kmax: u32,
    pub seed: u64,
    pub strict: bool,
    pub format: String,
}

/// One dilatation sample row with its grid point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DilatRow {
    pub x: Vec<f64>,
    #[serde(flatten)]
    pub sample: DilatationSample,
}

/// One (epsilon, four partial integrals) evidence row.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PartialRow {
    pub epsilon: f64,
    pub iq: f64,
    pub ik: f64,
    pub id: f64,
    pub il: f64,
}

/// One inequality-check residual.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckRow {
    pub name: String,
    pub r: f64,
    #[serde(rename = "R")]
    pub big_r: f64,
    pub residual: f64,
}

/// Command-specific numeric payload. This is the part of the report that
/// must be byte-identical across identical runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResultsPayload {
    Dilat {
        samples: Vec<DilatRow>,
    },
    Bounds(ModulusBounds),
    Integrals {
        partials: Vec<PartialRow>,
        report: CavitationReport,
    },
    Classify {
        partials: Vec<PartialRow>,
        report: CavitationReport,
    },
    Check {
        checks: Vec<CheckRow>,
        chain_max_violation: f64,
        chain_points: usize,
    },
    Catalog {
        maps: Vec<(String, String)>,
    },
    Error {
        message: String,
    },
}

/// A complete run report. `timing_ms` is the only field allowed to differ
/// between identical runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub tool_version: String,
    pub config: RunConfig,
    pub warnings: Vec<String>,
    pub results: ResultsPayload,
    pub timing_ms: u64,
}

impl Report {
    pub fn new(config: RunConfig, results: ResultsPayload) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            warnings: Vec::new(),
            results,
            timing_ms: 0,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// JSON of the numeric payload only — the determinism contract.
    pub fn results_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.results)?)
    }

    /// CSV rendering of the payload, 17 significant digits per float.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        match &self.results {
            ResultsPayload::Dilat { samples } => {
                let n = self.config.n;
                let coords: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
                out.push_str(&coords.join(","));
                out.push_str(",K,L,D,Q,T,detJ,regular\n");
                for row in samples {
                    let mut fields: Vec<String> =
                        row.x.iter().map(|v| format_float(*v)).collect();
                    for v in [row.sample.k, row.sample.l, row.sample.d, row.sample.q] {
                        fields.push(format_float(v));
                    }
                    fields.push(
                        row.sample
                            .t
                            .map(format_float)
                            .unwrap_or_default(),
                    );
                    fields.push(format_float(row.sample.det_j));
                    fields.push(row.sample.regular.to_string());
                    out.push_str(&fields.join(","));
                    out.push('\n');
                }
            }
            ResultsPayload::Bounds(b) => {
                out.push_str("r,R,lower,upper,exact\n");
                let mut fields = vec![
                    format_float(b.r),
                    format_float(b.big_r),
                    format_float(b.lower),
                    format_float(b.upper),
                ];
                fields.push(b.exact.map(format_float).unwrap_or_default());
                out.push_str(&fields.join(","));
                out.push('\n');
            }
            ResultsPayload::Integrals { partials, .. }
            | ResultsPayload::Classify { partials, .. } => {
                out.push_str(&partials_csv(partials));
            }
            ResultsPayload::Check { checks, .. } => {
                out.push_str("name,r,R,residual\n");
                for c in checks {
                    out.push_str(&format!(
                        "{},{},{},{}\n",
                        c.name,
                        format_float(c.r),
                        format_float(c.big_r),
                        format_float(c.residual)
                    ));
                }
            }
            ResultsPayload::Catalog { maps } => {
                out.push_str("name,description\n");
                for (name, desc) in maps {
                    out.push_str(&format!("{name},\"{desc}\"\n"));
                }
            }
            ResultsPayload::Error { message } => {
                out.push_str("error\n");
                out.push_str(&format!("\"{}\"\n", message.replace('"', "'")));
            }
        }
        out
    }
}

fn partials_csv(partials: &[PartialRow]) -> String {
    let mut out = String::from("epsilon,IQ,IK,ID,IL\n");
    for p in partials {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            format_float(p.epsilon),
            format_float(p.iq),
            format_float(p.ik),
            format_float(p.id),
            format_float(p.il)
        ));
    }
    out
}

/// Write the plot-friendly CSV slice of a report:
/// `epsilon,IQ,IK,ID,IL` for integral sweeps, `r,lower,upper,exact` for
/// bounds, and a header-only file when the report carries neither.
pub fn emit_plot_data(report: &Report, path: &Path) -> Result<()> {
    let body = match &report.results {
        ResultsPayload::Integrals { partials, .. }
        | ResultsPayload::Classify { partials, .. } => partials_csv(partials),
        ResultsPayload::Bounds(b) => {
            let mut out = String::from("r,lower,upper,exact\n");
            out.push_str(&format!(
                "{},{},{},{}\n",
                format_float(b.r),
                format_float(b.lower),
                format_float(b.upper),
                b.exact.map(format_float).unwrap_or_default()
            ));
            out
        }
        _ => String::from("epsilon,IQ,IK,ID,IL\n"),
    };
    let mut file = std::fs::File::create(path)?;
    file.write_all(body.as_bytes())?;
    Ok(())
}
