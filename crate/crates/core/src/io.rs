//! File formats: dataset/trace/table CSVs and parameter/scenario JSON.
//!
//! CSVs carry a header row, use `,` and `.` and print floats in their
//! shortest round-trip form. Parameter JSON keeps exact zeros.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MoggeError, Result};
use crate::model::{Covariance, DataSet, ExpertComponent, GatingComponent, MoggeParams};
use crate::path::PathRow;
use crate::select::SelectionRow;
use crate::simulate::{InterceptConvention, Scenario};

/// Shortest representation that parses back to the same value.
pub fn fmt_f64(v: f64) -> String {
    if v == 0.0 {
        // normalizes -0.0
        return "0.0".into();
    }
    format!("{v:?}")
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| MoggeError::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = name.to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp: PathBuf = dir.join(tmp_name);
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// A header row followed by `rows`, all fields quoted as needed.
pub fn csv_table(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(header)?;
    for row in rows {
        writer.write_record(&row)?;
    }
    writer.into_inner().map_err(|e| MoggeError::Io(e.into_error()))
}

/// Dataset CSV: `x1..xp`, then `y` (or `y1..yd`), then optional `label`.
pub fn dataset_csv(data: &DataSet, labels: Option<&[usize]>) -> Result<Vec<u8>> {
    if let Some(l) = labels {
        if l.len() != data.n() {
            return Err(MoggeError::Dimension(format!("{} labels for {} rows", l.len(), data.n())));
        }
    }
    let mut header: Vec<String> = (1..=data.p()).map(|j| format!("x{j}")).collect();
    if data.d() == 1 {
        header.push("y".into());
    } else {
        header.extend((1..=data.d()).map(|j| format!("y{j}")));
    }
    if labels.is_some() {
        header.push("label".into());
    }
    let rows = (0..data.n()).map(|i| {
        let mut row: Vec<String> = data.x().row(i).iter().map(|&v| fmt_f64(v)).collect();
        row.extend(data.y().row(i).iter().map(|&v| fmt_f64(v)));
        if let Some(l) = labels {
            row.push(l[i].to_string());
        }
        row
    });
    csv_table(&header, rows)
}

pub fn write_dataset_csv(path: &Path, data: &DataSet, labels: Option<&[usize]>) -> Result<()> {
    write_atomic(path, &dataset_csv(data, labels)?)
}

enum Column {
    X,
    Y,
    Label,
    Skip,
}

/// Reads a dataset CSV; columns are recognised by the header (`x*`, `y*`, `label`).
pub fn read_dataset_csv(path: &Path) -> Result<(DataSet, Option<Vec<usize>>)> {
    let mut reader = csv::Reader::from_path(path)?;
    let roles: Vec<Column> = reader
        .headers()?
        .iter()
        .map(|h| {
            let h = h.trim().to_ascii_lowercase();
            if h == "label" || h == "label_true" {
                Column::Label
            } else if h.starts_with('x') {
                Column::X
            } else if h.starts_with('y') {
                Column::Y
            } else {
                Column::Skip
            }
        })
        .collect();
    let p = roles.iter().filter(|r| matches!(r, Column::X)).count();
    let d = roles.iter().filter(|r| matches!(r, Column::Y)).count();
    let has_labels = roles.iter().any(|r| matches!(r, Column::Label));
    if p == 0 || d == 0 {
        return Err(MoggeError::Parse(format!("{}: need x* and y* columns", path.display())));
    }
    let (mut xs, mut ys, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != roles.len() {
            return Err(MoggeError::Parse(format!("{}: row {} has {} fields", path.display(), line + 1, record.len())));
        }
        for (field, role) in record.iter().zip(&roles) {
            let field = field.trim();
            let number = || {
                field.parse::<f64>().map_err(|_| {
                    MoggeError::Parse(format!("{}: row {}: bad number {field:?}", path.display(), line + 1))
                })
            };
            match role {
                Column::X => xs.push(number()?),
                Column::Y => ys.push(number()?),
                Column::Label => labels.push(field.parse::<usize>().map_err(|_| {
                    MoggeError::Parse(format!("{}: row {}: bad label {field:?}", path.display(), line + 1))
                })?),
                Column::Skip => {}
            }
        }
    }
    let n = xs.len() / p;
    let data = DataSet::new(DMatrix::from_row_slice(n, p, &xs), DMatrix::from_row_slice(n, d, &ys))?;
    Ok((data, has_labels.then_some(labels)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceRecord {
    Full(Vec<Vec<f64>>),
    Diagonal(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRecord {
    pub alpha: f64,
    pub mean: Vec<f64>,
    pub gating_cov: CovarianceRecord,
    pub intercept: Vec<f64>,
    /// p rows of d coefficients.
    pub coeffs: Vec<Vec<f64>>,
    pub cov: Vec<Vec<f64>>,
}

/// Serialized parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsRecord {
    pub k: usize,
    pub p: usize,
    pub d: usize,
    pub components: Vec<ComponentRecord>,
}

fn clean(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().map(clean).collect()).collect()
}

fn matrix_from(rows: &[Vec<f64>], nrows: usize, ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(MoggeError::Parse(format!("{what} must be {nrows}x{ncols}")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl From<&MoggeParams> for ParamsRecord {
    fn from(params: &MoggeParams) -> Self {
        let components = params
            .gating
            .iter()
            .zip(&params.experts)
            .map(|(g, e)| ComponentRecord {
                alpha: g.alpha,
                mean: g.mean.iter().copied().map(clean).collect(),
                gating_cov: match &g.cov {
                    Covariance::Full(m) => CovarianceRecord::Full(rows_of(m)),
                    Covariance::Diagonal(v) => CovarianceRecord::Diagonal(v.iter().copied().collect()),
                },
                intercept: e.intercept.iter().copied().map(clean).collect(),
                coeffs: rows_of(&e.coeffs),
                cov: rows_of(&e.cov),
            })
            .collect();
        Self { k: params.k(), p: params.p(), d: params.d(), components }
    }
}

impl TryFrom<&ParamsRecord> for MoggeParams {
    type Error = MoggeError;

    fn try_from(record: &ParamsRecord) -> Result<Self> {
        if record.components.len() != record.k || record.k == 0 {
            return Err(MoggeError::Parse(format!(
                "k = {} but {} components listed",
                record.k,
                record.components.len()
            )));
        }
        let (p, d) = (record.p, record.d);
        let mut gating = Vec::new();
        let mut experts = Vec::new();
        for c in &record.components {
            if c.mean.len() != p || c.intercept.len() != d {
                return Err(MoggeError::Parse("component mean or intercept has the wrong length".into()));
            }
            let cov = match &c.gating_cov {
                CovarianceRecord::Full(rows) => Covariance::Full(matrix_from(rows, p, p, "gating covariance")?),
                CovarianceRecord::Diagonal(v) => {
                    if v.len() != p {
                        return Err(MoggeError::Parse("gating variances have the wrong length".into()));
                    }
                    Covariance::Diagonal(DVector::from_column_slice(v))
                }
            };
            gating.push(GatingComponent { alpha: c.alpha, mean: DVector::from_column_slice(&c.mean), cov });
            experts.push(ExpertComponent {
                intercept: DVector::from_column_slice(&c.intercept),
                coeffs: matrix_from(&c.coeffs, p, d, "expert coefficients")?,
                cov: matrix_from(&c.cov, d, d, "expert covariance")?,
            });
        }
        MoggeParams::new(gating, experts)
    }
}

pub fn params_to_json(params: &MoggeParams) -> Result<String> {
    Ok(serde_json::to_string_pretty(&ParamsRecord::from(params))?)
}

pub fn params_from_json(text: &str) -> Result<MoggeParams> {
    let record: ParamsRecord = serde_json::from_str(text)?;
    MoggeParams::try_from(&record)
}

pub fn read_params(path: &Path) -> Result<MoggeParams> {
    params_from_json(&fs::read_to_string(path)?)
}

pub fn write_params(path: &Path, params: &MoggeParams) -> Result<()> {
    write_atomic(path, params_to_json(params)?.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRecord {
    pub n: usize,
    pub seed: u64,
    #[serde(default)]
    pub intercept_convention: InterceptConvention,
    pub params: ParamsRecord,
}

pub fn scenario_to_json(scenario: &Scenario) -> Result<String> {
    let record = ScenarioRecord {
        n: scenario.n,
        seed: scenario.seed,
        intercept_convention: scenario.intercept_convention,
        params: ParamsRecord::from(&scenario.true_params),
    };
    Ok(serde_json::to_string_pretty(&record)?)
}

pub fn scenario_from_json(text: &str) -> Result<Scenario> {
    let record: ScenarioRecord = serde_json::from_str(text)?;
    Ok(Scenario {
        true_params: MoggeParams::try_from(&record.params)?,
        n: record.n,
        seed: record.seed,
        intercept_convention: record.intercept_convention,
    })
}

/// `iteration,objective`
pub fn trace_csv(trace: &[f64]) -> Result<Vec<u8>> {
    csv_table(
        &["iteration".into(), "objective".into()],
        trace.iter().enumerate().map(|(i, &v)| vec![(i + 1).to_string(), fmt_f64(v)]),
    )
}

/// `K,lambda,gamma,loglik,df,bic,converged,selected,error`
pub fn selection_csv(rows: &[SelectionRow], selected: Option<usize>) -> Result<Vec<u8>> {
    let header: Vec<String> = ["K", "lambda", "gamma", "loglik", "df", "bic", "converged", "selected", "error"]
        .map(String::from)
        .to_vec();
    csv_table(
        &header,
        rows.iter().enumerate().map(|(i, r)| {
            vec![
                r.k.to_string(),
                fmt_f64(r.lambda),
                fmt_f64(r.gamma),
                fmt_f64(r.loglik),
                r.df.to_string(),
                fmt_f64(r.bic),
                r.converged.to_string(),
                (Some(i) == selected).to_string(),
                r.error.clone().unwrap_or_default(),
            ]
        }),
    )
}

/// `lambda,gamma,component,block,coordinate,estimate`
pub fn path_csv(rows: &[PathRow]) -> Result<Vec<u8>> {
    let header: Vec<String> =
        ["lambda", "gamma", "component", "block", "coordinate", "estimate"].map(String::from).to_vec();
    csv_table(
        &header,
        rows.iter().map(|r| {
            vec![
                fmt_f64(r.lambda),
                fmt_f64(r.gamma),
                r.component.to_string(),
                r.block.clone(),
                r.coordinate.to_string(),
                fmt_f64(r.estimate),
            ]
        }),
    )
}

pub fn read_path_csv(path: &Path) -> Result<Vec<PathRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader.deserialize().map(|r| r.map_err(MoggeError::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{default_scenario, sample_dataset};
    use proptest::prelude::*;

    #[test]
    fn float_formatting_round_trips() {
        for v in [0.1, 1.0, -2.5e-10, 1e300, 123456.789, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f64(-0.0), "0.0");
    }

    #[test]
    fn dataset_csv_round_trip() {
        let (data, labels) = sample_dataset(&default_scenario()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_dataset_csv(&path, &data, Some(&labels)).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x1,x2,x3,x4,x5,x6,x7,x8,y,label\n"));
        let (back, back_labels) = read_dataset_csv(&path).unwrap();
        assert_eq!(back, data);
        assert_eq!(back_labels.unwrap(), labels);
    }

    #[test]
    fn scenario_json_round_trip() {
        let s = default_scenario();
        let back = scenario_from_json(&scenario_to_json(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn malformed_params_are_rejected() {
        assert!(params_from_json("{\"k\": 1}").is_err());
        let mut record = ParamsRecord::from(&default_scenario().true_params);
        record.components[0].mean.pop();
        assert!(MoggeParams::try_from(&record).is_err());
    }

    proptest! {
        #[test]
        fn params_json_round_trip(
            alpha in 0.05f64..0.95,
            mu in proptest::collection::vec(-5.0f64..5.0, 3),
            beta in proptest::collection::vec(prop_oneof![Just(0.0), -3.0f64..3.0], 3),
            var in 0.01f64..4.0,
        ) {
            let gating = vec![
                GatingComponent { alpha, mean: DVector::from_vec(mu.clone()), cov: Covariance::Diagonal(DVector::from_element(3, var)) },
                GatingComponent { alpha: 1.0 - alpha, mean: DVector::from_vec(mu), cov: Covariance::Full(DMatrix::identity(3, 3) * var) },
            ];
            let experts = vec![
                ExpertComponent::univariate(0.3, DVector::from_vec(beta.clone()), var),
                ExpertComponent::univariate(-0.1, DVector::from_vec(beta), 1.0 / var),
            ];
            let params = MoggeParams { gating, experts };
            let back = params_from_json(&params_to_json(&params).unwrap());
            prop_assert_eq!(back.unwrap(), params);
        }
    }
}
