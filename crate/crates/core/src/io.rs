//! File formats: dataset CSV, model text files, training config and result
//! tables. Floats are written with 17 significant digits so they parse back
//! to the same bits.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::Path;

use crate::coda::{self, AbundanceKind, CompositionMatrix, LabelVector};
use crate::error::{Error, Result};
use crate::eval::{ConfigSummary, Dataset, StandardizedResult};
use crate::matrix::Matrix;
use crate::net::{DeepCodaParams, Head};
use crate::train::{TrainConfig, TrainReport};

/// Scientific notation with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(" ")
}

/// Parsed dataset file before preprocessing.
#[derive(Debug, Clone)]
pub struct DatasetFile {
    pub data: CompositionMatrix,
    pub labels: LabelVector,
}

/// Reads `sample_id,<features...>,label` CSV text.
///
/// Rows that all sum to one are read as relative abundances, anything else as
/// absolute.
pub fn parse_dataset(text: &str) -> Result<DatasetFile> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.first() != Some(&"sample_id") {
        return Err(Error::Parse {
            line: 1,
            msg: "first column must be `sample_id`".into(),
        });
    }
    if cols.last() != Some(&"label") {
        return Err(Error::Parse {
            line: 1,
            msg: "last column must be `label`".into(),
        });
    }
    if cols.len() < 4 {
        return Err(Error::Parse {
            line: 1,
            msg: "need at least 2 feature columns".into(),
        });
    }
    let names: Vec<String> = cols[1..cols.len() - 1].iter().map(|s| s.to_string()).collect();
    let d = names.len();

    let mut ids = Vec::new();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        if rec.len() != d + 2 {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", d + 2, rec.len()),
            });
        }
        ids.push(rec[0].to_string());
        for (j, field) in rec.iter().enumerate().skip(1).take(d) {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("column {} is not a number: `{field}`", names[j - 1]),
            })?;
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Parse {
                    line,
                    msg: format!("column {} has invalid abundance {v}", names[j - 1]),
                });
            }
            values.push(v);
        }
        let label = match &rec[d + 1] {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Parse {
                    line,
                    msg: format!("label must be 0 or 1, found `{other}`"),
                })
            }
        };
        labels.push(label);
    }
    if ids.is_empty() {
        return Err(Error::Parse {
            line: 2,
            msg: "no data rows".into(),
        });
    }
    let n = ids.len();
    let m = Matrix::from_vec(n, d, values)?;
    let relative = m
        .iter_rows()
        .all(|r| (r.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    let kind = if relative {
        AbundanceKind::Relative
    } else {
        AbundanceKind::Absolute
    };
    Ok(DatasetFile {
        data: CompositionMatrix::new(m, ids, names, kind)?,
        labels: LabelVector::new(labels)?,
    })
}

pub fn read_dataset(path: &Path) -> Result<DatasetFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_dataset(&text)
}

/// Reads a dataset file and replaces zeros when any are present.
pub fn load_dataset(path: &Path, delta_fraction: f64) -> Result<Dataset> {
    let file = read_dataset(path)?;
    let data = if file.data.has_zeros() {
        coda::replace_zeros(&file.data, delta_fraction)?
    } else {
        file.data
    };
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    Dataset::new(name, data, file.labels)
}

pub fn format_dataset(data: &CompositionMatrix, labels: &LabelVector) -> String {
    let mut out = String::from("sample_id");
    for name in data.feature_names() {
        out.push(',');
        out.push_str(name);
    }
    out.push_str(",label\n");
    for (i, id) in data.sample_ids().iter().enumerate() {
        out.push_str(id);
        for v in data.values().row(i) {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        let _ = writeln!(out, ",{}", labels.as_slice()[i]);
    }
    out
}

const MODEL_MAGIC: &str = "# deepcoda model v1";

/// `key = values` text, one tensor per line, preceded by a `dims = D B H` line.
pub fn format_model(p: &DeepCodaParams) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MODEL_MAGIC}");
    let _ = writeln!(out, "dims = {} {} {}", p.n_features, p.n_bottlenecks, p.hidden);
    let _ = writeln!(out, "head = {}", p.head);
    let names = ["beta", "beta0", "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2", "linear_v"];
    for (name, t) in names.iter().zip(p.tensors()) {
        let _ = writeln!(out, "{name} = {}", fmt_list(t));
    }
    let _ = writeln!(out, "linear_v0 = {}", fmt_f64(p.linear_v0));
    out
}

/// Splits `key = value` lines, skipping blanks and `#` comments.
fn key_values(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: k + 1,
            msg: format!("expected `key = value`, found `{line}`"),
        })?;
        out.push((k + 1, key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("invalid value for {key}: `{s}`"),
    })
}

fn parse_floats(line: usize, key: &str, s: &str) -> Result<Vec<f64>> {
    s.split_whitespace().map(|t| parse_num(line, key, t)).collect()
}

pub fn parse_model(text: &str) -> Result<DeepCodaParams> {
    let mut fields: BTreeMap<String, (usize, String)> = BTreeMap::new();
    for (line, key, value) in key_values(text)? {
        if fields.insert(key.clone(), (line, value)).is_some() {
            return Err(Error::Parse {
                line,
                msg: format!("duplicate key {key}"),
            });
        }
    }
    let take = |fields: &mut BTreeMap<String, (usize, String)>, key: &str| {
        fields.remove(key).ok_or_else(|| Error::Parse {
            line: 0,
            msg: format!("missing key {key}"),
        })
    };
    let (line, dims) = take(&mut fields, "dims")?;
    let dims: Vec<usize> = dims
        .split_whitespace()
        .map(|t| parse_num(line, "dims", t))
        .collect::<Result<_>>()?;
    let [d, b, h] = dims[..] else {
        return Err(Error::Parse {
            line,
            msg: "dims needs 3 values".into(),
        });
    };
    let (line, head) = take(&mut fields, "head")?;
    let head: Head = head.parse().map_err(|e: Error| Error::Parse {
        line,
        msg: e.to_string(),
    })?;
    let mut p = DeepCodaParams::zeros(d, b, h, head);
    let names = ["beta", "beta0", "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2", "linear_v"];
    let mut tensors = Vec::new();
    for name in names {
        let (line, v) = take(&mut fields, name)?;
        tensors.push(parse_floats(line, name, &v)?);
    }
    for (dst, src) in p.tensors_mut().into_iter().zip(tensors) {
        *dst = src;
    }
    let (line, v0) = take(&mut fields, "linear_v0")?;
    p.linear_v0 = parse_num(line, "linear_v0", &v0)?;
    if let Some((key, (line, _))) = fields.into_iter().next() {
        return Err(Error::Parse {
            line,
            msg: format!("unknown key {key}"),
        });
    }
    p.validate()?;
    Ok(p)
}

pub fn write_model(path: &Path, p: &DeepCodaParams) -> Result<()> {
    std::fs::write(path, format_model(p))?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<DeepCodaParams> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_model(&text)
}

/// Flat `key = value` training config. Keys match [`TrainConfig`] fields;
/// omitted keys keep their defaults and unknown keys are rejected.
pub fn parse_config(text: &str) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    let mut seen = std::collections::HashSet::new();
    for (line, key, value) in key_values(text)? {
        if !seen.insert(key.clone()) {
            return Err(Error::Parse {
                line,
                msg: format!("duplicate key {key}"),
            });
        }
        let v = value.as_str();
        match key.as_str() {
            "n_bottlenecks" => cfg.n_bottlenecks = parse_num(line, &key, v)?,
            "lambda_c" => cfg.lambda_c = parse_num(line, &key, v)?,
            "lambda_s" => cfg.lambda_s = parse_num(line, &key, v)?,
            "learning_rate" => cfg.learning_rate = parse_num(line, &key, v)?,
            "epochs" => cfg.epochs = parse_num(line, &key, v)?,
            "seed" => cfg.seed = parse_num(line, &key, v)?,
            "head" => {
                cfg.head = v.parse().map_err(|e: Error| Error::Parse {
                    line,
                    msg: e.to_string(),
                })?
            }
            "adam_beta1" => cfg.adam_beta1 = parse_num(line, &key, v)?,
            "adam_beta2" => cfg.adam_beta2 = parse_num(line, &key, v)?,
            "adam_eps" => cfg.adam_eps = parse_num(line, &key, v)?,
            _ => {
                return Err(Error::Parse {
                    line,
                    msg: format!("unknown key {key}"),
                })
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn format_config(cfg: &TrainConfig) -> String {
    format!(
        "n_bottlenecks = {}\nlambda_c = {}\nlambda_s = {}\nlearning_rate = {}\nepochs = {}\n\
         seed = {}\nhead = {}\nadam_beta1 = {}\nadam_beta2 = {}\nadam_eps = {}\n",
        cfg.n_bottlenecks,
        cfg.lambda_c,
        cfg.lambda_s,
        cfg.learning_rate,
        cfg.epochs,
        cfg.seed,
        cfg.head,
        cfg.adam_beta1,
        cfg.adam_beta2,
        cfg.adam_eps
    )
}

/// `epoch,loss` rows.
pub fn format_loss_history(report: &TrainReport) -> String {
    let mut out = String::from("epoch,loss\n");
    for (e, l) in report.loss_history.iter().enumerate() {
        let _ = writeln!(out, "{e},{}", fmt_f64(*l));
    }
    out
}

/// `bottleneck,residual` rows of the final zero-sum residuals.
pub fn format_residuals(report: &TrainReport) -> String {
    let mut out = String::from("bottleneck,residual\n");
    for (b, r) in report.final_constraint_residuals.iter().enumerate() {
        let _ = writeln!(out, "{},{}", b + 1, fmt_f64(*r));
    }
    out
}

pub const RESULTS_HEADER: &str = "dataset,method,split,auc,standardized_auc";

pub fn format_results(rows: &[StandardizedResult]) -> String {
    let mut out = format!("{RESULTS_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.result.dataset,
            r.result.method,
            r.result.split_index,
            fmt_f64(r.result.auc),
            fmt_f64(r.standardized_auc)
        );
    }
    out
}

pub fn format_config_table(rows: &[ConfigSummary]) -> String {
    let mut out = String::from("method,n,median_standardized_auc,mean_standardized_auc\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.method,
            r.n,
            fmt_f64(r.median),
            fmt_f64(r.mean)
        );
    }
    out
}
