//! Power-law fits over CSV files written by `sweep` or by hand.

use std::collections::BTreeMap;
use std::path::Path;

use qamc::harness::{fit_power_law, LabeledFit, FitModel, TV_FIT_MIN_STEP};
use qamc::{KernelKind, QamcError};

type Row = (usize, csv::StringRecord);

fn read(path: &Path) -> Result<(Vec<String>, Vec<Row>), QamcError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| QamcError::Config(format!("cannot open {}: {e}", path.display())))?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| QamcError::Parse { line: 1, msg: e.to_string() })?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| QamcError::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        rows.push((line, rec));
    }
    Ok((headers, rows))
}

fn column(headers: &[String], name: &str) -> Result<usize, QamcError> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| QamcError::Parse { line: 1, msg: format!("missing column '{name}'") })
}

fn field<T: std::str::FromStr>(row: &Row, idx: usize, name: &str) -> Result<T, QamcError> {
    let raw = row.1.get(idx).unwrap_or("");
    raw.parse().map_err(|_| QamcError::Parse {
        line: row.0,
        msg: format!("bad {name} value '{raw}'"),
    })
}

fn kernel(row: &Row, idx: usize) -> Result<KernelKind, QamcError> {
    let raw = row.1.get(idx).unwrap_or("");
    raw.parse().map_err(|_| QamcError::Parse {
        line: row.0,
        msg: format!("bad kernel '{raw}'"),
    })
}

/// Running sums keyed by x, averaged at the end.
#[derive(Default)]
struct Means(BTreeMap<u64, (f64, f64, usize)>);

impl Means {
    fn add(&mut self, x: f64, y: f64) {
        let e = self.0.entry(x.to_bits()).or_insert((x, 0.0, 0));
        e.1 += y;
        e.2 += 1;
    }

    fn points(&self) -> Vec<(f64, f64)> {
        let mut pts: Vec<(f64, f64)> = self.0.values().map(|&(x, s, c)| (x, s / c as f64)).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts
    }
}

fn label(model: FitModel, suffix: Option<String>) -> String {
    match suffix {
        Some(s) => format!("{model}@{s}"),
        None => model.to_string(),
    }
}

pub fn fit_file(path: &Path, model: FitModel) -> Result<Vec<LabeledFit>, QamcError> {
    let (headers, rows) = read(path)?;
    if rows.is_empty() {
        return Err(QamcError::Parse { line: 2, msg: "no data rows".into() });
    }
    let has = |name: &str| headers.iter().any(|h| h == name);

    if has("x") && has("y") {
        let (xi, yi) = (column(&headers, "x")?, column(&headers, "y")?);
        let pts = rows
            .iter()
            .map(|r| Ok((field(r, xi, "x")?, field(r, yi, "y")?)))
            .collect::<Result<Vec<_>, QamcError>>()?;
        return Ok(vec![LabeledFit {
            label: model.to_string(),
            kernel: None,
            fit: fit_power_law(&pts, model)?,
        }]);
    }

    let ni = column(&headers, "n")?;
    let ti = column(&headers, "T")?;
    let ki = column(&headers, "kernel")?;
    let mut groups: BTreeMap<(String, KernelKind), Means> = BTreeMap::new();
    let mut temps: Vec<String> = Vec::new();
    let mut ns: Vec<usize> = Vec::new();

    match model {
        FitModel::GapVsN => {
            let gi = column(&headers, "gap")?;
            for r in &rows {
                let n: usize = field(r, ni, "n")?;
                let t = r.1.get(ti).unwrap_or("").to_owned();
                let _: f64 = field(r, ti, "T")?;
                let g: f64 = field(r, gi, "gap")?;
                if !temps.contains(&t) {
                    temps.push(t.clone());
                }
                groups.entry((t, kernel(r, ki)?)).or_default().add(n as f64, g);
            }
        }
        FitModel::TvVsSteps | FitModel::TvVsN => {
            let ci = column(&headers, "checkpoint")?;
            let vi = column(&headers, "tv")?;
            let mut last: BTreeMap<(String, KernelKind, usize), usize> = BTreeMap::new();
            let mut parsed = Vec::with_capacity(rows.len());
            for r in &rows {
                let n: usize = field(r, ni, "n")?;
                let t = r.1.get(ti).unwrap_or("").to_owned();
                let _: f64 = field(r, ti, "T")?;
                let k = kernel(r, ki)?;
                let c: usize = field(r, ci, "checkpoint")?;
                let v: f64 = field(r, vi, "tv")?;
                if !temps.contains(&t) {
                    temps.push(t.clone());
                }
                if !ns.contains(&n) {
                    ns.push(n);
                }
                let m = last.entry((t.clone(), k, n)).or_insert(0);
                *m = (*m).max(c);
                parsed.push((n, t, k, c, v));
            }
            for (n, t, k, c, v) in parsed {
                if model == FitModel::TvVsSteps {
                    if c >= TV_FIT_MIN_STEP {
                        groups.entry((format!("n={n};T={t}"), k)).or_default().add(c as f64, v);
                    }
                } else if c == last[&(t.clone(), k, n)] {
                    groups.entry((t, k)).or_default().add(n as f64, v);
                }
            }
        }
    }

    let mut fits = Vec::new();
    for ((key, k), means) in &groups {
        let suffix = match model {
            FitModel::TvVsSteps if temps.len() > 1 || ns.len() > 1 => Some(key.clone()),
            FitModel::GapVsN | FitModel::TvVsN if temps.len() > 1 => Some(format!("T={key}")),
            _ => None,
        };
        let fit = fit_power_law(&means.points(), model)
            .map_err(|e| e.context(format!("{} fit for kernel {k}", label(model, suffix.clone()))))?;
        fits.push(LabeledFit {
            label: label(model, suffix),
            kernel: Some(*k),
            fit,
        });
    }
    Ok(fits)
}
