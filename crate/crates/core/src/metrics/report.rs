use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{band, Band, IccResult, MetricsError};
use crate::measure::{MeasureKind, Measurement};

/// One line of the report CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub measurement: String,
    pub kind: MeasureKind,
    pub icc: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub band: Band,
    pub n: usize,
}

impl ReportRow {
    pub fn new(m: &Measurement, r: &IccResult) -> Self {
        Self {
            measurement: m.name.clone(),
            kind: m.kind,
            icc: r.icc,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
            band: r.band,
            n: r.components.n,
        }
    }
}

/// Mean and population SD of point estimates plus band counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
    pub mean_ci_width: f64,
    pub bands: BTreeMap<String, usize>,
}

pub fn aggregate(rows: &[ReportRow]) -> Result<Aggregate, MetricsError> {
    if rows.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = rows.len() as f64;
    let mean = rows.iter().map(|r| r.icc).sum::<f64>() / n;
    let var = rows.iter().map(|r| (r.icc - mean).powi(2)).sum::<f64>() / n;
    let mut bands: BTreeMap<String, usize> = Band::ALL.iter().map(|b| (b.to_string(), 0)).collect();
    for r in rows {
        *bands.get_mut(r.band.as_str()).expect("all bands present") += 1;
    }
    Ok(Aggregate {
        count: rows.len(),
        mean,
        sd: var.sqrt(),
        min: rows.iter().map(|r| r.icc).fold(f64::INFINITY, f64::min),
        max: rows.iter().map(|r| r.icc).fold(f64::NEG_INFINITY, f64::max),
        mean_ci_width: rows.iter().map(|r| r.ci_high - r.ci_low).sum::<f64>() / n,
        bands,
    })
}

/// `100·(ours − baseline)/baseline`, rounded to two decimals.
pub fn improvement_pct(ours: f64, baseline: f64) -> Result<f64, MetricsError> {
    if !(baseline > 0.0) {
        return Err(MetricsError::NonPositiveBaseline(baseline));
    }
    Ok((100.0 * (ours - baseline) / baseline * 100.0).round() / 100.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: String,
    pub baseline_mean: BTreeMap<String, f64>,
    pub improvement_pct: BTreeMap<String, f64>,
}

/// Structured-text summary of a report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub overall: Aggregate,
    pub kinds: BTreeMap<String, Aggregate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Comparison>,
}

impl Summary {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("summary is plain data")
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvaluationReport {
    pub rows: Vec<ReportRow>,
}

impl EvaluationReport {
    pub fn from_results<'a>(items: impl IntoIterator<Item = (&'a Measurement, &'a IccResult)>) -> Self {
        Self {
            rows: items.into_iter().map(|(m, r)| ReportRow::new(m, r)).collect(),
        }
    }

    pub fn overall(&self) -> Result<Aggregate, MetricsError> {
        aggregate(&self.rows)
    }

    pub fn kinds(&self) -> Vec<MeasureKind> {
        MeasureKind::ALL
            .into_iter()
            .filter(|k| self.rows.iter().any(|r| r.kind == *k))
            .collect()
    }

    pub fn by_kind(&self, kind: MeasureKind) -> Result<Aggregate, MetricsError> {
        let rows: Vec<ReportRow> = self.rows.iter().filter(|r| r.kind == kind).cloned().collect();
        aggregate(&rows)
    }

    /// Aggregates overall and per kind; with a baseline, also the
    /// improvement of mean ICC per kind and overall.
    pub fn summary(&self, baseline: Option<(&str, &EvaluationReport)>) -> Result<Summary, MetricsError> {
        let overall = self.overall()?;
        let mut kinds = BTreeMap::new();
        for k in self.kinds() {
            kinds.insert(k.to_string(), self.by_kind(k)?);
        }
        let comparison = match baseline {
            None => None,
            Some((name, base)) => {
                check_compatible(self, base)?;
                let mut baseline_mean = BTreeMap::new();
                let mut improvement = BTreeMap::new();
                let mut pairs = vec![("overall".to_string(), overall.mean, base.overall()?.mean)];
                for k in self.kinds() {
                    pairs.push((k.to_string(), kinds[k.as_str()].mean, base.by_kind(k)?.mean));
                }
                for (key, ours, theirs) in pairs {
                    baseline_mean.insert(key.clone(), theirs);
                    if theirs > 0.0 {
                        improvement.insert(key, improvement_pct(ours, theirs)?);
                    }
                }
                Some(Comparison {
                    baseline: name.to_string(),
                    baseline_mean,
                    improvement_pct: improvement,
                })
            }
        };
        Ok(Summary {
            overall,
            kinds,
            comparison,
        })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), MetricsError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["measurement", "kind", "icc", "ci_low", "ci_high", "band", "n"])?;
        for r in &self.rows {
            wr.write_record([
                r.measurement.clone(),
                r.kind.to_string(),
                r.icc.to_string(),
                r.ci_low.to_string(),
                r.ci_high.to_string(),
                r.band.to_string(),
                r.n.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, MetricsError> {
        let mut rd = csv::Reader::from_reader(r);
        let mut rows = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let rec = rec?;
            let bad = |reason: &str| MetricsError::BadRow {
                row: i + 1,
                reason: reason.to_string(),
            };
            if rec.len() != 7 {
                return Err(bad("expected 7 columns"));
            }
            let num = |j: usize| rec[j].parse::<f64>().map_err(|_| bad("non-numeric value"));
            let icc = num(2)?;
            let row = ReportRow {
                measurement: rec[0].to_string(),
                kind: MeasureKind::parse(&rec[1]).ok_or_else(|| bad("unknown kind"))?,
                icc,
                ci_low: num(3)?,
                ci_high: num(4)?,
                band: Band::parse(&rec[5]).ok_or_else(|| bad("unknown band"))?,
                n: rec[6].parse().map_err(|_| bad("bad n"))?,
            };
            if row.band != band(icc) {
                return Err(bad("band inconsistent with icc"));
            }
            rows.push(row);
        }
        Ok(Self { rows })
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), MetricsError> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self, MetricsError> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

fn check_compatible(a: &EvaluationReport, b: &EvaluationReport) -> Result<(), MetricsError> {
    let names = |r: &EvaluationReport| {
        let mut v: Vec<(String, MeasureKind)> = r.rows.iter().map(|x| (x.measurement.clone(), x.kind)).collect();
        v.sort();
        v
    };
    let (na, nb) = (names(a), names(b));
    if na != nb {
        let only_a: Vec<_> = na.iter().filter(|x| !nb.contains(x)).map(|x| x.0.as_str()).collect();
        let only_b: Vec<_> = nb.iter().filter(|x| !na.contains(x)).map(|x| x.0.as_str()).collect();
        return Err(MetricsError::Incompatible(format!(
            "only in first: {only_a:?}; only in second: {only_b:?}"
        )));
    }
    Ok(())
}

/// Side-by-side mean±sd and band counts per kind. Columns after the first
/// report carry the improvement of mean ICC relative to the first.
pub fn comparison_table(reports: &[(String, EvaluationReport)], markdown: bool) -> Result<String, MetricsError> {
    let (_, first) = reports.first().ok_or(MetricsError::Empty)?;
    for (_, r) in &reports[1..] {
        check_compatible(first, r)?;
    }
    let mut header = vec!["kind".to_string()];
    for (i, (name, _)) in reports.iter().enumerate() {
        header.push(format!("{name} mean±sd"));
        header.push(format!("{name} poor/fair/good/excellent"));
        if i > 0 {
            header.push(format!("{name} improvement %"));
        }
    }
    let mut rows = Vec::new();
    let mut keys: Vec<Option<MeasureKind>> = first.kinds().into_iter().map(Some).collect();
    keys.push(None);
    for key in keys {
        let label = key.map_or("overall".to_string(), |k| k.to_string());
        let mut row = vec![label];
        let base_mean = match key {
            Some(k) => first.by_kind(k)?.mean,
            None => first.overall()?.mean,
        };
        for (i, (_, r)) in reports.iter().enumerate() {
            let agg = match key {
                Some(k) => r.by_kind(k)?,
                None => r.overall()?,
            };
            row.push(format!("{:.3} ± {:.3}", agg.mean, agg.sd));
            let counts: Vec<String> = Band::ALL.iter().map(|b| agg.bands[b.as_str()].to_string()).collect();
            row.push(counts.join("/"));
            if i > 0 {
                row.push(match improvement_pct(agg.mean, base_mean) {
                    Ok(p) => format!("{p:.2}"),
                    Err(_) => "n/a".into(),
                });
            }
        }
        rows.push(row);
    }

    let mut out = String::new();
    if markdown {
        let _ = writeln!(out, "| {} |", header.join(" | "));
        let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
        for r in rows {
            let _ = writeln!(out, "| {} |", r.join(" | "));
        }
    } else {
        let widths: Vec<usize> = (0..header.len())
            .map(|j| rows.iter().map(|r| r[j].chars().count()).chain([header[j].chars().count()]).max().unwrap_or(0))
            .collect();
        for r in std::iter::once(&header).chain(rows.iter()) {
            let cells: Vec<String> = r.iter().zip(&widths).map(|(c, &w)| format!("{c:<w$}")).collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(name: &str, kind: MeasureKind, icc: f64) -> ReportRow {
        ReportRow {
            measurement: name.into(),
            kind,
            icc,
            ci_low: icc - 0.1,
            ci_high: icc + 0.05,
            band: band(icc),
            n: 10,
        }
    }

    #[test]
    fn improvement_reproduces_reported_percentages() {
        assert_eq!(improvement_pct(0.665, 0.535).unwrap(), 24.30);
        assert_eq!(improvement_pct(0.801, 0.755).unwrap(), 6.09);
        assert_eq!(improvement_pct(0.554, 0.387).unwrap(), 43.15);
        assert_eq!(improvement_pct(0.717, 0.589).unwrap(), 21.73);
        assert!(improvement_pct(0.5, 0.0).is_err());
        assert!(improvement_pct(0.5, -0.1).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let a = aggregate(&[row("vol_a", MeasureKind::Volume, 0.7)]).unwrap();
        assert_eq!((a.mean, a.sd), (0.7, 0.0));
        let a = aggregate(&[row("vol_a", MeasureKind::Volume, 0.4), row("vol_b", MeasureKind::Volume, 0.8)]).unwrap();
        assert!((a.mean - 0.6).abs() < 1e-15 && (a.sd - 0.2).abs() < 1e-15);
        assert_eq!(a.bands["fair"], 1);
        assert_eq!(a.bands["excellent"], 1);
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn csv_round_trip_and_comparison() {
        let ours = EvaluationReport {
            rows: vec![
                row("vol_a", MeasureKind::Volume, 0.9),
                row("thk_a", MeasureKind::Thickness, 0.65),
                row("curv_a", MeasureKind::Curvature, 0.3),
            ],
        };
        let mut buf = Vec::new();
        ours.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("measurement,kind,icc,ci_low,ci_high,band,n\n"));
        assert_eq!(EvaluationReport::read_csv(buf.as_slice()).unwrap(), ours);

        let base = EvaluationReport {
            rows: ours.rows.iter().map(|r| row(&r.measurement, r.kind, r.icc * 0.8)).collect(),
        };
        let s = ours.summary(Some(("base", &base))).unwrap();
        let cmp = s.comparison.unwrap();
        assert_eq!(cmp.improvement_pct["volume"], 25.0);
        assert!(s.kinds.contains_key("curvature"));

        let table = comparison_table(&[("ours".into(), ours.clone()), ("base".into(), base)], true).unwrap();
        assert!(table.contains("| volume |") && table.contains("-20.00"), "{table}");

        let other = EvaluationReport {
            rows: vec![row("vol_z", MeasureKind::Volume, 0.5)],
        };
        assert!(matches!(
            comparison_table(&[("a".into(), ours), ("b".into(), other)], false),
            Err(MetricsError::Incompatible(_))
        ));
    }
}
