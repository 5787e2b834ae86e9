//! Panel CSV ingestion and export.
//!
//! One row per (date, ticker); header required; empty cell = missing. The
//! save format mirrors ingestion exactly so that save(load(f)) round-trips
//! field-identically.

use std::collections::HashMap;
use std::path::Path;

use chrono::NaiveDate;

use super::{MarketPanel, PanelBuilder, PanelError, PanelField};

/// Maps panel fields to CSV header names. Defaults to the canonical names;
/// remap entries when ingesting files with different headers.
#[derive(Debug, Clone)]
pub struct ColumnMap {
    pub date: String,
    pub ticker: String,
    pub fields: [(PanelField, String); 8],
    pub industry: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            date: "date".into(),
            ticker: "ticker".into(),
            fields: PanelField::ALL.map(|f| (f, f.name().to_string())),
            industry: "industry".into(),
        }
    }
}

const REQUIRED_FIELDS: [PanelField; 5] = [
    PanelField::Open,
    PanelField::High,
    PanelField::Low,
    PanelField::Close,
    PanelField::Volume,
];

/// Loads a panel from CSV. Required columns: date, ticker, open, high, low,
/// close, volume (under the names in `map`). vwap, returns, cap and industry
/// are optional. Rows may arrive in any order; the panel indexes dates
/// ascending and tickers lexicographically.
pub fn load_panel(path: &Path, map: &ColumnMap) -> Result<MarketPanel, PanelError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);

    let date_col = col(&map.date).ok_or_else(|| PanelError::MissingColumn(map.date.clone()))?;
    let ticker_col =
        col(&map.ticker).ok_or_else(|| PanelError::MissingColumn(map.ticker.clone()))?;
    let field_cols: [(PanelField, Option<usize>); 8] =
        map.fields.clone().map(|(f, name)| (f, col(&name)));
    for (field, idx) in &field_cols {
        if REQUIRED_FIELDS.contains(field) && idx.is_none() {
            let name = &map.fields.iter().find(|(f, _)| f == field).unwrap().1;
            return Err(PanelError::MissingColumn(name.clone()));
        }
    }
    let industry_col = col(&map.industry);

    struct RawRow {
        line: u64,
        date: NaiveDate,
        ticker: String,
        values: [f64; 8],
        industry: Option<u32>,
    }

    let mut rows: Vec<RawRow> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let cell = |idx: usize| record.get(idx).unwrap_or("").trim();

        let date: NaiveDate = cell(date_col).parse().map_err(|_| PanelError::MalformedRow {
            line,
            msg: format!("cannot parse date '{}' (expected yyyy-mm-dd)", cell(date_col)),
        })?;
        let ticker = cell(ticker_col).to_string();
        if ticker.is_empty() {
            return Err(PanelError::MalformedRow {
                line,
                msg: "empty ticker".into(),
            });
        }

        let mut values = [f64::NAN; 8];
        for (field, idx) in &field_cols {
            if let Some(idx) = idx {
                let raw = cell(*idx);
                if !raw.is_empty() {
                    values[*field as usize] = raw.parse().map_err(|_| PanelError::MalformedRow {
                        line,
                        msg: format!("cannot parse {} value '{}'", field.name(), raw),
                    })?;
                }
            }
        }

        let industry = match industry_col {
            Some(idx) => {
                let raw = cell(idx);
                if raw.is_empty() {
                    None
                } else {
                    Some(raw.parse::<u32>().map_err(|_| PanelError::MalformedRow {
                        line,
                        msg: format!("cannot parse industry group '{raw}'"),
                    })?)
                }
            }
            None => None,
        };

        rows.push(RawRow {
            line,
            date,
            ticker,
            values,
            industry,
        });
    }
    if rows.is_empty() {
        return Err(PanelError::Empty);
    }

    let mut dates: Vec<NaiveDate> = rows.iter().map(|r| r.date).collect();
    dates.sort_unstable();
    dates.dedup();
    let mut tickers: Vec<String> = rows.iter().map(|r| r.ticker.clone()).collect();
    tickers.sort_unstable();
    tickers.dedup();

    let date_idx: HashMap<NaiveDate, usize> =
        dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let ticker_idx: HashMap<&str, usize> = tickers
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();

    let mut builder = PanelBuilder::new(dates, tickers.clone());
    let mut seen = vec![false; date_idx.len() * ticker_idx.len()];
    for row in &rows {
        let t = date_idx[&row.date];
        let j = ticker_idx[row.ticker.as_str()];
        let slot = t * ticker_idx.len() + j;
        if seen[slot] {
            return Err(PanelError::DuplicateRow {
                line: row.line,
                date: row.date,
                ticker: row.ticker.clone(),
            });
        }
        seen[slot] = true;
        for field in PanelField::ALL {
            let v = row.values[field as usize];
            if !v.is_nan() {
                builder.set(field, t, j, v);
            }
        }
        if let Some(group) = row.industry {
            match builder.industry[j] {
                None => builder.set_industry(j, group),
                Some(existing) if existing != group => {
                    log::warn!(
                        "line {}: ticker {} has conflicting industry groups ({} vs {}); keeping first",
                        row.line, row.ticker, existing, group
                    );
                }
                Some(_) => {}
            }
        }
    }
    builder.finish()
}

/// Writes a panel as CSV in the ingestion format, full date x ticker cross
/// product, missing cells empty. Float formatting is shortest-roundtrip, so
/// reloading reproduces every cell exactly.
pub fn save_panel(panel: &MarketPanel, path: &Path) -> Result<(), PanelError> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["date".to_string(), "ticker".to_string()];
    header.extend(PanelField::ALL.iter().map(|f| f.name().to_string()));
    header.push("industry".into());
    writer.write_record(&header)?;

    let fmt = |v: f64| if v.is_nan() { String::new() } else { v.to_string() };
    for (t, date) in panel.dates().iter().enumerate() {
        for (j, ticker) in panel.tickers().iter().enumerate() {
            let mut record = vec![date.to_string(), ticker.clone()];
            for field in PanelField::ALL {
                record.push(fmt(panel.field(field).get(t, j)));
            }
            record.push(
                panel.industry()[j]
                    .map(|g| g.to_string())
                    .unwrap_or_default(),
            );
            writer.write_record(&record)?;
        }
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn well_formed_csv_loads() {
        let f = write_csv(
            "date,ticker,open,high,low,close,volume\n\
             2021-01-04,AAA,10,11,9,10.5,1000\n\
             2021-01-04,BBB,20,22,19,21,500\n\
             2021-01-05,AAA,10.5,11.5,10,11,1100\n\
             2021-01-05,BBB,21,23,20,22,600\n\
             2021-01-06,AAA,11,12,10.5,11.5,900\n\
             2021-01-06,BBB,22,24,21,23,700\n",
        );
        let p = load_panel(f.path(), &ColumnMap::default()).unwrap();
        assert_eq!(p.n_dates(), 3);
        assert_eq!(p.n_tickers(), 2);
        assert_eq!(p.tickers(), &["AAA".to_string(), "BBB".to_string()]);
        assert!((p.field(PanelField::Close).get(2, 1) - 23.0).abs() < 1e-12);
    }

    #[test]
    fn malformed_close_names_the_row() {
        let f = write_csv(
            "date,ticker,open,high,low,close,volume\n\
             2021-01-04,AAA,10,11,9,10.5,1000\n\
             2021-01-05,AAA,10,11,9,abc,1000\n",
        );
        let err = load_panel(f.path(), &ColumnMap::default()).unwrap_err();
        match err {
            PanelError::MalformedRow { line, msg } => {
                assert_eq!(line, 3);
                assert!(msg.contains("close"), "msg: {msg}");
                assert!(msg.contains("abc"), "msg: {msg}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn missing_required_column_is_an_error() {
        let f = write_csv("date,ticker,open,high,low,close\n2021-01-04,AAA,1,2,0.5,1.5\n");
        let err = load_panel(f.path(), &ColumnMap::default()).unwrap_err();
        assert!(matches!(err, PanelError::MissingColumn(c) if c == "volume"));
    }

    #[test]
    fn close_only_column_yields_returns() {
        // optional columns absent entirely is fine as long as the required
        // ones are present; returns come from closes
        let f = write_csv(
            "date,ticker,open,high,low,close,volume\n\
             2021-01-04,AAA,,,,10,\n\
             2021-01-05,AAA,,,,12,\n",
        );
        let p = load_panel(f.path(), &ColumnMap::default()).unwrap();
        let r = p.field(PanelField::Returns);
        assert!(r.get(0, 0).is_nan());
        assert!((r.get(1, 0) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn duplicate_row_is_an_error() {
        let f = write_csv(
            "date,ticker,open,high,low,close,volume\n\
             2021-01-04,AAA,10,11,9,10.5,1000\n\
             2021-01-04,AAA,10,11,9,10.5,1000\n",
        );
        let err = load_panel(f.path(), &ColumnMap::default()).unwrap_err();
        assert!(matches!(err, PanelError::DuplicateRow { line: 3, .. }));
    }

    #[test]
    fn save_then_load_is_field_identical() {
        let f = write_csv(
            "date,ticker,open,high,low,close,volume,cap,industry\n\
             2021-01-04,AAA,10,11,9,10.5,1000,5e9,3\n\
             2021-01-05,AAA,10.5,11.5,10,11,1100,5.1e9,3\n\
             2021-01-04,BBB,20,22,19,21,500,,\n\
             2021-01-05,BBB,,,,,,,\n",
        );
        let p1 = load_panel(f.path(), &ColumnMap::default()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        save_panel(&p1, out.path()).unwrap();
        let p2 = load_panel(out.path(), &ColumnMap::default()).unwrap();
        assert_eq!(p1.dates(), p2.dates());
        assert_eq!(p1.tickers(), p2.tickers());
        assert_eq!(p1.industry(), p2.industry());
        for field in PanelField::ALL {
            assert!(
                p1.field(field).same_cells(p2.field(field)),
                "field {} differs",
                field.name()
            );
        }
    }
}
