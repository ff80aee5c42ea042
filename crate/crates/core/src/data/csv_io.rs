//! CSV ingestion and export.
//!
//! Layout: a header row with `id,trt,event,y`, optional `event_1..event_K`,
//! `x_<name>` baseline covariates and `z<k>_<name>` intermediate blocks.
//! Missing values are empty fields. Unknown columns are ignored so that
//! exports with appended columns can be read back.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EventCoding, OutcomeDirection, SubjectRecord, TrialDataset};
use crate::error::{Error, Result};

/// Column names / prefixes used when reading a trial CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub id: String,
    pub trt: String,
    pub event: String,
    pub outcome: String,
    pub covariate_prefix: String,
    pub stage_prefix: String,
    pub intermediate_prefix: String,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        ColumnMapping {
            id: "id".into(),
            trt: "trt".into(),
            event: "event".into(),
            outcome: "y".into(),
            covariate_prefix: "x_".into(),
            stage_prefix: "event_".into(),
            intermediate_prefix: "z".into(),
        }
    }
}

struct Layout {
    id: usize,
    trt: usize,
    event: usize,
    outcome: usize,
    covariates: Vec<(usize, String)>,
    stages: Vec<usize>,
    blocks: Vec<Vec<(usize, String)>>,
}

fn find(headers: &[String], name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::MissingColumn(name.to_string()))
}

fn layout(headers: &[String], map: &ColumnMapping) -> Result<Layout> {
    let id = find(headers, &map.id)?;
    let trt = find(headers, &map.trt)?;
    let event = find(headers, &map.event)?;
    let outcome = find(headers, &map.outcome)?;

    let covariates = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| {
            h.strip_prefix(&map.covariate_prefix)
                .filter(|rest| !rest.is_empty())
                .map(|rest| (i, rest.to_string()))
        })
        .collect();

    let mut stage_cols: Vec<(usize, usize)> = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if let Some(k) = h
            .strip_prefix(&map.stage_prefix)
            .and_then(|r| r.parse::<usize>().ok())
        {
            stage_cols.push((k, i));
        }
    }
    stage_cols.sort();
    for (j, (k, _)) in stage_cols.iter().enumerate() {
        if *k != j + 1 {
            return Err(Error::MissingColumn(format!("{}{}", map.stage_prefix, j + 1)));
        }
    }
    let stages = stage_cols.into_iter().map(|(_, i)| i).collect();

    // z<k>_<name>
    let mut block_cols: Vec<(usize, usize, String)> = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        let Some(rest) = h.strip_prefix(&map.intermediate_prefix) else {
            continue;
        };
        let Some((k, name)) = rest.split_once('_') else {
            continue;
        };
        if let Ok(k) = k.parse::<usize>() {
            if k >= 1 && !name.is_empty() {
                block_cols.push((k, i, name.to_string()));
            }
        }
    }
    let n_blocks = block_cols.iter().map(|c| c.0).max().unwrap_or(0);
    let mut blocks = vec![Vec::new(); n_blocks];
    for (k, i, name) in block_cols {
        blocks[k - 1].push((i, name));
    }
    for (k, b) in blocks.iter().enumerate() {
        if b.is_empty() {
            return Err(Error::MissingColumn(format!(
                "{}{}_*",
                map.intermediate_prefix,
                k + 1
            )));
        }
    }

    Ok(Layout {
        id,
        trt,
        event,
        outcome,
        covariates,
        stages,
        blocks,
    })
}

fn parse_f64(field: &str, row: usize, column: &str) -> Result<Option<f64>> {
    let t = field.trim();
    if t.is_empty() {
        return Ok(None);
    }
    let v: f64 = t.parse().map_err(|_| Error::MalformedRow {
        row,
        column: column.to_string(),
        reason: format!("`{t}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::MalformedRow {
            row,
            column: column.to_string(),
            reason: format!("`{t}` is not finite"),
        });
    }
    Ok(Some(v))
}

fn parse_bit(field: &str) -> Option<u8> {
    match field.trim() {
        "0" | "0.0" => Some(0),
        "1" | "1.0" => Some(1),
        _ => None,
    }
}

/// Parses CSV text from any reader.
pub fn read_csv<R: Read>(
    reader: R,
    map: &ColumnMapping,
    coding: EventCoding,
    direction: OutcomeDirection,
) -> Result<TrialDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::Headers)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|s| s.to_string()).collect();
    let lay = layout(&headers, map)?;

    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::MalformedRow {
            row,
            column: "*".into(),
            reason: e.to_string(),
        })?;
        let get = |c: usize| rec.get(c).unwrap_or("");

        let id = get(lay.id).trim().to_string();
        let trt = parse_bit(get(lay.trt)).ok_or_else(|| Error::NonBinaryTreatment {
            row,
            value: get(lay.trt).to_string(),
        })?;
        let event = parse_bit(get(lay.event)).ok_or_else(|| Error::MalformedRow {
            row,
            column: map.event.clone(),
            reason: format!("`{}` is not 0/1", get(lay.event)),
        })?;
        let outcome = parse_f64(get(lay.outcome), row, &map.outcome)?;

        let mut baseline = Vec::with_capacity(lay.covariates.len());
        for (c, name) in &lay.covariates {
            let col = format!("{}{}", map.covariate_prefix, name);
            let v = parse_f64(get(*c), row, &col)?.ok_or_else(|| Error::MalformedRow {
                row,
                column: col.clone(),
                reason: "baseline covariates may not be missing".into(),
            })?;
            baseline.push(v);
        }

        let mut stage_events = Vec::with_capacity(lay.stages.len());
        for (k, c) in lay.stages.iter().enumerate() {
            let f = get(*c).trim();
            if f.is_empty() {
                stage_events.push(None);
            } else {
                stage_events.push(Some(parse_bit(f).ok_or_else(|| Error::MalformedRow {
                    row,
                    column: format!("{}{}", map.stage_prefix, k + 1),
                    reason: format!("`{f}` is not 0/1"),
                })?));
            }
        }

        let mut intermediate = Vec::with_capacity(lay.blocks.len());
        for (k, block) in lay.blocks.iter().enumerate() {
            let mut vals = Vec::with_capacity(block.len());
            for (c, name) in block {
                let col = format!("{}{}_{}", map.intermediate_prefix, k + 1, name);
                vals.push(parse_f64(get(*c), row, &col)?);
            }
            let present = vals.iter().filter(|v| v.is_some()).count();
            if present == 0 {
                intermediate.push(None);
            } else if present == vals.len() {
                intermediate.push(Some(vals.into_iter().flatten().collect()));
            } else {
                return Err(Error::MalformedRow {
                    row,
                    column: format!("{}{}_*", map.intermediate_prefix, k + 1),
                    reason: "intermediate block is partially missing".into(),
                });
            }
        }

        records.push(SubjectRecord {
            id,
            trt,
            event,
            stage_events,
            outcome,
            baseline,
            intermediate,
        });
    }

    let covariate_names = lay.covariates.into_iter().map(|(_, n)| n).collect();
    let intermediate_names = lay
        .blocks
        .into_iter()
        .map(|b| b.into_iter().map(|(_, n)| n).collect())
        .collect();
    TrialDataset::new(records, covariate_names, intermediate_names, coding, direction)
}

/// Reads and validates a trial CSV file.
pub fn load_csv(
    path: impl AsRef<Path>,
    map: &ColumnMapping,
    coding: EventCoding,
    direction: OutcomeDirection,
) -> Result<TrialDataset> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_csv(f, map, coding, direction)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Header row for the standard schema.
pub(crate) fn csv_header(ds: &TrialDataset) -> Vec<String> {
    let mut h: Vec<String> = vec!["id".into(), "trt".into(), "event".into(), "y".into()];
    for k in 0..ds.n_stages() {
        h.push(format!("event_{}", k + 1));
    }
    for n in ds.covariate_names() {
        h.push(format!("x_{n}"));
    }
    for (k, block) in ds.intermediate_names().iter().enumerate() {
        for n in block {
            h.push(format!("z{}_{}", k + 1, n));
        }
    }
    h
}

pub(crate) fn csv_row(ds: &TrialDataset, r: &SubjectRecord) -> Vec<String> {
    let mut row = vec![
        r.id.clone(),
        r.trt.to_string(),
        r.event.to_string(),
        fmt_opt(r.outcome),
    ];
    row.extend(
        r.stage_events
            .iter()
            .map(|s| s.map(|v| v.to_string()).unwrap_or_default()),
    );
    row.extend(r.baseline.iter().map(|v| v.to_string()));
    for (k, block) in r.intermediate.iter().enumerate() {
        match block {
            Some(b) => row.extend(b.iter().map(|v| v.to_string())),
            None => row.extend(std::iter::repeat_n(String::new(), ds.intermediate_names()[k].len())),
        }
    }
    row
}

/// Writes `ds` in the standard schema, optionally with extra trailing
/// columns (one `Vec<String>` per record).
pub fn write_csv_to<W: Write>(
    ds: &TrialDataset,
    w: W,
    extra_headers: &[String],
    extra: Option<&[Vec<String>]>,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = csv_header(ds);
    header.extend(extra_headers.iter().cloned());
    wtr.write_record(&header)?;
    for (i, r) in ds.records().iter().enumerate() {
        let mut row = csv_row(ds, r);
        if let Some(ex) = extra {
            row.extend(ex[i].iter().cloned());
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_csv(ds: &TrialDataset, path: impl AsRef<Path>) -> Result<()> {
    let f = File::create(path.as_ref())?;
    write_csv_to(ds, f, &[], None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Arm;

    fn parse(text: &str) -> Result<TrialDataset> {
        read_csv(
            text.as_bytes(),
            &ColumnMapping::default(),
            EventCoding::default(),
            OutcomeDirection::LowerIsBetter,
        )
    }

    #[test]
    fn six_row_file() {
        let ds = parse(
            "id,trt,event,y,x_age,x_sex\n\
             a,0,0,1.5,40,1\nb,0,1,,50,0\nc,1,0,2,30,1\nd,1,0,2.5,60,0\ne,1,1,,45,1\nf,0,0,0.5,35,0\n",
        )
        .unwrap();
        assert_eq!(ds.len(), 6);
        assert_eq!(ds.p(), 2);
        assert_eq!(ds.covariate_names(), &["age".to_string(), "sex".to_string()]);
        assert_eq!(ds.records()[1].outcome, None);
        assert_eq!(ds.arm_count(Arm::Treated), 3);
    }

    #[test]
    fn event_with_later_block_is_inconsistent() {
        let err = parse(
            "id,trt,event,y,event_1,event_2,x_a,z1_u\n\
             a,0,1,,1,,1.0,0.5\nb,1,0,1,0,0,2.0,0.1\n",
        )
        .unwrap_err();
        assert_eq!(err.name(), "InconsistentStageEvents");
    }

    #[test]
    fn stage_union_mismatch() {
        let err = parse("id,trt,event,y,event_1,event_2\na,0,0,1,0,1\nb,1,0,1,0,0\n").unwrap_err();
        assert_eq!(err.name(), "InconsistentStageEvents");
    }

    #[test]
    fn bad_treatment_value() {
        let err = parse("id,trt,event,y\na,2,0,1\nb,1,0,1\n").unwrap_err();
        assert_eq!(err, Error::NonBinaryTreatment { row: 1, value: "2".into() });
    }

    #[test]
    fn malformed_outcome_reports_row_and_column() {
        let err = parse("id,trt,event,y\na,0,0,1\nb,1,0,abc\n").unwrap_err();
        match err {
            Error::MalformedRow { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "y");
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn missing_required_column() {
        assert_eq!(
            parse("id,trt,y\na,0,1\n").unwrap_err(),
            Error::MissingColumn("event".into())
        );
    }

    #[test]
    fn empty_arm_rejected() {
        assert_eq!(
            parse("id,trt,event,y\na,0,0,1\nb,0,0,2\n").unwrap_err(),
            Error::EmptyArm { arm: 1 }
        );
    }
}
