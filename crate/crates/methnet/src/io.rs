//! CSV readers and writers for methylation, clinical, expression and
//! detection p-value tables.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use methnet_core::data::{
    ClinicalRecord, ClinicalTable, Cohort, DetectionPValues, ExpressionMatrix, MethylationDataset, ProbeRow,
};

use crate::error::{Error, Result};

pub const CLINICAL_HEADER: [&str; 6] = ["sample_id", "time_days", "event", "age", "stage", "residual_disease"];

/// Shortest round-tripping decimal form; missing values become the empty field.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:?}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn is_missing(field: &str) -> bool {
    let f = field.trim();
    f.is_empty() || f == "NA"
}

fn parse_value(path: &Path, line: u64, field: &str) -> Result<f64> {
    if is_missing(field) {
        return Ok(f64::NAN);
    }
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::parse(path, line, format!("not a number: {field:?}")))
}

fn parse_optional(path: &Path, line: u64, field: &str) -> Result<Option<f64>> {
    let v = parse_value(path, line, field)?;
    Ok((!v.is_nan()).then_some(v))
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(file))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::parse(path, line, e.to_string())
}

/// Header row plus data rows with their 1-based line numbers.
type Table = (Vec<String>, Vec<(u64, csv::StringRecord)>);

fn read_table(path: &Path) -> Result<Option<Table>> {
    let mut rdr = reader(path)?;
    let mut records = rdr.records();
    let header = match records.next() {
        None => return Ok(None),
        Some(r) => r.map_err(|e| csv_err(path, e))?.iter().map(|s| s.trim().to_string()).collect::<Vec<_>>(),
    };
    let mut rows = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        if rec.len() != header.len() {
            return Err(Error::parse(
                path,
                line,
                format!("expected {} columns, found {}", header.len(), rec.len()),
            ));
        }
        rows.push((line, rec));
    }
    Ok(Some((header, rows)))
}

fn expect_prefix(path: &Path, header: &[String], prefix: &[&str]) -> Result<()> {
    if header.len() < prefix.len() || header.iter().zip(prefix).any(|(h, p)| h != p) {
        return Err(Error::parse(path, 1, format!("header must start with {}", prefix.join(","))));
    }
    Ok(())
}

/// Reads `probe_id,gene,<samples>`; every sample gets the given cohort.
pub fn read_methylation(path: &Path, cohort: Cohort) -> Result<MethylationDataset> {
    let Some((header, rows)) = read_table(path)? else {
        return Ok(MethylationDataset::empty());
    };
    expect_prefix(path, &header, &["probe_id", "gene"])?;
    let samples: Vec<String> = header[2..].to_vec();
    let mut probe_rows = Vec::with_capacity(rows.len());
    for (line, rec) in rows {
        let mut values = Vec::with_capacity(samples.len());
        for (s, field) in rec.iter().skip(2).enumerate() {
            let v = parse_value(path, line, field)?;
            if !v.is_nan() && !(0.0..=1.0).contains(&v) {
                return Err(Error::Core(methnet_core::Error::Validation(format!(
                    "{}:{line}: beta value {v} outside [0,1] at probe {}, sample {}",
                    path.display(),
                    &rec[0],
                    samples[s]
                ))));
            }
            values.push(v);
        }
        probe_rows.push(ProbeRow { probe_id: rec[0].trim().to_string(), gene: rec[1].trim().to_string(), values });
    }
    let cohorts = vec![cohort; samples.len()];
    Ok(MethylationDataset::from_probe_rows(probe_rows, samples, cohorts)?)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// CSV writer creating parent directories as needed.
pub fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(create(path)?))
}

pub fn finish_csv(path: &Path, w: csv::Writer<BufWriter<File>>) -> Result<()> {
    let mut inner = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    inner.flush().map_err(|e| Error::io(path, e))
}

pub fn write_row<I, S>(path: &Path, w: &mut csv::Writer<BufWriter<File>>, fields: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(fields).map_err(|e| csv_err(path, e))
}

/// Writes the given samples (all when `None`) of a dataset.
pub fn write_methylation(path: &Path, d: &MethylationDataset, samples: Option<&[usize]>) -> Result<()> {
    let all: Vec<usize>;
    let samples = match samples {
        Some(s) => s,
        None => {
            all = (0..d.n_samples()).collect();
            &all
        }
    };
    let mut w = csv_writer(path)?;
    let header = ["probe_id".to_string(), "gene".to_string()]
        .into_iter()
        .chain(samples.iter().map(|&s| d.sample_ids()[s].clone()));
    write_row(path, &mut w, header)?;
    let n = d.n_samples();
    for g in d.genes() {
        for (l, probe) in g.probes.iter().enumerate() {
            let locus = g.locus(l, n);
            let row = [probe.clone(), g.gene.clone()].into_iter().chain(samples.iter().map(|&s| fmt_f64(locus[s])));
            write_row(path, &mut w, row)?;
        }
    }
    finish_csv(path, w)
}

fn parse_event(path: &Path, line: u64, field: &str) -> Result<bool> {
    match field.trim() {
        "1" | "true" | "TRUE" => Ok(true),
        "0" | "false" | "FALSE" => Ok(false),
        other => Err(Error::parse(path, line, format!("event must be 0 or 1, found {other:?}"))),
    }
}

pub fn read_clinical(path: &Path) -> Result<ClinicalTable> {
    let Some((header, rows)) = read_table(path)? else {
        return Ok(ClinicalTable::default());
    };
    if header != CLINICAL_HEADER {
        return Err(Error::parse(path, 1, format!("header must be {}", CLINICAL_HEADER.join(","))));
    }
    let mut records = Vec::with_capacity(rows.len());
    for (line, rec) in rows {
        let time = parse_value(path, line, &rec[1])?;
        if !(time.is_finite() && time > 0.0) {
            return Err(Error::parse(path, line, format!("time_days must be positive, found {:?}", &rec[1])));
        }
        records.push(ClinicalRecord {
            sample_id: rec[0].trim().to_string(),
            time_days: time,
            event: parse_event(path, line, &rec[2])?,
            age: parse_optional(path, line, &rec[3])?,
            stage: parse_optional(path, line, &rec[4])?,
            residual_disease: parse_optional(path, line, &rec[5])?,
        });
    }
    Ok(ClinicalTable::new(records)?)
}

pub fn write_clinical(path: &Path, records: &[ClinicalRecord]) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_row(path, &mut w, CLINICAL_HEADER)?;
    for r in records {
        write_row(
            path,
            &mut w,
            [
                r.sample_id.clone(),
                fmt_f64(r.time_days),
                if r.event { "1".into() } else { "0".into() },
                fmt_opt(r.age),
                fmt_opt(r.stage),
                fmt_opt(r.residual_disease),
            ],
        )?;
    }
    finish_csv(path, w)
}

pub fn read_expression(path: &Path) -> Result<ExpressionMatrix> {
    let Some((header, rows)) = read_table(path)? else {
        return Ok(ExpressionMatrix::new(Vec::new(), Vec::new(), Vec::new())?);
    };
    expect_prefix(path, &header, &["gene"])?;
    let samples = header[1..].to_vec();
    let mut genes = Vec::with_capacity(rows.len());
    let mut values = Vec::with_capacity(rows.len() * samples.len());
    for (line, rec) in rows {
        genes.push(rec[0].trim().to_string());
        for field in rec.iter().skip(1) {
            values.push(parse_value(path, line, field)?);
        }
    }
    Ok(ExpressionMatrix::new(genes, samples, values)?)
}

pub fn write_expression(path: &Path, e: &ExpressionMatrix) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_row(path, &mut w, std::iter::once("gene".to_string()).chain(e.sample_ids.iter().cloned()))?;
    for (g, gene) in e.genes.iter().enumerate() {
        write_row(path, &mut w, std::iter::once(gene.clone()).chain(e.gene_row(g).iter().map(|&v| fmt_f64(v))))?;
    }
    finish_csv(path, w)
}

/// Reads `probe_id,<samples>` detection p-values.
pub fn read_detection_p(path: &Path) -> Result<DetectionPValues> {
    let Some((header, rows)) = read_table(path)? else {
        return Ok(DetectionPValues::default());
    };
    expect_prefix(path, &header, &["probe_id"])?;
    let samples = header[1..].to_vec();
    let mut out = Vec::with_capacity(rows.len());
    for (line, rec) in rows {
        let vals = rec.iter().skip(1).map(|f| parse_value(path, line, f)).collect::<Result<Vec<_>>>()?;
        out.push((rec[0].trim().to_string(), vals));
    }
    Ok(DetectionPValues::new(&samples, out)?)
}

/// Simple two-column `sample_id,cohort` roster.
pub fn write_samples(path: &Path, d: &MethylationDataset) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_row(path, &mut w, ["sample_id", "cohort"])?;
    for (id, c) in d.sample_ids().iter().zip(d.cohorts()) {
        write_row(path, &mut w, [id.as_str(), c.as_str()])?;
    }
    finish_csv(path, w)
}

pub fn read_samples(path: &Path) -> Result<Vec<(String, Cohort)>> {
    let Some((header, rows)) = read_table(path)? else {
        return Ok(Vec::new());
    };
    expect_prefix(path, &header, &["sample_id", "cohort"])?;
    rows.into_iter()
        .map(|(line, rec)| {
            let c = Cohort::parse(rec[1].trim())
                .ok_or_else(|| Error::parse(path, line, format!("unknown cohort {:?}", &rec[1])))?;
            Ok((rec[0].trim().to_string(), c))
        })
        .collect()
}

/// Generic reader returning header and rows, for pipeline artifacts.
pub fn read_rows(path: &Path, expected_header: &[&str]) -> Result<Vec<(u64, Vec<String>)>> {
    let Some((header, rows)) = read_table(path)? else {
        return Err(Error::parse(path, 1, "empty file"));
    };
    if header != expected_header {
        return Err(Error::parse(path, 1, format!("header must be {}", expected_header.join(","))));
    }
    Ok(rows.into_iter().map(|(l, r)| (l, r.iter().map(str::to_string).collect())).collect())
}

pub fn parse_f64(path: &Path, line: u64, field: &str) -> Result<f64> {
    parse_value(path, line, field)
}

pub fn parse_usize(path: &Path, line: u64, field: &str) -> Result<usize> {
    field.trim().parse().map_err(|_| Error::parse(path, line, format!("not a count: {field:?}")))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Json { path: path.into(), source: e })?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json { path: path.into(), source: e })
}
