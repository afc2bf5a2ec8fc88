//! CSV emission and parsing with a fixed 12-significant-digit decimal
//! contract, period decimal separator and LF line endings.

use std::io::{Read, Write};

use cvtp_core::profile::FidelityProfile;
use cvtp_core::tradeoff::SweepRecord;
use thiserror::Error;

pub const PROFILE_HEADER: [&str; 6] = ["r", "f_succ", "p_succ", "log_p_succ", "tail_bound", "flag"];
pub const SWEEP_HEADER: [&str; 11] = ["g", "m_c", "F", "D", "P_succ", "S1", "S2", "I_sel", "I_alpha_S", "J_lambda", "flag"];

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("header mismatch: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Twelve significant digits. Fixed notation for magnitudes in
/// `[1e-5, 1e12)`, scientific otherwise; zero is `0`.
pub fn fmt12(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.11e}");
    let exp: i32 = sci[sci.find('e').expect("exponent") + 1..].parse().expect("integer exponent");
    if (-5..12).contains(&exp) {
        format!("{x:.*}", (11 - exp) as usize)
    } else {
        sci
    }
}

/// [`fmt12`] without trailing fractional zeros.
pub fn fmt12_trim(x: f64) -> String {
    let s = fmt12(x);
    match s.find('e') {
        Some(i) => {
            let (mantissa, exp) = s.split_at(i);
            format!("{}{exp}", trim_zeros(mantissa))
        }
        None => trim_zeros(&s).to_string(),
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// The value obtained by formatting then re-reading `x`.
pub fn round12(x: f64) -> f64 {
    parse_number(&fmt12(x)).expect("fmt12 output parses")
}

pub fn parse_number(s: &str) -> Option<f64> {
    match s.trim() {
        "nan" => Some(f64::NAN),
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        t => t.parse().ok(),
    }
}

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}

/// One parsed sweep row.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub g: f64,
    pub m_c: f64,
    pub f: f64,
    pub d: f64,
    pub p_succ: f64,
    pub s1: f64,
    pub s2: f64,
    pub i_sel: f64,
    pub i_alpha_s: f64,
    pub j_lambda: f64,
    pub flag: String,
}

impl SweepRow {
    pub fn from_record(r: &SweepRecord) -> Self {
        Self {
            g: r.g(),
            m_c: r.m_c(),
            f: r.merit.f,
            d: r.merit.d,
            p_succ: r.merit.p_succ,
            s1: r.report.s1,
            s2: r.report.s2,
            i_sel: r.report.i_sel,
            i_alpha_s: r.report.i_alpha_s,
            j_lambda: r.j_lambda,
            flag: r.flag.as_str().to_string(),
        }
    }

    fn numbers(&self) -> [f64; 10] {
        [
            self.g,
            self.m_c,
            self.f,
            self.d,
            self.p_succ,
            self.s1,
            self.s2,
            self.i_sel,
            self.i_alpha_s,
            self.j_lambda,
        ]
    }

    /// Control rows are stored as `g = 1`, `m_c = inf`.
    pub fn is_control(&self) -> bool {
        self.m_c.is_infinite()
    }
}

pub fn write_sweep<W: Write>(out: W, rows: &[SweepRow]) -> Result<(), CsvError> {
    let mut w = writer(out);
    w.write_record(SWEEP_HEADER)?;
    for row in rows {
        let mut fields: Vec<String> = row.numbers().iter().map(|&x| fmt12(x)).collect();
        fields.push(row.flag.clone());
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<(), CsvError> {
    if found.iter().map(str::trim).eq(expected.iter().copied()) {
        Ok(())
    } else {
        Err(CsvError::Header {
            expected: expected.join(","),
            found: found.iter().collect::<Vec<_>>().join(","),
        })
    }
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(input)
}

fn field(rec: &csv::StringRecord, i: usize, name: &str, line: u64) -> Result<f64, CsvError> {
    let raw = rec.get(i).unwrap_or("");
    parse_number(raw).ok_or_else(|| CsvError::Malformed {
        line,
        message: format!("column `{name}`: cannot parse `{raw}` as a number"),
    })
}

fn records<R: Read>(rdr: &mut csv::Reader<R>, width: usize) -> impl Iterator<Item = Result<(u64, csv::StringRecord), CsvError>> + '_ {
    rdr.records().map(move |rec| {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != width {
            return Err(CsvError::Malformed {
                line,
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        Ok((line, rec))
    })
}

pub fn read_sweep<R: Read>(input: R) -> Result<Vec<SweepRow>, CsvError> {
    let mut rdr = reader(input);
    check_header(rdr.headers()?, &SWEEP_HEADER)?;
    let mut rows = Vec::new();
    for item in records(&mut rdr, SWEEP_HEADER.len()) {
        let (line, rec) = item?;
        let v: Vec<f64> = (0..10).map(|i| field(&rec, i, SWEEP_HEADER[i], line)).collect::<Result<_, _>>()?;
        rows.push(SweepRow {
            g: v[0],
            m_c: v[1],
            f: v[2],
            d: v[3],
            p_succ: v[4],
            s1: v[5],
            s2: v[6],
            i_sel: v[7],
            i_alpha_s: v[8],
            j_lambda: v[9],
            flag: rec[10].trim().to_string(),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileRow {
    pub r: f64,
    pub f_succ: f64,
    pub p_succ: f64,
    pub log_p_succ: f64,
    pub tail_bound: Option<f64>,
    pub flag: String,
}

impl ProfileRow {
    /// Rows of a computed profile; `tail_bound` is filled for `r ≥ m_c`.
    pub fn from_profile(profile: &FidelityProfile, tail: impl Fn(f64) -> Option<f64>) -> Vec<Self> {
        (0..profile.len())
            .map(|i| Self {
                r: profile.radii[i],
                f_succ: profile.f_succ[i],
                p_succ: profile.p_succ[i],
                log_p_succ: profile.log_p_succ[i],
                tail_bound: tail(profile.radii[i]),
                flag: if profile.converged[i] { "ok" } else { "not_converged" }.to_string(),
            })
            .collect()
    }
}

pub fn write_profile<W: Write>(out: W, rows: &[ProfileRow]) -> Result<(), CsvError> {
    let mut w = writer(out);
    w.write_record(PROFILE_HEADER)?;
    for row in rows {
        w.write_record([
            fmt12(row.r),
            fmt12(row.f_succ),
            fmt12(row.p_succ),
            fmt12(row.log_p_succ),
            row.tail_bound.map(fmt12).unwrap_or_default(),
            row.flag.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_profile<R: Read>(input: R) -> Result<Vec<ProfileRow>, CsvError> {
    let mut rdr = reader(input);
    check_header(rdr.headers()?, &PROFILE_HEADER)?;
    let mut rows = Vec::new();
    for item in records(&mut rdr, PROFILE_HEADER.len()) {
        let (line, rec) = item?;
        let tail = rec[4].trim();
        rows.push(ProfileRow {
            r: field(&rec, 0, "r", line)?,
            f_succ: field(&rec, 1, "f_succ", line)?,
            p_succ: field(&rec, 2, "p_succ", line)?,
            log_p_succ: field(&rec, 3, "log_p_succ", line)?,
            tail_bound: if tail.is_empty() { None } else { Some(field(&rec, 4, "tail_bound", line)?) },
            flag: rec[5].trim().to_string(),
        });
    }
    Ok(rows)
}

/// `key,value` report.
pub fn write_key_values<W: Write>(out: W, pairs: &[(&str, f64)]) -> Result<(), CsvError> {
    let mut w = writer(out);
    w.write_record(["key", "value"])?;
    for (k, v) in pairs {
        w.write_record([k.to_string(), fmt12_trim(*v)])?;
    }
    w.flush()?;
    Ok(())
}

/// The header line of a CSV document, for dispatching on file kind.
pub fn header_of(text: &str) -> &str {
    text.lines().next().unwrap_or("").trim_end_matches('\r')
}
