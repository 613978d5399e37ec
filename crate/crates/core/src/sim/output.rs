//! CSV serialization of trial records.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sim::experiment::TrialRecord;

pub const CSV_HEADER: &str = "trial,mechanism,q,fdp,tpp,n_selected,T,lambda_used,seed_stream";

/// Ten significant digits, shortest form (`%.10g`); `inf`, `-inf`, `nan` for
/// non-finite values.
pub fn format_sig(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.9e}", v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..10).contains(&exp) {
        let decimals = (9 - exp).max(0) as usize;
        trim_zeros(format!("{:.*}", decimals, v))
    } else {
        let mantissa = trim_zeros(mantissa.to_string());
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn records_to_csv(records: &[TrialRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records to write".into()));
    }
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        let tpp = r.tpp.map(format_sig).unwrap_or_else(|| "nan".into());
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.trial,
            r.mechanism,
            format_sig(r.q),
            format_sig(r.fdp),
            tpp,
            r.n_selected,
            format_sig(r.threshold),
            format_sig(r.lambda_used),
            r.seed_stream
        )
        .expect("writing to a String");
    }
    Ok(out)
}

pub fn write_csv(records: &[TrialRecord], path: impl AsRef<Path>) -> Result<()> {
    let text = records_to_csv(records)?;
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig_digits() {
        assert_eq!(format_sig(0.1), "0.1");
        assert_eq!(format_sig(1.0 / 3.0), "0.3333333333");
        assert_eq!(format_sig(2.0 / 3.0 * 1e6), "666666.6667");
        assert_eq!(format_sig(12345678901.0), "1.23456789e+10");
        assert_eq!(format_sig(1.5e-7), "1.5e-07");
        assert_eq!(format_sig(0.00012345), "0.00012345");
        assert_eq!(format_sig(-2.5), "-2.5");
        assert_eq!(format_sig(9.9999999999), "10");
        assert_eq!(format_sig(f64::INFINITY), "inf");
        assert_eq!(format_sig(f64::NAN), "nan");
        assert_eq!(format_sig(0.0), "0");
        assert_eq!(format_sig(7.0), "7");
    }

    #[test]
    fn empty_records_rejected() {
        assert!(records_to_csv(&[]).is_err());
    }

    #[test]
    fn empty_selection_row() {
        let r = TrialRecord {
            trial: 0,
            mechanism: "ci".into(),
            q: 0.1,
            fdp: 0.0,
            tpp: Some(0.0),
            n_selected: 0,
            threshold: f64::INFINITY,
            lambda_used: 0.25,
            seed_stream: 42,
            x_digest: 0,
            lasso_converged: true,
        };
        let text = records_to_csv(&[r]).unwrap();
        assert_eq!(text, format!("{CSV_HEADER}\n0,ci,0.1,0,0,0,inf,0.25,42\n"));
    }
}
