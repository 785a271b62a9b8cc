//! Plain-text observed-entry files.
//!
//! ```text
//! n1 n2 P sigma
//! i j value        (P lines, 0-based indices)
//! ```
//!
//! Writers print floats like C's `%.17g`; readers take anything Rust's
//! float parser accepts.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::linops::{LinearOperator, MaskOperator, ObsVector};

/// Formats `x` the way `printf("%.17g", x)` does.
pub fn format_g17(x: f64) -> String {
    format_g(x, 17)
}

fn format_g(x: f64, precision: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    // Round to `precision` significant digits first; the exponent of the
    // rounded value decides between fixed and scientific notation.
    let sci = format!("{:.*e}", precision - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= precision as i32 {
        let mantissa = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (precision as i32 - 1 - exp).max(0) as usize;
        strip_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Observations read from (or destined for) a file.
#[derive(Debug, Clone)]
pub struct ObservedEntries {
    pub op: MaskOperator,
    pub y: ObsVector,
    pub sigma: f64,
}

pub fn write_observations<W: Write>(
    mut out: W,
    op: &MaskOperator,
    y: &ObsVector,
    sigma: f64,
) -> Result<()> {
    if y.len() != op.num_obs() {
        return Err(Error::Dimension(format!(
            "{} values for {} observed entries",
            y.len(),
            op.num_obs()
        )));
    }
    writeln!(
        out,
        "{} {} {} {}",
        op.rows(),
        op.cols(),
        op.num_obs(),
        format_g17(sigma)
    )?;
    for (&(i, j), &v) in op.indices().iter().zip(y.iter()) {
        writeln!(out, "{i} {j} {}", format_g17(v))?;
    }
    Ok(())
}

pub fn read_observations<R: BufRead>(input: R, path: &str) -> Result<ObservedEntries> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_string(),
        line,
        msg,
    };
    let mut lines = input
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l))
        .filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()));

    let (line_no, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing header".into()))?;
    let header = header?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 {
        return Err(parse_err(
            line_no,
            format!("header needs 4 fields, found {}", fields.len()),
        ));
    }
    let dim = |s: &str| {
        s.parse::<usize>()
            .map_err(|e| parse_err(line_no, format!("bad integer {s:?}: {e}")))
    };
    let (rows, cols, p) = (dim(fields[0])?, dim(fields[1])?, dim(fields[2])?);
    let sigma: f64 = fields[3]
        .parse()
        .map_err(|e| parse_err(line_no, format!("bad sigma {:?}: {e}", fields[3])))?;

    let mut indices = Vec::with_capacity(p);
    let mut values = Vec::with_capacity(p);
    for (line_no, line) in lines {
        let line = line?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 3 {
            return Err(parse_err(
                line_no,
                format!("expected `i j value`, found {} fields", f.len()),
            ));
        }
        let i = f[0]
            .parse::<usize>()
            .map_err(|e| parse_err(line_no, format!("bad row index: {e}")))?;
        let j = f[1]
            .parse::<usize>()
            .map_err(|e| parse_err(line_no, format!("bad column index: {e}")))?;
        let v = f[2]
            .parse::<f64>()
            .map_err(|e| parse_err(line_no, format!("bad value: {e}")))?;
        indices.push((i, j));
        values.push(v);
    }
    if indices.len() != p {
        return Err(parse_err(
            line_no,
            format!("header announces {p} entries, file has {}", indices.len()),
        ));
    }
    Ok(ObservedEntries {
        op: MaskOperator::new(rows, cols, indices)?,
        y: ObsVector::from_vec(values),
        sigma,
    })
}
