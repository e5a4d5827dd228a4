//! Minimal RFC 4180 writer: CRLF line ends, fields quoted only when they
//! contain a comma, quote, CR or LF.

use std::borrow::Cow;

pub fn field(s: &str) -> Cow<'_, str> {
    if s.contains([',', '"', '\r', '\n']) {
        Cow::Owned(format!("\"{}\"", s.replace('"', "\"\"")))
    } else {
        Cow::Borrowed(s)
    }
}

pub fn push_row<S: AsRef<str>>(out: &mut String, row: &[S]) {
    for (i, f) in row.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&field(f.as_ref()));
    }
    out.push_str("\r\n");
}

pub fn to_csv<S: AsRef<str>>(header: &[&str], rows: &[Vec<S>]) -> String {
    let mut out = String::new();
    push_row(&mut out, header);
    for r in rows {
        push_row(&mut out, r);
    }
    out
}
