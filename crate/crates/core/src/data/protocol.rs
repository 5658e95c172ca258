//! Protocol files: one `id label` pair per LF-terminated line.

use std::fs;
use std::path::Path;

use super::Label;
use crate::error::{Error, Result};

pub fn render_protocol(entries: &[(String, Label)]) -> String {
    let mut out = String::new();
    for (id, label) in entries {
        out.push_str(id);
        out.push(' ');
        out.push_str(&label.to_string());
        out.push('\n');
    }
    out
}

/// Parses protocol text. Line numbers in errors are 1-based.
pub fn parse_protocol(text: &str) -> Result<Vec<(String, Label)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let parse_err = |msg: String| Error::Parse { line: i + 1, msg };
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields[..] {
            [] => continue,
            [id, label] => {
                let label: Label = label.parse().map_err(parse_err)?;
                out.push((id.to_owned(), label));
            }
            _ => return Err(parse_err(format!("expected \"id label\", got {line:?}"))),
        }
    }
    Ok(out)
}

pub fn write_protocol(entries: &[(String, Label)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, render_protocol(entries)).map_err(|e| Error::io(path, e))
}

pub fn read_protocol(path: impl AsRef<Path>) -> Result<Vec<(String, Label)>> {
    let path = path.as_ref();
    parse_protocol(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_entry_renders_exactly() {
        let entries = vec![("u1".to_owned(), Label::Bonafide)];
        let text = render_protocol(&entries);
        assert_eq!(text, "u1 bonafide\n");
        assert_eq!(parse_protocol(&text).unwrap(), entries);
    }

    #[test]
    fn unknown_label_reports_line() {
        match parse_protocol("u2 genuine\n") {
            Err(Error::Parse { line: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
        match parse_protocol("a spoof\nb bonafide\nc fake\n") {
            Err(Error::Parse { line: 3, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_field_count_is_parse_error() {
        assert!(matches!(parse_protocol("a\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(
            parse_protocol("a spoof x\n"),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
