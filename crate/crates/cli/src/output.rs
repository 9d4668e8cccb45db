use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde_json::Value;

use crate::commands::{CliError, EXIT_ESTIMATION};

/// Comment lines that open every CSV artifact. The sample reader skips them.
pub fn csv_preamble(command: &str, config: &Value) -> String {
    format!("# isomix {command}\n# config: {config}\n")
}

/// Appends `header` and one line per row; floats use the shortest
/// representation that reads back to the same value.
pub fn csv_table<I, R>(out: &mut String, header: &str, rows: I)
where
    I: IntoIterator<Item = R>,
    R: AsRef<[String]>,
{
    out.push_str(header);
    out.push('\n');
    for row in rows {
        let _ = writeln!(out, "{}", row.as_ref().join(","));
    }
}

pub fn json_text(value: &Value) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("json values always serialise");
    text.push('\n');
    text
}

/// Writes `text` to `path`, or to standard output.
pub fn emit(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    let result = match path {
        Some(p) => fs::write(p, text).map_err(|e| format!("cannot write {}: {e}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| format!("cannot write to standard output: {e}"))
        }
    };
    result.map_err(|message| CliError {
        code: EXIT_ESTIMATION,
        message,
    })
}
