//! CSV snapshot of a tree's contents: a header, then one line per entry
//! holding the position components, `log_value` and `count`. Floats are
//! written in shortest round-trip form, so a reload is bit-exact.

use std::io::{BufRead, Write};

use super::{KdTree, TreeEntry};
use crate::error::{Error, Result};

pub fn write_snapshot<W: Write>(tree: &KdTree, mut out: W) -> Result<()> {
    let header: Vec<String> = (1..=tree.dim()).map(|i| format!("psi_{i}")).collect();
    writeln!(out, "{},log_value,count", header.join(","))?;
    for e in tree.entries() {
        let mut line = String::new();
        for x in e.position {
            line.push_str(&format!("{x:?},"));
        }
        line.push_str(&format!("{:?},{}", e.record.log_value, e.record.count));
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Reads entries back; rebuild with [`KdTree::build_balanced`].
pub fn read_snapshot<R: BufRead>(input: R) -> Result<Vec<TreeEntry>> {
    let mut entries = Vec::new();
    let mut width = None;
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with("psi_") || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 3 {
            return Err(Error::Parse(format!("line {}: too few columns", lineno + 1)));
        }
        if *width.get_or_insert(fields.len()) != fields.len() {
            return Err(Error::Parse(format!("line {}: ragged row", lineno + 1)));
        }
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))
        };
        let d = fields.len() - 2;
        let position = fields[..d].iter().map(|s| parse(s)).collect::<Result<Vec<_>>>()?;
        let log_value = parse(fields[d])?;
        let count = fields[d + 1]
            .trim()
            .parse::<u64>()
            .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        entries.push(TreeEntry {
            position,
            log_value,
            count,
        });
    }
    Ok(entries)
}
