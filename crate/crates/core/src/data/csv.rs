//! CSV layout: header `x0..x{D-1},y,group[,c0..c{n_c-1},s0..s{n_s-1}]`,
//! reals written with 17 significant digits so reloading is lossless.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Fractions, GenerativeSpec, GroupedDataset, Sample, SplitTag};
use crate::error::{Error, Result};

/// JSON written next to generated CSVs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub spec: GenerativeSpec,
    pub seed: u64,
    pub n_samples: usize,
    pub fractions: Fractions,
}

pub(crate) fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn save(ds: &GroupedDataset, path: &Path) -> Result<()> {
    let d = ds.input_dim();
    let nc = ds.content_dim();
    let ns = ds.style_dim();
    let mut header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
    header.push("y".into());
    header.push("group".into());
    if ds.has_ground_truth() {
        header.extend((0..nc).map(|i| format!("c{i}")));
        header.extend((0..ns).map(|i| format!("s{i}")));
    }
    let mut out = header.join(",");
    out.push('\n');
    for s in ds.samples() {
        let mut fields: Vec<String> = s.x.iter().map(|&v| fmt_real(v)).collect();
        fields.push(s.y.to_string());
        fields.push(s.group.to_string());
        if let (Some(c), Some(st)) = (&s.gt_content, &s.gt_style) {
            fields.extend(c.iter().map(|&v| fmt_real(v)));
            fields.extend(st.iter().map(|&v| fmt_real(v)));
        }
        let _ = writeln!(out, "{}", fields.join(","));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, PartialEq)]
enum Column {
    X(usize),
    Y,
    Group,
    Content(usize),
    Style(usize),
}

fn parse_column(name: &str) -> Option<Column> {
    let indexed = |prefix: &str| name.strip_prefix(prefix).and_then(|r| r.parse::<usize>().ok());
    match name {
        "y" => Some(Column::Y),
        "group" => Some(Column::Group),
        _ => indexed("x")
            .map(Column::X)
            .or_else(|| indexed("c").map(Column::Content))
            .or_else(|| indexed("s").map(Column::Style)),
    }
}

/// Load a dataset written by [`save`]. The split tag is taken from the file
/// stem (`train`, `val`, `test`); anything else loads as `Full`.
pub fn load(path: &Path) -> Result<GroupedDataset> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let p = path.display().to_string();
    let perr = |line: usize, field: &str, message: String| Error::Parse {
        path: p.clone(),
        line,
        field: field.to_string(),
        message,
    };

    let mut lines = text.lines();
    let header_line = lines.next().ok_or_else(|| perr(1, "header", "empty file".into()))?;
    let names: Vec<&str> = header_line.split(',').map(str::trim).collect();
    let mut columns = Vec::with_capacity(names.len());
    for name in &names {
        match parse_column(name) {
            Some(c) => columns.push(c),
            None => return Err(perr(1, name, format!("unknown column `{name}`"))),
        }
    }

    // Expect x0..x{D-1}, y, group, then optionally c0.., s0..
    let d = columns.iter().take_while(|c| matches!(c, Column::X(_))).count();
    let nc = columns.iter().filter(|c| matches!(c, Column::Content(_))).count();
    let ns = columns.iter().filter(|c| matches!(c, Column::Style(_))).count();
    let mut expected: Vec<Column> = (0..d).map(Column::X).collect();
    expected.push(Column::Y);
    expected.push(Column::Group);
    expected.extend((0..nc).map(Column::Content));
    expected.extend((0..ns).map(Column::Style));
    if d == 0 || columns != expected {
        return Err(perr(
            1,
            "header",
            format!("columns must be x0..x{{D-1}},y,group[,c..,s..]; got `{header_line}`"),
        ));
    }
    let has_gt = nc + ns > 0;

    let mut samples = Vec::new();
    let mut max_group = 0usize;
    for (k, line) in lines.enumerate() {
        let lineno = k + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != names.len() {
            return Err(perr(
                lineno,
                names.get(fields.len()).copied().unwrap_or("row"),
                format!("expected {} fields, found {}", names.len(), fields.len()),
            ));
        }
        let real = |i: usize| -> Result<f64> {
            let v: f64 = fields[i]
                .trim()
                .parse()
                .map_err(|_| perr(lineno, names[i], format!("not a number: `{}`", fields[i])))?;
            if !v.is_finite() {
                return Err(perr(lineno, names[i], "non-finite value".into()));
            }
            Ok(v)
        };
        let x = (0..d).map(real).collect::<Result<Vec<f64>>>()?;
        let y: u8 = match fields[d].trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(perr(lineno, "y", format!("label must be 0 or 1, got `{other}`"))),
        };
        let group: usize = fields[d + 1]
            .trim()
            .parse()
            .map_err(|_| perr(lineno, "group", format!("not a group index: `{}`", fields[d + 1])))?;
        max_group = max_group.max(group);
        let (gt_content, gt_style) = if has_gt {
            let c = (d + 2..d + 2 + nc).map(real).collect::<Result<Vec<f64>>>()?;
            let s = (d + 2 + nc..d + 2 + nc + ns).map(real).collect::<Result<Vec<f64>>>()?;
            (Some(c), Some(s))
        } else {
            (None, None)
        };
        samples.push(Sample {
            x,
            y,
            group,
            gt_content,
            gt_style,
        });
    }
    if samples.is_empty() {
        return Err(perr(2, "row", "no data rows".into()));
    }

    let split = match path.file_stem().and_then(|s| s.to_str()) {
        Some("train") => SplitTag::Train,
        Some("val") => SplitTag::Val,
        Some("test") => SplitTag::Test,
        _ => SplitTag::Full,
    };
    GroupedDataset::new(samples, max_group + 1, split)
}
