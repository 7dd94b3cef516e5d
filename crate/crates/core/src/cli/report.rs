use std::fmt::Write as _;
use std::path::Path;

use serde_json::Value;

use super::{params_table, write_text};
use crate::error::{Error, Result};

const MISSING: &str = "missing";

fn read_json(path: &Path) -> Option<Value> {
    let text = std::fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

fn cell(v: Option<&Value>) -> String {
    match v {
        Some(Value::Number(n)) => match n.as_f64() {
            Some(x) if n.is_f64() => format!("{x:.4}"),
            _ => n.to_string(),
        },
        _ => MISSING.to_string(),
    }
}

fn usize_of(v: &Value, key: &str) -> Option<usize> {
    v.get(key)?.as_u64().map(|x| x as usize)
}

/// Writes `<run>/report.txt` from whatever an ablation run directory holds.
pub(super) fn cmd_report(run: &Path) -> Result<()> {
    if !run.is_dir() {
        return Err(Error::InvalidArgument(format!("{} is not a directory", run.display())));
    }
    let config = read_json(&run.join("config.json"));
    let ablation = read_json(&run.join("ablation.json"));
    let mut text = String::new();

    writeln!(text, "== trainable parameters ==").unwrap();
    let grid: Option<Vec<usize>> = config
        .as_ref()
        .and_then(|c| c.pointer("/ablation/grid"))
        .and_then(|g| serde_json::from_value(g.clone()).ok());
    let model = ablation.as_ref().and_then(|a| a.get("model"));
    match (grid, model) {
        (Some(grid), Some(m)) => {
            let dims = ["layers", "heads", "d_model", "d_encoder"].map(|k| usize_of(m, k));
            match dims {
                [Some(l), Some(h), Some(dm), Some(de)] => text.push_str(&params_table(l, h, dm, de, &grid)?),
                _ => writeln!(text, "{MISSING}").unwrap(),
            }
        }
        _ => writeln!(text, "{MISSING}").unwrap(),
    }

    writeln!(text, "\n== retrieval ablation ==").unwrap();
    writeln!(
        text,
        "d\tval_loss_retrieval\tval_loss_no_retrieval\tcider_retrieval\tcider_no_retrieval\tval_loss_blank_image"
    )
    .unwrap();
    let rows = ablation
        .as_ref()
        .and_then(|a| a.get("rows"))
        .and_then(Value::as_array);
    let blank = ablation
        .as_ref()
        .and_then(|a| a.get("blank_image"))
        .and_then(Value::as_array);
    match rows {
        Some(rows) if !rows.is_empty() => {
            for r in rows {
                let d = r.get("d");
                let b = blank
                    .and_then(|b| b.iter().find(|x| x.get("d") == d))
                    .and_then(|x| x.get("val_loss"));
                writeln!(
                    text,
                    "{}\t{}\t{}\t{}\t{}\t{}",
                    cell(d),
                    cell(r.get("val_loss_retrieval")),
                    cell(r.get("val_loss_no_retrieval")),
                    cell(r.get("cider_retrieval")),
                    cell(r.get("cider_no_retrieval")),
                    cell(b),
                )
                .unwrap();
            }
        }
        _ => writeln!(text, "{MISSING}").unwrap(),
    }

    writeln!(text, "\n== retrieved caption sources ==").unwrap();
    let mut source_files: Vec<_> = std::fs::read_dir(run)
        .map_err(|e| Error::io(run, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".sources.json"))
        .collect();
    source_files.sort();
    let mut any = false;
    for p in &source_files {
        let Some(Value::Object(dist)) = read_json(p) else { continue };
        any = true;
        let name = p.file_name().unwrap().to_string_lossy();
        for (src, share) in &dist {
            writeln!(text, "{name}\t{src}\t{}", cell(Some(share))).unwrap();
        }
    }
    if !any {
        writeln!(text, "{MISSING}").unwrap();
    }

    write_text(&run.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}
