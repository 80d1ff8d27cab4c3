//! Artifact index for an output directory. Each CSV gets a whitespace
//! separated `.dat` twin for gnuplot; `index.json` lists every CSV and
//! JSON summary with its provenance. Generated files are skipped on input,
//! so reruns reproduce the same bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::output::{OutDir, TOOL, VERSION};
use super::CliError;

const INDEX: &str = "index.json";

#[derive(Debug, Serialize)]
struct Artifact {
    file: String,
    kind: &'static str,
    command: Option<String>,
    config_sha256: Option<String>,
    seed: Option<u64>,
    version: Option<String>,
    rows: Option<usize>,
    columns: Option<Vec<String>>,
    dat: Option<String>,
}

#[derive(Debug, Serialize)]
struct Index {
    tool: &'static str,
    version: &'static str,
    artifacts: Vec<Artifact>,
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))
}

/// `# key: value` lines at the top of a CSV.
fn csv_provenance(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .take_while(|l| l.starts_with('#'))
        .filter_map(|l| {
            let (k, v) = l.trim_start_matches('#').split_once(':')?;
            Some((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

fn csv_artifact(dir: &OutDir, name: &str, text: &str) -> Result<Artifact, CliError> {
    let prov = csv_provenance(text);
    let body: String = text
        .lines()
        .skip_while(|l| l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect();
    let mut rd = csv::ReaderBuilder::new().from_reader(body.as_bytes());
    let bad = |e: csv::Error| CliError::Parse(format!("{name}: {e}"));
    let columns: Vec<String> = rd.headers().map_err(bad)?.iter().map(String::from).collect();
    let mut dat = String::new();
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        dat.push_str(line);
        dat.push('\n');
    }
    dat.push_str(&format!("# {}\n", columns.join(" ")));
    let mut rows = 0;
    for rec in rd.records() {
        let rec = rec.map_err(bad)?;
        let fields: Vec<String> = rec
            .iter()
            .map(|f| if f.is_empty() || f.contains(char::is_whitespace) { format!("\"{f}\"") } else { f.to_string() })
            .collect();
        dat.push_str(&fields.join(" "));
        dat.push('\n');
        rows += 1;
    }
    let dat_name = format!("{}.dat", name.trim_end_matches(".csv"));
    dir.text(&dat_name, &dat)?;
    Ok(Artifact {
        file: name.to_string(),
        kind: "csv",
        command: prov.get("command").cloned(),
        config_sha256: prov.get("config_sha256").cloned(),
        seed: prov.get("seed").and_then(|s| s.parse().ok()),
        version: prov.get("version").cloned(),
        rows: Some(rows),
        columns: Some(columns),
        dat: Some(dat_name),
    })
}

fn json_artifact(name: &str, text: &str) -> Result<Artifact, CliError> {
    let doc: serde_json::Value =
        serde_json::from_str(text).map_err(|e| CliError::Parse(format!("{name}: {e}")))?;
    let prov = doc.get("provenance");
    let field = |k: &str| prov.and_then(|p| p.get(k)).and_then(|v| v.as_str()).map(String::from);
    Ok(Artifact {
        file: name.to_string(),
        kind: "json",
        command: field("command"),
        config_sha256: field("config_sha256"),
        seed: prov.and_then(|p| p.get("seed")).and_then(|v| v.as_u64()),
        version: field("version"),
        rows: None,
        columns: None,
        dat: None,
    })
}

/// Index `root`, which must exist.
pub fn report(root: &Path) -> Result<(), CliError> {
    if !root.is_dir() {
        return Err(CliError::Io(format!("missing input directory: {}", root.display())));
    }
    let mut names: Vec<String> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n != INDEX && (n.ends_with(".csv") || n.ends_with(".json")))
        .collect();
    names.sort();
    let dir = OutDir::create(root)?;
    let mut artifacts = Vec::with_capacity(names.len());
    for name in &names {
        let text = read(&root.join(name))?;
        artifacts.push(if name.ends_with(".csv") {
            csv_artifact(&dir, name, &text)?
        } else {
            json_artifact(name, &text)?
        });
    }
    let index = Index {
        tool: TOOL,
        version: VERSION,
        artifacts,
    };
    dir.json_raw(INDEX, &index)?;
    println!("indexed {} artifacts", index.artifacts.len());
    Ok(())
}
