use std::fs::{self, File};
use std::io::{BufWriter, ErrorKind, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ssrnas::engine::DiscreteArchitecture;

use crate::config::{CliError, RunConfig};

pub const CONFIG_FILE: &str = "config.toml";
pub const TRAJECTORY_FILE: &str = "trajectory.jsonl";
pub const ARCHITECTURE_FILE: &str = "architecture.json";
pub const ARCHITECTURE_TABLE: &str = "architecture.txt";
pub const GAP_FILE: &str = "gap.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

/// Creates `<output_dir>/<run_id>` and echoes the effective config into it.
/// Fails if the directory already exists.
pub fn create_run_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let (Some(root), Some(id)) = (&cfg.output_dir, &cfg.run_id) else {
        return Err(CliError::Runtime(
            "run directory used before resolve".into(),
        ));
    };
    fs::create_dir_all(root).map_err(|e| {
        CliError::config(
            "output_dir",
            format!("cannot create `{}`: {e}", root.display()),
        )
    })?;
    let dir = root.join(id);
    match fs::create_dir(&dir) {
        Ok(()) => {}
        Err(e) if e.kind() == ErrorKind::AlreadyExists => {
            return Err(CliError::config(
                "run_id",
                format!("`{id}` already exists in `{}`", root.display()),
            ))
        }
        Err(e) => {
            return Err(CliError::config(
                "output_dir",
                format!("cannot create `{}`: {e}", dir.display()),
            ));
        }
    }
    fs::write(dir.join(CONFIG_FILE), cfg.to_toml()?)?;
    Ok(dir)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Append-only line-delimited JSON; every record is flushed as written so
/// an interrupted run leaves only complete lines.
pub struct JsonLines {
    out: BufWriter<File>,
}

impl JsonLines {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        Ok(JsonLines {
            out: BufWriter::new(File::create(path)?),
        })
    }

    pub fn push<T: Serialize>(&mut self, record: &T) -> Result<(), ssrnas::Error> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

/// Left-aligned text table with two spaces between columns.
pub fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i + 1 == cells.len() {
                s.push_str(cell);
            } else {
                s.push_str(&format!("{cell:<w$}  "));
            }
        }
        s.push('\n');
        s
    };
    let mut out = line(header.to_vec());
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    out
}

/// One searched layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRow {
    pub stage: usize,
    pub depth: usize,
    pub layer: usize,
    pub dilation: usize,
    pub spatial: usize,
    pub channels: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureFile {
    pub encoding: String,
    pub exact_flops: f64,
    pub layers: Vec<LayerRow>,
    pub architecture: DiscreteArchitecture,
}

impl ArchitectureFile {
    pub fn new(arch: &DiscreteArchitecture, exact_flops: f64) -> Self {
        let mut layers = Vec::new();
        for (s, st) in arch.stages.iter().enumerate() {
            for (l, layer) in st.layers.iter().enumerate() {
                layers.push(LayerRow {
                    stage: s,
                    depth: st.depth,
                    layer: l,
                    dilation: layer.dilation,
                    spatial: layer.spatial,
                    channels: layer.channels,
                });
            }
        }
        ArchitectureFile {
            encoding: arch.encode(),
            exact_flops,
            layers,
            architecture: arch.clone(),
        }
    }

    pub fn table(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .layers
            .iter()
            .map(|r| {
                vec![
                    r.stage.to_string(),
                    r.depth.to_string(),
                    r.layer.to_string(),
                    r.dilation.to_string(),
                    r.spatial.to_string(),
                    format!("{}/{}", r.channels[0], r.channels[1]),
                ]
            })
            .collect();
        let mut out = format!("# {}\n# exact FLOPs {}\n", self.encoding, self.exact_flops);
        out.push_str(&render_table(
            &["Stage", "Depth", "Layer", "Dilation", "Spatial", "Channels"],
            &rows,
        ));
        out
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        write_json(&dir.join(ARCHITECTURE_FILE), self)?;
        fs::write(dir.join(ARCHITECTURE_TABLE), self.table())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ssrnas::engine::{DiscreteLayer, DiscreteStage};

    #[test]
    fn table_columns_line_up() {
        let t = render_table(&["A", "Long"], &[vec!["wide cell".into(), "x".into()]]);
        assert_eq!(t, "A          Long\nwide cell  x\n");
    }

    #[test]
    fn architecture_rows_follow_layers() {
        let layer = |dilation| DiscreteLayer {
            dilation,
            spatial: 1,
            channels: [4, 8],
        };
        let arch = DiscreteArchitecture {
            stages: vec![DiscreteStage {
                depth: 2,
                layers: vec![layer(1), layer(4)],
            }],
        };
        let f = ArchitectureFile::new(&arch, 10.0);
        assert_eq!(f.layers.len(), 2);
        assert_eq!(f.layers[1].dilation, 4);
        let table = f.table();
        assert!(table.contains("Stage  Depth  Layer  Dilation  Spatial  Channels"));
        assert!(table.contains("4/8"));
    }
}
