//! Artifact layout: `<output>/<timestamp>/{config.echo, fields/, records/, report.json, branch.csv}`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use torus_mfe::geometry::{write_field, GridField};
use torus_mfe::solver::SolutionRecord;
use torus_mfe::Result;

pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// A fresh timestamped directory under `base` (suffixed if the name is taken).
    pub fn create(base: &Path) -> Result<Self> {
        let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string();
        let mut root = base.join(&stamp);
        let mut k = 1;
        while root.exists() {
            root = base.join(format!("{stamp}-{k}"));
            k += 1;
        }
        fs::create_dir_all(root.join("fields"))?;
        fs::create_dir_all(root.join("records"))?;
        Ok(Self { root })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.root.join(name);
        let mut f = fs::File::create(&path)?;
        f.write_all(text.as_bytes())?;
        f.sync_all()?;
        Ok(path)
    }

    pub fn write_field(&self, name: &str, u: &GridField) -> Result<PathBuf> {
        let path = self.root.join("fields").join(format!("{name}.tbf"));
        write_field(&path, u)?;
        Ok(path)
    }

    /// Field dump plus JSON metadata.
    pub fn write_record(&self, name: &str, rec: &SolutionRecord) -> Result<()> {
        self.write_field(name, &rec.u)?;
        let json = serde_json::to_string_pretty(&rec.meta()).expect("record serializes");
        self.write_text(&format!("records/{name}.json"), &json)?;
        Ok(())
    }
}

/// `solve_<pair>_eps<ε>`, stable across runs.
pub fn record_name(prefix: &str, pair: &str, eps: f64) -> String {
    format!("{prefix}_{pair}_eps{eps}")
}
