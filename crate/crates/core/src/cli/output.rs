use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use super::{Cli, CliError, Format};

/// One checked invariant: passes when `value <= tol`.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tol: f64,
    pub ok: bool,
}

impl Check {
    pub fn at_most(name: &str, value: f64, tol: f64) -> Self {
        Check { name: name.into(), value, tol, ok: value <= tol }
    }

    pub fn holds(name: &str, ok: bool) -> Self {
        Check { name: name.into(), value: if ok { 0.0 } else { 1.0 }, tol: 0.0, ok }
    }
}

fn cell(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x:e}")
    }
}

#[derive(Clone, Debug, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| CliError::Config(e.to_string());
        w.write_record(&self.columns).map_err(err)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|x| cell(*x))).map_err(err)?;
        }
        w.into_inner().map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_dat(&self, header: &str) -> String {
        let mut s = format!("# {header}\n# {}\n", self.columns.join(" "));
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|x| format!("{x:.17e}")).collect();
            s.push_str(&cells.join(" "));
            s.push('\n');
        }
        s
    }
}

/// Everything a command produces.
#[derive(Debug, Default)]
pub struct Outcome {
    /// Artifact file stem.
    pub name: String,
    pub result: Value,
    /// Canonical `.gmet` text of each metric the command read.
    pub metrics: Vec<(String, String)>,
    pub table: Option<Table>,
    /// Plot data in a command-specific layout, used instead of `table`
    /// for `--format dat`.
    pub raw_dat: Option<String>,
    /// Further files for `--out`.
    pub files: Vec<(String, Vec<u8>)>,
    pub checks: Vec<Check>,
}

impl Outcome {
    pub fn new(name: &str, result: impl Serialize) -> Result<Self, CliError> {
        let result = serde_json::to_value(result).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(Outcome { name: name.into(), result, ..Default::default() })
    }

    fn artifact(&self, cli: &Cli) -> Value {
        let metrics: Vec<Value> = self.metrics.iter().map(|(src, gmet)| json!({ "source": src, "gmet": gmet })).collect();
        json!({
            "tool": "framelab",
            "version": env!("CARGO_PKG_VERSION"),
            "seed": cli.common.seed,
            "config": {
                "command": cli.command,
                "seed": cli.common.seed,
                "jobs": cli.common.jobs,
                "strict": cli.common.strict(),
                "format": cli.common.format,
                "metrics": metrics,
            },
            "result": self.result,
            "checks": self.checks,
        })
    }

    fn dat(&self, cli: &Cli) -> Option<String> {
        if let Some(raw) = &self.raw_dat {
            return Some(raw.clone());
        }
        let header = format!("framelab {} {} seed={}", env!("CARGO_PKG_VERSION"), self.name, cli.common.seed);
        self.table.as_ref().map(|t| t.to_dat(&header))
    }

    /// Prints the primary output, writes `--out` files, and reports
    /// whether any check failed.
    pub fn write(&self, cli: &Cli) -> Result<bool, CliError> {
        let artifact = serde_json::to_string_pretty(&self.artifact(cli)).map_err(|e| CliError::Config(e.to_string()))? + "\n";
        let primary: Vec<u8> = match cli.common.format {
            Format::Json => artifact.clone().into_bytes(),
            Format::Csv => match &self.table {
                Some(t) => t.to_csv()?,
                None => return Err(CliError::Config(format!("{} has no tabular output; use --format json", self.name))),
            },
            Format::Dat => match self.dat(cli) {
                Some(d) => d.into_bytes(),
                None => return Err(CliError::Config(format!("{} has no plot data; use --format json", self.name))),
            },
        };
        if let Some(dir) = &cli.common.out {
            fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?;
            let put = |file: &str, bytes: &[u8]| -> Result<(), CliError> {
                let p = Path::new(dir).join(file);
                fs::write(&p, bytes).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
            };
            put(&format!("{}.json", self.name), artifact.as_bytes())?;
            if let Some(d) = self.dat(cli) {
                put(&format!("{}.dat", self.name), d.as_bytes())?;
            }
            if let (Format::Csv, Some(t)) = (cli.common.format, &self.table) {
                put(&format!("{}.csv", self.name), &t.to_csv()?)?;
            }
            for (f, bytes) in &self.files {
                put(f, bytes)?;
            }
        }
        let mut stdout = std::io::stdout().lock();
        stdout.write_all(&primary).map_err(|e| CliError::Config(e.to_string()))?;
        stdout.flush().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(self.checks.iter().any(|c| !c.ok))
    }
}
