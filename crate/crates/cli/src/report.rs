//! Report envelope, config validation and output files.

use std::fs;
use std::path::Path;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

/// Why a command stopped.
#[derive(Debug)]
pub enum Failure {
    /// Config or input data rejected; nothing was computed.
    Invalid(String),
    /// The computation raised; `partial` is whatever output exists.
    Compute { error: kamrev::Error, partial: Option<Value> },
}

impl From<kamrev::Error> for Failure {
    fn from(e: kamrev::Error) -> Self {
        use kamrev::Error::*;
        match e {
            InvalidInput(_) | NotInvolutive(_) | NotReversible(_) | Serialization(_) => Failure::Invalid(e.to_string()),
            other => Failure::Compute { error: other, partial: None },
        }
    }
}

/// CSV plot series written next to the report.
pub struct Table {
    pub name: &'static str,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub struct Outcome {
    pub output: Value,
    pub table: Option<Table>,
}

pub fn output<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report values serialize")
}

fn schema_text(command: &str) -> &'static str {
    match command {
        "dioph-check" => include_str!("../../../schemas/dioph-check.schema.json"),
        "dioph-measure" => include_str!("../../../schemas/dioph-measure.schema.json"),
        "cohomology-solve" => include_str!("../../../schemas/cohomology-solve.schema.json"),
        "versal-check" => include_str!("../../../schemas/versal-check.schema.json"),
        "miniversal-nilpotent" => include_str!("../../../schemas/miniversal-nilpotent.schema.json"),
        "toy-ex1" => include_str!("../../../schemas/toy-ex1.schema.json"),
        "toy-ex2" => include_str!("../../../schemas/toy-ex2.schema.json"),
        "toy-linear" => include_str!("../../../schemas/toy-linear.schema.json"),
        "normalize" => include_str!("../../../schemas/normalize.schema.json"),
        "normalize-augmented" => include_str!("../../../schemas/normalize-augmented.schema.json"),
        "ruessmann" => include_str!("../../../schemas/ruessmann.schema.json"),
        other => unreachable!("no schema for {other}"),
    }
}

pub fn validate(command: &str, cfg: &Value) -> Result<(), Failure> {
    let schema: Value = serde_json::from_str(schema_text(command)).expect("shipped schema parses");
    let validator = jsonschema::validator_for(&schema).expect("shipped schema compiles");
    let errors: Vec<String> = validator
        .iter_errors(cfg)
        .map(|e| format!("at '{}': {e}", e.instance_path()))
        .collect();
    if errors.is_empty() {
        Ok(())
    } else {
        Err(Failure::Invalid(format!("config does not match the {command} schema: {}", errors.join("; "))))
    }
}

#[derive(Serialize)]
struct ErrorRecord {
    kind: String,
    message: String,
}

#[derive(Serialize)]
struct Metadata {
    timestamp_unix: u64,
    elapsed_seconds: f64,
    threads: usize,
}

pub struct Report {
    command: &'static str,
    seed: u64,
    config_sha256: Option<String>,
    status: &'static str,
    output: Option<Value>,
    error: Option<ErrorRecord>,
    metadata: Option<Metadata>,
    table: Option<Table>,
}

/// Variant name of an error, from its debug form.
fn kind(e: &kamrev::Error) -> String {
    format!("{e:?}").chars().take_while(|c| c.is_alphanumeric()).collect()
}

impl Report {
    pub fn new(command: &'static str, seed: u64) -> Self {
        Report {
            command,
            seed,
            config_sha256: None,
            status: "ok",
            output: None,
            error: None,
            metadata: None,
            table: None,
        }
    }

    pub fn hash_config(&mut self, cfg: &Value) {
        let bytes = serde_json::to_vec(cfg).expect("config serializes");
        self.config_sha256 = Some(hex::encode(Sha256::digest(&bytes)));
    }

    /// Records the outcome and returns the exit status.
    pub fn finish(&mut self, outcome: Result<Outcome, Failure>, elapsed: Duration, threads: usize) -> u8 {
        self.metadata = Some(Metadata {
            timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            elapsed_seconds: elapsed.as_secs_f64(),
            threads,
        });
        match outcome {
            Ok(o) => {
                self.output = Some(o.output);
                self.table = o.table;
                0
            }
            Err(Failure::Invalid(message)) => {
                eprintln!("kamrev {}: {message}", self.command);
                self.status = "invalid";
                self.error = Some(ErrorRecord { kind: "InvalidConfig".into(), message });
                2
            }
            Err(Failure::Compute { error, partial }) => {
                eprintln!("kamrev {}: {error}", self.command);
                self.status = "error";
                self.output = partial;
                self.error = Some(ErrorRecord { kind: kind(&error), message: error.to_string() });
                3
            }
        }
    }

    fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("command".into(), Value::from(self.command));
        m.insert("version".into(), Value::from(kamrev::VERSION));
        m.insert("config_sha256".into(), output(&self.config_sha256));
        m.insert("seed".into(), Value::from(self.seed));
        m.insert("status".into(), Value::from(self.status));
        if let Some(Value::Object(out)) = &self.output {
            for (k, v) in out {
                m.entry(k.clone()).or_insert_with(|| v.clone());
            }
        }
        if let Some(e) = &self.error {
            m.insert("error".into(), output(e));
        }
        m.insert("metadata".into(), output(&self.metadata));
        Value::Object(m)
    }

    pub fn write(&self, dir: Option<&Path>) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json()).expect("report serializes") + "\n";
        let Some(dir) = dir else {
            print!("{text}");
            return Ok(());
        };
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), text)?;
        if let Some(t) = &self.table {
            let mut w = csv::Writer::from_path(dir.join(format!("{}.csv", t.name)))?;
            w.write_record(&t.header)?;
            for r in &t.rows {
                w.write_record(r)?;
            }
            w.flush()?;
        }
        Ok(())
    }
}
