//! Command implementations behind the `fedcos` binary. Each returns a crate
//! error whose `exit_code()` the binary maps to the process status: 0
//! success, 2 config/usage error, 3 numerical divergence.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::scenes::{self, MethodSpec};
use crate::simulator::{
    partition_summary, rounds_to_target, run_experiment, run_experiment_with, History, SimConfig,
};

/// Flag-level overrides shared by the run-style commands.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub eval_every: Option<usize>,
    pub workers: usize,
}

impl Overrides {
    fn workers(&self) -> usize {
        self.workers.max(1)
    }
}

#[derive(Serialize)]
struct RunSummary<'a> {
    summary: bool,
    rounds: usize,
    best_accuracy: Option<f64>,
    final_accuracy: Option<f64>,
    final_loss: Option<f64>,
    resolved: &'a SimConfig,
}

fn create_out(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

/// Runs one experiment config, writing one JSON metrics line per round plus
/// a final summary line. Every prefix of the file is parseable even if the
/// run dies mid-way.
pub fn cmd_run(config_path: &Path, out_path: &Path, ov: &Overrides) -> Result<History> {
    let mut config = ExperimentConfig::load(config_path)?;
    config.apply_overrides(ov.seed, ov.eval_every);
    let sim = config.resolve()?;
    let mut out = create_out(out_path)?;
    let history = run_experiment_with(&sim, ov.workers(), |record, _model| {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n").map_err(|e| Error::io(out_path, e))?;
        out.flush().map_err(|e| Error::io(out_path, e))
    })?;
    let summary = RunSummary {
        summary: true,
        rounds: history.records.len(),
        best_accuracy: history.best_accuracy(),
        final_accuracy: history.final_accuracy(),
        final_loss: history.records.iter().rev().find_map(|r| r.eval_loss),
        resolved: &history.meta.config,
    };
    serde_json::to_writer(&mut out, &summary)?;
    out.write_all(b"\n").map_err(|e| Error::io(out_path, e))?;
    out.flush().map_err(|e| Error::io(out_path, e))?;
    // Wall time is diagnostic only; keeping it off the metrics file leaves
    // reruns byte-identical.
    eprintln!(
        "{}: {} rounds in {:.2}s",
        history.meta.config.name, history.records.len(), history.meta.wall_time_s
    );
    Ok(history)
}

/// Runs a built-in quadratic scene and writes the global-model trajectory as
/// CSV lines "round,x0,x1", starting with the round-0 initial point.
pub fn cmd_toy(variant: &str, method_spec: &str, rounds: usize, out_path: &Path) -> Result<()> {
    let method = MethodSpec::parse(method_spec)?;
    let cfg = match variant {
        "two_client" => scenes::toy_two_client(&method, rounds, 0),
        "three_client" => scenes::toy_three_client(&method, rounds, 0),
        other => {
            return Err(Error::Usage(format!(
                "unknown toy variant '{other}' (two_client, three_client)"
            )))
        }
    };
    let start = match &cfg.objective {
        crate::simulator::ObjectiveSpec::Quadratics { start, .. } => start.clone(),
        _ => unreachable!("toy scenes are quadratic"),
    };
    let mut out = create_out(out_path)?;
    writeln!(out, "0,{},{}", start[0], start[1]).map_err(|e| Error::io(out_path, e))?;
    run_experiment_with(&cfg, 1, |record, model| {
        writeln!(out, "{},{},{}", record.round, model[0], model[1])
            .map_err(|e| Error::io(out_path, e))
    })?;
    out.flush().map_err(|e| Error::io(out_path, e))?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct CompareEntry {
    pub name: String,
    pub rounds_cap: usize,
    pub best_accuracy: Option<f64>,
    pub final_accuracy: Option<f64>,
    pub rounds_to_target: Option<usize>,
    /// rounds_to_target divided by the first method's; below 1 means fewer
    /// rounds than the baseline for the same accuracy.
    pub ratio_vs_first: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct CompareReport {
    pub target_accuracy: f64,
    pub methods: Vec<CompareEntry>,
}

/// Runs several configs that share data/model sections and reports each
/// method's rounds-to-target against the first config's (or an explicit)
/// target accuracy.
pub fn cmd_compare(
    config_paths: &[impl AsRef<Path>],
    target: Option<f64>,
    out_path: &Path,
    ov: &Overrides,
) -> Result<CompareReport> {
    if config_paths.len() < 2 {
        return Err(Error::Usage(
            "compare needs at least two config files".to_string(),
        ));
    }
    let mut configs = Vec::new();
    for path in config_paths {
        let mut c = ExperimentConfig::load(path.as_ref())?;
        c.apply_overrides(ov.seed, ov.eval_every);
        configs.push(c);
    }
    for (i, c) in configs.iter().enumerate().skip(1) {
        if c.data != configs[0].data || c.model != configs[0].model {
            return Err(Error::config(
                "compare",
                format!(
                    "config {} ({}) must share the data and model sections with the first",
                    i,
                    config_paths[i].as_ref().display()
                ),
            ));
        }
    }
    let runs = configs
        .iter()
        .map(|c| {
            let sim = c.resolve()?;
            run_experiment(&sim, ov.workers())
        })
        .collect::<Result<Vec<History>>>()?;
    let target_accuracy = match target {
        Some(t) => t,
        None => runs[0].best_accuracy().ok_or_else(|| {
            Error::config("compare", "first run recorded no accuracy to use as target")
        })?,
    };
    let first_rounds = rounds_to_target(&runs[0], target_accuracy);
    let methods = runs
        .iter()
        .map(|h| {
            let rtt = rounds_to_target(h, target_accuracy);
            CompareEntry {
                name: h.meta.config.name.clone(),
                rounds_cap: h.meta.config.rounds,
                best_accuracy: h.best_accuracy(),
                final_accuracy: h.final_accuracy(),
                rounds_to_target: rtt,
                ratio_vs_first: match (rtt, first_rounds) {
                    (Some(r), Some(f)) if f > 0 => Some(r as f64 / f as f64),
                    _ => None,
                },
            }
        })
        .collect();
    let report = CompareReport {
        target_accuracy,
        methods,
    };
    let mut out = create_out(out_path)?;
    serde_json::to_writer(&mut out, &report)?;
    out.write_all(b"\n").map_err(|e| Error::io(out_path, e))?;
    out.flush().map_err(|e| Error::io(out_path, e))?;
    Ok(report)
}

#[derive(Serialize)]
struct PartitionReport {
    note: String,
    clients: Vec<PartitionClient>,
}

#[derive(Serialize)]
struct PartitionClient {
    client_id: usize,
    n_samples: usize,
    label_histogram: Vec<usize>,
}

/// Prints per-client sample counts and label histograms as JSON. Runs no
/// training.
pub fn cmd_partition_inspect(config_path: &Path, out: &mut impl Write) -> Result<()> {
    let config = ExperimentConfig::load(config_path)?;
    let sim = config.resolve()?;
    let (clients, note) = partition_summary(&sim)?;
    let report = PartitionReport {
        note,
        clients: clients
            .into_iter()
            .map(|(client_id, n_samples, label_histogram)| PartitionClient {
                client_id,
                n_samples,
                label_histogram,
            })
            .collect(),
    };
    serde_json::to_writer(&mut *out, &report).map_err(Error::from)?;
    out.write_all(b"\n")
        .map_err(|e| Error::io(Path::new("<stdout>"), e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::BufRead;

    fn write_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        std::fs::write(&path, body).unwrap();
        path
    }

    fn blobs_config(name: &str, fedcos_mu: f64, rounds: usize) -> String {
        format!(
            r#"
[experiment]
name = "{name}"
root_seed = 11
rounds = {rounds}

[data]
source = "blobs"
classes = 4
per_class = 40
dim = 6
spread = 0.8
eval_per_class = 25
partition = "totally_noniid"

[model]
kind = "softmax"

[strategy]
base = "fedavg"
fedcos_mu = {fedcos_mu}

[sim]
n_clients = 4
participation = 1.0
eta = 0.05
steps_per_round = 5
batch_size = 16
"#
        )
    }

    #[test]
    fn run_writes_metrics_lines_plus_summary() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path(), "a.toml", &blobs_config("a", 0.0, 6));
        let out = dir.path().join("out.jsonl");
        cmd_run(&cfg, &out, &Overrides::default()).unwrap();
        let lines: Vec<String> = std::io::BufReader::new(File::open(&out).unwrap())
            .lines()
            .map(|l| l.unwrap())
            .collect();
        assert_eq!(lines.len(), 7, "6 rounds + summary");
        for line in &lines {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v.is_object());
        }
        let summary: serde_json::Value = serde_json::from_str(lines.last().unwrap()).unwrap();
        assert_eq!(summary["summary"], true);
        assert!(summary["resolved"]["rounds"].as_u64().is_some());
    }

    #[test]
    fn run_is_byte_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path(), "a.toml", &blobs_config("a", 0.02, 5));
        let out1 = dir.path().join("out1.jsonl");
        let out2 = dir.path().join("out2.jsonl");
        cmd_run(&cfg, &out1, &Overrides::default()).unwrap();
        cmd_run(&cfg, &out2, &Overrides::default()).unwrap();
        assert_eq!(
            std::fs::read(&out1).unwrap(),
            std::fs::read(&out2).unwrap()
        );
    }

    #[test]
    fn rerun_from_embedded_resolved_config_matches() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path(), "a.toml", &blobs_config("a", 0.01, 5));
        let out = dir.path().join("out.jsonl");
        let history = cmd_run(&cfg, &out, &Overrides::default()).unwrap();
        let text = std::fs::read_to_string(&out).unwrap();
        let last = text.lines().last().unwrap();
        let summary: serde_json::Value = serde_json::from_str(last).unwrap();
        let resolved: SimConfig = serde_json::from_value(summary["resolved"].clone()).unwrap();
        let rerun = run_experiment(&resolved, 1).unwrap();
        assert_eq!(
            serde_json::to_string(&rerun.records).unwrap(),
            serde_json::to_string(&history.records).unwrap()
        );
    }

    #[test]
    fn toy_two_client_writes_trajectory() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("toy.csv");
        cmd_toy("two_client", "fedavg", 10, &out).unwrap();
        let text = std::fs::read_to_string(&out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 11, "start line + one per round");
        assert!(lines[0].starts_with("0,5.1,-3.1"));
        for line in lines {
            assert_eq!(line.split(',').count(), 3);
        }
    }

    #[test]
    fn toy_three_client_first_line_is_start() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("toy3.csv");
        cmd_toy("three_client", "fedcos:0.05", 5, &out).unwrap();
        let text = std::fs::read_to_string(&out).unwrap();
        assert!(text.starts_with("0,4.53,0.38"));
    }

    #[test]
    fn toy_rejects_unknown_variant_and_method() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("x.csv");
        let err = cmd_toy("four_client", "fedavg", 2, &out).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let err = cmd_toy("two_client", "adamw", 2, &out).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn toy_fedcos_zero_matches_fedavg() {
        let dir = tempfile::tempdir().unwrap();
        let avg = dir.path().join("avg.csv");
        let cos0 = dir.path().join("cos0.csv");
        cmd_toy("two_client", "fedavg", 20, &avg).unwrap();
        cmd_toy("two_client", "fedcos:0.0", 20, &cos0).unwrap();
        assert_eq!(
            std::fs::read(&avg).unwrap(),
            std::fs::read(&cos0).unwrap()
        );
    }

    #[test]
    fn compare_requires_two_configs_and_matching_sections() {
        let dir = tempfile::tempdir().unwrap();
        let a = write_config(dir.path(), "a.toml", &blobs_config("a", 0.0, 4));
        let out = dir.path().join("cmp.json");
        let err = cmd_compare(&[&a], None, &out, &Overrides::default()).unwrap_err();
        assert_eq!(err.exit_code(), 2);

        let mismatched = blobs_config("b", 0.02, 4).replace("dim = 6", "dim = 8");
        let b = write_config(dir.path(), "b.toml", &mismatched);
        let err = cmd_compare(&[&a, &b], None, &out, &Overrides::default()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn compare_reports_rounds_to_target() {
        let dir = tempfile::tempdir().unwrap();
        let a = write_config(dir.path(), "a.toml", &blobs_config("base", 0.0, 8));
        let b = write_config(dir.path(), "b.toml", &blobs_config("cos", 0.02, 8));
        let out = dir.path().join("cmp.json");
        let report = cmd_compare(&[&a, &b], None, &out, &Overrides::default()).unwrap();
        assert_eq!(report.methods.len(), 2);
        assert_eq!(report.methods[0].rounds_to_target.is_some(), true);
        assert_eq!(report.methods[0].ratio_vs_first, Some(1.0));
        let text = std::fs::read_to_string(&out).unwrap();
        let v: serde_json::Value = serde_json::from_str(text.trim()).unwrap();
        assert_eq!(v["methods"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn compare_unreachable_target_reports_null() {
        let dir = tempfile::tempdir().unwrap();
        let a = write_config(dir.path(), "a.toml", &blobs_config("base", 0.0, 3));
        let b = write_config(dir.path(), "b.toml", &blobs_config("cos", 0.02, 3));
        let out = dir.path().join("cmp.json");
        let report = cmd_compare(&[&a, &b], Some(2.0), &out, &Overrides::default()).unwrap();
        assert!(report.methods.iter().all(|m| m.rounds_to_target.is_none()));
        assert!(report.methods.iter().all(|m| m.rounds_cap == 3));
    }

    #[test]
    fn partition_inspect_histograms() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path(), "a.toml", &blobs_config("a", 0.0, 2));
        let mut buf = Vec::new();
        cmd_partition_inspect(&cfg, &mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        let clients = v["clients"].as_array().unwrap();
        assert_eq!(clients.len(), 4);
        for c in clients {
            let hist = c["label_histogram"].as_array().unwrap();
            let nonzero = hist.iter().filter(|h| h.as_u64().unwrap() > 0).count();
            assert_eq!(nonzero, 1, "4 classes over 4 clients: one label each");
        }
    }
}
