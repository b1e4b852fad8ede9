use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use super::Outcome;

const RUNS: &[&str] = &[
    "synth --preset lead-break --seed 5 --out lb.csv --truth lb.json",
    "synth --preset journal-bearing --seed 6 --out jb.raw --format raw_f32_le --truth jb.json",
    "synth --preset offset-bursts --seed 7 --out ob.csv --truth ob.json",
    "synth --preset damage-stream --seed 8 --hits 1500 --out h.bin --truth h.jsonl",
    "detect --input lb.csv --annotations lb.json --window 256 --overlap 0.5 \
     --trace d.csv --flags d.json",
    "cluster --input jb.raw --format raw_f32_le --annotations jb.json --threshold-volts 3e-3 \
     --window 2048 --alpha 10 --seed 9 --events c.jsonl --model c.json",
    "cluster --input ob.csv --annotations ob.json --threshold-volts 2e-3 --window 256 \
     --overlap 0.875 --seed 10 --events o.jsonl --model o.json",
    "monitor --hits h.bin --keep-ratio 0.5 --threshold-volts 0.1 --seed 11 --warmup 20 \
     --alarms m.jsonl --tracks m.csv --model m.json",
    "features --input lb.csv --annotations lb.json --threshold-volts 5e-3 --out f.jsonl",
];

/// Runs the whole command list in `dir`; returns every file produced plus
/// each command's stdout.
fn run_all(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut outputs = BTreeMap::new();
    for (i, line) in RUNS.iter().enumerate() {
        let out = Command::new(env!("CARGO_BIN_EXE_aemix"))
            .current_dir(dir)
            .args(line.split_whitespace())
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("{line}: {}", String::from_utf8_lossy(&out.stderr)));
        }
        outputs.insert(format!("stdout#{i}"), out.stdout);
    }
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let entry = entry.map_err(|e| e.to_string())?;
        let bytes = std::fs::read(entry.path()).map_err(|e| e.to_string())?;
        outputs.insert(entry.file_name().to_string_lossy().into_owned(), bytes);
    }
    Ok(outputs)
}

pub fn cli_determinism() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let (first, second) = match (run_all(dirs[0].path()), run_all(dirs[1].path())) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return Outcome::new(false, format!("run failed: {e}")),
    };
    let differing: Vec<&String> = first
        .keys()
        .chain(second.keys())
        .filter(|k| first.get(*k) != second.get(*k))
        .collect();
    let mut commands: Vec<&str> = RUNS
        .iter()
        .filter_map(|r| r.split_whitespace().next())
        .collect();
    commands.dedup();
    Outcome::new(
        differing.is_empty(),
        format!(
            "{} outputs compared across {} ({} invocations); differing: {differing:?}",
            first.len(),
            commands.join(", "),
            RUNS.len()
        ),
    )
}
