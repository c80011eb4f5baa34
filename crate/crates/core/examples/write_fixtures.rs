//! Regenerates the sample metrics files under `data/`.
//!
//! cargo run -p timegate --example write_fixtures

use std::error::Error;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use timegate::shell::write_records;
use timegate::simulator::fixtures::{
    boundary_pool, energy_pool, pareto_pool, ACCEPTANCE_BOUNDARY_CYCLES, LLAMA_PARETO,
};
use timegate::simulator::synth_pool;
use timegate::{RunRecord, SliceFraction};

fn main() -> Result<(), Box<dyn Error>> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR"))
        .ancestors()
        .nth(2)
        .unwrap()
        .join("data");
    let tenth: SliceFraction = "0.10".parse()?;

    let pool = boundary_pool(100, tenth, &ACCEPTANCE_BOUNDARY_CYCLES)?;
    write(&data.join("acceptance/pool.jsonl"), pool.records())?;

    let runs = energy_pool(36, tenth, (260.4, 16.67), (28.4, 1.78))?;
    write(&data.join("energy/runs.jsonl"), &runs)?;

    write(&data.join("pareto/runs.jsonl"), &pareto_pool(&LLAMA_PARETO)?)?;

    let model = serde_yaml::from_str(SENSITIVITY_MODEL)?;
    let pool = synth_pool(&model, &[60.0, 120.0, 240.0, 600.0, 1200.0], &[7, 42, 123], 2024)?;
    write(&data.join("sensitivity/runs.jsonl"), pool.records())?;
    Ok(())
}

const SENSITIVITY_MODEL: &str = r#"
metric: accuracy
base: 0.70
ceiling: 0.96
saturation_scale: 150
label_rate: 1200
seed_noise_sd: 0.03
slice_noise_sd: {"0.10": 0.04, "0.20": 0.03, "0.30": 0.02, "0.50": 0.01}
"#;

fn write(path: &Path, records: &[RunRecord]) -> Result<(), Box<dyn Error>> {
    std::fs::create_dir_all(path.parent().unwrap())?;
    write_records(records, BufWriter::new(File::create(path)?))?;
    println!("wrote {} records to {}", records.len(), path.display());
    Ok(())
}
