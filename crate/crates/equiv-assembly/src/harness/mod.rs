//! User-facing surface: dataset generation, training, evaluation, the
//! equivariance self-check, and checkpointing.

pub mod config;
mod equivcheck;
mod train;

pub use config::{Config, ConfigError};
pub use equivcheck::{cmd_check_equivariance, rotate_part, run_suite, EquivReport, EQUIV_TOLERANCE};
pub use train::{cmd_train, EpochLog, TrainOutcome};

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::correlation::AssemblyModel;
use crate::data::io::{read_dataset, write_dataset, DataError};
use crate::grad::checkpoint::CheckpointError;
use crate::grad::{AdamOptimizer, ParamSet, Tensor};
use crate::metrics::{evaluate, MetricReport, ModelPredictor};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("generation failed at sample {index} (seed {seed}): {source}")]
    Generation {
        index: u64,
        seed: u64,
        source: crate::data::GenError,
    },
    #[error("loss became non-finite at epoch {epoch}, batch {batch_idx}; last-good checkpoint retained")]
    NanLoss { epoch: usize, batch_idx: usize },
    #[error("checkpoint mismatch for {name}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint is missing parameter {name} (expected shape {expected:?})")]
    MissingParam { name: String, expected: Vec<usize> },
    #[error("{0}")]
    Other(String),
}

/// Generate the configured dataset and write it to `dataset_dir`.
pub fn cmd_generate(config: &Config) -> Result<usize, HarnessError> {
    config.validate()?;
    let gen = config.gen_config();
    let samples = crate::data::generate_dataset(&gen).map_err(|(index, source)| {
        HarnessError::Generation {
            index,
            seed: gen.seed,
            source,
        }
    })?;
    let root = PathBuf::from(&config.dataset_dir);
    write_dataset(&root, &gen, &samples)?;
    let manifest = crate::data::io::read_manifest(&root)?;
    assert_eq!(
        manifest.sample_dirs.len(),
        gen.samples,
        "manifest count must equal requested count"
    );
    println!(
        "wrote {} samples ({} whole points, {} part points, parts {}..={}) to {}",
        samples.len(),
        gen.whole_points,
        gen.part_points,
        gen.parts_min,
        gen.parts_max,
        config.dataset_dir
    );
    Ok(samples.len())
}

/// Build the model skeleton for the config (parameters seeded, then usually
/// overwritten from a checkpoint).
pub fn build_model(config: &Config) -> (ParamSet, AssemblyModel) {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut ps = ParamSet::new();
    let model = AssemblyModel::init(&mut ps, config.model_config(), &mut rng);
    (ps, model)
}

/// Copy checkpoint entries onto the registered parameters, reporting missing
/// names and shape disagreements explicitly.
pub fn load_model_params(
    entries: &[(String, Tensor)],
    ps: &mut ParamSet,
) -> Result<(), HarnessError> {
    for id in ps.ids().collect::<Vec<_>>() {
        let name = ps.name(id).to_string();
        let expected = ps.get(id).shape().to_vec();
        let Some((_, tensor)) = entries.iter().find(|(n, _)| *n == name) else {
            return Err(HarnessError::MissingParam { name, expected });
        };
        if tensor.shape() != expected.as_slice() {
            return Err(HarnessError::ShapeMismatch {
                name,
                expected,
                found: tensor.shape().to_vec(),
            });
        }
        *ps.get_mut(id) = tensor.clone().with_grad();
    }
    Ok(())
}

/// Serialize parameters, both optimizer states, and the completed-epoch
/// marker into one checkpoint file.
pub fn save_checkpoint(
    path: &Path,
    ps: &ParamSet,
    adam_g: &AdamOptimizer,
    adam_d: &AdamOptimizer,
    epochs_done: usize,
) -> Result<(), HarnessError> {
    let mut entries: Vec<(String, Tensor)> = ps
        .iter()
        .map(|(n, t)| (n.to_string(), t.clone()))
        .collect();
    entries.extend(adam_g.state_entries(ps, "adam_g"));
    entries.extend(adam_d.state_entries(ps, "adam_d"));
    entries.push((
        "meta.epoch".to_string(),
        Tensor::from_vec(vec![1], vec![epochs_done as f32]),
    ));
    crate::grad::checkpoint::save(path, &entries)?;
    Ok(())
}

/// Evaluate a checkpoint on a dataset; prints the metric table and one JSON
/// record, optionally exporting predicted assemblies as xyz files.
pub fn cmd_eval(
    config: &Config,
    checkpoint: &str,
    dataset_dir: &str,
) -> Result<MetricReport, HarnessError> {
    config.validate()?;
    config.require_dir(dataset_dir, "eval dataset")?;
    let (_, samples) = read_dataset(Path::new(dataset_dir))?;
    let (mut ps, model) = build_model(config);
    let entries = crate::grad::checkpoint::load(checkpoint)?;
    load_model_params(&entries, &mut ps)?;
    let predictor = ModelPredictor {
        model: &model,
        params: &ps,
    };
    let report = evaluate(&samples, &predictor, config.pa_threshold);
    println!("{}", report.table());
    println!("{}", serde_json::to_string(&report).expect("report serializes"));
    if !config.eval_export_dir.is_empty() {
        export_predictions(config, &samples, &predictor)?;
    }
    Ok(report)
}

fn export_predictions(
    config: &Config,
    samples: &[crate::data::AssemblySample],
    predictor: &ModelPredictor,
) -> Result<(), HarnessError> {
    use crate::metrics::Predictor as _;
    let root = PathBuf::from(&config.eval_export_dir);
    for (i, sample) in samples.iter().enumerate() {
        let dir = root.join(crate::data::io::sample_dir_name(i));
        std::fs::create_dir_all(&dir)
            .map_err(|e| HarnessError::Other(format!("cannot create {dir:?}: {e}")))?;
        let poses = predictor.predict(sample);
        for (pi, cloud) in crate::metrics::predicted_assembly(sample, &poses)
            .into_iter()
            .enumerate()
        {
            let path = dir.join(format!("pred_part_{pi}.xyz"));
            std::fs::write(&path, crate::data::io::format_xyz(&cloud))
                .map_err(|e| HarnessError::Other(format!("cannot write {path:?}: {e}")))?;
        }
    }
    Ok(())
}
