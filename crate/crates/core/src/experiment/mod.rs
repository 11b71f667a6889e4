//! Experiment plumbing: datasets, configs, energy estimates, run manifests.
mod config;
mod data;
mod energy;
mod manifest;
mod run;

pub use config::{
    DataSpec, EnergySpec, ExperimentConfig, GradCheckSpec, LwfSpec, ModelSpec, TopologySpec, TrainSpec,
};
pub use data::{
    encode, encode_idx, images_from_idx, images_to_idx, load_idx, parse_idx, synth_tasks, EncodedDataset, Encoding,
    IdxArray, Images, Relation, SynthSpec, TaskImages,
};
pub use energy::{energy_report, gate_comparison, EnergyConstants, EnergyReport};
pub use manifest::{blob_hash, sha256_hex, write_atomic, InputHash, Manifest, OutputHash, MANIFEST_FILE};
pub use run::{error_record, exit_code, rerun, run, Command, RerunCheck, RunOutcome, RunRequest, CONFIG_FILE};
