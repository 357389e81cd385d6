//! Training orchestration, clip-by-clip generation and run configuration.

mod config;
mod generate;
mod train;
mod windows;

pub use config::{
    component_rng, keys_help, parse_override, split_seed, DataSection, EvalSection, GradCheckSection, ModelSection,
    RunConfig, SampleSection, ScheduleSection, TrainSection, CONFIG_KEYS,
};
pub use generate::{sha256_hex, untrained_model, write_sample_run, Generator, SampleMeta, SampleMode, SampleRun};
pub use train::{
    adam_path, checkpoint_name, conditioning, learning_rate, train, TrainReport, FINAL_CHECKPOINT, LOSS_FILE,
    RUN_CONFIG,
};
pub use windows::{blend_weights, concat_windows, split_windows, stitch_windows};
