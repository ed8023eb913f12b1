//! Synthetic scenes of static and moving talkers in shoebox rooms.

pub mod dataset;
pub mod ism;
pub mod mix;
pub mod noise;
pub mod render;
pub mod scene;
pub mod speech;

pub use dataset::{
    generate_dataset, render_utterance, Manifest, ManifestRecord, SimConfig, Utterance,
};
pub use ism::{ism_rir, measure_rt60, AbsorptionModel, IsmOptions};
pub use mix::mix_at_snr;
pub use noise::{diffuse_noise, DiffuseOptions};
pub use render::render_moving_source;
pub use scene::{sample_scenario, ArraySpec, RoomSpec, Scenario, SceneRanges, Trajectory};
