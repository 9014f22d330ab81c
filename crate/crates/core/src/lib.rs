pub mod audio;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod scene_spec;
pub mod stats;
pub mod stft;
pub mod complex_json;
pub mod rtf;
pub mod scene;
pub mod beamformer;
pub mod eval;
pub mod pipeline;
