pub mod audio;
pub mod dataset;
pub mod networks;
pub mod training;
pub mod pipeline;
