pub mod biomarker;
pub mod evaluate;
pub mod heatmap;
pub mod perturb;
pub mod rank;
pub mod survival;
pub mod synth;
pub mod time;
