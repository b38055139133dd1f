pub mod analysis;
pub mod cls_metrics;
pub mod morphology;
pub mod perturb;
pub mod ranking;
pub mod seg_metrics;
pub mod survival;
pub mod synth;
pub mod tree;
pub mod volume;
