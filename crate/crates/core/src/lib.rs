//! Segmentation-free iris localization: ILN/PRN regression networks on a
//! small reverse-mode autodiff engine, synthetic eye data, masks, rubber
//! sheet normalization, metrics and a CPU latency benchmark.

pub mod codec;
pub mod evaluation;
pub mod geometry;
pub mod masking;
pub mod nets;
pub mod raster;
pub mod tensor;
pub mod traindata;
pub mod training;
