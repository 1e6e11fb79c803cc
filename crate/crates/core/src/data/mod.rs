//! File formats and dataset generators.

pub mod cifar;
mod ppm;
pub mod synth;
mod tnsr;

pub use cifar::{load_cifar10_bin, Split};
pub use ppm::{decode_ppm, encode_ppm, read_ppm, write_ppm};
pub use synth::{
    bicubic_downsample, gen_shapes, gen_sr_textures, gen_teacher_1d, mean_power, SrPair,
    TeacherData, SHAPE_CLASSES,
};
pub use tnsr::{decode as decode_tnsr, encode as encode_tnsr, read_tnsr, write_tnsr};
