//! On-disk formats: id-keyed vector tables, PPM/PNG images and the
//! checkpoint container.

mod checkpoint;
mod image;
mod vectors;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use image::{
    bytes_to_image, image_to_bytes, quantize, read_image, read_png, read_ppm, write_image,
    write_png, write_ppm, RgbImage,
};
pub use vectors::{read_vectors, write_vectors, VectorTable};
