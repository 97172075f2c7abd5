//! Images, volumes and file formats; synthetic speckle; registration and
//! ground-truth construction by averaging.

pub mod ground_truth;
pub mod image;
pub mod io;
pub mod register;
pub mod speckle;
pub mod warp;

pub use ground_truth::{
    build_ground_truth, build_ground_truth_for, nearby_scans, select_top, Candidate,
    GroundTruthConfig, GroundTruthPair,
};
pub use image::{CropWindow, Image, Volume};
pub use io::{
    decode_image, encode_pgm, list_images, read_image, read_volume, read_volumes, write_image,
    write_pgm, write_tns_image, write_volume,
};
pub use register::{register_affine, register_affine_with, Registration, RegistrationConfig};
pub use speckle::{add_speckle, layered_phantom, speckle_unclamped, SpeckleConfig};
pub use warp::{sample_bilinear, warp_affine, warp_affine_covered, AffineTransform};
