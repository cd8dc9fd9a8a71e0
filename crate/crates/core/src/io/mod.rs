//! Files on disk: PLY clouds, datasets, images, checkpoints, teacher
//! trajectories, edit scripts and the synthetic toy scene.

mod bin;
pub mod checkpoint;
pub mod dataset;
pub mod edit;
pub mod image_io;
pub mod ply;
pub mod toy;
pub mod trajectory;


pub use dataset::load_dataset;

pub use image_io::{load_image, save_image};
pub use ply::{load_ply, save_ply};

pub use checkpoint::{load_checkpoint, quantize_model, save_checkpoint};
pub use trajectory::{load_trajectories, save_trajectories, Trajectories};
