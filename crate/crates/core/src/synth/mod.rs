//! Procedural desk-scale stand-ins for the face-identification corpus and
//! the accessory repositories, plus the paste/blend applicators.

mod apply;
mod faces;
mod triggers;

pub use apply::{
    apply, blend, placement_box, scaled_dims, superimpose_clamped, Placement, PixelBox,
};
pub use faces::{gen_faces, FaceClassSpec, FaceDataset};
pub use triggers::{
    color_rgb, gen_paste_pool, gen_trigger_repo, ColorLabel, ObjectClass, RepoSpec, Repository,
    TriggerObject,
};
