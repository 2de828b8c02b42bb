//! Both sides of physically-realizable backdoor attacks on small image
//! classifiers: mounting blended-trigger poisoning attacks, and
//! recovering the planted trigger objects from a compromised network by
//! reconstructing a raw perturbation and retrieving the best-matching
//! repository object.

pub mod attack;
pub mod detect;
pub mod error;
pub mod image;
pub mod net;
pub mod pam;
pub mod perturb;
pub mod retrieval;
pub mod synth;

pub use error::{Error, Result};
pub use image::Image;
