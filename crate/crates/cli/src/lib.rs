//! Command-line front end for the reparameterization toolkit.

pub mod commands;
pub mod image_io;
