//! Synthetic-aperture integral imaging over unstructured aerial light fields.
//!
//! A drone-style scan records many single thermal images of the ground from
//! slightly different positions inside a wide synthetic aperture. Registering
//! all of them onto a common synthetic focal plane and averaging produces an
//! *integral image* in which out-of-focus occluders (forest canopy) blur into
//! a faint haze while targets on the focused ground stay sharp. This crate
//! provides everything needed to reproduce that effect end to end on
//! procedurally generated scenes:
//!
//! - [`geometry`] – pinhole cameras, rigid poses, rays, plane intersection.
//! - [`image`] – float (HDR) and 8-bit grayscale rasters plus PFM/PGM I/O.
//! - [`lightfield`] – integral-image formation, focal stacks, focus
//!   optimization, and the closed-form occluder footprint formulas.
//! - [`simulator`] – procedural occluded-scene generator and per-view thermal
//!   renderer; the ground-truth oracle for every statistical property.
//! - [`augment`] – focus/rotation/AHE augmentation and 3D-label projection to
//!   axis-aligned boxes.
//! - [`detector`] – a deterministic thresholded blob detector standing in for
//!   a trained network, producing confidence-scored boxes.
//! - [`eval`] – NMS, greedy TP/FP matching, average precision, and per-scene
//!   report tables.

pub mod augment;
pub mod detector;
pub mod eval;
pub mod geometry;
pub mod image;
pub mod lightfield;
pub mod simulator;

pub use augment::BoundingBox;
pub use geometry::{Camera, CameraIntrinsics, Plane, Pose, Ray};
pub use image::{HdrImage, LdrImage};
pub use lightfield::{FocalPlane, IntegralImage, LightFieldCapture, View};
pub use simulator::{Scene, SceneSpec};
