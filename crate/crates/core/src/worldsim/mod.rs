//! First-person navigation simulator: layouts, raycast renderer, episodic
//! environment and random-walk datasets.

mod dataset;
mod env;
pub mod geometry;
mod layout;
mod render;

pub use dataset::{collect_random, occupancy, random_walk, TimeSeriesDataset, Walk, TSD_VERSION};
pub use env::{Action, NavEnv, Pose, Transition, TURN_ANGLE};
pub use geometry::Vec2;
pub use layout::{Floor, Layout, LayoutConfig, LayoutKind, TargetRule, Texture, Wall};
pub use render::{
    focal_length, render, render_into, write_ppm, Frame, FRAME_CHANNELS, FRAME_HEIGHT, FRAME_LEN,
    FRAME_WIDTH,
};
