//! Scene, camera and drag-spec file formats.

mod json;
mod ply;

pub use json::{
    cameras_to_json, dragspec_from_value, dragspec_to_json, parse_cameras, parse_dragspec, read_cameras,
    read_dragspec, write_cameras, write_dragspec, JsonError,
};
pub use ply::{encode_ply, header_bytes, parse_ply, property_names, read_ply, record_size, write_ply, PlyError};
