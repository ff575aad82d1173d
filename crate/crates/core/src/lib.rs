pub mod audio;
pub mod data;
pub mod detect;
pub mod encoder;
pub mod eval;
pub mod kv;
pub mod losses;
pub mod nn;
pub mod train;
pub mod util;
