//! Interchange formats: the FaarFile container, JSONL records and the
//! framed stream protocol.

pub mod faar_file;
pub mod jsonl;
pub mod stream;

pub use faar_file::{from_bytes, read_faar, write_epochs, write_recording, FaarData, FaarHeader, Kind};
pub use jsonl::{read_jsonl, write_jsonl};
pub use stream::{run_stream, Handshake, StreamConfig, StreamEngine, StreamSummary};
