//! Incremental-update messages and the queues that carry them from the
//! trainer to the scoring service.

mod apply;
mod queue;
mod wire;

pub use apply::{validate_delta, ApplyError, ApplyOutcome};
pub use queue::{
    memory_queue, Endpoint, FileConsumer, FilePublisher, FrameConsumer, FramePublisher, MemoryConsumer,
    MemoryPublisher, TcpConsumer, TcpPublisher, MAX_FRAME_LEN,
};
pub use wire::{decode_delta, encode_delta, DeltaMessage, DenseRecord, SparseRecord, FORMAT_VERSION, HEADER_LEN, MAGIC};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DeltaError {
    #[error("malformed delta frame: {0}")]
    Format(String),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("I/O error: {0}")]
    Io(String),
    #[error("unrecognized queue endpoint `{0}` (expected file:<prefix> or tcp://<addr>)")]
    Endpoint(String),
}

impl From<std::io::Error> for DeltaError {
    fn from(e: std::io::Error) -> Self {
        DeltaError::Io(e.to_string())
    }
}

/// Receives deltas as the trainer emits them.
pub trait DeltaSink {
    fn send(&mut self, msg: &DeltaMessage) -> Result<(), DeltaError>;
}

impl DeltaSink for Vec<DeltaMessage> {
    fn send(&mut self, msg: &DeltaMessage) -> Result<(), DeltaError> {
        self.push(msg.clone());
        Ok(())
    }
}

impl<P: FramePublisher + ?Sized> DeltaSink for P {
    fn send(&mut self, msg: &DeltaMessage) -> Result<(), DeltaError> {
        self.publish(&encode_delta(msg))
    }
}
