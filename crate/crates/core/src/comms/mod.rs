//! Checkpoint serialization, communication-size accounting and the TCP
//! transport for process-separated federations.

mod checkpoint;
mod size;
mod transport;
mod wire;

pub use checkpoint::{
    config_digest, deserialize_checked, deserialize_params, digest_hex, header_len, load_checkpoint,
    save_checkpoint, serialize_params, serialized_len, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use size::{communication_size, communication_size_of, reduction_ratio, CommSize, BYTES_PER_PARAM};
pub use transport::{
    connect_client, serve, ClientHello, ClientSession, RoundTraffic, ServeOutcome, ServerOptions,
    SocketServer, DEFAULT_TIMEOUT,
};
pub use wire::{read_frame, write_frame, Frame, MessageType, FRAME_OVERHEAD, MAX_FRAME_LEN};
