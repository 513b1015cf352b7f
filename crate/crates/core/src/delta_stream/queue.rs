//! Frame transports. Every transport delivers frames in publish order;
//! delivery is at-least-once, and consumers deduplicate by model version.

use std::collections::VecDeque;
use std::fs::{self, File, OpenOptions};
use std::io::{ErrorKind, Read, Seek, SeekFrom, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::DeltaError;

/// Frames larger than this are treated as corruption.
pub const MAX_FRAME_LEN: u32 = 1 << 30;

pub trait FramePublisher: Send {
    fn publish(&mut self, frame: &[u8]) -> Result<(), DeltaError>;
}

impl<P: FramePublisher + ?Sized> FramePublisher for Box<P> {
    fn publish(&mut self, frame: &[u8]) -> Result<(), DeltaError> {
        (**self).publish(frame)
    }
}

pub trait FrameConsumer: Send {
    /// Next frame, or `None` if nothing arrives within `timeout`.
    fn consume(&mut self, timeout: Duration) -> Result<Option<Vec<u8>>, DeltaError>;

    /// Marks every frame returned so far as processed. Frames consumed but
    /// not committed may be delivered again after a restart.
    fn commit(&mut self) -> Result<(), DeltaError> {
        Ok(())
    }
}

/// Where a queue lives, parsed from `file:<prefix>` or `tcp://<host:port>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// `<prefix>.dq` holds frames, `<prefix>.cursor` the consumer offset.
    File(PathBuf),
    Tcp(String),
}

impl Endpoint {
    pub fn parse(spec: &str) -> Result<Self, DeltaError> {
        if let Some(rest) = spec.strip_prefix("file:") {
            if rest.is_empty() {
                return Err(DeltaError::Endpoint(spec.to_string()));
            }
            Ok(Endpoint::File(PathBuf::from(rest)))
        } else if let Some(rest) = spec.strip_prefix("tcp://") {
            if rest.is_empty() {
                return Err(DeltaError::Endpoint(spec.to_string()));
            }
            Ok(Endpoint::Tcp(rest.to_string()))
        } else {
            Err(DeltaError::Endpoint(spec.to_string()))
        }
    }

    pub fn open_publisher(&self) -> Result<Box<dyn FramePublisher>, DeltaError> {
        Ok(match self {
            Endpoint::File(prefix) => Box::new(FilePublisher::open(prefix)?),
            Endpoint::Tcp(addr) => Box::new(TcpPublisher::connect(addr, Duration::from_secs(10))?),
        })
    }

    pub fn open_consumer(&self) -> Result<Box<dyn FrameConsumer>, DeltaError> {
        Ok(match self {
            Endpoint::File(prefix) => Box::new(FileConsumer::open(prefix)?),
            Endpoint::Tcp(addr) => Box::new(TcpConsumer::bind(addr)?),
        })
    }
}

// ---------------------------------------------------------------------------
// In-memory

#[derive(Default)]
struct Shared {
    frames: Mutex<VecDeque<Vec<u8>>>,
    ready: Condvar,
}

pub struct MemoryPublisher {
    shared: Arc<Shared>,
}

pub struct MemoryConsumer {
    shared: Arc<Shared>,
}

/// Unbounded single-producer/single-consumer queue.
pub fn memory_queue() -> (MemoryPublisher, MemoryConsumer) {
    let shared = Arc::new(Shared::default());
    (
        MemoryPublisher {
            shared: shared.clone(),
        },
        MemoryConsumer { shared },
    )
}

impl FramePublisher for MemoryPublisher {
    fn publish(&mut self, frame: &[u8]) -> Result<(), DeltaError> {
        self.shared.frames.lock().unwrap().push_back(frame.to_vec());
        self.shared.ready.notify_one();
        Ok(())
    }
}

impl FrameConsumer for MemoryConsumer {
    fn consume(&mut self, timeout: Duration) -> Result<Option<Vec<u8>>, DeltaError> {
        let guard = self.shared.frames.lock().unwrap();
        let (mut guard, _) = self
            .shared
            .ready
            .wait_timeout_while(guard, timeout, |q| q.is_empty())
            .unwrap();
        Ok(guard.pop_front())
    }
}

// ---------------------------------------------------------------------------
// Append-only file

fn with_extension(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub struct FilePublisher {
    file: File,
}

impl FilePublisher {
    pub fn open(prefix: &Path) -> Result<Self, DeltaError> {
        if let Some(parent) = prefix.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(with_extension(prefix, "dq"))?;
        Ok(Self { file })
    }
}

impl FramePublisher for FilePublisher {
    fn publish(&mut self, frame: &[u8]) -> Result<(), DeltaError> {
        let mut buf = Vec::with_capacity(4 + frame.len());
        buf.extend_from_slice(&(frame.len() as u32).to_le_bytes());
        buf.extend_from_slice(frame);
        self.file.write_all(&buf)?;
        self.file.flush()?;
        Ok(())
    }
}

pub struct FileConsumer {
    frames_path: PathBuf,
    cursor_path: PathBuf,
    offset: u64,
    committed: u64,
}

impl FileConsumer {
    /// Opens the queue, resuming from the persisted cursor if one exists.
    pub fn open(prefix: &Path) -> Result<Self, DeltaError> {
        let cursor_path = with_extension(prefix, "cursor");
        let offset = match fs::read_to_string(&cursor_path) {
            Ok(text) => text
                .trim_end_matches('\n')
                .parse::<u64>()
                .map_err(|_| DeltaError::Format(format!("bad cursor file {}", cursor_path.display())))?,
            Err(e) if e.kind() == ErrorKind::NotFound => 0,
            Err(e) => return Err(e.into()),
        };
        Ok(Self {
            frames_path: with_extension(prefix, "dq"),
            cursor_path,
            offset,
            committed: offset,
        })
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    fn try_read(&mut self) -> Result<Option<Vec<u8>>, DeltaError> {
        let mut file = match File::open(&self.frames_path) {
            Ok(f) => f,
            Err(e) if e.kind() == ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let available = file.metadata()?.len();
        if available < self.offset + 4 {
            return Ok(None);
        }
        file.seek(SeekFrom::Start(self.offset))?;
        let mut len = [0u8; 4];
        file.read_exact(&mut len)?;
        let len = u32::from_le_bytes(len);
        if len > MAX_FRAME_LEN {
            return Err(DeltaError::Format(format!("frame length {len} at offset {}", self.offset)));
        }
        // A frame still being appended is not yet visible.
        if available < self.offset + 4 + len as u64 {
            return Ok(None);
        }
        let mut frame = vec![0u8; len as usize];
        file.read_exact(&mut frame)?;
        self.offset += 4 + len as u64;
        Ok(Some(frame))
    }
}

impl FrameConsumer for FileConsumer {
    fn consume(&mut self, timeout: Duration) -> Result<Option<Vec<u8>>, DeltaError> {
        let deadline = Instant::now() + timeout;
        loop {
            if let Some(frame) = self.try_read()? {
                return Ok(Some(frame));
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(None);
            }
            thread::sleep((deadline - now).min(Duration::from_millis(5)));
        }
    }

    fn commit(&mut self) -> Result<(), DeltaError> {
        if self.committed == self.offset {
            return Ok(());
        }
        let tmp = with_extension(&self.cursor_path, "tmp");
        fs::write(&tmp, format!("{}\n", self.offset))?;
        fs::rename(&tmp, &self.cursor_path)?;
        self.committed = self.offset;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// TCP

fn write_frame<W: Write>(w: &mut W, frame: &[u8]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(4 + frame.len());
    buf.extend_from_slice(&(frame.len() as u32).to_le_bytes());
    buf.extend_from_slice(frame);
    w.write_all(&buf)?;
    w.flush()
}

/// Producer side: connects to a listening [`TcpConsumer`].
pub struct TcpPublisher {
    stream: TcpStream,
}

impl TcpPublisher {
    /// Connects, retrying until `patience` elapses.
    pub fn connect(addr: &str, patience: Duration) -> Result<Self, DeltaError> {
        let deadline = Instant::now() + patience;
        loop {
            match TcpStream::connect(addr) {
                Ok(stream) => {
                    stream.set_nodelay(true)?;
                    return Ok(Self { stream });
                }
                Err(e) if Instant::now() < deadline => {
                    log::debug!("delta queue {addr} not reachable yet: {e}");
                    thread::sleep(Duration::from_millis(50));
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
}

impl FramePublisher for TcpPublisher {
    fn publish(&mut self, frame: &[u8]) -> Result<(), DeltaError> {
        write_frame(&mut self.stream, frame)?;
        Ok(())
    }
}

/// Consumer side: listens and accepts producer connections one at a time.
pub struct TcpConsumer {
    local_addr: SocketAddr,
    frames: mpsc::Receiver<Vec<u8>>,
}

impl TcpConsumer {
    pub fn bind(addr: &str) -> Result<Self, DeltaError> {
        let listener = TcpListener::bind(addr)?;
        let local_addr = listener.local_addr()?;
        let (tx, frames) = mpsc::channel();
        thread::Builder::new()
            .name("delta-tcp-accept".into())
            .spawn(move || {
                for conn in listener.incoming() {
                    let Ok(mut stream) = conn else { continue };
                    loop {
                        let mut len = [0u8; 4];
                        if stream.read_exact(&mut len).is_err() {
                            break;
                        }
                        let len = u32::from_le_bytes(len);
                        if len > MAX_FRAME_LEN {
                            log::warn!("dropping connection: frame length {len}");
                            break;
                        }
                        let mut frame = vec![0u8; len as usize];
                        if stream.read_exact(&mut frame).is_err() {
                            break;
                        }
                        if tx.send(frame).is_err() {
                            return;
                        }
                    }
                }
            })?;
        Ok(Self { local_addr, frames })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }
}

impl FrameConsumer for TcpConsumer {
    fn consume(&mut self, timeout: Duration) -> Result<Option<Vec<u8>>, DeltaError> {
        match self.frames.recv_timeout(timeout) {
            Ok(frame) => Ok(Some(frame)),
            Err(mpsc::RecvTimeoutError::Timeout) => Ok(None),
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                Err(DeltaError::Io("TCP listener stopped".into()))
            }
        }
    }
}
