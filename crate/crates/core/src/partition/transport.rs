//! Message passing between simulated ranks.

use std::collections::{HashMap, VecDeque};
use std::sync::{Barrier, Condvar, Mutex};
use std::time::{Duration, Instant};

use thiserror::Error;

pub type Tag = u32;

pub const TAG_HALO: Tag = 1;
pub const TAG_REDUCE: Tag = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("rank {rank} outside 0..{nranks}")]
    InvalidRank { rank: usize, nranks: usize },
    #[error("rank {dst} timed out waiting for tag {tag} from rank {src}")]
    Timeout { src: usize, dst: usize, tag: Tag },
    #[error("malformed message: {0}")]
    Malformed(String),
}

/// Pending receive of the next message with `tag` from `src` to `dst`.
#[derive(Debug)]
pub struct RecvRequest {
    pub src: usize,
    pub dst: usize,
    pub tag: Tag,
    payload: Option<Vec<u8>>,
}

impl RecvRequest {
    pub fn new(src: usize, dst: usize, tag: Tag) -> Self {
        Self { src, dst, tag, payload: None }
    }

    pub fn is_done(&self) -> bool {
        self.payload.is_some()
    }

    /// Stores a payload that arrived; used by implementations.
    pub fn fulfill(&mut self, data: Vec<u8>) {
        self.payload = Some(data);
    }

    pub fn take_payload(&mut self) -> Option<Vec<u8>> {
        self.payload.take()
    }
}

/// Duplex messaging between ranks. Messages with the same source,
/// destination and tag are delivered in send order. Sends never block.
pub trait Transport: Send + Sync {
    fn nranks(&self) -> usize;
    fn post_send(&self, src: usize, dst: usize, tag: Tag, data: Vec<u8>) -> Result<(), TransportError>;
    fn post_recv(&self, dst: usize, src: usize, tag: Tag) -> Result<RecvRequest, TransportError>;
    /// Non-blocking progress; true once the message arrived.
    fn test(&self, req: &mut RecvRequest) -> Result<bool, TransportError>;
    /// Blocks until the message arrived and returns it.
    fn complete(&self, req: RecvRequest) -> Result<Vec<u8>, TransportError>;
    fn barrier(&self, rank: usize) -> Result<(), TransportError>;
}

fn check_rank(rank: usize, nranks: usize) -> Result<(), TransportError> {
    if rank < nranks {
        Ok(())
    } else {
        Err(TransportError::InvalidRank { rank, nranks })
    }
}

/// Shared-memory mailboxes for ranks living in one process.
pub struct InProcess {
    nranks: usize,
    boxes: Mutex<HashMap<(usize, usize), VecDeque<(Tag, Vec<u8>)>>>,
    arrived: Condvar,
    barrier: Barrier,
    timeout: Duration,
}

impl InProcess {
    pub fn new(nranks: usize) -> Self {
        Self::with_timeout(nranks, Duration::from_secs(60))
    }

    pub fn with_timeout(nranks: usize, timeout: Duration) -> Self {
        Self {
            nranks,
            boxes: Mutex::new(HashMap::new()),
            arrived: Condvar::new(),
            barrier: Barrier::new(nranks.max(1)),
            timeout,
        }
    }

    fn take(boxes: &mut HashMap<(usize, usize), VecDeque<(Tag, Vec<u8>)>>, req: &RecvRequest) -> Option<Vec<u8>> {
        let q = boxes.get_mut(&(req.src, req.dst))?;
        let pos = q.iter().position(|m| m.0 == req.tag)?;
        q.remove(pos).map(|m| m.1)
    }
}

impl Transport for InProcess {
    fn nranks(&self) -> usize {
        self.nranks
    }

    fn post_send(&self, src: usize, dst: usize, tag: Tag, data: Vec<u8>) -> Result<(), TransportError> {
        check_rank(src, self.nranks)?;
        check_rank(dst, self.nranks)?;
        self.boxes.lock().unwrap().entry((src, dst)).or_default().push_back((tag, data));
        self.arrived.notify_all();
        Ok(())
    }

    fn post_recv(&self, dst: usize, src: usize, tag: Tag) -> Result<RecvRequest, TransportError> {
        check_rank(src, self.nranks)?;
        check_rank(dst, self.nranks)?;
        Ok(RecvRequest::new(src, dst, tag))
    }

    fn test(&self, req: &mut RecvRequest) -> Result<bool, TransportError> {
        if req.is_done() {
            return Ok(true);
        }
        if let Some(d) = Self::take(&mut self.boxes.lock().unwrap(), req) {
            req.fulfill(d);
        }
        Ok(req.is_done())
    }

    fn complete(&self, mut req: RecvRequest) -> Result<Vec<u8>, TransportError> {
        if let Some(d) = req.take_payload() {
            return Ok(d);
        }
        let deadline = Instant::now() + self.timeout;
        let mut boxes = self.boxes.lock().unwrap();
        loop {
            if let Some(d) = Self::take(&mut boxes, &req) {
                return Ok(d);
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(TransportError::Timeout { src: req.src, dst: req.dst, tag: req.tag });
            }
            boxes = self.arrived.wait_timeout(boxes, deadline - now).unwrap().0;
        }
    }

    fn barrier(&self, rank: usize) -> Result<(), TransportError> {
        check_rank(rank, self.nranks)?;
        self.barrier.wait();
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MessageRecord {
    pub src: usize,
    pub dst: usize,
    pub tag: Tag,
    pub bytes: usize,
}

/// Wraps a transport and logs every send.
pub struct Recording<T> {
    inner: T,
    log: Mutex<Vec<MessageRecord>>,
}

impl<T: Transport> Recording<T> {
    pub fn new(inner: T) -> Self {
        Self { inner, log: Mutex::new(Vec::new()) }
    }

    pub fn records(&self) -> Vec<MessageRecord> {
        self.log.lock().unwrap().clone()
    }

    pub fn clear(&self) {
        self.log.lock().unwrap().clear();
    }

    pub fn total_bytes(&self) -> usize {
        self.log.lock().unwrap().iter().map(|r| r.bytes).sum()
    }

    pub fn bytes_with_tag(&self, tag: Tag) -> usize {
        self.log.lock().unwrap().iter().filter(|r| r.tag == tag).map(|r| r.bytes).sum()
    }

    /// Messages sent by `rank` with `tag`.
    pub fn sent_by(&self, rank: usize, tag: Tag) -> usize {
        self.log.lock().unwrap().iter().filter(|r| r.src == rank && r.tag == tag).count()
    }

    pub fn inner(&self) -> &T {
        &self.inner
    }
}

impl<T: Transport> Transport for Recording<T> {
    fn nranks(&self) -> usize {
        self.inner.nranks()
    }

    fn post_send(&self, src: usize, dst: usize, tag: Tag, data: Vec<u8>) -> Result<(), TransportError> {
        let bytes = data.len();
        self.inner.post_send(src, dst, tag, data)?;
        self.log.lock().unwrap().push(MessageRecord { src, dst, tag, bytes });
        Ok(())
    }

    fn post_recv(&self, dst: usize, src: usize, tag: Tag) -> Result<RecvRequest, TransportError> {
        self.inner.post_recv(dst, src, tag)
    }

    fn test(&self, req: &mut RecvRequest) -> Result<bool, TransportError> {
        self.inner.test(req)
    }

    fn complete(&self, req: RecvRequest) -> Result<Vec<u8>, TransportError> {
        self.inner.complete(req)
    }

    fn barrier(&self, rank: usize) -> Result<(), TransportError> {
        self.inner.barrier(rank)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordered_delivery_by_tag() {
        let t = InProcess::new(2);
        t.post_send(0, 1, 5, vec![1]).unwrap();
        t.post_send(0, 1, 6, vec![2]).unwrap();
        t.post_send(0, 1, 5, vec![3]).unwrap();
        let mut r = t.post_recv(1, 0, 6).unwrap();
        assert!(t.test(&mut r).unwrap());
        assert_eq!(t.complete(r).unwrap(), vec![2]);
        assert_eq!(t.complete(t.post_recv(1, 0, 5).unwrap()).unwrap(), vec![1]);
        assert_eq!(t.complete(t.post_recv(1, 0, 5).unwrap()).unwrap(), vec![3]);
        assert!(matches!(t.post_send(0, 2, 1, vec![]), Err(TransportError::InvalidRank { .. })));
    }

    #[test]
    fn timeout() {
        let t = InProcess::with_timeout(2, Duration::from_millis(10));
        let r = t.post_recv(0, 1, 1).unwrap();
        assert_eq!(t.complete(r), Err(TransportError::Timeout { src: 1, dst: 0, tag: 1 }));
    }

    #[test]
    fn recording_counts() {
        let t = Recording::new(InProcess::new(3));
        t.post_send(0, 1, TAG_HALO, vec![0; 16]).unwrap();
        t.post_send(2, 1, TAG_REDUCE, vec![0; 8]).unwrap();
        assert_eq!(t.total_bytes(), 24);
        assert_eq!(t.bytes_with_tag(TAG_HALO), 16);
        assert_eq!(t.sent_by(0, TAG_HALO), 1);
    }
}
