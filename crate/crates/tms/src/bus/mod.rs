//! In-process publish/subscribe bus with MQTT-style wildcard filters.
//!
//! Delivery contract: every published message reaches each matching
//! subscription exactly once, in per-subscriber FIFO order. There are no
//! retained messages and no QoS levels; subscribers only see messages
//! published after they subscribe.

pub mod topic;

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{Receiver, Sender, TryRecvError};
use std::sync::{Arc, Mutex, Weak};
use std::time::Duration;

pub use topic::{topic_levels, validate_topic, TopicError, TopicFilter};

/// One delivered message. Payloads are shared, not copied per subscriber.
#[derive(Debug, Clone)]
pub struct BusMessage {
    pub topic: Arc<str>,
    pub payload: Arc<[u8]>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BusError {
    #[error("bus is shut down")]
    Closed,
    #[error(transparent)]
    Topic(#[from] TopicError),
}

struct SubEntry {
    handle_id: u64,
    filter: TopicFilter,
    tx: Sender<BusMessage>,
}

struct BusInner {
    subs: Mutex<Vec<SubEntry>>,
    next_handle: AtomicU64,
    closed: AtomicBool,
}

/// Cloneable handle to the shared bus.
#[derive(Clone)]
pub struct Bus {
    inner: Arc<BusInner>,
}

impl Default for Bus {
    fn default() -> Self {
        Self::new()
    }
}

impl Bus {
    pub fn new() -> Self {
        Bus {
            inner: Arc::new(BusInner {
                subs: Mutex::new(Vec::new()),
                next_handle: AtomicU64::new(1),
                closed: AtomicBool::new(false),
            }),
        }
    }

    /// Publishes to every matching subscription and returns the delivery
    /// count. The topic must be concrete.
    pub fn publish(&self, topic: &str, payload: impl Into<Vec<u8>>) -> Result<usize, BusError> {
        if self.inner.closed.load(Ordering::SeqCst) {
            return Err(BusError::Closed);
        }
        validate_topic(topic)?;
        let message = BusMessage {
            topic: Arc::from(topic),
            payload: Arc::from(payload.into()),
        };
        let mut subs = self.inner.subs.lock().expect("bus lock");
        let mut delivered = 0;
        // prune subscriptions whose receiver is gone while delivering
        subs.retain(|entry| {
            if entry.filter.matches(topic) {
                match entry.tx.send(message.clone()) {
                    Ok(()) => {
                        delivered += 1;
                        true
                    }
                    Err(_) => false,
                }
            } else {
                true
            }
        });
        Ok(delivered)
    }

    /// Creates a subscriber handle with one filter. Additional overlapping
    /// filters can be attached with [`Subscriber::add_filter`]; each filter
    /// delivers independently.
    pub fn subscribe(&self, filter: &str) -> Result<Subscriber, BusError> {
        let parsed: TopicFilter = filter.parse()?;
        let (tx, rx) = std::sync::mpsc::channel();
        let handle_id = self.inner.next_handle.fetch_add(1, Ordering::SeqCst);
        self.inner.subs.lock().expect("bus lock").push(SubEntry {
            handle_id,
            filter: parsed,
            tx: tx.clone(),
        });
        Ok(Subscriber {
            bus: Arc::downgrade(&self.inner),
            handle_id,
            tx,
            rx,
        })
    }

    /// Stops all future publishes. Already-delivered messages stay readable.
    pub fn shutdown(&self) {
        self.inner.closed.store(true, Ordering::SeqCst);
    }

    #[cfg(test)]
    fn subscription_count(&self) -> usize {
        self.inner.subs.lock().unwrap().len()
    }
}

/// A subscription handle: a FIFO stream of matching messages.
pub struct Subscriber {
    bus: Weak<BusInner>,
    handle_id: u64,
    tx: Sender<BusMessage>,
    rx: Receiver<BusMessage>,
}

impl Subscriber {
    /// Attaches another filter to this handle. A message matching several
    /// of the handle's filters is delivered once per matching filter.
    pub fn add_filter(&self, filter: &str) -> Result<(), BusError> {
        let parsed: TopicFilter = filter.parse()?;
        let inner = self.bus.upgrade().ok_or(BusError::Closed)?;
        inner.subs.lock().expect("bus lock").push(SubEntry {
            handle_id: self.handle_id,
            filter: parsed,
            tx: self.tx.clone(),
        });
        Ok(())
    }

    /// Non-blocking receive.
    pub fn try_recv(&self) -> Option<BusMessage> {
        match self.rx.try_recv() {
            Ok(m) => Some(m),
            Err(TryRecvError::Empty | TryRecvError::Disconnected) => None,
        }
    }

    /// Blocking receive with a timeout.
    pub fn recv_timeout(&self, timeout: Duration) -> Option<BusMessage> {
        self.rx.recv_timeout(timeout).ok()
    }

    /// Drains everything currently queued.
    pub fn drain(&self) -> Vec<BusMessage> {
        let mut out = Vec::new();
        while let Some(m) = self.try_recv() {
            out.push(m);
        }
        out
    }

    /// Detaches every filter of this handle; queued messages remain
    /// readable but nothing further is delivered.
    pub fn unsubscribe(&self) {
        if let Some(inner) = self.bus.upgrade() {
            inner
                .subs
                .lock()
                .expect("bus lock")
                .retain(|e| e.handle_id != self.handle_id);
        }
    }
}

impl Drop for Subscriber {
    fn drop(&mut self) {
        self.unsubscribe();
    }
}
