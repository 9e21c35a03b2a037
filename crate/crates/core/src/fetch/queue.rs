//! At-least-once task queue with visibility timeouts.
//!
//! A claimed task is leased, not removed: unless it is acked before the
//! visibility timeout elapses it becomes claimable again. Consumers must
//! therefore be idempotent.

use std::collections::{BTreeMap, VecDeque};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::onion::OnionAddress;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchTask {
    pub address: OnionAddress,
    pub enqueued_at: DateTime<Utc>,
    pub attempts: u32,
}

impl FetchTask {
    pub fn new(address: OnionAddress, enqueued_at: DateTime<Utc>) -> Self {
        Self { address, enqueued_at, attempts: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LeaseId(u64);

#[derive(Debug, Clone)]
pub struct Lease {
    pub id: LeaseId,
    pub task: FetchTask,
}

#[derive(Debug)]
struct Leased {
    task: FetchTask,
    deadline: Instant,
}

#[derive(Debug, Default)]
struct Inner {
    ready: VecDeque<FetchTask>,
    delayed: Vec<(Instant, FetchTask)>,
    leased: BTreeMap<LeaseId, Leased>,
    next_id: u64,
}

impl Inner {
    fn promote(&mut self, now: Instant) {
        let expired: Vec<LeaseId> =
            self.leased.iter().filter(|(_, l)| l.deadline <= now).map(|(id, _)| *id).collect();
        for id in expired {
            let l = self.leased.remove(&id).expect("present");
            self.ready.push_back(l.task);
        }
        if !self.delayed.is_empty() {
            let mut keep = Vec::with_capacity(self.delayed.len());
            for (at, task) in self.delayed.drain(..) {
                if at <= now {
                    self.ready.push_back(task);
                } else {
                    keep.push((at, task));
                }
            }
            self.delayed = keep;
        }
    }
}

#[derive(Debug)]
pub struct FetchQueue {
    inner: Mutex<Inner>,
    visibility_timeout: Duration,
}

impl Default for FetchQueue {
    fn default() -> Self {
        Self::new(Duration::from_secs(300))
    }
}

impl FetchQueue {
    pub fn new(visibility_timeout: Duration) -> Self {
        Self { inner: Mutex::new(Inner::default()), visibility_timeout }
    }

    pub fn push(&self, task: FetchTask) {
        self.inner.lock().ready.push_back(task);
    }

    pub fn claim(&self) -> Option<Lease> {
        self.claim_at(Instant::now())
    }

    /// Leases the next ready task. No two outstanding leases refer to the same
    /// queued entry.
    pub fn claim_at(&self, now: Instant) -> Option<Lease> {
        let mut inner = self.inner.lock();
        inner.promote(now);
        let task = inner.ready.pop_front()?;
        let id = LeaseId(inner.next_id);
        inner.next_id += 1;
        let deadline = now + self.visibility_timeout;
        inner.leased.insert(id, Leased { task: task.clone(), deadline });
        Some(Lease { id, task })
    }

    /// Completes a lease. Returns false if the lease had already expired.
    pub fn ack(&self, id: LeaseId) -> bool {
        self.inner.lock().leased.remove(&id).is_some()
    }

    /// Returns a leased task to the queue after `delay`, with its attempt count bumped.
    pub fn retry(&self, id: LeaseId, delay: Duration) -> bool {
        self.retry_at(id, delay, Instant::now())
    }

    pub fn retry_at(&self, id: LeaseId, delay: Duration, now: Instant) -> bool {
        let mut inner = self.inner.lock();
        match inner.leased.remove(&id) {
            Some(mut l) => {
                l.task.attempts += 1;
                if delay.is_zero() {
                    inner.ready.push_back(l.task);
                } else {
                    inner.delayed.push((now + delay, l.task));
                }
                true
            }
            None => false,
        }
    }

    /// Queued, delayed and leased tasks.
    pub fn outstanding(&self) -> usize {
        let inner = self.inner.lock();
        inner.ready.len() + inner.delayed.len() + inner.leased.len()
    }

    pub fn is_idle(&self) -> bool {
        self.outstanding() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(seed: u8) -> FetchTask {
        FetchTask::new(OnionAddress::from_pubkey([seed; 32]), Utc::now())
    }

    #[test]
    fn claim_ack_drains() {
        let q = FetchQueue::default();
        q.push(task(1));
        q.push(task(2));
        let a = q.claim().unwrap();
        let b = q.claim().unwrap();
        assert_ne!(a.task, b.task);
        assert!(q.claim().is_none());
        assert!(q.ack(a.id));
        assert!(!q.ack(a.id));
        assert_eq!(q.outstanding(), 1);
        q.ack(b.id);
        assert!(q.is_idle());
    }

    #[test]
    fn unacked_lease_reappears_after_visibility_timeout() {
        let q = FetchQueue::new(Duration::from_secs(10));
        q.push(task(3));
        let t0 = Instant::now();
        let lease = q.claim_at(t0).unwrap();
        assert!(q.claim_at(t0 + Duration::from_secs(5)).is_none());
        let again = q.claim_at(t0 + Duration::from_secs(11)).unwrap();
        assert_eq!(again.task, lease.task);
        // the stale lease can no longer be acked
        assert!(!q.ack(lease.id));
        assert!(q.ack(again.id));
    }

    #[test]
    fn retry_respects_delay_and_counts_attempts() {
        let q = FetchQueue::default();
        q.push(task(4));
        let t0 = Instant::now();
        let lease = q.claim_at(t0).unwrap();
        q.retry_at(lease.id, Duration::from_secs(30), t0);
        assert!(q.claim_at(t0 + Duration::from_secs(29)).is_none());
        let again = q.claim_at(t0 + Duration::from_secs(30)).unwrap();
        assert_eq!(again.task.attempts, 1);
    }
}
