//! Size-or-timeout batch launching.

use std::collections::VecDeque;
use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPolicy {
    pub capacity: usize,
    #[serde(with = "millis")]
    pub max_wait: Duration,
}

impl Default for BatchPolicy {
    fn default() -> Self {
        Self {
            capacity: 16,
            max_wait: Duration::from_millis(50),
        }
    }
}

impl BatchPolicy {
    pub fn new(capacity: usize, max_wait: Duration) -> Result<Self, String> {
        if capacity == 0 {
            return Err("batch capacity must be at least 1".into());
        }
        Ok(Self { capacity, max_wait })
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchDecision {
    /// Take this many items from the front of the queue now.
    Launch(usize),
    /// Nothing to do before this instant unless another item arrives.
    WaitUntil(Duration),
    Idle,
}

/// `enqueued_at` holds the arrival time of every queued item, oldest first.
pub fn batch_collect(enqueued_at: &[Duration], policy: &BatchPolicy, now: Duration) -> BatchDecision {
    let Some(&oldest) = enqueued_at.first() else {
        return BatchDecision::Idle;
    };
    let deadline = oldest + policy.max_wait;
    if enqueued_at.len() >= policy.capacity || now >= deadline {
        BatchDecision::Launch(enqueued_at.len().min(policy.capacity))
    } else {
        BatchDecision::WaitUntil(deadline)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LaunchEvent {
    pub at: Duration,
    pub size: usize,
}

/// Event-driven replay of the policy over an arrival schedule. Launches do
/// not block the queue, and the stream is treated as open: trailing items
/// leave on their timeout rather than on end of input.
pub fn simulate_batching(arrivals: &[Duration], policy: &BatchPolicy) -> Vec<LaunchEvent> {
    let mut arrivals = arrivals.to_vec();
    arrivals.sort();
    let mut next = 0;
    let mut queue: VecDeque<Duration> = VecDeque::new();
    let mut now = Duration::ZERO;
    let mut events = Vec::new();
    loop {
        while next < arrivals.len() && arrivals[next] <= now {
            queue.push_back(arrivals[next]);
            next += 1;
        }
        let pending = arrivals.get(next).copied();
        match batch_collect(queue.make_contiguous(), policy, now) {
            BatchDecision::Launch(n) => {
                queue.drain(..n);
                events.push(LaunchEvent { at: now, size: n });
            }
            BatchDecision::WaitUntil(t) => now = pending.map_or(t, |a| a.min(t)),
            BatchDecision::Idle => match pending {
                Some(a) => now = a,
                None => break,
            },
        }
    }
    events
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ms(v: u64) -> Duration {
        Duration::from_millis(v)
    }

    #[test]
    fn decision_rules() {
        let p = BatchPolicy::new(4, ms(10)).unwrap();
        assert_eq!(batch_collect(&[], &p, ms(1000)), BatchDecision::Idle);
        assert_eq!(batch_collect(&[ms(0); 3], &p, ms(0)), BatchDecision::WaitUntil(ms(10)));
        assert_eq!(batch_collect(&[ms(0); 3], &p, ms(10)), BatchDecision::Launch(3));
        assert_eq!(batch_collect(&[ms(0); 5], &p, ms(0)), BatchDecision::Launch(4));
        assert!(BatchPolicy::new(0, ms(1)).is_err());
    }

    #[test]
    fn scripted_scenarios() {
        let p = BatchPolicy::new(4, ms(10)).unwrap();
        assert_eq!(simulate_batching(&[ms(0); 3], &p), vec![LaunchEvent { at: ms(10), size: 3 }]);
        assert_eq!(
            simulate_batching(&[ms(0); 5], &p),
            vec![LaunchEvent { at: ms(0), size: 4 }, LaunchEvent { at: ms(10), size: 1 }]
        );
    }

    #[test]
    fn staggered_arrivals() {
        let p = BatchPolicy::new(3, ms(10)).unwrap();
        let ev = simulate_batching(&[ms(0), ms(4), ms(8), ms(9), ms(30)], &p);
        assert_eq!(
            ev,
            vec![
                LaunchEvent { at: ms(8), size: 3 },
                LaunchEvent { at: ms(19), size: 1 },
                LaunchEvent { at: ms(40), size: 1 },
            ]
        );
    }

    #[test]
    fn zero_wait_launches_each_arrival() {
        let p = BatchPolicy::new(8, Duration::ZERO).unwrap();
        let ev = simulate_batching(&[ms(1), ms(2), ms(2)], &p);
        assert_eq!(ev, vec![LaunchEvent { at: ms(1), size: 1 }, LaunchEvent { at: ms(2), size: 2 }]);
    }
}
