//! Spreads reshuffle jobs over time steps.
//!
//! Every partition read or write is one time step. A write computes the
//! level `λ` its reshuffle must reach from the partition's write counter and
//! queues (or merges into) that partition's job; each step then spends at
//! most `⌊w·log₂ S⌋` block transfers on the job queue, pausing jobs midway.

use std::collections::VecDeque;

use crate::partition::{Engine, Job, Locations, Want};
use crate::Result;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AmortizerStats {
    pub steps: u64,
    pub max_step_work: u64,
    /// Steps whose scheduled work exceeded the budget (never expected).
    pub budget_violations: u64,
    pub jobs_completed: u64,
    pub merges: u64,
    pub max_latency: u64,
    /// Jobs that took longer than `τ` steps.
    pub latency_violations: u64,
    pub max_queue_len: usize,
    /// Jobs finished out of budget because a level ran out of dummies.
    pub forced_completions: u64,
    pub forced_work: u64,
    /// Most blocks held in client memory by queued and running jobs.
    pub pending_hw: u64,
    /// A queued job not smaller than the running job of its partition.
    pub order_violations: u64,
}

pub struct Amortizer {
    queue: VecDeque<Job>,
    current: Option<Job>,
    counters: Vec<u64>,
    modulus: u64,
    top: u8,
    budget: u64,
    tau: u64,
    step: u64,
    step_log: Option<Vec<u64>>,
    pub stats: AmortizerStats,
}

impl Amortizer {
    /// `initial` holds each partition's setup fill pattern over the non-top levels.
    pub fn new(levels: u8, capacity: u32, work_factor: f64, tau: u64, initial: Vec<u64>) -> Amortizer {
        let top = levels - 1;
        let modulus = 1u64 << top;
        let budget = (work_factor * (capacity.max(2) as f64).log2()).floor().max(1.0) as u64;
        Amortizer {
            queue: VecDeque::new(),
            current: None,
            counters: initial.into_iter().map(|c| c % modulus).collect(),
            modulus,
            top,
            budget,
            tau,
            step: 0,
            step_log: None,
            stats: AmortizerStats::default(),
        }
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn tau(&self) -> u64 {
        self.tau
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn counter(&self, p: u32) -> u64 {
        self.counters[p as usize]
    }

    pub fn record_steps(&mut self) {
        self.step_log.get_or_insert_with(Vec::new);
    }

    pub fn step_log(&self) -> Option<&[u64]> {
        self.step_log.as_deref()
    }

    /// `λ = min(trailing_zeros(C_p + 1), L − 1)`.
    pub fn lambda(&self, p: u32) -> u8 {
        ((self.counters[p as usize] + 1).trailing_zeros() as u8).min(self.top)
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn jobs(&self) -> impl Iterator<Item = &Job> {
        self.current.iter().chain(self.queue.iter())
    }

    /// Records a write to `p`, merging into its queued job if there is one.
    pub fn enqueue_write(&mut self, p: u32, item: Option<(u64, Vec<u8>)>) {
        let lambda = self.lambda(p);
        self.counters[p as usize] = (self.counters[p as usize] + 1) % self.modulus;
        if let Some(job) = self.queue.iter_mut().find(|j| j.partition == p) {
            job.target = job.target.max(lambda);
            job.beta.extend(item);
            self.stats.merges += 1;
        } else {
            if let Some(cur) = self.current.as_ref().filter(|j| j.partition == p) {
                if lambda >= cur.target && lambda < self.top {
                    self.stats.order_violations += 1;
                }
            }
            self.queue.push_back(Job::new(p, lambda, item.into_iter().collect(), self.step));
        }
        self.stats.max_queue_len = self.stats.max_queue_len.max(self.queue.len());
        self.note_pending();
    }

    fn note_pending(&mut self) {
        let held: usize = self.jobs().map(|j| j.buffered()).sum();
        self.stats.pending_hw = self.stats.pending_hw.max(held as u64);
    }

    /// Blocks of `p` that wait in a job and can still be served from memory.
    pub fn take_pending(&mut self, p: u32, id: u64) -> Option<Vec<u8>> {
        if let Some(job) = self.queue.iter_mut().find(|j| j.partition == p) {
            if let Some(v) = job.take_beta(id) {
                return Some(v);
            }
        }
        self.current.as_mut().filter(|j| j.partition == p).and_then(|j| j.take_beta(id))
    }

    /// The running job, if it belongs to `p`.
    pub fn current_for(&mut self, p: u32) -> Option<&mut Job> {
        self.current.as_mut().filter(|j| j.partition == p)
    }

    pub fn has_job(&self, p: u32) -> bool {
        self.jobs().any(|j| j.partition == p)
    }

    /// Highest level a not-yet-started job of `p` will reshuffle.
    pub fn queued_target(&self, p: u32) -> Option<u8> {
        self.jobs().filter(|j| j.partition == p && j.is_pending()).map(|j| j.target).max()
    }

    /// Ends the current time step, spending its budget on the queue.
    pub(crate) fn run_step(&mut self, engine: &mut Engine, locs: &mut dyn Locations) -> Result<u64> {
        let mut left = self.budget;
        let mut work = 0;
        loop {
            if self.current.is_none() {
                match self.queue.pop_front() {
                    Some(job) => self.current = Some(job),
                    None => break,
                }
            }
            let job = self.current.as_mut().unwrap();
            let spent = engine.advance(job, left, locs)?;
            left -= spent;
            work += spent;
            if !job.is_done() {
                break;
            }
            let job = self.current.take().unwrap();
            self.complete(&job);
        }
        self.note_pending();
        self.step += 1;
        self.stats.steps += 1;
        self.stats.max_step_work = self.stats.max_step_work.max(work);
        if work > self.budget {
            self.stats.budget_violations += 1;
        }
        if let Some(log) = &mut self.step_log {
            log.push(work);
        }
        Ok(work)
    }

    fn complete(&mut self, job: &Job) {
        let latency = self.step - job.enqueued;
        self.stats.jobs_completed += 1;
        self.stats.max_latency = self.stats.max_latency.max(latency);
        if latency > self.tau {
            self.stats.latency_violations += 1;
        }
    }

    /// Finishes every job of `p` immediately. `keep` names a block whose
    /// position was already reassigned but that must be handed back if a
    /// job moves it.
    pub(crate) fn force_partition(
        &mut self,
        p: u32,
        keep: Option<Want>,
        engine: &mut Engine,
        locs: &mut dyn Locations,
    ) -> Result<Option<Vec<u8>>> {
        let mut extracted = None;
        let mut pending = Vec::new();
        if self.current.as_ref().is_some_and(|j| j.partition == p) {
            pending.push(self.current.take().unwrap());
        }
        if let Some(pos) = self.queue.iter().position(|j| j.partition == p) {
            pending.push(self.queue.remove(pos).unwrap());
        }
        for mut job in pending {
            if extracted.is_none() && job.beta_visible() {
                job.keep = keep;
            }
            let spent = engine.run_to_completion(&mut job, locs)?;
            self.stats.forced_completions += 1;
            self.stats.forced_work += spent;
            extracted = extracted.or(job.extracted.take());
            self.complete(&job);
        }
        Ok(extracted)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn amortizer(levels: u8) -> Amortizer {
        Amortizer::new(levels, 352, 16.0, 256, vec![0; 4])
    }

    #[test]
    fn budget_is_w_log_s() {
        // 16·log2(352) = 135.4
        assert_eq!(amortizer(9).budget(), 135);
    }

    #[test]
    fn lambda_follows_the_binary_counter() {
        let mut a = amortizer(9);
        assert_eq!(a.lambda(0), 0);
        for _ in 0..7 {
            a.enqueue_write(0, None);
        }
        assert_eq!(a.lambda(0), 3);
        let mut b = Amortizer::new(3, 10, 16.0, 4, vec![3; 1]);
        // counter 3 of modulus 4: next write reaches the top
        assert_eq!(b.lambda(0), 2);
        b.enqueue_write(0, None);
        assert_eq!(b.counter(0), 0);
        assert_eq!(b.lambda(0), 0);
    }

    #[test]
    fn queued_jobs_merge() {
        let mut a = amortizer(9);
        a.counters[1] = 3;
        a.enqueue_write(1, Some((5, vec![])));
        a.enqueue_write(1, Some((6, vec![])));
        assert_eq!(a.queue_len(), 1);
        let job = a.jobs().next().unwrap();
        assert_eq!(job.target, 2);
        assert_eq!(job.beta.iter().map(|b| b.0).collect::<Vec<_>>(), vec![5, 6]);
        assert_eq!(a.take_pending(1, 6), Some(vec![]));
        assert_eq!(a.take_pending(1, 6), None);
        assert_eq!(a.stats.merges, 1);
    }
}
