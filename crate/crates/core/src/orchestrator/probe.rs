//! Periodic reachability probes and the two indicators computed from them.

use thiserror::Error;

use crate::sim::{SimDuration, SimTime};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProbeError {
    #[error("probe stream [{first}, {last}] does not span the window [{from}, {to}]")]
    ShortStream {
        first: SimTime,
        last: SimTime,
        from: SimTime,
        to: SimTime,
    },
    #[error("fewer than two probes answered")]
    TooFewAnswers,
    #[error("no answered probe after the outage starting at {since}")]
    RecoveryTimeout { since: SimTime },
}

/// Consecutive probes with the same outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbeRun {
    pub first: SimTime,
    pub last: SimTime,
    pub count: u64,
    pub answered: bool,
}

/// Run-length encoded probe outcomes at a fixed interval.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeTrace {
    pub interval: SimDuration,
    runs: Vec<ProbeRun>,
}

impl ProbeTrace {
    pub fn new(interval: SimDuration) -> Self {
        ProbeTrace {
            interval,
            runs: Vec::new(),
        }
    }

    /// Appends one outcome. Times must be non-decreasing.
    pub fn record(&mut self, time: SimTime, answered: bool) {
        if let Some(last) = self.runs.last_mut() {
            debug_assert!(time >= last.last);
            if last.answered == answered {
                last.last = time;
                last.count += 1;
                return;
            }
        }
        self.runs.push(ProbeRun {
            first: time,
            last: time,
            count: 1,
            answered,
        });
    }

    pub fn runs(&self) -> &[ProbeRun] {
        &self.runs
    }

    pub fn len(&self) -> u64 {
        self.runs.iter().map(|r| r.count).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn first(&self) -> Option<SimTime> {
        self.runs.first().map(|r| r.first)
    }

    pub fn last(&self) -> Option<SimTime> {
        self.runs.last().map(|r| r.last)
    }

    /// Outcome of the most recent probe.
    pub fn last_answered(&self) -> Option<bool> {
        self.runs.last().map(|r| r.answered)
    }

    /// Time since the first probe of the current unanswered streak.
    pub fn unanswered_for(&self, now: SimTime) -> SimDuration {
        match self.runs.last() {
            Some(r) if !r.answered => now.since(r.first),
            _ => SimDuration::ZERO,
        }
    }
}

/// Longest gap between consecutive answered probes, minus one interval.
/// The stream must cover `window`.
pub fn measure_downtime(trace: &ProbeTrace, window: (SimTime, SimTime)) -> Result<SimDuration, ProbeError> {
    let (from, to) = window;
    let (Some(first), Some(last)) = (trace.first(), trace.last()) else {
        return Err(ProbeError::TooFewAnswers);
    };
    if first > from || last < to {
        return Err(ProbeError::ShortStream { first, last, from, to });
    }
    let mut max_gap: Option<SimDuration> = None;
    let mut prev: Option<SimTime> = None;
    for r in trace.runs().iter().filter(|r| r.answered) {
        if r.count >= 2 {
            max_gap = max_gap.max(Some(trace.interval));
        }
        if let Some(p) = prev {
            max_gap = max_gap.max(Some(r.first.since(p)));
        }
        prev = Some(r.last);
    }
    max_gap
        .map(|g| g.saturating_sub(trace.interval))
        .ok_or(ProbeError::TooFewAnswers)
}

/// From the first missed probe at or after `after` to the next answered one.
/// Zero if nothing was missed.
pub fn measure_ue_srt(trace: &ProbeTrace, after: SimTime) -> Result<SimDuration, ProbeError> {
    let runs = trace.runs();
    let Some(i) = runs.iter().position(|r| !r.answered && r.last >= after) else {
        return Ok(SimDuration::ZERO);
    };
    let missed = &runs[i];
    let since = if missed.first >= after {
        missed.first
    } else {
        // First probe of this run at or after `after`.
        let k = (after.since(missed.first).as_micros()).div_ceil(trace.interval.as_micros().max(1));
        missed.first + SimDuration::from_micros(k * trace.interval.as_micros())
    };
    match runs[i + 1..].iter().find(|r| r.answered) {
        Some(r) => Ok(r.first.since(since)),
        None => Err(ProbeError::RecoveryTimeout { since }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(outcomes: &[bool]) -> ProbeTrace {
        let mut t = ProbeTrace::new(SimDuration::from_millis(1));
        for (i, &a) in outcomes.iter().enumerate() {
            t.record(SimTime::from_micros(i as u64 * 1000), a);
        }
        t
    }

    #[test]
    fn no_outage_is_zero() {
        let t = trace(&[true; 10]);
        let w = (SimTime::from_micros(0), SimTime::from_micros(9000));
        assert_eq!(measure_downtime(&t, w).unwrap(), SimDuration::ZERO);
        assert_eq!(measure_ue_srt(&t, SimTime::ZERO).unwrap(), SimDuration::ZERO);
    }

    #[test]
    fn outage_measured_from_answered_gap() {
        let mut o = vec![true; 5];
        o.extend([false; 7]);
        o.extend([true; 3]);
        let t = trace(&o);
        let w = (SimTime::from_micros(1000), SimTime::from_micros(13_000));
        assert_eq!(measure_downtime(&t, w).unwrap(), SimDuration::from_millis(7));
        assert_eq!(measure_ue_srt(&t, SimTime::ZERO).unwrap(), SimDuration::from_millis(7));
        assert_eq!(
            measure_ue_srt(&t, SimTime::from_micros(8000)).unwrap(),
            SimDuration::from_millis(4)
        );
        assert_eq!(t.len(), 15);
    }

    #[test]
    fn errors() {
        let t = trace(&[true, true, false, false]);
        assert!(matches!(
            measure_ue_srt(&t, SimTime::ZERO),
            Err(ProbeError::RecoveryTimeout { .. })
        ));
        assert!(matches!(
            measure_downtime(&t, (SimTime::ZERO, SimTime::from_micros(10_000))),
            Err(ProbeError::ShortStream { .. })
        ));
        assert_eq!(
            measure_downtime(&trace(&[false, true, false]), (SimTime::ZERO, SimTime::ZERO)),
            Err(ProbeError::TooFewAnswers)
        );
    }
}
