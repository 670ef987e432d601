//! Per-cycle trace events.

use core::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    /// The PE arrays.
    Pe,
    /// The selective adder.
    Stage3,
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Unit::Pe => "pe",
            Unit::Stage3 => "stage3",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceOp {
    /// Conv multiply of output channel `o` with kernel tap `(r, s)`.
    Mac { o: usize, r: usize, s: usize, arrays: usize },
    /// Attention multiply of a window at `(y0, x0)`.
    Attend { y0: usize, x0: usize, arrays: usize },
    /// Empty issue slot.
    Bubble,
    /// Partial sums merged into the buffer.
    Accumulate { entries: usize, finished: usize },
    /// Attention products passed through.
    PassThrough { values: usize },
}

impl fmt::Display for TraceOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            TraceOp::Mac { o, r, s, arrays } => write!(f, "mac o={o} r={r} s={s} arrays={arrays}"),
            TraceOp::Attend { y0, x0, arrays } => write!(f, "attend y0={y0} x0={x0} arrays={arrays}"),
            TraceOp::Bubble => f.write_str("bubble"),
            TraceOp::Accumulate { entries, finished } => {
                write!(f, "accumulate entries={entries} finished={finished}")
            }
            TraceOp::PassThrough { values } => write!(f, "pass values={values}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceEvent {
    pub cycle: u64,
    pub unit: Unit,
    pub op: TraceOp,
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.cycle, self.unit, self.op)
    }
}

/// Receiver of trace events.
pub trait Tracer {
    fn event(&mut self, ev: TraceEvent);
}

impl<F: FnMut(TraceEvent)> Tracer for F {
    fn event(&mut self, ev: TraceEvent) {
        self(ev)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    #[test]
    fn event_line_format() {
        let ev = TraceEvent {
            cycle: 12,
            unit: Unit::Pe,
            op: TraceOp::Mac {
                o: 3,
                r: 1,
                s: 2,
                arrays: 32,
            },
        };
        assert_eq!(ev.to_string(), "12,pe,mac o=3 r=1 s=2 arrays=32");
    }
}
