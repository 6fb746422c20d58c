//! Deterministic corruption of report streams.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FaultError {
    #[error("fault position {position} (window {window}) is outside a stream of length {len}")]
    OutOfRange {
        position: usize,
        window: usize,
        len: usize,
    },
    #[error("invalid fault `{0}`: expected drop@K, duplicate@K or reorder@K[:W]")]
    Syntax(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaultKind {
    Drop,
    Duplicate,
    /// Reverse `window` consecutive items starting at the position.
    Reorder { window: usize },
}

/// A fault at a 0-based position of a stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Fault {
    pub kind: FaultKind,
    pub position: usize,
}

impl Fault {
    pub fn drop_at(position: usize) -> Self {
        Fault { kind: FaultKind::Drop, position }
    }

    pub fn duplicate_at(position: usize) -> Self {
        Fault { kind: FaultKind::Duplicate, position }
    }

    pub fn reorder_at(position: usize, window: usize) -> Self {
        Fault { kind: FaultKind::Reorder { window }, position }
    }

    fn span(&self) -> usize {
        match self.kind {
            FaultKind::Reorder { window } => window,
            _ => 1,
        }
    }
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            FaultKind::Drop => write!(f, "drop@{}", self.position),
            FaultKind::Duplicate => write!(f, "duplicate@{}", self.position),
            FaultKind::Reorder { window } => write!(f, "reorder@{}:{window}", self.position),
        }
    }
}

impl FromStr for Fault {
    type Err = FaultError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || FaultError::Syntax(s.to_string());
        let (kind, pos) = s.split_once('@').ok_or_else(bad)?;
        let (pos, window) = match pos.split_once(':') {
            Some((p, w)) => (p, Some(w.parse::<usize>().map_err(|_| bad())?)),
            None => (pos, None),
        };
        let position = pos.parse::<usize>().map_err(|_| bad())?;
        match (kind, window) {
            ("drop", None) => Ok(Fault::drop_at(position)),
            ("duplicate", None) => Ok(Fault::duplicate_at(position)),
            ("reorder", w) => {
                let window = w.unwrap_or(2);
                if window < 2 {
                    return Err(bad());
                }
                Ok(Fault::reorder_at(position, window))
            }
            _ => Err(bad()),
        }
    }
}

pub fn inject_fault<T: Clone>(fault: Fault, mut stream: Vec<T>) -> Result<Vec<T>, FaultError> {
    let (position, window, len) = (fault.position, fault.span(), stream.len());
    if position.checked_add(window).map_or(true, |end| end > len) {
        return Err(FaultError::OutOfRange { position, window, len });
    }
    match fault.kind {
        FaultKind::Drop => {
            stream.remove(position);
        }
        FaultKind::Duplicate => {
            let item = stream[position].clone();
            stream.insert(position + 1, item);
        }
        FaultKind::Reorder { window } => stream[position..position + window].reverse(),
    }
    Ok(stream)
}

/// Streaming form of [`inject_fault`] for a live sender: push items in order,
/// send whatever comes back, then drain with [`finish`](Self::finish).
#[derive(Debug)]
pub struct FaultFilter<T> {
    fault: Fault,
    seen: usize,
    held: VecDeque<T>,
}

impl<T: Clone> FaultFilter<T> {
    pub fn new(fault: Fault) -> Self {
        FaultFilter {
            fault,
            seen: 0,
            held: VecDeque::new(),
        }
    }

    pub fn push(&mut self, item: T) -> Vec<T> {
        let i = self.seen;
        self.seen += 1;
        let pos = self.fault.position;
        match self.fault.kind {
            FaultKind::Drop if i == pos => vec![],
            FaultKind::Duplicate if i == pos => vec![item.clone(), item],
            FaultKind::Reorder { window } if (pos..pos + window).contains(&i) => {
                self.held.push_front(item);
                if i + 1 == pos + window {
                    self.held.drain(..).collect()
                } else {
                    vec![]
                }
            }
            _ => vec![item],
        }
    }

    /// Items still held by an incomplete reorder window, in arrival order.
    pub fn finish(&mut self) -> Vec<T> {
        self.held.drain(..).rev().collect()
    }

    /// Whether the fault position was reached in full.
    pub fn applied(&self) -> bool {
        self.seen >= self.fault.position + self.fault.span()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let s: Vec<u32> = (0..6).collect();
        assert_eq!(inject_fault(Fault::drop_at(2), s.clone()).unwrap(), vec![0, 1, 3, 4, 5]);
        assert_eq!(inject_fault(Fault::duplicate_at(5), s.clone()).unwrap(), vec![0, 1, 2, 3, 4, 5, 5]);
        assert_eq!(inject_fault(Fault::reorder_at(1, 3), s.clone()).unwrap(), vec![0, 3, 2, 1, 4, 5]);
        assert_eq!(
            inject_fault(Fault::drop_at(6), s.clone()),
            Err(FaultError::OutOfRange { position: 6, window: 1, len: 6 })
        );
        assert!(inject_fault(Fault::reorder_at(5, 2), s).is_err());
    }

    #[test]
    fn parse() {
        assert_eq!("drop@500000".parse::<Fault>().unwrap(), Fault::drop_at(500_000));
        assert_eq!("reorder@3".parse::<Fault>().unwrap(), Fault::reorder_at(3, 2));
        assert_eq!("reorder@3:4".parse::<Fault>().unwrap().to_string(), "reorder@3:4");
        for bad in ["drop", "drop@x", "drop@1:2", "swap@1", "reorder@1:1"] {
            assert!(bad.parse::<Fault>().is_err(), "{bad}");
        }
    }

    fn any_fault(len: usize) -> impl Strategy<Value = Fault> {
        (0..len, 0..3u8, 2..5usize).prop_map(|(p, k, w)| match k {
            0 => Fault::drop_at(p),
            1 => Fault::duplicate_at(p),
            _ => Fault::reorder_at(p, w),
        })
    }

    proptest! {
        #[test]
        fn streaming_filter_matches_batch(fault in any_fault(40), len in 1..40usize) {
            let input: Vec<usize> = (0..len).collect();
            let mut f = FaultFilter::new(fault);
            let mut out: Vec<usize> = input.iter().flat_map(|&x| f.push(x)).collect();
            out.extend(f.finish());
            match inject_fault(fault, input.clone()) {
                Ok(batch) => {
                    prop_assert!(f.applied());
                    prop_assert_eq!(out, batch);
                }
                Err(_) => {
                    prop_assert!(!f.applied());
                    prop_assert_eq!(out, input);
                }
            }
        }
    }
}
