use serde::{Deserialize, Serialize};
use std::fmt;

/// An exact ratio of counts, kept unreduced so reports can show `3/6`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Share {
    pub part: u64,
    pub total: u64,
}

impl Share {
    pub fn new(part: u64, total: u64) -> Self {
        Share { part, total }
    }

    /// `None` for an empty total.
    pub fn value(&self) -> Option<f64> {
        (self.total > 0).then(|| self.part as f64 / self.total as f64)
    }

    /// Exact comparison `part/total < num/den` by cross-multiplication.
    pub fn lt_ratio(&self, num: u64, den: u64) -> bool {
        (self.part as u128) * (den as u128) < (num as u128) * (self.total as u128)
    }

    pub fn eq_ratio(&self, num: u64, den: u64) -> bool {
        (self.part as u128) * (den as u128) == (num as u128) * (self.total as u128)
    }
}

impl fmt::Display for Share {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.part, self.total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_comparisons() {
        let s = Share::new(3, 6);
        assert!(s.eq_ratio(1, 2));
        assert!(!s.lt_ratio(1, 2));
        assert!(Share::new(2, 9).lt_ratio(1, 3));
        assert_eq!(Share::new(0, 0).value(), None);
        assert_eq!(s.to_string(), "3/6");
    }
}
