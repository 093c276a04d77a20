use serde::{Deserialize, Serialize};

use super::ModelError;

/// Half-open range `[start, end)` over a series index. `None` bounds are unbounded.
///
/// Units follow the series' index kind: nanoseconds since the Unix epoch for time-indexed
/// series, millimetres for length-indexed ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct IndexRange {
    #[serde(default)]
    pub start: Option<i64>,
    #[serde(default)]
    pub end: Option<i64>,
}

impl IndexRange {
    pub const UNBOUNDED: IndexRange = IndexRange { start: None, end: None };

    /// Bounded range; fails when `start >= end`.
    pub fn new(start: i64, end: i64) -> Result<Self, ModelError> {
        Self::from_bounds(Some(start), Some(end))
    }

    pub fn from_bounds(start: Option<i64>, end: Option<i64>) -> Result<Self, ModelError> {
        let range = IndexRange { start, end };
        range.validate()?;
        Ok(range)
    }

    pub fn from(start: i64) -> Self {
        IndexRange { start: Some(start), end: None }
    }

    pub fn until(end: i64) -> Self {
        IndexRange { start: None, end: Some(end) }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match (self.start, self.end) {
            (Some(s), Some(e)) if s >= e => Err(ModelError::InvalidRange { start: s, end: e }),
            _ => Ok(()),
        }
    }

    pub fn lower(&self) -> i64 {
        self.start.unwrap_or(i64::MIN)
    }

    /// Exclusive upper bound; `i64::MAX` stands for unbounded.
    pub fn upper(&self) -> i64 {
        self.end.unwrap_or(i64::MAX)
    }

    pub fn contains(&self, index: i64) -> bool {
        index >= self.lower() && (self.end.is_none() || index < self.upper())
    }

    pub fn is_empty(&self) -> bool {
        matches!((self.start, self.end), (Some(s), Some(e)) if s >= e)
    }

    /// Intersection; the result may be empty (see [`IndexRange::is_empty`]).
    pub fn intersect(&self, other: &IndexRange) -> IndexRange {
        let start = match (self.start, other.start) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        };
        let end = match (self.end, other.end) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        IndexRange { start, end }
    }

    pub fn overlaps(&self, other: &IndexRange) -> bool {
        !self.intersect(other).is_empty()
    }

    /// `self ⊆ other`.
    pub fn is_within(&self, other: &IndexRange) -> bool {
        self.lower() >= other.lower() && self.upper() <= other.upper()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invalid_bounds() {
        assert!(IndexRange::new(5, 5).is_err());
        assert!(IndexRange::new(6, 5).is_err());
        assert!(IndexRange::new(5, 6).is_ok());
    }

    #[test]
    fn intersection_with_unbounded() {
        let a = IndexRange::from(10);
        let b = IndexRange::until(20);
        assert_eq!(a.intersect(&b), IndexRange::new(10, 20).unwrap());
        assert_eq!(IndexRange::UNBOUNDED.intersect(&a), a);
        let disjoint = IndexRange::new(0, 5).unwrap().intersect(&IndexRange::new(5, 9).unwrap());
        assert!(disjoint.is_empty());
    }

    #[test]
    fn half_open_contains() {
        let r = IndexRange::new(0, 10).unwrap();
        assert!(r.contains(0));
        assert!(!r.contains(10));
        assert!(IndexRange::UNBOUNDED.contains(i64::MAX));
    }
}
