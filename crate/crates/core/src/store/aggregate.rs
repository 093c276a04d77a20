use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::{Scalar, ValueType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregateFunction {
    Mean,
    Min,
    Max,
    Sum,
    Count,
    First,
    Last,
}

impl AggregateFunction {
    pub const ALL: [AggregateFunction; 7] = [
        AggregateFunction::Mean,
        AggregateFunction::Min,
        AggregateFunction::Max,
        AggregateFunction::Sum,
        AggregateFunction::Count,
        AggregateFunction::First,
        AggregateFunction::Last,
    ];

    /// Stored statistics from which this function can be recomputed exactly.
    pub fn required_stats(self) -> &'static [Stat] {
        match self {
            AggregateFunction::Mean => &[Stat::Sum, Stat::Count],
            AggregateFunction::Min => &[Stat::Min],
            AggregateFunction::Max => &[Stat::Max],
            AggregateFunction::Sum => &[Stat::Sum],
            AggregateFunction::Count => &[Stat::Count],
            AggregateFunction::First => &[Stat::First],
            AggregateFunction::Last => &[Stat::Last],
        }
    }

    /// Whether the function yields a value for channels of this type.
    pub fn applies_to(self, ty: ValueType) -> bool {
        match self {
            AggregateFunction::Count | AggregateFunction::First | AggregateFunction::Last => true,
            _ => ty.is_numeric(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AggregateFunction::Mean => "mean",
            AggregateFunction::Min => "min",
            AggregateFunction::Max => "max",
            AggregateFunction::Sum => "sum",
            AggregateFunction::Count => "count",
            AggregateFunction::First => "first",
            AggregateFunction::Last => "last",
        }
    }
}

impl fmt::Display for AggregateFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AggregateFunction {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL.into_iter().find(|f| f.name() == s).ok_or_else(|| format!("unknown aggregate function {s:?}"))
    }
}

/// A statistic persisted in a rollup series. Every function is composable from these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stat {
    Sum,
    Count,
    Min,
    Max,
    First,
    Last,
}

impl Stat {
    pub const ALL: [Stat; 6] = [Stat::Sum, Stat::Count, Stat::Min, Stat::Max, Stat::First, Stat::Last];

    pub fn name(self) -> &'static str {
        match self {
            Stat::Sum => "sum",
            Stat::Count => "count",
            Stat::Min => "min",
            Stat::Max => "max",
            Stat::First => "first",
            Stat::Last => "last",
        }
    }

    pub fn applies_to(self, ty: ValueType) -> bool {
        matches!(self, Stat::Count | Stat::First | Stat::Last) || ty.is_numeric()
    }

    /// Column type of this statistic for a source channel of type `ty`.
    pub fn value_type(self, ty: ValueType) -> ValueType {
        match self {
            Stat::Count => ValueType::Int64,
            _ => ty,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Sum {
    Float(f64),
    Int(i128),
}

/// Running aggregate over the non-null values of one channel. Carries sum and count
/// separately so means re-aggregate exactly.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Accumulator {
    count: u64,
    sum: Option<Sum>,
    min: Option<Scalar>,
    max: Option<Scalar>,
    first: Option<Scalar>,
    last: Option<Scalar>,
}

fn compare(a: &Scalar, b: &Scalar) -> Option<Ordering> {
    match (a, b) {
        (Scalar::Int(x), Scalar::Int(y)) => Some(x.cmp(y)),
        (Scalar::Float(x), Scalar::Float(y)) => x.partial_cmp(y),
        _ => None,
    }
}

fn add_sum(a: Option<Sum>, b: Sum) -> Option<Sum> {
    Some(match (a, b) {
        (None, b) => b,
        (Some(Sum::Float(x)), Sum::Float(y)) => Sum::Float(x + y),
        (Some(Sum::Int(x)), Sum::Int(y)) => Sum::Int(x + y),
        (Some(Sum::Float(x)), Sum::Int(y)) => Sum::Float(x + y as f64),
        (Some(Sum::Int(x)), Sum::Float(y)) => Sum::Float(x as f64 + y),
    })
}

impl Accumulator {
    pub fn count(&self) -> u64 {
        self.count
    }

    /// No value seen and no statistic known.
    pub fn is_empty(&self) -> bool {
        self.count == 0
            && self.sum.is_none()
            && self.min.is_none()
            && self.max.is_none()
            && self.first.is_none()
            && self.last.is_none()
    }

    pub fn add(&mut self, value: &Scalar) {
        self.count += 1;
        match value {
            Scalar::Float(v) => self.sum = add_sum(self.sum, Sum::Float(*v)),
            Scalar::Int(v) => self.sum = add_sum(self.sum, Sum::Int(*v as i128)),
            _ => {}
        }
        if matches!(value, Scalar::Float(_) | Scalar::Int(_)) {
            if self.min.as_ref().is_none_or(|m| compare(value, m) == Some(Ordering::Less)) {
                self.min = Some(value.clone());
            }
            if self.max.as_ref().is_none_or(|m| compare(value, m) == Some(Ordering::Greater)) {
                self.max = Some(value.clone());
            }
        }
        if self.first.is_none() {
            self.first = Some(value.clone());
        }
        self.last = Some(value.clone());
    }

    /// Combine with an accumulator covering later indices.
    pub fn merge(&mut self, later: &Accumulator) {
        self.count += later.count;
        if let Some(s) = later.sum {
            self.sum = add_sum(self.sum, s);
        }
        if let Some(m) = &later.min {
            if self.min.as_ref().is_none_or(|x| compare(m, x) == Some(Ordering::Less)) {
                self.min = Some(m.clone());
            }
        }
        if let Some(m) = &later.max {
            if self.max.as_ref().is_none_or(|x| compare(m, x) == Some(Ordering::Greater)) {
                self.max = Some(m.clone());
            }
        }
        if self.first.is_none() {
            self.first = later.first.clone();
        }
        if later.last.is_some() {
            self.last = later.last.clone();
        }
    }

    fn sum_scalar(&self) -> Option<Scalar> {
        self.sum.map(|s| match s {
            Sum::Float(v) => Scalar::Float(v),
            Sum::Int(v) => Scalar::Int(v.clamp(i64::MIN as i128, i64::MAX as i128) as i64),
        })
    }

    pub fn finish(&self, f: AggregateFunction) -> Option<Scalar> {
        match f {
            AggregateFunction::Count => Some(Scalar::Int(self.count as i64)),
            AggregateFunction::Sum => self.sum_scalar(),
            AggregateFunction::Mean => {
                if self.count == 0 {
                    return None;
                }
                let total = match self.sum? {
                    Sum::Float(v) => v,
                    Sum::Int(v) => v as f64,
                };
                Some(Scalar::Float(total / self.count as f64))
            }
            AggregateFunction::Min => self.min.clone(),
            AggregateFunction::Max => self.max.clone(),
            AggregateFunction::First => self.first.clone(),
            AggregateFunction::Last => self.last.clone(),
        }
    }

    pub fn stat(&self, stat: Stat) -> Option<Scalar> {
        match stat {
            Stat::Sum => self.sum_scalar(),
            Stat::Count => (self.count > 0).then_some(Scalar::Int(self.count as i64)),
            Stat::Min => self.min.clone(),
            Stat::Max => self.max.clone(),
            Stat::First => self.first.clone(),
            Stat::Last => self.last.clone(),
        }
    }

    /// Rebuild from stored statistics. Missing statistics stay unknown.
    pub fn from_stats(mut get: impl FnMut(Stat) -> Option<Scalar>) -> Accumulator {
        let count = match get(Stat::Count) {
            Some(Scalar::Int(c)) => c.max(0) as u64,
            _ => 0,
        };
        let sum = get(Stat::Sum).and_then(|s| match s {
            Scalar::Float(v) => Some(Sum::Float(v)),
            Scalar::Int(v) => Some(Sum::Int(v as i128)),
            _ => None,
        });
        Accumulator {
            count,
            sum,
            min: get(Stat::Min),
            max: get(Stat::Max),
            first: get(Stat::First),
            last: get(Stat::Last),
        }
    }
}

/// Start of the epoch-aligned bucket containing `index`.
pub fn bucket_start(index: i64, resolution: i64) -> i64 {
    index.div_euclid(resolution) * resolution
}

/// Per-bucket accumulators, one per selected channel.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketAcc {
    pub start: i64,
    pub accs: Vec<Accumulator>,
}

impl BucketAcc {
    pub fn has_values(&self) -> bool {
        self.accs.iter().any(|a| !a.is_empty())
    }
}

/// Fold ascending rows into epoch-aligned buckets; buckets without values are omitted.
pub fn bucketize<'a, I>(rows: I, resolution: i64, channels: usize) -> Vec<BucketAcc>
where
    I: IntoIterator<Item = (i64, &'a [Option<Scalar>])>,
{
    let mut out: Vec<BucketAcc> = Vec::new();
    for (index, values) in rows {
        let b = bucket_start(index, resolution);
        if out.last().is_none_or(|last| last.start != b) {
            if out.last().is_some_and(|l| !l.has_values()) {
                out.pop();
            }
            out.push(BucketAcc { start: b, accs: vec![Accumulator::default(); channels] });
        }
        let bucket = out.last_mut().expect("just pushed");
        for (acc, v) in bucket.accs.iter_mut().zip(values) {
            if let Some(v) = v {
                acc.add(v);
            }
        }
    }
    if out.last().is_some_and(|l| !l.has_values()) {
        out.pop();
    }
    out
}

/// Merge two ascending bucket lists; equal starts are combined (left covers earlier indices).
pub fn merge_buckets(left: Vec<BucketAcc>, right: Vec<BucketAcc>) -> Vec<BucketAcc> {
    let mut out = Vec::with_capacity(left.len() + right.len());
    let mut l = left.into_iter().peekable();
    let mut r = right.into_iter().peekable();
    loop {
        match (l.peek(), r.peek()) {
            (Some(a), Some(b)) if a.start == b.start => {
                let mut a = l.next().unwrap();
                let b = r.next().unwrap();
                for (x, y) in a.accs.iter_mut().zip(&b.accs) {
                    x.merge(y);
                }
                out.push(a);
            }
            (Some(a), Some(b)) => {
                if a.start < b.start {
                    out.push(l.next().unwrap());
                } else {
                    out.push(r.next().unwrap());
                }
            }
            (Some(_), None) => out.push(l.next().unwrap()),
            (None, Some(_)) => out.push(r.next().unwrap()),
            (None, None) => break,
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(v: f64) -> Scalar {
        Scalar::Float(v)
    }

    #[test]
    fn mean_and_count_of_three_values() {
        let mut a = Accumulator::default();
        for v in [1.0, 2.0, 3.0] {
            a.add(&f(v));
        }
        assert_eq!(a.finish(AggregateFunction::Mean), Some(f(2.0)));
        assert_eq!(a.finish(AggregateFunction::Count), Some(Scalar::Int(3)));
        assert_eq!(a.finish(AggregateFunction::First), Some(f(1.0)));
        assert_eq!(a.finish(AggregateFunction::Last), Some(f(3.0)));
    }

    #[test]
    fn merged_partials_equal_single_pass() {
        let vals: Vec<i64> = vec![5, -3, 8, 8, 0, 12, -9];
        let mut single = Accumulator::default();
        vals.iter().for_each(|v| single.add(&Scalar::Int(*v)));
        let (a, b) = vals.split_at(3);
        let mut left = Accumulator::default();
        a.iter().for_each(|v| left.add(&Scalar::Int(*v)));
        let mut right = Accumulator::default();
        b.iter().for_each(|v| right.add(&Scalar::Int(*v)));
        left.merge(&right);
        for func in AggregateFunction::ALL {
            assert_eq!(left.finish(func), single.finish(func), "{func}");
        }
        let rebuilt = Accumulator::from_stats(|s| single.stat(s));
        assert_eq!(rebuilt, single);
    }

    #[test]
    fn text_values_only_count_first_last() {
        let mut a = Accumulator::default();
        a.add(&Scalar::Text("x".into()));
        assert_eq!(a.finish(AggregateFunction::Mean), None);
        assert_eq!(a.finish(AggregateFunction::Min), None);
        assert_eq!(a.finish(AggregateFunction::Count), Some(Scalar::Int(1)));
    }

    #[test]
    fn epoch_aligned_buckets_handle_negative_indices() {
        assert_eq!(bucket_start(59, 60), 0);
        assert_eq!(bucket_start(60, 60), 60);
        assert_eq!(bucket_start(-1, 60), -60);
    }

    #[test]
    fn bucketize_omits_empty_buckets() {
        let rows: Vec<(i64, Vec<Option<Scalar>>)> =
            vec![(0, vec![Some(f(1.0))]), (10, vec![None]), (130, vec![Some(f(4.0))])];
        let buckets = bucketize(rows.iter().map(|(i, v)| (*i, v.as_slice())), 60, 1);
        assert_eq!(buckets.iter().map(|b| b.start).collect::<Vec<_>>(), vec![0, 120]);
        let only_null = [(0i64, vec![None::<Scalar>])];
        assert!(bucketize(only_null.iter().map(|(i, v)| (*i, v.as_slice())), 60, 1).is_empty());
    }
}
