use crate::model::{Scalar, ValueType};

/// One channel of a segment. Missing values are `None`.
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Float(Vec<Option<f64>>),
    Int(Vec<Option<i64>>),
    Bool(Vec<Option<bool>>),
    Text(Vec<Option<String>>),
}

impl Column {
    pub fn new(ty: ValueType) -> Self {
        Self::with_capacity(ty, 0)
    }

    pub fn with_capacity(ty: ValueType, n: usize) -> Self {
        match ty {
            ValueType::Float64 => Column::Float(Vec::with_capacity(n)),
            ValueType::Int64 => Column::Int(Vec::with_capacity(n)),
            ValueType::Bool => Column::Bool(Vec::with_capacity(n)),
            ValueType::Text => Column::Text(Vec::with_capacity(n)),
        }
    }

    pub fn value_type(&self) -> ValueType {
        match self {
            Column::Float(_) => ValueType::Float64,
            Column::Int(_) => ValueType::Int64,
            Column::Bool(_) => ValueType::Bool,
            Column::Text(_) => ValueType::Text,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Column::Float(v) => v.len(),
            Column::Int(v) => v.len(),
            Column::Bool(v) => v.len(),
            Column::Text(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> Option<Scalar> {
        match self {
            Column::Float(v) => v[i].map(Scalar::Float),
            Column::Int(v) => v[i].map(Scalar::Int),
            Column::Bool(v) => v[i].map(Scalar::Bool),
            Column::Text(v) => v[i].clone().map(Scalar::Text),
        }
    }

    pub fn is_present(&self, i: usize) -> bool {
        match self {
            Column::Float(v) => v[i].is_some(),
            Column::Int(v) => v[i].is_some(),
            Column::Bool(v) => v[i].is_some(),
            Column::Text(v) => v[i].is_some(),
        }
    }

    /// Caller guarantees the scalar matches the column type.
    pub fn insert(&mut self, i: usize, value: Option<Scalar>) {
        match self {
            Column::Float(v) => v.insert(i, value.and_then(|s| s.as_f64())),
            Column::Int(v) => v.insert(i, value.and_then(|s| if let Scalar::Int(x) = s { Some(x) } else { None })),
            Column::Bool(v) => v.insert(i, value.and_then(|s| if let Scalar::Bool(x) = s { Some(x) } else { None })),
            Column::Text(v) => v.insert(i, value.and_then(|s| if let Scalar::Text(x) = s { Some(x) } else { None })),
        }
    }

    pub fn push(&mut self, value: Option<Scalar>) {
        let n = self.len();
        self.insert(n, value);
    }

    pub fn set(&mut self, i: usize, value: Option<Scalar>) {
        match self {
            Column::Float(v) => v[i] = value.and_then(|s| s.as_f64()),
            Column::Int(v) => v[i] = value.and_then(|s| if let Scalar::Int(x) = s { Some(x) } else { None }),
            Column::Bool(v) => v[i] = value.and_then(|s| if let Scalar::Bool(x) = s { Some(x) } else { None }),
            Column::Text(v) => v[i] = value.and_then(|s| if let Scalar::Text(x) = s { Some(x) } else { None }),
        }
    }

    pub fn remove(&mut self, i: usize) {
        match self {
            Column::Float(v) => {
                v.remove(i);
            }
            Column::Int(v) => {
                v.remove(i);
            }
            Column::Bool(v) => {
                v.remove(i);
            }
            Column::Text(v) => {
                v.remove(i);
            }
        }
    }

    pub fn clear_at(&mut self, i: usize) {
        match self {
            Column::Float(v) => v[i] = None,
            Column::Int(v) => v[i] = None,
            Column::Bool(v) => v[i] = None,
            Column::Text(v) => v[i] = None,
        }
    }

    pub fn drain_range(&mut self, from: usize, to: usize) {
        match self {
            Column::Float(v) => {
                v.drain(from..to);
            }
            Column::Int(v) => {
                v.drain(from..to);
            }
            Column::Bool(v) => {
                v.drain(from..to);
            }
            Column::Text(v) => {
                v.drain(from..to);
            }
        }
    }

    pub fn split_off(&mut self, at: usize) -> Column {
        match self {
            Column::Float(v) => Column::Float(v.split_off(at)),
            Column::Int(v) => Column::Int(v.split_off(at)),
            Column::Bool(v) => Column::Bool(v.split_off(at)),
            Column::Text(v) => Column::Text(v.split_off(at)),
        }
    }

    /// Approximate heap bytes used by values.
    pub fn heap_bytes(&self) -> usize {
        match self {
            Column::Float(v) => v.len() * std::mem::size_of::<Option<f64>>(),
            Column::Int(v) => v.len() * std::mem::size_of::<Option<i64>>(),
            Column::Bool(v) => v.len() * std::mem::size_of::<Option<bool>>(),
            Column::Text(v) => {
                v.iter().map(|s| std::mem::size_of::<Option<String>>() + s.as_ref().map_or(0, String::len)).sum()
            }
        }
    }
}
