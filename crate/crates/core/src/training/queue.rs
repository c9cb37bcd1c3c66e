use crate::error::{Error, Result};

/// FIFO ring of unit-norm key vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeQueue {
    dim: usize,
    capacity: usize,
    data: Vec<f32>,
    len: usize,
    /// Slot that receives the next key (the oldest once full).
    cursor: usize,
}

const UNIT_TOL: f64 = 1e-3;

impl NegativeQueue {
    pub fn new(dim: usize, capacity: usize) -> Result<Self> {
        if dim == 0 || capacity == 0 {
            return Err(Error::invalid("queue needs positive dimension and capacity"));
        }
        Ok(NegativeQueue {
            dim,
            capacity,
            data: vec![0.0; dim * capacity],
            len: 0,
            cursor: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_full(&self) -> bool {
        self.len == self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Enqueue one key, evicting the oldest when full.
    pub fn push(&mut self, key: &[f32]) -> Result<()> {
        if key.len() != self.dim {
            return Err(Error::Mismatch(format!("key has {} entries, queue holds {}", key.len(), self.dim)));
        }
        let n = key.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(Error::Numerical(format!("queue entries must be unit norm, got {n}")));
        }
        self.data[self.cursor * self.dim..(self.cursor + 1) * self.dim].copy_from_slice(key);
        self.cursor = (self.cursor + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
        Ok(())
    }

    pub fn push_batch<'a>(&mut self, keys: impl IntoIterator<Item = &'a [f32]>) -> Result<()> {
        keys.into_iter().try_for_each(|k| self.push(k))
    }

    /// Entries from oldest to newest.
    pub fn entries(&self) -> impl Iterator<Item = &[f32]> {
        let start = if self.is_full() { self.cursor } else { 0 };
        (0..self.len).map(move |i| {
            let slot = (start + i) % self.capacity;
            &self.data[slot * self.dim..(slot + 1) * self.dim]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(i: usize) -> Vec<f32> {
        let mut v = vec![0.0; 5];
        v[i % 5] = if i.is_multiple_of(2) { 1.0 } else { -1.0 };
        v
    }

    #[test]
    fn fifo_order_and_size() {
        let mut q = NegativeQueue::new(5, 4).unwrap();
        for i in 0..3 {
            q.push(&e(i)).unwrap();
        }
        assert_eq!(q.len(), 3);
        assert_eq!(q.entries().map(|s| s.to_vec()).collect::<Vec<_>>(), vec![e(0), e(1), e(2)]);
        for i in 3..10 {
            q.push(&e(i)).unwrap();
            assert!(q.len() <= 4);
        }
        assert_eq!(q.len(), 4);
        assert_eq!(
            q.entries().map(|s| s.to_vec()).collect::<Vec<_>>(),
            vec![e(6), e(7), e(8), e(9)]
        );
        assert!(q.push(&[2.0, 0.0, 0.0, 0.0, 0.0]).is_err());
        assert!(q.push(&[1.0]).is_err());
    }
}
