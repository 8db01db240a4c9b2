//! Hierarchical FIFO memory banks carried across non-overlapping windows.
//!
//! Both banks are fixed-length first-in-first-out queues with keep-last
//! semantics: concatenate the new features, keep the most recent entries up
//! to capacity. The frame bank queues individual per-frame feature rows; the
//! window bank queues whole per-window query blocks.

use std::collections::VecDeque;

use crate::{Arr, Real};

/// FIFO of per-frame feature rows, capacity `L_f`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameMemoryBank {
    rows: VecDeque<Vec<Real>>,
    width: usize,
    capacity: usize,
}

impl FrameMemoryBank {
    pub fn new(width: usize, capacity: usize) -> Self {
        Self {
            rows: VecDeque::new(),
            width,
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn rows(&self) -> impl Iterator<Item = &[Real]> {
        self.rows.iter().map(|r| r.as_slice())
    }

    /// Append the rows of `new_frames` ([t, width]) and keep the newest
    /// `capacity` rows.
    pub fn update(&mut self, new_frames: &Arr) {
        let (t, w) = new_frames.dims2();
        assert_eq!(w, self.width, "frame memory width mismatch");
        for r in 0..t {
            self.rows.push_back(new_frames.row(r).to_vec());
            if self.rows.len() > self.capacity {
                self.rows.pop_front();
            }
        }
    }

    pub fn reset(&mut self) {
        self.rows.clear();
    }

    /// Contents as one [len, width] matrix; None when empty.
    pub fn as_matrix(&self) -> Option<Arr> {
        if self.rows.is_empty() {
            return None;
        }
        let mut data = Vec::with_capacity(self.rows.len() * self.width);
        for r in &self.rows {
            data.extend_from_slice(r);
        }
        Some(Arr::new(vec![self.rows.len(), self.width], data))
    }
}

/// FIFO of per-window query blocks (each [n_queries, width]), capacity `L_w`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowMemoryBank {
    blocks: VecDeque<Arr>,
    n_queries: usize,
    width: usize,
    capacity: usize,
}

impl WindowMemoryBank {
    pub fn new(n_queries: usize, width: usize, capacity: usize) -> Self {
        Self {
            blocks: VecDeque::new(),
            n_queries,
            width,
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn blocks(&self) -> impl Iterator<Item = &Arr> {
        self.blocks.iter()
    }

    /// Append one block of exactly `n_queries` vectors, evicting the oldest
    /// block past capacity.
    pub fn update(&mut self, new_queries: &Arr) {
        let (n, w) = new_queries.dims2();
        assert_eq!(n, self.n_queries, "window memory block size mismatch");
        assert_eq!(w, self.width, "window memory width mismatch");
        self.blocks.push_back(new_queries.clone());
        if self.blocks.len() > self.capacity {
            self.blocks.pop_front();
        }
    }

    pub fn reset(&mut self) {
        self.blocks.clear();
    }

    /// All stored query vectors stacked into [len · n_queries, width].
    pub fn as_matrix(&self) -> Option<Arr> {
        if self.blocks.is_empty() {
            return None;
        }
        let rows = self.blocks.len() * self.n_queries;
        let mut data = Vec::with_capacity(rows * self.width);
        for b in &self.blocks {
            data.extend_from_slice(b.data());
        }
        Some(Arr::new(vec![rows, self.width], data))
    }
}
