use std::sync::Arc;

use crate::error::{Error, Result};

/// Which tensor of a layer a layout entry refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    /// Convolution weights, shape `(out, in, k, k)`.
    Weight,
    /// Convolution bias, shape `(out,)`.
    Bias,
    /// Learned per-channel gain of the affine normalization.
    Scale,
    /// Learned per-channel offset of the affine normalization.
    Shift,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamEntry {
    pub layer: usize,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered, contiguous placement of every trainable tensor in a flat vector.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParamLayout {
    entries: Vec<ParamEntry>,
    total: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor directly after the previous one and returns its offset.
    pub fn push(&mut self, layer: usize, kind: ParamKind, shape: Vec<usize>) -> usize {
        let offset = self.total;
        let entry = ParamEntry {
            layer,
            kind,
            shape,
            offset,
        };
        self.total += entry.len();
        self.entries.push(entry);
        offset
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn find(&self, layer: usize, kind: ParamKind) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.layer == layer && e.kind == kind)
    }
}

/// Flat view of all trainable weights together with their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    data: Vec<f64>,
    layout: Arc<ParamLayout>,
}

impl ParamVector {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        Self {
            data: vec![0.0; layout.total_len()],
            layout,
        }
    }

    pub fn from_vec(layout: Arc<ParamLayout>, data: Vec<f64>) -> Result<Self> {
        if data.len() != layout.total_len() {
            return Err(Error::invalid(format!(
                "parameter vector has {} entries, layout expects {}",
                data.len(),
                layout.total_len()
            )));
        }
        Ok(Self { data, layout })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(Arc::clone(&self.layout))
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn entry(&self, entry: &ParamEntry) -> &[f64] {
        &self.data[entry.range()]
    }

    pub fn entry_mut(&mut self, entry: &ParamEntry) -> &mut [f64] {
        &mut self.data[entry.range()]
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
