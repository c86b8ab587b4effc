use vfi_tensor::Scalar;

use crate::error::{Error, Result};
use crate::image::Image;

/// Three consecutive frames; `mid` is the interpolation target.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTriplet<S> {
    pub id: u64,
    pub prev: Image<S>,
    pub mid: Image<S>,
    pub next: Image<S>,
    /// Displacement magnitude between `prev` and `next` in pixels, when known.
    pub motion: f64,
}

impl<S: Scalar> FrameTriplet<S> {
    pub fn new(id: u64, prev: Image<S>, mid: Image<S>, next: Image<S>, motion: f64) -> Result<Self> {
        prev.same_shape(&mid)?;
        mid.same_shape(&next)?;
        if ![&prev, &mid, &next].iter().all(|im| im.all_in_unit_range()) {
            return Err(Error::Image(format!("triplet {id} has values outside [0, 1]")));
        }
        Ok(Self { id, prev, mid, next, motion })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.mid.dims()
    }

    /// Same triplet played backwards.
    pub fn reversed(&self) -> Self {
        Self { prev: self.next.clone(), next: self.prev.clone(), ..self.clone() }
    }

    pub fn cast<T: Scalar>(&self) -> FrameTriplet<T> {
        FrameTriplet { id: self.id, prev: self.prev.cast(), mid: self.mid.cast(), next: self.next.cast(), motion: self.motion }
    }
}
