//! Planar images with values in `[0, 1]`.

use vfi_tensor::{Scalar, Tensor};

use crate::error::{Error, Result};

/// A `C x H x W` image, `C` in `{1, 3}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<S> {
    data: Tensor<S>,
}

impl<S: Scalar> Image<S> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<S>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Shape(format!("empty image {channels}x{height}x{width}")));
        }
        Ok(Self { data: Tensor::from_vec(&[channels, height, width], data)? })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: S) -> Self {
        Self { data: Tensor::full(&[channels, height, width], value) }
    }

    /// Item `index` of a `[N, C, H, W]` batch.
    pub fn from_batch(batch: &Tensor<S>, index: usize) -> Self {
        let (_, c, h, w) = batch.dims4();
        let item = batch.slice_batch(index, 1).reshape(&[c, h, w]).expect("same element count");
        Self { data: item }
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels(), self.height(), self.width())
    }

    pub fn data(&self) -> &[S] {
        self.data.data()
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        self.data.data_mut()
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> S {
        self.data.data()[(c * self.height() + y) * self.width() + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: S) {
        let (h, w) = (self.height(), self.width());
        self.data.data_mut()[(c * h + y) * w + x] = v;
    }

    /// `[1, C, H, W]` copy for network input.
    pub fn to_batch(&self) -> Tensor<S> {
        let (c, h, w) = self.dims();
        self.data.clone().reshape(&[1, c, h, w]).expect("same element count")
    }

    /// Stacks equally shaped images into `[N, C, H, W]`.
    pub fn stack(images: &[&Image<S>]) -> Result<Tensor<S>> {
        let first = images.first().ok_or_else(|| Error::Shape("no images to stack".into()))?;
        let (c, h, w) = first.dims();
        let mut data = Vec::with_capacity(images.len() * c * h * w);
        for im in images {
            if im.dims() != (c, h, w) {
                return Err(Error::Shape(format!("cannot stack {:?} with {:?}", first.dims(), im.dims())));
            }
            data.extend_from_slice(im.data());
        }
        Ok(Tensor::from_vec(&[images.len(), c, h, w], data)?)
    }

    /// Single-channel luminance (Rec. 601 weights for RGB).
    pub fn luma(&self) -> Image<S> {
        let (c, h, w) = self.dims();
        if c == 1 {
            return self.clone();
        }
        let plane = h * w;
        let d = self.data();
        let (wr, wg, wb) = (S::of(0.299), S::of(0.587), S::of(0.114));
        let data = (0..plane).map(|i| wr * d[i] + wg * d[plane + i] + wb * d[2 * plane + i]).collect();
        Image { data: Tensor::from_vec(&[1, h, w], data).expect("plane size") }
    }

    pub fn clamp01(&self) -> Image<S> {
        Image { data: self.data.map(|v| v.max(S::zero()).min(S::one())) }
    }

    pub fn all_in_unit_range(&self) -> bool {
        self.data().iter().all(|&v| v >= S::zero() && v <= S::one())
    }

    pub fn same_shape(&self, other: &Image<S>) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!("{:?} vs {:?}", self.dims(), other.dims())));
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> Image<T> {
        Image { data: self.data.cast() }
    }

    pub fn tensor(&self) -> &Tensor<S> {
        &self.data
    }
}
