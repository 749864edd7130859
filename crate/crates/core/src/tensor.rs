use serde::{Deserialize, Serialize};

/// Channel-major activation shape `(C, H, W)`; the batch dimension is implicit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape3 {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape3 {
    pub const fn new(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }
}

impl std::fmt::Display for Shape3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.c, self.h, self.w)
    }
}

/// A single fp32 activation (one image of a batch).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Shape3,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Shape3, data: Vec<f32>) -> Self {
        assert_eq!(shape.numel(), data.len(), "tensor data does not match shape {shape}");
        Self { shape, data }
    }

    pub fn zeros(shape: Shape3) -> Self {
        Self { shape, data: vec![0.0; shape.numel()] }
    }

    pub fn at(&self, c: usize, h: usize, w: usize) -> f32 {
        self.data[(c * self.shape.h + h) * self.shape.w + w]
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
