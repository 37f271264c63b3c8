//! Dense row-major f32 tensors.

/// A dense multi-dimensional array of 32-bit floats, row-major.
///
/// `node_id` is set once the tensor's value has been recorded on a [`Tape`]
/// (see [`crate::grad::Tape`]); a tensor participates in at most one tape at
/// a time.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    pub requires_grad: bool,
    pub node_id: Option<usize>,
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f32>) -> Tensor {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "shape {:?} implies {} elements, got {}",
            shape,
            numel,
            data.len()
        );
        Tensor {
            shape,
            data,
            requires_grad: false,
            node_id: None,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let numel = shape.iter().product();
        Tensor::from_vec(shape, vec![0.0; numel])
    }

    pub fn scalar(v: f32) -> Tensor {
        Tensor::from_vec(vec![1], vec![v])
    }

    pub fn with_grad(mut self) -> Tensor {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Frobenius norm, accumulated in f64.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }
}
