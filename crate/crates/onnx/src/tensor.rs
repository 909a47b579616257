//! Dense row-major tensors of `f32` or `i64`.

use std::fmt;

#[derive(Clone, PartialEq)]
pub(crate) enum Data {
    F32(Vec<f32>),
    I64(Vec<i64>),
}

#[derive(Clone, PartialEq)]
pub(crate) struct Tensor {
    pub shape: Vec<usize>,
    pub data: Data,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.data {
            Data::F32(_) => "f32",
            Data::I64(_) => "i64",
        };
        write!(f, "Tensor<{kind}>{:?}", self.shape)
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn from_f32(shape: Vec<usize>, values: Vec<f32>) -> Result<Self, String> {
        check_len(&shape, values.len())?;
        Ok(Self { shape, data: Data::F32(values) })
    }

    pub fn from_i64(shape: Vec<usize>, values: Vec<i64>) -> Result<Self, String> {
        check_len(&shape, values.len())?;
        Ok(Self { shape, data: Data::I64(values) })
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        numel(&self.shape)
    }

    pub fn f32s(&self) -> Result<&[f32], String> {
        match &self.data {
            Data::F32(v) => Ok(v),
            Data::I64(_) => Err(format!("expected a float tensor, got {self:?}")),
        }
    }

    pub fn i64s(&self) -> Result<&[i64], String> {
        match &self.data {
            Data::I64(v) => Ok(v),
            Data::F32(_) => Err(format!("expected an int64 tensor, got {self:?}")),
        }
    }

    /// Same data under a new shape with the same element count.
    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self, String> {
        if numel(&shape) != self.len() {
            return Err(format!("cannot view {:?} as {shape:?}", self.shape));
        }
        self.shape = shape;
        Ok(self)
    }
}

fn check_len(shape: &[usize], len: usize) -> Result<(), String> {
    if numel(shape) == len {
        Ok(())
    } else {
        Err(format!("shape {shape:?} needs {} values, got {len}", numel(shape)))
    }
}

/// Row-major strides of `shape`.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Multidirectional broadcast of two shapes, numpy style.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>, String> {
    let rank = a.len().max(b.len());
    (0..rank)
        .map(|i| {
            let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
            let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
            match (da, db) {
                (x, y) if x == y => Ok(x),
                (1, y) => Ok(y),
                (x, 1) => Ok(x),
                _ => Err(format!("shapes {a:?} and {b:?} do not broadcast")),
            }
        })
        .collect()
}

/// For each flat index of `out`, the flat index into a tensor of `shape`
/// broadcast to `out`.
pub(crate) fn broadcast_indices(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let src = strides(shape);
    // Stride 0 on broadcast axes.
    let eff: Vec<usize> = (0..out.len())
        .map(|i| if i < offset || shape[i - offset] == 1 { 0 } else { src[i - offset] })
        .collect();
    let mut idx = Vec::with_capacity(numel(out));
    let mut counter = vec![0usize; out.len()];
    let mut flat = 0usize;
    for _ in 0..numel(out) {
        idx.push(flat);
        for axis in (0..out.len()).rev() {
            counter[axis] += 1;
            flat += eff[axis];
            if counter[axis] < out[axis] {
                break;
            }
            flat -= eff[axis] * counter[axis];
            counter[axis] = 0;
        }
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcasting() {
        assert_eq!(broadcast_shape(&[2, 1, 3], &[4, 1]).unwrap(), [2, 4, 3]);
        assert!(broadcast_shape(&[2, 3], &[4]).is_err());
        assert_eq!(broadcast_indices(&[3], &[2, 3]), [0, 1, 2, 0, 1, 2]);
        assert_eq!(broadcast_indices(&[2, 1], &[2, 3]), [0, 0, 0, 1, 1, 1]);
        assert_eq!(broadcast_indices(&[], &[2, 2]), [0, 0, 0, 0]);
        assert_eq!(broadcast_indices(&[2, 2], &[2, 2]), [0, 1, 2, 3]);
    }

    #[test]
    fn strides_and_shape_checks() {
        assert_eq!(strides(&[2, 3, 4]), [12, 4, 1]);
        assert!(Tensor::from_f32(vec![2, 2], vec![0.0; 3]).is_err());
        let t = Tensor::from_i64(vec![6], (0..6).collect()).unwrap();
        assert_eq!(t.clone().reshaped(vec![2, 3]).unwrap().shape, [2, 3]);
        assert!(t.reshaped(vec![4]).is_err());
    }
}
