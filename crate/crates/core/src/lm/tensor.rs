//! Dense row-major tensors and the matmul kernels behind the graph ops.

use super::scalar::Scalar;

/// Dense tensor, row-major. One- and two-dimensional shapes cover the whole
/// model; scalars are shape `[1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::ZERO; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match data length {}",
            data.len()
        );
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> T {
        assert!(self.is_scalar(), "item() on non-scalar {:?}", self.shape);
        self.data[0]
    }

    /// Rows of a 2-D tensor (a 1-D tensor is one row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            2 => self.shape[0],
            _ => panic!("rows() on shape {:?}", self.shape),
        }
    }

    /// Columns of a 2-D tensor (or the length of a 1-D tensor).
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            1 => self.shape[0],
            2 => self.shape[1],
            _ => panic!("cols() on shape {:?}", self.shape),
        }
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts element type, e.g. f32 checkpoint values into an f64 engine.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

/// Whether a matmul operand is used transposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trans {
    No,
    Yes,
}

/// `C = op(A) · op(B)` with the transpose flags applied logically.
///
/// Kernels are serial with a fixed per-element summation order; callers
/// parallelize across batch items instead, which keeps every result
/// bitwise reproducible.
pub fn matmul<T: Scalar>(a: &Tensor<T>, ta: Trans, b: &Tensor<T>, tb: Trans) -> Tensor<T> {
    let (am, ak) = (a.rows(), a.cols());
    let (bm, bk) = (b.rows(), b.cols());
    let (m, k1) = match ta {
        Trans::No => (am, ak),
        Trans::Yes => (ak, am),
    };
    let (k2, n) = match tb {
        Trans::No => (bm, bk),
        Trans::Yes => (bk, bm),
    };
    assert_eq!(k1, k2, "matmul inner dims {k1} vs {k2}");
    let k = k1;

    let mut out = vec![T::ZERO; m * n];
    match (ta, tb) {
        (Trans::No, Trans::Yes) => {
            // C[i,j] = dot(A row i, B row j): both operands contiguous.
            for (crow, arow) in out.chunks_exact_mut(n).zip(a.data().chunks_exact(ak)) {
                for (c, brow) in crow.iter_mut().zip(b.data().chunks_exact(bk)) {
                    *c = dot(arow, brow);
                }
            }
        }
        (Trans::No, Trans::No) => {
            // C row i accumulates A[i,l] * B row l: vectorizable axpy.
            for (crow, arow) in out.chunks_exact_mut(n).zip(a.data().chunks_exact(ak)) {
                for (&av, brow) in arow.iter().zip(b.data().chunks_exact(bk)) {
                    axpy(av, brow, crow);
                }
            }
        }
        (Trans::Yes, Trans::No) => {
            // C[i,j] = sum_l A[l,i] * B[l,j]; stream both row-major
            // operands once per l.
            for (arow, brow) in a
                .data()
                .chunks_exact(ak)
                .zip(b.data().chunks_exact(bk))
                .take(k)
            {
                for (&av, crow) in arow.iter().zip(out.chunks_exact_mut(n)) {
                    axpy(av, brow, crow);
                }
            }
        }
        (Trans::Yes, Trans::Yes) => {
            // Not used by any op's forward or backward path.
            unimplemented!("matmul with both operands transposed");
        }
    }

    Tensor::from_vec(&[m, n], out)
}

/// `y += a * x`, elementwise.
#[inline]
fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with four independent accumulators, combined in a fixed
/// order. Breaking the add dependency chain roughly quadruples throughput
/// without giving up determinism.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let (mut s0, mut s1, mut s2, mut s3) = (T::ZERO, T::ZERO, T::ZERO, T::ZERO);
    for (ca, cb) in a.chunks_exact(4).zip(b.chunks_exact(4)) {
        s0 += ca[0] * cb[0];
        s1 += ca[1] * cb[1];
        s2 += ca[2] * cb[2];
        s3 += ca[3] * cb[3];
    }
    let mut tail = T::ZERO;
    let rem = a.len() - a.len() % 4;
    for (&x, &y) in a[rem..].iter().zip(&b[rem..]) {
        tail += x * y;
    }
    ((s0 + s1) + (s2 + s3)) + tail
}
