//! Dense reference interpreter. This is the semantics oracle the partitioner
//! is checked against: sharded execution must reproduce these results.

use std::collections::BTreeMap;

use super::{BinOp, Combiner, IrError, Module, OpKind, UnOp};

/// A dense row-major tensor of f64 values.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn fill(shape: Vec<usize>, v: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor { shape, data: vec![v; n] }
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn elems(&self) -> usize {
        self.data.len()
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.shape.len()];
        for i in (0..self.shape.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.shape[i + 1];
        }
        s
    }

    /// Contiguous slice `[start, start+len)` along one dimension.
    pub fn slice_dim(&self, dim: usize, start: usize, len: usize) -> Tensor {
        assert!(dim < self.rank() && start + len <= self.shape[dim]);
        let mut out_shape = self.shape.clone();
        out_shape[dim] = len;
        let mut out = Tensor::zeros(out_shape);
        let in_strides = self.strides();
        let out_strides = out.strides();
        for (o, slot) in out.data.iter_mut().enumerate() {
            let mut rem = o;
            let mut src = 0;
            for d in 0..self.rank() {
                let mut idx = rem / out_strides[d];
                rem %= out_strides[d];
                if d == dim {
                    idx += start;
                }
                src += idx * in_strides[d];
            }
            *slot = self.data[src];
        }
        out
    }

    /// Concatenation of equal-shaped (up to `dim`) tensors along `dim`.
    pub fn concat(parts: &[&Tensor], dim: usize) -> Tensor {
        assert!(!parts.is_empty());
        let mut out_shape = parts[0].shape.clone();
        out_shape[dim] = parts.iter().map(|p| p.shape[dim]).sum();
        let mut out = Tensor::zeros(out_shape);
        let out_strides = out.strides();
        let mut offset = 0;
        for p in parts {
            let in_strides = p.strides();
            for (i, &v) in p.data.iter().enumerate() {
                let mut rem = i;
                let mut dst = 0;
                for d in 0..p.rank() {
                    let mut idx = rem / in_strides[d];
                    rem %= in_strides[d];
                    if d == dim {
                        idx += offset;
                    }
                    dst += idx * out_strides[d];
                }
                out.data[dst] = v;
            }
            offset += p.shape[dim];
        }
        out
    }
}

fn combine(c: Combiner, a: f64, b: f64) -> f64 {
    match c {
        Combiner::Add => a + b,
        Combiner::Mul => a * b,
        Combiner::Max => a.max(b),
    }
}

/// Evaluates one operation on dense operands. Shapes must already be valid
/// for the operation (the interpreter only runs shape-checked modules).
pub fn eval_op(op: &OpKind, inputs: &[&Tensor]) -> Tensor {
    match *op {
        OpKind::Matmul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k) = (a.shape[0], a.shape[1]);
            let n = b.shape[1];
            assert_eq!(k, b.shape[0], "matmul contraction extents differ");
            let mut out = Tensor::zeros(vec![m, n]);
            for i in 0..m {
                for p in 0..k {
                    let av = a.data[i * k + p];
                    for j in 0..n {
                        out.data[i * n + j] += av * b.data[p * n + j];
                    }
                }
            }
            out
        }
        OpKind::Transpose { l, r } => {
            let a = inputs[0];
            let mut out_shape = a.shape.clone();
            out_shape.swap(l, r);
            let mut out = Tensor::zeros(out_shape);
            let in_strides = a.strides();
            let out_strides = out.strides();
            for (i, &v) in a.data.iter().enumerate() {
                let mut rem = i;
                let mut dst = 0;
                for d in 0..a.rank() {
                    let idx = rem / in_strides[d];
                    rem %= in_strides[d];
                    let out_d = if d == l {
                        r
                    } else if d == r {
                        l
                    } else {
                        d
                    };
                    dst += idx * out_strides[out_d];
                }
                out.data[dst] = v;
            }
            out
        }
        OpKind::Reduce { dim, combiner } => {
            let a = inputs[0];
            let mut out_shape = a.shape.clone();
            out_shape.remove(dim);
            let mut out: Option<Tensor> = None;
            for i in 0..a.shape[dim] {
                let part = a.slice_dim(dim, i, 1);
                let part = Tensor::new(out_shape.clone(), part.data);
                out = Some(match out {
                    None => part,
                    Some(acc) => Tensor::new(
                        out_shape.clone(),
                        acc.data
                            .iter()
                            .zip(&part.data)
                            .map(|(&x, &y)| combine(combiner, x, y))
                            .collect(),
                    ),
                });
            }
            out.expect("reduce over a positive extent")
        }
        OpKind::Broadcast { at, extent } => {
            let a = inputs[0];
            let mut out_shape = a.shape.clone();
            out_shape.insert(at, extent);
            let parts: Vec<Tensor> = (0..extent)
                .map(|_| {
                    let mut s = a.shape.clone();
                    s.insert(at, 1);
                    Tensor::new(s, a.data.clone())
                })
                .collect();
            let refs: Vec<&Tensor> = parts.iter().collect();
            Tensor::concat(&refs, at)
        }
        OpKind::Binary(b) => {
            let (x, y) = (inputs[0], inputs[1]);
            assert_eq!(x.shape, y.shape, "elementwise operands differ in shape");
            let data = x
                .data
                .iter()
                .zip(&y.data)
                .map(|(&a, &c)| match b {
                    BinOp::Add => a + c,
                    BinOp::Mul => a * c,
                    BinOp::Sub => a - c,
                    BinOp::Div => a / c,
                })
                .collect();
            Tensor::new(x.shape.clone(), data)
        }
        OpKind::Unary(u) => {
            let x = inputs[0];
            let data = x
                .data
                .iter()
                .map(|&a| match u {
                    UnOp::Relu => a.max(0.0),
                    UnOp::Neg => -a,
                    UnOp::Exp => a.exp(),
                    UnOp::Recip => 1.0 / a,
                })
                .collect();
            Tensor::new(x.shape.clone(), data)
        }
    }
}

/// Runs a module on named inputs and returns the value of its result.
/// Inputs must supply every parameter with its declared shape.
pub fn interpret(m: &Module, inputs: &BTreeMap<String, Tensor>) -> Result<Tensor, IrError> {
    let mut env: BTreeMap<&str, Tensor> = BTreeMap::new();
    for (name, shape) in &m.params {
        let t = inputs
            .get(name)
            .ok_or_else(|| IrError::MissingInput { name: name.clone() })?;
        if t.shape != shape.dims {
            return Err(IrError::InputShape {
                name: name.clone(),
                expected: shape.dims.clone(),
                got: t.shape.clone(),
            });
        }
        env.insert(name, t.clone());
    }
    for b in &m.bindings {
        let operands: Vec<&Tensor> = b.operands.iter().map(|o| &env[o.as_str()]).collect();
        let out = eval_op(&b.op, &operands);
        // Shape soundness: the computed value always matches the checked shape.
        assert_eq!(out.shape, b.result_shape.dims, "interpreter shape divergence");
        env.insert(&b.var, out);
    }
    Ok(env[m.result.as_str()].clone())
}

#[cfg(test)]
mod tests {
    use super::super::parse_module;
    use super::*;

    fn ones(shape: &[usize]) -> Tensor {
        Tensor::fill(shape.to_vec(), 1.0)
    }

    #[test]
    fn mlp_all_ones() {
        let src = "\
def mlp(x: f32[256, 32], w1: f32[32, 64], w2: f32[64, 16]) {
  y = matmul(x, w1)
  z = relu(y)
  w = matmul(z, w2)
  return w
}";
        let m = parse_module(src).unwrap();
        let mut inputs = BTreeMap::new();
        inputs.insert("x".to_string(), ones(&[256, 32]));
        inputs.insert("w1".to_string(), ones(&[32, 64]));
        inputs.insert("w2".to_string(), ones(&[64, 16]));
        let out = interpret(&m, &inputs).unwrap();
        assert_eq!(out.shape, vec![256, 16]);
        // Each entry contracts 32 ones, then 64 copies of 32.
        assert!(out.data.iter().all(|&v| v == 2048.0));
    }

    #[test]
    fn transpose_2x2() {
        let t = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let out = eval_op(&OpKind::Transpose { l: 0, r: 1 }, &[&t]);
        assert_eq!(out.data, vec![1.0, 3.0, 2.0, 4.0]);
    }

    #[test]
    fn reduce_rows() {
        let t = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let out = eval_op(&OpKind::Reduce { dim: 1, combiner: Combiner::Add }, &[&t]);
        assert_eq!(out.shape, vec![2]);
        assert_eq!(out.data, vec![3.0, 7.0]);
        let out = eval_op(&OpKind::Reduce { dim: 0, combiner: Combiner::Max }, &[&t]);
        assert_eq!(out.data, vec![3.0, 4.0]);
    }

    #[test]
    fn broadcast_prepends() {
        let t = Tensor::new(vec![2], vec![5.0, 6.0]);
        let out = eval_op(&OpKind::Broadcast { at: 0, extent: 3 }, &[&t]);
        assert_eq!(out.shape, vec![3, 2]);
        assert_eq!(out.data, vec![5.0, 6.0, 5.0, 6.0, 5.0, 6.0]);
        let out = eval_op(&OpKind::Broadcast { at: 1, extent: 2 }, &[&t]);
        assert_eq!(out.shape, vec![2, 2]);
        assert_eq!(out.data, vec![5.0, 5.0, 6.0, 6.0]);
    }

    #[test]
    fn slice_and_concat_invert() {
        let t = Tensor::new(vec![2, 4], (0..8).map(|v| v as f64).collect());
        let a = t.slice_dim(1, 0, 2);
        let b = t.slice_dim(1, 2, 2);
        assert_eq!(a.data, vec![0.0, 1.0, 4.0, 5.0]);
        assert_eq!(Tensor::concat(&[&a, &b], 1), t);
        let a = t.slice_dim(0, 1, 1);
        assert_eq!(a.data, vec![4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn missing_and_ill_shaped_inputs() {
        let m = parse_module("def id(x: f32[4]) { return x }").unwrap();
        let err = interpret(&m, &BTreeMap::new()).unwrap_err();
        assert!(matches!(err, IrError::MissingInput { .. }));
        let mut inputs = BTreeMap::new();
        inputs.insert("x".to_string(), ones(&[5]));
        assert!(matches!(interpret(&m, &inputs), Err(IrError::InputShape { .. })));
    }
}
