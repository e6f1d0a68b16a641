use std::cell::{Ref, RefCell};

use super::Array;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    /// Same shape, or a `1 x c` right operand broadcast over rows.
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    Square(usize),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols(usize, usize),
    Row(usize, usize),
    Transpose(usize),
    Sum(usize),
    Mean(usize),
    MeanRows(usize),
    Elem(usize, usize, usize),
}

struct Node {
    value: Array,
    op: Op,
}

/// Records array operations in execution order for reverse-mode
/// differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.value())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Array, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A leaf whose gradient is collected by [`Tape::backward`].
    pub fn var(&self, value: Array) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    /// A leaf treated as a constant. Gradients still flow into it but
    /// nobody reads them.
    pub fn constant(&self, value: Array) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Array::scalar(value))
    }

    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        let rows = parts.first().map(|p| p.rows()).ok_or_else(|| Error::Contract("concat of nothing".into()))?;
        let mut cols = 0;
        for p in parts {
            if p.rows() != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    left: parts[0].shape(),
                    right: p.shape(),
                });
            }
            cols += p.cols();
        }
        let mut data = vec![0.0; rows * cols];
        {
            let nodes = self.nodes.borrow();
            let mut offset = 0;
            for p in parts {
                let v = &nodes[p.id].value;
                let c = v.cols();
                for r in 0..rows {
                    data[r * cols + offset..r * cols + offset + c].copy_from_slice(v.row_slice(r));
                }
                offset += c;
            }
        }
        let value = Array::new(rows, cols, data)?;
        Ok(self.push(value, Op::ConcatCols(parts.iter().map(|p| p.id).collect())))
    }

    pub fn concat_rows<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        let cols = parts.first().map(|p| p.cols()).ok_or_else(|| Error::Contract("concat of nothing".into()))?;
        let mut data = Vec::new();
        let mut rows = 0;
        {
            let nodes = self.nodes.borrow();
            for p in parts {
                let v = &nodes[p.id].value;
                if v.cols() != cols {
                    return Err(Error::Shape {
                        op: "concat_rows",
                        left: nodes[parts[0].id].value.shape().to_vec(),
                        right: v.shape().to_vec(),
                    });
                }
                data.extend_from_slice(v.data());
                rows += v.rows();
            }
        }
        let value = Array::new(rows, cols, data)?;
        Ok(self.push(value, Op::ConcatRows(parts.iter().map(|p| p.id).collect())))
    }

    /// Reverse sweep from a `1 x 1` output.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let out_shape = nodes[output.id].value.shape().to_vec();
        if out_shape != [1, 1] {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got shape {out_shape:?}"
            )));
        }
        let mut grads: Vec<Option<Array>> = vec![None; output.id + 1];
        grads[output.id] = Some(Array::scalar(1.0));
        for id in (0..=output.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            backprop(&nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Array>], id: usize, g: Array) {
    match &mut grads[id] {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn backprop(nodes: &[Node], node: &Node, g: &Array, grads: &mut [Option<Array>]) {
    let y = &node.value;
    match node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let av = &nodes[a].value;
            let bv = &nodes[b].value;
            accumulate(grads, a, g.matmul_t(bv));
            accumulate(grads, b, av.t_matmul(g));
        }
        Op::Add(a, b) => {
            accumulate(grads, a, g.clone());
            accumulate(grads, b, reduce_broadcast(g, &nodes[b].value));
        }
        Op::Sub(a, b) => {
            accumulate(grads, a, g.clone());
            let mut gb = reduce_broadcast(g, &nodes[b].value);
            gb.scale_in_place(-1.0);
            accumulate(grads, b, gb);
        }
        Op::Mul(a, b) => {
            let av = &nodes[a].value;
            let bv = &nodes[b].value;
            let ga = zip(g, bv, |g, b| g * b);
            let gb = zip(g, av, |g, a| g * a);
            accumulate(grads, a, ga);
            accumulate(grads, b, gb);
        }
        Op::Scale(a, s) => accumulate(grads, a, g.map(|v| v * s)),
        Op::Tanh(a) => accumulate(grads, a, zip(g, y, |g, y| g * (1.0 - y * y))),
        Op::Sigmoid(a) => accumulate(grads, a, zip(g, y, |g, y| g * y * (1.0 - y))),
        Op::Relu(a) => {
            let x = &nodes[a].value;
            accumulate(grads, a, zip(g, x, |g, x| if x > 0.0 { g } else { 0.0 }));
        }
        Op::Square(a) => {
            let x = &nodes[a].value;
            accumulate(grads, a, zip(g, x, |g, x| 2.0 * g * x));
        }
        Op::SoftmaxRows(a) => {
            let c = y.cols();
            let mut out = Array::zeros(y.rows(), c);
            for r in 0..y.rows() {
                let yr = y.row_slice(r);
                let gr = g.row_slice(r);
                let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                for j in 0..c {
                    out.data_mut()[r * c + j] = yr[j] * (gr[j] - dot);
                }
            }
            accumulate(grads, a, out);
        }
        Op::LogSoftmaxRows(a) => {
            let c = y.cols();
            let mut out = Array::zeros(y.rows(), c);
            for r in 0..y.rows() {
                let yr = y.row_slice(r);
                let gr = g.row_slice(r);
                let total: f64 = gr.iter().sum();
                for j in 0..c {
                    out.data_mut()[r * c + j] = gr[j] - yr[j].exp() * total;
                }
            }
            accumulate(grads, a, out);
        }
        Op::ConcatCols(ref parts) => {
            let mut offset = 0;
            for &p in parts {
                let pc = nodes[p].value.cols();
                let mut gp = Array::zeros(g.rows(), pc);
                for r in 0..g.rows() {
                    gp.data_mut()[r * pc..(r + 1) * pc].copy_from_slice(&g.row_slice(r)[offset..offset + pc]);
                }
                offset += pc;
                accumulate(grads, p, gp);
            }
        }
        Op::ConcatRows(ref parts) => {
            let c = g.cols();
            let mut offset = 0;
            for &p in parts {
                let pr = nodes[p].value.rows();
                let gp = Array::new(pr, c, g.data()[offset * c..(offset + pr) * c].to_vec()).expect("shape");
                offset += pr;
                accumulate(grads, p, gp);
            }
        }
        Op::SliceCols(a, start) => {
            let x = &nodes[a].value;
            let (xc, len) = (x.cols(), g.cols());
            let mut ga = Array::zeros(x.rows(), xc);
            for r in 0..x.rows() {
                ga.data_mut()[r * xc + start..r * xc + start + len].copy_from_slice(g.row_slice(r));
            }
            accumulate(grads, a, ga);
        }
        Op::Row(a, r) => {
            let x = &nodes[a].value;
            let c = x.cols();
            let mut ga = Array::zeros(x.rows(), c);
            ga.data_mut()[r * c..(r + 1) * c].copy_from_slice(g.data());
            accumulate(grads, a, ga);
        }
        Op::Transpose(a) => accumulate(grads, a, g.transpose()),
        Op::Sum(a) => {
            let x = &nodes[a].value;
            accumulate(grads, a, Array::full(x.rows(), x.cols(), g.item()));
        }
        Op::Mean(a) => {
            let x = &nodes[a].value;
            accumulate(grads, a, Array::full(x.rows(), x.cols(), g.item() / x.len() as f64));
        }
        Op::MeanRows(a) => {
            let x = &nodes[a].value;
            let rows = x.rows();
            let mut ga = Array::zeros(rows, x.cols());
            for r in 0..rows {
                for (dst, src) in ga.data_mut()[r * x.cols()..(r + 1) * x.cols()].iter_mut().zip(g.data()) {
                    *dst = src / rows as f64;
                }
            }
            accumulate(grads, a, ga);
        }
        Op::Elem(a, r, c) => {
            let x = &nodes[a].value;
            let mut ga = Array::zeros(x.rows(), x.cols());
            ga.data_mut()[r * x.cols() + c] = g.item();
            accumulate(grads, a, ga);
        }
    }
}

fn zip(a: &Array, b: &Array, f: impl Fn(f64, f64) -> f64) -> Array {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Array::new(a.rows(), a.cols(), data).expect("same shape")
}

// Sums `g` over rows when the operand was broadcast from a single row.
fn reduce_broadcast(g: &Array, operand: &Array) -> Array {
    if g.shape() == operand.shape() {
        return g.clone();
    }
    let c = g.cols();
    let mut out = vec![0.0; c];
    for r in 0..g.rows() {
        for (o, v) in out.iter_mut().zip(g.row_slice(r)) {
            *o += v;
        }
    }
    Array::row(out)
}

/// Gradients of one backward sweep.
pub struct Gradients {
    grads: Vec<Option<Array>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Array> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient with respect to `var`, zeros if it did not influence the output.
    pub fn wrt(&self, var: Var<'_>) -> Array {
        self.get(var).cloned().unwrap_or_else(|| {
            let v = var.value();
            Array::zeros(v.rows(), v.cols())
        })
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Array> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn rows(&self) -> usize {
        self.value().rows()
    }

    pub fn cols(&self) -> usize {
        self.value().cols()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    /// A constant copy of this value, cut off from the gradient.
    pub fn detach(&self) -> Var<'t> {
        let v = self.value().clone();
        self.tape.constant(v)
    }

    fn unary(&self, op: Op, f: impl FnOnce(&Array) -> Array) -> Var<'t> {
        let v = f(&self.value());
        self.tape.push(v, op)
    }

    fn shape_err(&self, op: &'static str, other: &Var<'t>) -> Error {
        Error::Shape {
            op,
            left: self.shape(),
            right: other.shape(),
        }
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.value().matmul(&other.value())?;
        Ok(self.tape.push(v, Op::MatMul(self.id, other.id)))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        let v = {
            let a = self.value();
            let b = other.value();
            if a.shape() == b.shape() {
                zip(&a, &b, |x, y| x + y)
            } else if b.rows() == 1 && b.cols() == a.cols() {
                let mut out = a.clone();
                let c = a.cols();
                for (i, v) in out.data_mut().iter_mut().enumerate() {
                    *v += b.data()[i % c];
                }
                out
            } else {
                return Err(self.shape_err("add", &other));
            }
        };
        Ok(self.tape.push(v, Op::Add(self.id, other.id)))
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        let v = {
            let a = self.value();
            let b = other.value();
            if a.shape() == b.shape() {
                zip(&a, &b, |x, y| x - y)
            } else if b.rows() == 1 && b.cols() == a.cols() {
                let mut out = a.clone();
                let c = a.cols();
                for (i, v) in out.data_mut().iter_mut().enumerate() {
                    *v -= b.data()[i % c];
                }
                out
            } else {
                return Err(self.shape_err("sub", &other));
            }
        };
        Ok(self.tape.push(v, Op::Sub(self.id, other.id)))
    }

    /// Elementwise product of equally shaped arrays.
    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let v = {
            let a = self.value();
            let b = other.value();
            if a.shape() != b.shape() {
                return Err(self.shape_err("mul", &other));
            }
            zip(&a, &b, |x, y| x * y)
        };
        Ok(self.tape.push(v, Op::Mul(self.id, other.id)))
    }

    pub fn scale(&self, s: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, s), |a| a.map(|v| v * s))
    }

    pub fn neg(&self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn tanh(&self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), |a| a.map(f64::tanh))
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), |a| a.map(|v| 1.0 / (1.0 + (-v).exp())))
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |a| a.map(|v| v.max(0.0)))
    }

    pub fn square(&self) -> Var<'t> {
        self.unary(Op::Square(self.id), |a| a.map(|v| v * v))
    }

    pub fn softmax_rows(&self) -> Var<'t> {
        self.unary(Op::SoftmaxRows(self.id), Array::softmax_rows)
    }

    pub fn log_softmax_rows(&self) -> Var<'t> {
        self.unary(Op::LogSoftmaxRows(self.id), |a| {
            let mut out = a.clone();
            let c = a.cols();
            for row in out.data_mut().chunks_mut(c) {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                for v in row.iter_mut() {
                    *v -= lse;
                }
            }
            out
        })
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Var<'t>> {
        let v = {
            let a = self.value();
            if start + len > a.cols() {
                return Err(Error::Shape {
                    op: "slice_cols",
                    left: a.shape().to_vec(),
                    right: vec![start, len],
                });
            }
            let mut data = Vec::with_capacity(a.rows() * len);
            for r in 0..a.rows() {
                data.extend_from_slice(&a.row_slice(r)[start..start + len]);
            }
            Array::new(a.rows(), len, data)?
        };
        Ok(self.tape.push(v, Op::SliceCols(self.id, start)))
    }

    pub fn row(&self, r: usize) -> Result<Var<'t>> {
        let v = {
            let a = self.value();
            if r >= a.rows() {
                return Err(Error::Shape {
                    op: "row",
                    left: a.shape().to_vec(),
                    right: vec![r],
                });
            }
            Array::row(a.row_slice(r).to_vec())
        };
        Ok(self.tape.push(v, Op::Row(self.id, r)))
    }

    pub fn transpose(&self) -> Var<'t> {
        self.unary(Op::Transpose(self.id), Array::transpose)
    }

    pub fn sum(&self) -> Var<'t> {
        self.unary(Op::Sum(self.id), |a| Array::scalar(a.data().iter().sum()))
    }

    pub fn mean(&self) -> Var<'t> {
        self.unary(Op::Mean(self.id), |a| {
            Array::scalar(a.data().iter().sum::<f64>() / a.len() as f64)
        })
    }

    /// Column means as a `1 x c` row.
    pub fn mean_rows(&self) -> Var<'t> {
        self.unary(Op::MeanRows(self.id), |a| {
            let mut out = vec![0.0; a.cols()];
            for r in 0..a.rows() {
                for (o, v) in out.iter_mut().zip(a.row_slice(r)) {
                    *o += v;
                }
            }
            let n = a.rows() as f64;
            Array::row(out.into_iter().map(|v| v / n).collect())
        })
    }

    pub fn elem(&self, r: usize, c: usize) -> Result<Var<'t>> {
        let v = {
            let a = self.value();
            if r >= a.rows() || c >= a.cols() {
                return Err(Error::Shape {
                    op: "elem",
                    left: a.shape().to_vec(),
                    right: vec![r, c],
                });
            }
            Array::scalar(a.get(r, c))
        };
        Ok(self.tape.push(v, Op::Elem(self.id, r, c)))
    }

    pub fn backward(&self) -> Result<Gradients> {
        self.tape.backward(*self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let x = tape.var(Array::scalar(3.0));
        let y = x.square();
        let g = y.backward().unwrap();
        assert_eq!(g.wrt(x).item(), 6.0);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let tape = Tape::new();
        let x = tape.var(Array::row(vec![1.0, 2.0]));
        let c = tape.scalar(4.0);
        let g = c.backward().unwrap();
        assert_eq!(g.wrt(x), Array::zeros(1, 2));
    }

    #[test]
    fn softmax_of_equal_inputs() {
        let tape = Tape::new();
        let x = tape.var(Array::row(vec![0.0, 0.0]));
        assert_eq!(x.softmax_rows().value().data(), &[0.5, 0.5]);
    }

    #[test]
    fn mean_of_row() {
        let tape = Tape::new();
        assert_eq!(tape.var(Array::row(vec![1.0, 2.0, 3.0])).mean().item(), 2.0);
    }

    #[test]
    fn non_scalar_backward_is_rejected() {
        let tape = Tape::new();
        let x = tape.var(Array::row(vec![1.0, 2.0]));
        assert!(matches!(x.backward(), Err(Error::Contract(_))));
    }

    #[test]
    fn add_broadcasts_rows() {
        let tape = Tape::new();
        let a = tape.var(Array::zeros(3, 2));
        let b = tape.var(Array::row(vec![1.0, 2.0]));
        let s = a.add(b).unwrap().sum();
        let g = s.backward().unwrap();
        assert_eq!(g.wrt(b).data(), &[3.0, 3.0]);
        assert!(a.add(tape.var(Array::zeros(2, 2))).is_err());
    }
}
