use std::collections::HashMap;

use super::{ParamId, ParamStore, Result, Role, Tensor, TensorError};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

pub(crate) enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    Transpose(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    Sum(Var),
    RowDistances(Var, Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Nll {
        probs: Var,
        targets: Vec<usize>,
    },
}

/// Operation kinds, used to address a backward rule from outside.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    AddRow,
    Scale,
    OneMinus,
    Sigmoid,
    Tanh,
    Gelu,
    Transpose,
    Softmax,
    LayerNorm,
    Gather,
    ConcatCols,
    ConcatRows,
    SliceCols,
    SliceRows,
    Sum,
    RowDistances,
    CrossEntropy,
    Nll,
}

impl Op {
    pub(crate) fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::AddRow(..) => OpKind::AddRow,
            Op::Scale(..) => OpKind::Scale,
            Op::OneMinus(..) => OpKind::OneMinus,
            Op::Sigmoid(..) => OpKind::Sigmoid,
            Op::Tanh(..) => OpKind::Tanh,
            Op::Gelu(..) => OpKind::Gelu,
            Op::Transpose(..) => OpKind::Transpose,
            Op::Softmax(..) => OpKind::Softmax,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Gather { .. } => OpKind::Gather,
            Op::ConcatCols(..) => OpKind::ConcatCols,
            Op::ConcatRows(..) => OpKind::ConcatRows,
            Op::SliceCols { .. } => OpKind::SliceCols,
            Op::SliceRows { .. } => OpKind::SliceRows,
            Op::Sum(..) => OpKind::Sum,
            Op::RowDistances(..) => OpKind::RowDistances,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
            Op::Nll { .. } => OpKind::Nll,
        }
    }
}

/// Deliberately wrong backward rule: gradients flowing through ops of
/// `kind` are multiplied by `factor`. Used to self-test the gradient checker.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BackwardFault {
    pub kind: OpKind,
    pub factor: f64,
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
    pub(crate) grad: Option<Vec<f64>>,
}

/// Append-only tape. Node ids are a topological order, so backward simply
/// walks the tape from the loss towards index 0.
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
    grad_enabled: bool,
    fault: Option<BackwardFault>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bound: HashMap::new(),
            grad_enabled: true,
            fault: None,
        }
    }

    /// Graph that never records gradient requirements; used for inference.
    pub fn no_grad() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn with_fault(mut self, fault: BackwardFault) -> Self {
        self.fault = Some(fault);
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let requires_grad = requires_grad && self.grad_enabled;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Binds a stored parameter as a leaf. Repeated binds of the same id
    /// return the same node, so gradients from every use accumulate there.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = self.leaf(p.value.clone(), p.role == Role::Trainable);
        self.bound.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar `loss`. Leaf gradients accumulate across
    /// calls until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.nodes[loss.0].value.shape().to_vec();
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(TensorError::NotScalar(shape));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut adj: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(dy) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                match &mut self.nodes[i].grad {
                    Some(g) => g.iter_mut().zip(&dy).for_each(|(g, d)| *g += d),
                    slot @ None => *slot = Some(dy),
                }
                continue;
            }
            let mut contributions = super::ops::backward_rule(&self.nodes, i, &dy);
            if let Some(fault) = self.fault {
                if fault.kind == node.op.kind() {
                    for (_, g) in &mut contributions {
                        g.iter_mut().for_each(|x| *x *= fault.factor);
                    }
                }
            }
            for (input, g) in contributions {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut adj[input.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    /// Moves gradients of bound trainable parameters into `store`.
    pub fn flush_param_grads(&mut self, store: &mut ParamStore) {
        for (&id, &var) in &self.bound {
            if let Some(g) = self.nodes[var.0].grad.take() {
                store.get_mut(id).grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
        }
    }

    pub fn bound_param(&self, id: ParamId) -> Option<Var> {
        self.bound.get(&id).copied()
    }
}
