use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::ops::Op;
use super::TensorError;

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense row-major array of `f64`, optionally recorded on a [`Tape`].
#[derive(Clone)]
pub struct Tensor {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Rc<Vec<f64>>,
    pub(crate) node: Option<NodeRef>,
}

#[derive(Clone)]
pub(crate) struct NodeRef {
    pub(crate) tape: Tape,
    pub(crate) id: usize,
}

pub(crate) struct Node {
    pub(crate) op: Op,
    /// One entry per op input, `None` for untracked inputs.
    pub(crate) parents: Vec<Option<usize>>,
    pub(crate) shape: Vec<usize>,
}

/// Wengert list of recorded operations.
///
/// Nodes are appended in execution order, so parents always precede their
/// children and the backward sweep simply walks the list in reverse.
#[derive(Clone, Default)]
pub struct Tape {
    pub(crate) nodes: Rc<RefCell<Vec<Node>>>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor").field("shape", &self.shape).field("data", &preview).field("tracked", &self.node.is_some()).finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(TensorError::Invalid {
                op: "new",
                msg: format!("shape {:?} needs {} values, got {}", shape, numel(&shape), data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "new" });
        }
        Ok(Self { shape, data: Rc::new(data), node: None })
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![], data: Rc::new(vec![value]), node: None }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: Rc::new(vec![0.0; numel(shape)]), node: None }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self { shape: shape.to_vec(), data: Rc::new(vec![value; numel(shape)]), node: None }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.as_ref().clone()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    /// Node id on the owning tape, if tracked.
    pub fn node_id(&self) -> Option<usize> {
        self.node.as_ref().map(|n| n.id)
    }

    /// Untracked copy sharing the same storage.
    pub fn detach(&self) -> Tensor {
        Tensor { shape: self.shape.clone(), data: Rc::clone(&self.data), node: None }
    }

    pub(crate) fn tape(&self) -> Option<&Tape> {
        self.node.as_ref().map(|n| &n.tape)
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
        self.len() == 0
    }

    pub(crate) fn same(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.nodes, &other.nodes)
    }

    /// Registers `value` as a differentiable leaf on this tape.
    pub fn leaf(&self, value: &Tensor) -> Tensor {
        let id = self.push(Op::Leaf, vec![], value.shape.clone());
        Tensor { shape: value.shape.clone(), data: Rc::clone(&value.data), node: Some(NodeRef { tape: self.clone(), id }) }
    }

    pub(crate) fn push(&self, op: Op, parents: Vec<Option<usize>>, shape: Vec<usize>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, parents, shape });
        nodes.len() - 1
    }

    /// Reverse sweep from a scalar `root`.
    ///
    /// An untracked root yields empty (all-zero) gradients. The tape is not
    /// consumed, so repeated calls return identical results.
    pub fn backward(&self, root: &Tensor) -> Result<Gradients> {
        if root.numel() != 1 {
            return Err(TensorError::NonScalarRoot(root.shape.clone()));
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        let Some(node_ref) = &root.node else {
            return Ok(Gradients { grads, tape: self.clone() });
        };
        if !node_ref.tape.same(self) {
            return Err(TensorError::ForeignTape);
        }
        grads[node_ref.id] = Some(vec![1.0]);
        for id in (0..=node_ref.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if node.parents.iter().all(Option::is_none) {
                grads[id] = Some(g);
                continue;
            }
            let needs: Vec<bool> = node.parents.iter().map(Option::is_some).collect();
            let contributions = node.op.backward(&g, &node.shape, &needs);
            for (parent, contrib) in node.parents.iter().zip(contributions) {
                if let (Some(pid), Some(c)) = (parent, contrib) {
                    match &mut grads[*pid] {
                        Some(acc) => acc.iter_mut().zip(&c).for_each(|(a, b)| *a += b),
                        slot @ None => *slot = Some(c),
                    }
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads, tape: self.clone() })
    }
}

/// Result of a backward sweep, indexed by tape node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    tape: Tape,
}

impl Gradients {
    /// Gradient with respect to `t`; zeros when `t` did not influence the root.
    pub fn wrt(&self, t: &Tensor) -> Tensor {
        match self.get(t) {
            Some(g) => Tensor { shape: t.shape.clone(), data: Rc::new(g.to_vec()), node: None },
            None => Tensor::zeros(&t.shape),
        }
    }

    pub fn get(&self, t: &Tensor) -> Option<&[f64]> {
        let node = t.node.as_ref()?;
        if !node.tape.same(&self.tape) {
            return None;
        }
        self.grads.get(node.id)?.as_deref()
    }
}
