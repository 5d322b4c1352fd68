use std::cell::Cell;
use std::collections::{HashMap, HashSet};

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Disables graph recording on this thread until dropped.
pub struct NoGradGuard {
    prev: bool,
}

impl NoGradGuard {
    pub fn new() -> Self {
        Self::set(false)
    }

    fn set(on: bool) -> Self {
        let prev = GRAD_ENABLED.with(|g| g.replace(on));
        NoGradGuard { prev }
    }
}

impl Default for NoGradGuard {
    fn default() -> Self {
        Self::new()
    }
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        let prev = self.prev;
        GRAD_ENABLED.with(|g| g.set(prev));
    }
}

pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let _guard = NoGradGuard::new();
    f()
}

/// Runs `f` with recording on, even inside [`no_grad`].
pub fn enable_grad<R>(f: impl FnOnce() -> R) -> R {
    let _guard = NoGradGuard::set(true);
    f()
}

/// Recorded operations reachable from a root, in topological order
/// (every node appears after all of its parents).
pub struct Graph<T: Scalar> {
    nodes: Vec<Tensor<T>>,
}

impl<T: Scalar> Graph<T> {
    /// Collects the recorded operations that produced `root`. Leaves are not
    /// counted; a tensor produced with recording disabled yields an empty graph.
    pub fn trace(root: &Tensor<T>) -> Self {
        let mut nodes = Vec::new();
        let mut visited = HashSet::new();
        // (tensor, parents already pushed)
        let mut stack = vec![(root.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                nodes.push(t);
                continue;
            }
            if !t.requires_grad() || !visited.insert(t.id()) {
                continue;
            }
            match t.node() {
                Some(node) => {
                    let parents: Vec<_> = node.parents.clone();
                    stack.push((t, true));
                    for p in parents.into_iter().rev() {
                        if p.requires_grad() && !visited.contains(&p.id()) {
                            stack.push((p, false));
                        }
                    }
                }
                None => nodes.push(t),
            }
        }
        Graph { nodes }
    }

    /// Number of recorded operations (leaves excluded).
    pub fn len(&self) -> usize {
        self.nodes.iter().filter(|t| !t.is_leaf()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().filter_map(|t| t.op_name()).collect()
    }

    pub fn leaves(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.nodes.iter().filter(|t| t.is_leaf())
    }
}

/// Gradients of leaves, keyed by tensor identity.
pub struct GradStore<T: Scalar> {
    grads: HashMap<u64, Tensor<T>>,
}

impl<T: Scalar> GradStore<T> {
    pub fn get(&self, t: &Tensor<T>) -> Option<&Tensor<T>> {
        self.grads.get(&t.id())
    }

    /// The gradient of `t`, or zeros when `t` did not influence the loss.
    pub fn get_or_zeros(&self, t: &Tensor<T>) -> Tensor<T> {
        self.get(t)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(t.shape()))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

fn run<T: Scalar>(
    root: &Tensor<T>,
    keep: &HashSet<u64>,
    keep_leaves: bool,
    create_graph: bool,
) -> Result<HashMap<u64, Tensor<T>>> {
    if root.numel() != 1 {
        return Err(Error::contract(format!(
            "backward needs a scalar loss, got shape {:?}",
            root.shape()
        )));
    }
    let _mode = NoGradGuard::set(create_graph);
    let graph = Graph::trace(root);
    let mut grads: HashMap<u64, Tensor<T>> = HashMap::new();
    if !root.requires_grad() {
        return Ok(grads);
    }
    grads.insert(root.id(), Tensor::ones(root.shape()));
    let mut out = HashMap::new();
    for t in graph.nodes.iter().rev() {
        let Some(g) = grads.remove(&t.id()) else {
            continue;
        };
        match t.node() {
            Some(node) => {
                let pg = (node.backward)(&node.parents, t, &g)?;
                debug_assert_eq!(pg.len(), node.parents.len(), "{}", node.name);
                for (p, pgrad) in node.parents.iter().zip(pg) {
                    let Some(pgrad) = pgrad else { continue };
                    if !p.requires_grad() {
                        continue;
                    }
                    if pgrad.shape() != p.shape() {
                        return Err(Error::Numerical(format!(
                            "{}: gradient shape {:?} differs from operand {:?}",
                            node.name,
                            pgrad.shape(),
                            p.shape()
                        )));
                    }
                    let acc = match grads.remove(&p.id()) {
                        Some(prev) => prev.add(&pgrad)?,
                        None => pgrad,
                    };
                    grads.insert(p.id(), acc);
                }
                if keep.contains(&t.id()) {
                    out.insert(t.id(), g);
                }
            }
            None => {
                if keep_leaves || keep.contains(&t.id()) {
                    out.insert(t.id(), g);
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of a scalar `loss` with respect to every reachable leaf that
/// requires gradients. Uses of a tensor accumulate additively.
pub fn backward<T: Scalar>(loss: &Tensor<T>) -> Result<GradStore<T>> {
    let grads = run(loss, &HashSet::new(), true, false)?;
    Ok(GradStore { grads })
}

/// Gradients of `loss` with respect to `wrt`. With `create_graph` the returned
/// gradients are themselves recorded and can be differentiated (used by R1).
/// Entries are `None` for tensors that do not influence `loss`.
pub fn grad<T: Scalar>(
    loss: &Tensor<T>,
    wrt: &[&Tensor<T>],
    create_graph: bool,
) -> Result<Vec<Option<Tensor<T>>>> {
    let keep: HashSet<u64> = wrt.iter().map(|t| t.id()).collect();
    let mut grads = run(loss, &keep, false, create_graph)?;
    Ok(wrt.iter().map(|t| grads.remove(&t.id())).collect())
}
