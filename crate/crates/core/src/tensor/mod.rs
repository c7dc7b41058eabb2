//! Minimal reverse-mode autodiff over dense row-major arrays.
//!
//! Feature maps use the `[batch, channels, time]` layout throughout. Every
//! kernel computes each output element with an accumulation order that does
//! not depend on how many outputs are produced in one call, which is what
//! lets the streaming paths reproduce one-shot results bit for bit.

pub(crate) mod kernels;
mod ops;

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};
use std::rc::Rc;

pub use ops::ConvSpec;

/// Scalar type the engine runs on (`f32` for training and inference, `f64`
/// for gradient checks).
pub trait Float:
    num_traits::Float
    + rustfft::FftNum
    + Default
    + fmt::Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    /// `C <- alpha * A * B + beta * C` with arbitrary strides.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-aliasing matrices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn of_f64(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("f64 conversion")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("f64 conversion")
    }

    fn of_usize(v: usize) -> Self {
        Self::of_f64(v as f64)
    }
}

impl Float for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Float for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(1) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

type BackwardFn<T> = Box<dyn Fn(&[Tensor<T>], &[T], &[bool]) -> Vec<Option<Vec<T>>>>;

struct Node<T: Float> {
    id: u64,
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    parents: Vec<Tensor<T>>,
    backward: Option<BackwardFn<T>>,
}

/// Reference-counted tensor; cloning is cheap and shares storage.
pub struct Tensor<T: Float = f32>(Rc<Node<T>>);

impl<T: Float> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<T: Float> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor(id={}, shape={:?}, grad={})", self.0.id, self.0.shape, self.0.requires_grad)
    }
}

impl<T: Float> Tensor<T> {
    /// Leaf tensor that does not track gradients.
    pub fn new(data: Vec<T>, shape: &[usize]) -> Self {
        Self::leaf(data, shape, false)
    }

    /// Leaf tensor; `requires_grad` marks it as a trainable input.
    pub fn leaf(data: Vec<T>, shape: &[usize], requires_grad: bool) -> Self {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "data length does not match shape {shape:?}"
        );
        Tensor(Rc::new(Node {
            id: next_id(),
            shape: shape.to_vec(),
            data,
            requires_grad,
            parents: Vec::new(),
            backward: None,
        }))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(vec![T::zero(); shape.iter().product()], shape)
    }

    pub fn scalar(v: T) -> Self {
        Self::new(vec![v], &[1])
    }

    pub(crate) fn from_op(
        data: Vec<T>,
        shape: &[usize],
        parents: Vec<Tensor<T>>,
        backward: impl Fn(&[Tensor<T>], &[T], &[bool]) -> Vec<Option<Vec<T>>> + 'static,
    ) -> Self {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let (parents, backward): (Vec<Tensor<T>>, Option<BackwardFn<T>>) = if requires_grad {
            (parents, Some(Box::new(backward)))
        } else {
            (Vec::new(), None)
        };
        Tensor(Rc::new(Node {
            id: next_id(),
            shape: shape.to_vec(),
            data,
            requires_grad,
            parents,
            backward,
        }))
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn dim(&self, i: usize) -> usize {
        self.0.shape[i]
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.clone()
    }

    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.0.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Same values, no graph history.
    pub fn detach(&self) -> Self {
        if !self.requires_grad() && self.0.backward.is_none() {
            return self.clone();
        }
        Self::new(self.0.data.clone(), &self.0.shape)
    }

    /// Copy with the gradient flag changed (used to freeze weights).
    pub fn with_requires_grad(&self, requires_grad: bool) -> Self {
        Self::leaf(self.0.data.clone(), &self.0.shape, requires_grad)
    }

    /// Mutate leaf storage in place. Falls back to copy-on-write when the
    /// storage is still shared with a live graph.
    pub fn update(&mut self, f: impl FnOnce(&mut [T])) {
        if let Some(node) = Rc::get_mut(&mut self.0) {
            debug_assert!(node.backward.is_none(), "update() on a non-leaf tensor");
            f(&mut node.data);
            return;
        }
        let mut data = self.0.data.clone();
        f(&mut data);
        *self = Self::leaf(data, &self.0.shape, self.0.requires_grad);
    }

    /// Reverse-mode sweep from a scalar root. Returns gradients of every
    /// leaf that requires them.
    pub fn backward(&self) -> Grads<T> {
        assert_eq!(self.numel(), 1, "backward() needs a scalar root");
        let mut grads = Grads { map: HashMap::new() };
        if !self.requires_grad() {
            return grads;
        }

        // iterative post-order DFS
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            for p in &t.0.parents {
                if p.requires_grad() && !seen.contains(&p.id()) {
                    stack.push((p.clone(), false));
                }
            }
        }

        let mut pending: HashMap<u64, Vec<T>> = HashMap::new();
        pending.insert(self.id(), vec![T::one()]);
        for t in order.iter().rev() {
            let Some(g) = pending.remove(&t.id()) else { continue };
            let node = &t.0;
            match &node.backward {
                None => {
                    grads.map.insert(node.id, g);
                }
                Some(f) => {
                    let needs: Vec<bool> = node.parents.iter().map(|p| p.requires_grad()).collect();
                    let pgrads = f(&node.parents, &g, &needs);
                    debug_assert_eq!(pgrads.len(), node.parents.len());
                    for (p, pg) in node.parents.iter().zip(pgrads) {
                        let Some(pg) = pg else { continue };
                        if !p.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), p.numel());
                        match pending.get_mut(&p.id()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += *b),
                            None => {
                                pending.insert(p.id(), pg);
                            }
                        }
                    }
                }
            }
        }
        grads
    }
}

/// Leaf gradients keyed by tensor id.
#[derive(Default)]
pub struct Grads<T: Float> {
    map: HashMap<u64, Vec<T>>,
}

impl<T: Float> Grads<T> {
    pub fn get(&self, t: &Tensor<T>) -> Option<&[T]> {
        self.map.get(&t.id()).map(|v| v.as_slice())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}
