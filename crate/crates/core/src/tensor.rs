//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! Every differentiable operation lives on a [`Tape`]: the forward pass
//! records one backward closure per op in creation order, and
//! [`Tape::backward`] replays them in exact reverse order. Creation order is
//! a topological order by construction, since an op's inputs always exist
//! before its output.
//!
//! Gradients accumulate across backward calls; the optimizer zeroes them
//! between steps. A tape and the tensors on it are single-threaded; separate
//! training contexts may run in parallel on disjoint data.

use std::cell::RefCell;
use std::rc::Rc;

use rand::Rng;

use crate::error::{Error, Result};

/// Inputs to `log` are clamped to this floor so saturated softmax outputs
/// never produce NaN in a cross-entropy.
pub const LOG_FLOOR: f64 = 1e-12;

struct Inner {
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
}

/// A dense row-major f64 tensor. Cheap to clone (shared handle).
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

impl Tensor {
    fn new(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Tensor {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        Tensor {
            inner: Rc::new(Inner {
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
            }),
        }
    }

    /// Constant tensor (does not take gradients).
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) || data.len() != numel {
            return Err(Error::contract(format!(
                "tensor data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor::new(data, shape.to_vec(), false))
    }

    /// Trainable tensor: participates in backward and holds a gradient.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) || data.len() != numel {
            return Err(Error::contract(format!(
                "tensor data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor::new(data, shape.to_vec(), true))
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::new(vec![v], vec![1], false)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let numel = shape.iter().product();
        Tensor::new(vec![0.0; numel], shape.to_vec(), false)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.data.borrow().len()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Copy of the current values.
    pub fn value(&self) -> Vec<f64> {
        self.inner.data.borrow().clone()
    }

    /// Read values without copying.
    pub fn with_data<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.inner.data.borrow())
    }

    /// Mutate values in place (optimizer updates, finite-difference probes).
    pub fn with_data_mut<R>(&self, f: impl FnOnce(&mut [f64]) -> R) -> R {
        f(&mut self.inner.data.borrow_mut())
    }

    /// Overwrite values. Panics if `data` has the wrong length.
    pub fn set_value(&self, data: &[f64]) {
        let mut d = self.inner.data.borrow_mut();
        assert_eq!(d.len(), data.len(), "set_value length mismatch");
        d.copy_from_slice(data);
    }

    /// The single element of a scalar tensor. Panics on non-scalars.
    pub fn item(&self) -> f64 {
        let d = self.inner.data.borrow();
        assert_eq!(d.len(), 1, "item() on tensor of shape {:?}", self.inner.shape);
        d[0]
    }

    /// Accumulated gradient; zeros if backward never touched this tensor.
    pub fn grad(&self) -> Vec<f64> {
        match &*self.inner.grad.borrow() {
            Some(g) => g.clone(),
            None => vec![0.0; self.numel()],
        }
    }

    /// Read the gradient without copying (zeros are represented as `None`).
    pub fn with_grad<R>(&self, f: impl FnOnce(Option<&[f64]>) -> R) -> R {
        f(self.inner.grad.borrow().as_deref())
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Two handles to the same underlying tensor?
    pub fn same_node(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    fn acc_grad(inner: &Rc<Inner>, f: impl FnOnce(&mut [f64])) {
        let mut g = inner.grad.borrow_mut();
        let slot = g.get_or_insert_with(|| vec![0.0; inner.data.borrow().len()]);
        f(slot);
    }
}

struct Record {
    backward: Box<dyn Fn()>,
}

/// Wengert tape: ordered record of backward closures.
pub struct Tape {
    records: RefCell<Vec<Record>>,
    recording: bool,
}

impl Tape {
    /// Recording tape for training and gradient checks.
    pub fn new() -> Tape {
        Tape {
            records: RefCell::new(Vec::new()),
            recording: true,
        }
    }

    /// Non-recording tape: ops compute values only (beam search, evaluation).
    pub fn inference() -> Tape {
        Tape {
            records: RefCell::new(Vec::new()),
            recording: false,
        }
    }

    pub fn recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.records.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.borrow().is_empty()
    }

    fn track(&self, inputs: &[&Tensor]) -> bool {
        self.recording && inputs.iter().any(|t| t.inner.requires_grad)
    }

    fn push(&self, backward: impl Fn() + 'static) {
        self.records.borrow_mut().push(Record {
            backward: Box::new(backward),
        });
    }

    /// Reverse sweep from a scalar root. Seeds the root gradient with 1 and
    /// replays the recorded closures newest-first. Gradients accumulate.
    pub fn backward(&self, root: &Tensor) -> Result<()> {
        if root.numel() != 1 {
            return Err(Error::contract(format!(
                "backward root must be scalar, got shape {:?}",
                root.shape()
            )));
        }
        Tensor::acc_grad(&root.inner, |g| g[0] += 1.0);
        for rec in self.records.borrow().iter().rev() {
            (rec.backward)();
        }
        Ok(())
    }

    // ---- binary ops ------------------------------------------------------

    /// Matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (ash, bsh) = (a.shape(), b.shape());
        if ash.len() != 2 || bsh.len() != 2 || ash[1] != bsh[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: ash.to_vec(),
                rhs: bsh.to_vec(),
            });
        }
        let (m, k, n) = (ash[0], ash[1], bsh[1]);
        let mut out = vec![0.0; m * n];
        {
            let ad = a.inner.data.borrow();
            let bd = b.inner.data.borrow();
            for i in 0..m {
                for p in 0..k {
                    let av = ad[i * k + p];
                    let brow = &bd[p * n..(p + 1) * n];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
        }
        let y = Tensor::new(out, vec![m, n], self.track(&[a, b]));
        if y.requires_grad() {
            let (ai, bi, yi) = (a.inner.clone(), b.inner.clone(), y.inner.clone());
            self.push(move || {
                let gy = yi.grad.borrow();
                let Some(gy) = gy.as_deref() else { return };
                if ai.requires_grad {
                    let bd = bi.data.borrow();
                    Tensor::acc_grad(&ai, |ga| {
                        for i in 0..m {
                            for p in 0..k {
                                let mut s = 0.0;
                                for j in 0..n {
                                    s += gy[i * n + j] * bd[p * n + j];
                                }
                                ga[i * k + p] += s;
                            }
                        }
                    });
                }
                if bi.requires_grad {
                    let ad = ai.data.borrow();
                    Tensor::acc_grad(&bi, |gb| {
                        for p in 0..k {
                            for i in 0..m {
                                let av = ad[i * k + p];
                                for j in 0..n {
                                    gb[p * n + j] += av * gy[i * n + j];
                                }
                            }
                        }
                    });
                }
            });
        }
        Ok(y)
    }

    /// Matrix-vector product `[m,k] x [k] -> [m]`.
    pub fn matvec(&self, a: &Tensor, x: &Tensor) -> Result<Tensor> {
        let (ash, xsh) = (a.shape(), x.shape());
        if ash.len() != 2 || xsh.len() != 1 || ash[1] != xsh[0] {
            return Err(Error::ShapeMismatch {
                op: "matvec",
                lhs: ash.to_vec(),
                rhs: xsh.to_vec(),
            });
        }
        let (m, k) = (ash[0], ash[1]);
        let mut out = vec![0.0; m];
        {
            let ad = a.inner.data.borrow();
            let xd = x.inner.data.borrow();
            for i in 0..m {
                let row = &ad[i * k..(i + 1) * k];
                out[i] = row.iter().zip(xd.iter()).map(|(a, b)| a * b).sum();
            }
        }
        let y = Tensor::new(out, vec![m], self.track(&[a, x]));
        if y.requires_grad() {
            let (ai, xi, yi) = (a.inner.clone(), x.inner.clone(), y.inner.clone());
            self.push(move || {
                let gy = yi.grad.borrow();
                let Some(gy) = gy.as_deref() else { return };
                if ai.requires_grad {
                    let xd = xi.data.borrow();
                    Tensor::acc_grad(&ai, |ga| {
                        for i in 0..m {
                            let gyi = gy[i];
                            if gyi == 0.0 {
                                continue;
                            }
                            let row = &mut ga[i * k..(i + 1) * k];
                            for (g, &xv) in row.iter_mut().zip(xd.iter()) {
                                *g += gyi * xv;
                            }
                        }
                    });
                }
                if xi.requires_grad {
                    let ad = ai.data.borrow();
                    Tensor::acc_grad(&xi, |gx| {
                        for i in 0..m {
                            let gyi = gy[i];
                            if gyi == 0.0 {
                                continue;
                            }
                            let row = &ad[i * k..(i + 1) * k];
                            for (g, &av) in gx.iter_mut().zip(row.iter()) {
                                *g += gyi * av;
                            }
                        }
                    });
                }
            });
        }
        Ok(y)
    }

    /// Transposed matrix-vector product `[m,k]^T x [m] -> [k]`.
    pub fn matvec_t(&self, a: &Tensor, x: &Tensor) -> Result<Tensor> {
        let (ash, xsh) = (a.shape(), x.shape());
        if ash.len() != 2 || xsh.len() != 1 || ash[0] != xsh[0] {
            return Err(Error::ShapeMismatch {
                op: "matvec_t",
                lhs: ash.to_vec(),
                rhs: xsh.to_vec(),
            });
        }
        let (m, k) = (ash[0], ash[1]);
        let mut out = vec![0.0; k];
        {
            let ad = a.inner.data.borrow();
            let xd = x.inner.data.borrow();
            for i in 0..m {
                let xv = xd[i];
                if xv == 0.0 {
                    continue;
                }
                let row = &ad[i * k..(i + 1) * k];
                for (o, &av) in out.iter_mut().zip(row.iter()) {
                    *o += xv * av;
                }
            }
        }
        let y = Tensor::new(out, vec![k], self.track(&[a, x]));
        if y.requires_grad() {
            let (ai, xi, yi) = (a.inner.clone(), x.inner.clone(), y.inner.clone());
            self.push(move || {
                let gy = yi.grad.borrow();
                let Some(gy) = gy.as_deref() else { return };
                if ai.requires_grad {
                    let xd = xi.data.borrow();
                    Tensor::acc_grad(&ai, |ga| {
                        for i in 0..m {
                            let xv = xd[i];
                            if xv == 0.0 {
                                continue;
                            }
                            let row = &mut ga[i * k..(i + 1) * k];
                            for (g, &gyv) in row.iter_mut().zip(gy.iter()) {
                                *g += xv * gyv;
                            }
                        }
                    });
                }
                if xi.requires_grad {
                    let ad = ai.data.borrow();
                    Tensor::acc_grad(&xi, |gx| {
                        for i in 0..m {
                            let row = &ad[i * k..(i + 1) * k];
                            gx[i] += row.iter().zip(gy.iter()).map(|(a, g)| a * g).sum::<f64>();
                        }
                    });
                }
            });
        }
        Ok(y)
    }

    /// Inner product of two equal-length vectors, as a `[1]` tensor.
    pub fn dot(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() || a.shape().len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "dot",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let s = {
            let ad = a.inner.data.borrow();
            let bd = b.inner.data.borrow();
            ad.iter().zip(bd.iter()).map(|(x, y)| x * y).sum()
        };
        let y = Tensor::new(vec![s], vec![1], self.track(&[a, b]));
        if y.requires_grad() {
            let (ai, bi, yi) = (a.inner.clone(), b.inner.clone(), y.inner.clone());
            self.push(move || {
                let gy = yi.grad.borrow();
                let Some(gy) = gy.as_deref() else { return };
                let g = gy[0];
                if g == 0.0 {
                    return;
                }
                if ai.requires_grad {
                    let bd = bi.data.borrow();
                    Tensor::acc_grad(&ai, |ga| {
                        for (gv, &bv) in ga.iter_mut().zip(bd.iter()) {
                            *gv += g * bv;
                        }
                    });
                }
                if bi.requires_grad {
                    let ad = ai.data.borrow();
                    Tensor::acc_grad(&bi, |gb| {
                        for (gv, &av) in gb.iter_mut().zip(ad.iter()) {
                            *gv += g * av;
                        }
                    });
                }
            });
        }
        Ok(y)
    }

    fn elementwise_binary(
        &self,
        op: &'static str,
        a: &Tensor,
        b: &Tensor,
        f: impl Fn(f64, f64) -> f64,
        da: f64,
        db: f64,
    ) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(Error::ShapeMismatch {
                op,
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let out: Vec<f64> = {
            let ad = a.inner.data.borrow();
            let bd = b.inner.data.borrow();
            ad.iter().zip(bd.iter()).map(|(&x, &y)| f(x, y)).collect()
        };
        let y = Tensor::new(out, a.shape().to_vec(), self.track(&[a, b]));
        if y.requires_grad() {
            let (ai, bi, yi) = (a.inner.clone(), b.inner.clone(), y.inner.clone());
            self.push(move || {
                let gy = yi.grad.borrow();
                let Some(gy) = gy.as_deref() else { return };
                if ai.requires_grad {
                    Tensor::acc_grad(&ai, |ga| {
                        for (g, &gv) in ga.iter_mut().zip(gy.iter()) {
                            *g += da * gv;
                        }
                    });
                }
                if bi.requires_grad {
                    Tensor::acc_grad(&bi, |gb| {
                        for (g, &gv) in gb.iter_mut().zip(gy.iter()) {
                            *g += db * gv;
                        }
                    });
                }
            });
        }
        Ok(y)
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.elementwise_binary("add", a, b, |x, y| x + y, 1.0, 1.0)
    }

    /// Elementwise difference `a - b`.
    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.elementwise_binary("sub", a, b, |x, y| x - y, 1.0, -1.0)
    }

    /// Elementwise (Hadamard) product of two same-shape tensors.
    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(Error::ShapeMismatch {
                op: "mul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let out: Vec<f64> = {
            let ad = a.inner.data.borrow();
            let bd = b.inner.data.borrow();
            ad.iter().zip(bd.iter()).map(|(&x, &y)| x * y).collect()
        };
        let y = Tensor::new(out, a.shape().to_vec(), self.track(&[a, b]));
        if y.requires_grad() {
            let (ai, bi, yi) = (a.inner.clone(), b.inner.clone(), y.inner.clone());
            self.push(move || {
                let gy = yi.grad.borrow();
                let Some(gy) = gy.as_deref() else { return };
                if ai.requires_grad {
                    let bd = bi.data.borrow().clone();
                    Tensor::acc_grad(&ai, |ga| {
                        for ((g, &gv), &bv) in ga.iter_mut().zip(gy.iter()).zip(bd.iter()) {
                            *g += gv * bv;
                        }
                    });
                }
                if bi.requires_grad {
                    let ad = ai.data.borrow().clone();
                    Tensor::acc_grad(&bi, |gb| {
                        for ((g, &gv), &av) in gb.iter_mut().zip(gy.iter()).zip(ad.iter()) {
                            *g += gv * av;
                        }
                    });
                }
            });
        }
        Ok(y)
    }

    /// Scale a tensor by a scalar tensor: `out = s * v`.
    pub fn scale_by(&self, s: &Tensor, v: &Tensor) -> Result<Tensor> {
        if s.numel() != 1 {
            return Err(Error::ShapeMismatch {
                op: "scale_by",
                lhs: s.shape().to_vec(),
                rhs: v.shape().to_vec(),
            });
        }
        let sv = s.inner.data.borrow()[0];
        let out: Vec<f64> = v.inner.data.borrow().iter().map(|&x| sv * x).collect();
        let y = Tensor::new(out, v.shape().to_vec(), self.track(&[s, v]));
        if y.requires_grad() {
            let (si, vi, yi) = (s.inner.clone(), v.inner.clone(), y.inner.clone());
            self.push(move || {
                let gy = yi.grad.borrow();
                let Some(gy) = gy.as_deref() else { return };
                if si.requires_grad {
                    let vd = vi.data.borrow();
                    let acc: f64 = gy.iter().zip(vd.iter()).map(|(g, v)| g * v).sum();
                    Tensor::acc_grad(&si, |gs| gs[0] += acc);
                }
                if vi.requires_grad {
                    let sv = si.data.borrow()[0];
                    Tensor::acc_grad(&vi, |gv| {
                        for (g, &gyv) in gv.iter_mut().zip(gy.iter()) {
                            *g += sv * gyv;
                        }
                    });
                }
            });
        }
        Ok(y)
    }

    /// Scale by a compile-time constant (loss weighting, batch means).
    pub fn scale(&self, a: &Tensor, c: f64) -> Tensor {
        let out: Vec<f64> = a.inner.data.borrow().iter().map(|&x| c * x).collect();
        let y = Tensor::new(out, a.shape().to_vec(), self.track(&[a]));
        if y.requires_grad() {
            let (ai, yi) = (a.inner.clone(), y.inner.clone());
            self.push(move || {
                let gy = yi.grad.borrow();
                let Some(gy) = gy.as_deref() else { return };
                Tensor::acc_grad(&ai, |ga| {
                    for (g, &gv) in ga.iter_mut().zip(gy.iter()) {
                        *g += c * gv;
                    }
                });
            });
        }
        y
    }

    // ---- unary ops -------------------------------------------------------

    fn unary(
        &self,
        a: &Tensor,
        f: impl Fn(f64) -> f64,
        // derivative as a function of (input, output)
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Tensor {
        let out: Vec<f64> = a.inner.data.borrow().iter().map(|&x| f(x)).collect();
        let y = Tensor::new(out, a.shape().to_vec(), self.track(&[a]));
        if y.requires_grad() {
            let (ai, yi) = (a.inner.clone(), y.inner.clone());
            self.push(move || {
                let gy = yi.grad.borrow();
                let Some(gy) = gy.as_deref() else { return };
                let ad = ai.data.borrow().clone();
                let yd = yi.data.borrow().clone();
                Tensor::acc_grad(&ai, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += df(ad[i], yd[i]) * gy[i];
                    }
                });
            });
        }
        y
    }

    pub fn tanh(&self, a: &Tensor) -> Tensor {
        self.unary(a, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&self, a: &Tensor) -> Tensor {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), |_, y| y * (1.0 - y))
    }

    /// Natural log with the input clamped to [`LOG_FLOOR`]. Clamped entries
    /// get zero gradient.
    pub fn log(&self, a: &Tensor) -> Tensor {
        self.unary(
            a,
            |x| x.max(LOG_FLOOR).ln(),
            |x, _| if x >= LOG_FLOOR { 1.0 / x } else { 0.0 },
        )
    }

    /// Numerically stable softmax over a vector: max-subtraction, exp,
    /// normalize.
    pub fn softmax(&self, a: &Tensor) -> Result<Tensor> {
        if a.numel() == 0 || a.shape().len() != 1 {
            return Err(Error::contract(format!(
                "softmax expects a non-empty vector, got shape {:?}",
                a.shape()
            )));
        }
        let out = {
            let ad = a.inner.data.borrow();
            let max = ad.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = ad.iter().map(|&x| (x - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / sum).collect::<Vec<f64>>()
        };
        let y = Tensor::new(out, a.shape().to_vec(), self.track(&[a]));
        if y.requires_grad() {
            let (ai, yi) = (a.inner.clone(), y.inner.clone());
            self.push(move || {
                let gy = yi.grad.borrow();
                let Some(gy) = gy.as_deref() else { return };
                let yd = yi.data.borrow().clone();
                let inner: f64 = gy.iter().zip(yd.iter()).map(|(g, y)| g * y).sum();
                Tensor::acc_grad(&ai, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += yd[i] * (gy[i] - inner);
                    }
                });
            });
        }
        Ok(y)
    }

    // ---- shape ops -------------------------------------------------------

    /// Concatenate vectors into one vector.
    pub fn concat(&self, parts: &[&Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::contract("concat of zero tensors"));
        }
        for p in parts {
            if p.shape().len() != 1 {
                return Err(Error::contract(format!(
                    "concat expects vectors, got shape {:?}",
                    p.shape()
                )));
            }
        }
        let total: usize = parts.iter().map(|p| p.numel()).sum();
        let mut out = Vec::with_capacity(total);
        for p in parts {
            out.extend_from_slice(&p.inner.data.borrow());
        }
        let tracked = self.recording && parts.iter().any(|p| p.requires_grad());
        let y = Tensor::new(out, vec![total], tracked);
        if y.requires_grad() {
            let inners: Vec<Rc<Inner>> = parts.iter().map(|p| p.inner.clone()).collect();
            let yi = y.inner.clone();
            self.push(move || {
                let gy = yi.grad.borrow();
                let Some(gy) = gy.as_deref() else { return };
                let mut off = 0;
                for pi in &inners {
                    let n = pi.data.borrow().len();
                    if pi.requires_grad {
                        Tensor::acc_grad(pi, |gp| {
                            for (g, &gv) in gp.iter_mut().zip(&gy[off..off + n]) {
                                *g += gv;
                            }
                        });
                    }
                    off += n;
                }
            });
        }
        Ok(y)
    }

    /// Contiguous sub-vector `[start, start+len)` of a vector.
    pub fn slice(&self, a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
        if a.shape().len() != 1 || len == 0 || start + len > a.numel() {
            return Err(Error::contract(format!(
                "slice [{start}, {start}+{len}) out of range for shape {:?}",
                a.shape()
            )));
        }
        let out = a.inner.data.borrow()[start..start + len].to_vec();
        let y = Tensor::new(out, vec![len], self.track(&[a]));
        if y.requires_grad() {
            let (ai, yi) = (a.inner.clone(), y.inner.clone());
            self.push(move || {
                let gy = yi.grad.borrow();
                let Some(gy) = gy.as_deref() else { return };
                Tensor::acc_grad(&ai, |ga| {
                    for (g, &gv) in ga[start..start + len].iter_mut().zip(gy.iter()) {
                        *g += gv;
                    }
                });
            });
        }
        Ok(y)
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&self, a: &Tensor) -> Tensor {
        let s: f64 = a.inner.data.borrow().iter().sum();
        let y = Tensor::new(vec![s], vec![1], self.track(&[a]));
        if y.requires_grad() {
            let (ai, yi) = (a.inner.clone(), y.inner.clone());
            self.push(move || {
                let gy = yi.grad.borrow();
                let Some(gy) = gy.as_deref() else { return };
                let g = gy[0];
                if g == 0.0 {
                    return;
                }
                Tensor::acc_grad(&ai, |ga| {
                    for gv in ga.iter_mut() {
                        *gv += g;
                    }
                });
            });
        }
        y
    }

    /// Stack equal-length vectors as the rows of a `[n, len]` matrix.
    pub fn stack_rows(&self, rows: &[&Tensor]) -> Result<Tensor> {
        if rows.is_empty() {
            return Err(Error::contract("stack_rows of zero tensors"));
        }
        let len = rows[0].numel();
        for r in rows {
            if r.shape().len() != 1 || r.numel() != len {
                return Err(Error::ShapeMismatch {
                    op: "stack_rows",
                    lhs: rows[0].shape().to_vec(),
                    rhs: r.shape().to_vec(),
                });
            }
        }
        let mut out = Vec::with_capacity(rows.len() * len);
        for r in rows {
            out.extend_from_slice(&r.inner.data.borrow());
        }
        let tracked = self.recording && rows.iter().any(|r| r.requires_grad());
        let y = Tensor::new(out, vec![rows.len(), len], tracked);
        if y.requires_grad() {
            let inners: Vec<Rc<Inner>> = rows.iter().map(|r| r.inner.clone()).collect();
            let yi = y.inner.clone();
            self.push(move || {
                let gy = yi.grad.borrow();
                let Some(gy) = gy.as_deref() else { return };
                for (i, ri) in inners.iter().enumerate() {
                    if ri.requires_grad {
                        Tensor::acc_grad(ri, |gr| {
                            for (g, &gv) in gr.iter_mut().zip(&gy[i * len..(i + 1) * len]) {
                                *g += gv;
                            }
                        });
                    }
                }
            });
        }
        Ok(y)
    }

    /// Row `id` of an embedding matrix `[V, D]`, as a `[D]` vector.
    pub fn embed_row(&self, table: &Tensor, id: usize) -> Result<Tensor> {
        let sh = table.shape();
        if sh.len() != 2 || id >= sh[0] {
            return Err(Error::contract(format!(
                "embedding id {id} out of range for table shape {sh:?}"
            )));
        }
        let d = sh[1];
        let out = table.inner.data.borrow()[id * d..(id + 1) * d].to_vec();
        let y = Tensor::new(out, vec![d], self.track(&[table]));
        if y.requires_grad() {
            let (ti, yi) = (table.inner.clone(), y.inner.clone());
            self.push(move || {
                let gy = yi.grad.borrow();
                let Some(gy) = gy.as_deref() else { return };
                Tensor::acc_grad(&ti, |gt| {
                    for (g, &gv) in gt[id * d..(id + 1) * d].iter_mut().zip(gy.iter()) {
                        *g += gv;
                    }
                });
            });
        }
        Ok(y)
    }

    /// Multiply by a fixed 0/(1/(1-p)) mask. Backward scales by the mask.
    pub fn apply_mask(&self, a: &Tensor, mask: Vec<f64>) -> Result<Tensor> {
        if mask.len() != a.numel() {
            return Err(Error::contract(format!(
                "mask length {} does not match tensor shape {:?}",
                mask.len(),
                a.shape()
            )));
        }
        let out: Vec<f64> = a
            .inner
            .data
            .borrow()
            .iter()
            .zip(mask.iter())
            .map(|(&x, &m)| x * m)
            .collect();
        let y = Tensor::new(out, a.shape().to_vec(), self.track(&[a]));
        if y.requires_grad() {
            let (ai, yi) = (a.inner.clone(), y.inner.clone());
            self.push(move || {
                let gy = yi.grad.borrow();
                let Some(gy) = gy.as_deref() else { return };
                Tensor::acc_grad(&ai, |ga| {
                    for ((g, &gv), &m) in ga.iter_mut().zip(gy.iter()).zip(mask.iter()) {
                        *g += gv * m;
                    }
                });
            });
        }
        Ok(y)
    }

    /// Inverted dropout: keeps each entry with probability `1-p` and scales
    /// survivors by `1/(1-p)`, so evaluation needs no rescale. `p = 0` is the
    /// identity.
    pub fn dropout(&self, a: &Tensor, p: f64, rng: &mut impl Rng) -> Result<Tensor> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::contract(format!(
                "dropout rate must satisfy 0 <= p < 1, got {p}"
            )));
        }
        if p == 0.0 {
            return Ok(a.clone());
        }
        let keep = 1.0 - p;
        let scale = 1.0 / keep;
        let mask: Vec<f64> = (0..a.numel())
            .map(|_| if rng.gen::<f64>() < keep { scale } else { 0.0 })
            .collect();
        self.apply_mask(a, mask)
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}
