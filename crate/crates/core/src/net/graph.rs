//! Single-sample reverse-mode tape over `[C][H][W]` feature maps.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    Conv {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
        /// im2col of the input, `[Ci*k*k][Ho*Wo]`.
        cols: Vec<f64>,
    },
    Leaky { x: NodeId, slope: f64 },
    Add(NodeId, NodeId),
    Scale { x: NodeId, s: f64 },
    Upsample2(NodeId),
    Concat(NodeId, NodeId),
    /// Zero-pad at the bottom and right.
    Pad(NodeId),
    /// Keep the top-left corner.
    Crop(NodeId),
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    grad: Vec<f64>,
    needs_grad: bool,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(usize, NodeId)>,
}

fn chw(shape: &[usize]) -> (usize, usize, usize) {
    (shape[0], shape[1], shape[2])
}

fn im2col(x: &[f64], (c, h, w): (usize, usize, usize), k: usize, stride: usize, pad: usize, ho: usize, wo: usize) -> Vec<f64> {
    let p = ho * wo;
    let mut cols = vec![0.0; c * k * k * p];
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..][..w];
                    let dst = &mut row[oy * wo..][..wo];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im_add(cols: &[f64], dx: &mut [f64], (c, h, w): (usize, usize, usize), k: usize, stride: usize, pad: usize, ho: usize, wo: usize) {
    let p = ho * wo;
    for ci in 0..c {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..][..w];
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `c (m x n) = beta * c + a (m x k) * b (k x n)` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], rsa: usize, csa: usize, b: &[f64], rsb: usize, csb: usize, beta: f64, c: &mut [f64]) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    // SAFETY: strides and dimensions describe in-bounds views of the
    // slices; callers pass buffers sized for the shapes they name.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn grad_buf(n: &mut Node) -> &mut [f64] {
    if n.grad.is_empty() {
        n.grad = vec![0.0; n.value.len()];
    }
    &mut n.grad
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, needs_grad: bool, op: Op) -> NodeId {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            grad: Vec::new(),
            needs_grad,
            op,
        });
        self.nodes.len() - 1
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i].needs_grad)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].shape
    }

    /// Gradient after [`Graph::backward`]; empty if nothing reached the node.
    pub fn grad(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].grad
    }

    /// A constant input.
    pub fn input(&mut self, t: &Tensor) -> NodeId {
        self.push(t.shape.clone(), t.data.clone(), false, Op::Leaf)
    }

    /// A constant input whose gradient is still recorded.
    pub fn variable(&mut self, t: &Tensor) -> NodeId {
        self.push(t.shape.clone(), t.data.clone(), true, Op::Leaf)
    }

    /// Leaf bound to parameter `index`; repeated calls return the same node.
    pub fn param(&mut self, index: usize, t: &Tensor) -> NodeId {
        if let Some(&(_, id)) = self.params.iter().find(|(i, _)| *i == index) {
            return id;
        }
        let id = self.push(t.shape.clone(), t.data.clone(), true, Op::Param);
        self.params.push((index, id));
        id
    }

    /// Parameter leaves as `(parameter index, node)`.
    pub fn params(&self) -> &[(usize, NodeId)] {
        &self.params
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        let xs = self.nodes[x].shape.clone();
        let ws = self.nodes[w].shape.clone();
        let bs = self.nodes[b].shape.clone();
        if xs.len() != 3 || ws.len() != 4 || ws[1] != xs[0] || ws[2] != ws[3] || bs != [ws[0]] {
            return Err(Error::ShapeMismatch { expected: ws, got: xs });
        }
        let (c, h, wd) = chw(&xs);
        let (co, k) = (ws[0], ws[2]);
        if stride == 0 || h + 2 * pad < k || wd + 2 * pad < k {
            return Err(Error::ShapeMismatch { expected: ws, got: xs });
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let p = ho * wo;
        let kk = c * k * k;
        let cols = im2col(&self.nodes[x].value, (c, h, wd), k, stride, pad, ho, wo);
        let mut out = vec![0.0; co * p];
        let bias = &self.nodes[b].value;
        for (o, row) in out.chunks_mut(p).enumerate() {
            row.fill(bias[o]);
        }
        gemm(co, kk, p, &self.nodes[w].value, kk, 1, &cols, p, 1, 1.0, &mut out);
        let needs = self.needs(&[x, w, b]);
        Ok(self.push(
            vec![co, ho, wo],
            out,
            needs,
            Op::Conv {
                x,
                w,
                b,
                stride,
                pad,
                cols: if needs { cols } else { Vec::new() },
            },
        ))
    }

    pub fn leaky(&mut self, x: NodeId, slope: f64) -> NodeId {
        let v = self.nodes[x]
            .value
            .iter()
            .map(|&a| if a > 0.0 { a } else { slope * a })
            .collect();
        let needs = self.needs(&[x]);
        self.push(self.nodes[x].shape.clone(), v, needs, Op::Leaky { x, slope })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.nodes[a].shape != self.nodes[b].shape {
            return Err(Error::ShapeMismatch {
                expected: self.nodes[a].shape.clone(),
                got: self.nodes[b].shape.clone(),
            });
        }
        let v = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(p, q)| p + q)
            .collect();
        let needs = self.needs(&[a, b]);
        Ok(self.push(self.nodes[a].shape.clone(), v, needs, Op::Add(a, b)))
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> NodeId {
        let v = self.nodes[x].value.iter().map(|a| a * s).collect();
        let needs = self.needs(&[x]);
        self.push(self.nodes[x].shape.clone(), v, needs, Op::Scale { x, s })
    }

    /// Nearest-neighbour upsampling by two.
    pub fn upsample2(&mut self, x: NodeId) -> NodeId {
        let (c, h, w) = chw(&self.nodes[x].shape);
        let src = &self.nodes[x].value;
        let mut v = vec![0.0; c * 4 * h * w];
        for ci in 0..c {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    v[(ci * 2 * h + y) * 2 * w + xx] = src[(ci * h + y / 2) * w + xx / 2];
                }
            }
        }
        let needs = self.needs(&[x]);
        self.push(vec![c, 2 * h, 2 * w], v, needs, Op::Upsample2(x))
    }

    /// Channel concatenation.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (&self.nodes[a].shape, &self.nodes[b].shape);
        if sa[1..] != sb[1..] {
            return Err(Error::ShapeMismatch {
                expected: sa.clone(),
                got: sb.clone(),
            });
        }
        let shape = vec![sa[0] + sb[0], sa[1], sa[2]];
        let mut v = self.nodes[a].value.clone();
        v.extend_from_slice(&self.nodes[b].value);
        let needs = self.needs(&[a, b]);
        Ok(self.push(shape, v, needs, Op::Concat(a, b)))
    }

    pub fn pad_to(&mut self, x: NodeId, h2: usize, w2: usize) -> NodeId {
        let (c, h, w) = chw(&self.nodes[x].shape);
        assert!(h2 >= h && w2 >= w);
        if (h2, w2) == (h, w) {
            return x;
        }
        let mut v = vec![0.0; c * h2 * w2];
        for ci in 0..c {
            for y in 0..h {
                v[(ci * h2 + y) * w2..][..w].copy_from_slice(&self.nodes[x].value[(ci * h + y) * w..][..w]);
            }
        }
        let needs = self.needs(&[x]);
        self.push(vec![c, h2, w2], v, needs, Op::Pad(x))
    }

    pub fn crop_to(&mut self, x: NodeId, h2: usize, w2: usize) -> NodeId {
        let (c, h, w) = chw(&self.nodes[x].shape);
        assert!(h2 <= h && w2 <= w);
        if (h2, w2) == (h, w) {
            return x;
        }
        let mut v = vec![0.0; c * h2 * w2];
        for ci in 0..c {
            for y in 0..h2 {
                v[(ci * h2 + y) * w2..][..w2].copy_from_slice(&self.nodes[x].value[(ci * h + y) * w..][..w2]);
            }
        }
        let needs = self.needs(&[x]);
        self.push(vec![c, h2, w2], v, needs, Op::Crop(x))
    }

    /// Reverse sweep from seed gradients on output nodes.
    pub fn backward(&mut self, seeds: &[(NodeId, Vec<f64>)]) -> Result<()> {
        for node in &mut self.nodes {
            node.grad.clear();
        }
        for (id, g) in seeds {
            let n = &mut self.nodes[*id];
            if g.len() != n.value.len() {
                return Err(Error::ShapeMismatch {
                    expected: n.shape.clone(),
                    got: vec![g.len()],
                });
            }
            if n.grad.is_empty() {
                n.grad = vec![0.0; g.len()];
            }
            n.grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        for i in (0..self.nodes.len()).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            if node.grad.is_empty() || !node.needs_grad {
                continue;
            }
            let g = &node.grad;
            match &node.op {
                Op::Leaf | Op::Param => {}
                Op::Conv { x, w, b, stride, pad, cols } => {
                    let (co, ho, wo) = chw(&node.shape);
                    let p = ho * wo;
                    let xs = before[*x].shape.clone();
                    let k = before[*w].shape[2];
                    let kk = xs[0] * k * k;
                    if before[*b].needs_grad {
                        let db = grad_buf(&mut before[*b]);
                        for (o, row) in g.chunks(p).enumerate() {
                            db[o] += row.iter().sum::<f64>();
                        }
                    }
                    if before[*w].needs_grad {
                        let dw = grad_buf(&mut before[*w]);
                        gemm(co, p, kk, g, p, 1, cols, 1, p, 1.0, dw);
                    }
                    if before[*x].needs_grad {
                        let mut dcols = vec![0.0; kk * p];
                        gemm(kk, co, p, &before[*w].value, 1, kk, g, p, 1, 0.0, &mut dcols);
                        let dx = grad_buf(&mut before[*x]);
                        col2im_add(&dcols, dx, chw(&xs), k, *stride, *pad, ho, wo);
                    }
                }
                Op::Leaky { x, slope } => {
                    if before[*x].needs_grad {
                        let n = &mut before[*x];
                        if n.grad.is_empty() {
                            n.grad = vec![0.0; n.value.len()];
                        }
                        for ((d, &gi), &xi) in n.grad.iter_mut().zip(g).zip(&n.value) {
                            *d += if xi > 0.0 { gi } else { slope * gi };
                        }
                    }
                }
                Op::Add(a, b) => {
                    for id in [*a, *b] {
                        if before[id].needs_grad {
                            let d = grad_buf(&mut before[id]);
                            d.iter_mut().zip(g).for_each(|(p, q)| *p += q);
                        }
                    }
                }
                Op::Scale { x, s } => {
                    if before[*x].needs_grad {
                        let d = grad_buf(&mut before[*x]);
                        d.iter_mut().zip(g).for_each(|(p, q)| *p += s * q);
                    }
                }
                Op::Upsample2(x) => {
                    if before[*x].needs_grad {
                        let (c, h, w) = chw(&before[*x].shape);
                        let d = grad_buf(&mut before[*x]);
                        for ci in 0..c {
                            for y in 0..2 * h {
                                for xx in 0..2 * w {
                                    d[(ci * h + y / 2) * w + xx / 2] += g[(ci * 2 * h + y) * 2 * w + xx];
                                }
                            }
                        }
                    }
                }
                Op::Concat(a, b) => {
                    let na = before[*a].value.len();
                    for (id, part) in [(*a, &g[..na]), (*b, &g[na..])] {
                        if before[id].needs_grad {
                            let d = grad_buf(&mut before[id]);
                            d.iter_mut().zip(part).for_each(|(p, q)| *p += q);
                        }
                    }
                }
                Op::Pad(x) => {
                    if before[*x].needs_grad {
                        let (c, h, w) = chw(&before[*x].shape);
                        let (_, h2, w2) = chw(&node.shape);
                        let d = grad_buf(&mut before[*x]);
                        for ci in 0..c {
                            for y in 0..h {
                                for xx in 0..w {
                                    d[(ci * h + y) * w + xx] += g[(ci * h2 + y) * w2 + xx];
                                }
                            }
                        }
                    }
                }
                Op::Crop(x) => {
                    if before[*x].needs_grad {
                        let (c, h, w) = chw(&before[*x].shape);
                        let (_, h2, w2) = chw(&node.shape);
                        let d = grad_buf(&mut before[*x]);
                        for ci in 0..c {
                            for y in 0..h2 {
                                for xx in 0..w2 {
                                    d[(ci * h + y) * w + xx] += g[(ci * h2 + y) * w2 + xx];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
