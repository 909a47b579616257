//! Operator kernels. Each takes the node, its resolved inputs (absent
//! optional inputs are `None`) and the model opset, and returns its outputs.

use crate::proto::{Attribute, Node};
use crate::tensor::{broadcast_indices, broadcast_shape, numel, strides, Data, Tensor};

type OpResult = Result<Vec<Tensor>, String>;

/// Operators the interpreter implements, in the default domain.
pub(crate) const SUPPORTED: &[&str] = &[
    "Add",
    "BatchNormalization",
    "Concat",
    "Constant",
    "Conv",
    "Div",
    "Dropout",
    "Flatten",
    "Gemm",
    "GlobalAveragePool",
    "Identity",
    "MatMul",
    "MaxPool",
    "Mul",
    "Relu",
    "Reshape",
    "Sigmoid",
    "Softmax",
    "Sub",
];

pub(crate) fn run(node: &Node, inputs: &[Option<&Tensor>], opset: i64) -> OpResult {
    let out = match node.op_type.as_str() {
        "Add" | "Sub" | "Mul" | "Div" => binary(&node.op_type, req(inputs, 0)?, req(inputs, 1)?)?,
        "BatchNormalization" => batch_norm(node, inputs)?,
        "Concat" => concat(node, inputs)?,
        "Constant" => constant(node)?,
        "Conv" => conv(node, req(inputs, 0)?, req(inputs, 1)?, opt(inputs, 2))?,
        "Dropout" | "Identity" => req(inputs, 0)?.clone(),
        "Flatten" => flatten(node, req(inputs, 0)?)?,
        "Gemm" => gemm(node, req(inputs, 0)?, req(inputs, 1)?, opt(inputs, 2))?,
        "GlobalAveragePool" => global_average_pool(req(inputs, 0)?)?,
        "MatMul" => matmul(req(inputs, 0)?, req(inputs, 1)?)?,
        "MaxPool" => max_pool(node, req(inputs, 0)?)?,
        "Relu" => map_f32(req(inputs, 0)?, |v| v.max(0.0))?,
        "Reshape" => reshape(node, req(inputs, 0)?, req(inputs, 1)?)?,
        "Sigmoid" => map_f32(req(inputs, 0)?, |v| 1.0 / (1.0 + (-v).exp()))?,
        "Softmax" => softmax(node, req(inputs, 0)?, opset)?,
        other => return Err(format!("operator {other} is not supported")),
    };
    Ok(vec![out])
}

fn req<'a>(inputs: &[Option<&'a Tensor>], i: usize) -> Result<&'a Tensor, String> {
    inputs.get(i).copied().flatten().ok_or_else(|| format!("missing input {i}"))
}

fn opt<'a>(inputs: &[Option<&'a Tensor>], i: usize) -> Option<&'a Tensor> {
    inputs.get(i).copied().flatten()
}

impl Node {
    fn attr(&self, name: &str) -> Option<&Attribute> {
        self.attributes.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    fn int(&self, name: &str, default: i64) -> Result<i64, String> {
        match self.attr(name) {
            None => Ok(default),
            Some(Attribute::Int(v)) => Ok(*v),
            Some(a) => Err(format!("attribute {name} should be an int, got {a:?}")),
        }
    }

    fn float(&self, name: &str, default: f32) -> Result<f32, String> {
        match self.attr(name) {
            None => Ok(default),
            Some(Attribute::Float(v)) => Ok(*v),
            Some(a) => Err(format!("attribute {name} should be a float, got {a:?}")),
        }
    }

    fn ints(&self, name: &str) -> Result<Option<&[i64]>, String> {
        match self.attr(name) {
            None => Ok(None),
            Some(Attribute::Ints(v)) => Ok(Some(v)),
            Some(a) => Err(format!("attribute {name} should be ints, got {a:?}")),
        }
    }

    fn string(&self, name: &str) -> Result<Option<&str>, String> {
        match self.attr(name) {
            None => Ok(None),
            Some(Attribute::String(s)) => Ok(Some(s)),
            Some(a) => Err(format!("attribute {name} should be a string, got {a:?}")),
        }
    }

    /// A per-spatial-axis attribute of length `n`, defaulting to `fill`.
    fn spatial(&self, name: &str, n: usize, fill: usize) -> Result<Vec<usize>, String> {
        match self.ints(name)? {
            None => Ok(vec![fill; n]),
            Some(v) if v.len() == n && v.iter().all(|&x| x >= 0) => Ok(v.iter().map(|&x| x as usize).collect()),
            Some(v) => Err(format!("attribute {name} = {v:?} does not fit {n} spatial axes")),
        }
    }
}

/// Resolves a possibly negative axis against `rank` (inclusive when `inclusive`).
fn axis(value: i64, rank: usize, inclusive: bool) -> Result<usize, String> {
    let r = rank as i64 + i64::from(inclusive);
    let a = if value < 0 { value + rank as i64 } else { value };
    if (0..r).contains(&a) {
        Ok(a as usize)
    } else {
        Err(format!("axis {value} out of range for rank {rank}"))
    }
}

fn map_f32(x: &Tensor, f: impl Fn(f32) -> f32) -> Result<Tensor, String> {
    Tensor::from_f32(x.shape.clone(), x.f32s()?.iter().map(|&v| f(v)).collect())
}

fn binary(op: &str, a: &Tensor, b: &Tensor) -> Result<Tensor, String> {
    let shape = broadcast_shape(&a.shape, &b.shape)?;
    let ia = broadcast_indices(&a.shape, &shape);
    let ib = broadcast_indices(&b.shape, &shape);
    match (&a.data, &b.data) {
        (Data::F32(x), Data::F32(y)) => {
            let f: fn(f32, f32) -> f32 = match op {
                "Add" => |p, q| p + q,
                "Sub" => |p, q| p - q,
                "Mul" => |p, q| p * q,
                _ => |p, q| p / q,
            };
            Tensor::from_f32(shape, ia.iter().zip(&ib).map(|(&i, &j)| f(x[i], y[j])).collect())
        }
        (Data::I64(x), Data::I64(y)) => {
            let values = ia
                .iter()
                .zip(&ib)
                .map(|(&i, &j)| match op {
                    "Add" => x[i].checked_add(y[j]),
                    "Sub" => x[i].checked_sub(y[j]),
                    "Mul" => x[i].checked_mul(y[j]),
                    _ => x[i].checked_div(y[j]),
                })
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| format!("integer {op} overflowed or divided by zero"))?;
            Tensor::from_i64(shape, values)
        }
        _ => Err(format!("{op} on mixed element types")),
    }
}

fn constant(node: &Node) -> Result<Tensor, String> {
    let (name, attr) = node.attributes.first().ok_or("Constant without a value")?;
    match (name.as_str(), attr) {
        ("value", Attribute::Tensor(t)) => Ok(t.clone()),
        ("value_float", Attribute::Float(v)) => Tensor::from_f32(vec![], vec![*v]),
        ("value_floats", Attribute::Floats(v)) => Tensor::from_f32(vec![v.len()], v.clone()),
        ("value_int", Attribute::Int(v)) => Tensor::from_i64(vec![], vec![*v]),
        ("value_ints", Attribute::Ints(v)) => Tensor::from_i64(vec![v.len()], v.clone()),
        _ => Err(format!("Constant attribute {name} is not supported")),
    }
}

/// Spatial geometry shared by Conv and MaxPool over NCHW input.
struct Window {
    kernel: [usize; 2],
    strides: [usize; 2],
    dilations: [usize; 2],
    /// Top and left padding.
    begin: [usize; 2],
    out: [usize; 2],
}

impl Window {
    fn new(node: &Node, input: [usize; 2], kernel: [usize; 2], ceil_mode: bool) -> Result<Self, String> {
        let strides = node.spatial("strides", 2, 1)?;
        let dilations = node.spatial("dilations", 2, 1)?;
        if strides.contains(&0) || dilations.contains(&0) {
            return Err("strides and dilations must be positive".into());
        }
        let mut pads = node.spatial("pads", 4, 0)?;
        match node.string("auto_pad")?.unwrap_or("NOTSET") {
            "NOTSET" => {}
            "VALID" => pads = vec![0; 4],
            mode @ ("SAME_UPPER" | "SAME_LOWER") => {
                for i in 0..2 {
                    let out = input[i].div_ceil(strides[i]);
                    let span = (out - 1) * strides[i] + (kernel[i] - 1) * dilations[i] + 1;
                    let total = span.saturating_sub(input[i]);
                    let small = total / 2;
                    let (b, e) = if mode == "SAME_UPPER" { (small, total - small) } else { (total - small, small) };
                    pads[i] = b;
                    pads[i + 2] = e;
                }
            }
            other => return Err(format!("auto_pad {other} is not supported")),
        }
        let mut out = [0; 2];
        for i in 0..2 {
            let padded = input[i] + pads[i] + pads[i + 2];
            let extent = (kernel[i] - 1) * dilations[i] + 1;
            if padded < extent {
                return Err(format!("kernel extent {extent} exceeds padded input {padded}"));
            }
            let span = padded - extent;
            out[i] = if ceil_mode { span.div_ceil(strides[i]) } else { span / strides[i] } + 1;
            // A window may not start inside the trailing padding.
            if ceil_mode && (out[i] - 1) * strides[i] >= input[i] + pads[i] {
                out[i] -= 1;
            }
        }
        Ok(Self {
            kernel,
            strides: [strides[0], strides[1]],
            dilations: [dilations[0], dilations[1]],
            begin: [pads[0], pads[1]],
            out,
        })
    }

    /// Input coordinate for output `o`, kernel tap `k` on axis `i`, if inside.
    fn source(&self, i: usize, o: usize, k: usize, len: usize) -> Option<usize> {
        (o * self.strides[i] + k * self.dilations[i]).checked_sub(self.begin[i]).filter(|&s| s < len)
    }
}

fn nchw(x: &Tensor, op: &str) -> Result<[usize; 4], String> {
    match x.shape[..] {
        [n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(format!("{op} supports 2-D spatial input only, got {x:?}")),
    }
}

fn check_kernel_shape(node: &Node, kernel: [usize; 2]) -> Result<(), String> {
    match node.ints("kernel_shape")? {
        Some(ks) if ks != [kernel[0] as i64, kernel[1] as i64] => {
            Err(format!("kernel_shape {ks:?} disagrees with weights {kernel:?}"))
        }
        _ => Ok(()),
    }
}

fn conv(node: &Node, x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Result<Tensor, String> {
    let [n, c, h, wd] = nchw(x, "Conv")?;
    let [m, cg, kh, kw] = nchw(w, "Conv")?;
    let group = usize::try_from(node.int("group", 1)?).map_err(|_| "negative group")?;
    if group == 0 || c != cg * group || m % group != 0 {
        return Err(format!("Conv channels: input {c}, weight {m}x{cg}, group {group}"));
    }
    check_kernel_shape(node, [kh, kw])?;
    let win = Window::new(node, [h, wd], [kh, kw], false)?;
    let [oh, ow] = win.out;
    let (xs, ws) = (x.f32s()?, w.f32s()?);
    let b = match bias {
        Some(b) if b.len() == m => Some(b.f32s()?),
        Some(b) => return Err(format!("Conv bias {b:?} does not match {m} filters")),
        None => None,
    };
    let per_group = m / group;
    let mut out = vec![0f32; n * m * oh * ow];
    for img in 0..n {
        for oc in 0..m {
            let plane = &mut out[(img * m + oc) * oh * ow..][..oh * ow];
            plane.fill(b.map_or(0.0, |b| b[oc]));
            let first = (oc / per_group) * cg;
            for ic in 0..cg {
                let src = &xs[(img * c + first + ic) * h * wd..][..h * wd];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = ws[((oc * cg + ic) * kh + ky) * kw + kx];
                        for oy in 0..oh {
                            let Some(iy) = win.source(0, oy, ky, h) else { continue };
                            let row = &src[iy * wd..][..wd];
                            let dst = &mut plane[oy * ow..][..ow];
                            for (ox, d) in dst.iter_mut().enumerate() {
                                if let Some(ix) = win.source(1, ox, kx, wd) {
                                    *d += wv * row[ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_f32(vec![n, m, oh, ow], out)
}

fn max_pool(node: &Node, x: &Tensor) -> Result<Tensor, String> {
    if node.outputs.get(1).is_some_and(|o| !o.is_empty()) {
        return Err("MaxPool indices output is not supported".into());
    }
    let [n, c, h, w] = nchw(x, "MaxPool")?;
    let kernel = node.spatial("kernel_shape", 2, 0)?;
    if kernel.contains(&0) {
        return Err("MaxPool needs a positive kernel_shape".into());
    }
    let win = Window::new(node, [h, w], [kernel[0], kernel[1]], node.int("ceil_mode", 0)? != 0)?;
    let [oh, ow] = win.out;
    let xs = x.f32s()?;
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in xs.chunks_exact(h * w) {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                for ky in 0..win.kernel[0] {
                    let Some(iy) = win.source(0, oy, ky, h) else { continue };
                    for kx in 0..win.kernel[1] {
                        if let Some(ix) = win.source(1, ox, kx, w) {
                            best = best.max(plane[iy * w + ix]);
                        }
                    }
                }
                out.push(best);
            }
        }
    }
    Tensor::from_f32(vec![n, c, oh, ow], out)
}

fn global_average_pool(x: &Tensor) -> Result<Tensor, String> {
    if x.rank() < 3 {
        return Err(format!("GlobalAveragePool needs spatial axes, got {x:?}"));
    }
    let spatial = numel(&x.shape[2..]);
    let values = x.f32s()?.chunks_exact(spatial.max(1)).map(|p| p.iter().sum::<f32>() / spatial as f32).collect();
    let mut shape = x.shape[..2].to_vec();
    shape.extend(std::iter::repeat_n(1, x.rank() - 2));
    Tensor::from_f32(shape, values)
}

fn batch_norm(node: &Node, inputs: &[Option<&Tensor>]) -> Result<Tensor, String> {
    let x = req(inputs, 0)?;
    let [scale, bias, mean, var] = [1, 2, 3, 4].map(|i| req(inputs, i).and_then(Tensor::f32s));
    let (scale, bias, mean, var) = (scale?, bias?, mean?, var?);
    let eps = node.float("epsilon", 1e-5)?;
    let c = *x.shape.get(1).ok_or("BatchNormalization needs a channel axis")?;
    if [scale.len(), bias.len(), mean.len(), var.len()] != [c; 4] {
        return Err(format!("BatchNormalization parameters do not match {c} channels"));
    }
    let inner = numel(&x.shape[2..]);
    let mut values = x.f32s()?.to_vec();
    for (i, chunk) in values.chunks_exact_mut(inner.max(1)).enumerate() {
        let ch = i % c;
        let k = scale[ch] / (var[ch] + eps).sqrt();
        chunk.iter_mut().for_each(|v| *v = (*v - mean[ch]) * k + bias[ch]);
    }
    Tensor::from_f32(x.shape.clone(), values)
}

/// `[rows, cols]` view of a matrix operand, transposed on request.
fn matrix(t: &Tensor, transpose: bool, op: &str) -> Result<(usize, usize, Vec<f32>), String> {
    let [r, c] = t.shape[..] else {
        return Err(format!("{op} expects a matrix, got {t:?}"));
    };
    let v = t.f32s()?;
    if !transpose {
        return Ok((r, c, v.to_vec()));
    }
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = v[i * c + j];
        }
    }
    Ok((c, r, out))
}

fn mat_mul(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..][..n];
        for p in 0..k {
            let av = a[i * k + p];
            for (o, &bv) in row.iter_mut().zip(&b[p * n..][..n]) {
                *o += av * bv;
            }
        }
    }
    out
}

fn gemm(node: &Node, a: &Tensor, b: &Tensor, c: Option<&Tensor>) -> Result<Tensor, String> {
    let (m, k, av) = matrix(a, node.int("transA", 0)? != 0, "Gemm")?;
    let (k2, n, bv) = matrix(b, node.int("transB", 0)? != 0, "Gemm")?;
    if k != k2 {
        return Err(format!("Gemm inner dimensions {k} and {k2} differ"));
    }
    let (alpha, beta) = (node.float("alpha", 1.0)?, node.float("beta", 1.0)?);
    let mut out = mat_mul(&av, &bv, m, k, n);
    out.iter_mut().for_each(|v| *v *= alpha);
    if let Some(c) = c {
        if broadcast_shape(&c.shape, &[m, n])? != [m, n] {
            return Err(format!("Gemm bias {c:?} does not broadcast to [{m}, {n}]"));
        }
        let cv = c.f32s()?;
        for (o, i) in out.iter_mut().zip(broadcast_indices(&c.shape, &[m, n])) {
            *o += beta * cv[i];
        }
    }
    Tensor::from_f32(vec![m, n], out)
}

/// Matrix product of an operand of any rank >= 1 with a vector or matrix.
fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, String> {
    let (k2, n, b_vector) = match b.shape[..] {
        [k] => (k, 1, true),
        [k, n] => (k, n, false),
        _ => return Err(format!("MatMul supports a rank 1 or 2 right operand, got {b:?}")),
    };
    let k = *a.shape.last().ok_or("MatMul on a scalar")?;
    if k != k2 {
        return Err(format!("MatMul inner dimensions {k} and {k2} differ"));
    }
    let m = a.len() / k.max(1);
    let out = mat_mul(a.f32s()?, b.f32s()?, m, k, n);
    let mut shape = a.shape[..a.rank() - 1].to_vec();
    if !b_vector {
        shape.push(n);
    }
    Tensor::from_f32(shape, out)
}

fn flatten(node: &Node, x: &Tensor) -> Result<Tensor, String> {
    let a = axis(node.int("axis", 1)?, x.rank(), true)?;
    let shape = vec![numel(&x.shape[..a]), numel(&x.shape[a..])];
    x.clone().reshaped(shape)
}

fn reshape(node: &Node, x: &Tensor, shape: &Tensor) -> Result<Tensor, String> {
    let allow_zero = node.int("allowzero", 0)? != 0;
    let spec = shape.i64s()?;
    let mut out = Vec::with_capacity(spec.len());
    let mut infer = None;
    for (i, &d) in spec.iter().enumerate() {
        match d {
            -1 if infer.is_none() => {
                infer = Some(i);
                out.push(1);
            }
            0 if !allow_zero => out.push(*x.shape.get(i).ok_or("Reshape copies a missing dimension")?),
            d if d >= 0 => out.push(d as usize),
            _ => return Err(format!("Reshape target {spec:?} is invalid")),
        }
    }
    if let Some(i) = infer {
        let known = numel(&out);
        if known == 0 || !x.len().is_multiple_of(known) {
            return Err(format!("cannot infer Reshape {spec:?} from {x:?}"));
        }
        out[i] = x.len() / known;
    }
    x.clone().reshaped(out)
}

fn concat(node: &Node, inputs: &[Option<&Tensor>]) -> Result<Tensor, String> {
    let parts: Vec<&Tensor> = inputs.iter().flatten().copied().collect();
    let first = *parts.first().ok_or("Concat without inputs")?;
    let a = axis(node.int("axis", i64::MIN)?, first.rank(), false)?;
    let mut shape = first.shape.clone();
    shape[a] = 0;
    for p in &parts {
        let same = p.rank() == first.rank() && (0..p.rank()).all(|i| i == a || p.shape[i] == first.shape[i]);
        if !same {
            return Err(format!("Concat inputs {first:?} and {p:?} disagree off axis {a}"));
        }
        shape[a] += p.shape[a];
    }
    let outer = numel(&first.shape[..a]);
    // Interleave per outer index: each part contributes a contiguous block.
    let block = |p: &Tensor| numel(&p.shape[a..]);
    macro_rules! join {
        ($get:ident, $ctor:ident) => {{
            let slices = parts.iter().map(|p| p.$get()).collect::<Result<Vec<_>, _>>()?;
            let mut out = Vec::with_capacity(numel(&shape));
            for o in 0..outer {
                for (p, s) in parts.iter().zip(&slices) {
                    let len = block(p);
                    out.extend_from_slice(&s[o * len..][..len]);
                }
            }
            Tensor::$ctor(shape, out)
        }};
    }
    match first.data {
        Data::F32(_) => join!(f32s, from_f32),
        Data::I64(_) => join!(i64s, from_i64),
    }
}

fn softmax(node: &Node, x: &Tensor, opset: i64) -> Result<Tensor, String> {
    let xs = x.f32s()?;
    let mut out = vec![0.0; xs.len()];
    if opset < 13 {
        // Older opsets coerce to 2-D at `axis` and normalize each row.
        let a = axis(node.int("axis", 1)?, x.rank(), false)?;
        let cols = numel(&x.shape[a..]).max(1);
        for (src, dst) in xs.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
            softmax_strided(src, dst, cols, 1);
        }
    } else {
        let a = axis(node.int("axis", -1)?, x.rank(), false)?;
        let len = x.shape[a];
        let stride = strides(&x.shape)[a];
        let span = len * stride;
        for base in (0..xs.len()).step_by(span.max(1)) {
            for offset in 0..stride {
                let start = base + offset;
                softmax_strided(&xs[start..], &mut out[start..], len, stride);
            }
        }
    }
    Tensor::from_f32(x.shape.clone(), out)
}

fn softmax_strided(src: &[f32], dst: &mut [f32], len: usize, stride: usize) {
    let max = (0..len).map(|i| src[i * stride]).fold(f32::NEG_INFINITY, f32::max);
    let mut total = 0.0;
    for i in 0..len {
        let e = (src[i * stride] - max).exp();
        dst[i * stride] = e;
        total += e;
    }
    for i in 0..len {
        dst[i * stride] /= total;
    }
}
