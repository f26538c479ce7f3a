//! Central finite-difference checks for every autodiff primitive.

use attnmem::autodiff::{Graph, NodeRef};
use attnmem::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Every differentiable primitive of the numeric core.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradOp {
    MatMul,
    MatMulNt,
    Add,
    Scale,
    Gelu,
    LayerNorm,
    SoftmaxCausal,
    SliceCols,
    ConcatCols,
    CrossEntropy,
    Gather,
}

pub const ALL_OPS: [GradOp; 11] = [
    GradOp::MatMul,
    GradOp::MatMulNt,
    GradOp::Add,
    GradOp::Scale,
    GradOp::Gelu,
    GradOp::LayerNorm,
    GradOp::SoftmaxCausal,
    GradOp::SliceCols,
    GradOp::ConcatCols,
    GradOp::CrossEntropy,
    GradOp::Gather,
];

/// One randomized check instance: input tensors plus everything needed to
/// rebuild the scalar loss from scratch.
struct Case {
    op: GradOp,
    inputs: Vec<Tensor>,
    /// constant for Scale, softmax temperature for SoftmaxCausal
    c: f32,
    /// column range for SliceCols
    cols: (usize, usize),
    /// row indices for Gather (with repeats), targets for CrossEntropy
    indices: Vec<u32>,
}

fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data: Vec<f32> = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(&[rows, cols], data).expect("consistent shape")
}

fn rand_vec(rng: &mut ChaCha8Rng, cols: usize) -> Tensor {
    let data: Vec<f32> = (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(&[cols], data).expect("consistent shape")
}

fn make_case(op: GradOp, rng: &mut ChaCha8Rng) -> Case {
    let r = rng.random_range(2..=4usize);
    let k = rng.random_range(2..=5usize);
    let c = rng.random_range(3..=6usize);
    // readout weights that project the op output (shape rows x cols) to a
    // scalar; appended as ordinary inputs so they are checked too. Kept
    // small so the scalar loss stays O(1) and f32 rounding noise in the
    // difference quotient stays far below the comparison threshold.
    let readout = |rng: &mut ChaCha8Rng, rows: usize, cols: usize| {
        let mut l = rand_tensor(rng, 1, rows);
        let mut r = rand_tensor(rng, cols, 1);
        for v in l.data_mut() {
            *v *= 0.3;
        }
        for v in r.data_mut() {
            *v *= 0.3;
        }
        (l, r)
    };
    let mut case = Case { op, inputs: vec![], c: 0.0, cols: (0, 0), indices: vec![] };
    match op {
        GradOp::MatMul => {
            let (l, rr) = readout(rng, r, c);
            case.inputs = vec![rand_tensor(rng, r, k), rand_tensor(rng, k, c), l, rr];
        }
        GradOp::MatMulNt => {
            let (l, rr) = readout(rng, r, c);
            case.inputs = vec![rand_tensor(rng, r, k), rand_tensor(rng, c, k), l, rr];
        }
        GradOp::Add => {
            let (l, rr) = readout(rng, r, c);
            case.inputs = vec![rand_tensor(rng, r, c), rand_tensor(rng, r, c), l, rr];
        }
        GradOp::Scale => {
            let (l, rr) = readout(rng, r, c);
            case.inputs = vec![rand_tensor(rng, r, c), l, rr];
            case.c = rng.random_range(-2.0..2.0);
        }
        GradOp::Gelu => {
            let (l, rr) = readout(rng, r, c);
            case.inputs = vec![rand_tensor(rng, r, c), l, rr];
        }
        GradOp::LayerNorm => {
            // a deterministic ramp keeps every row's variance comfortably
            // away from zero so 1/sigma stays smooth under perturbation
            let mut x = rand_tensor(rng, r, c);
            for i in 0..r {
                for (j, v) in x.row_mut(i).iter_mut().enumerate() {
                    *v += 0.8 * j as f32;
                }
            }
            let (l, rr) = readout(rng, r, c);
            case.inputs = vec![x, rand_vec(rng, c), rand_vec(rng, c), l, rr];
        }
        GradOp::SoftmaxCausal => {
            let (l, rr) = readout(rng, r, r);
            case.inputs = vec![rand_tensor(rng, r, r), l, rr];
            case.c = rng.random_range(0.5..2.0);
        }
        GradOp::SliceCols => {
            let start = rng.random_range(0..c - 1);
            let end = rng.random_range(start + 1..=c);
            let (l, rr) = readout(rng, r, end - start);
            case.inputs = vec![rand_tensor(rng, r, c), l, rr];
            case.cols = (start, end);
        }
        GradOp::ConcatCols => {
            let c2 = rng.random_range(2..=4usize);
            let (l, rr) = readout(rng, r, c + c2);
            case.inputs = vec![rand_tensor(rng, r, c), rand_tensor(rng, r, c2), l, rr];
        }
        GradOp::CrossEntropy => {
            case.inputs = vec![rand_tensor(rng, r, c)];
            case.indices = (0..r).map(|_| rng.random_range(0..c as u32)).collect();
        }
        GradOp::Gather => {
            let (l, rr) = readout(rng, r, c);
            case.inputs = vec![rand_tensor(rng, k, c), l, rr];
            // repeats exercise gradient accumulation into shared rows
            case.indices = (0..r).map(|_| rng.random_range(0..k as u32)).collect();
        }
    }
    case
}

/// Builds the scalar loss for a case from the given leaves. The op output is
/// reduced by `left * y * right` where `left`/`right` are the last two
/// leaves (except CrossEntropy, which is already scalar).
fn build_loss(case: &Case, g: &mut Graph, leaves: &[NodeRef]) -> NodeRef {
    let err = "gradcheck case shapes are consistent by construction";
    let y = match case.op {
        GradOp::MatMul => g.matmul(leaves[0], leaves[1]).expect(err),
        GradOp::MatMulNt => g.matmul_nt(leaves[0], leaves[1]).expect(err),
        GradOp::Add => g.add(leaves[0], leaves[1]).expect(err),
        GradOp::Scale => g.scale(leaves[0], case.c),
        GradOp::Gelu => g.gelu(leaves[0]),
        GradOp::LayerNorm => g
            .layer_norm(leaves[0], leaves[1], leaves[2], attnmem::model::LN_EPS)
            .expect(err),
        GradOp::SoftmaxCausal => g.softmax_causal(leaves[0], case.c).expect(err),
        GradOp::SliceCols => g.slice_cols(leaves[0], case.cols.0, case.cols.1).expect(err),
        GradOp::ConcatCols => g.concat_cols(&[leaves[0], leaves[1]]).expect(err),
        GradOp::CrossEntropy => return g.cross_entropy(leaves[0], &case.indices).expect(err),
        GradOp::Gather => {
            let rows: Vec<usize> = case.indices.iter().map(|&i| i as usize).collect();
            g.gather(leaves[0], &rows).expect(err)
        }
    };
    let left = leaves[leaves.len() - 2];
    let right = leaves[leaves.len() - 1];
    let ly = g.matmul(left, y).expect(err);
    g.matmul(ly, right).expect(err)
}

fn eval_loss(case: &Case, inputs: &[Tensor]) -> f64 {
    let mut g = Graph::new();
    let leaves: Vec<NodeRef> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = build_loss(case, &mut g, &leaves);
    g.value(loss).data()[0] as f64
}

/// Runs one random case of `op`: compares every input coordinate's backward
/// gradient against a central finite difference. Returns the worst relative
/// error (absolute-floored at magnitude 1).
pub fn grad_check(op: GradOp, rng: &mut ChaCha8Rng) -> f64 {
    let case = make_case(op, rng);

    let mut g = Graph::new();
    let leaves: Vec<NodeRef> = case.inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = build_loss(&case, &mut g, &leaves);
    let grads = g.backward(loss).expect("loss is scalar by construction");

    const EPS: f32 = 1e-2;
    let mut worst = 0.0f64;
    for (i, input) in case.inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(leaves[i], input.shape());
        for j in 0..input.numel() {
            let mut plus = case.inputs.clone();
            plus[i].data_mut()[j] += EPS;
            let mut minus = case.inputs.clone();
            minus[i].data_mut()[j] -= EPS;
            let numeric = (eval_loss(&case, &plus) - eval_loss(&case, &minus)) / (2.0 * EPS as f64);
            let a = analytic.data()[j] as f64;
            let err = (numeric - a).abs() / numeric.abs().max(a.abs()).max(1.0);
            worst = worst.max(err);
        }
    }
    worst
}

/// Deterministic full sweep: `cases_per_op` random cases for every
/// primitive. Returns (total cases run, worst relative error seen).
pub fn run_suite(cases_per_op: usize, seed: u64) -> (usize, f64) {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0;
    let mut worst = 0.0f64;
    for &op in ALL_OPS.iter() {
        for _ in 0..cases_per_op {
            worst = worst.max(grad_check(op, &mut rng));
            total += 1;
        }
    }
    (total, worst)
}
