//! Central finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::matrix::Matrix;
use super::params::ParameterStore;

#[derive(Clone, Debug)]
pub struct CoordCheck {
    pub name: String,
    pub row: usize,
    pub col: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tol: f64,
    pub checked: usize,
    pub max_rel_err: f64,
    /// Worst offenders, highest relative error first.
    pub worst: Vec<CoordCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol
    }
}

/// Compare analytic gradients against central differences of `loss_fn`.
///
/// Samples at least `min_coords` parameter coordinates, spread over all
/// parameters that have an analytic gradient entry; the store is perturbed in
/// place and restored. `loss_fn` must be deterministic.
pub fn finite_difference_check(
    store: &mut ParameterStore,
    mut loss_fn: impl FnMut(&ParameterStore) -> f64,
    analytic: &[(String, Matrix)],
    min_coords: usize,
    eps: f64,
    tol: f64,
    seed: u64,
) -> GradCheckReport {
    assert!(!analytic.is_empty(), "no analytic gradients supplied");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_param = min_coords.div_ceil(analytic.len()).max(1);

    let mut checks: Vec<CoordCheck> = Vec::new();
    for (name, grad) in analytic {
        let (rows, cols) = grad.shape();
        for _ in 0..per_param.min(rows * cols) {
            let r = rng.gen_range(0..rows);
            let c = rng.gen_range(0..cols);
            let original = store.get(name).at(r, c);

            *store.get_mut(name).at_mut(r, c) = original + eps;
            let plus = loss_fn(store);
            *store.get_mut(name).at_mut(r, c) = original - eps;
            let minus = loss_fn(store);
            *store.get_mut(name).at_mut(r, c) = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.at(r, c);
            let rel_err = (a - numeric).abs() / numeric.abs().max(1.0);
            checks.push(CoordCheck { name: name.clone(), row: r, col: c, analytic: a, numeric, rel_err });
        }
    }

    checks.sort_by(|a, b| b.rel_err.total_cmp(&a.rel_err));
    let max_rel_err = checks.first().map(|c| c.rel_err).unwrap_or(0.0);
    let checked = checks.len();
    checks.truncate(10);
    GradCheckReport { tol, checked, max_rel_err, worst: checks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::graph::{Graph, NodeId};

    const OP_TOL: f64 = 1e-6;
    const EPS: f64 = 1e-5;

    fn rand_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::uniform(rows, cols, -1.0, 1.0, rng)
    }

    /// Reduce any node to a scalar through a fixed random projection, so the
    /// finite-difference check exercises non-trivial output gradients.
    fn project(g: &mut Graph, y: NodeId, rng: &mut ChaCha8Rng) -> NodeId {
        let (rows, cols) = g.value(y).shape();
        let proj = rand_matrix(rows, cols, rng);
        let weighted = g.hadamard_rows(y, proj);
        g.sum_all(weighted)
    }

    /// Run the checker for a single primitive: `build` maps the 3x4 parameter
    /// node to the op under test.
    fn check_primitive(name: &str, build: impl Fn(&mut Graph, NodeId) -> NodeId) {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
        let mut store = ParameterStore::new(1);
        store.add("x", rand_matrix(3, 4, &mut rng));
        let proj_seed: u64 = rng.gen();

        let run = |store: &ParameterStore| {
            let mut g = Graph::new();
            let x = g.param(store, "x");
            let y = build(&mut g, x);
            let mut proj_rng = ChaCha8Rng::seed_from_u64(proj_seed);
            let loss = project(&mut g, y, &mut proj_rng);
            (g, loss)
        };

        let (mut g, loss) = run(&store);
        g.backward(loss);
        let grads = g.param_grads();

        let report = finite_difference_check(
            &mut store,
            |s| {
                let (g, loss) = run(s);
                g.scalar(loss)
            },
            &grads,
            12,
            EPS,
            OP_TOL,
            42,
        );
        assert!(
            report.passed(),
            "{name}: max relative error {:.3e} (tol {OP_TOL:.0e}), worst {:?}",
            report.max_rel_err,
            report.worst.first()
        );
    }

    #[test]
    fn matmul_left_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rhs = rand_matrix(4, 5, &mut rng);
        check_primitive("matmul-left", move |g, x| {
            let b = g.input(rhs.clone());
            g.matmul(x, b)
        });
    }

    #[test]
    fn matmul_right_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let lhs = rand_matrix(5, 3, &mut rng);
        check_primitive("matmul-right", move |g, x| {
            let a = g.input(lhs.clone());
            g.matmul(a, x)
        });
    }

    #[test]
    fn transpose_gradient() {
        check_primitive("transpose", |g, x| g.transpose(x));
    }

    #[test]
    fn add_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let other = rand_matrix(3, 4, &mut rng);
        check_primitive("add", move |g, x| {
            let b = g.input(other.clone());
            g.add(x, b)
        });
    }

    #[test]
    fn add_bias_gradient_through_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let bias = rand_matrix(1, 4, &mut rng);
        check_primitive("add_bias-x", move |g, x| {
            let b = g.input(bias.clone());
            g.add_bias(x, b)
        });
    }

    #[test]
    fn add_bias_gradient_through_bias() {
        // Bias is the checked parameter here, broadcast over a 3-row input.
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut store = ParameterStore::new(1);
        store.add("x", rand_matrix(1, 4, &mut rng));
        let base = rand_matrix(3, 4, &mut rng);
        let proj = rand_matrix(3, 4, &mut rng);

        let run = |store: &ParameterStore| {
            let mut g = Graph::new();
            let b = g.param(store, "x");
            let a = g.input(base.clone());
            let y = g.add_bias(a, b);
            let weighted = g.hadamard_rows(y, proj.clone());
            let loss = g.sum_all(weighted);
            (g, loss)
        };
        let (mut g, loss) = run(&store);
        g.backward(loss);
        let grads = g.param_grads();
        let report = finite_difference_check(
            &mut store,
            |s| {
                let (g, loss) = run(s);
                g.scalar(loss)
            },
            &grads,
            4,
            EPS,
            OP_TOL,
            42,
        );
        assert!(report.passed(), "add_bias-bias: {:.3e}", report.max_rel_err);
    }

    #[test]
    fn scale_gradient() {
        check_primitive("scale", |g, x| g.scale(x, -1.7));
    }

    #[test]
    fn add_const_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let m = rand_matrix(3, 4, &mut rng);
        check_primitive("add_const", move |g, x| g.add_const(x, &m));
    }

    #[test]
    fn hadamard_rows_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let m = rand_matrix(3, 4, &mut rng);
        check_primitive("hadamard_rows", move |g, x| g.hadamard_rows(x, m.clone()));
    }

    #[test]
    fn tanh_gradient() {
        check_primitive("tanh", |g, x| g.tanh(x));
    }

    #[test]
    fn softmax_rows_gradient() {
        check_primitive("softmax_rows", |g, x| g.softmax_rows(x));
    }

    #[test]
    fn concat_cols_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let other = rand_matrix(3, 2, &mut rng);
        check_primitive("concat_cols", move |g, x| {
            let b = g.input(other.clone());
            g.concat_cols(x, b)
        });
    }

    #[test]
    fn gather_rows_gradient() {
        // Repeated ids make the scatter-add path visible.
        check_primitive("gather_rows", |g, x| g.gather_rows(x, &[2, 0, 2, 1, 0]));
    }

    #[test]
    fn take_row_gradient() {
        check_primitive("take_row", |g, x| g.take_row(x, 1));
    }

    #[test]
    fn sum_all_gradient() {
        check_primitive("sum_all", |g, x| g.sum_all(x));
    }

    #[test]
    fn sum_squares_gradient() {
        check_primitive("sum_squares", |g, x| g.sum_squares(x));
    }

    #[test]
    fn cross_entropy_gradient() {
        check_primitive("cross_entropy", |g, x| g.cross_entropy(x, &[1, -1, 3], -1));
    }

    #[test]
    fn linear_layer_cross_entropy_end_to_end() {
        // Single linear layer + cross-entropy; the checker itself is the
        // oracle here and the bound is far tighter than the op-level one.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut store = ParameterStore::new(9);
        store.add("w", rand_matrix(4, 3, &mut rng));
        store.add("b", rand_matrix(1, 3, &mut rng));
        let x = rand_matrix(2, 4, &mut rng);

        let run = |store: &ParameterStore| {
            let mut g = Graph::new();
            let input = g.input(x.clone());
            let w = g.param(store, "w");
            let b = g.param(store, "b");
            let wx = g.matmul(input, w);
            let logits = g.add_bias(wx, b);
            let loss = g.cross_entropy(logits, &[2, 0], -1);
            (g, loss)
        };
        let (mut g, loss) = run(&store);
        g.backward(loss);
        let grads = g.param_grads();
        let report = finite_difference_check(
            &mut store,
            |s| {
                let (g, loss) = run(s);
                g.scalar(loss)
            },
            &grads,
            15,
            EPS,
            1e-7,
            5,
        );
        assert!(report.passed(), "linear+ce: max rel err {:.3e}", report.max_rel_err);
    }
}
