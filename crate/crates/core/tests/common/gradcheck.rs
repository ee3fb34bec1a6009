//! Central finite-difference gradient checking at 64 bits.

use xmodal_core::loss::{third_tower_graph, vicreg_graph, TowerWeights, VicregWeights};
use xmodal_core::rng::{normal, rng_from_seed, XRng};
use xmodal_core::tensor::{Graph, Tensor, Var};

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const SEEDS: u64 = 20;

pub fn rand_tensor(rng: &mut XRng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new((0..n).map(|_| normal(rng)).collect(), shape.to_vec()).unwrap()
}

pub fn positive_tensor(rng: &mut XRng, shape: &[usize]) -> Tensor<f64> {
    rand_tensor(rng, shape).map(|x| 0.5 + x.abs())
}

/// Scalar objective: `sum(f(inputs) * probe)` with a fixed random probe.
pub fn objective(
    f: &dyn Fn(&mut Graph<f64>, &[Var]) -> Var,
    inputs: &[Tensor<f64>],
    probe_seed: u64,
) -> (Graph<f64>, Vec<Var>, Var) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let y = f(&mut g, &vars);
    let shape = g.shape(y).to_vec();
    let probe = rand_tensor(&mut rng_from_seed(probe_seed), &shape);
    let p = g.constant(probe);
    let yp = g.mul(y, p).unwrap();
    let loss = g.sum(yp);
    (g, vars, loss)
}

pub fn max_rel_error(f: &dyn Fn(&mut Graph<f64>, &[Var]) -> Var, inputs: &[Tensor<f64>], probe_seed: u64) -> f64 {
    let (g, vars, loss) = objective(f, inputs, probe_seed);
    let grads = g.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]);
        for i in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += H;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= H;
            let (gp, _, lp) = objective(f, &plus, probe_seed);
            let (gm, _, lm) = objective(f, &minus, probe_seed);
            let numeric = (gp.value(lp).item() - gm.value(lm).item()) / (2.0 * H);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(err);
        }
    }
    worst
}

pub type Case = (&'static str, Box<dyn Fn(&mut XRng) -> Vec<Tensor<f64>>>, Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Var>);

pub fn cases() -> Vec<Case> {
    vec![
        ("add", Box::new(|r| vec![rand_tensor(r, &[3, 4]), rand_tensor(r, &[3, 4])]), Box::new(|g, v| g.add(v[0], v[1]).unwrap())),
        ("sub", Box::new(|r| vec![rand_tensor(r, &[3, 4]), rand_tensor(r, &[3, 4])]), Box::new(|g, v| g.sub(v[0], v[1]).unwrap())),
        ("mul", Box::new(|r| vec![rand_tensor(r, &[3, 4]), rand_tensor(r, &[3, 4])]), Box::new(|g, v| g.mul(v[0], v[1]).unwrap())),
        ("scale", Box::new(|r| vec![rand_tensor(r, &[2, 5])]), Box::new(|g, v| g.scale(v[0], -1.7))),
        ("add_scalar", Box::new(|r| vec![rand_tensor(r, &[2, 5])]), Box::new(|g, v| g.add_scalar(v[0], 0.3))),
        ("add_row", Box::new(|r| vec![rand_tensor(r, &[3, 4]), rand_tensor(r, &[4])]), Box::new(|g, v| g.add_row(v[0], v[1]).unwrap())),
        ("mul_row", Box::new(|r| vec![rand_tensor(r, &[3, 4]), rand_tensor(r, &[1, 4])]), Box::new(|g, v| g.mul_row(v[0], v[1]).unwrap())),
        ("mul_col", Box::new(|r| vec![rand_tensor(r, &[3, 4]), rand_tensor(r, &[3, 1])]), Box::new(|g, v| g.mul_col(v[0], v[1]).unwrap())),
        ("matmul", Box::new(|r| vec![rand_tensor(r, &[3, 4]), rand_tensor(r, &[4, 2])]), Box::new(|g, v| g.matmul(v[0], v[1]).unwrap())),
        ("transpose", Box::new(|r| vec![rand_tensor(r, &[3, 4])]), Box::new(|g, v| g.transpose(v[0]).unwrap())),
        ("gelu", Box::new(|r| vec![rand_tensor(r, &[3, 4])]), Box::new(|g, v| g.gelu(v[0]))),
        ("relu", Box::new(|r| vec![rand_tensor(r, &[3, 4])]), Box::new(|g, v| g.relu(v[0]))),
        ("sqrt", Box::new(|r| vec![positive_tensor(r, &[3, 4])]), Box::new(|g, v| g.sqrt(v[0]))),
        ("square", Box::new(|r| vec![rand_tensor(r, &[3, 4])]), Box::new(|g, v| g.square(v[0]))),
        ("ln", Box::new(|r| vec![positive_tensor(r, &[3, 4])]), Box::new(|g, v| g.ln(v[0]))),
        ("softmax", Box::new(|r| vec![rand_tensor(r, &[3, 5])]), Box::new(|g, v| g.softmax(v[0], None).unwrap())),
        (
            "softmax_masked",
            Box::new(|r| vec![rand_tensor(r, &[3, 5])]),
            Box::new(|g, v| g.softmax(v[0], Some(&[true, false, true, true, false])).unwrap()),
        ),
        ("normalize_rows", Box::new(|r| vec![rand_tensor(r, &[3, 6])]), Box::new(|g, v| g.normalize_rows(v[0], 1e-5).unwrap())),
        ("normalize_cols", Box::new(|r| vec![rand_tensor(r, &[5, 3])]), Box::new(|g, v| g.normalize_cols(v[0], 1e-5).unwrap())),
        ("group_normalize", Box::new(|r| vec![rand_tensor(r, &[4, 6])]), Box::new(|g, v| g.group_normalize(v[0], 3, 1e-5).unwrap())),
        ("mean_rows", Box::new(|r| vec![rand_tensor(r, &[4, 3])]), Box::new(|g, v| g.mean_rows(v[0]).unwrap())),
        (
            "masked_mean_rows",
            Box::new(|r| vec![rand_tensor(r, &[4, 3])]),
            Box::new(|g, v| g.masked_mean_rows(v[0], &[true, false, true, true]).unwrap()),
        ),
        ("sum", Box::new(|r| vec![rand_tensor(r, &[4, 3])]), Box::new(|g, v| g.sum(v[0]))),
        ("gather", Box::new(|r| vec![rand_tensor(r, &[5, 3])]), Box::new(|g, v| g.gather(v[0], &[4, 0, 4, 2]).unwrap())),
        (
            "concat_cols",
            Box::new(|r| vec![rand_tensor(r, &[3, 2]), rand_tensor(r, &[3, 4])]),
            Box::new(|g, v| g.concat_cols(&[v[0], v[1]]).unwrap()),
        ),
        (
            "concat_rows",
            Box::new(|r| vec![rand_tensor(r, &[2, 3]), rand_tensor(r, &[1, 3])]),
            Box::new(|g, v| g.concat_rows(&[v[0], v[1]]).unwrap()),
        ),
        ("slice_cols", Box::new(|r| vec![rand_tensor(r, &[3, 6])]), Box::new(|g, v| g.slice_cols(v[0], 1, 4).unwrap())),
        ("im2col", Box::new(|r| vec![rand_tensor(r, &[11, 2])]), Box::new(|g, v| g.im2col(v[0], 3, 2, 1).unwrap())),
    ]
}

pub fn scaled_tensor(rng: &mut XRng, shape: &[usize], s: f64) -> Tensor<f64> {
    rand_tensor(rng, shape).map(|x| s * x)
}

/// The full VICReg objective with the variance hinge active (small spread)
/// and inactive (large spread), and the three-tower composite.
pub fn loss_cases() -> Vec<Case> {
    let w = VicregWeights::default();
    vec![
        (
            "vicreg_hinge_active",
            Box::new(|r| vec![scaled_tensor(r, &[8, 4], 0.3), scaled_tensor(r, &[8, 4], 0.3)]),
            Box::new(move |g, v| vicreg_graph(g, v[0], v[1], &w).unwrap().total),
        ),
        (
            "vicreg_hinge_inactive",
            Box::new(|r| vec![scaled_tensor(r, &[8, 4], 3.0), scaled_tensor(r, &[8, 4], 3.0)]),
            Box::new(move |g, v| vicreg_graph(g, v[0], v[1], &w).unwrap().total),
        ),
        (
            "third_tower",
            Box::new(|r| (0..3).map(|_| scaled_tensor(r, &[6, 3], 0.3)).collect()),
            Box::new(move |g, v| {
                let tw = TowerWeights { alpha: 0.5, beta: 0.25, direct: true };
                third_tower_graph(g, v[0], v[1], v[2], tw, &w).unwrap().0
            }),
        ),
    ]
}

/// Worst relative error of one case over seeds `0..seeds`.
pub fn worst_over_seeds(case: &Case, seeds: u64) -> f64 {
    let (_, make, f) = case;
    (0..seeds)
        .map(|seed| max_rel_error(f.as_ref(), &make(&mut rng_from_seed(1000 + seed)), 77 + seed))
        .fold(0.0, f64::max)
}

