//! Verify the autodiff engine against central finite differences, at f32 and
//! through the f64 instantiation of the same graph code.
//!
//! ```bash
//! cargo run --release --example gradient_check
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use transfer_bench::model::{build_spritz1, forward_graph, Model};
use transfer_bench::tensor::{gradcheck, Element, Graph, Tensor};

fn check<E: Element>(model: &Model, label: &str, h: f64, min_grad: f64) {
    let params = model.params_as::<E>();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let data: Vec<E> =
        (0..64 * 64).map(|_| E::from_f64(rng.gen_range(0.2..0.8))).collect();
    let x = Tensor::<E>::new([1usize, 1, 64, 64], data).unwrap();

    let mut g = Graph::<E>::new();
    let mut xt = x.clone();
    xt.set_requires_grad(true);
    let input = g.leaf(xt);
    let logits = forward_graph(&model.spec, &params, &mut g, input).unwrap();
    let loss = g.softmax_xent(logits, &[0]).unwrap();
    g.backward(loss).unwrap();
    let grad: Vec<E> = g.grad(input).unwrap().to_vec();

    let mut eval = |v: &[E]| {
        let mut g = Graph::<E>::new();
        let input = g.leaf(Tensor::new([1usize, 1, 64, 64], v.to_vec()).unwrap());
        let logits = forward_graph(&model.spec, &params, &mut g, input).unwrap();
        let loss = g.softmax_xent(logits, &[0]).unwrap();
        g.value(loss).data()[0]
    };
    let coords: Vec<usize> = (0..40).map(|_| rng.gen_range(0..64 * 64)).collect();
    let (worst, checked) = gradcheck::max_rel_err_over(&mut eval, x.data(), &grad, &coords, h, min_grad);
    println!("{label}: checked {checked} coordinates, worst relative error {worst:.3e}");
}

fn main() {
    let model = Model::init(&build_spritz1(), 7).unwrap();
    check::<f32>(&model, "spritz1 @ f32 (h = 1e-3)", 1e-3, 5e-3);
    check::<f64>(&model, "spritz1 @ f64 (h = 1e-6)", 1e-6, 1e-8);
}
