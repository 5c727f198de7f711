//! Compares hand-written backpropagation against central differences.
//!
//!     cargo run --example gradient_check -- [trials] [seed]

use qclass::numerics::{finite_difference_grad, max_relative_error, DEFAULT_FD_EPS};
use qclass::training::{gradient_check, GRADCHECK_TOLERANCE};
use qclass::{Matrix, ModelConfig, QcnnModel, Rng, SentenceMatrix};

fn main() -> qclass::Result<()> {
    let mut args = std::env::args().skip(1);
    let trials = args
        .next()
        .map_or(20, |a| a.parse().expect("trials must be an integer"));
    let seed = args
        .next()
        .map_or(1, |a| a.parse().expect("seed must be an integer"));

    // One model, every parameter, by hand.
    let cfg = ModelConfig {
        filters: 2,
        hidden: 4,
        heights: vec![2, 3],
        ..ModelConfig::new(3, 3)
    };
    let mut rng = Rng::new(seed);
    let model = QcnnModel::new(cfg, &mut rng)?;
    let values = Matrix::from_vec(4, 3, rng.normal(0.0, 1.0, 12)?)?;
    let sentence = SentenceMatrix::from_matrix(values, vec![String::new(); 4])?;
    let target = 1;

    let (_, grads) = model.loss_and_gradients(&sentence, target, None)?;
    let mut probe = model.clone();
    let numeric = finite_difference_grad(
        |theta| {
            probe.set_flat_params(theta).expect("same length");
            let p = probe.probabilities(&sentence).expect("shapes match");
            -p[target].max(1e-12).ln()
        },
        &model.flat_params(),
        DEFAULT_FD_EPS,
    )?;
    println!(
        "{} parameters, max relative error {:.3e}",
        model.param_count(),
        max_relative_error(&grads.flatten(), &numeric)
    );

    // The randomized harness behind `qclass gradcheck`.
    let worst = gradient_check(trials, seed)?;
    let verdict = if worst < GRADCHECK_TOLERANCE {
        "PASS"
    } else {
        "FAIL"
    };
    println!("{trials} random trials, worst relative error {worst:.3e}: {verdict}");
    Ok(())
}
