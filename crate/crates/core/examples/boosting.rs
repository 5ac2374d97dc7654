//! Gradient-boosted trees on a toy three-class problem: loss per round,
//! accuracy, and the shape of the fitted trees.
//!
//!     cargo run --release --example boosting

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pshop::classifier::{ensemble_fit_with_history, predict_proba, BoostParams};
use pshop::volume::RowMatrix;

fn sample(n: usize, seed: u64) -> (RowMatrix, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * 4);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f32 = rng.random_range(-1.0..1.0);
        let y: f32 = rng.random_range(-1.0..1.0);
        let r = (x * x + y * y).sqrt();
        labels.push(if r < 0.4 { 0 } else if x > y { 1 } else { 2 });
        // two informative and two noise columns
        data.extend([x, y, rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
    }
    (RowMatrix::new(n, 4, data).expect("shape"), labels)
}

fn accuracy(p: &RowMatrix, labels: &[u8]) -> f64 {
    let hits = p
        .iter_rows()
        .zip(labels)
        .filter(|(row, &l)| {
            let best = (0..row.len()).fold(0, |b, k| if row[k] > row[b] { k } else { b });
            best == l as usize
        })
        .count();
    hits as f64 / labels.len() as f64
}

fn main() -> pshop::Result<()> {
    let (x, y) = sample(4000, 1);
    let (xt, yt) = sample(2000, 2);
    let params = BoostParams {
        n_rounds: 60,
        max_depth: 4,
        ..BoostParams::default()
    };
    let (model, history) = ensemble_fit_with_history(&x, &y, 3, &params)?;
    for (round, loss) in history.train_loss.iter().enumerate().step_by(10) {
        println!("round {round:>3}: training loss {loss:.4}");
    }
    println!("train accuracy {:.4}", accuracy(&predict_proba(&model, &x)?, &y));
    println!("test accuracy  {:.4}", accuracy(&predict_proba(&model, &xt)?, &yt));
    let trees: Vec<_> = model.all_trees().collect();
    let splits: usize = trees.iter().map(|t| t.n_splits()).sum();
    let depth = trees.iter().map(|t| t.mean_leaf_depth()).sum::<f64>() / trees.len() as f64;
    println!("{} trees, {splits} splits, mean leaf depth {depth:.2}", trees.len());
    Ok(())
}
