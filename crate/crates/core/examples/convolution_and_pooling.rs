//! Wide convolution and k-max pooling on a three-word sentence.
//!
//!     cargo run --example convolution_and_pooling

use qclass::network::{k_max_indices, k_max_pool, softmax, wide_convolve};
use qclass::Matrix;

fn main() -> qclass::Result<()> {
    // three tokens, two dimensions
    let sentence = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, -1.0]])?;
    // a bigram kernel
    let kernel = Matrix::from_rows(&[vec![1.0, 1.0], vec![0.5, -1.0]])?;

    let feature_map = wide_convolve(&sentence, &kernel, 0.0)?;
    println!(
        "feature map ({} = 3 + 2 - 1 positions): {feature_map:?}",
        feature_map.len()
    );

    let activated: Vec<f64> = feature_map.iter().map(|x| x.tanh()).collect();
    let idx = k_max_indices(&activated, 2)?;
    println!(
        "2-max keeps positions {idx:?}: {:?}",
        k_max_pool(&activated, 2)?
    );

    // Ties keep the earlier position.
    println!("ties: {:?}", k_max_indices(&[3.0, 1.0, 3.0, 3.0], 2)?);

    println!("softmax of [1, 2, 3]: {:?}", softmax(&[1.0, 2.0, 3.0]));
    Ok(())
}
