//! Deterministic synthetic weight/activation fixtures.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StudentT};

use crate::error::{Error, Result};
use crate::tensor::{Dtype, MatrixBuffer, VectorBuffer};

/// Standard deviation of generated weights, typical of LLM linear layers.
pub const WEIGHT_SCALE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Gaussian weights and activations.
    Gaussian,
    /// Student-t(3) weights; activations with ~1% outlier channels scaled 20x.
    HeavyTail,
    /// Every weight and every activation identical.
    Constant,
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Family::Gaussian),
            "heavy-tail" => Ok(Family::HeavyTail),
            "constant" => Ok(Family::Constant),
            other => Err(Error::Config(format!("unknown fixture family `{other}`"))),
        }
    }
}

pub fn synth_fixture(
    rows: usize,
    cols: usize,
    seed: u64,
    family: Family,
    dtype: Dtype,
) -> Result<(MatrixBuffer, VectorBuffer)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let (w, mut x): (Vec<f64>, Vec<f64>) = match family {
        Family::Gaussian => {
            let w = (&normal).sample_iter(&mut rng).take(rows * cols).map(|v: f64| v * WEIGHT_SCALE).collect();
            let x = (&normal).sample_iter(&mut rng).take(cols).collect();
            (w, x)
        }
        Family::HeavyTail => {
            let t = StudentT::new(3.0).expect("valid dof");
            let w = (&t).sample_iter(&mut rng).take(rows * cols).map(|v: f64| v * WEIGHT_SCALE).collect();
            let x = (0..cols)
                .map(|_| {
                    let v: f64 = normal.sample(&mut rng);
                    if rng.random::<f64>() < 0.01 {
                        v * 20.0
                    } else {
                        v
                    }
                })
                .collect();
            (w, x)
        }
        Family::Constant => (vec![WEIGHT_SCALE; rows * cols], vec![1.0; cols]),
    };
    if cols > 0 && x.iter().all(|v| dtype.quantize(*v) == 0.0) {
        x[0] = 1.0;
    }
    Ok((MatrixBuffer::new(rows, cols, dtype, w)?, VectorBuffer::new(dtype, x)))
}
