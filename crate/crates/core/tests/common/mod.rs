#![allow(dead_code)]

use celu::dataio::{AlignedDataset, BatchPlan};
use celu::model::{logistic_loss, AdaGrad};
use celu::numerics::Matrix;
use celu::protocol::{ModelSnapshot, TrainConfig};

/// Values as they survive the f32 wire encoding.
pub fn wire(m: &Matrix<f64>) -> Matrix<f64> {
    m.cast::<f32>().cast::<f64>()
}

/// The split model trained in one process, with no parties, workset or
/// channel: each step is the plain mini-batch gradient of the composed model,
/// with activations and derivatives rounded to f32 where the wire would.
pub fn monolith(config: &TrainConfig, data: &AlignedDataset, rounds: usize) -> ModelSnapshot {
    let mut m = ModelSnapshot::initial(config, data.d_a(), data.d_b()).unwrap();
    let mut opt_a = AdaGrad::new(&m.bottom_a);
    let mut opt_b = AdaGrad::new(&m.bottom_b);
    let mut opt_top = AdaGrad::new(&m.top);
    let mut plan = BatchPlan::new(data.n(), config.batch_size, config.epochs, config.seed).unwrap();
    for step in 0..rounds {
        let idx = plan.batch_indices(step).unwrap();
        let x_a = data.x_a.select_rows(&idx).unwrap();
        let x_b = data.x_b.select_rows(&idx).unwrap();
        let y: Vec<f64> = idx.iter().map(|&i| data.y[i]).collect();
        let ones = vec![1.0; idx.len()];

        let (z_a, trace_a) = m.bottom_a.forward(&x_a).unwrap();
        let (z_b, trace_b) = m.bottom_b.forward(&x_b).unwrap();
        let (logits, trace_top) = m.top.forward(&wire(&z_a).hcat(&z_b).unwrap()).unwrap();
        let (_, dlogit) = logistic_loss(&y, logits.as_slice()).unwrap();
        let (g_top, d_joined) = m.top.backward(&trace_top, &Matrix::column(&dlogit), &ones).unwrap();
        let (dz_a, dz_b) = d_joined.split_cols(config.d_z).unwrap();
        let (g_b, _) = m.bottom_b.backward(&trace_b, &dz_b, &ones).unwrap();
        let (g_a, _) = m.bottom_a.backward(&trace_a, &wire(&dz_a), &ones).unwrap();

        opt_top.step(&mut m.top, &g_top, config.lr).unwrap();
        opt_b.step(&mut m.bottom_b, &g_b, config.lr).unwrap();
        opt_a.step(&mut m.bottom_a, &g_a, config.lr).unwrap();
    }
    m
}
