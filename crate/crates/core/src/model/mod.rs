//! Bottom and top models: dense MLPs with traced forward passes, row-weighted
//! backprop, the logistic loss and AdaGrad.

mod adagrad;
mod loss;
mod mlp;

pub use adagrad::{AdaGrad, ADAGRAD_EPSILON};
pub use loss::{logistic_loss, sigmoid, softplus};
pub use mlp::{Activation, ForwardTrace, Gradients, Layer, LayerGrad, Mlp};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{self, Matrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    /// `(1/B) Σ_k w_k ⟨u_k, out_k⟩`, the scalar whose gradient `backward` returns.
    fn weighted_objective(model: &Mlp<f64>, x: &Matrix<f64>, up: &Matrix<f64>, w: &[f64]) -> f64 {
        let out = model.predict(x).unwrap();
        let b = x.rows() as f64;
        (0..out.rows())
            .map(|k| w[k] * numerics::dot(out.row(k), up.row(k)))
            .sum::<f64>()
            / b
    }

    fn relative_error(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for case in 0..20 {
            let depth = rng.random_range(1..=2);
            let mut layout = vec![rng.random_range(1..=8)];
            for _ in 0..depth {
                layout.push(rng.random_range(1..=8));
            }
            let batch = rng.random_range(1..=4);
            let model = Mlp::<f64>::with_layout(&layout, case).unwrap();
            let x = random_matrix(&mut rng, batch, layout[0]);
            let up = random_matrix(&mut rng, batch, *layout.last().unwrap());
            let w: Vec<f64> = (0..batch).map(|_| rng.random_range(0.0..1.0)).collect();
            let (_, trace) = model.forward(&x).unwrap();
            let (grads, input_grad) = model.backward(&trace, &up, &w).unwrap();
            let analytic = grads.flatten();
            let h = 1e-5;
            for (i, &g) in analytic.iter().enumerate() {
                let mut plus = model.clone();
                *plus.param_mut(i).unwrap() += h;
                let mut minus = model.clone();
                *minus.param_mut(i).unwrap() -= h;
                let fd = (weighted_objective(&plus, &x, &up, &w)
                    - weighted_objective(&minus, &x, &up, &w))
                    / (2.0 * h);
                assert!(
                    relative_error(g, fd) < 1e-4 || (g - fd).abs() < 1e-9,
                    "case {case} param {i}: analytic {g}, numeric {fd}"
                );
            }
            // Input gradient is per instance: B times the derivative of the mean.
            for r in 0..batch {
                for c in 0..layout[0] {
                    let mut xp = x.clone();
                    xp[(r, c)] += h;
                    let mut xm = x.clone();
                    xm[(r, c)] -= h;
                    let fd = (weighted_objective(&model, &xp, &up, &w)
                        - weighted_objective(&model, &xm, &up, &w))
                        / (2.0 * h)
                        * batch as f64;
                    let g = input_grad[(r, c)];
                    assert!(relative_error(g, fd) < 1e-4 || (g - fd).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn fully_connected_gradient_cosine_equals_derivative_cosine() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let d_in = rng.random_range(1..=6);
            let d_out = rng.random_range(1..=6);
            let layer = Mlp::from_layers(vec![Layer {
                weight: random_matrix(&mut rng, d_in, d_out),
                bias: vec![0.0; d_out],
                activation: Activation::Linear,
            }])
            .unwrap();
            let z_in = random_matrix(&mut rng, 1, d_in);
            let g = random_matrix(&mut rng, 1, d_out);
            let g_stale = random_matrix(&mut rng, 1, d_out);
            let (_, trace) = layer.forward(&z_in).unwrap();
            let (fresh, _) = layer.backward(&trace, &g, &[1.0]).unwrap();
            let (stale, _) = layer.backward(&trace, &g_stale, &[1.0]).unwrap();
            let lhs = numerics::cosine(
                fresh.layers[0].weight.as_slice(),
                stale.layers[0].weight.as_slice(),
            );
            let rhs = numerics::cosine(g.as_slice(), g_stale.as_slice());
            assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn logistic_head_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = Mlp::<f64>::with_layout(&[3, 4, 1], 8).unwrap();
        let x = random_matrix(&mut rng, 4, 3);
        let y = [1.0, 0.0, 0.0, 1.0];
        let w = [0.2, 1.0, 0.0, 0.7];
        let mean_loss = |m: &Mlp<f64>| {
            let logits = m.predict(&x).unwrap().into_vec();
            let (l, _) = logistic_loss(&y, &logits).unwrap();
            l.iter().zip(&w).map(|(l, w)| l * w).sum::<f64>() / 4.0
        };
        let (out, trace) = model.forward(&x).unwrap();
        let (_, dlogit) = logistic_loss(&y, out.as_slice()).unwrap();
        let (grads, _) = model
            .backward(&trace, &Matrix::column(&dlogit), &w)
            .unwrap();
        for (i, g) in grads.flatten().into_iter().enumerate() {
            let h = 1e-5;
            let mut p = model.clone();
            *p.param_mut(i).unwrap() += h;
            let mut m = model.clone();
            *m.param_mut(i).unwrap() -= h;
            let fd = (mean_loss(&p) - mean_loss(&m)) / (2.0 * h);
            assert!(relative_error(g, fd) < 1e-4 || (g - fd).abs() < 1e-9);
        }
    }

    #[test]
    fn optimizer_is_the_only_mutator() {
        let model = Mlp::<f64>::with_layout(&[2, 3, 1], 1).unwrap();
        let snapshot = model.clone();
        let x = Matrix::from_vec(1, 2, vec![0.5, -0.5]).unwrap();
        let (_, trace) = model.forward(&x).unwrap();
        let _ = model.backward(&trace, &Matrix::column(&[1.0]), &[1.0]).unwrap();
        assert_eq!(model, snapshot);
    }
}
