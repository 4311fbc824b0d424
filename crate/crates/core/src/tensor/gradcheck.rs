use super::{Graph, Mode, Tensor, TensorError, Var};

/// Compares reverse-mode gradients of a scalar function with central
/// differences and returns the worst relative error
/// `|analytic − numeric| / max(1, |numeric|)` over every input coordinate.
///
/// `f` is rebuilt on a fresh training-mode graph (seed 0, step 0) for each
/// evaluation, so dropout masks are identical across all evaluations.
pub fn grad_check<F, E>(f: F, inputs: &[Tensor<f64>], h: f64) -> Result<f64, E>
where
    F: for<'a> Fn(&'a Graph<f64>, &[Var<'a, f64>]) -> Result<Var<'a, f64>, E>,
    E: From<TensorError>,
{
    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j)))
        .collect();
    grad_check_coords(f, inputs, h, &coords)
}

/// Like [`grad_check`], restricted to the `(input, element)` coordinates listed.
pub fn grad_check_coords<F, E>(
    f: F,
    inputs: &[Tensor<f64>],
    h: f64,
    coords: &[(usize, usize)],
) -> Result<f64, E>
where
    F: for<'a> Fn(&'a Graph<f64>, &[Var<'a, f64>]) -> Result<Var<'a, f64>, E>,
    E: From<TensorError>,
{
    let analytic: Vec<Tensor<f64>> = {
        let graph = Graph::with_seed(Mode::Train, 0, 0);
        let vars: Vec<Var<'_, f64>> = inputs.iter().map(|t| graph.param(t.clone())).collect();
        let loss = f(&graph, &vars)?;
        let grads = graph.backward(loss)?;
        vars.iter().map(|&v| grads.get(v)).collect()
    };

    let eval = |probe: &[Tensor<f64>]| -> Result<f64, E> {
        let graph = Graph::with_seed(Mode::Train, 0, 0);
        let vars: Vec<Var<'_, f64>> = probe.iter().map(|t| graph.constant(t.clone())).collect();
        let out = f(&graph, &vars)?;
        if out.value().numel() != 1 {
            return Err(TensorError::Contract("grad_check needs a scalar function".into()).into());
        }
        Ok(out.item())
    };

    let mut probe = inputs.to_vec();
    let mut worst = 0.0f64;
    for &(i, j) in coords {
        let grad = &analytic[i];
        {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + h;
            let up = eval(&probe)?;
            probe[i].data_mut()[j] = orig - h;
            let down = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = (grad.data()[j] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
