use crate::real::Real;
use crate::tensor::Tensor;
use crate::NnError;

/// Softmax cross-entropy, averaged with per-class weights the way a weighted
/// mean reduction does it: `sum_i w[y_i] * nll_i / sum_i w[y_i]`.
///
/// Returns the loss and the gradient with respect to `logits`.
pub fn cross_entropy<R: Real>(
    logits: &Tensor<R>,
    targets: &[usize],
    class_weights: Option<&[f64]>,
) -> Result<(f64, Tensor<R>), NnError> {
    if logits.shape().len() != 2 || logits.dim(0) != targets.len() {
        return Err(NnError::Shape(format!(
            "cross_entropy: logits {:?} vs {} targets",
            logits.shape(),
            targets.len()
        )));
    }
    let k = logits.dim(1);
    if let Some(w) = class_weights {
        if w.len() != k {
            return Err(NnError::Shape(format!("cross_entropy: {} class weights for {k} classes", w.len())));
        }
    }
    let mut grad = Tensor::zeros(logits.shape());
    let mut total_weight = 0.0;
    let mut loss = 0.0;
    for (i, &y) in targets.iter().enumerate() {
        if y >= k {
            return Err(NnError::Shape(format!("cross_entropy: target {y} >= {k} classes")));
        }
        let row = logits.row(i);
        let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v.as_f64() - max).exp()).sum();
        let log_z = max + sum.ln();
        let w = class_weights.map_or(1.0, |w| w[y]);
        loss += w * (log_z - row[y].as_f64());
        total_weight += w;
        let g = &mut grad.data_mut()[i * k..(i + 1) * k];
        for (j, gj) in g.iter_mut().enumerate() {
            let p = (row[j].as_f64() - log_z).exp();
            *gj = R::of(w * (p - if j == y { 1.0 } else { 0.0 }));
        }
    }
    if total_weight <= 0.0 {
        return Err(NnError::Shape("cross_entropy: zero total class weight".into()));
    }
    let inv = R::of(1.0 / total_weight);
    grad.data_mut().iter_mut().for_each(|g| *g *= inv);
    Ok((loss / total_weight, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_k() {
        let logits = Tensor::<f64>::zeros(&[2, 4]);
        let (loss, _) = cross_entropy(&logits, &[0, 3], None).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let logits = Tensor::<f64>::from_vec(&[2, 3], vec![0.3, -1.2, 0.8, 2.0, 0.1, -0.4]).unwrap();
        let weights = [0.5, 2.0, 1.0];
        let targets = [1, 0];
        let (_, grad) = cross_entropy(&logits, &targets, Some(&weights)).unwrap();
        let eps = 1e-6;
        for i in 0..logits.len() {
            let mut plus = logits.clone();
            plus.data_mut()[i] += eps;
            let mut minus = logits.clone();
            minus.data_mut()[i] -= eps;
            let lp = cross_entropy(&plus, &targets, Some(&weights)).unwrap().0;
            let lm = cross_entropy(&minus, &targets, Some(&weights)).unwrap().0;
            let numeric = (lp - lm) / (2.0 * eps);
            assert!((numeric - grad.data()[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_out_of_range_target() {
        let logits = Tensor::<f32>::zeros(&[1, 3]);
        assert!(cross_entropy(&logits, &[3], None).is_err());
    }
}
