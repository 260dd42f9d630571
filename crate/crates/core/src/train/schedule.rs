/// `2 / (1 + exp(-10 r))` with `r = (epoch / total) * alpha`.
pub fn lambda_schedule(epoch: usize, total: usize, alpha: f64) -> f64 {
    let r = epoch as f64 / total.max(1) as f64 * alpha;
    2.0 / (1.0 + (-10.0 * r).exp())
}
