/// TD(λ) returns for one episode.
///
/// `bootstrap[t]` is the value estimate of the state reached after
/// transition `t`. When `terminal` is set the value after the last
/// transition is taken as 0. Computed backwards as
/// `G_t = r_t + γ((1 − λ)·V_{t+1} + λ·G_{t+1})`, `G_{T−1} = r_{T−1} + γ·V_T`.
pub fn lambda_returns(rewards: &[f64], bootstrap: &[f64], terminal: bool, gamma: f64, lambda: f64) -> Vec<f64> {
    let len = rewards.len();
    assert_eq!(bootstrap.len(), len, "one bootstrap value per transition");
    let mut out = vec![0.0; len];
    if len == 0 {
        return out;
    }
    let last_v = if terminal { 0.0 } else { bootstrap[len - 1] };
    out[len - 1] = rewards[len - 1] + gamma * last_v;
    for t in (0..len - 1).rev() {
        out[t] = rewards[t] + gamma * ((1.0 - lambda) * bootstrap[t] + lambda * out[t + 1]);
    }
    out
}
