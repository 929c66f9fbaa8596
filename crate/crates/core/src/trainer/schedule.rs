use super::config::TrainConfig;

/// Linear warm-up to `peak_lr`, then a cosine that falls to zero halfway
/// through each period and restarts at `peak_lr`.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> f64 {
    let w = cfg.warmup_steps;
    let peak = cfg.peak_lr;
    if step < w {
        return peak * step as f64 / w as f64;
    }
    let p = cfg.period();
    let phase = ((step - w) % p) as f64 / p as f64;
    peak * (1.0 + (2.0 * std::f64::consts::PI * phase).cos()) / 2.0
}
