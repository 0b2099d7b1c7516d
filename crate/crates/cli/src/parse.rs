/// Parses a link rate such as `100K`, `1.5M`, `10Mbps` or `2e6` into bits
/// per second. Suffixes are decimal.
pub fn bandwidth(s: &str) -> Result<f64, String> {
    let t = s.trim();
    let lower = t.to_ascii_lowercase();
    let body = lower.strip_suffix("bps").unwrap_or(&lower);
    let (num, scale) = match body.chars().last() {
        Some('k') => (&body[..body.len() - 1], 1e3),
        Some('m') => (&body[..body.len() - 1], 1e6),
        Some('g') => (&body[..body.len() - 1], 1e9),
        _ => (body, 1.0),
    };
    let v: f64 = num.trim().parse().map_err(|_| format!("bad bandwidth `{t}`"))?;
    let bps = v * scale;
    if !(bps > 0.0 && bps.is_finite()) {
        return Err(format!("bandwidth `{t}` must be positive"));
    }
    Ok(bps)
}

/// A row fraction in `(0, 1]`.
pub fn fraction(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("bad fraction `{s}`"))?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("fraction {v} outside (0, 1]"))
    }
}
