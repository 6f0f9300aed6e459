//! Text form of floating-point values. Seventeen significant digits are
//! enough for every `f64` to parse back to the same bits.

pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn fmt_list(values: &[f64]) -> String {
    values.iter().map(|&v| fmt(v)).collect::<Vec<_>>().join(" ")
}

pub fn parse(token: &str) -> Option<f64> {
    token.trim().parse().ok()
}
