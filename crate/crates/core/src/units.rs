//! Frequency unit conversions. Frequency deviations are stored in per unit of
//! the nominal frequency and converted to Hz only at the reporting layer.

pub const NOMINAL_HZ: f64 = 50.0;

pub fn pu_to_hz(deviation_pu: f64) -> f64 {
    deviation_pu * NOMINAL_HZ
}

pub fn hz_to_pu(deviation_hz: f64) -> f64 {
    deviation_hz / NOMINAL_HZ
}

/// Absolute frequency in Hz for a per-unit deviation.
pub fn absolute_hz(deviation_pu: f64) -> f64 {
    NOMINAL_HZ * (1.0 + deviation_pu)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions_round_trip() {
        assert_eq!(pu_to_hz(0.004), 0.2);
        assert!((hz_to_pu(0.2) - 0.004).abs() < 1e-15);
        assert_eq!(absolute_hz(-0.01), 49.5);
    }
}
