//! Energy accounting for pipeline steps.
//!
//! No hardware counters are read. A meter converts a measured wall-clock
//! duration into watt-hours.

pub const DEFAULT_WATTS: f64 = 15.0;

pub trait EnergyMeter: Send + Sync {
    fn energy_wh(&self, seconds: f64) -> f64;
}

/// Fixed average power draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantPower {
    pub watts: f64,
}

impl Default for ConstantPower {
    fn default() -> Self {
        Self { watts: DEFAULT_WATTS }
    }
}

impl EnergyMeter for ConstantPower {
    fn energy_wh(&self, seconds: f64) -> f64 {
        self.watts * seconds.max(0.0) / 3600.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hour_at_default_power() {
        assert_eq!(ConstantPower::default().energy_wh(3600.0), 15.0);
        assert_eq!(ConstantPower { watts: 60.0 }.energy_wh(60.0), 1.0);
        assert_eq!(ConstantPower::default().energy_wh(-1.0), 0.0);
    }
}
