use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::types::CostRecord;

/// Share of time and energy spent in the explainer, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostOverhead {
    pub r_time: f64,
    pub r_energy: f64,
}

pub fn cost_overhead(c: &CostRecord) -> Result<CostOverhead, MetricError> {
    c.validate().map_err(|_| MetricError::NonFinite)?;
    let t = c.t_ml + c.t_xai;
    if !(t > 0.0) {
        return Err(MetricError::ZeroDenominator("r_time"));
    }
    let e = c.e_ml + c.e_xai;
    if !(e > 0.0) {
        return Err(MetricError::ZeroDenominator("r_energy"));
    }
    Ok(CostOverhead {
        r_time: c.t_xai / t * 100.0,
        r_energy: c.e_xai / e * 100.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t_ml: f64, t_xai: f64) -> CostRecord {
        CostRecord {
            t_ml,
            t_xai,
            t_eval: 0.0,
            e_ml: 1.0,
            e_xai: 1.0,
        }
    }

    #[test]
    fn examples() {
        assert_eq!(cost_overhead(&rec(3.0, 0.0)).unwrap().r_time, 0.0);
        let vit = cost_overhead(&rec(13.35, 62.50)).unwrap();
        assert!((vit.r_time - 82.40).abs() < 0.01, "{}", vit.r_time);
        assert_eq!(cost_overhead(&rec(2.5, 2.5)).unwrap().r_time, 50.0);
        assert_eq!(cost_overhead(&rec(1.0, 1.0)).unwrap().r_energy, 50.0);
    }

    #[test]
    fn zero_denominators() {
        assert_eq!(cost_overhead(&rec(0.0, 0.0)), Err(MetricError::ZeroDenominator("r_time")));
        let c = CostRecord {
            t_ml: 1.0,
            ..Default::default()
        };
        assert_eq!(cost_overhead(&c), Err(MetricError::ZeroDenominator("r_energy")));
    }
}
