// SPDX-License-Identifier: Apache-2.0

//! Power unit conversions. Linear power is carried in milliwatts.

/// dBm to mW. Integer-decade inputs (…, −100, −90, …, 20, 30, …) map to the
/// exactly-rounded decimal power of ten.
pub fn dbm_to_mw(dbm: f64) -> f64 {
    if dbm == f64::NEG_INFINITY {
        return 0.0;
    }
    let decades = dbm / 10.0;
    if decades.fract() == 0.0 && decades.abs() < 300.0 {
        // the literal parser rounds 1eK correctly, powi does not
        return format!("1e{}", decades as i32).parse().expect("valid literal");
    }
    10f64.powf(decades)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_values_are_exact() {
        assert_eq!(dbm_to_mw(20.0), 100.0);
        assert_eq!(dbm_to_mw(-100.0), 1e-10);
        assert_eq!(dbm_to_mw(-140.0), 1e-14);
        assert_eq!(dbm_to_mw(0.0), 1.0);
        assert_eq!(dbm_to_mw(f64::NEG_INFINITY), 0.0);
        // 1e-10 mW is 1e-13 W
        assert_eq!(dbm_to_mw(-100.0) * 1e-3, 1e-13);
    }

    #[test]
    fn integer_dbm_round_trips() {
        for dbm in (-200..=60).step_by(10) {
            let dbm = dbm as f64;
            assert_eq!(mw_to_dbm(dbm_to_mw(dbm)), dbm);
        }
        for dbm in [-97.0, 3.0, 17.0] {
            assert!((mw_to_dbm(dbm_to_mw(dbm)) - dbm).abs() < 1e-12);
        }
    }
}
