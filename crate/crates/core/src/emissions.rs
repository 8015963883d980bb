//! Fleet-weighted CO₂ emission factors and trip emissions.
//!
//! All quantities are grams CO₂-equivalent; conversion to kilograms only
//! happens when presenting results.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const SHARE_TOLERANCE: f64 = 1e-6;

/// Fleet mix and per-class factors for one region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionFactors<T> {
    pub share_small_medium: T,
    pub factor_small: T,
    pub share_large: T,
    pub factor_large: T,
    /// Reference combined factor as published; `combined_factor` recomputes it.
    pub combined: T,
}

impl<T: Scalar> RegionFactors<T> {
    pub fn computed_combined(&self) -> Result<T> {
        combined_factor(
            self.share_small_medium,
            self.factor_small,
            self.share_large,
            self.factor_large,
        )
    }
}

/// Region name → factors, in gCO₂eq per vehicle kilometre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionFactorTable<T> {
    pub regions: BTreeMap<String, RegionFactors<T>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FactorRow {
    region: String,
    share_small_medium: f64,
    factor_small_g_per_km: f64,
    share_large: f64,
    factor_large_g_per_km: f64,
    combined_g_per_km: f64,
}

/// Shipped default table (Germany, United States, Latin America).
pub const DEFAULT_FACTOR_CSV: &str = include_str!("../data/emission_factors.csv");

impl<T: Scalar> EmissionFactorTable<T> {
    pub fn builtin() -> Self {
        Self::from_csv_reader(DEFAULT_FACTOR_CSV.as_bytes()).expect("shipped factor table parses")
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file)
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut regions = BTreeMap::new();
        for (i, row) in rdr.deserialize::<FactorRow>().enumerate() {
            let row = row?;
            let factors = RegionFactors {
                share_small_medium: T::of(row.share_small_medium),
                factor_small: T::of(row.factor_small_g_per_km),
                share_large: T::of(row.share_large),
                factor_large: T::of(row.factor_large_g_per_km),
                combined: T::of(row.combined_g_per_km),
            };
            check_shares(factors.share_small_medium, factors.share_large).map_err(|_| {
                Error::InvalidField {
                    row: i + 1,
                    column: "share_small_medium".into(),
                    message: format!("shares of `{}` do not sum to 1", row.region),
                }
            })?;
            regions.insert(row.region, factors);
        }
        Ok(Self { regions })
    }

    pub fn to_csv_writer<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for (region, f) in &self.regions {
            w.serialize(FactorRow {
                region: region.clone(),
                share_small_medium: f.share_small_medium.as_f64(),
                factor_small_g_per_km: f.factor_small.as_f64(),
                share_large: f.share_large.as_f64(),
                factor_large_g_per_km: f.factor_large.as_f64(),
                combined_g_per_km: f.combined.as_f64(),
            })?;
        }
        w.flush().map_err(|e| Error::io("<factor table>", e))?;
        Ok(())
    }

    pub fn get(&self, region: &str) -> Option<&RegionFactors<T>> {
        self.regions.get(region)
    }
}

fn check_shares<T: Scalar>(a: T, b: T) -> Result<()> {
    if a < T::zero() || b < T::zero() || ((a + b).as_f64() - 1.0).abs() > SHARE_TOLERANCE {
        return Err(Error::InvalidArgument(format!(
            "fleet shares {a} + {b} must be nonnegative and sum to 1"
        )));
    }
    Ok(())
}

/// Fleet-weighted factor `share_small·factor_small + share_large·factor_large`.
pub fn combined_factor<T: Scalar>(
    share_small: T,
    factor_small: T,
    share_large: T,
    factor_large: T,
) -> Result<T> {
    check_shares(share_small, share_large)?;
    Ok(share_small * factor_small + share_large * factor_large)
}

/// Emissions of a trip of `vkt_km` at `factor_g_per_km`, in grams.
pub fn trip_emissions<T: Scalar>(vkt_km: T, factor_g_per_km: T) -> Result<T> {
    if vkt_km < T::zero() || factor_g_per_km < T::zero() {
        return Err(Error::InvalidArgument(format!(
            "trip emissions need nonnegative inputs, got {vkt_km} km at {factor_g_per_km} g/km"
        )));
    }
    Ok(vkt_km * factor_g_per_km)
}

pub fn grams_to_kg<T: Scalar>(grams: T) -> T {
    grams / T::of(1000.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn latin_america_factor_is_exact() {
        let c = combined_factor(0.64, 148.0, 0.36, 211.0).unwrap();
        assert!((c - 170.68_f64).abs() < 1e-9);
    }

    #[test]
    fn germany_within_printed_tolerance() {
        let c = combined_factor(0.74, 148.0, 0.26, 211.0).unwrap();
        assert!((c - 164.38_f64).abs() < 1e-9);
        assert!((c - 164.33_f64).abs() <= 0.1);
    }

    #[test]
    fn degenerate_mixture_returns_small_factor() {
        assert_eq!(combined_factor(1.0_f64, 148.0, 0.0, 211.0).unwrap(), 148.0);
    }

    #[test]
    fn shares_must_sum_to_one() {
        assert!(combined_factor(0.5_f64, 148.0, 0.4, 211.0).is_err());
    }

    #[test]
    fn trip_emission_examples() {
        assert_eq!(trip_emissions(0.0_f64, 170.68).unwrap(), 0.0);
        assert!((trip_emissions(10.0_f64, 170.68).unwrap() - 1706.8).abs() < 1e-9);
        assert!((trip_emissions(12.53_f64, 164.33).unwrap() - 2059.1).abs() < 0.05);
        assert!(trip_emissions(-1.0_f64, 170.0).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let c: f32 = combined_factor(0.64, 148.0, 0.36, 211.0).unwrap();
        assert!((c - 170.68).abs() < 1e-3);
    }

    #[test]
    fn builtin_table_matches_printed_values() {
        let table = EmissionFactorTable::<f64>::builtin();
        assert_eq!(table.regions.len(), 3);
        for f in table.regions.values() {
            assert!((f.computed_combined().unwrap() - f.combined).abs() <= 0.1);
        }
    }

    #[test]
    fn table_csv_round_trip() {
        let table = EmissionFactorTable::<f64>::builtin();
        let mut buf = Vec::new();
        table.to_csv_writer(&mut buf).unwrap();
        assert_eq!(
            EmissionFactorTable::from_csv_reader(&buf[..]).unwrap(),
            table
        );
    }

    proptest! {
        #[test]
        fn combined_factor_swap_invariant(s in 0.0f64..=1.0, a in 50.0f64..300.0, b in 50.0f64..300.0) {
            let lhs = combined_factor(s, a, 1.0 - s, b).unwrap();
            let rhs = combined_factor(1.0 - s, b, s, a).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-9);
            prop_assert!(combined_factor(s, a + 1.0, 1.0 - s, b).unwrap() >= lhs);
        }

        #[test]
        fn trip_emissions_linear(a in 0.0f64..100.0, b in 0.0f64..100.0, f in 0.0f64..300.0) {
            let sum = trip_emissions(a + b, f).unwrap();
            let parts = trip_emissions(a, f).unwrap() + trip_emissions(b, f).unwrap();
            prop_assert!((sum - parts).abs() < 1e-8);
        }
    }
}
