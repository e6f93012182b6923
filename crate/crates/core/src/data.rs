//! Reference market data.

use crate::qp::MarketModel;

/// Tickers of the six-asset DAX subset (annualized moments, Aug 2010 - Apr 2012).
pub const SIX_ASSET_TICKERS: [&str; 6] = ["Merck", "VW", "SAP", "FresMed", "Linde", "Fres"];

pub const SIX_ASSET_MU: [f64; 6] = [0.7315, 0.3413, 0.1877, 0.2202, 0.1932, 0.1351];

pub const SIX_ASSET_SIGMA: [[f64; 6]; 6] = [
    [1.6266, -0.0155, -0.0104, -0.0146, -0.0017, -0.0033],
    [-0.0155, 0.1584, 0.0345, 0.0292, 0.0569, 0.0238],
    [-0.0104, 0.0345, 0.0516, 0.0183, 0.0240, 0.0143],
    [-0.0146, 0.0292, 0.0183, 0.0434, 0.0227, 0.0248],
    [-0.0017, 0.0569, 0.0240, 0.0227, 0.0530, 0.0201],
    [-0.0033, 0.0238, 0.0143, 0.0248, 0.0201, 0.0386],
];

/// The six-asset model; Merck is asset 0.
pub fn six_asset_model() -> MarketModel {
    MarketModel::new(
        SIX_ASSET_MU.to_vec(),
        SIX_ASSET_SIGMA.iter().map(|r| r.to_vec()).collect(),
    )
    .expect("reference covariance is positive definite")
}
