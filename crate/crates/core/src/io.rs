//! Flat-file formats: mechanism CSV and scalar summary JSON.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mechanism::{Mechanism, MechanismError, SampledMechanism};
use crate::model::ProblemInstance;
use crate::solver::{buyer_utility, r_b, revenue, revenue_rewritten, ThresholdMechanism};

pub const MECHANISM_HEADER: [&str; 5] = ["t", "lambda", "R_b", "P_b", "U_b"];

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("mechanism file lacks column {0:?}")]
    MissingColumn(&'static str),
    #[error("row {row}: cannot parse {value:?} as a number")]
    Number { row: usize, value: String },
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
}

/// Shortest-roundtrip scientific notation keeps all 17 significant digits.
fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_rows<W: Write>(out: W, rows: impl Iterator<Item = [f64; 5]>) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(MECHANISM_HEADER)?;
    for row in rows {
        w.write_record(row.map(fmt))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the solver's grid samples.
pub fn write_mechanism_csv<W: Write>(mech: &ThresholdMechanism, out: W) -> Result<(), IoError> {
    let rows = (0..mech.grid().len()).map(|i| {
        [
            mech.grid()[i],
            mech.lambda_samples()[i],
            mech.r_b_samples()[i],
            mech.pay_samples()[i],
            mech.utility_samples()[i],
        ]
    });
    write_rows(out, rows)
}

/// Writes a sampled mechanism, recomputing `R_b` and `U_b` by quadrature.
pub fn write_sampled_csv<W: Write>(inst: &ProblemInstance, mech: &SampledMechanism, out: W) -> Result<(), IoError> {
    let rows = mech.grid().iter().map(|&t| {
        [
            t,
            mech.threshold(t),
            r_b(inst, mech, t),
            mech.pay_buyer(t),
            buyer_utility(inst, mech, t),
        ]
    });
    write_rows(out, rows)
}

/// Reads `t`, `lambda` and `P_b` columns into an interpolated mechanism.
pub fn read_mechanism_csv<R: Read>(input: R, pay_seller: f64) -> Result<SampledMechanism, IoError> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = r.headers()?.clone();
    let col = |name: &'static str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or(IoError::MissingColumn(name))
    };
    let (ct, cl, cp) = (col("t")?, col("lambda")?, col("P_b")?);
    let (mut t, mut lambda, mut pay) = (Vec::new(), Vec::new(), Vec::new());
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |c: usize| {
            let s = rec.get(c).unwrap_or("");
            s.parse::<f64>().map_err(|_| IoError::Number {
                row: row + 1,
                value: s.to_string(),
            })
        };
        t.push(num(ct)?);
        lambda.push(num(cl)?);
        pay.push(num(cp)?);
    }
    Ok(SampledMechanism::new(t, lambda, pay, pay_seller)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub t1: f64,
    pub t2: f64,
    pub revenue: f64,
    pub revenue_rewritten: f64,
    pub pay_seller: f64,
    pub grid_points: usize,
}

impl Summary {
    pub fn of(mech: &ThresholdMechanism) -> Self {
        let inst = mech.instance();
        Self {
            t1: mech.t1(),
            t2: mech.t2(),
            revenue: revenue(inst, mech),
            revenue_rewritten: revenue_rewritten(inst, mech),
            pay_seller: mech.seller_pay(),
            grid_points: mech.grid().len(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}
