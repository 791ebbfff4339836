use crate::Failure;
use serde::Serialize;
use serde_json::{Number, Value};
use sfl_core::numerics::fmt_sig;
use sfl_core::solver::SolverReport;

/// Significant digits kept for every float written by the CLI.
pub const DIGITS: usize = 10;

pub const CSV_HEADER: [&str; 16] = [
    "level",
    "N_C",
    "lambda_11",
    "lambda_12",
    "lambda_21",
    "lambda_22",
    "fare_C",
    "fare_R",
    "wait_C",
    "wait_R",
    "profit",
    "tax_revenue",
    "passenger_surplus",
    "driver_surplus",
    "R_bar",
    "gap",
];

fn round(x: f64) -> f64 {
    fmt_sig(x, DIGITS).parse().unwrap_or(x)
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if !(n.is_i64() || n.is_u64()) => {
            if let Some(x) = n.as_f64() {
                if let Some(r) = Number::from_f64(round(x)) {
                    *n = r;
                }
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_value),
        Value::Object(o) => o.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Pretty JSON with floats cut to [`DIGITS`] significant digits.
pub fn json<T: Serialize>(value: &T) -> String {
    let mut v = serde_json::to_value(value).expect("reports serialize");
    round_value(&mut v);
    serde_json::to_string_pretty(&v).expect("values serialize")
}

/// One CSV row per (level, report).
pub fn csv_table(rows: &[(f64, &SolverReport)]) -> Result<String, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Failure { kind: "Io".into(), message: e.to_string(), code: 2 };
    w.write_record(CSV_HEADER).map_err(err)?;
    for (level, r) in rows {
        let a = &r.areas;
        let wf = &r.welfare;
        let vals = [
            *level,
            r.state.n_c,
            a.lambda_11,
            a.lambda_12,
            a.lambda_21,
            a.lambda_22,
            a.fare_1,
            a.fare_2,
            a.wait_1,
            a.wait_2,
            r.profit,
            wf.tax_revenue,
            wf.passenger_surplus,
            wf.driver_surplus,
            r.bound,
            r.gap,
        ];
        w.write_record(vals.iter().map(|x| fmt_sig(*x, DIGITS))).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Failure { kind: "Io".into(), message: e.to_string(), code: 2 })?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}
