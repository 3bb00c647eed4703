//! Regenerates the synthetic data bundle under `data/`.
//!
//! One latent monthly path of (production growth, real activity, log real
//! price) is drawn from a fixed structural VAR(2); every fixture is derived
//! from that path, so the original and updated datasets agree on their
//! overlap.
//!
//! ```text
//! cargo run -p oilsvar --example make_fixtures [-- <data dir>]
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use oilsvar::ts::{MonthlySeries, QuarterlySeries, YearMonth, YearQuarter};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::json;

const SEED: u64 = 19_730_201;

fn ym(y: i32, m: u32) -> YearMonth {
    YearMonth::new(y, m).expect("valid month")
}

struct Latent {
    start: YearMonth,
    y: Vec<[f64; 3]>,
    e: Vec<[f64; 3]>,
}

impl Latent {
    fn idx(&self, m: YearMonth) -> usize {
        self.start.months_until(m) as usize
    }

    fn column(&self, j: usize, from: YearMonth, to: YearMonth) -> Vec<f64> {
        (self.idx(from)..=self.idx(to)).map(|t| self.y[t][j]).collect()
    }
}

fn volatility(m: YearMonth) -> f64 {
    match m.year() {
        1979..=1986 => 1.6,
        2008..=2009 | 2020 => 1.8,
        _ => 1.0,
    }
}

fn simulate(rng: &mut ChaCha8Rng, start: YearMonth, end: YearMonth) -> Latent {
    let a1 = DMatrix::from_row_slice(3, 3, &[0.10, 0.0, 0.0, -0.5, 1.15, 0.0, 0.0, 0.0005, 1.18]);
    let a2 = DMatrix::from_row_slice(3, 3, &[0.05, 0.0, 0.0, 0.0, -0.22, 0.0, 0.0, 0.0, -0.21]);
    let b = DMatrix::from_row_slice(3, 3, &[-0.012, 0.0, 0.0, -0.5, 6.0, 0.0, 0.015, 0.02, 0.07]);
    let c = DVector::from_vec(vec![0.001, 0.0, 0.0]);
    let n = start.months_until(end) as usize + 1;
    let mut y = vec![[0.0; 3]; n];
    let mut e = vec![[0.0; 3]; n];
    for t in 0..n {
        let s = volatility(start.offset(t as i64));
        let shock = DVector::from_fn(3, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            s * z
        });
        let lag = |k: usize| {
            if t >= k {
                DVector::from_column_slice(&y[t - k])
            } else {
                DVector::zeros(3)
            }
        };
        let next = &c + &a1 * lag(1) + &a2 * lag(2) + &b * &shock;
        y[t] = [next[0], next[1], next[2]];
        e[t] = [shock[0], shock[1], shock[2]];
    }
    Latent { start, y, e }
}

fn write_monthly(dir: &Path, name: &str, start: YearMonth, values: Vec<f64>) -> MonthlySeries {
    let s = MonthlySeries::new(name, start, values).expect("finite series");
    fs::write(dir.join(format!("{name}.csv")), s.to_csv_string()).expect("write fixture");
    s
}

fn level_path(start_level: f64, growth: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut level = start_level;
    std::iter::once(start_level)
        .chain(growth.map(|g| {
            level *= g.exp();
            level
        }))
        .collect()
}

fn seasonal(m: YearMonth, amplitude: f64) -> f64 {
    amplitude * (2.0 * std::f64::consts::PI * (m.month() as f64 - 1.0) / 12.0).sin()
}

fn main() {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"));
    let fixtures = root.join("fixtures");
    let responses = fixtures.join("responses");
    fs::create_dir_all(&responses).expect("create data dirs");

    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let end = ym(2025, 1);
    let latent = simulate(&mut rng, ym(1963, 1), end);
    let mut noise = move || -> f64 { StandardNormal.sample(&mut rng) };

    // original dataset: already transformed, 1973-02..2007-12
    let (o_start, o_end) = (ym(1973, 2), ym(2007, 12));
    write_monthly(&fixtures, "original_dprod", o_start, latent.column(0, o_start, o_end));
    let coding_break = ym(2002, 1);
    let rea_orig: Vec<f64> = latent
        .column(1, o_start, o_end)
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let m = o_start.offset(i as i64);
            let drift = m.ordinal() - coding_break.ordinal();
            if drift > 0 { v - 0.2 * drift as f64 } else { v }
        })
        .collect();
    write_monthly(&fixtures, "original_rea", o_start, rea_orig);

    // consumer prices from 1967-01
    let cpi_start = ym(1967, 1);
    let i0 = latent.idx(cpi_start);
    let cpi = level_path(
        33.4,
        (i0 + 1..latent.y.len()).map(|t| 0.0031 + 0.01 * (latent.y[t][2] - latent.y[t - 1][2]) + 0.0012 * noise()),
    );
    let cpi = write_monthly(&fixtures, "cpi", cpi_start, cpi);

    // nominal acquisition cost from 1974-01: exp(log real price) scaled by cpi
    let rac_start = ym(1974, 1);
    let base = 30.0 / 172.0;
    let rac: Vec<f64> = (latent.idx(rac_start)..latent.y.len())
        .map(|t| base * latent.y[t][2].exp() * cpi.values()[t - i0])
        .collect();
    let rac = write_monthly(&fixtures, "rac_nominal", rac_start, rac);

    let log_real_price: Vec<f64> = (latent.idx(o_start)..=latent.idx(o_end))
        .map(|t| {
            let m = latent.start.offset(t as i64);
            match rac.get(m) {
                Some(n) => n.ln() - cpi.get(m).expect("cpi covers rac").ln(),
                None => latent.y[t][2] + base.ln(),
            }
        })
        .collect();
    let mean = log_real_price.iter().sum::<f64>() / log_real_price.len() as f64;
    write_monthly(&fixtures, "original_rpo", o_start, log_real_price.iter().map(|v| v - mean).collect());

    // crude production levels from 1974-01, thousand barrels per day
    let prod_start = ym(1974, 1);
    let p0 = latent.idx(prod_start);
    let production = write_monthly(
        &fixtures,
        "production",
        prod_start,
        level_path(55_000.0, (p0 + 1..latent.y.len()).map(|t| latent.y[t][0])),
    );
    let igrea = write_monthly(&fixtures, "igrea", ym(1968, 1), latent.column(1, ym(1968, 1), end));

    // OECD+6 industrial production index
    let ip_start = ym(1973, 1);
    let ip0 = latent.idx(ip_start);
    write_monthly(
        &fixtures,
        "oecd_ip",
        ip_start,
        level_path(
            60.0,
            (ip0 + 1..latent.y.len()).map(|t| 0.0015 + 0.0008 * (latent.y[t][1] - latent.y[t - 1][1]) + 0.002 * noise()),
        ),
    );

    // Kern County labour market, not seasonally adjusted, 1990-01..2025-01
    let kern_start = ym(1990, 1);
    let k0 = latent.idx(kern_start);
    let mut log_emp = 12.2;
    let mut gap = 0.0;
    let mut employment = Vec::new();
    let mut unemployment = Vec::new();
    for t in k0..latent.y.len() {
        let m = latent.start.offset(t as i64);
        log_emp += 0.0012 + 0.004 * latent.e[t - 1][2] + 0.002 * noise();
        gap = 0.9 * gap - 0.15 * latent.e[t - 1][2] + 0.2 * noise();
        employment.push((log_emp + seasonal(m, 0.015)).exp());
        unemployment.push(10.0 + gap + seasonal(m, 1.2));
    }
    write_monthly(&fixtures, "kern_employment", kern_start, employment);
    write_monthly(&fixtures, "kern_unemployment", kern_start, unemployment);

    // quarterly real GDP, 1965-Q1..2024-Q4
    let q_start = YearQuarter::new(1965, 1).expect("valid quarter");
    let quarters = (2024 - 1965 + 1) * 4;
    let shock_mean = |q: YearQuarter, j: usize| {
        let t = latent.idx(q.first_month());
        (t..t + 3).map(|i| latent.e[i][j]).sum::<f64>() / 3.0
    };
    let gdp = level_path(
        3_900.0,
        (1..quarters).map(|i| {
            let prev = q_start.offset(i - 1);
            0.0075 - 0.002 * shock_mean(prev, 0) - 0.003 * shock_mean(prev, 2) + 0.005 * noise()
        }),
    );
    let gdp = QuarterlySeries::new("gdp", q_start, gdp).expect("finite gdp");
    let mut buf = Vec::new();
    gdp.write_csv(&mut buf).expect("write gdp");
    fs::write(fixtures.join("gdp.csv"), buf).expect("write gdp");

    // frozen provider payloads for the live configuration
    let eia_payload = |s: &MonthlySeries, id: &str| {
        let mut rows: Vec<_> = s
            .iter()
            .map(|(m, v)| json!({"period": m.to_string(), "series": id, "value": v.to_string(), "units": "mixed"}))
            .collect();
        rows.push(json!({"period": s.end().succ().to_string(), "series": id, "value": null, "units": "mixed"}));
        rows.reverse();
        json!({"response": {"total": rows.len(), "frequency": "monthly", "data": rows}})
    };
    let fred_payload = |s: &MonthlySeries| {
        let mut obs = vec![json!({"date": format!("{}-01", s.start().offset(-1)), "value": "."})];
        obs.extend(s.iter().map(|(m, v)| json!({"date": format!("{m}-01"), "value": v.to_string()})));
        json!({"units": "lin", "observations": obs})
    };
    let dump = |name: &str, v: serde_json::Value| {
        fs::write(responses.join(name), serde_json::to_string_pretty(&v).expect("json") + "\n").expect("write payload")
    };
    dump("eia_COPR_WORLD.json", eia_payload(&production, "COPR_WORLD"));
    dump("eia_R1300____3.json", eia_payload(&rac, "R1300____3"));
    dump("fred_CPIAUCSL.json", fred_payload(&cpi));
    dump("fred_IGREA.json", fred_payload(&igrea));

    println!("fixtures written to {}", fixtures.display());
}
