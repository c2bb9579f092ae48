//! Feeder workflow: sample γ, certify the uncertain OAG operator, then replay
//! a synthetic sunny day with and without the controller.

use robust_oag::certify::{self, CertifyOptions, JacobianSet};
use robust_oag::numlin::Mat;
use robust_oag::plants::feeder::{self, Feeder, UniformSampler};
use robust_oag::sim;
use robust_oag::uncertainty;
use robust_oag::vi;

const ETA: f64 = 10.0;

pub fn run_example() -> robust_oag::Result<()> {
    let f = Feeder::default_8bus();
    let pi = f.linearize_nominal()?;
    let gamma = feeder::sample_gamma(&f, &UniformSampler::default(), 2000, feeder::DEFAULT_SAFETY, 7)?.gamma;

    let h = Mat::identity(f.n(), f.n());
    let (set, cone) = uncertainty::build_oag_lft(&h, &pi, &pi, ETA, gamma)?;
    let partition = f.feasible_set(&f.available_power(1.0));
    let cert = certify::maximize_lft(&set, &cone, &partition, &CertifyOptions::lft())?;
    certify::validate_certificate(&cert, JacobianSet::Lft(&set), 1000, 1)?;
    let tau = vi::recommend_step(cert.rho, cert.lipschitz)?.tau_star / 2.0;
    println!("gamma {gamma:.4}, rho {:.4}, L {:.4}, tau {tau:.4}", cert.rho, cert.lipschitz);

    let series = feeder::synthetic_overvoltage_series(&f, 600, 1);
    let sc = sim::feeder_scenario(&f, &series, &pi, ETA, tau)?;
    let oag = sim::run_oag(&f, &sc)?;
    let none = sim::run_uncontrolled(&f, &sc)?;
    for t in [&oag, &none] {
        println!(
            "{:<13} violation integral {:.5}, max |v| {:.4}",
            t.algorithm.label(),
            t.violation_integral(),
            t.max_output()
        );
    }
    let path = std::env::temp_dir().join("robust_oag_feeder_envelope.svg");
    std::fs::write(&path, sim::svg_voltage_envelope(&[oag, none], (0.95, 1.05)))?;
    println!("envelope written to {}", path.display());
    Ok(())
}

#[allow(dead_code)]
fn main() -> robust_oag::Result<()> {
    run_example()
}
