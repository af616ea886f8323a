//! Beta convergence on a simulated spatial panel: two-way FE OLS, LM
//! diagnostics, then the spatial error and spatial lag models.
//!
//! ```text
//! cargo run --example beta_convergence -- [lambda] [rho] [seed]
//! ```

use regional_equalization::convergence::{fit_sar, fit_sem, lm_diagnostics, ols_fe, ConvergenceFit};
use regional_equalization::synthetic::{knn_weights, simulate_convergence, SimulationSpec};

fn show(fit: &ConvergenceFit) {
    let b = &fit.coefficients[0];
    print!(
        "{:<7} beta={:.4} (se {:.4}) s={:.4} logL={:.2}",
        fit.model.as_str(),
        b.estimate,
        b.std_error,
        fit.speed,
        fit.log_likelihood
    );
    if let Some(c) = fit.rho.as_ref().or(fit.lambda.as_ref()) {
        print!(" {}={:.4} (se {:.4})", c.name, c.estimate, c.std_error);
    }
    println!();
}

fn main() -> regional_equalization::Result<()> {
    let mut args = std::env::args().skip(1).map(|s| s.parse::<f64>().expect("numeric argument"));
    let lambda = args.next().unwrap_or(0.5);
    let rho = args.next().unwrap_or(0.0);
    let seed = args.next().unwrap_or(1.0) as u64;

    let w = knn_weights(60, 5, seed);
    let spec = SimulationSpec { lambda, rho, gamma: vec![0.2], ..SimulationSpec::new(60, 4) };
    let panel = simulate_convergence(&spec, &w, seed);
    println!("true beta {} gamma {:?} lambda {lambda} rho {rho}", spec.beta, spec.gamma);

    let ols = ols_fe(&panel)?;
    show(&ols);
    for (name, s) in lm_diagnostics(&panel, &ols, &w)?.all() {
        println!("  {name:<16} {:>8.3}  p={:.4}", s.statistic, s.p_value);
    }
    show(&fit_sem(&panel, &w)?);
    show(&fit_sar(&panel, &w)?);
    Ok(())
}
