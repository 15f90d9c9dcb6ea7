//! Named figure-scale configurations, selected with `--figure`.

use crate::error::{Error, Result};

pub const FIGURES: [&str; 12] = [
    "fig1", "fig2a", "fig2b", "fig2c", "fig2d", "fig3a", "fig3b", "fig3c", "fig3d", "fig4", "fig5", "fig6",
];

fn deterministic(initial: &str, schedule: &str, t_max: f64) -> String {
    format!(
        "mode = \"deterministic\"\n\
         [model]\nsites = 20\nspecies = \"both\"\ninitial = \"{initial}\"\n\
         [numerics]\ndt = 0.001\nmax_bond = 100\n\
         [schedule]\n{schedule}\n\
         [run]\nt_max = {t_max:?}\nsamples = 161\nentropy = true\n"
    )
}

fn stochastic(initial: &str, dephasing: f64, interaction: f64, run: &str) -> String {
    format!(
        "mode = \"stochastic\"\n\
         [model]\nsites = 16\nspecies = \"both\"\ninitial = \"{initial}\"\ninteraction = {interaction:?}\n\
         [dissipation]\ngamma_loss = 0.01\ngamma_dephasing = {dephasing:?}\n\
         [numerics]\ndt = 0.001\nmax_bond = 200\n\
         [run]\n{run}\n"
    )
}

/// Configuration text for a named figure.
pub fn preset(name: &str) -> Result<String> {
    let two_loss = |variant: char| -> Result<String> {
        let (initial, delta) = match variant {
            'a' => ("unit-filling", 0),
            // Half filling needs the middle site occupied for the first loss.
            'b' => ("cdw-even", 0),
            'c' => ("unit-filling", 4),
            'd' => ("cdw-even", 4),
            _ => return Err(unknown(name)),
        };
        let tau0 = if variant == 'a' { 1.0 } else { 2.0 };
        Ok(deterministic(initial, &format!("tau0 = {tau0:?}\ndelta = {delta}"), 8.0))
    };
    match name {
        "fig1" => Ok(deterministic("unit-filling", "", 4.0)),
        // The density and entropy maps come from the same run.
        _ if name.len() == 5 && (name.starts_with("fig2") || name.starts_with("fig3")) => {
            two_loss(name.chars().last().unwrap_or('?'))
        }
        "fig4" => Ok(stochastic(
            "cdw-even",
            0.0,
            0.0,
            "t_max = 50.0\nsamples = 250\ngrid = \"random\"\ngrid_seed = 4\ntrajectories = 200\nseed = 1",
        )),
        "fig5" => Ok(stochastic(
            "cdw-even",
            0.01,
            0.0,
            "t_max = 50.0\nsamples = 501\ngrid = \"regular\"\ntrajectories = 200\nseed = 1",
        )),
        "fig6" => Ok(stochastic(
            "cdw-odd",
            0.0,
            0.5,
            "t_max = 20.0\ngrid = \"every-step\"\ntrajectories = 200\nseed = 1\nblock_window = 300",
        )),
        _ => Err(unknown(name)),
    }
}

fn unknown(name: &str) -> Error {
    Error::config("--figure", format!("unknown figure `{name}`; expected one of {}", FIGURES.join(", ")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::config::{parse_config_str, Mode};

    #[test]
    fn every_preset_parses() {
        for name in FIGURES {
            let c = parse_config_str(&preset(name).unwrap()).unwrap();
            assert!(c.sites() >= 16, "{name}");
            assert!(c.loss_schedule().is_ok(), "{name}");
        }
        assert!(preset("fig7").is_err());
        assert!(preset("fig2e").is_err());
    }

    #[test]
    fn caption_parameters() {
        let c = parse_config_str(&preset("fig2a").unwrap()).unwrap();
        assert_eq!(c.mode, Some(Mode::Deterministic));
        assert_eq!((c.sites(), c.numerics.max_bond, c.numerics.dt), (20, 100, 0.001));
        assert_eq!(c.schedule.tau0, Some(1.0));
        let c = parse_config_str(&preset("fig3d").unwrap()).unwrap();
        assert_eq!((c.schedule.tau0, c.schedule.delta), (Some(2.0), 4));
        let c = parse_config_str(&preset("fig4").unwrap()).unwrap();
        assert_eq!(c.model.dissipation.loss, vec![0.01; 16]);
        assert_eq!(c.numerics.max_bond, 200);
    }
}
