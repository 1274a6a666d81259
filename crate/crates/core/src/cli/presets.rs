//! Bundled experiment configurations for the six figures.

use crate::cli::config::ExperimentConfig;
use crate::{Error, Result};

pub const PRESET_NAMES: [&str; 6] = ["fig4", "fig5", "fig6", "fig7", "fig8", "fig9"];

/// TOML source of a preset.
pub fn preset_text(name: &str) -> Result<&'static str> {
    Ok(match name {
        "fig4" => include_str!("../../presets/fig4.toml"),
        "fig5" => include_str!("../../presets/fig5.toml"),
        "fig6" => include_str!("../../presets/fig6.toml"),
        "fig7" => include_str!("../../presets/fig7.toml"),
        "fig8" => include_str!("../../presets/fig8.toml"),
        "fig9" => include_str!("../../presets/fig9.toml"),
        _ => {
            return Err(Error::Config(format!(
                "unknown preset {name:?}; available: {}",
                PRESET_NAMES.join(", ")
            )))
        }
    })
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    ExperimentConfig::from_toml(preset_text(name)?).map_err(|e| Error::Config(format!("preset {name}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::config::Experiment;
    use crate::optimize::ScheduleSource;

    #[test]
    fn every_preset_parses() {
        for name in PRESET_NAMES {
            let c = preset(name).unwrap();
            assert_eq!(c.name, name);
            assert_eq!(c.trials, 100_000);
            assert!(!c.paper_unstated.is_empty(), "{name}");
        }
        assert!(preset("fig10").is_err());
    }

    #[test]
    fn stated_parameters() {
        let f4 = preset("fig4").unwrap();
        assert_eq!(
            (f4.network.sigma_z2, f4.network.alpha, f4.network.samples),
            (10.0, 0.01, 20)
        );
        assert_eq!(f4.nodes.len(), 3);

        let Experiment::Cfar { p0, memory, alphas } = preset("fig5").unwrap().experiment else {
            panic!("fig5 kind");
        };
        assert_eq!(p0, vec![0.6, 0.8]);
        assert_eq!(memory, vec![0, 1]);
        assert!(alphas.len() > 3);

        let f6 = preset("fig6").unwrap();
        let snrs: Vec<f64> = f6.nodes.iter().map(|n| n.snr_db).collect();
        assert_eq!(snrs, vec![12.0, 5.0, 10.0]);
        assert_eq!(f6.schedule, ScheduleSource::DcSdp);

        let f7 = preset("fig7").unwrap();
        let snrs: Vec<f64> = f7.nodes.iter().map(|n| n.snr_db).collect();
        assert_eq!(snrs, vec![12.0, 5.0, 7.0]);
        assert_eq!(f7.network.eta, 0.3);
        let Experiment::NodeScaling { replicate, .. } = &f7.experiment else {
            panic!("fig7 kind");
        };
        let ks: Vec<usize> = replicate.iter().map(|r| r * f7.nodes.len()).collect();
        assert_eq!(ks, vec![3, 9, 15, 30]);

        let f9 = preset("fig9").unwrap();
        assert_eq!(f9.network.alpha, 0.1);
        let Experiment::SnrLoss { snr0_db, delta_db, .. } = &f9.experiment else {
            panic!("fig9 kind");
        };
        assert_eq!(snr0_db, &vec![5.0, 10.0]);
        assert_eq!(delta_db, &vec![0.0, 1.0, 3.0]);
    }
}
