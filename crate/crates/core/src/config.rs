//! Flat `key = value` configuration files.
//!
//! One assignment per line; `#` starts a comment. Keys not present keep
//! their current value, so a file can override any subset of the defaults.
//!
//! ```text
//! # device
//! e_z = 14e9
//! de_z = 200e6
//! readout_left_gamma_off_up = 2e3
//! ```

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::device::DeviceParams;
use crate::error::{Error, Result};
use crate::readout::{ReadoutParams, SequentialReadout};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Config {
    pub device: DeviceParams,
    pub readout: SequentialReadout,
}

fn readout_fields<'a>(prefix: &str, r: &'a mut ReadoutParams) -> Vec<(String, &'a mut f64)> {
    let ReadoutParams {
        gamma_off_up,
        gamma_on,
        t1,
        t_read,
        sample_rate,
        blip_amplitude,
        noise,
        filter_cutoff,
        t_e,
        e_z,
    } = r;
    [
        ("gamma_off_up", gamma_off_up),
        ("gamma_on", gamma_on),
        ("t1", t1),
        ("t_read", t_read),
        ("sample_rate", sample_rate),
        ("blip_amplitude", blip_amplitude),
        ("white_density", &mut noise.white_density),
        ("one_over_f_amplitude", &mut noise.one_over_f_amplitude),
        ("filter_cutoff", filter_cutoff),
        ("t_e", t_e),
        ("e_z", e_z),
    ]
    .into_iter()
    .map(|(k, v)| (format!("{prefix}{k}"), v))
    .collect()
}

impl Config {
    /// Every configurable key with a mutable handle on its value, in file order.
    fn fields(&mut self) -> Vec<(String, &mut f64)> {
        let DeviceParams {
            e_z,
            de_z,
            b1_z_left,
            b1_z_right,
            e_c_left,
            e_c_right,
            t1,
            t2_star_left,
            t2_star_right,
            t2_echo_left,
            t2_echo_right,
            exchange_fit,
            rabi_frequency,
            drive_crosstalk,
            j_idle,
        } = &mut self.device;
        let mut out: Vec<(String, &mut f64)> = [
            ("e_z", e_z),
            ("de_z", de_z),
            ("b1_z_left", b1_z_left),
            ("b1_z_right", b1_z_right),
            ("e_c_left", e_c_left),
            ("e_c_right", e_c_right),
            ("t1", t1),
            ("t2_star_left", t2_star_left),
            ("t2_star_right", t2_star_right),
            ("t2_echo_left", t2_echo_left),
            ("t2_echo_right", t2_echo_right),
            ("exchange_c", &mut exchange_fit.c),
            ("exchange_v_m0", &mut exchange_fit.v_m0),
            ("exchange_v_m1", &mut exchange_fit.v_m1),
            ("exchange_v_on", &mut exchange_fit.v_on),
            ("rabi_frequency", rabi_frequency),
            ("drive_crosstalk", drive_crosstalk),
            ("j_idle", j_idle),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let SequentialReadout {
            left,
            right,
            partner_delay,
        } = &mut self.readout;
        out.extend(readout_fields("readout_left_", left));
        out.extend(readout_fields("readout_right_", right));
        out.push(("readout_partner_delay".to_string(), partner_delay));
        out
    }

    pub fn keys() -> Vec<String> {
        Config::default().fields().into_iter().map(|(k, _)| k).collect()
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.clone().fields().into_iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        match self.fields().into_iter().find(|(k, _)| k == key) {
            Some((_, v)) => {
                *v = value;
                Ok(())
            }
            None => Err(Error::param(key, "unknown configuration key")),
        }
    }

    /// Applies the assignments in `text` on top of `self`.
    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                line: line_no,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let value: f64 = value
                .parse()
                .map_err(|_| parse_err(format!("`{value}` is not a number")))?;
            if !seen.insert(key.to_string()) {
                return Err(parse_err(format!("duplicate key `{key}`")));
            }
            self.set(key, value)
                .map_err(|_| parse_err(format!("unknown key `{key}`")))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Config> {
        let mut cfg = Config::default();
        cfg.apply_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config> {
        Config::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.device.validate()?;
        self.readout.left.validate()?;
        self.readout.right.validate()?;
        if !(self.readout.partner_delay >= 0.0) {
            return Err(Error::param("readout_partner_delay", "must be ≥ 0"));
        }
        Ok(())
    }

    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.clone().fields() {
            let _ = writeln!(out, "{k} = {v:e}");
        }
        out
    }
}
