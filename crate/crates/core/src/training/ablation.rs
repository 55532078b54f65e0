use std::fmt;
use std::str::FromStr;

use super::TrainConfig;
use crate::error::Error;

/// Training configurations with one loss or the disturbance changed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Baseline,
    NoRc,
    NoEc,
    NoSs,
    NoIs,
    NoDisturb,
    TwoDisturb,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Baseline,
        Variant::NoRc,
        Variant::NoEc,
        Variant::NoSs,
        Variant::NoIs,
        Variant::NoDisturb,
        Variant::TwoDisturb,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::NoRc => "no_rc",
            Variant::NoEc => "no_ec",
            Variant::NoSs => "no_ss",
            Variant::NoIs => "no_is",
            Variant::NoDisturb => "no_disturb",
            Variant::TwoDisturb => "two_disturb",
        }
    }

    /// `base` with this variant's change applied on top.
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        match self {
            Variant::Baseline => {}
            Variant::NoRc => c.losses.rc = false,
            Variant::NoEc => c.losses.ec = false,
            Variant::NoSs => c.losses.ss = false,
            Variant::NoIs => c.losses.is = false,
            Variant::NoDisturb => c.n_disturbances = 0,
            Variant::TwoDisturb => c.n_disturbances = 2,
        }
        c
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::Config(format!("unknown variant {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_roundtrip_and_changes_are_isolated() {
        let base = TrainConfig::default();
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            let c = v.apply(&base);
            let changed = (c.losses != base.losses) as u8 + (c.n_disturbances != base.n_disturbances) as u8;
            assert_eq!(changed, (v != Variant::Baseline) as u8);
        }
        assert!(!Variant::NoEc.apply(&base).losses.ec);
        assert_eq!(Variant::TwoDisturb.apply(&base).n_disturbances, 2);
        assert!("no_xx".parse::<Variant>().is_err());
    }
}
