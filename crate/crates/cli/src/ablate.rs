//! Named experiment rows for `ssc ablate`.

use ssc_core::generator::{FusionMode, ModSites};
use ssc_core::training::{PerturbKinds, TrainConfig};

pub struct Row {
    pub name: String,
    pub group: &'static str,
    pub config: TrainConfig,
}

fn base(modulated: bool, adversarial: bool) -> TrainConfig {
    let mut c = TrainConfig::default();
    if !modulated {
        c.fusion_mode = FusionMode::Addition;
        c.modulation_sites = ModSites::NONE;
    }
    c.adversarial_enabled = adversarial;
    c
}

fn sites(m2: bool, m3: bool) -> ModSites {
    ModSites { m1: true, m2, m3 }
}

pub const GROUPS: [&str; 5] = ["table3", "table4", "table5", "table6", "fig6"];

/// Every row, in table order.
pub fn rows() -> Vec<Row> {
    let mut out = Vec::new();
    let mut push = |name: String, group: &'static str, config: TrainConfig| out.push(Row { name, group, config });

    push("t3-baseline".into(), "table3", base(false, false));
    push("t3-mod".into(), "table3", base(true, false));
    push("t3-adv".into(), "table3", base(false, true));
    push("t3-ammnet".into(), "table3", base(true, true));

    for adv in [false, true] {
        for (tag, s) in [("m1", sites(false, false)), ("m12", sites(true, false)), ("m123", sites(true, true))] {
            let mut c = base(true, adv);
            c.modulation_sites = s;
            let name = if adv { format!("t4-adv-{tag}") } else { format!("t4-{tag}") };
            push(name, "table4", c);
        }
    }

    for (tag, mode) in [
        ("mod", FusionMode::Modulation),
        ("mod-detached", FusionMode::ModulationDetached),
        ("add-modgrad", FusionMode::AdditionModulatedGrad),
    ] {
        let mut c = base(true, true);
        c.fusion_mode = mode;
        push(format!("t5-{tag}"), "table5", c);
    }

    for (tag, geometric, semantic) in
        [("disc-only", false, false), ("geo", true, false), ("sem", false, true), ("geo-sem", true, true)]
    {
        let mut c = base(false, true);
        c.perturb_kinds = PerturbKinds { geometric, semantic };
        push(format!("t6-{tag}"), "table6", c);
    }

    for beta in [0.0005, 0.001, 0.005, 0.01, 0.05] {
        let mut c = base(true, true);
        c.beta = beta;
        push(format!("f6-beta-{beta}"), "fig6", c);
    }
    for p in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let mut c = base(false, true);
        c.perturb.pg_range = [p, p];
        push(format!("f6-pg-{p}"), "fig6", c);
        let mut c = base(false, true);
        c.perturb.ps_range = [p, p];
        push(format!("f6-ps-{p}"), "fig6", c);
    }
    out
}

/// Rows selected by a row name or a group name.
pub fn select(name: &str) -> Option<Vec<Row>> {
    let all = rows();
    let picked: Vec<Row> = if GROUPS.contains(&name) {
        all.into_iter().filter(|r| r.group == name).collect()
    } else {
        all.into_iter().filter(|r| r.name == name).collect()
    };
    (!picked.is_empty()).then_some(picked)
}
