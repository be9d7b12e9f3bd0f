//! Six-factor risk assessment over a topology plus findings imported from
//! executed attack scenarios. Factor scores use a 0 to 4 convention equal
//! to the worst finding's severity; the scale is a testbed convention and
//! reports flag it as such.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::topo::{Link, Node, Topology};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    Hardware,
    Networking,
    Os,
    Software,
    Data,
    Human,
}

impl Factor {
    pub const ALL: [Factor; 6] =
        [Factor::Hardware, Factor::Networking, Factor::Os, Factor::Software, Factor::Data, Factor::Human];

    pub fn as_str(self) -> &'static str {
        match self {
            Factor::Hardware => "hardware",
            Factor::Networking => "networking",
            Factor::Os => "os",
            Factor::Software => "software",
            Factor::Data => "data",
            Factor::Human => "human",
        }
    }
}

impl core::fmt::Display for Factor {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Info,
    Low,
    Medium,
    High,
    Critical,
}

impl Severity {
    pub fn score(self) -> u8 {
        match self {
            Severity::Info => 0,
            Severity::Low => 1,
            Severity::Medium => 2,
            Severity::High => 3,
            Severity::Critical => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Info => "info",
            Severity::Low => "low",
            Severity::Medium => "medium",
            Severity::High => "high",
            Severity::Critical => "critical",
        }
    }
}

impl core::fmt::Display for Severity {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub factor: Factor,
    pub severity: Severity,
    /// Stable machine identifier, e.g. `net.unencrypted-link`.
    pub rule: String,
    pub title: String,
    pub evidence: String,
    /// Node or link the finding is about.
    pub subject: String,
}

/// Per-factor scores, 0 when a factor has no findings.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorScores {
    pub hardware: u8,
    pub networking: u8,
    pub os: u8,
    pub software: u8,
    pub data: u8,
    pub human: u8,
}

impl FactorScores {
    pub fn get(&self, f: Factor) -> u8 {
        match f {
            Factor::Hardware => self.hardware,
            Factor::Networking => self.networking,
            Factor::Os => self.os,
            Factor::Software => self.software,
            Factor::Data => self.data,
            Factor::Human => self.human,
        }
    }

    fn raise(&mut self, f: Factor, s: u8) {
        let slot = match f {
            Factor::Hardware => &mut self.hardware,
            Factor::Networking => &mut self.networking,
            Factor::Os => &mut self.os,
            Factor::Software => &mut self.software,
            Factor::Data => &mut self.data,
            Factor::Human => &mut self.human,
        };
        if s > *slot {
            *slot = s;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskReport {
    pub scores: FactorScores,
    pub findings: Vec<Finding>,
    /// Hex digest of the canonical topology text.
    pub topology_digest: String,
    /// Scale note carried into every rendering.
    pub scale: String,
}

struct NodeRule {
    rule: &'static str,
    title: &'static str,
    factor: Factor,
    severity: Severity,
    applies: fn(&Node) -> bool,
    evidence: fn(&Node) -> String,
}

struct LinkRule {
    rule: &'static str,
    title: &'static str,
    factor: Factor,
    severity: Severity,
    applies: fn(&Link) -> bool,
    evidence: fn(&Link) -> String,
}

static NODE_RULES: &[NodeRule] = &[
    NodeRule {
        rule: "hw.exposed-io",
        title: "physically exposed I/O port",
        factor: Factor::Hardware,
        severity: Severity::High,
        applies: |n| n.physically_exposed_io,
        evidence: |n| format!("node {} exposes a debug or peripheral port an attacker can cable into", n.id),
    },
    NodeRule {
        rule: "human.default-credentials",
        title: "factory default credentials",
        factor: Factor::Human,
        severity: Severity::High,
        applies: |n| n.default_credentials,
        evidence: |n| format!("node {} still accepts its factory default password", n.id),
    },
    NodeRule {
        rule: "data.unencrypted-storage",
        title: "unencrypted at-rest storage",
        factor: Factor::Data,
        severity: Severity::Medium,
        applies: |n| n.unencrypted_storage,
        evidence: |n| format!("node {} stores data on unencrypted flash", n.id),
    },
];

static LINK_RULES: &[LinkRule] = &[
    LinkRule {
        rule: "net.unencrypted-link",
        title: "unencrypted networked link",
        factor: Factor::Networking,
        severity: Severity::High,
        applies: |l| l.networked && !l.encrypted,
        evidence: |l| format!("link {} ({}) carries traffic in the clear", l.id, l.io_class),
    },
    LinkRule {
        rule: "net.unauthenticated-link",
        title: "unauthenticated networked link",
        factor: Factor::Networking,
        severity: Severity::Medium,
        applies: |l| l.networked && !l.authenticated,
        evidence: |l| format!("link {} ({}) accepts frames from any sender", l.id, l.io_class),
    },
];

/// Checklist assessment. `probes` carries findings produced by executed
/// attack scenarios; static topology rules never populate the OS and
/// software factors, those come only from probes.
pub fn assess_risk(t: &Topology, probes: &[Finding]) -> RiskReport {
    let mut findings: Vec<Finding> = Vec::new();
    for n in &t.nodes {
        for r in NODE_RULES {
            if (r.applies)(n) {
                findings.push(Finding {
                    factor: r.factor,
                    severity: r.severity,
                    rule: r.rule.to_string(),
                    title: r.title.to_string(),
                    evidence: (r.evidence)(n),
                    subject: n.id.clone(),
                });
            }
        }
    }
    for l in &t.links {
        for r in LINK_RULES {
            if (r.applies)(l) {
                findings.push(Finding {
                    factor: r.factor,
                    severity: r.severity,
                    rule: r.rule.to_string(),
                    title: r.title.to_string(),
                    evidence: (r.evidence)(l),
                    subject: l.id.clone(),
                });
            }
        }
    }
    findings.extend_from_slice(probes);
    findings.sort_by(|x, y| {
        x.factor
            .cmp(&y.factor)
            .then(y.severity.cmp(&x.severity))
            .then(x.title.cmp(&y.title))
            .then(x.subject.cmp(&y.subject))
            .then(x.evidence.cmp(&y.evidence))
    });
    let mut scores = FactorScores::default();
    for f in &findings {
        scores.raise(f.factor, f.severity.score());
    }
    RiskReport {
        scores,
        findings,
        topology_digest: format!("{:016x}", t.digest()),
        scale: "factor score = worst finding severity, 0 none to 4 critical (testbed convention)".to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topo::{FirewallPolicy, IoClass, Link, Node, NodeKind};
    use std::vec;

    fn clean_topology() -> Topology {
        let mut t = Topology::default();
        t.nodes = vec![
            Node::new("sensor", NodeKind::Sensor),
            Node::new("gw", NodeKind::Gateway),
        ];
        let mut l = Link::new("up", "sensor", "gw", IoClass::Ethernet);
        l.encrypted = true;
        l.authenticated = true;
        t.links = vec![l];
        t
    }

    fn airmap_topology() -> Topology {
        let mut t = Topology::default();
        let mut sensor = Node::new("aq-sensor", NodeKind::Sensor);
        sensor.physically_exposed_io = true;
        t.nodes = vec![
            sensor,
            Node::new("ap", NodeKind::Gateway),
            Node::new("fw", NodeKind::Firewall),
            Node::new("map-server", NodeKind::Server),
        ];
        t.links = vec![
            Link::new("aq-wifi", "aq-sensor", "ap", IoClass::Wifi),
            Link::new("ap-fw", "ap", "fw", IoClass::Ethernet),
            Link::new("fw-net", "fw", "map-server", IoClass::Ethernet),
        ];
        t.firewalls.insert(
            "fw".to_string(),
            FirewallPolicy { inbound_unsolicited: false, wan: "map-server".to_string() },
        );
        t
    }

    #[test]
    fn clean_topology_scores_all_zero() {
        let r = assess_risk(&clean_topology(), &[]);
        for f in Factor::ALL {
            assert_eq!(r.scores.get(f), 0, "factor {}", f);
        }
        assert!(r.findings.is_empty());
    }

    #[test]
    fn airmap_topology_flags_wifi_and_usb() {
        let r = assess_risk(&airmap_topology(), &[]);
        assert!(r.scores.networking >= 3);
        assert!(r.scores.hardware >= 3);
        assert!(r.findings.iter().any(|f| f.rule == "net.unencrypted-link" && f.subject == "aq-wifi"));
        assert!(r.findings.iter().any(|f| f.rule == "hw.exposed-io" && f.subject == "aq-sensor"));
    }

    #[test]
    fn assessment_is_deterministic() {
        let a = assess_risk(&airmap_topology(), &[]);
        let b = assess_risk(&airmap_topology(), &[]);
        assert_eq!(a, b);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn score_is_max_severity_not_sum() {
        let probes = vec![
            Finding {
                factor: Factor::Software,
                severity: Severity::Medium,
                rule: "sw.a".to_string(),
                title: "a".to_string(),
                evidence: String::new(),
                subject: "x".to_string(),
            },
            Finding {
                factor: Factor::Software,
                severity: Severity::High,
                rule: "sw.b".to_string(),
                title: "b".to_string(),
                evidence: String::new(),
                subject: "x".to_string(),
            },
        ];
        let r = assess_risk(&clean_topology(), &probes);
        assert_eq!(r.scores.software, 3);
    }

    #[test]
    fn adding_findings_never_lowers_scores() {
        let base = assess_risk(&airmap_topology(), &[]);
        let mut probes = Vec::new();
        for (i, f) in Factor::ALL.iter().enumerate() {
            probes.push(Finding {
                factor: *f,
                severity: if i % 2 == 0 { Severity::Low } else { Severity::Critical },
                rule: format!("probe.{}", i),
                title: format!("probe {}", i),
                evidence: String::new(),
                subject: "probe".to_string(),
            });
            let r = assess_risk(&airmap_topology(), &probes);
            for f in Factor::ALL {
                assert!(r.scores.get(f) >= base.scores.get(f));
            }
        }
    }

    #[test]
    fn findings_are_ordered_by_factor_then_severity_then_title() {
        let probes = vec![
            Finding {
                factor: Factor::Software,
                severity: Severity::Critical,
                rule: "sw.crash".to_string(),
                title: "decoder crash".to_string(),
                evidence: String::new(),
                subject: "codec".to_string(),
            },
            Finding {
                factor: Factor::Hardware,
                severity: Severity::Low,
                rule: "hw.x".to_string(),
                title: "zz minor".to_string(),
                evidence: String::new(),
                subject: "y".to_string(),
            },
        ];
        let r = assess_risk(&airmap_topology(), &probes);
        let keys: Vec<(Factor, u8)> = r.findings.iter().map(|f| (f.factor, f.severity.score())).collect();
        let mut sorted = keys.clone();
        sorted.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
        assert_eq!(keys, sorted);
        assert_eq!(r.findings.iter().filter(|f| f.factor == Factor::Hardware).count(), 2);
    }

    #[test]
    fn os_and_software_come_only_from_probes() {
        let r = assess_risk(&airmap_topology(), &[]);
        assert_eq!(r.scores.os, 0);
        assert_eq!(r.scores.software, 0);
    }
}
