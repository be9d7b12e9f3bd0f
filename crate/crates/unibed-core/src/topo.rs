//! Architecture model: nodes joined by classified I/O links, firewall
//! direction policies, structural validation, and flow reachability with
//! relay-rendezvous composition.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::util::fnv1a64;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TopoError {
    UnknownNode(String),
    UnknownLink(String),
}

impl fmt::Display for TopoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopoError::UnknownNode(id) => write!(f, "unknown node {:?}", id),
            TopoError::UnknownLink(id) => write!(f, "unknown link {:?}", id),
        }
    }
}

impl core::error::Error for TopoError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Thing,
    Actuator,
    Sensor,
    Controller,
    Gateway,
    Firewall,
    Server,
    Client,
    Attacker,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Thing => "thing",
            NodeKind::Actuator => "actuator",
            NodeKind::Sensor => "sensor",
            NodeKind::Controller => "controller",
            NodeKind::Gateway => "gateway",
            NodeKind::Firewall => "firewall",
            NodeKind::Server => "server",
            NodeKind::Client => "client",
            NodeKind::Attacker => "attacker",
        }
    }

    /// Kinds that bridge non-networked I/O onto a network.
    pub fn bridges_io(self) -> bool {
        matches!(self, NodeKind::Controller | NodeKind::Gateway)
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IoClass {
    Uart,
    Knx,
    BacnetIp,
    Wifi,
    Ethernet,
    ProprietaryIo,
}

impl IoClass {
    pub fn as_str(self) -> &'static str {
        match self {
            IoClass::Uart => "uart",
            IoClass::Knx => "knx",
            IoClass::BacnetIp => "bacnet_ip",
            IoClass::Wifi => "wifi",
            IoClass::Ethernet => "ethernet",
            IoClass::ProprietaryIo => "proprietary_io",
        }
    }

    /// Point-to-point wire classes carry no addressing and cannot be
    /// networked; everything else must be.
    pub fn networking_capable(self) -> bool {
        !matches!(self, IoClass::Uart | IoClass::ProprietaryIo)
    }
}

impl fmt::Display for IoClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
    #[serde(default)]
    pub physically_exposed_io: bool,
    #[serde(default)]
    pub default_credentials: bool,
    #[serde(default)]
    pub unencrypted_storage: bool,
}

impl Node {
    pub fn new(id: &str, kind: NodeKind) -> Self {
        Node {
            id: id.to_string(),
            kind,
            physically_exposed_io: false,
            default_credentials: false,
            unencrypted_storage: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    pub id: String,
    pub a: String,
    pub b: String,
    pub io_class: IoClass,
    pub networked: bool,
    #[serde(default)]
    pub encrypted: bool,
    #[serde(default)]
    pub authenticated: bool,
}

impl Link {
    pub fn new(id: &str, a: &str, b: &str, io_class: IoClass) -> Self {
        Link {
            id: id.to_string(),
            a: a.to_string(),
            b: b.to_string(),
            io_class,
            networked: io_class.networking_capable(),
            encrypted: false,
            authenticated: false,
        }
    }

    pub fn other_end(&self, node: &str) -> Option<&str> {
        if self.a == node {
            Some(&self.b)
        } else if self.b == node {
            Some(&self.a)
        } else {
            None
        }
    }
}

/// Direction policy of one firewall node. `wan` anchors which side of the
/// firewall counts as outside: the component containing that node once the
/// firewall is removed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FirewallPolicy {
    pub inbound_unsolicited: bool,
    pub wan: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    #[serde(default)]
    pub nodes: Vec<Node>,
    #[serde(default)]
    pub links: Vec<Link>,
    /// Keyed by firewall node id.
    #[serde(default)]
    pub firewalls: BTreeMap<String, FirewallPolicy>,
}

impl Topology {
    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn link(&self, id: &str) -> Option<&Link> {
        self.links.iter().find(|l| l.id == id)
    }

    fn require_node(&self, id: &str) -> Result<&Node, TopoError> {
        self.node(id).ok_or_else(|| TopoError::UnknownNode(id.to_string()))
    }

    fn adjacency(&self) -> BTreeMap<&str, Vec<&Link>> {
        let mut adj: BTreeMap<&str, Vec<&Link>> = BTreeMap::new();
        for n in &self.nodes {
            adj.entry(n.id.as_str()).or_default();
        }
        for l in &self.links {
            if self.node(&l.a).is_some() && self.node(&l.b).is_some() {
                adj.entry(l.a.as_str()).or_default().push(l);
                adj.entry(l.b.as_str()).or_default().push(l);
            }
        }
        adj
    }

    /// Nodes connected to `start`, ignoring the node `skip_node` and the
    /// link `skip_link` when given.
    fn component(&self, start: &str, skip_node: Option<&str>, skip_link: Option<&str>) -> BTreeSet<String> {
        let adj = self.adjacency();
        let mut seen = BTreeSet::new();
        let mut queue = Vec::new();
        if Some(start) != skip_node && self.node(start).is_some() {
            seen.insert(start.to_string());
            queue.push(start);
        }
        while let Some(u) = queue.pop() {
            for l in adj.get(u).into_iter().flatten() {
                if Some(l.id.as_str()) == skip_link {
                    continue;
                }
                let v = l.other_end(u).expect("link is adjacent to u");
                if Some(v) == skip_node || seen.contains(v) {
                    continue;
                }
                seen.insert(v.to_string());
                queue.push(self.node(v).expect("endpoint exists").id.as_str());
            }
        }
        seen
    }

    /// The two node sets separated by cutting `link_id`. Errors if the link
    /// is unknown; if the graph stays connected around the cut, both sets
    /// are equal and the cut does not partition.
    pub fn sides_of_cut(&self, link_id: &str) -> Result<(BTreeSet<String>, BTreeSet<String>), TopoError> {
        let l = self.link(link_id).ok_or_else(|| TopoError::UnknownLink(link_id.to_string()))?;
        Ok((
            self.component(&l.a, None, Some(link_id)),
            self.component(&l.b, None, Some(link_id)),
        ))
    }

    /// Canonical line-oriented rendering; input order of nodes and links
    /// does not affect it.
    pub fn canonical_text(&self) -> String {
        let mut lines: Vec<String> = Vec::new();
        for n in &self.nodes {
            lines.push(format!(
                "node\t{}\t{}\tio={} cred={} store={}",
                n.id, n.kind, n.physically_exposed_io as u8, n.default_credentials as u8, n.unencrypted_storage as u8
            ));
        }
        for l in &self.links {
            lines.push(format!(
                "link\t{}\t{}\t{}\t{}\tnet={} enc={} auth={}",
                l.id, l.a, l.b, l.io_class, l.networked as u8, l.encrypted as u8, l.authenticated as u8
            ));
        }
        for (id, p) in &self.firewalls {
            lines.push(format!("firewall\t{}\tinbound={}\twan={}", id, p.inbound_unsolicited as u8, p.wan));
        }
        lines.sort();
        let mut out = String::new();
        for l in lines {
            out.push_str(&l);
            out.push('\n');
        }
        out
    }

    pub fn digest(&self) -> u64 {
        fnv1a64(self.canonical_text().as_bytes())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Offending node or link id.
    pub subject: String,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.subject, self.detail)
    }
}

/// Structural checks. An empty result means every invariant holds.
pub fn validate_topology(t: &Topology) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    for n in &t.nodes {
        if !ids.insert(n.id.as_str()) {
            out.push(Violation { subject: n.id.clone(), detail: "duplicate node id".to_string() });
        }
    }
    let mut link_ids = BTreeSet::new();
    for l in &t.links {
        if !link_ids.insert(l.id.as_str()) {
            out.push(Violation { subject: l.id.clone(), detail: "duplicate link id".to_string() });
        }
        for end in [&l.a, &l.b] {
            if t.node(end).is_none() {
                out.push(Violation {
                    subject: l.id.clone(),
                    detail: format!("endpoint {:?} is not a node", end),
                });
            }
        }
        if l.networked != l.io_class.networking_capable() {
            let detail = if l.networked {
                format!("{} is a point-to-point wire and cannot be networked", l.io_class)
            } else {
                format!("{} always carries networking capability", l.io_class)
            };
            out.push(Violation { subject: l.id.clone(), detail });
        }
    }
    for (id, p) in &t.firewalls {
        match t.node(id) {
            None => out.push(Violation { subject: id.clone(), detail: "firewall policy names a missing node".to_string() }),
            Some(n) if n.kind != NodeKind::Firewall => out.push(Violation {
                subject: id.clone(),
                detail: format!("firewall policy attached to a {} node", n.kind),
            }),
            Some(_) => {}
        }
        if t.node(&p.wan).is_none() {
            out.push(Violation { subject: id.clone(), detail: format!("wan anchor {:?} is not a node", p.wan) });
        }
    }
    for n in &t.nodes {
        if n.kind == NodeKind::Firewall && !t.firewalls.contains_key(&n.id) {
            out.push(Violation { subject: n.id.clone(), detail: "firewall node has no direction policy".to_string() });
        }
    }
    if let Some(first) = t.nodes.first() {
        let seen = t.component(&first.id, None, None);
        for n in &t.nodes {
            if !seen.contains(&n.id) {
                out.push(Violation {
                    subject: n.id.clone(),
                    detail: format!("not connected to {:?}", first.id),
                });
                break;
            }
        }
    }
    out
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
enum Side {
    Wan,
    Lan,
}

/// True when data can flow from `src` to `dst`.
///
/// A path may use a non-networked link only where one of its endpoints is a
/// controller or gateway bridging it. Each firewall on the path is crossed
/// from its WAN side to its LAN side only when the flow was initiated on
/// the LAN side or the policy allows unsolicited inbound traffic. When no
/// direct path exists, a relay composition is tried: both endpoints dial
/// out to a common server node and the server forwards between the two
/// connections.
pub fn reachable(t: &Topology, src: &str, dst: &str, initiated_by_src: bool) -> Result<bool, TopoError> {
    t.require_node(src)?;
    t.require_node(dst)?;
    if src == dst {
        return Ok(true);
    }
    let initiator = if initiated_by_src { src } else { dst };
    if direct_reach(t, src, dst, initiator) {
        return Ok(true);
    }
    for r in &t.nodes {
        if r.kind == NodeKind::Server && r.id != src && r.id != dst {
            if direct_reach(t, src, &r.id, src) && direct_reach(t, dst, &r.id, dst) {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

fn direct_reach(t: &Topology, src: &str, dst: &str, initiator: &str) -> bool {
    if src == dst {
        return true;
    }
    let adj = t.adjacency();
    // Firewall side maps: node -> Wan/Lan, relative to each firewall.
    let mut fw_sides: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
    for (id, p) in &t.firewalls {
        if t.node(id).is_some() {
            fw_sides.insert(id.as_str(), t.component(&p.wan, Some(id), None));
        }
    }
    let side_of = |fw: &str, node: &str| -> Side {
        match fw_sides.get(fw) {
            Some(wan) if wan.contains(node) => Side::Wan,
            _ => Side::Lan,
        }
    };
    // BFS state: the node plus, for firewalls, the side it was entered from.
    let mut seen: BTreeSet<(String, Option<Side>)> = BTreeSet::new();
    let mut queue: Vec<(String, Option<Side>)> = Vec::new();
    seen.insert((src.to_string(), None));
    queue.push((src.to_string(), None));
    while let Some((u, entry)) = queue.pop() {
        for l in adj.get(u.as_str()).into_iter().flatten() {
            let v = match l.other_end(&u) {
                Some(v) => v,
                None => continue,
            };
            if !l.networked {
                let ka = t.node(&l.a).map(|n| n.kind);
                let kb = t.node(&l.b).map(|n| n.kind);
                let bridged = ka.map(NodeKind::bridges_io).unwrap_or(false)
                    || kb.map(NodeKind::bridges_io).unwrap_or(false);
                if !bridged {
                    continue;
                }
            }
            // Leaving a firewall: entering its LAN from its WAN side needs
            // a LAN-side initiator or an inbound-unsolicited allowance.
            if let Some(entered_from) = entry {
                if fw_sides.contains_key(u.as_str()) {
                    let exit = side_of(&u, v);
                    if entered_from == Side::Wan && exit == Side::Lan {
                        let policy = &t.firewalls[u.as_str()];
                        if !policy.inbound_unsolicited && side_of(&u, initiator) != Side::Lan {
                            continue;
                        }
                    }
                }
            }
            if v == dst {
                return true;
            }
            let state = if fw_sides.contains_key(v) {
                (v.to_string(), Some(side_of(v, &u)))
            } else {
                (v.to_string(), None)
            };
            if seen.insert(state.clone()) {
                queue.push(state);
            }
        }
    }
    false
}
