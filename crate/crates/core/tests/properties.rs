use std::collections::BTreeMap;

use proptest::prelude::*;

use nxwlan_core::control::{Attachment, Controller, ControllerConfig, SetupPolicy};
use nxwlan_core::frame::{decode, encode, Dot11Frame, FrameFlags, FrameKind, MacAddr, PhyRate, RadioMeta, TaggedFrame};
use nxwlan_core::radio::{PathLossModel, Position};
use nxwlan_core::steering::{
    airtime_shares, calc_probe_response_tx_powers, encode_willingness, mac_rates, BackhaulCaps, ClientLoad, MacMode,
    ProbeSnapshot, SteeringParams,
};
use nxwlan_core::switch::{BroadcastRule, MulticastGroup, PortRole, SrcMatch, Switch, UnicastRule, Verdict};
use nxwlan_core::NodeId;

const RATES: [f64; 8] = [6.0, 9.0, 12.0, 18.0, 24.0, 36.0, 48.0, 54.0];

fn mac() -> impl Strategy<Value = MacAddr> {
    prop_oneof![
        any::<[u8; 6]>().prop_map(MacAddr),
        Just(MacAddr::BROADCAST),
        (0u8..4).prop_map(|b| MacAddr([2, 0, 0, 0, 0, b])),
    ]
}

fn kind() -> impl Strategy<Value = FrameKind> {
    prop::sample::select(FrameKind::ALL.to_vec())
}

fn phy() -> impl Strategy<Value = PhyRate> {
    prop::sample::select(PhyRate::ALL.to_vec())
}

/// Frames satisfying every type invariant.
fn valid_frame() -> impl Strategy<Value = TaggedFrame> {
    (
        kind(),
        mac(),
        mac(),
        mac(),
        0u16..4096,
        any::<(bool, bool)>(),
        prop::collection::vec(any::<u8>(), 0..64),
        (any::<i8>(), phy(), any::<i8>(), any::<(bool, bool)>()),
    )
        .prop_map(|(kind, a1, a2, a3, seq, (retry, protected), payload, (rssi, rate, txp, (injected, tx_status)))| {
            let mut f = Dot11Frame::new(kind, a1, a2, a3, seq).with_payload(payload);
            f.flags = FrameFlags { retry, protected: protected && kind == FrameKind::Data };
            if kind == FrameKind::Ack {
                f.addr2 = MacAddr::ZERO;
                f.addr3 = MacAddr::ZERO;
                f.payload.clear();
            }
            let meta = RadioMeta {
                rssi_dbm: rssi,
                phy_rate: rate,
                tx_power_dbm: txp,
                injected: injected || tx_status,
                tx_status,
            };
            TaggedFrame::new(f, meta)
        })
}

fn rate_set(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop::sample::select(RATES.to_vec()), 1..=max)
}

proptest! {
    #[test]
    fn frame_round_trip(tf in valid_frame()) {
        prop_assert!(tf.validate().is_ok());
        let bytes = encode(&tf).unwrap();
        prop_assert_eq!(bytes.len(), tf.encoded_len());
        prop_assert_eq!(decode(&bytes).unwrap(), tf);
    }

    #[test]
    fn decode_is_total(bytes in prop::collection::vec(any::<u8>(), 0..128)) {
        if let Ok(tf) = decode(&bytes) {
            prop_assert!(tf.validate().is_ok());
            prop_assert_eq!(encode(&tf).unwrap(), bytes);
        }
    }

    #[test]
    fn encoding_is_injective(a in valid_frame(), b in valid_frame()) {
        prop_assert_eq!(a == b, encode(&a).unwrap() == encode(&b).unwrap());
    }

    #[test]
    fn airtime_shares_sum_to_one(rates in rate_set(20)) {
        let sum: f64 = airtime_shares(&rates).unwrap().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dcf_rates_are_equal(rates in rate_set(20)) {
        let harmonic = 1.0 / rates.iter().map(|r| 1.0 / r).sum::<f64>();
        for r in mac_rates(&rates, MacMode::Dcf).unwrap() {
            prop_assert!(((r - harmonic) / harmonic).abs() < 1e-9);
        }
    }

    #[test]
    fn encoding_monotone_in_willingness(prx in -90.0f64..-30.0, w1 in 0.0f64..=1.0, w2 in 0.0f64..=1.0) {
        let p = SteeringParams::default();
        let (lo, hi) = if w1 <= w2 { (w1, w2) } else { (w2, w1) };
        prop_assert!(encode_willingness(&p, prx, lo).unwrap() <= encode_willingness(&p, prx, hi).unwrap());
    }

    /// Sampled inside the region where neither the 1 dBm floor nor the
    /// client power ceiling clips.
    #[test]
    fn higher_willingness_is_heard_louder(pl in 91.5f64..109.5, f1 in 0.0f64..1.0, f2 in 0.0f64..1.0) {
        let p = SteeringParams::default();
        prop_assume!((f1 - f2).abs() > 1e-9);
        let headroom = (p.ptx_client_dbm - (p.prx_low_dbm + pl)) / p.dynamic_range_db();
        let (w1, w2) = (f1 * headroom * 0.999, f2 * headroom * 0.999);
        let prx = p.ptx_client_dbm - pl;
        let rx1 = encode_willingness(&p, prx, w1).unwrap() - pl;
        let rx2 = encode_willingness(&p, prx, w2).unwrap() - pl;
        prop_assert!((rx1 - (p.prx_low_dbm + w1 * p.dynamic_range_db())).abs() < 1e-6);
        prop_assert_eq!(w1 > w2, rx1 > rx2);
    }

    #[test]
    fn decisions_bounded(
        prx in -100.0f64..-20.0,
        load in prop::collection::vec(prop::sample::select(RATES.to_vec()), 0..8),
        dl in 0.0f64..100.0,
        ul in 0.0f64..100.0,
        neighbors in prop::collection::btree_map(1u32..5, (0.0f64..100.0, 0.0f64..100.0), 0..4),
        txop in any::<bool>(),
    ) {
        let p = SteeringParams::default();
        let snap = ProbeSnapshot {
            prx_preq_dbm: prx,
            load: ClientLoad::new(load),
            backhaul: BackhaulCaps::new(dl, ul),
            neighbors: neighbors.into_iter().map(|(n, (d, u))| (NodeId(n), BackhaulCaps::new(d, u))).collect(),
            mode: if txop { MacMode::Txop } else { MacMode::Dcf },
        };
        let d = calc_probe_response_tx_powers(&p, &snap).unwrap();
        for ap in std::iter::once(&d.rap).chain(d.vaps.values()) {
            prop_assert!(ap.tx_dbm <= p.ptx_client_dbm);
            prop_assert!((0.0..=1.0).contains(&ap.willingness));
        }
    }

    #[test]
    fn rssi_decreases_with_distance(d1 in 0.5f64..200.0, d2 in 0.5f64..200.0) {
        let m = PathLossModel::default();
        prop_assume!((d1 - d2).abs() > 1e-6);
        let (r1, r2) = (m.rssi(20.0, d1).unwrap(), m.rssi(20.0, d2).unwrap());
        prop_assert_eq!(d1 < d2, r1 > r2);
    }

    #[test]
    fn link_loss_symmetric(ax in -50.0f64..50.0, ay in -50.0f64..50.0, bx in -50.0f64..50.0, by in -50.0f64..50.0) {
        let m = PathLossModel::default();
        let (a, b) = (Position::new(ax, ay), Position::new(bx, by));
        prop_assert_eq!(m.link_loss(&a, &b), m.link_loss(&b, &a));
    }

    #[test]
    fn switch_copy_counts(
        tf in valid_frame(),
        group_size in 1usize..=5,
        unicast_hit in any::<bool>(),
    ) {
        let mut sw = Switch::new();
        let ingress = sw.add_port(PortRole::RapRadio).unwrap();
        let others: Vec<_> = (0..5).map(|i| sw.add_port(PortRole::WtpRadio(NodeId(i))).unwrap()).collect();
        let members: Vec<_> = others[..group_size].to_vec();
        let mut looped = members.clone();
        looped.push(ingress);
        let bad = BroadcastRule { ingress, src_mac: SrcMatch::Any, group: MulticastGroup::new(1, looped) };
        prop_assert!(sw.install_broadcast(bad).is_err());
        sw.install_broadcast(BroadcastRule { ingress, src_mac: SrcMatch::Any, group: MulticastGroup::new(1, members) }).unwrap();
        if unicast_hit {
            sw.install_unicast(UnicastRule { ingress, dst_mac: tf.frame.addr1, egress: others[0] }).unwrap();
        }
        let verdict = sw.process(ingress, &tf);
        let dropped = tf.frame.kind.is_control() || tf.meta.tx_status;
        match verdict {
            Verdict::Drop(_) if dropped => {}
            Verdict::Drop(_) => prop_assert!(!unicast_hit && !nxwlan_core::switch::uses_broadcast_table(&tf)),
            Verdict::Emit(out) => {
                prop_assert!(!dropped);
                if nxwlan_core::switch::uses_broadcast_table(&tf) {
                    prop_assert_eq!(out.len(), group_size);
                } else {
                    prop_assert_eq!(out.len(), 1);
                }
                for (port, copy) in out {
                    prop_assert!(port != ingress);
                    prop_assert_eq!(&copy, &tf);
                }
            }
        }
    }

    /// Every downlink frame for a roaming STA leaves on exactly one port.
    #[test]
    fn roam_never_duplicates_or_loses(moves in prop::collection::vec(any::<bool>(), 1..20)) {
        let cfg = |policy| ControllerConfig { policy, ssid: "home".into(), channel: 40, control_rtt_us: 10_000 };
        let mut home = Controller::new(NodeId(1), cfg(SetupPolicy::Accept));
        let mut host = Controller::new(NodeId(2), cfg(SetupPolicy::Accept));
        let req = home.on_discovery(NodeId(2), 0);
        let nxwlan_core::control::Action::Send { msg, .. } = &req[0] else { panic!("request expected") };
        let resp = host.on_setup_request(msg).unwrap();
        let complete = resp.iter().find_map(|a| match a {
            nxwlan_core::control::Action::Send { msg, .. } => Some(msg.clone()),
            _ => None,
        }).unwrap();
        home.on_setup_complete(NodeId(2), &complete).unwrap();

        let sta = MacAddr([2, 0xaa, 0, 0, 0, 1]);
        home.attach_sta(sta, Attachment::Rap).unwrap();
        let vap = home.switch().port(PortRole::VapAttach).unwrap();
        let f = TaggedFrame::new(
            Dot11Frame::new(FrameKind::Data, sta, NodeId(1).rap_bssid(), NodeId(1).rap_bssid(), 1),
            RadioMeta::default(),
        );
        let mut seen = BTreeMap::new();
        for to_wtp in moves {
            let target = if to_wtp { Attachment::Wtp(NodeId(2)) } else { Attachment::Rap };
            home.roam(sta, target).unwrap();
            let out = home.switch().process(vap, &f);
            prop_assert_eq!(out.emitted().len(), 1);
            *seen.entry(out.emitted()[0].0.role).or_insert(0) += 1;
        }
        prop_assert!(seen.len() <= 2);
    }
}
