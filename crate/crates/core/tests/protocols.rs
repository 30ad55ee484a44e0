use std::net::Ipv4Addr;

use epcmig_core::container::{checkpoint, restore, CheckpointOptions};
use epcmig_core::fabric::HostId;
use epcmig_core::fabric::{Fabric, FabricConfig, Packet, Protocol, Verdict};
use epcmig_core::proto::gtp::{gtp_decap, gtp_encap, GtpError, GtpTunnelEntry, Teid, UeId};
use epcmig_core::proto::ip::icmp_echo;
use epcmig_core::proto::sctp::{sctp_associate, AssociateParams, SctpError, SctpPacket, SctpSocket};
use epcmig_core::proto::Endpoint;
use epcmig_core::vnf::{spawn_vnf, Flavor, HostCapacity, Placement, SpawnParams, VnfKind};
use epcmig_core::SimTime;

const CU: Ipv4Addr = Ipv4Addr::new(10, 8, 0, 10);
const MME: Ipv4Addr = Ipv4Addr::new(10, 8, 0, 3);

fn params() -> AssociateParams {
    AssociateParams {
        client_tag: 0x1111,
        client_tsn: 7,
        server_tag: 0x2222,
        server_tsn: 9,
        streams: 2,
        max_init_attempts: 3,
    }
}

fn associate(fabric: &mut Fabric, wrap: bool) -> Result<SctpSocket, SctpError> {
    let mut cu = SctpSocket::client(Endpoint::new(CU, 36412));
    let mut mme = SctpSocket::listener(Endpoint::new(MME, 36412));
    sctp_associate(&mut cu, &mut mme, params(), |p: &SctpPacket| {
        let mut pkt = Packet::new(
            p.src.addr.to_string(),
            p.dst.addr.to_string(),
            Protocol::Sctp,
            12,
            p.chunk.wire_len(),
            p.chunk.name(),
        );
        if wrap {
            pkt = pkt.vpn_encapsulate();
        }
        fabric.send(SimTime::ZERO, "rack1", &pkt) == Verdict::Pass
    })
}

#[test]
fn raw_s1_setup_times_out_behind_firewall() {
    let mut fabric = Fabric::new(FabricConfig::default(), 2, 2);
    let e = associate(&mut fabric, false).unwrap_err();
    assert!(matches!(e, SctpError::Timeout { attempts: 3, .. }), "{e}");
    assert_eq!(fabric.counters.firewall_dropped, 3);
    assert!(fabric.wire.iter().all(|w| w.msgtype == "INIT"));
}

#[test]
fn overlay_s1_setup_completes_behind_firewall() {
    let mut fabric = Fabric::new(FabricConfig::default(), 2, 2);
    let acc = associate(&mut fabric, true).unwrap();
    assert!(acc.is_established());
    let kinds: Vec<&str> = fabric.wire.iter().map(|w| w.msgtype.as_str()).collect();
    assert_eq!(kinds, ["INIT", "INIT-ACK", "COOKIE-ECHO", "COOKIE-ACK"]);
    assert!(fabric.wire.iter().all(|w| w.proto == "sctp/udp"));
    assert_eq!(fabric.counters.firewall_dropped, 0);
}

#[test]
fn uplink_survives_checkpoint_only_with_tunnel_state() {
    let gw = Ipv4Addr::new(12, 1, 1, 1);
    let mut placement = Placement::new(
        [HostId(1), HostId(3)],
        HostCapacity {
            vcpus: 8,
            ram_mb: 16384,
        },
    );
    let mut spgw = spawn_vnf(
        &mut placement,
        VnfKind::Spgw,
        Flavor::Small,
        HostId(1),
        SpawnParams {
            pid: 7,
            addr: Ipv4Addr::new(10, 8, 0, 4),
            resident_bytes: 1 << 20,
            disk_image_bytes: 0,
            subscribers: 0,
            gtp_addr: gw,
        },
    )
    .unwrap();
    let ue = Ipv4Addr::new(12, 1, 1, 2);
    let entry = GtpTunnelEntry {
        ue_id: UeId(1),
        local_teid: Teid(0x100),
        peer_teid: Teid(0x200),
        peer_addr: CU,
        ue_inner_addr: ue,
    };
    spgw.spgw_mut().unwrap().tunnels.insert(entry).unwrap();
    // What the gNB sends: addressed to the gateway's TEID.
    let uplink_entry = GtpTunnelEntry {
        peer_teid: entry.local_teid,
        peer_addr: gw,
        ..entry
    };
    let inner = icmp_echo(ue, Ipv4Addr::new(8, 8, 8, 8), 1, 1, 84);
    let outer = gtp_encap(&inner, &uplink_entry, CU);

    for utility in [true, false] {
        let mut v = spgw.clone();
        let opts = CheckpointOptions {
            repair_tcp: true,
            repair_sctp: true,
            gtp_utility: utility,
        };
        let blob = checkpoint(&mut v, opts, None).unwrap();
        let back = restore(&blob, HostId(3)).unwrap();
        let table = &back.vnf.spgw().unwrap().tunnels;
        match gtp_decap(&outer, table) {
            Ok(p) => {
                assert!(utility);
                assert_eq!(p, inner);
            }
            Err(e) => {
                assert!(!utility);
                assert_eq!(e, GtpError::UnknownTeid(Teid(0x100)));
            }
        }
    }
}
