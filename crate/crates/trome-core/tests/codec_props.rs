use proptest::prelude::*;
use trome_core::frame_codec::*;

fn routing() -> impl Strategy<Value = RoutingFrame> {
    prop_oneof![
        (0..=MAX_SLOTS, any::<u8>(), any::<u8>(), any::<u8>())
            .prop_map(|(slots, src, dest, ttl)| RoutingFrame::Req { slots, src, dest, ttl }),
        (any::<u8>(), any::<u8>(), 0..=MAX_SLOTS)
            .prop_map(|(current_ttl, lqi, free_slots)| RoutingFrame::ReqAck { current_ttl, lqi, free_slots }),
    ]
}

fn main_radio_frame() -> impl Strategy<Value = (Frame, Stack)> {
    prop_oneof![
        any::<u16>().prop_map(|receiver_id| {
            (Frame::WucAck(WucAckFrame { protocol_id: PROTOCOL_ID, receiver_id }), Stack::Plain)
        }),
        (any::<u8>(), any::<u8>()).prop_map(|(src, dest)| (Frame::Ack(MacAckFrame { src, dest }), Stack::Plain)),
        (any::<u8>(), any::<u8>(), proptest::collection::vec(any::<u8>(), 0..=MAX_PAYLOAD))
            .prop_map(|(src, dest, payload)| (Frame::Data(MacDataFrame { src, dest, payload }), Stack::Plain)),
        (any::<u8>(), any::<u8>(), routing())
            .prop_map(|(src, dest, routing)| (Frame::Routed { src, dest, routing, payload: Vec::new() }, Stack::Routed)),
        (any::<u8>(), any::<u8>(), any::<u8>(), proptest::collection::vec(any::<u8>(), 0..=MAX_PAYLOAD - ROUTING_LEN))
            .prop_map(|(src, dest, r_dest, payload)| {
                let routing = RoutingFrame::Data { src, dest: r_dest, payload_len: payload.len() as u8 };
                (Frame::Routed { src, dest, routing, payload }, Stack::Routed)
            }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn wakeup_round_trip(id in any::<u8>(), carrier in CARRIER_MIN..=CARRIER_MAX, preamble in 0usize..=64) {
        let frame = WakeUpFrame { carrier_burst_bytes: carrier, preamble_bytes: preamble, address: WakeUpAddress::new(id) };
        let bytes = encode_wakeup(&frame).unwrap();
        prop_assert_eq!(bytes.len(), carrier + preamble + PATTERN_BYTES);
        prop_assert_eq!(decode_wakeup(&bytes, preamble).unwrap(), frame);
    }

    #[test]
    fn pattern_is_balanced(id in any::<u8>()) {
        let bytes = encode_wakeup(&WakeUpFrame::new(WakeUpAddress::new(id))).unwrap();
        let pattern = &bytes[bytes.len() - PATTERN_BYTES..];
        let ones = pattern.iter().filter(|&&b| b == 0xFF).count();
        prop_assert_eq!(ones, PATTERN_BYTES / 2);
        prop_assert_eq!(WakeUpAddress::from_pattern(WakeUpAddress::new(id).pattern()), Some(WakeUpAddress::new(id)));
    }

    #[test]
    fn main_radio_round_trip((frame, stack) in main_radio_frame()) {
        let bytes = frame.encode().unwrap();
        let expected = match &frame {
            Frame::WucAck(_) => WUC_ACK_LEN,
            Frame::Ack(_) => MAC_ACK_LEN,
            Frame::Data(d) => MAC_DATA_HEADER + d.payload.len(),
            Frame::Routed { payload, .. } => MAC_DATA_HEADER + ROUTING_LEN + payload.len(),
            Frame::Wuc(_) => unreachable!(),
        };
        prop_assert_eq!(bytes.len(), expected);
        prop_assert_eq!(Frame::decode(&bytes, stack).unwrap(), frame);
    }

    #[test]
    fn routing_header_round_trip(r in routing()) {
        let bytes = encode_routing(&r).unwrap();
        prop_assert_eq!(decode_routing(&bytes).unwrap(), r);
    }

    #[test]
    fn decoders_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..300), preamble in 0usize..80) {
        let _ = Frame::decode(&bytes, Stack::Plain);
        let _ = Frame::decode(&bytes, Stack::Routed);
        let _ = decode_mac(&bytes);
        let _ = decode_routing(&bytes);
        let _ = decode_wakeup(&bytes, preamble);
    }

    #[test]
    fn corrupted_chip_is_rejected(id in any::<u8>(), chip in 0usize..16, byte in 0usize..CHIP_BYTES) {
        let mut bytes = encode_wakeup(&WakeUpFrame::new(WakeUpAddress::new(id))).unwrap();
        let start = bytes.len() - PATTERN_BYTES;
        let at = start + chip * CHIP_BYTES + byte;
        bytes[at] = !bytes[at];
        prop_assert!(matches!(decode_wakeup(&bytes, DEFAULT_PREAMBLE_BYTES), Err(CodecError::MalformedPattern(_))));
    }
}

#[test]
fn byte_counts() {
    let wuc = |carrier, id| WakeUpFrame { carrier_burst_bytes: carrier, preamble_bytes: 52, address: WakeUpAddress::new(id) };
    assert_eq!(encode_wakeup(&WakeUpFrame::new(WakeUpAddress::new(12))).unwrap().len(), 154);
    assert_eq!(encode_wakeup(&wuc(CARRIER_MIN, 0)).unwrap().len(), 148);
    assert_eq!(encode_wakeup(&wuc(CARRIER_MAX, 255)).unwrap().len(), 216);
    assert!(encode_wakeup(&wuc(CARRIER_MAX + 1, 1)).is_err());
    assert!(encode_wakeup(&wuc(CARRIER_MIN - 1, 1)).is_err());

    let ack = Frame::WucAck(WucAckFrame { protocol_id: PROTOCOL_ID, receiver_id: 13 });
    assert_eq!(ack.encode().unwrap().len(), 3);
    assert_eq!(Frame::Ack(MacAckFrame { src: 10, dest: 13 }).encode().unwrap().len(), 3);
    let data = Frame::Data(MacDataFrame { src: 13, dest: 12, payload: vec![7; 100] });
    assert_eq!(data.encode().unwrap().len(), 104);
    let req = RoutingFrame::Req { slots: 5, src: 13, dest: 10, ttl: 3 };
    assert_eq!(encode_routing(&req).unwrap().len(), 4);
}

#[test]
fn oversize_inputs_are_rejected() {
    let data = Frame::Data(MacDataFrame { src: 1, dest: 2, payload: vec![0; MAX_PAYLOAD + 1] });
    assert!(matches!(data.encode(), Err(CodecError::PayloadTooLarge(_))));
    let req = RoutingFrame::Req { slots: MAX_SLOTS + 1, src: 1, dest: 2, ttl: 3 };
    assert!(matches!(encode_routing(&req), Err(CodecError::SlotsOverflow(_))));
}
