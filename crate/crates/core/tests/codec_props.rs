use agentry_core::{
    decode_envelope, encode_envelope, Body, EntityId, Envelope, ErrorInfo, ErrorKind, Location,
    MessageId, ObjectId, Payload, ProxyRef, Role,
};
use proptest::prelude::*;
use uuid::Uuid;

fn entity() -> impl Strategy<Value = EntityId> {
    (any::<[u8; 16]>(), any::<bool>()).prop_map(|(b, a)| {
        EntityId::new(Uuid::from_bytes(b), if a { Role::Agent } else { Role::Client })
    })
}

fn proxy_ref() -> impl Strategy<Value = ProxyRef> {
    (
        any::<[u8; 16]>(),
        any::<u64>(),
        entity(),
        proptest::collection::vec(
            prop_oneof![
                "[a-z0-9.:]{0,40}".prop_map(Location::Peer),
                "[a-z0-9/]{0,40}".prop_map(Location::StoreKey),
            ],
            0..4,
        ),
        any::<[u8; 32]>(),
    )
        .prop_map(|(id, size, origin, locations, checksum)| ProxyRef {
            object_id: ObjectId(id),
            size,
            origin,
            locations,
            checksum,
        })
}

fn payload() -> impl Strategy<Value = Payload> {
    prop_oneof![
        proptest::collection::vec(any::<u8>(), 0..256).prop_map(Payload::Inline),
        proxy_ref().prop_map(Payload::Reference),
    ]
}

fn error_kind() -> impl Strategy<Value = ErrorKind> {
    prop_oneof![
        Just(ErrorKind::ActionRaised),
        Just(ErrorKind::UnknownAction),
        Just(ErrorKind::MailboxClosed),
        Just(ErrorKind::Timeout),
        Just(ErrorKind::TransportFailure),
    ]
}

fn body() -> impl Strategy<Value = Body> {
    let msg = any::<[u8; 16]>().prop_map(MessageId::from_bytes);
    prop_oneof![
        ("[a-z_]{1,12}", payload()).prop_map(|(action, payload)| Body::ActionRequest { action, payload }),
        (msg.clone(), payload()).prop_map(|(request_id, p)| Body::ActionResponse {
            request_id,
            outcome: Ok(p)
        }),
        (msg.clone(), error_kind(), ".{0,64}").prop_map(|(request_id, kind, detail)| {
            Body::ActionResponse {
                request_id,
                outcome: Err(ErrorInfo { kind, detail }),
            }
        }),
        Just(Body::Ping),
        msg.prop_map(|request_id| Body::PingResponse { request_id }),
        any::<bool>().prop_map(|terminal| Body::Shutdown { terminal }),
    ]
}

fn envelope() -> impl Strategy<Value = Envelope> {
    (entity(), entity(), any::<[u8; 16]>(), body()).prop_map(|(src, dest, m, body)| Envelope {
        src,
        dest,
        message_id: MessageId::from_bytes(m),
        body,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn round_trip(e in envelope()) {
        let frame = encode_envelope(&e).unwrap();
        prop_assert_eq!(&frame[..4], &((frame.len() - 4) as u32).to_be_bytes());
        prop_assert_eq!(decode_envelope(&frame).unwrap(), e.clone());
        // deterministic
        prop_assert_eq!(encode_envelope(&e).unwrap(), frame);
    }

    #[test]
    fn decoder_never_panics_on_mutations(e in envelope(), flips in proptest::collection::vec((any::<usize>(), any::<u8>()), 1..8)) {
        let mut frame = encode_envelope(&e).unwrap();
        for (at, v) in flips {
            let n = frame.len();
            frame[at % n] = v;
        }
        let _ = decode_envelope(&frame);
    }

    #[test]
    fn decoder_never_panics_on_noise(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
        let _ = decode_envelope(&bytes);
    }

    #[test]
    fn every_prefix_is_rejected(e in envelope()) {
        let frame = encode_envelope(&e).unwrap();
        for cut in 0..frame.len() {
            prop_assert!(decode_envelope(&frame[..cut]).is_err());
        }
    }
}
