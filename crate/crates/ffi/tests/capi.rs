//! Exercises the C surface the way a foreign caller would: raw pointers,
//! status codes, and the opaque handles.

use std::ffi::CString;
use std::ptr;

use twnet_ffi::*;

fn flow(ts: f64, src: &CString, dst: &CString, sport: u16, dport: u16, protocol: u8) -> TwnetFlow {
    TwnetFlow {
        timestamp: ts,
        src_ip: src.as_ptr(),
        dst_ip: dst.as_ptr(),
        src_port: sport,
        dst_port: dport,
        protocol,
        duration: 1.0,
        src_packets: 10,
        dst_packets: 5,
        src_bytes: 1000,
        dst_bytes: 500,
    }
}

fn last_error() -> String {
    let mut buf = vec![0i8; 256];
    unsafe { twnet_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf.iter().take_while(|&&c| c != 0).map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

#[test]
fn windower_counts_match_streaming_semantics() {
    let a = CString::new("A").unwrap();
    let b = CString::new("B").unwrap();
    unsafe {
        let mut w: *mut TwnetWindower = ptr::null_mut();
        assert_eq!(twnet_windower_new(60.0, 0, &mut w), TwnetStatus::Ok);

        let mut sample = TwnetSample::default();
        let status = twnet_windower_push(w, &flow(0.0, &a, &b, 5000, 80, TWNET_PROTOCOL_TCP), &mut sample);
        assert_eq!(status, TwnetStatus::Ok);
        assert_eq!(sample.src_flow_count, 0);
        assert_eq!(sample.new_port_src, 1);

        let status = twnet_windower_push(w, &flow(1.0, &a, &b, 5000, 80, TWNET_PROTOCOL_TCP), &mut sample);
        assert_eq!(status, TwnetStatus::Ok);
        assert_eq!(sample.src_flow_count, 1);
        assert_eq!(sample.src_port_count, 1);
        assert_eq!(sample.new_port_src, 0);
        assert_eq!(twnet_windower_host_count(w), 2);

        // going backwards in time is an ordering error
        let status = twnet_windower_push(w, &flow(0.5, &a, &b, 5000, 80, TWNET_PROTOCOL_TCP), &mut sample);
        assert_eq!(status, TwnetStatus::OutOfOrder);
        assert!(last_error().contains("sorted"));

        twnet_windower_free(w);
    }
}

#[test]
fn invalid_window_and_null_pointers_are_rejected() {
    unsafe {
        let mut w: *mut TwnetWindower = ptr::null_mut();
        assert_eq!(twnet_windower_new(-1.0, 0, &mut w), TwnetStatus::InvalidArgument);
        assert_eq!(twnet_windower_new(60.0, 0, ptr::null_mut()), TwnetStatus::NullPointer);

        assert_eq!(twnet_windower_new(60.0, 0, &mut w), TwnetStatus::Ok);
        let mut sample = TwnetSample::default();
        assert_eq!(
            twnet_windower_push(w, ptr::null(), &mut sample),
            TwnetStatus::NullPointer
        );
        let a = CString::new("A").unwrap();
        let b = CString::new("B").unwrap();
        let mut bad = flow(0.0, &a, &b, 1, 2, TWNET_PROTOCOL_TCP);
        bad.protocol = 77;
        assert_eq!(twnet_windower_push(w, &bad, &mut sample), TwnetStatus::InvalidArgument);
        twnet_windower_free(w);
    }
}

#[test]
fn feature_extraction_matches_library_path() {
    let a = CString::new("A").unwrap();
    let b = CString::new("B").unwrap();
    let c_flow = flow(0.0, &a, &b, 5000, 80, TWNET_PROTOCOL_TCP);
    let sample = TwnetSample {
        new_port_src: 1,
        new_port_dst: 0,
        src_flow_count: 4,
        dst_flow_count: 1,
        src_port_count: 3,
        dst_port_count: 1,
    };
    let mut features = [0.0f64; 20];
    let mut mask = [0.0f64; 3];
    unsafe {
        assert_eq!(
            twnet_features_extract(&c_flow, &sample, features.as_mut_ptr(), mask.as_mut_ptr()),
            TwnetStatus::Ok
        );
    }
    assert_eq!(mask, [1.0, 0.0, 0.0]);
    assert_eq!(features[0], 1.0); // duration
    assert_eq!(features[1], 5.0); // |10 - 5|
    assert_eq!(features[12], 4.0); // max flow count
    assert_eq!(features[11], 0.5); // one new port

    // same numbers as the native path
    let native = twnet::features::extract(&twnet::window::WindowedSample {
        flow: twnet::ingest::FlowRecord {
            timestamp: 0.0,
            src_ip: "A".into(),
            dst_ip: "B".into(),
            src_port: 5000,
            dst_port: 80,
            protocol: twnet::ingest::ProtocolClass::Tcp,
            duration: 1.0,
            src_packets: 10,
            dst_packets: 5,
            src_bytes: 1000,
            dst_bytes: 500,
            label: String::new(),
        },
        new_port_src: true,
        new_port_dst: false,
        src_flow_count: 4,
        dst_flow_count: 1,
        src_port_count: 3,
        dst_port_count: 1,
    })
    .unwrap();
    assert_eq!(features, native.values);
}

#[test]
fn model_load_score_predict_round_trip() {
    use twnet::features::FeatureVector;
    use twnet::model::{parse_spec_name, save_checkpoint, Checkpoint, Dataset, ModelParams};

    // train a tiny model and save it
    let rows: Vec<(FeatureVector, String)> = (0..60)
        .map(|i| {
            let mut values = [0.0; 20];
            let scale = if i % 2 == 0 { 1.0 } else { 50.0 };
            values.iter_mut().enumerate().for_each(|(j, v)| *v = scale * (1.0 + (j as f64) * 0.01));
            (
                FeatureVector { values, protocol: twnet::ingest::ProtocolClass::Tcp },
                if i % 2 == 0 { "Benign".to_string() } else { "DoS".to_string() },
            )
        })
        .collect();
    let classes = vec!["Benign".to_string(), "DoS".to_string()];
    let spec = parse_spec_name("twnet3{0}", 2).unwrap();
    let data = Dataset::prepare(&rows, &spec, classes.clone()).unwrap();
    let mut params = ModelParams::build(&spec, 0, Some(&data.input_columns(&spec))).unwrap();
    twnet::model::train(
        &mut params,
        &data,
        &twnet::model::TrainConfig { epochs: 6, batch_size: 8, ..Default::default() },
    )
    .unwrap();
    let dir = std::env::temp_dir().join("twnet-ffi-test");
    std::fs::create_dir_all(&dir).unwrap();
    let ckpt_path = dir.join("model.json");
    save_checkpoint(&ckpt_path, &Checkpoint::new(params, classes, 60.0, 0)).unwrap();

    let c_path = CString::new(ckpt_path.to_str().unwrap()).unwrap();
    let a = CString::new("A").unwrap();
    let b = CString::new("B").unwrap();
    unsafe {
        let mut model: *mut TwnetModel = ptr::null_mut();
        assert_eq!(twnet_model_load(c_path.as_ptr(), &mut model), TwnetStatus::Ok);
        assert_eq!(twnet_model_class_count(model), 2);
        let mut name = vec![0i8; 32];
        assert_eq!(
            twnet_model_class_name(model, 1, name.as_mut_ptr(), name.len()),
            TwnetStatus::Ok
        );
        let got: Vec<u8> = name.iter().take_while(|&&c| c != 0).map(|&c| c as u8).collect();
        assert_eq!(String::from_utf8(got).unwrap(), "DoS");

        // a benign-looking flow
        let mut c_flow = flow(0.0, &a, &b, 5000, 80, TWNET_PROTOCOL_TCP);
        c_flow.src_packets = 1;
        c_flow.dst_packets = 1;
        c_flow.src_bytes = 1;
        c_flow.dst_bytes = 1;
        c_flow.duration = 1.0;
        let sample = TwnetSample::default();
        let mut scores = [0.0f64; 2];
        assert_eq!(
            twnet_model_score(model, &c_flow, &sample, scores.as_mut_ptr(), scores.len()),
            TwnetStatus::Ok
        );
        assert!(scores.iter().all(|s| s.is_finite()));
        let mut class = usize::MAX;
        assert_eq!(twnet_model_predict(model, &c_flow, &sample, &mut class), TwnetStatus::Ok);
        assert!(class < 2);

        // wrong buffer size is rejected
        assert_eq!(
            twnet_model_score(model, &c_flow, &sample, scores.as_mut_ptr(), 1),
            TwnetStatus::InvalidArgument
        );
        twnet_model_free(model);
    }

    unsafe {
        let mut model: *mut TwnetModel = ptr::null_mut();
        let missing = CString::new("/nonexistent/model.json").unwrap();
        assert_eq!(twnet_model_load(missing.as_ptr(), &mut model), TwnetStatus::Io);
    }
}

#[test]
fn generated_header_exists_and_names_the_surface() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/twnet.h");
    let text = std::fs::read_to_string(&header).expect("cbindgen header");
    for symbol in [
        "twnet_windower_new",
        "twnet_windower_push",
        "twnet_features_extract",
        "twnet_model_load",
        "twnet_model_score",
        "twnet_last_error",
        "TwnetStatus",
        "TwnetFlow",
    ] {
        assert!(text.contains(symbol), "header missing {symbol}");
    }
}
