use confalign::datapipe::*;
use confalign::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise_frame(w: usize, h: usize, seed: u64) -> Frame {
    let mut g = ChaCha8Rng::seed_from_u64(seed);
    Frame::new(w, h, 1, (0..w * h).map(|_| g.gen()).collect()).unwrap()
}

/// Half-pixel bilinear sample of the `sw × sh` rescaling of `f`, read at
/// scaled coordinates `(x, y)`.
fn bilinear_at(f: &Frame, sw: usize, sh: usize, x: usize, y: usize) -> u8 {
    let (w, h) = (f.width(), f.height());
    let axis = |o: usize, src: usize, dst: usize| {
        let r = src as f64 / dst as f64;
        let p = ((o as f64 + 0.5) * r - 0.5).clamp(0.0, (src - 1) as f64);
        let lo = p.floor() as usize;
        (lo, (lo + 1).min(src - 1), p - lo as f64)
    };
    let (x0, x1, fx) = axis(x, w, sw);
    let (y0, y1, fy) = axis(y, h, sh);
    let px = |xx: usize, yy: usize| f.pixels()[yy * w + xx] as f64;
    let top = px(x0, y0) * (1.0 - fx) + px(x1, y0) * fx;
    let bottom = px(x0, y1) * (1.0 - fx) + px(x1, y1) * fx;
    (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8
}

fn crop_oracle(f: &Frame, sw: usize, sh: usize, ox: usize, oy: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(832 * 480);
    for y in 0..480 {
        for x in 0..832 {
            out.push(bilinear_at(f, sw, sh, x + ox, y + oy));
        }
    }
    out
}

#[test]
fn full_hd_scales_to_853_and_crops_at_offset_10() {
    let src = noise_frame(1920, 1080, 1);
    let out = standardize_frame(&src, 832, 480).unwrap();
    assert_eq!((out.width(), out.height()), (832, 480));
    assert_eq!(out.pixels(), crop_oracle(&src, 853, 480, 10, 0).as_slice());
    for wrong in [9, 11] {
        let other = crop_oracle(&src, 853, 480, wrong, 0);
        let same = other.iter().zip(out.pixels()).filter(|(a, b)| a == b).count();
        assert!(same < other.len() / 2, "offset {wrong} also matches");
    }
}

#[test]
fn exact_ratios_need_no_crop() {
    let f = noise_frame(832, 480, 2);
    assert_eq!(standardize_frame(&f, 832, 480).unwrap(), f);
    let big = noise_frame(1664, 960, 3);
    let half = standardize_frame(&big, 832, 480).unwrap();
    assert_eq!(half.pixels(), crop_oracle(&big, 832, 480, 0, 0).as_slice());
}

#[test]
fn extreme_aspect_is_a_standardization_error() {
    let err = standardize_frame(&noise_frame(640, 480, 4), 832, 480).unwrap_err();
    assert!(matches!(err, Error::Standardization { width: 640, height: 480, .. }));
}

#[test]
fn sharpness_hand_cases() {
    assert_eq!(laplacian_sharpness(&Frame::filled(6, 5, 1, 77).unwrap()).unwrap(), 0.0);
    let mut px = vec![0u8; 12];
    px[4 + 1] = 1;
    let impulse = Frame::new(4, 3, 1, px).unwrap();
    assert!((laplacian_sharpness(&impulse).unwrap() - 6.25).abs() < 1e-12);
    let checker = Frame::new(8, 8, 1, (0..64).map(|i| if (i % 8 + i / 8) % 2 == 0 { 0 } else { 255 }).collect()).unwrap();
    assert!(laplacian_sharpness(&checker).unwrap() > 0.0);
    assert_eq!(laplacian_sharpness(&Frame::filled(2, 5, 1, 0).unwrap()).unwrap_err().kind(), "domain");
}

#[test]
fn window_clips_matches_exhaustive_enumeration() {
    let mut g = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..1000 {
        let start = g.gen_range(0.0..100.0);
        let len = g.gen_range(5.0..60.0);
        let shot = ShotSpan { start_s: start, end_s: start + len };
        let mut expected = Vec::new();
        let mut k = 0;
        loop {
            let s = k as f64 * 2.0;
            if s + 5.0 > len + 1e-9 {
                break;
            }
            expected.push((start + s, start + s + 5.0));
            k += 1;
        }
        let got = window_clips(shot, 5.0, 2.0).unwrap();
        assert_eq!(got, expected, "len {len}");
        assert_eq!(got.len(), ((len - 5.0) / 2.0).floor() as usize + 1);
        assert!(got.iter().all(|(a, b)| ((b - a) - 5.0).abs() < 1e-9));
    }
    let short = ShotSpan { start_s: 0.0, end_s: 4.9 };
    assert_eq!(window_clips(short, 5.0, 2.0).unwrap_err().kind(), "pruning-contract");
}

#[test]
fn prune_blurred_matches_hand_filter() {
    let mut g = ChaCha8Rng::seed_from_u64(11);
    let items: Vec<(usize, f64)> = (0..200).map(|i| (i, g.gen_range(0.0..200.0))).collect();
    let kept = prune_blurred(items.clone(), 100.0, |x| x.1);
    let mut oracle = Vec::new();
    for it in &items {
        if it.1 >= 100.0 {
            oracle.push(*it);
        }
    }
    assert_eq!(kept, oracle);
    assert_eq!(prune_blurred(items.clone(), 0.0, |x| x.1).len(), 200);
    assert!(prune_blurred(items, f64::INFINITY, |x| x.1).is_empty());
}

#[test]
fn caption_prompt_contents() {
    let meta = CaptionMetadata { title: "Lap chole #12".into(), surgery_type: "cholecystectomy".into() };
    let p = build_caption_prompt(&meta).unwrap();
    assert!(p.contains("Lap chole #12"));
    assert!(p.contains("act as a professional medical annotator"));
    assert!(p.contains("single, concise paragraph"));
    for k in 1..=5 {
        assert!(p.contains(&format!("({k})")));
    }
    assert!(!p.contains("(6)"));
    assert_eq!(p, build_caption_prompt(&meta.clone()).unwrap());
    let blank = CaptionMetadata { title: " ".into(), surgery_type: "x".into() };
    assert!(build_caption_prompt(&blank).is_err());
}

#[test]
fn limf_round_trip_and_rejects_garbage() {
    let seq = FrameSequence::new(2.5, vec![noise_frame(5, 4, 1), noise_frame(5, 4, 2)]).unwrap();
    let bytes = seq.to_limf_bytes();
    assert_eq!(&bytes[..4], b"LIMF");
    assert_eq!(bytes.len(), 4 + 4 + 4 + 1 + 4 + 8 + 2 * 20);
    assert_eq!(FrameSequence::from_limf_bytes(&bytes).unwrap(), seq);
    assert!(FrameSequence::from_limf_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(FrameSequence::from_limf_bytes(&extra).is_err());
    let mut bad = bytes;
    bad[0] = b'X';
    assert!(FrameSequence::from_limf_bytes(&bad).is_err());
}

#[test]
fn histogram_provider_finds_hard_cuts() {
    let dark = Frame::filled(16, 16, 1, 10).unwrap();
    let light = Frame::filled(16, 16, 1, 240).unwrap();
    let frames = [vec![dark.clone(); 4], vec![light; 3], vec![dark; 2]].concat();
    let video = FrameSequence::new(2.0, frames).unwrap();
    let cuts = HistogramShotProvider::default().boundaries(&video).unwrap();
    assert_eq!(cuts, vec![2.0, 3.5]);
    assert!(SingleShotProvider.boundaries(&video).unwrap().is_empty());
}

#[test]
fn caption_request_carries_the_clip() {
    let seq = FrameSequence::new(1.0, vec![noise_frame(4, 4, 7)]).unwrap();
    let req = CaptionRequest::new("prompt".into(), &seq);
    assert_eq!(req.clip().unwrap(), seq);
    let json = serde_json::to_value(&req).unwrap();
    assert!(json.get("prompt").is_some() && json.get("frames").is_some());
}

fn checker(w: usize, h: usize, phase: usize) -> Frame {
    Frame::new(w, h, 1, (0..w * h).map(|i| if (i % w + i / w + phase) % 2 == 0 { 20 } else { 230 }).collect()).unwrap()
}

fn source(id: &str, seconds: usize, sharp: bool) -> Source {
    let fps = 2.0;
    let frames = (0..seconds * 2)
        .map(|i| if sharp { checker(832, 480, i % 2) } else { Frame::filled(832, 480, 1, 128).unwrap() })
        .collect();
    Source {
        source_id: id.into(),
        metadata: CaptionMetadata { title: format!("video {id}"), surgery_type: "hysterectomy".into() },
        video: FrameSequence::new(fps, frames).unwrap(),
    }
}

fn run(sources: &[Source]) -> PipelineOutput {
    let cfg = PipelineConfig::default();
    let shots = shot_provider_registry().build(&cfg.shot_provider, &()).unwrap();
    let caps = caption_provider_registry().build(&cfg.caption_provider, &()).unwrap();
    run_pipeline(sources, shots.as_ref(), caps.as_ref(), &cfg).unwrap()
}

#[test]
fn nine_second_sharp_shot_gives_three_mock_captioned_records() {
    let out = run(&[source("a", 9, true)]);
    let spans: Vec<(f64, f64)> = out.records.iter().map(|r| (r.start_s, r.end_s)).collect();
    assert_eq!(spans, vec![(0.0, 5.0), (2.0, 7.0), (4.0, 9.0)]);
    assert!(out.records.iter().all(|r| r.caption == MockCaptionProvider::default().text));
    assert!(out.records.iter().all(|r| r.sharpness >= 100.0));
    assert_eq!(out.records[1].clip_id, "a-002000");
    assert_eq!(out.thumbnails[0].len(), 8);
}

#[test]
fn empty_blurred_and_short_inputs() {
    assert!(run(&[]).records.is_empty());
    let blurred = run(&[source("b", 9, false)]);
    assert!(blurred.records.is_empty());
    assert_eq!(blurred.stats.blurred_pruned, blurred.stats.windows);
    let short = run(&[source("c", 4, true)]);
    assert!(short.records.is_empty());
    assert_eq!(short.stats.short_shots_pruned, 1);
}

#[test]
fn pipeline_is_byte_deterministic_and_source_ordered() {
    let sources = vec![source("x", 11, true), source("y", 7, true), source("z", 6, false)];
    let manifest = |o: &PipelineOutput| {
        let mut buf = Vec::new();
        write_manifest(&mut buf, &o.records).unwrap();
        buf
    };
    let (a, b) = (run(&sources), run(&sources));
    assert_eq!(manifest(&a), manifest(&b));
    assert_eq!(a.thumbnails, b.thumbnails);
    let ids: Vec<&str> = a.records.iter().map(|r| r.source_id.as_str()).collect();
    assert_eq!(ids, vec!["x", "x", "x", "x", "y", "y"]);
    assert_eq!(read_manifest(manifest(&a).as_slice()).unwrap(), a.records);
}

#[derive(Clone)]
struct Flaky;

impl CaptionProvider for Flaky {
    fn name(&self) -> &str {
        "flaky"
    }

    fn caption(&self, _request: &CaptionRequest) -> confalign::Result<CaptionResponse> {
        Err(Error::Provider("service unavailable".into()))
    }
}

#[test]
fn caption_failures_skip_clips_without_aborting() {
    let cfg = PipelineConfig::default();
    let out = run_pipeline(&[source("a", 9, true)], &HistogramShotProvider::default(), &Flaky, &cfg).unwrap();
    assert!(out.records.is_empty());
    assert_eq!(out.stats.caption_failures, 3);
}

proptest! {
    #[test]
    fn sharpness_ignores_brightness_offsets(seed in any::<u64>(), shift in 0u8..40) {
        let mut g = ChaCha8Rng::seed_from_u64(seed);
        let px: Vec<u8> = (0..64).map(|_| g.gen_range(0..200)).collect();
        let a = Frame::new(8, 8, 1, px.clone()).unwrap();
        let b = Frame::new(8, 8, 1, px.iter().map(|p| p + shift).collect()).unwrap();
        prop_assert!((laplacian_sharpness(&a).unwrap() - laplacian_sharpness(&b).unwrap()).abs() < 1e-9);
    }
}
