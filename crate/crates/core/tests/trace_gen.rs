use ecupdate::trace::{generate, map_to_updates, measure, AddressMap, MappedKind, Op, SynthParams};
use std::collections::HashSet;

fn close(got: f64, want: f64) -> bool {
    (got - want).abs() <= 0.02
}

#[test]
fn profiles_hit_their_targets() {
    for name in ["ali", "ten", "msr"] {
        let p = SynthParams::profile(name, 100_000, 42).unwrap();
        let st = measure(&generate(&p).unwrap());
        println!("{name}: {st:?}");
        assert!(close(st.frac_4k, p.frac_4k), "{name} 4k {}", st.frac_4k);
        assert!(close(st.frac_16k, p.frac_16k), "{name} 16k {}", st.frac_16k);
        assert!(close(st.repeat_ratio, p.repeat_ratio), "{name} repeat {}", st.repeat_ratio);
        assert!(close(st.adjacency_ratio, p.adjacency_ratio), "{name} adj {}", st.adjacency_ratio);
    }
}

#[test]
fn reads_target_written_extents() {
    let p = SynthParams {
        read_ratio: 0.3,
        ..SynthParams::profile("ten", 5000, 9).unwrap()
    };
    let recs = generate(&p).unwrap();
    let st = measure(&recs);
    assert!(st.reads > 1000);
    let mut written = HashSet::new();
    for r in &recs {
        match r.op {
            Op::Write => {
                written.insert((r.volume.clone(), r.offset, r.size));
            }
            Op::Read => assert!(written.contains(&(r.volume.clone(), r.offset, r.size))),
        }
    }
}

/// Sector-level oracle: a piece is an update iff one of its bytes was
/// written before.
#[test]
fn update_classification_matches_byte_oracle() {
    let p = SynthParams::profile("ali", 3000, 5).unwrap();
    let recs = generate(&p).unwrap();
    let mut map = AddressMap::new(6, 4 << 20, 256);
    let ops = map_to_updates(&recs, &mut map).unwrap();
    let mut seen: HashSet<(u64, usize, u64)> = HashSet::new();
    for o in &ops {
        let bytes: Vec<u64> = (o.offset..o.offset + o.len).step_by(512).collect();
        let hit = bytes.iter().any(|b| seen.contains(&(o.stripe, o.block, *b)));
        let want = if hit { MappedKind::Update } else { MappedKind::Initial };
        assert_eq!(o.kind, want);
        for b in bytes {
            seen.insert((o.stripe, o.block, b));
        }
    }
    assert!(ops.iter().filter(|o| o.kind == MappedKind::Update).count() > 1500);
}
