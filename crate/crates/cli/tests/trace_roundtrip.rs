use h2mxr::trace_io::{read_trace, write_trace};
use h2mxr_core::{EulerAngles, HeadSample, HeadTrace};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn export_import_is_bit_exact(
        start in 0.0f64..1e5,
        gaps in prop::collection::vec(1e-6f64..0.1, 1..200),
        angles in prop::collection::vec((-179.999f64..180.0, -90.0f64..=90.0, -179.999f64..180.0), 200),
    ) {
        let mut t = start;
        let mut samples = Vec::new();
        for (g, a) in gaps.iter().zip(&angles) {
            samples.push(HeadSample::new(t, EulerAngles::new(a.0, a.1, a.2).unwrap()).unwrap());
            t += g;
        }
        // gaps may vanish at large offsets
        samples.dedup_by(|b, a| b.timestamp <= a.timestamp);
        let tr = HeadTrace::new(samples, "p").unwrap();
        let mut buf = Vec::new();
        write_trace(&mut buf, &tr).unwrap();
        let back = read_trace(buf.as_slice(), "p").unwrap();
        prop_assert_eq!(back.len(), tr.len());
        for (a, b) in tr.samples().iter().zip(back.samples()) {
            prop_assert_eq!(a.timestamp.to_bits(), b.timestamp.to_bits());
            prop_assert_eq!(a.euler.yaw.to_bits(), b.euler.yaw.to_bits());
            prop_assert_eq!(a.euler.pitch.to_bits(), b.euler.pitch.to_bits());
            prop_assert_eq!(a.euler.roll.to_bits(), b.euler.roll.to_bits());
        }
    }
}
