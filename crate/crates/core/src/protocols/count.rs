use super::{DropEvent, ProtocolKind};

/// Model trainings a protocol performs with `k` folds and `c` configurations.
///
/// TT and BBC reuse the CVT predictions and are counted as CVT. For BCED,
/// every configuration is trained once per fold until the fold after which
/// it was dropped, plus one final model.
pub fn count_models(protocol: ProtocolKind, k: u64, c: u64, drop_trace: &[DropEvent]) -> u64 {
    match protocol {
        ProtocolKind::Cv => k + 1,
        ProtocolKind::Cvt | ProtocolKind::Tt | ProtocolKind::Bbc => k * c + 1,
        ProtocolKind::Ncv => k * k * c + k + 1,
        ProtocolKind::Bced => {
            let dropped: u64 = drop_trace.iter().map(|d| d.fold as u64).sum();
            (c - drop_trace.len() as u64) * k + dropped + 1
        }
    }
}
