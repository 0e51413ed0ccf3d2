/// One entry of the experiment registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExperimentInfo {
    pub id: &'static str,
    /// Seed namespace of the experiment; never reused.
    pub ordinal: u8,
    pub title: &'static str,
    pub claim_ref: &'static str,
}

const fn entry(id: &'static str, ordinal: u8, title: &'static str, claim_ref: &'static str) -> ExperimentInfo {
    ExperimentInfo {
        id,
        ordinal,
        title,
        claim_ref,
    }
}

pub const REGISTRY: [ExperimentInfo; 13] = [
    entry("E1", 1, "marginal laws of exact Walsh Brownian motion", "walsh-marginals"),
    entry("E2", 2, "interface SDE residuals over random class-D functions", "interface-sde"),
    entry("E3", 3, "Freidlin-Sheu residuals and the spider decomposition", "freidlin-sheu"),
    entry("E4", 4, "mean spider distance under the Wiener coupling", "wiener-distance-mean"),
    entry("E5", 5, "martingale tests for the spider distance", "wiener-distance-martingale"),
    entry("E6", 6, "independence of terminal ray labels", "wiener-label-independence"),
    entry("E7", 7, "local time of the distance at zero", "distance-local-time"),
    entry("E8", 8, "covariation and local-time exclusion in the perturbed coupling", "perturbed-covariation"),
    entry("E9", 9, "mean distance along the perturbed family", "perturbed-limit"),
    entry("E10", 10, "last-zero and coincidence scans", "no-coincidence"),
    entry("E11", 11, "two-ray coalescence", "two-ray-uniqueness"),
    entry("E12", 12, "driver reconstruction round trip", "driver-reconstruction"),
    entry("E13", 13, "label law conditionally on the driver", "conditional-label-law"),
];

pub fn lookup(id: &str) -> Option<&'static ExperimentInfo> {
    REGISTRY.iter().find(|e| e.id.eq_ignore_ascii_case(id))
}
